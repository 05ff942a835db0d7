"""
Best responses, Pareto sets and splitting an aggregate exposure
===============================================================

Two agents each steer one coordinate of a planar state.  Gauss-Seidel best
responses reach a fixed point, and sweeping the weights that split the
aggregate terminal exposure x1 + x2 + 4 traces the risk frontier.
"""

import numpy as np

from riskaverse import GeneratorFunctional, GridSpec, allocation_frontier, gauss_seidel_equilibrium, pareto_filter
from riskaverse.verification import decoupled_pair

model, costs = decoupled_pair()
g = GeneratorFunctional("zero", dim=2)
grid = GridSpec([-3.0, -3.0], [3.0, 3.0], 21, 10)

profile, report = gauss_seidel_equilibrium(model, costs, g, [0.0, 0.0], grid, control_points=13)
print("equilibrium:", report.to_dict())
print("risk vector at the origin:", profile.risk_vector(0.0, [0.0, 0.0]))

points = allocation_frontier(model, costs.running, g, lambda x: np.atleast_2d(x).sum(axis=1) + 4.0, 10, grid,
                             [0.0, 0.0], equilibrium={"control_points": 13})
print(f"{'alpha_1':>8} {'rho_1':>8} {'rho_2':>8} pareto")
for p in points:
    print(f"{p.alpha[0]:8.2f} {p.risk[0]:8.4f} {p.risk[1]:8.4f} {p.pareto}")
# shifting weight toward one agent raises its risk and lowers the other's, so no
# split dominates another and every point is flagged

rng = np.random.default_rng(0)
cloud = rng.random((500, 3))
print("nondominated among 500 random points in the unit cube:", len(pareto_filter(cloud)))
