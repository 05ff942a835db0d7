"""
Staying inside a convex set
===========================

Projections onto boxes, balls and polyhedra, a viability report for
simulated risk vectors, and the sampled constant in the inequality that
keeps backward solutions inside the set.
"""

import numpy as np

from riskaverse import (ConvexSet, GeneratorFunctional, RiskCostSpec, TreeModel, check_bsvp_inequality,
                        check_path_viability, solve_bsde_tree)
from riskaverse.catalog import diffusion_function, drift_function
from riskaverse.generators import composite
from riskaverse.sde import DiffusionModel

triangle = ConvexSet("polyhedron", A=[[-1, 0], [0, -1], [1, 1]], b=[0, 0, 1])
print("projection of (1, 1) onto the unit triangle:", triangle.project([1.0, 1.0]),
      " squared distance", triangle.dist_sq([1.0, 1.0]))
print("Chebyshev centre used as a feasible point:", triangle.feasible_point)

# two agents' risk values on a lattice, checked against a box that is too small
tree = TreeModel.brownian(10, 1.0)
Y = np.stack([solve_bsde_tree(tree, GeneratorFunctional("abs_z", mu=0.3), np.cos(tree.leaves)).nodes_flat(),
              solve_bsde_tree(tree, GeneratorFunctional("zero"), tree.leaves**2).nodes_flat()], axis=-1)
rep = check_path_viability(Y[None], ConvexSet("box", lo=[-1, 0], hi=[1, 2]))
print(f"viable fraction {rep.fraction:.3f}, worst squared violation {rep.worst_violation:.3f} at {rep.worst_location}")

# sampled constant C* for two agents on a 2-d Brownian state
model = DiffusionModel(2, [([0.0], [0.0])] * 2, drift_function({"kind": "constant", "value": [0, 0]}, 2, 2),
                       diffusion_function({"kind": "constant", "value": [[1, 0], [0, 1]]}, 2, 2))
costs = RiskCostSpec.from_config([{"running": {"kind": "constant", "value": 0.0},
                                   "terminal": {"kind": "constant", "value": 0.0}}] * 2, 2, [1, 1])
box = ConvexSet("box", lo=[0, 0], hi=[1, 1])
for g in (GeneratorFunctional("zero", dim=2), GeneratorFunctional("linear_y", b=-1.0, dim=2),
          GeneratorFunctional("linear_y", b=1.0, dim=2)):
    r = check_bsvp_inequality(model, [composite(g, costs, model, j) for j in range(2)], box, 500, seed=0)
    print(f"{g.kind} b={g.params.get('b', 0)}: C* = {r.C_star:.3f}  (resampled near kinks: {r.resampled})")
# a generator pushing y outward needs a constant that grows as y approaches the
# boundary from outside, so C* keeps growing with the number of samples
