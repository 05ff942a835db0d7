"""
Value functions on a grid
=========================

The explicit monotone scheme on two problems with exact answers: the heat
equation with a polynomial terminal value, and the scalar linear-quadratic
regulator whose value is q(t) x^2 + r(t) with q solving a Riccati ODE.
"""

import numpy as np

from riskaverse import GeneratorFunctional, GridSpec, solve_hjb_system
from riskaverse.verification import (brownian_model, heat_convergence, heat_costs, lq_costs, lq_model,
                                     riccati_oracle)

zero = GeneratorFunctional("zero")

# heat: dX = sqrt(2) dB, terminal x^2, value x^2 + 2(T - t)
grid = GridSpec([-5.0], [5.0], 201, 100)
vg, _, diag = solve_hjb_system(brownian_model(np.sqrt(2.0)), heat_costs({"kind": "quadratic", "state": 1.0}),
                               zero, None, grid)
print("heat value at (0, 1):", vg.value_at(0, 0.0, [1.0]), " exact 3")
print("explicit substeps per output step:", sorted(set(diag.substeps)), " max CFL", round(max(diag.cfl), 3))

errs, orders = heat_convergence()
print("quartic terminal value, errors under dx/2, dt/4:", [f"{e:.2e}" for e in errs])
print("observed orders:", [round(o, 2) for o in orders])

# LQ regulator: dX = u dt + dB, running cost u^2 + x^2, u in [-5, 5]
grid = GridSpec([-5.0], [5.0], 201, 60)
vg, pol, diag = solve_hjb_system(lq_model(), lq_costs(), zero, [0.0], grid, control_points=101)
q, r = riccati_oracle(1.0, grid.times)
for x in (-2.0, 0.0, 1.0, 2.0):
    print(f"x = {x:+.1f}  grid {vg.value_at(0, 0.0, [x]):.4f}  Riccati {q[0] * x * x + r[0]:.4f}"
          f"  policy {pol(0.0, np.array([[x]]))[0, 0]:+.2f}  feedback {-q[0] * x:+.2f}")
print("argmin ties:", diag.ties, " smallest gap to the runner-up:", diag.argmin_gap)
