"""
Backward equations with known answers
=====================================

Two generators whose solutions are available in closed form, solved both by
regression on simulated paths and exactly on a binomial lattice, followed by
the ordering of solutions for ordered inputs.
"""

import numpy as np

from riskaverse import (DiffusionModel, GeneratorFunctional, TimeGrid, TreeModel, check_comparison,
                        simulate_forward, solve_bsde_lsmc, solve_bsde_tree)
from riskaverse.catalog import diffusion_function, drift_function

bm = DiffusionModel(1, [([0.0], [0.0])], drift_function({"kind": "constant", "value": [0.0]}, 1, 1),
                    diffusion_function({"kind": "constant", "value": [[1.0]]}, 1, 1))
paths = simulate_forward(bm, None, TimeGrid(0.0, 1.0, 100), 50_000, seed=3, x0=[0.0])
B_T = paths.states[:, -1, 0]

# drift in z: Y_t = B_t + beta (T - t), so Y_0 = beta
g = GeneratorFunctional("linear_z", a=[0.5])
sol = solve_bsde_lsmc(paths, g, B_T)
tree = TreeModel.brownian(12, 1.0)
print("linear_z   regression", round(sol.y0, 4), " lattice", solve_bsde_tree(tree, g, tree.leaves).root,
      " exact 0.5")
print("           mean Z over paths and steps", round(float(sol.Z.mean()), 4), "(exact 1)")

# drift in y: a deterministic ODE, Y_0 = e^{bT}
g = GeneratorFunctional("linear_y", b=1.0)
print("linear_y   regression", round(solve_bsde_lsmc(paths, g, np.ones_like(B_T)).y0, 4),
      " lattice", round(solve_bsde_tree(tree, g, np.ones(13)).root, 6), " exact", round(np.e, 6))

# the implicit lattice step solves the scalar equation at each node instead of
# integrating the drift over the step; it is first order in the step
for scheme in ("flow", "implicit"):
    r = solve_bsde_tree(tree, g, np.ones(13), scheme=scheme).root
    print(f"  {scheme:>8} scheme error {abs(r - np.e):.2e}")

# comparison: a larger generator and a larger terminal value give a larger Y at every node
tree = TreeModel.brownian(8, 1.0)
xi = np.sin(3 * tree.leaves)
rep = check_comparison(tree, xi + 0.1, GeneratorFunctional("abs_z", mu=0.4),
                       xi, GeneratorFunctional("abs_z", mu=0.1))
print("comparison:", rep.to_dict())
