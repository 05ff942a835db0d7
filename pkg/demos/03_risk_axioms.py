"""
Which generators give a coherent risk measure
=============================================

The battery perturbs random terminal positions on a depth-10 lattice and
checks convexity, monotonicity, translation, positive homogeneity and
normalization node by node.  Axioms outside a generator's hypotheses are
still evaluated; violations found there are kept as counterexamples.
"""

from riskaverse import GeneratorFunctional, check_risk_axioms

for g in (GeneratorFunctional("zero"), GeneratorFunctional("abs_z", mu=0.3),
          GeneratorFunctional("capped_quadratic_z", theta=1.0, R=5.0), GeneratorFunctional("linear_y", b=1.0)):
    rep = check_risk_axioms(g, depth=10, trials=50)
    status = {name: a.status for name, a in rep.axioms.items()}
    print(f"{g.kind:>20}  horizon {rep.horizon:.2f}  {status}")
    for name in rep.flagged:
        cex = rep.axioms[name].counterexample
        print(f"{'':>22}counterexample for {name}: node {cex['node']}",
              {k: round(v, 4) for k, v in cex.items() if k in ("lhs", "rhs", "nu", "lambda")})

# the capped quadratic has Lipschitz constant theta R = 5, so the battery uses
# the horizon depth / 25 = 0.4 on which the lattice step stays monotone
