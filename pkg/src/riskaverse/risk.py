"""Dynamic risk measures defined by BSDEs, with comparison and axiom checks."""

from dataclasses import dataclass, field

import numpy as np

from .bsde import TreeModel, solve_bsde_lsmc, solve_bsde_tree
from .errors import ValidationError
from .generators import GeneratorFunctional, composite
from .sde import TimeGrid, simulate_forward

SOLVERS = ("lsmc", "tree", "pde")


@dataclass
class RiskMeasureResult:
    agent: int
    t: float
    x: list
    value: float
    stderr: float
    provenance: str

    def to_dict(self):
        return {"agent": self.agent, "t": self.t, "x": list(self.x), "value": self.value,
                "stderr": self.stderr, "provenance": self.provenance}


def risk_measure(model, costs, g, profile, agent, t, x, T, solver="lsmc", n_paths=20000, steps=50,
                 seed=0, degree=2, tree_depth=200, value_grid=None, increments=None):
    """Risk value of agent ``agent``'s accumulated cost started from ``(t, x)``.

    The running cost enters through the composite generator
    ``c_j + g`` and the terminal value is ``Psi_j(X_T)``.
    """
    if solver not in SOLVERS:
        raise ValidationError(f"unknown solver {solver!r}", "solver")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if solver == "pde":
        if value_grid is None:
            raise ValidationError("solver 'pde' needs a solved value grid", "solver")
        value = value_grid.value_at(agent, t, x)
        return RiskMeasureResult(agent, float(t), x.tolist(), float(value), 0.0, "pde")
    gj = composite(g, costs, model, agent)
    psi = costs.terminal[agent]
    if solver == "tree":
        if model.state_dim != 1:
            raise ValidationError("solver 'tree' requires a one-dimensional state", "solver")
        tree = TreeModel.from_model(model, profile, x, t, T, tree_depth)
        sol = solve_bsde_tree(tree, gj, psi(tree.leaves[:, None]))
        return RiskMeasureResult(agent, float(t), x.tolist(), sol.root, 0.0, "tree")
    grid = TimeGrid(float(t), float(T), int(steps))
    paths = simulate_forward(model, profile, grid, n_paths, seed, x, increments=increments)
    sol = solve_bsde_lsmc(paths, gj, psi(paths.states[:, -1, :]), degree=degree)
    return RiskMeasureResult(agent, float(t), x.tolist(), sol.y0, sol.y0_stderr, "lsmc")


# ---------------------------------------------------------------------------
# comparison theorem

@dataclass
class ComparisonReport:
    applicable: bool
    reason: str
    delta: float
    tree_min_difference: float
    monotonicity: str
    strict_clause: str
    lsmc_min_difference: float = None

    @property
    def passed(self):
        return self.applicable and self.monotonicity == "pass" and self.strict_clause != "fail"

    def to_dict(self):
        out = {"applicable": self.applicable, "reason": self.reason, "delta": self.delta,
               "tree_min_difference": self.tree_min_difference, "monotonicity": self.monotonicity,
               "strict_clause": self.strict_clause, "passed": self.passed}
        if self.lsmc_min_difference is not None:
            out["lsmc_min_difference"] = self.lsmc_min_difference
        return out


def _generators_ordered(g1, g2, probes, seed):
    rng = np.random.default_rng(seed)
    d = g1.dim
    y = rng.uniform(-10, 10, probes)
    z = rng.uniform(-10, 10, (probes, d))
    t = rng.uniform(0, 1)
    return bool(np.all(g1(t, y, z) >= g2(t, y, z) - 1e-12))


def check_comparison(tree, xi1, g1, xi2, g2, paths=None, probes=500, seed=0, tol=1e-12):
    """Order check for two BSDEs on a shared lattice (and optionally shared paths).

    ``xi1``/``xi2`` are either leaf-value arrays or callables of the terminal
    state.  The verdict comes from the exact lattice solution: with a strict
    terminal gap every node difference must exceed ``tol``; with a weak one
    it must not fall below ``-tol``.  The path-based result is advisory.
    """
    leaves = tree.leaves[:, None]
    v1 = np.asarray(xi1(leaves) if callable(xi1) else xi1, dtype=float)
    v2 = np.asarray(xi2(leaves) if callable(xi2) else xi2, dtype=float)
    gap = v1 - v2
    delta = float(gap.min())
    if delta < -tol:
        return ComparisonReport(False, "terminal values are not ordered", delta, float("nan"),
                                "inapplicable", "inapplicable")
    if not _generators_ordered(g1, g2, probes, seed):
        return ComparisonReport(False, "generators are not ordered at probes", delta, float("nan"),
                                "inapplicable", "inapplicable")
    s1 = solve_bsde_tree(tree, g1, v1)
    s2 = solve_bsde_tree(tree, g2, v2)
    diffs = [a - b for a, b in zip(s1.Y, s2.Y)]
    dmin = float(min(d.min() for d in diffs))
    if delta > tol:
        mono = "pass" if dmin > tol else "fail"
    else:
        mono = "pass" if dmin >= -tol else "fail"
    if np.any(gap > tol):
        strict = "pass" if all(np.any(d > tol) for d in diffs) else "fail"
    else:
        strict = "not_triggered"
    lsmc_min = None
    if paths is not None and callable(xi1) and callable(xi2):
        x_T = paths.states[:, -1, :]
        l1 = solve_bsde_lsmc(paths, g1, xi1(x_T))
        l2 = solve_bsde_lsmc(paths, g2, xi2(x_T))
        lsmc_min = float((l1.Y - l2.Y).min())
    return ComparisonReport(True, "", delta, dmin, mono, strict, lsmc_min)


# ---------------------------------------------------------------------------
# axioms of the induced risk measure

AXIOMS = ("convexity", "monotonicity", "trans_invariance", "positive_homogeneity", "normalization")


@dataclass
class AxiomResult:
    name: str
    applicable: bool
    tree_max_violation: float
    tree_pass: bool
    lsmc_max_excess: float = None
    lsmc_pass: bool = None
    counterexample: dict = None

    @property
    def status(self):
        if not self.applicable:
            return "inapplicable"
        ok = self.tree_pass and (self.lsmc_pass is None or self.lsmc_pass)
        return "pass" if ok else "fail"

    def to_dict(self):
        out = {"name": self.name, "status": self.status, "applicable": self.applicable,
               "tree_max_violation": self.tree_max_violation, "tree_pass": self.tree_pass}
        if self.lsmc_pass is not None:
            out["lsmc_max_excess"] = self.lsmc_max_excess
            out["lsmc_pass"] = self.lsmc_pass
        if self.counterexample is not None:
            out["counterexample"] = self.counterexample
        return out


@dataclass
class AxiomReport:
    generator: str
    horizon: float
    depth: int
    axioms: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(a.status != "fail" for a in self.axioms.values())

    @property
    def flagged(self):
        return [name for name, a in self.axioms.items() if a.counterexample is not None]

    def to_dict(self):
        return {"generator": self.generator, "horizon": self.horizon, "depth": self.depth,
                "passed": self.passed, "flagged": self.flagged,
                "axioms": {k: v.to_dict() for k, v in self.axioms.items()}}


def axiom_applicability(g):
    """Which axioms hold literally under the structure of ``g``."""
    shift_ok = g.vanishes_at_z0 and g.y_independent
    return {
        "convexity": g.convex,
        "monotonicity": True,
        "trans_invariance": shift_ok,
        "positive_homogeneity": g.positively_homogeneous,
        "normalization": shift_ok,
    }


def battery_horizon(g, depth, horizon=1.0):
    """Largest horizon <= ``horizon`` keeping the lattice scheme monotone (``K^2 dt <= 1``)."""
    K = g.lipschitz
    if K == 0:
        return horizon
    return min(horizon, depth / K**2)


def check_risk_axioms(g, depth=10, trials=100, seed=0, horizon=1.0, lsmc=None, tol=1e-10):
    """Test the five risk-measure axioms on lattices, optionally also by LSMC.

    Every axiom is evaluated; those whose hypotheses ``g`` does not meet are
    marked inapplicable, and any violation found for them is kept as a
    counterexample.  ``lsmc`` may be a dict with ``paths``, ``steps``,
    ``trials`` and ``seed`` to add the statistical route (3 standard errors).
    """
    if depth > 20:
        raise ValidationError("axiom battery uses depth <= 20", "solver.tree_depth")
    T = battery_horizon(g, depth, horizon)
    tree = TreeModel.brownian(depth, T)
    rng = np.random.default_rng(seed)
    app = axiom_applicability(g)
    rho = lambda leaves: solve_bsde_tree(tree, g, leaves).Y  # noqa: E731
    worst = {a: 0.0 for a in AXIOMS}
    cex = {a: None for a in AXIOMS}

    def record(name, viol, info):
        if viol > worst[name]:
            worst[name] = viol
        if viol > tol and cex[name] is None:
            cex[name] = info

    for trial in range(trials):
        x1 = rng.uniform(-1, 1, depth + 1)
        x2 = rng.uniform(-1, 1, depth + 1)
        lam = rng.uniform(0, 1)
        y1, y2 = rho(x1), rho(x2)
        ym = rho(lam * x1 + (1 - lam) * x2)
        for k in range(depth + 1):
            v = ym[k] - lam * y1[k] - (1 - lam) * y2[k]
            i = int(np.argmax(v))
            record("convexity", float(v[i]), {"trial": trial, "node": [k, i], "lambda": lam,
                                               "xi1": x1.tolist(), "xi2": x2.tolist()})
        bump = rng.uniform(0.01, 0.5, depth + 1)
        yb = rho(x1 + bump)
        for k in range(depth + 1):
            d = yb[k] - y1[k]
            i = int(np.argmin(d))
            # strict: every node must move up by more than tol
            record("monotonicity", 0.0 if d[i] > tol else max(2 * tol, float(-d[i])),
                   {"trial": trial, "node": [k, i], "xi": x1.tolist(), "bump": bump.tolist()})
        nu = rng.uniform(-2, 2)
        ys = rho(x1 + nu)
        for k in range(depth + 1):
            v = np.abs(ys[k] - y1[k] - nu)
            i = int(np.argmax(v))
            record("trans_invariance", float(v[i]), {"trial": trial, "node": [k, i], "nu": nu,
                                                     "xi": x1.tolist(), "lhs": float(ys[k][i]),
                                                     "rhs": float(y1[k][i] + nu)})
        c = rng.uniform(0.1, 5.0)
        yh = rho(c * x1)
        for k in range(depth + 1):
            v = np.abs(yh[k] - c * y1[k]) / (1.0 + np.abs(c * y1[k]))
            i = int(np.argmax(v))
            record("positive_homogeneity", float(v[i]), {"trial": trial, "node": [k, i], "lambda": c,
                                                         "xi": x1.tolist()})
    y0 = rho(np.zeros(depth + 1))
    for k in range(depth + 1):
        v = np.abs(y0[k])
        i = int(np.argmax(v))
        record("normalization", float(v[i]), {"node": [k, i], "value": float(y0[k][i])})

    report = AxiomReport(_describe(g), T, depth)
    for a in AXIOMS:
        report.axioms[a] = AxiomResult(a, app[a], worst[a], worst[a] <= tol, counterexample=cex[a])
    if lsmc:
        _lsmc_axioms(g, T, report, **lsmc)
    return report


def _describe(g):
    if isinstance(g, GeneratorFunctional):
        return repr(g)
    return type(g).__name__


def _lsmc_axioms(g, T, report, paths=20000, steps=20, trials=5, seed=1, degree=2):
    from .sde import DiffusionModel  # local: only needed for the battery model

    model = DiffusionModel(1, [([0.0], [0.0])], lambda t, x, u: np.zeros_like(x),
                           lambda t, x, u: np.ones((x.shape[0], 1, 1)))
    grid = TimeGrid(0.0, T, steps)
    pb = simulate_forward(model, None, grid, paths, seed, [0.0])
    xT = pb.states[:, -1, 0]
    rng = np.random.default_rng(seed)

    def rho(xi):
        s = solve_bsde_lsmc(pb, g, xi, degree=degree)
        return s.y0, s.y0_stderr

    excess = {a: 0.0 for a in AXIOMS}
    for _ in range(trials):
        a = rng.uniform(-1, 1, 4)
        b = rng.uniform(-1, 1, 4)
        xi1 = a[0] + a[1] * xT + a[2] * np.sin(2 * xT + a[3])
        xi2 = b[0] + b[1] * xT + b[2] * np.cos(xT + b[3])
        lam = rng.uniform(0, 1)
        (r1, s1), (r2, s2) = rho(xi1), rho(xi2)
        rm, sm = rho(lam * xi1 + (1 - lam) * xi2)
        excess["convexity"] = max(excess["convexity"], (rm - lam * r1 - (1 - lam) * r2) - 3 * (sm + s1 + s2))
        rb, sb = rho(xi1 + 0.1 + 0.1 * np.abs(np.sin(xT)))
        excess["monotonicity"] = max(excess["monotonicity"], (r1 - rb) - 3 * (s1 + sb))
        nu = rng.uniform(-2, 2)
        rs, ss = rho(xi1 + nu)
        excess["trans_invariance"] = max(excess["trans_invariance"], abs(rs - r1 - nu) - 3 * (ss + s1))
        c = rng.uniform(0.1, 5.0)
        rh, sh = rho(c * xi1)
        excess["positive_homogeneity"] = max(excess["positive_homogeneity"],
                                             abs(rh - c * r1) - 3 * (sh + c * s1))
    r0, s0 = rho(np.zeros_like(xT))
    excess["normalization"] = abs(r0) - max(3 * s0, 1e-12)
    for name, res in report.axioms.items():
        res.lsmc_max_excess = float(excess[name])
        res.lsmc_pass = bool(excess[name] <= 0)
