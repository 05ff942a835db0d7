"""Backward SDE solvers.

Two routes are provided for ``-dY = g(t, Y, Z) dt - Z dB, Y_T = xi``:

* :func:`solve_bsde_lsmc` works on simulated paths and replaces conditional
  expectations by least-squares regression on polynomials of the state.
* :func:`solve_bsde_tree` works on a recombining binomial lattice where
  conditional expectations are exact, and serves as the oracle.
"""

import csv
import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ValidationError
from .generators import CompositeGenerator
from .sde import as_profile

MAX_CONDITION = 1e12


# ---------------------------------------------------------------------------
# least-squares Monte Carlo

def monomial_exponents(dim, degree):
    """All exponent tuples of total degree <= ``degree``, constant first."""
    exps = [e for e in itertools.product(range(degree + 1), repeat=dim) if sum(e) <= degree]
    return sorted(exps, key=lambda e: (sum(e), tuple(-v for v in e)))


def polynomial_basis(x, degree):
    """Tensor polynomial features of the standardized state.

    Coordinates that are constant across paths (e.g. the shared initial
    point) are dropped so the design matrix stays well conditioned.
    """
    x = np.asarray(x, dtype=float)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    live = std > 1e-12 * (1.0 + np.abs(mean))
    xs = (x[:, live] - mean[live]) / std[live]
    exps = monomial_exponents(int(live.sum()), degree) if live.any() else [()]
    cols = []
    for e in exps:
        col = np.ones(x.shape[0])
        for j, p in enumerate(e):
            if p:
                col = col * xs[:, j] ** p
        cols.append(col)
    return np.column_stack(cols)


def _regress(phi, targets, ridge):
    n = phi.shape[0]
    # the intercept column is left unpenalized so constants are reproduced exactly
    penalty = np.full(phi.shape[1], ridge)
    penalty[0] = 0.0
    gram = phi.T @ phi / n + np.diag(penalty)
    cond = float(np.linalg.cond(gram))
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise NumericalError("regression matrix is ill-conditioned", {"condition_number": cond})
    coef = np.linalg.solve(gram, phi.T @ targets / n)
    return phi @ coef, cond


@dataclass
class BsdeSolution:
    """Path-wise ``Y`` of shape ``(N, M+1)`` and ``Z`` of shape ``(N, M, d)``."""

    Y: np.ndarray
    Z: np.ndarray
    degree: int
    ridge: float
    condition_numbers: list
    y0_stderr: float
    times: np.ndarray = None

    @property
    def y0(self):
        return float(self.Y[:, 0].mean())

    def step_summary(self):
        n = self.Y.shape[0]
        rows = []
        for k in range(self.Y.shape[1]):
            z = float(np.linalg.norm(self.Z[:, k], axis=1).mean()) if k < self.Z.shape[1] else float("nan")
            rows.append((k, float(self.Y[:, k].mean()), float(self.Y[:, k].std() / np.sqrt(n)), z))
        return rows

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "mean_Y", "stderr_Y", "mean_abs_Z"])
            for k, m, s, z in self.step_summary():
                w.writerow([k, repr(m), repr(s), "" if np.isnan(z) else repr(z)])


def _generator_on_paths(g, paths):
    times = paths.grid.times
    if isinstance(g, CompositeGenerator):
        def f(k, y, z):
            return g(times[k], paths.states[:, k, :], y, z, paths.controls[:, k, :])
    else:
        def f(k, y, z):
            return g(times[k], y, z)
    return f


def solve_bsde_lsmc(paths, g, terminal, degree=2, ridge=1e-8):
    """Backward induction with regression-based conditional expectations.

    For ``k = M-1, ..., 0``::

        E_k = regress(Y_{k+1} | X_k)
        Z_k = regress((Y_{k+1} - E_k) dB_k / dt | X_k)
        Y_k = E_k + g(t_k, E_k, Z_k) dt        (one Picard sweep)

    Subtracting ``E_k`` before the ``Z`` regression leaves its expectation
    unchanged and removes most of its variance.  The standard error of
    ``Y_0`` is that of the path-wise estimator ``xi + sum_k g_k dt``.
    """
    xi = np.asarray(terminal, dtype=float)
    N, M1, d = paths.states.shape
    M = M1 - 1
    if xi.shape != (N,):
        raise ValidationError(f"terminal values must have shape ({N},)", "terminal")
    if not np.all(np.isfinite(xi)):
        raise ValidationError("terminal values must be finite", "terminal")
    if degree < 0:
        raise ValidationError("basis degree must be >= 0", "solver.basis_degree")
    if g.dim != d:
        raise ValidationError(f"generator dimension {g.dim} does not match state dimension {d}", "generators")
    dt = paths.grid.dt
    if g.lipschitz * dt >= 1.0:
        raise NumericalError("Picard step does not contract (K_g * dt >= 1); refine the time grid",
                             {"lipschitz": g.lipschitz, "dt": dt})
    f = _generator_on_paths(g, paths)
    Y = np.empty((N, M + 1))
    Z = np.zeros((N, M, d))
    Y[:, M] = xi
    conds = [None] * M
    running = np.zeros(N)
    for k in range(M - 1, -1, -1):
        phi = polynomial_basis(paths.states[:, k, :], degree)
        E, cond_y = _regress(phi, Y[:, k + 1], ridge)
        zt = (Y[:, k + 1] - E)[:, None] * paths.increments[:, k, :] / dt
        Zk, _ = _regress(phi, zt, ridge)
        gk = f(k, E, Zk)
        Y[:, k] = E + dt * gk
        Z[:, k, :] = Zk
        conds[k] = cond_y
        running += dt * gk
        if not (np.all(np.isfinite(Y[:, k])) and np.all(np.isfinite(Zk))):
            raise NumericalError("non-finite BSDE iterate", {"step": k})
    stderr = float(np.std(xi + running) / np.sqrt(N)) if N > 1 else 0.0
    return BsdeSolution(Y, Z, degree, ridge, conds, stderr, paths.grid.times)


# ---------------------------------------------------------------------------
# binomial lattice

@dataclass
class TreeModel:
    """Recombining binomial lattice for a one-dimensional diffusion.

    Node ``i`` at level ``k`` sits at ``x0 + (2i - k) h`` with
    ``h = sigma sqrt(dt)``; the up-probability ``p = (1 + m dt / h) / 2``
    matches the drift, so ``p = 1/2`` for driftless models.  Level ``k`` has
    ``k + 1`` nodes, and node ``(k, i)`` moves to ``(k+1, i+1)`` (up) or
    ``(k+1, i)`` (down).
    """

    t0: float
    dt: float
    sigma: float
    nodes: list
    p_up: list
    controls: list = None
    meta: dict = field(default_factory=dict)

    @property
    def depth(self):
        return len(self.nodes) - 1

    @property
    def h(self):
        return self.sigma * np.sqrt(self.dt)

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.depth + 1)

    @property
    def leaves(self):
        return self.nodes[-1]

    @classmethod
    def brownian(cls, depth, T, x0=0.0, sigma=1.0, t0=0.0):
        """Symmetric walk approximating ``x0 + sigma B`` on ``[t0, T]``."""
        if depth < 1:
            raise ValidationError("tree depth must be >= 1", "solver.tree_depth")
        dt = (T - t0) / depth
        h = sigma * np.sqrt(dt)
        nodes = [x0 + (2 * np.arange(k + 1) - k) * h for k in range(depth + 1)]
        p = [np.full(k + 1, 0.5) for k in range(depth)]
        return cls(t0, dt, float(sigma), nodes, p)

    @classmethod
    def from_model(cls, model, profile, x0, t0, T, depth):
        """Lattice for a controlled one-dimensional model with constant volatility."""
        if model.state_dim != 1:
            raise ValidationError("tree solver requires a one-dimensional state", "solver")
        policy = as_profile(profile, model)
        dt = (T - t0) / depth
        x0 = float(np.ravel(x0)[0])
        probe = np.array([[x0]])
        u0 = np.asarray(policy(t0, probe), dtype=float).reshape(1, -1)
        sigma = float(abs(model.coefficients(t0, probe, u0)[1][0, 0, 0]))
        if sigma <= 0:
            raise ValidationError("tree solver needs a nondegenerate diffusion", "model.diffusion")
        h = sigma * np.sqrt(dt)
        nodes = [x0 + (2 * np.arange(k + 1) - k) * h for k in range(depth + 1)]
        p_up, controls = [], []
        clipped = 0
        for k in range(depth):
            t = t0 + k * dt
            x = nodes[k][:, None]
            u = np.asarray(policy(t, x), dtype=float).reshape(k + 1, model.control_dim)
            model.check_controls(u)
            m, s = model.coefficients(t, x, u)
            if not np.allclose(np.abs(s[:, 0, 0]), sigma, rtol=1e-12, atol=0):
                raise ValidationError("tree solver requires state- and control-independent volatility",
                                      "model.diffusion")
            p = 0.5 * (1.0 + m[:, 0] * dt / h)
            # far-out nodes of mean-reverting models overshoot; they carry negligible mass
            bad = (p < 0) | (p > 1)
            clipped += int(bad.sum())
            p_up.append(np.clip(p, 0.0, 1.0))
            controls.append(u)
        return cls(t0, dt, sigma, nodes, p_up, controls, meta={"clipped_nodes": clipped})

    def subtree(self, k, i):
        """Lattice rooted at node ``(k, i)``; shares node values and probabilities."""
        depth = self.depth - k
        nodes = [self.nodes[k + l][i:i + l + 1] for l in range(depth + 1)]
        p_up = [self.p_up[k + l][i:i + l + 1] for l in range(depth)]
        controls = None if self.controls is None else [self.controls[k + l][i:i + l + 1] for l in range(depth)]
        return TreeModel(self.t0 + k * self.dt, self.dt, self.sigma, nodes, p_up, controls)

    def expectation(self, values):
        """Root value of the plain conditional expectation of leaf ``values``."""
        v = np.asarray(values, dtype=float)
        for k in range(self.depth - 1, -1, -1):
            p = self.p_up[k]
            v = p * v[1:] + (1 - p) * v[:-1]
        return float(v[0])


@dataclass
class TreeSolution:
    Y: list
    Z: list
    tree: TreeModel
    scheme: str

    @property
    def root(self):
        return float(self.Y[0][0])

    def nodes_flat(self):
        return np.concatenate(self.Y)


def _node_generator(g, tree, k):
    t = tree.times[k]
    if isinstance(g, CompositeGenerator):
        if tree.controls is None:
            raise ValidationError("composite generators need a lattice built from a model", "solver")
        x = tree.nodes[k][:, None]
        run = g.running(t, x, tree.controls[k])
        return lambda y, z: run + g.base(t, y, z)
    return lambda y, z: g(t, y, z)


def _y_independent(g):
    base = g.base if isinstance(g, CompositeGenerator) else g
    return base.y_independent


def solve_bsde_tree(tree, g, terminal, scheme="flow", tol=1e-12, substeps=32):
    """Exact backward induction on the lattice.

    At each node ``E = p Y_up + (1-p) Y_down`` and ``Z = E[Y_{k+1} dW] / dt``.
    The one-step equation for ``Y`` is solved either as

    * ``"implicit"``: ``Y = E + dt g(Y, Z)`` by bisection to ``tol``, or
    * ``"flow"``: ``Y = y(dt)`` where ``y' = g(y, Z)``, ``y(0) = E`` (the
      exact time-``dt`` flow with ``Z`` frozen), integrated by RK4.

    Both coincide with ``E + dt g(Z)`` when ``g`` does not depend on ``y``,
    which is then used directly.
    """
    if scheme not in ("flow", "implicit"):
        raise ValidationError(f"unknown tree scheme {scheme!r}", "solver.tree_scheme")
    if g.dim != 1:
        raise ValidationError("tree solver requires a one-dimensional generator", "generators")
    dt = tree.dt
    if g.lipschitz * dt >= 1.0:
        raise NumericalError("K_g * dt must be < 1 on the lattice", {"lipschitz": g.lipschitz, "dt": dt})
    leaves = np.asarray(terminal, dtype=float)
    if leaves.shape != (tree.depth + 1,):
        raise ValidationError(f"terminal must have {tree.depth + 1} leaf values", "terminal")
    M = tree.depth
    Y = [None] * (M + 1)
    Z = [None] * M
    Y[M] = leaves.copy()
    sq = tree.sigma
    y_free = _y_independent(g)
    for k in range(M - 1, -1, -1):
        p = tree.p_up[k]
        yu, yd = Y[k + 1][1:], Y[k + 1][:-1]
        drift_dt = (2 * p - 1) * tree.h
        dw_u = (tree.h - drift_dt) / sq
        dw_d = (-tree.h - drift_dt) / sq
        E = p * yu + (1 - p) * yd
        z = ((p * yu * dw_u + (1 - p) * yd * dw_d) / dt)[:, None]
        f = _node_generator(g, tree, k)
        if y_free:
            Y[k] = E + dt * f(E, z)
        elif scheme == "implicit":
            Y[k] = _bisect(f, E, z, dt, g.lipschitz, tol)
        else:
            Y[k] = _rk4_flow(f, E, z, dt, substeps)
        Z[k] = z
    return TreeSolution(Y, Z, tree, scheme)


def _bisect(f, E, z, dt, K, tol):
    r = dt * np.abs(f(E, z)) / (1.0 - K * dt)
    lo = E - 1.01 * r - 1e-300
    hi = E + 1.01 * r + 1e-300
    F = lambda y: y - E - dt * f(y, z)  # noqa: E731
    assert np.all(F(lo) <= 0) and np.all(F(hi) >= 0), "bisection bracket failed"
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        neg = F(mid) < 0
        lo = np.where(neg, mid, lo)
        hi = np.where(neg, hi, mid)
        if np.all(hi - lo <= tol):
            break
    return 0.5 * (lo + hi)


def _rk4_flow(f, E, z, dt, substeps):
    h = dt / substeps
    y = E.copy()
    for _ in range(substeps):
        k1 = f(y, z)
        k2 = f(y + 0.5 * h * k1, z)
        k3 = f(y + 0.5 * h * k2, z)
        k4 = f(y + h * k3, z)
        y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y
