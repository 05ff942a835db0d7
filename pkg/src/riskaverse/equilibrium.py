"""Best-response iteration, Pareto ordering of risk vectors and the allocation frontier."""

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ValidationError
from .generators import RiskCostSpec
from .hjb import PolicyGrid, ValueGrid, solve_hjb_system


def best_response(model, costs, g, profile, j, grid, control_points=33):
    """Agent ``j``'s optimal policy row with every other agent frozen at ``profile``.

    Returns ``(row, values)``: the control row of shape
    ``(M_t + 1, *nodes, m_j)`` and agent ``j``'s value array
    ``(M_t + 1, *nodes)``.
    """
    vg, pol, _ = solve_hjb_system(model, costs, g, profile, grid, active=[j], control_points=control_points)
    return pol.row(j), vg.values[..., j]


@dataclass
class DecisionProfile:
    policy: PolicyGrid
    values: ValueGrid
    iterations: int
    last_change: list

    def risk_vector(self, t, x):
        return np.array([self.values.value_at(j, t, x) for j in range(self.values.num_agents)])


@dataclass
class ConvergenceReport:
    converged: bool
    sweeps: int
    sweeps_to_fixed_point: int
    changes: list
    tol: float
    trajectory: list = field(default_factory=list)

    def to_dict(self):
        out = {"converged": self.converged, "sweeps": self.sweeps,
               "sweeps_to_fixed_point": self.sweeps_to_fixed_point, "changes": self.changes, "tol": self.tol}
        if self.trajectory:
            out["trajectory_length"] = len(self.trajectory)
        return out


def gauss_seidel_equilibrium(model, costs, g, init_profile, grid, tol=1e-9, max_iters=20, order=None,
                             control_points=33):
    """Cyclic best responses until no agent's policy moves by more than ``tol``.

    A sweep updates the agents in ``order`` (ascending by default), each one
    responding to the latest rows of the others.  ``sweeps_to_fixed_point``
    is the last sweep that changed anything (at least 1); the extra sweep
    confirming the fixed point is counted in ``sweeps``.  If ``max_iters``
    sweeps do not converge, the profile after every sweep is kept in
    ``trajectory``.
    """
    if max_iters < 1:
        raise ValidationError("max_iters must be at least 1", "equilibrium.max_iters")
    n = model.num_agents
    order = list(range(n)) if order is None else list(order)
    if sorted(order) != list(range(n)):
        raise ValidationError("order must be a permutation of the agents", "equilibrium.order")
    if isinstance(init_profile, PolicyGrid):
        profile = init_profile
    else:
        profile = PolicyGrid.constant(grid, model, init_profile)
    values = np.zeros((len(grid.times),) + grid.shape + (n,))
    changes, trajectory = [], []
    last_changed = 0
    converged = False
    sweep = 0
    for sweep in range(1, max_iters + 1):
        sweep_change = [0.0] * n
        for j in order:
            row, vals = best_response(model, costs, g, profile, j, grid, control_points)
            sweep_change[j] = float(np.max(np.abs(row - profile.row(j))))
            profile = profile.with_row(j, row)
            values[..., j] = vals
        changes.append(sweep_change)
        if max(sweep_change) >= tol:
            last_changed = sweep
        else:
            converged = True
            break
        trajectory.append(profile.controls.copy())
    if converged:
        trajectory = []
    report = ConvergenceReport(converged, sweep, max(1, last_changed), changes, tol, trajectory)
    return DecisionProfile(profile, ValueGrid(grid, values), sweep, changes[-1]), report


# ---------------------------------------------------------------------------
# Pareto ordering

def pareto_dominates(v, w):
    """``v`` weakly below ``w`` in every coordinate and strictly below in one."""
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    if v.shape != w.shape:
        raise ValidationError(f"risk vectors differ in length ({v.size} vs {w.size})", "risk_vector")
    return bool(np.all(v <= w) and np.any(v < w))


def pareto_mask(points, chunk=512):
    """Boolean mask of the points not dominated by any other point."""
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if P.shape[0] == 0:
        raise ValidationError("pareto filter needs at least one point", "points")
    keep = np.ones(P.shape[0], dtype=bool)
    for s in range(0, P.shape[0], chunk):
        block = P[s:s + chunk]
        le = np.all(P[None, :, :] <= block[:, None, :], axis=2)
        lt = np.any(P[None, :, :] < block[:, None, :], axis=2)
        keep[s:s + chunk] = ~np.any(le & lt, axis=1)
    return keep


def pareto_filter(points):
    """Nondominated points in their input order; equal points are all kept."""
    mask = pareto_mask(points)
    return [p for p, k in zip(points, mask) if k]


# ---------------------------------------------------------------------------
# allocation frontier

@dataclass
class AllocationPoint:
    alpha: list
    risk: list = None
    pareto: bool = False
    iterations: int = 0
    converged: bool = False
    reconstruction_error: float = 0.0
    error: str = None

    def to_dict(self):
        out = {"alpha": self.alpha, "pareto": self.pareto, "iterations": self.iterations,
               "converged": self.converged, "reconstruction_error": self.reconstruction_error}
        if self.risk is not None:
            out["risk"] = self.risk
        if self.error is not None:
            out["error"] = self.error
        return out


def simplex_grid(n, resolution):
    """Weights ``k / R`` with nonnegative integers ``k`` summing to ``R``, lexicographic in ``k``."""
    if resolution < 1 or n < 1:
        raise ValidationError("simplex resolution and agent count must be positive", "frontier.resolution")
    out = []
    for ks in itertools.product(range(resolution + 1), repeat=n - 1):
        if sum(ks) <= resolution:
            k = list(ks) + [resolution - sum(ks)]
            out.append([ki / resolution for ki in k])
    return out


def allocation_frontier(model, running_costs, g, L, resolution, grid, x0, t0=None, init_profile=None,
                        equilibrium=None):
    """Split the aggregate terminal exposure ``L`` as ``Psi_j = alpha_j L`` over a simplex grid.

    For each weight vector an equilibrium is computed and its risk vector
    evaluated at ``(t0, x0)``; Pareto flags come from :func:`pareto_mask`
    over the successful points.  Solver failures are recorded on the point.
    """
    n = model.num_agents
    t0 = grid.t0 if t0 is None else t0
    equilibrium = dict(equilibrium or {})
    pts = grid.points()
    L_nodes = np.asarray(L(pts), dtype=float)
    if not np.all(np.isfinite(L_nodes)):
        raise ValidationError("aggregate exposure is not finite on the grid", "frontier.L")
    if init_profile is None:
        init_profile = 0.5 * (model.lower + model.upper)
    out = []
    for alpha in simplex_grid(n, resolution):
        terminal = [_scaled(L, a) for a in alpha]
        costs = RiskCostSpec(list(running_costs), terminal)
        recon = float(np.max(np.abs(sum(np.asarray(psi(pts)) for psi in terminal) - L_nodes)))
        point = AllocationPoint(alpha, reconstruction_error=recon)
        try:
            prof, rep = gauss_seidel_equilibrium(model, costs, g, init_profile, grid, **equilibrium)
        except (NumericalError, ValidationError) as exc:
            point.error = f"{type(exc).__name__}: {exc}"
        else:
            point.risk = prof.risk_vector(t0, x0).tolist()
            point.iterations = rep.sweeps
            point.converged = rep.converged
        out.append(point)
    ok = [p for p in out if p.risk is not None]
    if ok:
        for p, flag in zip(ok, pareto_mask([p.risk for p in ok])):
            p.pareto = bool(flag)
    return out


def _scaled(L, a):
    def psi(x):
        return a * np.asarray(L(x), dtype=float)

    return psi
