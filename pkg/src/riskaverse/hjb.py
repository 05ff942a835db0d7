"""Explicit monotone finite-difference solver for the coupled risk-value PDE system.

Each agent's value ``phi_j`` solves, backward from ``phi_j(T) = Psi_j``,

    d_t phi_j + inf_{u_j} [ m . D phi_j + 1/2 tr(a D^2 phi_j) + c_j + g(t, phi_j, D phi_j sigma) ] = 0

with the other agents' controls frozen.  Drift is upwinded, second
derivatives are central and boundary nodes are filled by cubic
extrapolation from the interior.
"""

import csv
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import NumericalError, ValidationError
from .generators import composite
from .sde import as_profile

CFL_SAFETY = 0.9
TIE_GAP = 1e-9


@dataclass(frozen=True)
class GridSpec:
    """Space-time grid: ``time_steps`` output steps on ``[t0, T]`` and ``nodes`` per axis on ``[x_lo, x_hi]``."""

    x_lo: tuple
    x_hi: tuple
    nodes: int
    time_steps: int
    T: float = 1.0
    t0: float = 0.0

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.x_lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.x_hi))
        object.__setattr__(self, "x_lo", lo)
        object.__setattr__(self, "x_hi", hi)
        if len(lo) != len(hi) or len(lo) not in (1, 2):
            raise ValidationError("grid domain must be 1- or 2-dimensional", "grids.hjb")
        if any(a >= b for a, b in zip(lo, hi)):
            raise ValidationError("grid domain needs x_lo < x_hi", "grids.hjb")
        # the cubic boundary closure reads four interior nodes from each end
        if self.nodes < 6 or self.time_steps < 1 or not self.T > self.t0:
            raise ValidationError("grid needs nodes >= 6, time_steps >= 1 and T > t0", "grids.hjb")

    @classmethod
    def from_config(cls, spec, path="grids.hjb"):
        try:
            return cls(spec["x_lo"], spec["x_hi"], int(spec["nodes"]), int(spec["time_steps"]),
                       float(spec.get("T", 1.0)), float(spec.get("t0", 0.0)))
        except KeyError as exc:
            raise ValidationError(f"{path}: missing {exc.args[0]!r}", f"{path}.{exc.args[0]}") from None

    @property
    def dim(self):
        return len(self.x_lo)

    @property
    def axes(self):
        return [np.linspace(a, b, self.nodes) for a, b in zip(self.x_lo, self.x_hi)]

    @property
    def dx(self):
        return np.array([(b - a) / (self.nodes - 1) for a, b in zip(self.x_lo, self.x_hi)])

    @property
    def times(self):
        return np.linspace(self.t0, self.T, self.time_steps + 1)

    def points(self):
        """All spatial nodes as ``(P, d)``, first axis slowest."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @property
    def shape(self):
        return (self.nodes,) * self.dim


@dataclass
class HjbDiagnostics:
    cfl: list = field(default_factory=list)
    substeps: list = field(default_factory=list)
    max_residual: float = 0.0
    argmin_gap: float = None
    ties: int = 0

    def to_dict(self):
        out = {"max_cfl": max(self.cfl) if self.cfl else 0.0, "substeps": self.substeps,
               "max_residual": self.max_residual, "ties": self.ties}
        if self.argmin_gap is not None:
            out["argmin_gap"] = self.argmin_gap
        return out


class ValueGrid:
    """Values ``phi`` of shape ``(M_t + 1, *nodes, n)`` on a :class:`GridSpec`."""

    boundary = "cubic_extrapolation"

    def __init__(self, grid, values):
        self.grid = grid
        self.values = values
        self._interp = {}

    @property
    def times(self):
        return self.grid.times

    @property
    def axes(self):
        return self.grid.axes

    @property
    def num_agents(self):
        return self.values.shape[-1]

    def slice(self, k, agent):
        return self.values[k, ..., agent]

    def value_at(self, agent, t, x):
        if agent not in self._interp:
            self._interp[agent] = RegularGridInterpolator([self.times] + self.axes, self.values[..., agent])
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return float(self._interp[agent](np.concatenate([[t], x]))[0])

    def to_csv(self, path):
        pts = self.grid.points()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{i}" for i in range(self.grid.dim)] + ["agent", "value"])
            for k, t in enumerate(self.times):
                for j in range(self.num_agents):
                    vals = self.values[k, ..., j].ravel()
                    for p, v in zip(pts, vals):
                        w.writerow([repr(float(t))] + [repr(float(c)) for c in p] + [j, repr(float(v))])

    def metadata(self):
        g = self.grid
        return {"x_lo": list(g.x_lo), "x_hi": list(g.x_hi), "nodes": g.nodes, "time_steps": g.time_steps,
                "t0": g.t0, "T": g.T, "agents": self.num_agents, "boundary": self.boundary}


class PolicyGrid:
    """Stacked controls ``(M_t + 1, *nodes, m)`` on a grid; callable as a decision profile.

    Between nodes the control of the nearest grid node at the latest time
    not after ``t`` is used.
    """

    def __init__(self, grid, controls, model):
        self.grid = grid
        self.controls = controls
        self.model = model
        model.check_controls(controls)

    @classmethod
    def constant(cls, grid, model, profile):
        prof = as_profile(profile, model)
        pts = grid.points()
        rows = [np.asarray(prof(t, pts), dtype=float).reshape(grid.shape + (model.control_dim,)) for t in grid.times]
        return cls(grid, np.stack(rows), model)

    def row(self, j):
        return self.controls[..., self.model.control_slice(j)]

    def with_row(self, j, row):
        c = self.controls.copy()
        c[..., self.model.control_slice(j)] = row
        return PolicyGrid(self.grid, c, self.model)

    def __call__(self, t, x):
        g = self.grid
        k = int(np.clip(np.floor((t - g.t0) / (g.T - g.t0) * g.time_steps + 1e-9), 0, g.time_steps))
        x = np.atleast_2d(np.asarray(x, dtype=float))
        idx = [np.clip(np.rint((x[:, i] - g.x_lo[i]) / g.dx[i]), 0, g.nodes - 1).astype(int) for i in range(g.dim)]
        return self.controls[(k,) + tuple(idx)]

    def to_csv(self, path):
        pts = self.grid.points()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{i}" for i in range(self.grid.dim)] + ["agent"] +
                       [f"u{i}" for i in range(max(self.model.control_dims))])
            for k, t in enumerate(self.grid.times):
                for j in range(self.model.num_agents):
                    rows = self.controls[k, ..., self.model.control_slice(j)].reshape(len(pts), -1)
                    for p, u in zip(pts, rows):
                        w.writerow([repr(float(t))] + [repr(float(c)) for c in p] + [j] +
                                   [repr(float(c)) for c in u])


# ---------------------------------------------------------------------------
# discrete operators

def control_candidates(model, j, resolution=33):
    """Lexicographically ordered grid of agent ``j``'s control box, ``(C, m_j)``."""
    lo, hi = model.control_boxes[j]
    if resolution < 1:
        raise ValidationError("control grid resolution must be positive", "solver.control_points")
    axes = [np.array([a]) if a == b else np.linspace(a, b, resolution) for a, b in zip(lo, hi)]
    cands = np.array(list(itertools.product(*axes)), dtype=float).reshape(-1, lo.size)
    if cands.shape[0] == 0:
        raise ValidationError(f"agent {j}: empty control grid", "solver.control_points")
    return cands


def _extrapolate_boundary(phi, dim):
    """Fill the outer layer of each axis by cubic extrapolation (in place).

    With this closure the central second difference at the first interior
    node equals the second-order one-sided formula ``(2f1 - 5f2 + 4f3 - f4)/h^2``.
    """
    for ax in range(dim):
        sl = [slice(None)] * phi.ndim

        def at(i):
            s = list(sl)
            s[ax] = i
            return tuple(s)

        phi[at(0)] = 4 * phi[at(1)] - 6 * phi[at(2)] + 4 * phi[at(3)] - phi[at(4)]
        phi[at(-1)] = 4 * phi[at(-2)] - 6 * phi[at(-3)] + 4 * phi[at(-4)] - phi[at(-5)]
    return phi


def _differences(phi, dx):
    """Forward, backward and central first differences and second differences (interior-valid)."""
    d = phi.ndim
    fwd, bwd, cen, sec = [], [], [], []
    for i in range(d):
        up = np.roll(phi, -1, axis=i)
        dn = np.roll(phi, 1, axis=i)
        fwd.append((up - phi) / dx[i])
        bwd.append((phi - dn) / dx[i])
        cen.append(np.gradient(phi, dx[i], axis=i, edge_order=2))
        sec.append((up - 2 * phi + dn) / dx[i] ** 2)
    mixed = None
    if d == 2:
        pp = np.roll(np.roll(phi, -1, 0), -1, 1)
        pm = np.roll(np.roll(phi, -1, 0), 1, 1)
        mp = np.roll(np.roll(phi, 1, 0), -1, 1)
        mm = np.roll(np.roll(phi, 1, 0), 1, 1)
        mixed = (pp - pm - mp + mm) / (4 * dx[0] * dx[1])
    return fwd, bwd, cen, sec, mixed


class _AgentOperator:
    """Vectorized evaluation of one agent's Hamiltonian over (candidates x nodes)."""

    def __init__(self, model, costs, g, frozen, j, grid, candidates):
        self.model = model
        self.grid = grid
        self.j = j
        self.pts = grid.points()
        self.P = self.pts.shape[0]
        self.cands = candidates
        self.C = candidates.shape[0]
        self.gj = composite(g, costs, model, j)
        self.frozen = frozen
        self.slc = model.control_slice(j)
        self.X = np.tile(self.pts, (self.C, 1))
        self._cand_rows = np.repeat(self.cands, self.P, axis=0)
        # coefficients are reused while the controls repeat and t does not matter
        self._static = not (getattr(model.drift, "time_dependent", True) or
                            getattr(model.diffusion, "time_dependent", True))
        self._cache = None

    def controls(self, t):
        base = np.asarray(self.frozen(t, self.pts), dtype=float).reshape(self.P, self.model.control_dim)
        u = np.tile(base, (self.C, 1))
        u[:, self.slc] = self._cand_rows
        return u

    def coefficients(self, t):
        u = self.controls(t)
        if self._static and self._cache is not None and np.array_equal(u, self._cache[0]):
            return self._cache
        m, s = self.model.coefficients(t, self.X, u)
        a = s @ np.swapaxes(s, 1, 2)
        self._cache = (u, m, s, a)
        return self._cache

    def cfl_rate(self, t, coeffs=None):
        _, m, _, a = coeffs if coeffs is not None else self.coefficients(t)
        dx = self.grid.dx
        rate = sum(a[:, i, i] / dx[i] ** 2 + np.abs(m[:, i]) / dx[i] for i in range(self.grid.dim))
        if self.grid.dim == 2:
            rate = rate + np.abs(a[:, 0, 1]) / (dx[0] * dx[1])
        return float(np.max(rate))

    def objective(self, t, phi, coeffs=None):
        """Hamiltonian candidates ``(C, P)`` for value slice ``phi`` (shape ``grid.shape``)."""
        u, m, s, a = coeffs if coeffs is not None else self.coefficients(t)
        fwd, bwd, cen, sec, mixed = _differences(phi, self.grid.dx)
        C, P, d = self.C, self.P, self.grid.dim
        flat = lambda arr: np.tile(arr.ravel(), C)  # noqa: E731
        out = np.zeros(C * P)
        grad = np.empty((C * P, d))
        for i in range(d):
            mi = m[:, i]
            out += np.where(mi > 0, mi * flat(fwd[i]), mi * flat(bwd[i]))
            out += 0.5 * a[:, i, i] * flat(sec[i])
            grad[:, i] = flat(cen[i])
        if d == 2:
            out += a[:, 0, 1] * flat(mixed)
        z = (grad[:, None, :] @ s)[:, 0, :]
        out += self.gj(t, self.X, flat(phi), z, u)
        if not np.all(np.isfinite(out)):
            bad = int(np.flatnonzero(~np.isfinite(out))[0])
            raise NumericalError("non-finite Hamiltonian", {
                "agent": self.j, "t": float(t), "x": self.X[bad].tolist(), "u": u[bad].tolist(),
                "value": float(np.ravel(phi)[bad % P])})
        return out.reshape(C, P)


def _best(obj):
    """Row-wise minimum over candidates with lexicographic tie-breaking and the gap to the runner-up."""
    idx = np.argmin(obj, axis=0)
    best = obj[idx, np.arange(obj.shape[1])]
    if obj.shape[0] > 1:
        part = np.partition(obj, 1, axis=0)
        gap = part[1] - part[0]
    else:
        gap = np.full(obj.shape[1], np.inf)
    return idx, best, gap


def _interior_mask(shape):
    mask = np.zeros(shape, dtype=bool)
    mask[tuple(slice(1, -1) for _ in shape)] = True
    return mask


def solve_hjb_system(model, costs, g, frozen_profile, grid, active=None, control_points=33, terminal_shift=None,
                     substep="auto"):
    """Backward explicit solve of every agent's value PDE on ``grid``.

    Parameters
    ----------
    frozen_profile : PolicyGrid, callable or constant
        Supplies the controls of every agent not currently minimizing.
    active : iterable of int, optional
        Agents that minimize over their control grid (default: all).
        Inactive agents evolve with their frozen controls.
    substep : ``"auto"`` or ``"refuse"``
        ``"auto"`` splits each output step into enough explicit substeps to
        keep the CFL number at most 0.9; ``"refuse"`` raises instead and
        reports the number of output steps that would be needed.

    Returns
    -------
    (ValueGrid, PolicyGrid, HjbDiagnostics)
    """
    if model.state_dim != grid.dim:
        raise ValidationError(f"grid dimension {grid.dim} != state dimension {model.state_dim}", "grids.hjb")
    n = model.num_agents
    if n > 4:
        raise ValidationError("the grid solver supports at most 4 agents", "model.agents")
    active = list(range(n)) if active is None else sorted(set(active))
    frozen = as_profile(frozen_profile, model)
    pts = grid.points()
    times = grid.times
    ops = []
    for j in range(n):
        cands = control_candidates(model, j, control_points) if j in active else None
        if cands is None:
            # inactive: a single "candidate" equal to the frozen control at each node
            cands = np.zeros((1, model.control_dims[j]))
            op = _AgentOperator(model, costs, g, frozen, j, grid, cands)
            op.controls = lambda t, op=op: np.asarray(op.frozen(t, op.pts), dtype=float).reshape(op.P, -1)
        else:
            op = _AgentOperator(model, costs, g, frozen, j, grid, cands)
        ops.append(op)

    values = np.empty((len(times),) + grid.shape + (n,))
    for j in range(n):
        psi = np.asarray(costs.terminal[j](pts), dtype=float).reshape(grid.shape)
        if terminal_shift is not None:
            psi = psi + terminal_shift[j]
        values[-1, ..., j] = psi
    if not np.all(np.isfinite(values[-1])):
        raise NumericalError("terminal values are not finite", {})

    diag = HjbDiagnostics()
    interior = _interior_mask(grid.shape)
    dt_out = (grid.T - grid.t0) / grid.time_steps
    for k in range(grid.time_steps - 1, -1, -1):
        t_hi = times[k + 1]
        rate = max(op.cfl_rate(t_hi) for op in ops)
        nsub = max(1, math.ceil(rate * dt_out / CFL_SAFETY))
        if nsub > 1 and substep == "refuse":
            needed = math.ceil(rate * (grid.T - grid.t0) / CFL_SAFETY)
            raise NumericalError("explicit scheme violates the CFL condition", {
                "cfl": rate * dt_out, "required_time_steps": needed})
        h = dt_out / nsub
        phi = values[k + 1].copy()
        for s in range(nsub):
            t = t_hi - s * h
            coeffs = [op.coefficients(t) for op in ops]
            cfl = max(op.cfl_rate(t, c) for op, c in zip(ops, coeffs)) * h
            if cfl > 1.0:
                raise NumericalError("CFL number exceeded 1 inside a step", {"t": float(t), "cfl": cfl})
            diag.cfl.append(cfl)
            new = phi.copy()
            for j, op in enumerate(ops):
                obj = op.objective(t, phi[..., j], coeffs[j])
                _, best, _ = _best(obj)
                upd = phi[..., j] + h * best.reshape(grid.shape)
                new[..., j] = np.where(interior, upd, 0.0)
                _extrapolate_boundary(new[..., j], grid.dim)
            if not np.all(np.isfinite(new)):
                bad = np.argwhere(~np.isfinite(new))[0]
                raise NumericalError("non-finite value update", {"t": float(t), "node": bad.tolist()})
            phi = new
        diag.substeps.append(nsub)
        values[k] = phi
        # consistency residual of the output-level equation at interior nodes
        for j, op in enumerate(ops):
            _, best, _ = _best(op.objective(times[k], phi[..., j]))
            res = (values[k + 1, ..., j] - phi[..., j]) / dt_out + best.reshape(grid.shape)
            diag.max_residual = max(diag.max_residual, float(np.max(np.abs(res[interior]))))

    value_grid = ValueGrid(grid, values)
    controls = np.empty((len(times),) + grid.shape + (model.control_dim,))
    for k, t in enumerate(times):
        controls[k] = np.asarray(frozen(t, pts), dtype=float).reshape(grid.shape + (model.control_dim,))
    for j in active:
        row, gap, ties = _policy_row(value_grid, ops[j])
        controls[..., model.control_slice(j)] = row
        diag.ties += ties
        if np.isfinite(gap):
            diag.argmin_gap = gap if diag.argmin_gap is None else min(diag.argmin_gap, gap)
    return value_grid, PolicyGrid(grid, controls, model), diag


def _policy_row(value_grid, op):
    grid = op.grid
    row = np.empty((len(grid.times),) + grid.shape + (op.cands.shape[1],))
    min_gap, ties = np.inf, 0
    for k, t in enumerate(grid.times):
        idx, _, gap = _best(op.objective(t, value_grid.values[k, ..., op.j]))
        row[k] = op.cands[idx].reshape(grid.shape + (-1,))
        min_gap = min(min_gap, float(gap.min()))
        ties += int(np.sum(gap < TIE_GAP))
    return row, min_gap, ties


def extract_policy(value_grid, model, costs, g, frozen_profile, j, control_points=33):
    """Nodewise argmin of agent ``j``'s Hamiltonian on a solved value grid.

    Returns ``(row, argmin_gap, ties)`` where ``row`` has shape
    ``(M_t + 1, *nodes, m_j)``; ties are broken toward the
    lexicographically smallest control and counted when the gap to the
    runner-up is below 1e-9.
    """
    if value_grid.values.shape[-1] != model.num_agents or value_grid.grid.dim != model.state_dim:
        raise ValidationError("value grid does not match the model", "value_grid")
    op = _AgentOperator(model, costs, g, as_profile(frozen_profile, model), j, value_grid.grid,
                        control_candidates(model, j, control_points))
    return _policy_row(value_grid, op)


# ---------------------------------------------------------------------------
# probabilistic cross-check

@dataclass
class CrosscheckReport:
    points: list
    pde: list
    mc: list
    stderr: list
    tolerance: list
    passed_points: list

    @property
    def passed(self):
        return all(self.passed_points)

    def to_dict(self):
        return {"points": self.points, "pde": self.pde, "mc": self.mc, "stderr": self.stderr,
                "tolerance": self.tolerance, "passed_points": self.passed_points, "passed": self.passed}


def crosscheck_value_mc(value_grid, model, costs, g, policy, points, n_paths=20000, steps=50, seed=0, agent=0,
                        allowance=1.0, degree=2):
    """Compare ``phi_j(t0, x)`` with the path-regression risk value under ``policy``.

    The tolerance is ``3 stderr + allowance * (dx^2 + dt_pde + dt_mc)``.
    Points must lie at least 10% of the domain width inside the boundary.
    """
    from .risk import risk_measure

    grid = value_grid.grid
    width = np.array(grid.x_hi) - np.array(grid.x_lo)
    dx2 = float(np.max(grid.dx) ** 2)
    dt_pde = (grid.T - grid.t0) / grid.time_steps
    dt_mc = (grid.T - grid.t0) / steps
    allowance_term = allowance * (dx2 + dt_pde + dt_mc)
    pts, pde, mc, se, tols, ok = [], [], [], [], [], []
    for i, x in enumerate(points):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if np.any(x < np.array(grid.x_lo) + 0.1 * width) or np.any(x > np.array(grid.x_hi) - 0.1 * width):
            raise ValidationError(f"crosscheck point {x.tolist()} is too close to the grid boundary", "points")
        v = value_grid.value_at(agent, grid.t0, x)
        r = risk_measure(model, costs, g, policy, agent, grid.t0, x, grid.T, solver="lsmc", n_paths=n_paths,
                         steps=steps, seed=seed + i, degree=degree)
        tol = 3 * r.stderr + allowance_term
        pts.append(x.tolist())
        pde.append(v)
        mc.append(r.value)
        se.append(r.stderr)
        tols.append(tol)
        ok.append(bool(abs(v - r.value) <= tol))
    return CrosscheckReport(pts, pde, mc, se, tols, ok)
