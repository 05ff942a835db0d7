"""Controlled diffusions and Euler-Maruyama path simulation."""

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ValidationError

CHUNK_SIZE = 4096


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t0 < t0 + dt < ... < T`` with ``steps`` intervals."""

    t0: float
    T: float
    steps: int

    def __post_init__(self):
        if not self.t0 >= 0:
            raise ValidationError("time grid: t0 must be >= 0", "grids.time.t0")
        if not self.T > self.t0:
            raise ValidationError("time grid: T must exceed t0", "grids.time.T")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValidationError("time grid: steps must be a positive integer", "grids.time.steps")

    @property
    def dt(self):
        return (self.T - self.t0) / self.steps

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.steps + 1)


class DiffusionModel:
    """Controlled diffusion ``dX = m(t, X, u) dt + sigma(t, X, u) dB``.

    ``drift(t, x, u)`` must map ``x`` of shape ``(N, d)`` and the stacked
    controls ``u`` of shape ``(N, sum m_j)`` to ``(N, d)``; ``diffusion``
    maps to ``(N, d, d)``.  ``control_boxes`` is a list with one
    ``(lower, upper)`` pair per agent.
    """

    def __init__(self, state_dim, control_boxes, drift, diffusion, ellipticity=0.0,
                 growth_constant=None, growth_exponent=1.0, lipschitz=None):
        if int(state_dim) != state_dim or state_dim < 1:
            raise ValidationError("state_dim must be a positive integer", "model.state_dim")
        if not control_boxes:
            raise ValidationError("at least one agent is required", "model.agents")
        boxes = []
        for j, (lo, hi) in enumerate(control_boxes):
            lo = np.atleast_1d(np.asarray(lo, dtype=float))
            hi = np.atleast_1d(np.asarray(hi, dtype=float))
            if lo.shape != hi.shape or lo.ndim != 1:
                raise ValidationError(f"agent {j}: control box bounds must be equal-length vectors",
                                      f"model.agents[{j}]")
            if np.any(lo > hi) or not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
                raise ValidationError(f"agent {j}: empty or unbounded control box", f"model.agents[{j}]")
            boxes.append((lo, hi))
        if ellipticity < 0:
            raise ValidationError("ellipticity must be nonnegative", "model.ellipticity")
        if growth_exponent < 1:
            raise ValidationError("growth exponent p must be >= 1", "model.growth.p")
        self.state_dim = int(state_dim)
        self.control_boxes = boxes
        self.drift = drift
        self.diffusion = diffusion
        self.ellipticity = float(ellipticity)
        self.growth_constant = growth_constant
        self.growth_exponent = float(growth_exponent)
        self.lipschitz = lipschitz

    @property
    def num_agents(self):
        return len(self.control_boxes)

    @property
    def control_dims(self):
        return [lo.size for lo, _ in self.control_boxes]

    @property
    def control_dim(self):
        return sum(self.control_dims)

    def control_slice(self, j):
        start = sum(self.control_dims[:j])
        return slice(start, start + self.control_dims[j])

    @property
    def lower(self):
        return np.concatenate([lo for lo, _ in self.control_boxes])

    @property
    def upper(self):
        return np.concatenate([hi for _, hi in self.control_boxes])

    def check_controls(self, u, tol=1e-12):
        """Raise ``ValidationError`` if any row of ``u`` leaves its box."""
        u = np.asarray(u, dtype=float)
        bad = np.any((u < self.lower - tol) | (u > self.upper + tol), axis=-1)
        if np.any(bad):
            row = int(np.flatnonzero(np.ravel(bad))[0])
            flat = u.reshape(-1, self.control_dim)
            raise ValidationError(f"control {flat[row].tolist()} lies outside its box", "profile")

    def coefficients(self, t, x, u):
        m = np.asarray(self.drift(t, x, u), dtype=float).reshape(x.shape[0], self.state_dim)
        s = np.asarray(self.diffusion(t, x, u), dtype=float).reshape(x.shape[0], self.state_dim,
                                                                      self.state_dim)
        return m, s


def as_profile(profile, model):
    """Normalize a decision profile into a callable ``(t, x) -> (N, m)``.

    Accepts ``None`` (only when every control box is a single point), a
    constant vector of stacked controls, a per-agent list of constant
    vectors, or any callable with that signature (e.g. a ``PolicyGrid``).
    """
    if callable(profile):
        return profile
    if profile is None:
        if not np.allclose(model.lower, model.upper):
            raise ValidationError("a profile is required unless all control boxes are singletons",
                                  "profile")
        const = model.lower.copy()
    elif isinstance(profile, (list, tuple)) and len(profile) == model.num_agents and \
            all(np.ndim(p) <= 1 for p in profile) and model.num_agents > 1:
        const = np.concatenate([np.atleast_1d(np.asarray(p, dtype=float)) for p in profile])
    else:
        const = np.atleast_1d(np.asarray(profile, dtype=float)).ravel()
    if const.size != model.control_dim:
        raise ValidationError(f"profile has {const.size} control entries, model needs "
                              f"{model.control_dim}", "profile")
    model.check_controls(const)

    def constant(t, x):
        return np.broadcast_to(const, (x.shape[0], const.size))

    return constant


@dataclass
class PathBundle:
    """Simulated states ``(N, M+1, d)``, increments ``(N, M, d)`` and controls ``(N, M, m)``."""

    states: np.ndarray
    increments: np.ndarray
    controls: np.ndarray
    grid: TimeGrid
    seed: int
    chunk_size: int = CHUNK_SIZE
    meta: dict = field(default_factory=dict)

    @property
    def num_paths(self):
        return self.states.shape[0]

    @property
    def state_dim(self):
        return self.states.shape[2]

    def moment_summary(self):
        """Per-step sample mean and covariance of the state."""
        rows = []
        for k, t in enumerate(self.grid.times):
            xs = self.states[:, k, :]
            cov = np.atleast_2d(np.cov(xs, rowvar=False)) if self.num_paths > 1 else \
                np.zeros((self.state_dim, self.state_dim))
            rows.append({"step": k, "t": float(t), "mean": xs.mean(axis=0).tolist(), "cov": cov.tolist()})
        return {"num_paths": self.num_paths, "seed": self.seed, "chunk_size": self.chunk_size,
                "steps": self.grid.steps, "moments": rows}

    def to_csv(self, path):
        d = self.state_dim
        times = self.grid.times
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path", "step", "t"] + [f"x_{i + 1}" for i in range(d)])
            for p in range(self.num_paths):
                for k in range(self.grid.steps + 1):
                    w.writerow([p, k, repr(float(times[k]))] + [repr(float(v)) for v in self.states[p, k]])

    def summary_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.moment_summary(), fh, indent=2, sort_keys=True)


def chunk_generator(seed, chunk_index):
    """Counter-based substream for one chunk of paths."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(chunk_index)])))


def brownian_increments(n_paths, steps, dim, dt, seed, chunk_size=CHUNK_SIZE, threads=1):
    """Brownian increments of shape ``(n_paths, steps, dim)``.

    Paths are split into fixed-size chunks, each drawn from its own
    ``(seed, chunk)`` substream, so the result does not depend on ``threads``.
    """
    if n_paths < 1:
        raise ValidationError("number of paths must be >= 1", "grids.paths")
    out = np.empty((n_paths, steps, dim))
    starts = list(range(0, n_paths, chunk_size))
    scale = np.sqrt(dt)

    def fill(c):
        s = starts[c]
        e = min(s + chunk_size, n_paths)
        out[s:e] = chunk_generator(seed, c).standard_normal((e - s, steps, dim)) * scale

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fill, range(len(starts))))
    else:
        for c in range(len(starts)):
            fill(c)
    return out


def simulate_forward(model, profile, grid, n_paths, seed, x0, increments=None,
                     chunk_size=CHUNK_SIZE, threads=1):
    """Euler-Maruyama paths of the controlled diffusion started at ``x0``.

    ``X_{k+1} = X_k + m(t_k, X_k, u_k) dt + sigma(t_k, X_k, u_k) dB_k`` with
    ``u_k = profile(t_k, X_k)``.  Pass ``increments`` to reuse common random
    numbers across runs.
    """
    d = model.state_dim
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (d,):
        raise ValidationError(f"initial point must have dimension {d}", "evaluation.x")
    policy = as_profile(profile, model)
    M, dt = grid.steps, grid.dt
    if increments is None:
        increments = brownian_increments(n_paths, M, d, dt, seed, chunk_size, threads)
    else:
        increments = np.asarray(increments, dtype=float)
        if increments.shape != (n_paths, M, d):
            raise ValidationError("supplied increments have the wrong shape", "increments")
    states = np.empty((n_paths, M + 1, d))
    controls = np.empty((n_paths, M, model.control_dim))
    states[:, 0, :] = x0
    times = grid.times
    for k in range(M):
        x = states[:, k, :]
        u = np.asarray(policy(times[k], x), dtype=float).reshape(n_paths, model.control_dim)
        model.check_controls(u)
        m, s = model.coefficients(times[k], x, u)
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(s))):
            bad = int(np.flatnonzero(~(np.isfinite(m).all(axis=1) & np.isfinite(s).all(axis=(1, 2))))[0])
            raise NumericalError("non-finite drift or diffusion value",
                                 {"t": float(times[k]), "x": x[bad].tolist(), "u": u[bad].tolist()})
        controls[:, k, :] = u
        states[:, k + 1, :] = x + m * dt + np.einsum("nij,nj->ni", s, increments[:, k, :])
    return PathBundle(states, increments, controls, grid, int(seed), chunk_size)


@dataclass
class AssumptionReport:
    """Sampled evidence for the regularity assumptions on the model."""

    lipschitz_drift: float
    lipschitz_diffusion: float
    min_eigenvalue: float
    growth_ratio: float
    clauses: dict

    @property
    def passed(self):
        return all(v != "fail" for v in self.clauses.values())

    def to_dict(self):
        return {"lipschitz_drift": self.lipschitz_drift, "lipschitz_diffusion": self.lipschitz_diffusion,
                "min_eigenvalue": self.min_eigenvalue, "growth_ratio": self.growth_ratio,
                "clauses": dict(self.clauses), "passed": self.passed}


def _sample_controls(model, n, rng):
    lo, hi = model.lower, model.upper
    return lo + (hi - lo) * rng.random((n, lo.size))


def check_model_assumptions(model, probe_count=1000, probe_box=(-1.0, 1.0), seed=0, t_range=(0.0, 1.0)):
    """Probe Lipschitz, ellipticity and growth clauses at random points.

    Lipschitz constants are estimated as the largest finite-difference
    quotient over random pairs of probe points; the growth ratio is
    ``max (|m| + |sigma|) / (1 + |x|^p + |u|)``.
    """
    rng = np.random.default_rng(seed)
    d = model.state_dim
    lo, hi = (np.broadcast_to(np.asarray(b, dtype=float), (d,)) for b in probe_box)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise ValidationError("probe box must be finite", "probe_box")
    n = int(probe_count)
    t = rng.uniform(*t_range, size=n)
    x1 = lo + (hi - lo) * rng.random((n, d))
    x2 = lo + (hi - lo) * rng.random((n, d))
    u1 = _sample_controls(model, n, rng)
    u2 = _sample_controls(model, n, rng)
    # evaluate pointwise so time-dependent coefficients see their own t
    m1 = np.empty((n, d))
    m2 = np.empty((n, d))
    s1 = np.empty((n, d, d))
    s2 = np.empty((n, d, d))
    for i in range(n):
        m1[i], s1[i] = (a[0] for a in model.coefficients(t[i], x1[i:i + 1], u1[i:i + 1]))
        m2[i], s2[i] = (a[0] for a in model.coefficients(t[i], x2[i:i + 1], u2[i:i + 1]))
    gap = np.linalg.norm(x1 - x2, axis=1) + np.linalg.norm(u1 - u2, axis=1)
    ok = gap > 1e-12
    lip_m = float(np.max(np.linalg.norm(m1 - m2, axis=1)[ok] / gap[ok])) if ok.any() else 0.0
    lip_s = float(np.max(np.linalg.norm(s1 - s2, axis=(1, 2))[ok] / gap[ok])) if ok.any() else 0.0
    a = np.einsum("nij,nkj->nik", s1, s1)
    min_eig = float(np.min(np.linalg.eigvalsh(a)))
    size = np.linalg.norm(m1, axis=1) + np.linalg.norm(s1, axis=(1, 2))
    bound = 1.0 + np.linalg.norm(x1, axis=1) ** model.growth_exponent + np.linalg.norm(u1, axis=1)
    ratio = float(np.max(size / bound))

    clauses = {}
    if model.lipschitz is None:
        clauses["lipschitz"] = "not_declared"
    else:
        clauses["lipschitz"] = "pass" if max(lip_m, lip_s) <= model.lipschitz * (1 + 1e-9) else "fail"
    if model.ellipticity > 0:
        clauses["ellipticity"] = "pass" if min_eig >= model.ellipticity * (1 - 1e-9) else "fail"
    else:
        clauses["ellipticity"] = "not_required"
    if model.growth_constant is None:
        clauses["growth"] = "not_declared"
    else:
        clauses["growth"] = "pass" if ratio <= model.growth_constant * (1 + 1e-9) else "fail"
    return AssumptionReport(lip_m, lip_s, min_eig, ratio, clauses)
