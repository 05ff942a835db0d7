"""Closed convex target sets: projection, squared distance and viability checks."""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .errors import NumericalError, ValidationError

MEMBERSHIP_TOL = 1e-8
PROJECTION_TOL = 1e-10


class ConvexSet:
    """Nonempty closed convex set of kind ``box``, ``ball`` or ``polyhedron``.

    Polyhedra are ``{y : A y <= b}``; nonemptiness is certified by a stored
    feasible point (the Chebyshev center when none is given).
    """

    def __init__(self, kind, lo=None, hi=None, center=None, radius=None, A=None, b=None, feasible_point=None):
        self.kind = kind
        if kind == "box":
            self.lo = np.atleast_1d(np.asarray(lo, dtype=float))
            self.hi = np.atleast_1d(np.asarray(hi, dtype=float))
            if self.lo.shape != self.hi.shape or np.any(self.lo > self.hi):
                raise ValidationError("box needs lo <= hi with matching shapes", "K")
            self.dim = self.lo.size
            self.feasible_point = 0.5 * (np.clip(self.lo, -1e300, None) + np.clip(self.hi, None, 1e300))
            self.feasible_point = np.where(np.isfinite(self.lo) & np.isfinite(self.hi), self.feasible_point,
                                           np.where(np.isfinite(self.lo), self.lo, np.where(np.isfinite(self.hi),
                                                                                           self.hi, 0.0)))
        elif kind == "ball":
            self.center = np.atleast_1d(np.asarray(center, dtype=float))
            self.radius = float(radius)
            if not self.radius > 0:
                raise ValidationError("ball radius must be positive", "K.radius")
            self.dim = self.center.size
            self.feasible_point = self.center.copy()
        elif kind == "polyhedron":
            self.A = np.atleast_2d(np.asarray(A, dtype=float))
            self.b = np.atleast_1d(np.asarray(b, dtype=float))
            if self.A.shape[0] != self.b.size:
                raise ValidationError("polyhedron: A and b disagree in row count", "K")
            self.dim = self.A.shape[1]
            norms = np.linalg.norm(self.A, axis=1)
            if np.any(norms == 0):
                raise ValidationError("polyhedron: zero row in A", "K.A")
            self._normals = self.A / norms[:, None]
            self._offsets = self.b / norms
            if feasible_point is None:
                feasible_point = self._chebyshev_center()
            self.feasible_point = np.asarray(feasible_point, dtype=float)
            if np.any(self.A @ self.feasible_point > self.b + MEMBERSHIP_TOL):
                raise ValidationError("polyhedron: feasible point violates constraints", "K.feasible_point")
        else:
            raise ValidationError(f"unknown convex set kind {kind!r}", "K.kind")

    @classmethod
    def from_config(cls, spec, path="K"):
        if not isinstance(spec, dict) or "kind" not in spec:
            raise ValidationError(f"{path}: expected an object with a 'kind' field", path)
        spec = dict(spec)
        kind = spec.pop("kind")
        try:
            return cls(kind, **spec)
        except TypeError as exc:
            raise ValidationError(f"{path}: {exc}", path) from None

    def to_config(self):
        if self.kind == "box":
            return {"kind": "box", "lo": self.lo.tolist(), "hi": self.hi.tolist()}
        if self.kind == "ball":
            return {"kind": "ball", "center": self.center.tolist(), "radius": self.radius}
        return {"kind": "polyhedron", "A": self.A.tolist(), "b": self.b.tolist()}

    def _chebyshev_center(self):
        n = self.dim
        norms = np.linalg.norm(self.A, axis=1)
        c = np.zeros(n + 1)
        c[-1] = -1.0
        res = linprog(c, A_ub=np.column_stack([self.A, norms]), b_ub=self.b,
                      bounds=[(None, None)] * n + [(0, None)], method="highs")
        if res.status == 3:
            # unbounded radius: fall back to any feasible point
            res = linprog(np.zeros(n), A_ub=self.A, b_ub=self.b, bounds=[(None, None)] * n, method="highs")
            if res.status != 0:
                raise ValidationError("polyhedron is empty", "K")
            return res.x
        if res.status != 0:
            raise ValidationError("polyhedron is empty", "K")
        return res.x[:n]

    # ------------------------------------------------------------------
    def project(self, a, tol=PROJECTION_TOL, max_sweeps=100000):
        """Euclidean projection of one point ``(n,)`` or a batch ``(N, n)``."""
        a = np.asarray(a, dtype=float)
        single = a.ndim == 1
        pts = np.atleast_2d(a)
        if pts.shape[1] != self.dim:
            raise ValidationError(f"point dimension {pts.shape[1]} != set dimension {self.dim}", "point")
        if not np.all(np.isfinite(pts)):
            raise ValidationError("cannot project non-finite points", "point")
        if self.kind == "box":
            out = np.clip(pts, self.lo, self.hi)
        elif self.kind == "ball":
            v = pts - self.center
            r = np.linalg.norm(v, axis=1)
            scale = np.where(r > self.radius, self.radius / np.where(r > 0, r, 1.0), 1.0)
            out = np.where((r > self.radius)[:, None], self.center + v * scale[:, None], pts)
        else:
            out = self._dykstra(pts, tol, max_sweeps)
        return out[0] if single else out

    def _dykstra(self, pts, tol, max_sweeps):
        """Dykstra's alternating projection onto the halfspaces, batched over points."""
        N = pts.shape[0]
        x = pts.copy()
        viol0 = np.max(x @ self._normals.T - self._offsets, axis=1)
        active = viol0 > 0
        if not active.any():
            return x
        idx = np.flatnonzero(active)
        xa = x[idx]
        r = len(self._offsets)
        incr = np.zeros((r, idx.size, self.dim))
        for sweep in range(max_sweeps):
            prev = xa.copy()
            for i in range(r):
                n, c = self._normals[i], self._offsets[i]
                yv = xa + incr[i]
                excess = yv @ n - c
                proj = yv - np.maximum(excess, 0.0)[:, None] * n
                incr[i] = yv - proj
                xa = proj
            moved = np.max(np.abs(xa - prev))
            feas = np.max(xa @ self._normals.T - self._offsets)
            if moved <= 0.01 * tol and feas <= tol:
                x[idx] = xa
                return x
        residual = float(max(np.max(np.abs(xa - prev)), np.max(xa @ self._normals.T - self._offsets)))
        raise NumericalError("Dykstra projection did not converge", {"residual": residual, "sweeps": max_sweeps})

    def dist_sq(self, a):
        a = np.asarray(a, dtype=float)
        p = self.project(a)
        d2 = np.sum((np.atleast_2d(a) - np.atleast_2d(p)) ** 2, axis=1)
        # exact zero for points inside, regardless of projection round-off
        d2 = np.where(self.contains(a, 1e-12), 0.0, d2)
        return float(d2[0]) if a.ndim == 1 else d2

    def contains(self, a, tol=MEMBERSHIP_TOL):
        pts = np.atleast_2d(np.asarray(a, dtype=float))
        if self.kind == "box":
            inside = np.all((pts >= self.lo - tol) & (pts <= self.hi + tol), axis=1)
        elif self.kind == "ball":
            inside = np.linalg.norm(pts - self.center, axis=1) <= self.radius + tol
        else:
            inside = np.all(pts @ self._normals.T - self._offsets <= tol, axis=1)
        return inside

    def box_hessian(self, y):
        """Closed-form Hessian of ``d_K^2`` for boxes (2 on coordinates outside, else 0)."""
        if self.kind != "box":
            raise ValidationError("closed-form Hessian is only available for boxes", "K.kind")
        y = np.asarray(y, dtype=float)
        outside = (y < self.lo) | (y > self.hi)
        return np.diag(2.0 * outside.astype(float))


def project(K, a):
    return K.project(a)


def dist_sq(K, a):
    return K.dist_sq(a)


def numeric_hessian(f, y, step=None):
    """Central-difference Hessian of a scalar function at ``y``."""
    y = np.asarray(y, dtype=float)
    n = y.size
    h = 1e-4 * (1.0 + np.linalg.norm(y)) if step is None else step
    H = np.empty((n, n))
    f0 = f(y)
    E = np.eye(n) * h
    for i in range(n):
        H[i, i] = (f(y + E[i]) - 2 * f0 + f(y - E[i])) / h**2
        for j in range(i + 1, n):
            H[i, j] = (f(y + E[i] + E[j]) - f(y + E[i] - E[j]) - f(y - E[i] + E[j])
                       + f(y - E[i] - E[j])) / (4 * h**2)
            H[j, i] = (f(y + E[j] + E[i]) - f(y + E[j] - E[i]) - f(y - E[j] + E[i])
                       + f(y - E[j] - E[i])) / (4 * h**2)
    return H


def smooth_hessian(K, y, defect_tol=1e-4, jump_tol=0.5):
    """Numeric Hessian of ``d_K^2`` at ``y``, or ``None`` near a kink.

    A point is rejected when the two mixed-difference orders disagree, the
    Hessian changes between steps ``h`` and ``h/2``, or forward and backward
    one-sided second differences differ by more than ``jump_tol`` (a point
    sitting on a facet, where a curvature of ``d_K^2`` jumps by 2).
    """
    f = K.dist_sq
    y = np.asarray(y, dtype=float)
    h = 1e-4 * (1.0 + np.linalg.norm(y))
    f0 = f(y)
    for e in np.eye(y.size) * h:
        fwd = f(y + 2 * e) - 2 * f(y + e) + f0
        bwd = f(y - 2 * e) - 2 * f(y - e) + f0
        if abs(fwd - bwd) > jump_tol * h**2:
            return None
    H1 = numeric_hessian(f, y, h)
    if np.max(np.abs(H1 - H1.T)) > defect_tol:
        return None
    H2 = numeric_hessian(f, y, h / 2)
    if np.max(np.abs(H1 - H2)) > defect_tol:
        return None
    return 0.5 * (H1 + H1.T)


# ---------------------------------------------------------------------------
# viability of sampled processes and value grids

@dataclass
class ViabilityReport:
    fraction: float
    worst_violation: float
    worst_location: list
    exit_histogram: dict = field(default_factory=dict)
    tol: float = MEMBERSHIP_TOL

    @property
    def viable(self):
        return self.fraction == 1.0

    def to_dict(self):
        out = {"fraction": self.fraction, "viable": self.viable, "worst_violation": self.worst_violation,
               "worst_location": self.worst_location, "tol": self.tol}
        if self.exit_histogram:
            out["exit_histogram"] = {str(k): v for k, v in self.exit_histogram.items()}
        return out


def check_path_viability(Y, K, tol=MEMBERSHIP_TOL):
    """Fraction of ``(path, step)`` samples of ``Y`` (shape ``(N, M+1, n)``) within ``tol`` of ``K``.

    ``worst_violation`` is the largest squared distance, located at
    ``[path, step, *coordinates]``; the histogram counts first-exit steps
    (key ``"never"`` for paths that stay viable).
    """
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 2:
        Y = Y[:, :, None]
    if not np.all(np.isfinite(Y)):
        raise ValidationError("Y samples must be finite", "Y")
    N, S, n = Y.shape
    d2 = K.dist_sq(Y.reshape(-1, n)).reshape(N, S)
    bad = np.sqrt(d2) > tol
    fraction = float(1.0 - bad.mean())
    w = int(np.argmax(d2))
    p, s = divmod(w, S)
    hist = {}
    first = np.where(bad.any(axis=1), np.argmax(bad, axis=1), -1)
    for f in first:
        key = "never" if f < 0 else int(f)
        hist[key] = hist.get(key, 0) + 1
    return ViabilityReport(fraction, float(d2[p, s]), [p, s] + Y[p, s].tolist(), hist, tol)


def check_value_viability(value_grid, K, tol=MEMBERSHIP_TOL):
    """Check ``phi(t, x)`` lies in ``K`` at every node of a solved value grid."""
    phi = value_grid.values
    n = phi.shape[-1]
    flat = phi.reshape(-1, n)
    d2 = K.dist_sq(flat)
    bad = np.sqrt(d2) > tol
    w = int(np.argmax(d2))
    idx = np.unravel_index(w, phi.shape[:-1])
    t = float(value_grid.times[idx[0]])
    x = [float(ax[i]) for ax, i in zip(value_grid.axes, idx[1:])]
    return ViabilityReport(float(1.0 - bad.mean()), float(d2[w]),
                           [t] + x + flat[w].tolist(), {}, tol)


# ---------------------------------------------------------------------------
# sampled inequality between the generator and the geometry of K

@dataclass
class BsvpReport:
    samples: list
    lhs: np.ndarray
    quad: np.ndarray
    dist_sq: np.ndarray
    per_sample_C: np.ndarray
    C_star: float
    vacuous: bool
    resampled: int
    certificates: list

    def to_dict(self):
        return {"num_samples": len(self.samples), "C_star": self.C_star, "vacuous": self.vacuous,
                "resampled": self.resampled, "certificates": self.certificates}


def check_bsvp_inequality(model, generators, K, n_samples=1000, seed=0, t_range=(0.0, 1.0), x_box=(-1.0, 1.0),
                          y_sampler=None, z_scale=1.0, exterior_only=True, max_tries=None):
    """Sample ``<y - P_K(y), G> <= 1/4 <D^2 d_K^2(y) z sigma, z sigma> + C d_K^2(y)``.

    ``generators`` is a list of per-agent composite generators ``g_j``;
    ``G`` stacks ``g_j(t, x, y_j, (z sigma)_j)`` where row ``j`` of the
    ``n x d`` matrix ``z sigma`` is agent ``j``'s ``Z``.  For each exterior
    sample the smallest admissible constant
    ``max(0, (lhs - quad/4) / d_K^2)`` is recorded; ``C_star`` is their max.
    ``y_sampler(rng)`` draws one ``y``; by default a box around ``K``'s
    feasible point of half-width 2.
    """
    rng = np.random.default_rng(seed)
    n = len(generators)
    if n != K.dim:
        raise ValidationError("number of agent generators must equal the dimension of K", "K")
    d = model.state_dim
    lo, hi = (np.broadcast_to(np.asarray(b, dtype=float), (d,)) for b in x_box)
    if y_sampler is None:
        center = K.feasible_point

        def y_sampler(r):
            return center + r.uniform(-2.0, 2.0, n)

    samples, lhs, quad, d2s, cs = [], [], [], [], []
    resampled = 0
    max_tries = max_tries or 50 * n_samples
    tries = 0
    while len(samples) < n_samples and tries < max_tries:
        tries += 1
        y = y_sampler(rng)
        d2 = K.dist_sq(y)
        if exterior_only and d2 <= 0:
            continue
        H = smooth_hessian(K, y) if d2 > 0 else np.zeros((n, n))
        if H is None:
            resampled += 1
            continue
        t = rng.uniform(*t_range)
        x = lo + (hi - lo) * rng.random(d)
        u = model.lower + (model.upper - model.lower) * rng.random(model.control_dim)
        sigma = model.coefficients(t, x[None, :], u[None, :])[1][0]
        z = rng.normal(scale=z_scale, size=(n, d))
        zs = z @ sigma
        G = np.array([gj(t, x[None, :], y[j:j + 1], zs[j:j + 1], u[None, :])[0] for j, gj in enumerate(generators)])
        resid = y - K.project(y)
        left = float(resid @ G)
        q = float(np.trace(zs.T @ H @ zs))
        if d2 > 0:
            c = max(0.0, (left - 0.25 * q) / d2)
        else:
            c = 0.0 if left <= 0.25 * q + 1e-12 else float("inf")
        samples.append({"t": t, "x": x.tolist(), "y": y.tolist(), "z": z.tolist(), "u": u.tolist()})
        lhs.append(left)
        quad.append(q)
        d2s.append(d2)
        cs.append(c)
    cs = np.array(cs)
    vacuous = bool(len(d2s) == 0 or np.all(np.array(d2s) == 0))
    order = np.argsort(-cs)[:5] if cs.size else []
    certs = [dict(samples[i], lhs=lhs[i], quad=quad[i], dist_sq=d2s[i], C=float(cs[i])) for i in order if cs[i] > 0]
    return BsvpReport(samples, np.array(lhs), np.array(quad), np.array(d2s), cs,
                      float(cs.max()) if cs.size else 0.0, vacuous, resampled, certs)
