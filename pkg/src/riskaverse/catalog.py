"""Declarative function catalog.

Drift, diffusion and cost functions are described by small JSON-able dicts
and turned into vectorized callables here, so experiment configs never carry
executable code.  Every catalog function has the signature ``f(t, x, u)``
with ``x`` of shape ``(N, d)`` and ``u`` of shape ``(N, m)`` (``m`` may be 0)
and returns an array of shape ``(N, *out_shape)``.

Supported kinds
---------------
constant     ``{"kind": "constant", "value": v}``
linear       ``{"kind": "linear", "state": A, "control": B, "offset": c}``
             affine in state and control, ``A x + B u + c``
ou           ``{"kind": "ou", "rate": theta, "mean": mu}``, ``theta (mu - x)``
quadratic    ``{"kind": "quadratic", "state": Q, "control": R,
             "control_target": u0, "state_linear": a, "offset": c}``
             scalar ``x'Qx + (u-u0)'R(u-u0) + a.x + c``
diagonal     ``{"kind": "diagonal", "base": s0, "slope": s1}``, diagonal matrix
             with entries ``s0_i + s1_i x_i`` (geometric-type diffusions)
polynomial   ``{"kind": "polynomial", "components": ...}`` where each scalar
             component is a list of terms ``{"coef": c, "t": k, "x": [..],
             "u": [..]}``; components nest to the output shape.
scaled       ``{"kind": "scaled", "factor": a, "base": {...}}``
sum          ``{"kind": "sum", "parts": [{...}, ...]}``
"""

import numpy as np

from .errors import ValidationError

KINDS = ("constant", "linear", "ou", "quadratic", "diagonal", "polynomial", "scaled", "sum")


class CatalogFunction:
    """Vectorized callable built from a catalog declaration."""

    def __init__(self, spec, out_shape, state_dim, control_dim, path="function"):
        if not isinstance(spec, dict) or "kind" not in spec:
            raise ValidationError(f"{path}: expected an object with a 'kind' field", path)
        kind = spec["kind"]
        if kind not in KINDS:
            raise ValidationError(f"{path}: unknown catalog kind {kind!r}", f"{path}.kind")
        self.spec = spec
        self.kind = kind
        self.out_shape = tuple(out_shape)
        self.state_dim = state_dim
        self.control_dim = control_dim
        self.path = path
        self._impl = getattr(self, "_build_" + kind)()

    def __call__(self, t, x, u=None):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n = x.shape[0]
        if u is None:
            u = np.zeros((n, self.control_dim))
        u = np.asarray(u, dtype=float).reshape(n, -1)
        return self._impl(float(t), x, u)

    def __repr__(self):
        return f"CatalogFunction({self.spec!r})"

    @property
    def time_dependent(self):
        """Whether any polynomial term carries a power of ``t``."""
        return _uses_time(self.spec)

    # -- helpers -------------------------------------------------------
    def _array(self, key, shape, default=None):
        if key not in self.spec:
            if default is None:
                raise ValidationError(f"{self.path}: missing field '{key}'", f"{self.path}.{key}")
            return np.broadcast_to(np.asarray(default, dtype=float), shape).copy()
        value = self.spec[key]
        _reject_strings(value, f"{self.path}.{key}")
        arr = np.asarray(value, dtype=float)
        try:
            return np.broadcast_to(arr, shape).copy()
        except ValueError:
            raise ValidationError(
                f"{self.path}.{key}: shape {arr.shape} incompatible with {shape}",
                f"{self.path}.{key}",
            ) from None

    def _square_matrix(self, key, n):
        value = self.spec.get(key, 0.0)
        if np.ndim(value) == 0:
            _reject_strings(value, f"{self.path}.{key}")
            return float(value) * np.eye(n)
        return self._array(key, (n, n))

    def _flat_size(self):
        return int(np.prod(self.out_shape)) if self.out_shape else 1

    # -- kinds ---------------------------------------------------------
    def _build_constant(self):
        value = self._array("value", self.out_shape)

        def f(t, x, u):
            return np.broadcast_to(value, (x.shape[0],) + self.out_shape).copy()

        return f

    def _build_linear(self):
        k = self._flat_size()
        A = self._array("state", (k, self.state_dim), 0.0)
        B = self._array("control", (k, self.control_dim), 0.0)
        c = self._array("offset", (k,), 0.0)

        def f(t, x, u):
            out = x @ A.T + c
            if self.control_dim:
                out = out + u @ B.T
            return out.reshape((x.shape[0],) + self.out_shape)

        return f

    def _build_ou(self):
        if self.out_shape != (self.state_dim,):
            raise ValidationError(f"{self.path}: 'ou' is only valid for drift", self.path)
        rate = self._array("rate", (self.state_dim,))
        mean = self._array("mean", (self.state_dim,), 0.0)

        def f(t, x, u):
            return rate * (mean - x)

        return f

    def _build_quadratic(self):
        if self.out_shape != ():
            raise ValidationError(f"{self.path}: 'quadratic' must be scalar-valued", self.path)
        d, m = self.state_dim, self.control_dim
        Q = self._square_matrix("state", d)
        R = self._square_matrix("control", m) if m else None
        u0 = self._array("control_target", (m,), 0.0) if m else None
        a = self._array("state_linear", (d,), 0.0)
        c = float(self._array("offset", (), 0.0))

        def f(t, x, u):
            out = np.einsum("ni,ij,nj->n", x, Q, x) + x @ a + c
            if m:
                du = u - u0
                out = out + np.einsum("ni,ij,nj->n", du, R, du)
            return out

        return f

    def _build_diagonal(self):
        d = self.state_dim
        if self.out_shape != (d, d):
            raise ValidationError(f"{self.path}: 'diagonal' is only valid for diffusion", self.path)
        base = self._array("base", (d,), 0.0)
        slope = self._array("slope", (d,), 0.0)
        idx = np.arange(d)

        def f(t, x, u):
            out = np.zeros((x.shape[0], d, d))
            out[:, idx, idx] = base + slope * x
            return out

        return f

    def _build_polynomial(self):
        comps = self.spec.get("components")
        if comps is None:
            raise ValidationError(f"{self.path}: missing field 'components'", f"{self.path}.components")
        flat = _flatten_components(comps, self.out_shape, self.path)
        tables = [self._term_table(terms, f"{self.path}.components[{i}]") for i, terms in enumerate(flat)]

        def f(t, x, u):
            n = x.shape[0]
            out = np.zeros((n, len(tables)))
            for i, (coef, tp, xp, up) in enumerate(tables):
                for c, kt, px, pu in zip(coef, tp, xp, up):
                    term = np.full(n, c * t**kt)
                    for j, p in enumerate(px):
                        if p:
                            term = term * x[:, j] ** p
                    for j, p in enumerate(pu):
                        if p:
                            term = term * u[:, j] ** p
                    out[:, i] += term
            return out.reshape((n,) + self.out_shape)

        return f

    def _term_table(self, terms, path):
        if not isinstance(terms, list):
            raise ValidationError(f"{path}: expected a list of terms", path)
        coef, tp, xp, up = [], [], [], []
        for k, term in enumerate(terms):
            tpath = f"{path}[{k}]"
            if not isinstance(term, dict) or "coef" not in term:
                raise ValidationError(f"{tpath}: term needs a 'coef'", tpath)
            _reject_strings(term, tpath)
            px = [int(p) for p in term.get("x", [0] * self.state_dim)]
            pu = [int(p) for p in term.get("u", [0] * self.control_dim)]
            if len(px) != self.state_dim or len(pu) != self.control_dim:
                raise ValidationError(f"{tpath}: exponent lists must match (d, m)", tpath)
            if min(px + pu + [int(term.get("t", 0))]) < 0:
                raise ValidationError(f"{tpath}: negative exponent", tpath)
            coef.append(float(term["coef"]))
            tp.append(int(term.get("t", 0)))
            xp.append(px)
            up.append(pu)
        return coef, tp, xp, up

    def _build_scaled(self):
        factor = float(self._array("factor", ()))
        inner = CatalogFunction(self.spec.get("base", {}), self.out_shape, self.state_dim,
                                self.control_dim, f"{self.path}.base")

        def f(t, x, u):
            return factor * inner._impl(t, x, u)

        return f

    def _build_sum(self):
        parts = self.spec.get("parts")
        if not isinstance(parts, list) or not parts:
            raise ValidationError(f"{self.path}: 'sum' needs a nonempty 'parts' list", f"{self.path}.parts")
        inner = [
            CatalogFunction(p, self.out_shape, self.state_dim, self.control_dim, f"{self.path}.parts[{i}]")
            for i, p in enumerate(parts)
        ]

        def f(t, x, u):
            out = inner[0]._impl(t, x, u)
            for g in inner[1:]:
                out = out + g._impl(t, x, u)
            return out

        return f


def _uses_time(spec):
    if isinstance(spec, dict):
        if spec.get("kind") is None and "coef" in spec:
            return int(spec.get("t", 0)) > 0
        return any(_uses_time(v) for v in spec.values())
    if isinstance(spec, (list, tuple)):
        return any(_uses_time(v) for v in spec)
    return False


def _reject_strings(value, path):
    if isinstance(value, str):
        raise ValidationError(f"{path}: numbers must not be given as strings", path)
    if isinstance(value, dict):
        for k, v in value.items():
            _reject_strings(v, f"{path}.{k}")
    elif isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            _reject_strings(v, f"{path}[{i}]")


def _flatten_components(comps, shape, path):
    if shape == ():
        return [comps]
    if not isinstance(comps, list) or len(comps) != shape[0]:
        raise ValidationError(f"{path}: components must nest to shape {shape}", f"{path}.components")
    out = []
    for c in comps:
        out.extend(_flatten_components(c, shape[1:], path))
    return out


def drift_function(spec, state_dim, control_dim, path="model.drift"):
    return CatalogFunction(spec, (state_dim,), state_dim, control_dim, path)


def diffusion_function(spec, state_dim, control_dim, path="model.diffusion"):
    return CatalogFunction(spec, (state_dim, state_dim), state_dim, control_dim, path)


def scalar_function(spec, state_dim, control_dim, path="cost"):
    """Running cost ``c(t, x, u)`` or, with ``control_dim=0``, terminal ``Psi(x)``."""
    return CatalogFunction(spec, (), state_dim, control_dim, path)
