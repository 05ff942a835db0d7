"""BSDE generator functionals ``g(t, y, z)`` and per-agent risk-cost data."""

from dataclasses import dataclass

import numpy as np

from .catalog import scalar_function
from .errors import ValidationError

GENERATOR_KINDS = ("zero", "linear_y", "linear_z", "abs_z", "capped_quadratic_z", "sum")


class GeneratorFunctional:
    """Catalog generator, vectorized: ``y`` has shape ``(N,)``, ``z`` shape ``(N, d)``.

    Kinds and their parameters:

    * ``zero``
    * ``linear_y``: ``b * y``
    * ``linear_z``: ``a . z`` with vector ``a``
    * ``abs_z``: ``mu * |z|``
    * ``capped_quadratic_z``: ``theta |z|^2 / 2`` for ``|z| <= R``, continued
      linearly (``theta R |z| - theta R^2 / 2``) beyond, so the Lipschitz
      constant is ``theta R``
    * ``sum``: pointwise sum of ``parts``
    """

    def __init__(self, kind, dim=1, parts=None, **params):
        if kind not in GENERATOR_KINDS:
            raise ValidationError(f"unknown generator kind {kind!r}", "generators.kind")
        self.kind = kind
        self.dim = int(dim)
        self.params = params
        self.parts = list(parts or [])
        if kind == "linear_y":
            self.b = float(params["b"])
        elif kind == "linear_z":
            a = np.atleast_1d(np.asarray(params["a"], dtype=float))
            if a.size != self.dim:
                raise ValidationError(f"linear_z: vector a has length {a.size}, expected {self.dim}",
                                      "generators.a")
            self.a = a
        elif kind == "abs_z":
            self.mu = float(params["mu"])
            if self.mu < 0:
                raise ValidationError("abs_z: mu must be nonnegative", "generators.mu")
        elif kind == "capped_quadratic_z":
            self.theta = float(params["theta"])
            self.R = float(params["R"])
            if self.theta < 0 or self.R <= 0:
                raise ValidationError("capped_quadratic_z: need theta >= 0 and R > 0", "generators")
        elif kind == "sum":
            if not self.parts:
                raise ValidationError("sum generator needs parts", "generators.parts")
            for p in self.parts:
                if p.dim != self.dim:
                    raise ValidationError("sum generator parts disagree on dimension", "generators.parts")

    @classmethod
    def from_config(cls, spec, dim=1, path="generators.g"):
        if not isinstance(spec, dict) or "kind" not in spec:
            raise ValidationError(f"{path}: expected an object with a 'kind' field", path)
        spec = dict(spec)
        kind = spec.pop("kind")
        for k, v in spec.items():
            if isinstance(v, str):
                raise ValidationError(f"{path}.{k}: numbers must not be given as strings", f"{path}.{k}")
        if kind == "sum":
            parts = [cls.from_config(p, dim, f"{path}.parts[{i}]") for i, p in enumerate(spec.pop("parts", []))]
            return cls("sum", dim, parts=parts)
        try:
            return cls(kind, dim, **spec)
        except KeyError as exc:
            raise ValidationError(f"{path}: missing parameter {exc.args[0]!r}", f"{path}.{exc.args[0]}") from None

    def __repr__(self):
        if self.kind == "sum":
            return f"GeneratorFunctional(sum of {self.parts!r})"
        return f"GeneratorFunctional({self.kind!r}, {self.params!r})"

    def __add__(self, other):
        return GeneratorFunctional("sum", self.dim, parts=[self, other])

    def __call__(self, t, y, z):
        y = np.asarray(y, dtype=float)
        z = np.asarray(z, dtype=float)
        if z.shape[-1] != self.dim:
            raise ValidationError(f"z has dimension {z.shape[-1]}, generator expects {self.dim}", "z")
        if self.kind == "zero":
            return np.zeros(np.broadcast_shapes(y.shape, z.shape[:-1]))
        if self.kind == "linear_y":
            return self.b * y + np.zeros(z.shape[:-1])
        if self.kind == "linear_z":
            return z @ self.a + np.zeros(y.shape)
        norm = np.linalg.norm(z, axis=-1) + np.zeros(y.shape)
        if self.kind == "abs_z":
            return self.mu * norm
        if self.kind == "capped_quadratic_z":
            th, R = self.theta, self.R
            return np.where(norm <= R, 0.5 * th * norm**2, th * R * norm - 0.5 * th * R**2)
        out = self.parts[0](t, y, z)
        for p in self.parts[1:]:
            out = out + p(t, y, z)
        return out

    # structural facts used to scope the checks in this package
    @property
    def lipschitz(self):
        return {
            "zero": 0.0,
            "linear_y": abs(getattr(self, "b", 0.0)),
            "linear_z": float(np.linalg.norm(getattr(self, "a", 0.0))),
            "abs_z": getattr(self, "mu", 0.0),
            "capped_quadratic_z": getattr(self, "theta", 0.0) * getattr(self, "R", 0.0),
            "sum": sum(p.lipschitz for p in self.parts),
        }[self.kind]

    @property
    def vanishes_at_z0(self):
        if self.kind == "sum":
            return all(p.vanishes_at_z0 for p in self.parts)
        return self.kind != "linear_y" or self.b == 0.0

    @property
    def y_independent(self):
        if self.kind == "sum":
            return all(p.y_independent for p in self.parts)
        return self.kind != "linear_y" or self.b == 0.0

    @property
    def convex(self):
        if self.kind == "sum":
            return all(p.convex for p in self.parts)
        return True

    @property
    def positively_homogeneous(self):
        if self.kind == "sum":
            return all(p.positively_homogeneous for p in self.parts)
        return self.kind != "capped_quadratic_z" or self.theta == 0.0


def eval_generator(g, t, y, z):
    """Scalar evaluation ``g(t, y, z)`` for a single point."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.shape != (g.dim,):
        raise ValidationError(f"z has shape {z.shape}, expected ({g.dim},)", "z")
    return float(g(t, np.array([float(y)]), z[None, :])[0])


@dataclass
class Assumption1Report:
    lipschitz_quotient: float
    declared_lipschitz: float
    max_abs_g_y0: float
    max_abs_g_00: float
    clauses: dict

    def to_dict(self):
        return {"lipschitz_quotient": self.lipschitz_quotient, "declared_lipschitz": self.declared_lipschitz,
                "max_abs_g_y0": self.max_abs_g_y0, "max_abs_g_00": self.max_abs_g_00,
                "clauses": dict(self.clauses)}


def check_assumption1(g, probes=1000, seed=0, scale=None, t_range=(0.0, 1.0)):
    """Sample the three regularity clauses for a generator.

    Clause (i) compares the largest sampled quotient
    ``|g1 - g2| / (|y1 - y2| + |z1 - z2|)`` with the declared constant,
    clause (ii) checks ``g(t, 0, 0)`` is finite and clause (iii) checks
    ``g(t, y, 0) == 0``.  A failed (iii) is reported, not raised.
    """
    if probes < 100:
        raise ValidationError("check_assumption1 needs at least 100 probes", "probes")
    rng = np.random.default_rng(seed)
    if scale is None:
        # reach past the cap of capped quadratics so both regimes are probed
        scale = max(10.0, 2.0 * _max_cap(g))
    d = g.dim
    t = rng.uniform(*t_range, size=probes)
    y1, y2 = rng.uniform(-scale, scale, size=(2, probes))
    z1 = rng.uniform(-scale, scale, size=(probes, d))
    # half of the pairs are local so kinks and the quadratic regime are both seen
    z2 = np.where(rng.random((probes, 1)) < 0.5, rng.uniform(-scale, scale, size=(probes, d)),
                  z1 + rng.normal(scale=0.05 * scale, size=(probes, d)))
    g1 = np.array([g(t[i], y1[i:i + 1], z1[i:i + 1])[0] for i in range(probes)])
    g2 = np.array([g(t[i], y2[i:i + 1], z2[i:i + 1])[0] for i in range(probes)])
    gap = np.abs(y1 - y2) + np.linalg.norm(z1 - z2, axis=1)
    quotient = float(np.max(np.abs(g1 - g2) / gap))
    zeros = np.zeros((probes, d))
    gy0 = np.array([g(t[i], y1[i:i + 1], zeros[i:i + 1])[0] for i in range(probes)])
    g00 = np.array([g(t[i], np.zeros(1), zeros[i:i + 1])[0] for i in range(probes)])
    max_y0 = float(np.max(np.abs(gy0)))
    max_00 = float(np.max(np.abs(g00)))
    clauses = {
        "lipschitz": "pass" if quotient <= g.lipschitz * (1 + 1e-9) + 1e-12 else "fail",
        "integrable_at_origin": "pass" if np.isfinite(max_00) else "fail",
        "vanishes_at_z0": "pass" if max_y0 <= 1e-12 else "fail",
    }
    return Assumption1Report(quotient, g.lipschitz, max_y0, max_00, clauses)


def _max_cap(g):
    if g.kind == "capped_quadratic_z":
        return g.R
    if g.kind == "sum":
        return max(_max_cap(p) for p in g.parts)
    return 0.0


@dataclass
class RiskCostSpec:
    """Per-agent running costs ``c_j(t, x, u_j)`` and terminal costs ``Psi_j(x)``.

    Each entry is a callable; running costs receive only agent ``j``'s
    control block, terminal costs are called as ``Psi(x)``.
    """

    running: list
    terminal: list

    def __post_init__(self):
        if len(self.running) != len(self.terminal):
            raise ValidationError("running and terminal cost lists differ in length", "costs")

    @property
    def num_agents(self):
        return len(self.running)

    @classmethod
    def from_config(cls, entries, state_dim, control_dims, path="costs"):
        if len(entries) != len(control_dims):
            raise ValidationError(f"{path}: {len(entries)} entries for {len(control_dims)} agents", path)
        running, terminal = [], []
        for j, entry in enumerate(entries):
            if "running" not in entry or "terminal" not in entry:
                raise ValidationError(f"{path}[{j}]: needs 'running' and 'terminal'", f"{path}[{j}]")
            running.append(scalar_function(entry["running"], state_dim, control_dims[j], f"{path}[{j}].running"))
            terminal.append(_terminal(scalar_function(entry["terminal"], state_dim, 0, f"{path}[{j}].terminal")))
        return cls(running, terminal)


def _terminal(f):
    def psi(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return f(0.0, x, np.zeros((x.shape[0], 0)))

    psi.spec = f.spec
    return psi


class CompositeGenerator:
    """Agent generator ``g_j(t, x, y, z) = c_j(t, x, u_j) + g(t, y, z)``.

    Controls are supplied per call; the solvers read them from the simulated
    paths or from the policy evaluated at lattice nodes.
    """

    def __init__(self, base, running_cost, agent, control_slice):
        self.base = base
        self.running_cost = running_cost
        self.agent = agent
        self.control_slice = control_slice

    @property
    def dim(self):
        return self.base.dim

    @property
    def lipschitz(self):
        return self.base.lipschitz

    def running(self, t, x, u):
        return np.asarray(self.running_cost(t, x, u[:, self.control_slice]), dtype=float)

    def __call__(self, t, x, y, z, u):
        return self.running(t, x, u) + self.base(t, y, z)


def composite(g, costs, model, j):
    return CompositeGenerator(g, costs.running[j], j, model.control_slice(j))
