"""Experiment configuration: JSON schema, loading and object builders."""

import copy
import hashlib
import json
from importlib import resources

import jsonschema
import numpy as np

from .catalog import diffusion_function, drift_function, scalar_function
from .errors import ValidationError
from .generators import GENERATOR_KINDS, GeneratorFunctional, RiskCostSpec
from .hjb import GridSpec
from .sde import DiffusionModel, TimeGrid
from .viability import ConvexSet

SCHEMA_VERSION = 1

_num = {"type": "number"}
_int = {"type": "integer"}
_vec = {"type": "array", "items": _num, "minItems": 1}
_catalog = {"type": "object", "required": ["kind"], "properties": {"kind": {"type": "string"}}}
_generator = {"type": "object", "required": ["kind"], "properties": {"kind": {"enum": list(GENERATOR_KINDS)}}}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "seed", "model"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "seed": {"type": "integer", "minimum": 0},
        "model": {
            "type": "object",
            "required": ["state_dim", "agents", "drift", "diffusion"],
            "additionalProperties": False,
            "properties": {
                "state_dim": {"type": "integer", "minimum": 1},
                "agents": {
                    "type": "array", "minItems": 1,
                    "items": {"type": "object", "required": ["lo", "hi"], "additionalProperties": False,
                              "properties": {"lo": _vec, "hi": _vec}},
                },
                "drift": _catalog,
                "diffusion": _catalog,
                "ellipticity": {"type": "number", "minimum": 0},
                "lipschitz": {"type": "number", "minimum": 0},
                "growth": {"type": "object", "required": ["C"], "additionalProperties": False,
                           "properties": {"C": _num, "p": {"type": "number", "minimum": 1}}},
            },
        },
        "generators": {"type": "object", "required": ["g"], "additionalProperties": False,
                       "properties": {"g": _generator}},
        "costs": {
            "type": "array", "minItems": 1,
            "items": {"type": "object", "required": ["running", "terminal"], "additionalProperties": False,
                      "properties": {"running": _catalog, "terminal": _catalog}},
        },
        "profile": {"type": "array", "items": _num},
        "K": {"type": "object", "required": ["kind"],
              "properties": {"kind": {"enum": ["box", "ball", "polyhedron"]}}},
        "grids": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "time": {"type": "object", "required": ["steps"], "additionalProperties": False,
                         "properties": {"T": {"type": "number", "exclusiveMinimum": 0},
                                        "steps": {"type": "integer", "minimum": 1}}},
                "paths": {"type": "integer", "minimum": 1},
                "tree_depth": {"type": "integer", "minimum": 1},
                "hjb": {"type": "object", "required": ["x_lo", "x_hi", "nodes", "time_steps"],
                        "additionalProperties": False,
                        "properties": {"x_lo": _vec, "x_hi": _vec, "nodes": {"type": "integer", "minimum": 6},
                                       "time_steps": {"type": "integer", "minimum": 1}, "T": _num, "t0": _num}},
            },
        },
        "solver": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "method": {"enum": ["lsmc", "tree", "pde"]},
                "degree": {"type": "integer", "minimum": 1, "maximum": 4},
                "ridge": {"type": "number", "minimum": 0},
                "tree_scheme": {"enum": ["flow", "implicit"]},
                "control_points": {"type": "integer", "minimum": 1},
                "cfl": {"enum": ["auto", "refuse"]},
            },
        },
        "evaluation": {"type": "object", "additionalProperties": False,
                       "properties": {"t0": _num, "x0": _vec, "agent": {"type": "integer", "minimum": 0}}},
        "equilibrium": {"type": "object", "additionalProperties": False,
                        "properties": {"tol": {"type": "number", "exclusiveMinimum": 0},
                                       "max_iters": {"type": "integer", "minimum": 1},
                                       "order": {"type": "array", "items": _int}}},
        "frontier": {"type": "object", "required": ["L", "resolution"], "additionalProperties": False,
                     "properties": {"L": _catalog, "resolution": {"type": "integer", "minimum": 1}}},
        "axioms": {"type": "object", "additionalProperties": False,
                   "properties": {"depth": {"type": "integer", "minimum": 1, "maximum": 20},
                                  "trials": {"type": "integer", "minimum": 1},
                                  "horizon": {"type": "number", "exclusiveMinimum": 0},
                                  "lsmc": {"type": "object", "additionalProperties": False,
                                           "properties": {"paths": _int, "steps": _int, "trials": _int,
                                                          "degree": _int}}}},
        "bsvp": {"type": "object", "additionalProperties": False,
                 "properties": {"samples": {"type": "integer", "minimum": 1},
                                "z_scale": {"type": "number", "minimum": 0},
                                "x_box": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}}},
        "output_dir": {"type": "string"},
    },
}


def _error_path(err):
    parts = [str(p) for p in err.absolute_path]
    if err.validator == "required":
        missing = [k for k in err.validator_value if k not in (err.instance or {})]
        if missing:
            parts.append(missing[0])
    if err.validator == "additionalProperties" and isinstance(err.instance, dict):
        extra = [k for k in err.instance if k not in err.schema.get("properties", {})]
        if extra:
            parts.append(extra[0])
    return ".".join(parts) or "<root>"


def validate_config(cfg):
    """Schema-check ``cfg`` and build every object once; raise ``ValidationError`` naming the path."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: (len(list(e.absolute_path)), list(e.absolute_path)))
    if errors:
        err = errors[0]
        path = _error_path(err)
        raise ValidationError(f"{path}: {err.message}", path)
    model = build_model(cfg)
    if "generators" in cfg:
        build_generator(cfg)
    if "costs" in cfg:
        build_costs(cfg, model)
    if "K" in cfg:
        build_K(cfg)
    if "grids" in cfg and "hjb" in cfg["grids"]:
        build_hjb_grid(cfg)
    if "frontier" in cfg:
        build_L(cfg)
    evaluation_point(cfg)
    return cfg


def load_config(path, overrides=None):
    """Read, override and validate a JSON config file."""
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"config file {path} not found", "config") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config is not valid JSON: {exc}", "config") from None
    cfg = apply_overrides(cfg, overrides or {})
    return validate_config(cfg)


def apply_overrides(cfg, overrides):
    cfg = copy.deepcopy(cfg)
    if overrides.get("seed") is not None:
        cfg["seed"] = int(overrides["seed"])
    if overrides.get("out") is not None:
        cfg["output_dir"] = str(overrides["out"])
    return cfg


def dump_config(cfg):
    """Canonical serialization (sorted keys, two-space indent)."""
    return json.dumps(cfg, sort_keys=True, indent=2) + "\n"


def config_hash(cfg):
    return hashlib.sha256(dump_config(cfg).encode()).hexdigest()


def reference_config():
    """The bundled reference configuration used by ``verify-all``."""
    text = resources.files("riskaverse").joinpath("data/reference_config.json").read_text()
    return validate_config(json.loads(text))


# ---------------------------------------------------------------------------
# builders

def build_model(cfg):
    m = cfg["model"]
    d = m["state_dim"]
    boxes = [(a["lo"], a["hi"]) for a in m["agents"]]
    total = sum(len(lo) for lo, _ in boxes)
    growth = m.get("growth", {})
    return DiffusionModel(d, boxes, drift_function(m["drift"], d, total), diffusion_function(m["diffusion"], d, total),
                          ellipticity=m.get("ellipticity", 0.0), growth_constant=growth.get("C"),
                          growth_exponent=growth.get("p", 1.0), lipschitz=m.get("lipschitz"))


def build_generator(cfg):
    if "generators" not in cfg:
        raise ValidationError("this subcommand needs 'generators'", "generators")
    return GeneratorFunctional.from_config(cfg["generators"]["g"], dim=cfg["model"]["state_dim"])


def build_costs(cfg, model):
    if "costs" not in cfg:
        raise ValidationError("this subcommand needs 'costs'", "costs")
    if len(cfg["costs"]) != model.num_agents:
        raise ValidationError(f"costs has {len(cfg['costs'])} entries for {model.num_agents} agents", "costs")
    return RiskCostSpec.from_config(cfg["costs"], model.state_dim, model.control_dims)


def build_K(cfg):
    if "K" not in cfg:
        raise ValidationError("this subcommand needs 'K'", "K")
    K = ConvexSet.from_config(cfg["K"])
    n = len(cfg["model"]["agents"])
    if K.dim != n:
        raise ValidationError(f"K has dimension {K.dim}, expected one coordinate per agent ({n})", "K")
    return K


def build_profile(cfg, model):
    """Constant decision profile; defaults to the midpoint of every control box."""
    if "profile" in cfg:
        prof = np.asarray(cfg["profile"], dtype=float)
        if prof.size != model.control_dim:
            raise ValidationError(f"profile needs {model.control_dim} entries", "profile")
        try:
            model.check_controls(prof)
        except ValidationError as exc:
            raise ValidationError(str(exc), "profile") from None
        return prof
    return 0.5 * (model.lower + model.upper)


def time_grid(cfg):
    t = cfg.get("grids", {}).get("time", {})
    t0 = cfg.get("evaluation", {}).get("t0", 0.0)
    return TimeGrid(float(t0), float(t.get("T", 1.0)), int(t.get("steps", 50)))


def num_paths(cfg):
    return int(cfg.get("grids", {}).get("paths", 10000))


def build_hjb_grid(cfg):
    if "hjb" not in cfg.get("grids", {}):
        raise ValidationError("this subcommand needs 'grids.hjb'", "grids.hjb")
    spec = dict(cfg["grids"]["hjb"])
    spec.setdefault("T", cfg["grids"].get("time", {}).get("T", 1.0))
    grid = GridSpec.from_config(spec)
    if grid.dim != cfg["model"]["state_dim"]:
        raise ValidationError("grids.hjb dimension does not match model.state_dim", "grids.hjb")
    return grid


def build_L(cfg):
    d = cfg["model"]["state_dim"]
    f = scalar_function(cfg["frontier"]["L"], d, 0, "frontier.L")

    def L(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return f(0.0, x, np.zeros((x.shape[0], 0)))

    return L


def evaluation_point(cfg):
    ev = cfg.get("evaluation", {})
    d = cfg["model"]["state_dim"]
    x0 = np.asarray(ev.get("x0", [0.0] * d), dtype=float)
    if x0.size != d:
        raise ValidationError(f"evaluation.x0 needs {d} entries", "evaluation.x0")
    return float(ev.get("t0", 0.0)), x0
