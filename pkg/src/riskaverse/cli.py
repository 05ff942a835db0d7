"""Command-line entry point: ``riskaverse <subcommand> --config PATH [--out DIR]``.

Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 a check
failed.  Failures print a one-line JSON diagnostic on stderr.  Every flag
can also be set through an environment variable with the ``RISKAVERSE_``
prefix (``RISKAVERSE_CONFIG``, ``RISKAVERSE_OUT``, ``RISKAVERSE_SEED``,
``RISKAVERSE_THREADS``, ``RISKAVERSE_VERBOSE``); flags win over the
environment.
"""

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from .bsde import TreeModel, solve_bsde_lsmc, solve_bsde_tree
from .config import (apply_overrides, build_costs, build_generator, build_hjb_grid, build_K, build_L, build_model,
                     build_profile, config_hash, dump_config, evaluation_point, load_config, num_paths,
                     reference_config, time_grid, validate_config)
from .equilibrium import allocation_frontier, gauss_seidel_equilibrium
from .errors import NumericalError, ValidationError
from .generators import GeneratorFunctional, composite
from .hjb import solve_hjb_system
from .io import (RunContext, atomic_output, build_manifest, emit_report, write_csv, write_json)
from .risk import check_risk_axioms
from .sde import simulate_forward
from .verification import frontier_rows, run_all, runtime_checks
from .viability import check_bsvp_inequality, check_path_viability, check_value_viability

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_CHECK = 0, 2, 3, 4
ENV_PREFIX = "RISKAVERSE_"
SUBCOMMANDS = ("simulate", "solve-bsde", "risk-axioms", "viability", "bsvp", "solve-hjb", "equilibrium",
               "frontier", "verify-all")

log = logging.getLogger("riskaverse")


class CheckFailed(Exception):
    pass


# ---------------------------------------------------------------------------
# subcommands: each writes into ctx.dir and returns a summary dict

def _simulate(cfg, ctx, threads):
    model = build_model(cfg)
    _, x0 = evaluation_point(cfg)
    with ctx.timed("simulate"):
        paths = simulate_forward(model, build_profile(cfg, model), time_grid(cfg), num_paths(cfg), cfg["seed"], x0,
                                 threads=threads)
    return model, paths


def cmd_simulate(cfg, ctx, threads):
    _, paths = _simulate(cfg, ctx, threads)
    paths.to_csv(ctx.path("paths.csv"))
    write_json(ctx.path("moments.json"), paths.moment_summary())
    return {"num_paths": paths.num_paths, "steps": paths.grid.steps}


def _lsmc_all_agents(cfg, ctx, threads):
    model, paths = _simulate(cfg, ctx, threads)
    g = build_generator(cfg)
    costs = build_costs(cfg, model)
    solver = cfg.get("solver", {})
    sols = []
    with ctx.timed("lsmc"):
        for j in range(model.num_agents):
            xi = costs.terminal[j](paths.states[:, -1, :])
            sols.append(solve_bsde_lsmc(paths, composite(g, costs, model, j), xi, degree=solver.get("degree", 2),
                                        ridge=solver.get("ridge", 1e-8)))
    return model, paths, sols


def cmd_solve_bsde(cfg, ctx, threads):
    method = cfg.get("solver", {}).get("method", "lsmc")
    model = build_model(cfg)
    agents = []
    if method == "lsmc":
        _, _, sols = _lsmc_all_agents(cfg, ctx, threads)
        for j, sol in enumerate(sols):
            sol.to_csv(ctx.path(f"bsde_agent{j}.csv"))
            agents.append({"agent": j, "y0": sol.y0, "stderr": sol.y0_stderr,
                           "max_condition_number": max(sol.condition_numbers) if sol.condition_numbers else 0.0})
    elif method == "tree":
        g = build_generator(cfg)
        costs = build_costs(cfg, model)
        t0, x0 = evaluation_point(cfg)
        grid = time_grid(cfg)
        depth = cfg.get("grids", {}).get("tree_depth", 200)
        scheme = cfg.get("solver", {}).get("tree_scheme", "flow")
        with ctx.timed("tree"):
            tree = TreeModel.from_model(model, build_profile(cfg, model), x0, t0, grid.T, depth)
            for j in range(model.num_agents):
                sol = solve_bsde_tree(tree, composite(g, costs, model, j), costs.terminal[j](tree.leaves[:, None]),
                                      scheme=scheme)
                agents.append({"agent": j, "y0": sol.root, "stderr": 0.0, "depth": depth, "scheme": scheme})
    else:
        vg = _solve_hjb(cfg, ctx)[0]
        t0, x0 = evaluation_point(cfg)
        for j in range(model.num_agents):
            agents.append({"agent": j, "y0": vg.value_at(j, t0, x0), "stderr": 0.0})
    out = {"method": method, "agents": agents}
    write_json(ctx.path("bsde.json"), out)
    return out


def cmd_risk_axioms(cfg, ctx, threads):
    # the battery runs on a scalar Brownian lattice, so the generator kind is rebuilt with one z coordinate
    if "generators" not in cfg:
        raise ValidationError("this subcommand needs 'generators'", "generators")
    try:
        g = GeneratorFunctional.from_config(cfg["generators"]["g"], dim=1)
    except ValidationError as exc:
        raise ValidationError(f"axiom battery needs a generator usable with scalar z: {exc}", "generators.g") from None
    ax = cfg.get("axioms", {})
    lsmc = ax.get("lsmc")
    if lsmc is not None:
        lsmc = dict(lsmc, seed=cfg["seed"] + 1)
    with ctx.timed("axioms"):
        rep = check_risk_axioms(g, depth=ax.get("depth", 10), trials=ax.get("trials", 100), seed=cfg["seed"],
                                horizon=ax.get("horizon", 1.0), lsmc=lsmc)
    out = rep.to_dict()
    write_json(ctx.path("axioms.json"), out)
    if not rep.passed:
        raise CheckFailed(f"axiom battery failed: {[a for a, r in rep.axioms.items() if r.status == 'fail']}")
    return {"passed": rep.passed, "flagged": rep.flagged}


def cmd_viability(cfg, ctx, threads):
    K = build_K(cfg)
    _, _, sols = _lsmc_all_agents(cfg, ctx, threads)
    Y = np.stack([s.Y for s in sols], axis=-1)
    rep = check_path_viability(Y, K)
    write_json(ctx.path("viability.json"), rep.to_dict())
    if not rep.viable:
        raise CheckFailed(f"Y leaves K on a fraction {1 - rep.fraction:.3g} of samples")
    return rep.to_dict()


def cmd_bsvp(cfg, ctx, threads):
    model = build_model(cfg)
    K = build_K(cfg)
    g = build_generator(cfg)
    costs = build_costs(cfg, model)
    b = cfg.get("bsvp", {})
    gens = [composite(g, costs, model, j) for j in range(model.num_agents)]
    T = time_grid(cfg).T
    with ctx.timed("bsvp"):
        rep = check_bsvp_inequality(model, gens, K, b.get("samples", 1000), seed=cfg["seed"], t_range=(0.0, T),
                                    x_box=tuple(b.get("x_box", (-1.0, 1.0))), z_scale=b.get("z_scale", 1.0))
    out = rep.to_dict()
    write_json(ctx.path("bsvp.json"), out)
    if not np.isfinite(rep.C_star):
        raise CheckFailed("no finite constant satisfies the sampled inequality")
    return out


def _solve_hjb(cfg, ctx):
    model = build_model(cfg)
    grid = build_hjb_grid(cfg)
    solver = cfg.get("solver", {})
    with ctx.timed("hjb"):
        return solve_hjb_system(model, build_costs(cfg, model), build_generator(cfg), build_profile(cfg, model), grid,
                                control_points=solver.get("control_points", 33), substep=solver.get("cfl", "auto"))


def cmd_solve_hjb(cfg, ctx, threads):
    vg, pol, diag = _solve_hjb(cfg, ctx)
    vg.to_csv(ctx.path("value.csv"))
    pol.to_csv(ctx.path("policy.csv"))
    t0, x0 = evaluation_point(cfg)
    out = {"grid": vg.metadata(), "diagnostics": diag.to_dict(),
           "risk_vector": [vg.value_at(j, t0, x0) for j in range(vg.num_agents)]}
    failed = False
    if "K" in cfg:
        rep = check_value_viability(vg, build_K(cfg))
        out["value_viability"] = rep.to_dict()
        failed = not rep.viable
    write_json(ctx.path("hjb.json"), out)
    if failed:
        raise CheckFailed("solved values leave K")
    return out


def cmd_equilibrium(cfg, ctx, threads):
    model = build_model(cfg)
    grid = build_hjb_grid(cfg)
    eq = cfg.get("equilibrium", {})
    with ctx.timed("equilibrium"):
        prof, rep = gauss_seidel_equilibrium(model, build_costs(cfg, model), build_generator(cfg),
                                             build_profile(cfg, model), grid, tol=eq.get("tol", 1e-9),
                                             max_iters=eq.get("max_iters", 20), order=eq.get("order"),
                                             control_points=cfg.get("solver", {}).get("control_points", 33))
    prof.policy.to_csv(ctx.path("policy.csv"))
    t0, x0 = evaluation_point(cfg)
    out = {"convergence": rep.to_dict(), "risk_vector": prof.risk_vector(t0, x0).tolist(),
           "risk_vector_over_t": [{"t": float(t), "risk": prof.risk_vector(float(t), x0).tolist()}
                                  for t in grid.times]}
    write_json(ctx.path("equilibrium.json"), out)
    return {"converged": rep.converged, "sweeps": rep.sweeps}


def cmd_frontier(cfg, ctx, threads):
    if "frontier" not in cfg:
        raise ValidationError("this subcommand needs 'frontier'", "frontier")
    model = build_model(cfg)
    costs = build_costs(cfg, model)
    grid = build_hjb_grid(cfg)
    eq = dict(cfg.get("equilibrium", {}))
    eq["control_points"] = cfg.get("solver", {}).get("control_points", 33)
    t0, x0 = evaluation_point(cfg)
    with ctx.timed("frontier"):
        points = allocation_frontier(model, costs.running, build_generator(cfg), build_L(cfg),
                                     cfg["frontier"]["resolution"], grid, x0, t0=t0,
                                     init_profile=build_profile(cfg, model), equilibrium=eq)
    header, rows = frontier_rows(points)
    write_csv(ctx.path("frontier.csv"), header, rows)
    write_json(ctx.path("frontier.json"), {"points": [p.to_dict() for p in points]})
    return {"points": len(points), "pareto": sum(p.pareto for p in points),
            "failed": sum(p.error is not None for p in points)}


def cmd_verify_all(cfg, ctx, threads):
    frontier = {}
    rows, timings = run_all(cfg["seed"], on_frontier=lambda pts: frontier.setdefault("points", pts))
    ctx.timings.update(timings)
    ctx.extra = {"runtime_checks": runtime_checks(timings)}
    report, text = emit_report(rows)
    write_json(ctx.path("report.json"), report)
    with open(ctx.path("report.txt"), "w") as fh:
        fh.write(text)
    if "points" in frontier:
        header, frows = frontier_rows(frontier["points"])
        write_csv(ctx.path("frontier.csv"), header, frows)
    sys.stdout.write(text)
    if report["status"] != "pass":
        raise CheckFailed(f"{report['counts']['total'] - report['counts']['passed']} acceptance checks failed")
    return report["counts"]


COMMANDS = {"simulate": cmd_simulate, "solve-bsde": cmd_solve_bsde, "risk-axioms": cmd_risk_axioms,
            "viability": cmd_viability, "bsvp": cmd_bsvp, "solve-hjb": cmd_solve_hjb,
            "equilibrium": cmd_equilibrium, "frontier": cmd_frontier, "verify-all": cmd_verify_all}


# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="riskaverse", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"riskaverse {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="experiment config (JSON); verify-all defaults to the bundled one")
        s.add_argument("--out", help="artifact directory (default: config output_dir)")
        s.add_argument("--seed", type=int, help="override the config seed")
        s.add_argument("--threads", type=int, help="worker threads for path simulation")
        s.add_argument("--verbose", action="store_true", default=None)
    return p


def _env(name):
    return os.environ.get(ENV_PREFIX + name)


def resolve_options(args):
    """Merge flags with ``RISKAVERSE_*`` environment variables (flags take precedence)."""
    opts = {
        "config": args.config or _env("CONFIG"),
        "out": args.out or _env("OUT"),
        "seed": args.seed if args.seed is not None else _env("SEED"),
        "threads": args.threads if args.threads is not None else _env("THREADS"),
        "verbose": args.verbose if args.verbose is not None else _env("VERBOSE") not in (None, "", "0"),
    }
    for key in ("seed", "threads"):
        if isinstance(opts[key], str):
            try:
                opts[key] = int(opts[key])
            except ValueError:
                raise ValidationError(f"{ENV_PREFIX}{key.upper()} must be an integer", key) from None
    return opts


def _diagnostic(code, kind, exc, **extra):
    diag = {"status": "error", "exit_code": code, "error": kind, "message": str(exc)}
    diag.update({k: v for k, v in extra.items() if v is not None})
    sys.stderr.write(json.dumps(diag, sort_keys=True, default=str) + "\n")
    return code


def run_experiment(command, opts):
    """Validate the config, run ``command`` in a staging directory and publish it atomically."""
    overrides = {"seed": opts.get("seed"), "out": opts.get("out")}
    if opts.get("config"):
        cfg = load_config(opts["config"], overrides)
    elif command == "verify-all":
        cfg = validate_config(apply_overrides(reference_config(), overrides))
    else:
        raise ValidationError("--config is required for this subcommand", "config")
    out_dir = cfg.get("output_dir", "riskaverse_out")
    threads = max(1, int(opts.get("threads") or 1))
    t_start = time.perf_counter()
    with atomic_output(out_dir) as staging:
        ctx = RunContext(staging)
        ctx.extra = {}
        # the output location is not part of the experiment
        payload_cfg = {k: v for k, v in cfg.items() if k != "output_dir"}
        with open(ctx.path("config.json"), "w") as fh:
            fh.write(dump_config(payload_cfg))
        failure = None
        try:
            summary = COMMANDS[command](cfg, ctx, threads)
        except CheckFailed as exc:
            failure, summary = exc, {"check_failed": str(exc)}
        ctx.timings["total"] = time.perf_counter() - t_start
        manifest = build_manifest(staging, config_hash(payload_cfg), __version__, command, ctx.timings, ctx.extra)
        manifest["summary"] = summary
        write_json(ctx.path("manifest.json"), manifest)
    log.info("wrote %s", out_dir)
    if failure is not None:
        raise failure
    return out_dir


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        opts = resolve_options(args)
        logging.basicConfig(level=logging.INFO if opts["verbose"] else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        run_experiment(args.command, opts)
    except ValidationError as exc:
        return _diagnostic(EXIT_VALIDATION, "validation", exc, path=exc.path)
    except NumericalError as exc:
        return _diagnostic(EXIT_NUMERICAL, "numerical", exc, details=exc.details)
    except CheckFailed as exc:
        return _diagnostic(EXIT_CHECK, "check_failed", exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
