"""Artifact emission: atomic output directories, manifests, JSON/CSV writers and reports."""

import csv
import hashlib
import json
import math
import os
import shutil
import tempfile
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
from filelock import FileLock, Timeout

from .errors import ValidationError


def jsonable(obj):
    """Recursively convert numpy scalars/arrays; non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items() if v is not None}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        if math.isnan(f):
            return "nan"
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        return f
    return obj


def prune(obj):
    """Drop ``None`` values and empty containers from dicts, recursively."""
    if isinstance(obj, dict):
        out = {}
        for k, v in obj.items():
            v = prune(v)
            if v is None or (isinstance(v, (dict, list)) and not v):
                continue
            out[k] = v
        return out
    if isinstance(obj, list):
        return [prune(v) for v in obj]
    return obj


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(jsonable(obj), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def write_csv(path, header, rows):
    """CSV with a header row; floats use shortest round-trip formatting."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class RunContext:
    """Collects timings while a subcommand writes into a staging directory."""

    def __init__(self, staging):
        self.dir = Path(staging)
        self.timings = {}

    def path(self, name):
        return self.dir / name

    @contextmanager
    def timed(self, label):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.timings[label] = self.timings.get(label, 0.0) + time.perf_counter() - start


def build_manifest(directory, cfg_hash, version, subcommand, timings, extra=None):
    directory = Path(directory)
    files = []
    for p in sorted(directory.iterdir()):
        if p.is_file() and p.name != "manifest.json":
            files.append({"name": p.name, "sha256": sha256_file(p), "bytes": p.stat().st_size})
    manifest = {"config_hash": cfg_hash, "tool_version": version, "subcommand": subcommand,
                "created_unix": time.time(), "timings_seconds": timings, "files": files}
    if extra:
        manifest.update(extra)
    return manifest


def verify_manifest(directory):
    """True iff every digest listed in ``manifest.json`` matches the file on disk."""
    directory = Path(directory)
    with open(directory / "manifest.json") as fh:
        manifest = json.load(fh)
    return all(sha256_file(directory / f["name"]) == f["sha256"] for f in manifest["files"])


@contextmanager
def atomic_output(out_dir, lock_timeout=0.0):
    """Stage artifacts in a temporary sibling directory and rename it into place on success.

    A ``<out_dir>.lock`` file prevents two runs from sharing the directory.
    On any exception the staging directory is removed and ``out_dir`` is
    left untouched.
    """
    out = Path(out_dir).resolve()
    out.parent.mkdir(parents=True, exist_ok=True)
    lock = FileLock(str(out) + ".lock")
    try:
        lock.acquire(timeout=lock_timeout)
    except Timeout:
        raise ValidationError(f"output directory {out} is locked by another run", "output_dir") from None
    staging = Path(tempfile.mkdtemp(prefix=f".{out.name}.", suffix=".tmp", dir=out.parent))
    try:
        yield staging
        if out.exists():
            old = out.with_name(f".{out.name}.old")
            if old.exists():
                shutil.rmtree(old)
            os.rename(out, old)
            os.rename(staging, out)
            shutil.rmtree(old)
        else:
            os.rename(staging, out)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    finally:
        lock.release()


# ---------------------------------------------------------------------------
# consolidated report

def check_result(name, passed, value=None, tolerance=None, details=None, criterion=None):
    """One row of a report; ``None`` fields are dropped on emission."""
    return {"name": name, "status": "pass" if passed else "fail", "value": value, "tolerance": tolerance,
            "details": details or None, "criterion": criterion}


def emit_report(results):
    """Merge check results into one JSON object and a text table.

    Failing checks come first (input order otherwise kept); the overall
    status is ``"pass"`` only if every check passed.
    """
    if not results:
        raise ValidationError("a report needs at least one result", "results")
    ordered = [r for r in results if r["status"] != "pass"] + [r for r in results if r["status"] == "pass"]
    n_pass = sum(r["status"] == "pass" for r in results)
    report = prune({
        "status": "pass" if n_pass == len(results) else "fail",
        "counts": {"passed": n_pass, "total": len(results)},
        "checks": [jsonable(r) for r in ordered],
    })
    width = max(len(r["name"]) for r in ordered)
    lines = [f"overall: {report['status']} ({n_pass}/{len(results)} passed)", ""]
    lines.append(f"{'check':<{width}}  status  value                    tolerance")
    for r in report["checks"]:
        val = _fmt(r.get("value"))
        tol = _fmt(r.get("tolerance"))
        lines.append(f"{r['name']:<{width}}  {r['status']:<6}  {val:<24} {tol}")
    return report, "\n".join(lines) + "\n"


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)
