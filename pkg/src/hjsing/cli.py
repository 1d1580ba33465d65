"""Scenario runner: ``hjsing <task> --config <path> [--out DIR] [--seed N] [--threads K]``.

Config files are TOML with four tables besides the optional top-level
``task`` and ``seed`` keys::

    task = "trace"
    seed = 0

    [model]                 # id plus model parameters
    id = "mechanical(eikonal)"
    dim = 2

    [field]                 # fixture id plus fixture parameters
    fixture = "two_source_eikonal"
    a = [-1.0, 0.0]
    b = [1.0, 0.0]

    [options]               # task-specific keys, see TASK_OPTIONS
    x0 = [0.0, 1.0]
    horizon = 2.0

    [output]
    dir = "out/trace"

Unknown keys anywhere are errors.  Exit codes: 0 success, 2 certified
failure (failed probe, certificate or energy fit), 1 solver or config error.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

logger = logging.getLogger("hjsing")

TASKS = ("fundamental", "probe", "supconv", "classify", "trace", "weakkam", "certify")

TOP_KEYS = {"task", "seed", "model", "field", "options", "output"}
MODEL_KEYS = {"id", "dim", "omega", "box_radius", "potential", "amplitude", "beta"}
FIELD_KEYS = {"fixture", "a", "b", "box_lo", "box_hi", "path", "periodic"}
OUTPUT_KEYS = {"dir"}
TASK_OPTIONS = {
    "fundamental": {"x", "y", "t", "starts"},
    "probe": {"x", "t", "lambda", "samples", "kind", "cap", "solver"},
    "supconv": {"x", "points", "t", "mode"},
    "classify": {"x", "points", "t_probe", "radius", "samples"},
    "trace": {"x0", "horizon", "max_segment", "fractions", "tol", "c1_cap", "radius", "samples"},
    "weakkam": {"resolution", "t_step", "tol", "max_iter"},
    "certify": {"x0", "horizon", "max_segment", "arc_path", "tol", "c1_cap", "radius", "samples"},
}
NEEDS_FIELD = {"supconv", "classify", "trace", "certify"}


@dataclass
class ScenarioConfig:
    """Validated scenario."""

    task: str
    seed: int
    model: dict
    field: dict | None
    options: dict
    output_dir: Path
    source: Path | None = None
    source_hash: str = ""
    threads: int | None = None
    raw: dict = field(default_factory=dict, repr=False)


class CertifiedFailure(Exception):
    """The run completed but its verdict is negative."""


# ---------------------------------------------------------------------------
# Config validation


def _config_error(path: str, message: str):
    from .errors import ConfigError

    return ConfigError(path, message)


def _check_keys(table: dict, allowed: set[str], prefix: str) -> None:
    for key in table:
        if key not in allowed:
            raise _config_error(f"{prefix}{key}", f"unknown key (allowed: {', '.join(sorted(allowed))})")


def _table(raw: dict, name: str, required: bool) -> dict | None:
    if name not in raw:
        if required:
            raise _config_error(name, "missing table")
        return None
    if not isinstance(raw[name], dict):
        raise _config_error(name, "must be a table")
    return dict(raw[name])


def validate_config(raw: dict, task: str | None = None, out: str | None = None, seed: int | None = None, source: Path | None = None, source_hash: str = "") -> ScenarioConfig:
    """Check keys and basic types; resolve CLI overrides.

    Raises:
        ConfigError: with the dotted path of the offending field.
    """
    _check_keys(raw, TOP_KEYS, "")
    cfg_task = raw.get("task")
    if task is None:
        task = cfg_task
    elif cfg_task is not None and cfg_task != task:
        raise _config_error("task", f"config says {cfg_task!r} but the command line says {task!r}")
    if task not in TASKS:
        raise _config_error("task", f"must be one of {', '.join(TASKS)}")
    model = _table(raw, "model", True)
    _check_keys(model, MODEL_KEYS, "model.")
    if "id" not in model or not isinstance(model["id"], str):
        raise _config_error("model.id", "missing or not a string")
    fld = _table(raw, "field", task in NEEDS_FIELD)
    if fld is not None:
        _check_keys(fld, FIELD_KEYS, "field.")
        if "fixture" not in fld:
            raise _config_error("field.fixture", "missing")
    opts = _table(raw, "options", False) or {}
    _check_keys(opts, TASK_OPTIONS[task], "options.")
    for key in ("t", "tol", "horizon", "t_step", "t_probe", "max_segment", "lambda", "radius", "c1_cap", "cap"):
        if key in opts:
            val = opts[key]
            if not isinstance(val, (int, float)) or isinstance(val, bool) or not val > 0:
                raise _config_error(f"options.{key}", "must be a positive number")
    for key in ("samples", "resolution", "max_iter", "starts"):
        if key in opts:
            val = opts[key]
            if not isinstance(val, int) or isinstance(val, bool) or val <= 0:
                raise _config_error(f"options.{key}", "must be a positive integer")
    output = _table(raw, "output", False) or {}
    _check_keys(output, OUTPUT_KEYS, "output.")
    out_dir = Path(out) if out is not None else Path(output.get("dir", "out"))
    cfg_seed = raw.get("seed", 0)
    if not isinstance(cfg_seed, int) or isinstance(cfg_seed, bool) or cfg_seed < 0:
        raise _config_error("seed", "must be a nonnegative integer")
    return ScenarioConfig(
        task=task,
        seed=int(seed if seed is not None else cfg_seed),
        model=model,
        field=fld,
        options=opts,
        output_dir=out_dir,
        source=source,
        source_hash=source_hash,
        raw=raw,
    )


def load_config(path: str | Path, task: str | None = None, out: str | None = None, seed: int | None = None) -> ScenarioConfig:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise _config_error("<file>", f"cannot read {path}: {exc}") from exc
    try:
        raw = tomllib.loads(data.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise _config_error("<file>", f"invalid TOML: {exc}") from exc
    return validate_config(raw, task, out, seed, path, hashlib.sha256(data).hexdigest())


# ---------------------------------------------------------------------------
# Builders


def _build_model(cfg: ScenarioConfig):
    from .models import get_model

    params = {k: v for k, v in cfg.model.items() if k != "id"}
    try:
        return get_model(cfg.model["id"], **params)
    except (KeyError, ValueError, TypeError) as exc:
        raise _config_error("model.id", str(exc)) from exc


def _build_field(cfg: ScenarioConfig):
    from .errors import UnknownFixture
    from .fields import fixture_field

    if cfg.field is None:
        raise _config_error("field", "missing table")
    params = {k: v for k, v in cfg.field.items() if k != "fixture"}
    if "path" in params and cfg.source is not None and not Path(params["path"]).is_absolute():
        params["path"] = str(cfg.source.parent / params["path"])
    try:
        return fixture_field(cfg.field["fixture"], **params)
    except UnknownFixture as exc:
        raise _config_error("field.fixture", str(exc)) from exc


def _vec(cfg: ScenarioConfig, key: str, dim: int, default=None):
    import numpy as np

    if key not in cfg.options:
        if default is None:
            raise _config_error(f"options.{key}", "missing")
        return np.asarray(default, dtype=float)
    val = cfg.options[key]
    arr = np.atleast_1d(np.asarray(val, dtype=float))
    if arr.shape != (dim,):
        raise _config_error(f"options.{key}", f"expected a vector of length {dim}")
    return arr


def _points(cfg: ScenarioConfig, dim: int):
    import numpy as np

    if "points" in cfg.options:
        pts = np.asarray(cfg.options["points"], dtype=float)
        if pts.ndim != 2 or pts.shape[1] != dim:
            raise _config_error("options.points", f"expected a list of {dim}-vectors")
        return pts
    return _vec(cfg, "x", dim)[None, :]


def _num(cfg: ScenarioConfig, key: str, default=None):
    if key in cfg.options:
        return cfg.options[key]
    if default is None:
        raise _config_error(f"options.{key}", "missing")
    return default


# ---------------------------------------------------------------------------
# Tasks


def _task_fundamental(cfg, model, out, files, report):
    from .action import ActionOptions, fundamental_solution
    from .export import write_csv

    n = model.dim
    x, y = _vec(cfg, "x", n), _vec(cfg, "y", n)
    t = float(_num(cfg, "t"))
    opts = ActionOptions(starts=int(_num(cfg, "starts", 5)), seed=cfg.seed)
    fs = fundamental_solution(model, x, y, t, opts)
    report.update(
        value=fs.value, grad_y=fs.grad_y, grad_x=fs.grad_x, dt=fs.dt, energy=fs.energy,
        hess_yy=fs.hess_yy, hess_xx=fs.hess_xx, multiplicity_hint=fs.multiplicity_hint,
        max_speed=fs.minimizer.max_speed, energy_variation=fs.minimizer.energy_variation,
    )
    files.append(write_csv(out / "trajectory.csv", fs.minimizer.csv_header(), fs.minimizer.to_rows()))


def _task_probe(cfg, model, out, files, report):
    from .action import ActionOptions, probe_convexity, probe_semiconcavity, regularity_band
    from .export import write_json

    n = model.dim
    x = _vec(cfg, "x", n, [0.0] * n)
    t = float(_num(cfg, "t"))
    lam = float(_num(cfg, "lambda", 1.0))
    samples = int(_num(cfg, "samples", 64))
    kind = _num(cfg, "kind", "convexity")
    solver = _num(cfg, "solver", "full")
    opts = ActionOptions(seed=cfg.seed)
    if kind == "convexity":
        rep = probe_convexity(model, x, t, lam, samples, seed=cfg.seed, solver=solver, opts=opts)
    elif kind == "semiconcavity":
        rep = probe_semiconcavity(model, x, t, lam, samples, cap=float(_num(cfg, "cap", 1e6)), seed=cfg.seed, solver=solver, opts=opts)
    elif kind == "regularity":
        ratios = regularity_band(model, x, t, lam, opts=opts)
        files.append(write_json(out / "probe.json", ratios.to_dict()))
        report.update(verdict=ratios.verdict, kind=kind)
        if not ratios.verdict:
            raise CertifiedFailure("regularity ratios left their band")
        return
    else:
        raise _config_error("options.kind", "must be convexity, semiconcavity or regularity")
    files.append(write_json(out / "probe.json", rep.to_dict()))
    report.update(kind=kind, constant_estimate=rep.constant_estimate, verdict=rep.verdict, flagged=rep.flagged)
    if not rep.verdict:
        raise CertifiedFailure(f"{kind} probe failed")


def _task_supconv(cfg, model, out, files, report):
    from .export import write_csv
    from .lax_oleinik import ConvolutionOptions, inf_convolution, intrinsic_step, sup_convolution

    u = _build_field(cfg)
    pts = _points(cfg, model.dim)
    t = float(_num(cfg, "t"))
    mode = _num(cfg, "mode", "sup")
    ops = {"sup": sup_convolution, "inf": inf_convolution, "intrinsic": intrinsic_step}
    if mode not in ops:
        raise _config_error("options.mode", "must be sup, inf or intrinsic")
    copts = ConvolutionOptions()
    rows, flags = [], 0
    n = model.dim
    for x in pts:
        r = ops[mode](u, model, x, t, copts)
        flags += int(r.boundary_flag)
        rows.append([*x.tolist(), r.value, *r.y.tolist(), r.boundary_flag, r.concavity_ok, r.radius])
    header = [f"x{i + 1}" for i in range(n)] + ["value"] + [f"y{i + 1}" for i in range(n)] + ["boundary_flag", "concavity_ok", "radius"]
    files.append(write_csv(out / "convolution.csv", header, rows))
    report.update(mode=mode, points=len(pts), boundary_flags=flags)


def _task_classify(cfg, model, out, files, report):
    from .export import write_json
    from .lax_oleinik import step_time
    from .singularity import classify_point, reachable_gradients

    u = _build_field(cfg)
    pts = _points(cfg, model.dim)
    records = []
    for x in pts:
        t_probe = float(cfg.options["t_probe"]) if "t_probe" in cfg.options else step_time(u, model, x)
        est = reachable_gradients(u, x, cfg.options.get("radius"), int(_num(cfg, "samples", 96)), seed=cfg.seed)
        records.append(classify_point(u, model, x, t_probe, est=est).to_dict())
    files.append(write_json(out / "classification.json", {"points": records}))
    report.update(points=len(records), singular=sum(r["singular"] for r in records))


def _trace(cfg, model, u):
    from .propagation import TraceOptions, trace_arc
    from .weak_kam import trace_arc_torus

    n = model.dim
    x0 = _vec(cfg, "x0", n)
    horizon = float(_num(cfg, "horizon"))
    kw = {"seed": cfg.seed}
    if "max_segment" in cfg.options:
        kw["max_segment"] = float(cfg.options["max_segment"])
    if "fractions" in cfg.options:
        kw["fractions"] = tuple(float(f) for f in cfg.options["fractions"])
    if "radius" in cfg.options:
        kw["gradient_radius"] = float(cfg.options["radius"])
    if "samples" in cfg.options:
        kw["gradient_samples"] = int(cfg.options["samples"])
    opts = TraceOptions(**kw)
    if u.periodic:
        return trace_arc_torus(u, model, x0, horizon, opts)
    return trace_arc(u, model, x0, horizon, opts)


def _certify_and_monitor(cfg, model, u, arc, out, files, report):
    from .export import write_json
    from .propagation import certify_inclusion, energy_monitor

    tol = float(_num(cfg, "tol", 2e-2))
    cert = certify_inclusion(arc, u, model, tol=tol, seed=cfg.seed)
    files.append(write_json(out / "certificate.json", cert.to_dict()))
    verdicts = {"inclusion": cert.passed}
    report.update(max_residual=cert.max_residual, certificate=("pass" if cert.passed else "fail"))
    if arc.segment_index is not None and len(set(arc.segment_index.tolist())) > 1:
        energy = energy_monitor(arc, u, model, c1_cap=float(_num(cfg, "c1_cap", 10.0)), seed=cfg.seed)
        files.append(write_json(out / "energy.json", energy.to_dict()))
        verdicts["energy"] = energy.feasible
        report.update(energy_fit=("feasible" if energy.feasible else "infeasible"), required_C1=energy.required_c1)
    failed = [k for k, v in verdicts.items() if not v]
    if failed:
        raise CertifiedFailure(f"failed checks: {', '.join(failed)}")


def _write_arc(arc, out, files):
    from .export import write_csv

    files.append(write_csv(out / "arc.csv", arc.csv_header(), arc.to_rows()))


def _task_trace(cfg, model, out, files, report):
    u = _build_field(cfg)
    arc = _trace(cfg, model, u)
    _write_arc(arc, out, files)
    report.update(points=len(arc.times), stopped_reason=arc.stopped_reason, c_arc=arc.c_arc, all_singular=bool(arc.singular_flags.all()))
    _certify_and_monitor(cfg, model, u, arc, out, files, report)


def _load_arc(path: Path, dim: int):
    import numpy as np

    from .errors import GridLoadError
    from .propagation import arc_from_points

    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise GridLoadError(f"cannot read arc {path}: {exc}") from exc
    return arc_from_points(data[:, 0], data[:, 1 : 1 + dim])


def _task_certify(cfg, model, out, files, report):
    u = _build_field(cfg)
    if "arc_path" in cfg.options:
        p = Path(cfg.options["arc_path"])
        if cfg.source is not None and not p.is_absolute():
            p = cfg.source.parent / p
        arc = _load_arc(p, model.dim)
    else:
        arc = _trace(cfg, model, u)
        _write_arc(arc, out, files)
    report.update(points=len(arc.times))
    _certify_and_monitor(cfg, model, u, arc, out, files, report)


def _task_weakkam(cfg, model, out, files, report):
    from .export import write_csv
    from .weak_kam import weak_kam_solve

    res = weak_kam_solve(
        model,
        int(_num(cfg, "resolution", 128)),
        t_step=cfg.options.get("t_step"),
        tol=float(_num(cfg, "tol", 1e-10)),
        max_iter=int(_num(cfg, "max_iter", 20000)),
    )
    files.append(write_csv(out / "grid.csv", res.u.csv_header(), res.u.to_rows()))
    report.update(res.to_dict())


TASK_RUNNERS = {
    "fundamental": _task_fundamental,
    "probe": _task_probe,
    "supconv": _task_supconv,
    "classify": _task_classify,
    "trace": _task_trace,
    "weakkam": _task_weakkam,
    "certify": _task_certify,
}


# ---------------------------------------------------------------------------
# Runner


@dataclass
class ExitReport:
    exit_code: int
    status: str
    report: dict
    files: list[Path]
    manifest: Path | None


def _versions() -> dict[str, str]:
    import numpy
    import scipy

    from . import __version__

    return {"hjsing": __version__, "numpy": numpy.__version__, "scipy": scipy.__version__, "python": platform.python_version()}


def run_scenario(cfg: ScenarioConfig) -> ExitReport:
    """Run one scenario and write its outputs and manifest.

    The report and manifest are written even on failure; solver errors are
    serialized into the report.
    """
    from .errors import ConfigError, HJSingError
    from .export import sha256_file, write_json

    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    files: list[Path] = []
    report: dict[str, Any] = {"task": cfg.task, "seed": cfg.seed}
    try:
        model = _build_model(cfg)
        TASK_RUNNERS[cfg.task](cfg, model, out, files, report)
        code, status = 0, "success"
    except CertifiedFailure as exc:
        code, status = 2, "certified-failure"
        report["failure"] = str(exc)
    except ConfigError:
        raise
    except HJSingError as exc:
        code, status = 1, "solver-error"
        report["error"] = {"type": type(exc).__name__, "message": str(exc)}
        logger.error("%s: %s", type(exc).__name__, exc)
    report["status"] = status
    report["exit_code"] = code
    files.append(write_json(out / "report.json", report))
    manifest = {
        "task": cfg.task,
        "seed": cfg.seed,
        "threads": cfg.threads,
        "config": {"path": str(cfg.source) if cfg.source else None, "sha256": cfg.source_hash},
        "versions": _versions(),
        "files": [{"path": f.name, "sha256": sha256_file(f)} for f in files],
        "exit_code": code,
    }
    mpath = write_json(out / "manifest.json", manifest)
    return ExitReport(code, status, report, files, mpath)


def _set_threads(k: int | None) -> None:
    if k is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(k)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hjsing", description="Singular characteristics of Hamilton-Jacobi equations.")
    sub = parser.add_subparsers(dest="command", required=True)
    for task in TASKS:
        p = sub.add_parser(task, help=f"run a {task} scenario")
        p.add_argument("--config", required=True, help="TOML scenario file")
        p.add_argument("--out", default=None, help="output directory (overrides output.dir)")
        p.add_argument("--seed", type=int, default=None, help="RNG seed (overrides seed)")
        p.add_argument("--threads", type=int, default=None, help="cap on BLAS worker threads")
        p.add_argument("-v", "--verbose", action="store_true")
    sub.add_parser("list-models", help="print the model registry")
    sub.add_parser("list-fixtures", help="print the fixture registry")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list-models":
        from .models import list_models

        for k, v in list_models().items():
            print(f"{k}\t{v}")
        return 0
    if args.command == "list-fixtures":
        from .fields import list_fixtures

        for k, v in list_fixtures().items():
            print(f"{k}\t{v}")
        return 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    _set_threads(args.threads)
    from .errors import ConfigError

    try:
        cfg = load_config(args.config, args.command, args.out, args.seed)
        cfg.threads = args.threads
        result = run_scenario(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    print(f"{result.status}: {cfg.task} -> {result.manifest}")
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
