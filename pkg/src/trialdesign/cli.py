"""Batch front end: ``trialdesign-opt <mode> --config PATH [--seed S] [--workers W] [--out DIR]``.

A run configuration is one JSON document with a versioned ``schema`` field.
Results are written as CSV tables (numbers with 17 significant digits) plus a
``result.json`` summary. Exit status is 0 on success, 1 for invalid input and
2 for numerical failures.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from . import _kernels
from .errors import TrialDesignError, ValidationError
from .model import (SCENARIOS, AlphaVector, NestedDesign, Scenario, SizingParams, build_prior,
                    information_units)
from .optimize import optimize_alpha
from .power import (GridConfig, McConfig, power_convolution, power_fine_grid, power_grid_sum,
                    power_monte_carlo)
from .sweep import RGrid, compare_methods, sweep
from .tps import TpsSurface

CONFIG_SCHEMA_ID = "trialdesign.run/1"
RESULT_SCHEMA_ID = "trialdesign.result/1"
MODES = ("optimize", "compare", "sweep", "power")
POWER_METHODS = ("monte-carlo", "grid", "fine-grid", "closed-form")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2

_NUM = {"type": "number"}
_POS_INT = {"type": "integer", "minimum": 1}
_FRACTIONS = {"type": "array", "items": _NUM, "minItems": 1}

_ENGINE_FIELDS = {
    "power": {"method": {"enum": list(POWER_METHODS)}, "n1": _POS_INT, "n2": _POS_INT,
              "m": _POS_INT, "seed": {"type": "integer", "minimum": 0}, "workers": _POS_INT},
    "optimize": {"n1": _POS_INT, "n2": _POS_INT, "n3": _POS_INT, "grid_m": _POS_INT,
                 "seed": {"type": "integer", "minimum": 0}, "workers": _POS_INT},
    "compare": {"n1": _POS_INT, "n2": _POS_INT, "n3": _POS_INT, "grid_m": _POS_INT,
                "m": _POS_INT, "seed": {"type": "integer", "minimum": 0}, "workers": _POS_INT},
    "sweep": {"n1": _POS_INT, "n2": _POS_INT, "n3": _POS_INT, "grid_m": _POS_INT,
              "seed": {"type": "integer", "minimum": 0}, "workers": _POS_INT},
}


def config_schema(mode: str) -> dict:
    """JSON schema accepting exactly the fields allowed for ``mode``."""
    if mode == "sweep":
        design = {"type": "object", "additionalProperties": False, "required": ["n"],
                  "properties": {"n": {"type": "integer", "minimum": 2, "maximum": 8},
                                 "step": _NUM, "alpha0": _NUM}}
    elif mode == "compare":
        design = {"type": "object", "additionalProperties": False, "required": ["r"],
                  "properties": {"r": {"type": "array", "minItems": 1,
                                       "items": {"anyOf": [_NUM, _FRACTIONS]}},
                                 "alpha0": _NUM}}
    else:
        design = {"type": "object", "additionalProperties": False, "required": ["r"],
                  "properties": {"r": _FRACTIONS, "alpha0": _NUM}}
    scenario = {"anyOf": [
        {"enum": sorted(SCENARIOS)},
        {"type": "object", "additionalProperties": False, "required": ["kind", "intercept"],
         "properties": {"kind": {"type": "string"}, "intercept": _NUM, "slope": _NUM}}]}
    props = {
        "schema": {"const": CONFIG_SCHEMA_ID},
        "mode": {"const": mode},
        "design": design,
        "scenario": scenario,
        "engine": {"type": "object", "additionalProperties": False,
                   "properties": _ENGINE_FIELDS[mode]},
        "output": {"type": "object", "additionalProperties": False,
                   "properties": {"dir": {"type": "string"}}},
    }
    if mode != "sweep":
        props["sizing"] = {"type": "object", "additionalProperties": False,
                           "properties": {"alpha": _NUM, "beta": _NUM, "delta": _NUM}}
        props["i3"] = {"type": "number", "exclusiveMinimum": 0}
    if mode == "power":
        props["alpha"] = _FRACTIONS
    required = ["schema", "design", "scenario"] + (["alpha"] if mode == "power" else [])
    return {"type": "object", "additionalProperties": False, "required": required,
            "properties": props}


@dataclass
class RunConfig:
    """A validated run configuration."""

    mode: str
    scenario: Scenario
    designs: list = field(default_factory=list)
    rgrid: RGrid | None = None
    alpha0: float = 0.025
    alpha: AlphaVector | None = None
    method: str = "monte-carlo"
    mc: McConfig = McConfig()
    grid: GridConfig = GridConfig()
    n3: int = 2000
    grid_m: int = 50
    seed: int = 0
    workers: int | None = None
    out_dir: Path = Path(".")
    raw: dict = field(default_factory=dict, repr=False)


def _scenario(spec) -> Scenario:
    if isinstance(spec, str):
        return SCENARIOS[spec]
    return Scenario(spec["kind"], float(spec["intercept"]), float(spec.get("slope", 0.0)))


def _check_writable(path: Path):
    probe = path
    while not probe.exists():
        if probe.parent == probe:
            break
        probe = probe.parent
    if not (probe.is_dir() and os.access(probe, os.W_OK)):
        raise ValidationError(f"output directory {path} is not writable")


def parse_config(raw: dict, mode: str | None = None, *, seed: int | None = None,
                 workers: int | None = None, out_dir=None) -> RunConfig:
    """Validate a configuration document and build the domain objects it describes."""
    if not isinstance(raw, dict):
        raise ValidationError("config must be a JSON object")
    mode = mode or raw.get("mode")
    if mode not in MODES:
        raise ValidationError(f"mode must be one of {', '.join(MODES)}")
    if raw.get("mode", mode) != mode:
        raise ValidationError(f"config mode {raw.get('mode')!r} does not match requested {mode!r}")
    try:
        jsonschema.validate(raw, config_schema(mode))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ValidationError(f"config field {where}: {exc.message}") from None

    scenario = _scenario(raw["scenario"])
    design_spec = raw["design"]
    alpha0 = float(design_spec.get("alpha0", 0.025))
    engine = dict(raw.get("engine", {}))
    if seed is not None:
        engine["seed"] = seed
    env = os.environ.get(_kernels.WORKERS_ENV)
    if workers is None and env:
        workers = int(env)
    workers = workers if workers is not None else engine.get("workers")

    if "i3" in raw:
        i3 = float(raw["i3"])
    else:
        s = raw.get("sizing", {})
        i3 = information_units(SizingParams(s.get("alpha", 0.025), s.get("beta", 0.1),
                                            s.get("delta", scenario.entire_population_delta)))

    cfg = RunConfig(mode=mode, scenario=scenario, alpha0=alpha0,
                    mc=McConfig(engine.get("n1", 10240), engine.get("n2", 20480),
                                engine.get("seed", 0)),
                    grid=GridConfig(m=engine.get("m", 50)),
                    n3=engine.get("n3", 2000), grid_m=engine.get("grid_m", 50),
                    seed=engine.get("seed", 0), workers=workers,
                    method=engine.get("method", "monte-carlo"), raw=raw)
    if mode == "sweep":
        cfg.rgrid = RGrid(step=float(design_spec.get("step", 0.05)), n=design_spec["n"])
    else:
        rs = design_spec["r"]
        if mode == "compare" and isinstance(rs[0], list):
            cfg.designs = [NestedDesign(r, i3, alpha0) for r in rs]
        else:
            cfg.designs = [NestedDesign(rs, i3, alpha0)]
    if mode == "power":
        cfg.alpha = AlphaVector(raw["alpha"])
        if cfg.alpha.n != cfg.designs[0].n:
            raise ValidationError("alpha must have one level per population")
        cfg.alpha.check_budget(alpha0)
    out = out_dir if out_dir is not None else raw.get("output", {}).get("dir", ".")
    cfg.out_dir = Path(out)
    _check_writable(cfg.out_dir)
    return cfg


def load_config(path, mode: str | None = None, **overrides) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ValidationError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config is not valid JSON: {exc}") from None
    return parse_config(raw, mode, **overrides)


# --------------------------------------------------------------------------
# writers

def fmt(x) -> str:
    """17 significant digits, enough to round-trip a double."""
    return format(float(x), ".17g")


def result_columns(n: int) -> list[str]:
    return ([f"r{i}" for i in range(2, n + 1)] + [f"alpha{i}" for i in range(1, n + 1)]
            + ["power", "method", "seconds"])


def _result_row(r, alpha, power, method, seconds) -> list[str]:
    n = len(r)
    alpha_cells = [fmt(a) for a in alpha] if alpha is not None else [""] * n
    return [fmt(v) for v in r[1:]] + alpha_cells + [fmt(power), method, fmt(seconds)]


def write_results_csv(path, n: int, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(result_columns(n))
        w.writerows(rows)
    return path


def read_results_csv(path) -> list[dict]:
    """Parse a results table and check it against the column contract."""
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n = sum(1 for h in header if h.startswith("alpha"))
        if header != result_columns(n):
            raise ValidationError(f"unexpected results header {header}")
        out = []
        for row in reader:
            if len(row) != len(header):
                raise ValidationError("ragged results row")
            rec = dict(zip(header, row))
            for key in header:
                if key == "method":
                    continue
                rec[key] = float(rec[key]) if rec[key] != "" else None
            if rec["power"] is not None and np.isfinite(rec["power"]) and not 0 <= rec["power"] <= 1:
                raise ValidationError("power outside [0, 1]")
            out.append(rec)
    return out


def emit_surface(surface: TpsSurface, density: int, path, *, names=None, lower=None,
                 upper=None) -> Path:
    """Evaluate ``surface`` on a ``density**d`` lattice over the knots' box and write a CSV."""
    if density < 2:
        raise ValidationError("density must be at least 2")
    d = surface.dim
    lower = surface.knots.min(axis=0) if lower is None else np.asarray(lower, dtype=float)
    upper = surface.knots.max(axis=0) if upper is None else np.asarray(upper, dtype=float)
    names = list(names) if names is not None else [f"x{i + 1}" for i in range(d)]
    if len(names) != d:
        raise ValidationError("one name per surface coordinate")
    axes = [np.linspace(lower[i], upper[i], density) for i in range(d)]
    pts = np.stack([a.ravel() for a in np.meshgrid(*axes, indexing="ij")], axis=1)
    values = np.concatenate([surface(pts[s:s + 4096]) for s in range(0, pts.shape[0], 4096)])
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names + ["value"])
        for p, v in zip(pts, values):
            w.writerow([fmt(c) for c in p] + [fmt(v)])
    return path


RESULT_SCHEMA = {
    "type": "object",
    "required": ["schema", "mode", "timestamp", "power", "files"],
    "properties": {
        "schema": {"const": RESULT_SCHEMA_ID},
        "mode": {"enum": list(MODES)},
        "timestamp": {"type": "string"},
        "power": {"type": "number", "minimum": 0, "maximum": 1},
        "alpha": {"type": "array", "items": {"type": "number"}},
        "r": {"type": "array", "items": {"type": "number"}},
        "files": {"type": "array", "items": {"type": "string"}},
    },
}


def _write_json(path, payload) -> Path:
    path = Path(path)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def read_result_json(path) -> dict:
    data = json.loads(Path(path).read_text())
    try:
        jsonschema.validate(data, RESULT_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ValidationError(f"result file: {exc.message}") from None
    return data


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


# --------------------------------------------------------------------------
# modes

def _run_power(cfg: RunConfig):
    design = cfg.designs[0]
    prior = build_prior(design, cfg.scenario)
    t0 = time.perf_counter()
    if cfg.method == "monte-carlo":
        est = power_monte_carlo(design, prior, cfg.alpha, cfg.mc)
    elif cfg.method == "grid":
        est = power_grid_sum(design, prior, cfg.alpha, cfg.grid)
    elif cfg.method == "fine-grid":
        est = power_fine_grid(design, prior, cfg.alpha)
    else:
        est = power_convolution(design, prior, cfg.alpha)
    secs = time.perf_counter() - t0
    path = write_results_csv(cfg.out_dir / "results.csv", design.n,
                             [_result_row(design.r, cfg.alpha.alpha, est.value, est.method, secs)])
    return {"power": est.value, "alpha": cfg.alpha.alpha.tolist(), "r": design.r.tolist(),
            "method": est.method, "variance_bound": est.variance_bound, "i3": design.i3,
            "files": [path.name]}


def _run_optimize(cfg: RunConfig):
    design = cfg.designs[0]
    res = optimize_alpha(design, build_prior(design, cfg.scenario), cfg.n3, cfg.grid_m, cfg.mc,
                         cfg.seed)
    files = [write_results_csv(cfg.out_dir / "results.csv", design.n,
                               [_result_row(design.r, res.alpha.alpha, res.power.value,
                                            res.method, res.seconds)]).name]
    if res.surface is not None and res.surface.dim <= 3:
        names = [f"alpha{i}" for i in range(1, design.n)]
        files.append(emit_surface(res.surface, 50, cfg.out_dir / "surface.csv", names=names).name)
    return {"power": res.power.value, "alpha": res.alpha.alpha.tolist(), "r": design.r.tolist(),
            "method": res.method, "surface_value": res.surface_value,
            "projected": res.projected, "flagged": res.flagged, "i3": design.i3, "files": files}


def _run_compare(cfg: RunConfig):
    n = cfg.designs[0].n
    if any(d.n != n for d in cfg.designs):
        raise ValidationError("all compared designs must have the same number of populations")
    problems = [(d, build_prior(d, cfg.scenario)) for d in cfg.designs]
    stats = compare_methods(problems, cfg.mc, cfg.grid, cfg.n3, cfg.grid_m, cfg.seed)
    header = ([f"r{i}" for i in range(2, n + 1)] + [f"alpha_s{i}" for i in range(1, n + 1)]
              + [f"alpha_n{i}" for i in range(1, n + 1)] + [f"R{i}" for i in range(1, n + 1)]
              + ["P_s", "P_n", "P_f_s", "P_f_n", "Q", "seconds_s", "seconds_n"])
    path = cfg.out_dir / "comparisons.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for s in stats:
            w.writerow([fmt(v) for v in (*s.r, *s.alpha_s, *s.alpha_n, *s.R, s.P_s, s.P_n,
                                         s.P_f_s, s.P_f_n, s.Q, s.seconds_s, s.seconds_n)])
    best = max(stats, key=lambda s: s.P_n)
    return {"power": best.P_n, "alpha": best.alpha_n.tolist(), "r": [1.0, *best.r],
            "Q": [s.Q for s in stats], "files": [path.name]}


def _run_sweep(cfg: RunConfig):
    res = sweep(cfg.scenario, cfg.rgrid, cfg.mc, cfg.n3, cfg.grid_m, cfg.seed, alpha0=cfg.alpha0)
    n = cfg.rgrid.n
    rows = [_result_row((1.0, *row.r), row.alpha, row.power, row.method, row.seconds)
            for row in res.rows]
    files = [write_results_csv(cfg.out_dir / "results.csv", n, rows).name]
    names = [f"r{i}" for i in range(2, n + 1)]
    files.append(emit_surface(res.surface, 50, cfg.out_dir / "surface.csv", names=names).name)
    # the optimum may have fewer populations if boundary subpopulations were dropped
    r_opt = list(res.r_opt) + [0.0] * (n - len(res.r_opt))
    alpha_opt = list(res.alpha_at_r_opt.alpha) + [0.0] * (n - res.alpha_at_r_opt.n)
    files.append(write_results_csv(cfg.out_dir / "optimum.csv", n,
                                   [_result_row(r_opt, alpha_opt, res.power_at_r_opt,
                                                "monte-carlo", 0.0)]).name)
    return {"power": res.power_at_r_opt, "alpha": list(res.alpha_at_r_opt.alpha),
            "r": list(res.r_opt), "surface_value": res.surface_value_at_r_opt,
            "boundary": res.boundary, "dropped": res.dropped,
            "failed_points": sum(1 for row in res.rows if row.error), "files": files}


_RUNNERS = {"power": _run_power, "optimize": _run_optimize, "compare": _run_compare,
            "sweep": _run_sweep}


def _vec(v) -> str:
    return "(" + ", ".join(f"{x:.5g}" for x in v) + ")"


def run(config: RunConfig) -> int:
    """Execute one configured run, write its files and print a one-line summary."""
    t0 = time.perf_counter()
    try:
        _kernels.set_workers(config.workers)
        config.out_dir.mkdir(parents=True, exist_ok=True)
        summary = _RUNNERS[config.mode](config)
    except ValidationError as exc:
        print(f"error [{exc.stage}]: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (TrialDesignError, FloatingPointError, np.linalg.LinAlgError) as exc:
        stage = getattr(exc, "stage", "compute")
        print(f"error [{stage}]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    wall = time.perf_counter() - t0
    payload = {"schema": RESULT_SCHEMA_ID, "mode": config.mode, "timestamp": _now(),
               "seed": config.seed, **summary}
    payload["files"] = summary["files"] + ["result.json"]
    _write_json(config.out_dir / "result.json", payload)
    r_part = f" r={_vec(summary['r'])}" if len(summary.get("r", [])) > 1 else ""
    print(f"{config.mode}:{r_part} alpha={_vec(summary['alpha'])} "
          f"power={summary['power']:.6f} wall={wall:.2f}s")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="trialdesign-opt", description=__doc__.splitlines()[0])
    parser.add_argument("mode", choices=MODES)
    parser.add_argument("--config", required=True, help="path to a JSON run configuration")
    parser.add_argument("--seed", type=int, default=None, help="override the engine seed")
    parser.add_argument("--workers", type=int, default=None,
                        help=f"worker threads (overrides ${_kernels.WORKERS_ENV} and the config)")
    parser.add_argument("--out", default=None, help="output directory")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.mode, seed=args.seed, workers=args.workers,
                          out_dir=args.out)
    except ValidationError as exc:
        print(f"error [{exc.stage}]: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
