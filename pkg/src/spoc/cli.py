"""Command-line front end: simulate | compare | rates | density | schedule-diag | verify.

JSON configs are schema-validated (unknown keys rejected); dotted --set
overrides are type-checked against the schema.  Exit codes: 0 success,
2 config error (with a line/key diagnostic), 3 numeric blow-up (with
particle/step context).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import jsonschema

from .analysis import (
    METRIC_MEAN,
    METRIC_SECOND,
    METRIC_W2,
    convergence_study,
    density_histogram,
    iid_convergence_study,
)
from .battery import run_battery
from .errors import BlowUpError, ConfigError, SpocError
from .models import builtin_model
from .schedules import UpdateSchedule, schedule_diagnostics, theta_sequence
from .simulate import (
    InitialCondition,
    SimConfig,
    batch_spoc_run,
    classical_poc_run,
    save_run,
    spoc_run,
)
from . import svgplot

log = logging.getLogger("spoc")

_SCHEDULE_SCHEMA = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["harmonic", "power_law", "geometric", "explicit"]},
        "r": {"type": "number"},
        "q": {"type": "number"},
        "values": {"type": "array", "items": {"type": "number"}},
        "max_n": {"type": "integer"},
    },
    "required": ["kind"],
    "additionalProperties": False,
}

_MODEL_SCHEMA = {
    "type": ["object", "null"],
    "properties": {"name": {"type": "string"}, "params": {"type": "object"}},
    "required": ["name"],
    "additionalProperties": False,
}

_INITIAL_SCHEMA = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["point", "gaussian"]},
        "value": {"type": ["number", "array"], "items": {"type": "number"}},
        "mean": {"type": ["number", "array"], "items": {"type": "number"}},
        "std": {"type": "number"},
    },
    "required": ["kind"],
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "model": _MODEL_SCHEMA,
        "schedule": _SCHEDULE_SCHEMA,
        "initial": _INITIAL_SCHEMA,
        "T": {"type": "number"},
        "M": {"type": "integer"},
        "N": {"type": "integer"},
        "seed": {"type": "integer"},
        "replications": {"type": "integer"},
        "batch_sizes": {"type": ["array", "null"], "items": {"type": "integer"}},
        "checkpoints": {"type": "array", "items": {"type": "number"}},
        "milestones": {"type": "array", "items": {"type": "integer"}},
        "measure_backend": {"enum": ["full_atoms", "summary_only"]},
        "store_paths": {"type": "boolean"},
        "self_inclusive": {"type": "boolean"},
        "algorithm": {"enum": ["spoc", "batch_spoc", "classical_poc"]},
        "metric": {"enum": [METRIC_W2, METRIC_MEAN, METRIC_SECOND]},
        "gamma": {"type": "number"},
        "window": {"type": "integer"},
        "bins": {"type": "integer"},
        "range": {"type": "array", "items": {"type": "number"},
                  "minItems": 2, "maxItems": 2},
        "n_ref": {"type": "integer"},
    },
    "additionalProperties": False,
}


def _load_config(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"config {path} is not valid JSON: line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc


def _coerce(raw: str, expected: dict | None):
    kind = None
    if expected is not None:
        kind = expected.get("type")
        if isinstance(kind, list):
            kind = kind[0]
        if "enum" in expected:
            return raw
    try:
        if kind == "integer":
            return int(raw)
        if kind == "number":
            return float(raw)
        if kind == "boolean":
            if raw.lower() in ("true", "1"):
                return True
            if raw.lower() in ("false", "0"):
                return False
            raise ValueError(f"not a boolean: {raw}")
        if kind == "string":
            return raw
        if kind in ("array", "object"):
            return json.loads(raw)
    except (ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"override value {raw!r} is not a valid {kind}", key=raw) from exc
    # free-form node: best-effort JSON literal, else string
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _apply_override(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"--set needs KEY=VALUE, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    parts = key.split(".")
    node, schema_node = cfg, CONFIG_SCHEMA
    for p in parts[:-1]:
        if schema_node is not None:
            props = schema_node.get("properties", {})
            if p not in props and schema_node.get("additionalProperties") is False:
                raise ConfigError(f"unknown config key {key!r}", key=key)
            schema_node = props.get(p)
        if not isinstance(node.get(p), dict):
            node[p] = {}
        node = node[p]
    leaf = parts[-1]
    expected = None
    if schema_node is not None:
        props = schema_node.get("properties", {})
        if leaf not in props and schema_node.get("additionalProperties") is False:
            raise ConfigError(f"unknown config key {key!r}", key=key)
        expected = props.get(leaf)
    node[leaf] = _coerce(raw, expected)


def _validate_config(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config key {path}: {exc.message}", key=path) from exc


def _require(cfg: dict, keys: list[str]) -> None:
    missing = [k for k in keys if cfg.get(k) is None]
    if missing:
        raise ConfigError(f"config is missing required keys: {missing}", key=missing[0])


def _build_sim_config(cfg: dict, args) -> SimConfig:
    _require(cfg, ["model", "schedule", "initial", "T", "M", "N", "seed"])
    model = builtin_model(cfg["model"]["name"], cfg["model"].get("params"))
    schedule = UpdateSchedule.from_dict(
        {**cfg["schedule"], "max_n": cfg["schedule"].get("max_n", max(cfg["N"], 1))}
    )
    initial = InitialCondition.from_dict(cfg["initial"])
    seed = args.seed if args.seed is not None else cfg["seed"]
    return SimConfig(
        model=model,
        schedule=schedule,
        initial=initial,
        T=float(cfg["T"]),
        M=int(cfg["M"]),
        N=int(cfg["N"]),
        seed=int(seed),
        batch_sizes=tuple(cfg["batch_sizes"]) if cfg.get("batch_sizes") else None,
        replications=int(cfg.get("replications", 1)),
        checkpoints=tuple(cfg["checkpoints"]) if cfg.get("checkpoints") else None,
        milestones=tuple(cfg["milestones"]) if cfg.get("milestones") else None,
        measure_backend=cfg.get("measure_backend"),
        store_paths=bool(cfg.get("store_paths", False)),
        self_inclusive=bool(cfg.get("self_inclusive", False)),
    )


def _out_dir(args) -> Path:
    out = Path(args.out or "runs/out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _table_outputs(out: Path, stem: str, table, fmt: str) -> None:
    table.to_csv(out / f"{stem}.csv")
    if fmt == "json":
        rows = [
            {"n": r.n, "err": r.estimate, "ci_lo": r.estimate - r.ci_half_width,
             "ci_hi": r.estimate + r.ci_half_width}
            for r in table.rows
        ]
        (out / f"{stem}.json").write_text(json.dumps(rows, indent=2))


def _cmd_simulate(cfg: dict, args) -> int:
    config = _build_sim_config(cfg, args)
    out = _out_dir(args)
    manifest_path = out / "manifest.json"
    if manifest_path.exists():
        previous = json.loads(manifest_path.read_text())
        if previous.get("complete") and previous.get("config") == config.to_dict() \
                and previous.get("algorithm") == cfg.get("algorithm", "spoc"):
            print(f"run already complete in {out}; nothing to do")
            return 0
    algorithm = cfg.get("algorithm", "spoc")
    runner = {"spoc": spoc_run, "batch_spoc": batch_spoc_run,
              "classical_poc": classical_poc_run}[algorithm]
    result = runner(config, workers=args.workers)
    save_run(result, out)
    print(
        f"{algorithm}: N={config.N} M={config.M} replications={config.replications} "
        f"-> {out} ({result.wall_time_s:.2f}s, {result.n_steps} steps)"
    )
    return 0


def _cmd_compare(cfg: dict, args) -> int:
    config = _build_sim_config(cfg, args)
    out = _out_dir(args)
    milestones = tuple(cfg.get("milestones") or config.milestones)
    metric = cfg.get("metric", METRIC_MEAN)
    seq_table, seq_fit = convergence_study(
        config, milestones, metric, algorithm="spoc", workers=args.workers
    )
    cls_table, cls_fit = convergence_study(
        config, milestones, metric, algorithm="classical_poc", workers=args.workers
    )
    _table_outputs(out, f"sequential_{metric}", seq_table, args.format)
    _table_outputs(out, f"classical_{metric}", cls_table, args.format)
    svgplot.loglog_rate_plot(
        out / f"compare_{metric}.svg",
        {"sequential": (seq_table.ns(), seq_table.estimates()),
         "classical": (cls_table.ns(), cls_table.estimates())},
        title=f"sequential vs classical: {metric}",
        ref_slope=-0.5,
    )
    print(f"sequential slope {seq_fit.slope:+.3f}, classical slope {cls_fit.slope:+.3f} -> {out}")
    return 0


def _cmd_rates(cfg: dict, args) -> int:
    out = _out_dir(args)
    metric = cfg.get("metric", METRIC_W2)
    milestones = cfg.get("milestones")
    if not milestones:
        raise ConfigError("rates requires milestones", key="milestones")
    if cfg.get("model") is None:
        _require(cfg, ["schedule", "seed"])
        schedule = UpdateSchedule.from_dict(
            {**cfg["schedule"], "max_n": cfg["schedule"].get("max_n", max(milestones))}
        )
        seed = args.seed if args.seed is not None else cfg["seed"]
        table, fit = iid_convergence_study(
            schedule, milestones, int(cfg.get("replications", 20)), int(seed)
        )
    else:
        config = _build_sim_config(cfg, args)
        table, fit = convergence_study(
            config, milestones, metric,
            algorithm=cfg.get("algorithm", "spoc"), workers=args.workers,
        )
    _table_outputs(out, f"rates_{table.metric}", table, args.format)
    svgplot.loglog_rate_plot(
        out / f"rates_{table.metric}.svg",
        {table.metric: (table.ns(), table.estimates())},
        title=f"convergence rate: {table.metric}",
        ref_slope=-0.5,
    )
    print(f"fitted slope {fit.slope:+.4f} (stderr {fit.stderr:.4f}, R^2 {fit.r_squared:.3f}) -> {out}")
    return 0


def _cmd_density(cfg: dict, args) -> int:
    config = _build_sim_config(cfg, args)
    if config.model.dim != 1:
        raise ConfigError("density requires a 1-d model", key="model")
    config = replace(config, measure_backend="full_atoms")
    out = _out_dir(args)
    result = spoc_run(config, workers=args.workers)
    bins = int(cfg.get("bins", 40))
    rng = tuple(cfg["range"]) if cfg.get("range") else None
    term = config.checkpoint_indices[-1]
    curves = {}
    for n in config.milestones:
        snap = result.snapshots[(0, n, term)]
        curve = density_histogram(snap, bins, rng)
        curve.to_csv(out / f"density_n{n}.csv")
        curves[f"n={n}"] = (curve.centers, curve.density)
    svgplot.density_plot(out / "density.svg", curves,
                         title=f"terminal density ({config.model.name})")
    print(f"densities at milestones {list(config.milestones)} -> {out}")
    return 0


def _cmd_schedule_diag(cfg: dict, args) -> int:
    _require(cfg, ["schedule", "gamma"])
    schedule = UpdateSchedule.from_dict(cfg["schedule"])
    diag = schedule_diagnostics(schedule, float(cfg["gamma"]), cfg.get("window"))
    out = _out_dir(args)
    (out / "diagnostics.json").write_text(json.dumps({
        "alpha_inf_est": diag.alpha_inf_est,
        "abar_est": diag.abar_est,
        "aunder_est": diag.aunder_est,
        "regime": diag.regime,
        "gamma": diag.gamma,
        "window": diag.window,
    }, indent=2))
    n_tab = min(schedule.max_n, 10000)
    theta = theta_sequence(schedule, n_tab)
    alphas = schedule.alphas(n_tab)
    stride = max(1, n_tab // 1000)
    with open(out / "theta.csv", "w") as fh:
        fh.write("n,alpha,theta\n")
        for i in range(0, n_tab, stride):
            fh.write(f"{i + 1},{alphas[i]!r},{theta[i]!r}\n")
    print(f"regime {diag.regime} (abar={diag.abar_est:.4g}, aunder={diag.aunder_est:.4g}, "
          f"alpha_inf={diag.alpha_inf_est:.4g}) -> {out}")
    return 0


def _cmd_verify(cfg: dict, args) -> int:
    checks = run_battery()
    width = max(len(c.name) for c in checks)
    all_ok = True
    for c in checks:
        status = "PASS" if c.passed else "FAIL"
        all_ok &= c.passed
        print(f"[{status}] {c.name:<{width}}  {c.detail}")
    if args.out:
        out = _out_dir(args)
        (out / "verify.json").write_text(json.dumps(
            [{"name": c.name, "passed": c.passed, "detail": c.detail} for c in checks],
            indent=2,
        ))
    return 0 if all_ok else 1


_COMMANDS = {
    "simulate": _cmd_simulate,
    "compare": _cmd_compare,
    "rates": _cmd_rates,
    "density": _cmd_density,
    "schedule-diag": _cmd_schedule_diag,
    "verify": _cmd_verify,
}


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spoc",
        description="Sequential particle approximation of McKean-Vlasov dynamics",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config path")
        p.add_argument("--out", help="output directory")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VAL",
                       help="dotted-path config override (repeatable)")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
    return parser


def dispatch(argv=None) -> int:
    level = os.environ.get("SPOC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    args = _parser().parse_args(argv)
    try:
        cfg = _load_config(args.config) if args.config else {}
        for assignment in args.set:
            _apply_override(cfg, assignment)
        _validate_config(cfg)
        return _COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except BlowUpError as exc:
        print(f"numeric blow-up: {exc}", file=sys.stderr)
        return 3
    except SpocError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
