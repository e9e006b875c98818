"""Command-line interface: single runs, sweeps, and figure-data extraction.

Subcommands:
  validate-config  parse and range-check a config file
  run              one (config, seed) simulation, metrics to stdout/JSON
  sweep            cross-product over vehicle counts, modes, betas x seeds
  figure-data      tidy per-panel CSV from an aggregate sweep CSV

Exit codes: 0 success, 2 configuration/usage error, 3 sweep finished with
partial failures. Parallelism and the default output directory come from
TASKV2X_WORKERS and TASKV2X_OUTDIR.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .config import Config, ConfigError, config_from_dict, dump_config, parse_config
from .engine import run_simulation
from .metrics import MetricsReport, aggregate_metric

SCHEMA_VERSION = 1

RAW_FIELDS = ["schema_version", "n_vehicles", "mode", "beta", "seed", "status"]
AGG_FIELDS = ["schema_version", "n_vehicles", "mode", "beta", "n_seeds"]
_EXTRA_COUNTS = ["cse_events", "redundancy_cse_events", "relevance_cse_events",
                 "truncated_instances", "measurement_epochs"]

for _m in MetricsReport.metric_names():
    RAW_FIELDS += [f"{_m}_num", f"{_m}_den", f"{_m}_mean"]
AGG_FIELDS += [f"{m}_{s}" for m in MetricsReport.metric_names()
               for s in ("mean", "ci_low", "ci_high", "num", "den")]
RAW_FIELDS += _EXTRA_COUNTS

PANELS = {
    "3a": ("p_cse", "mode"),
    "3b": ("arr", "mode"),
    "4a": ("p_att", "mode"),
    "4b": ("p_succ", "mode"),
    "5a": ("p_drop", "mode"),
    "5b": ("p_rebroadcast", "mode"),
    "6a": ("p_cse", "beta"),
    "6b": ("arr", "beta"),
    "7a": ("p_succ", "beta"),
    "7b": ("redundancy_cse_ratio", "beta"),
}


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


@dataclass(frozen=True)
class SweepSpec:
    n_values: tuple
    modes: tuple
    betas: tuple
    seeds: tuple

    def __post_init__(self):
        if not (self.n_values and self.modes and self.betas and self.seeds):
            raise ConfigError("sweep: every axis needs at least one value")
        for n in self.n_values:
            if n < 2:
                raise ConfigError("sweep: N values must be >= 2")

    def points(self):
        for n in self.n_values:
            for mode in self.modes:
                for beta in self.betas:
                    yield (int(n), str(mode), float(beta))


def _run_point(args):
    base_dict, n, mode, beta, seed = args
    try:
        cfg = config_from_dict({**base_dict, "n_vehicles": n,
                                "redundancy_mode": mode, "beta": beta})
        result = run_simulation(cfg, seed)
        return (n, mode, beta, seed), ("ok", result.report)
    except Exception as exc:  # recorded per row, sweep continues
        return (n, mode, beta, seed), (f"error: {exc}", None)


def _raw_row(key, status, report) -> dict:
    n, mode, beta, seed = key
    row = {"schema_version": SCHEMA_VERSION, "n_vehicles": n, "mode": mode,
           "beta": _fmt(beta), "seed": seed, "status": status}
    if report is None:
        return row
    for m in MetricsReport.metric_names():
        val = report.metric(m)
        row[f"{m}_num"] = _fmt(val.numerator)
        row[f"{m}_den"] = _fmt(val.denominator)
        row[f"{m}_mean"] = _fmt(val.mean)
    for c in _EXTRA_COUNTS:
        row[c] = getattr(report, c)
    return row


def _agg_row(point, reports) -> dict:
    n, mode, beta = point
    row = {"schema_version": SCHEMA_VERSION, "n_vehicles": n, "mode": mode,
           "beta": _fmt(beta), "n_seeds": len(reports)}
    for m in MetricsReport.metric_names():
        val = aggregate_metric(reports, m)
        row[f"{m}_mean"] = _fmt(val.mean)
        row[f"{m}_ci_low"] = _fmt(val.ci_low)
        row[f"{m}_ci_high"] = _fmt(val.ci_high)
        row[f"{m}_num"] = _fmt(val.numerator)
        row[f"{m}_den"] = _fmt(val.denominator)
    return row


def run_sweep(base_cfg: Config, sweep: SweepSpec, outdir, workers: int = 1):
    """Execute the sweep; returns (n_failures, raw_path, agg_path)."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    base_dict = base_cfg.to_dict()
    tasks = [(base_dict, n, mode, beta, seed)
             for (n, mode, beta) in sweep.points() for seed in sweep.seeds]
    results = {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for key, outcome in pool.map(_run_point, tasks, chunksize=1):
                results[key] = outcome
    else:
        for task in tasks:
            key, outcome = _run_point(task)
            results[key] = outcome

    raw_path = outdir / "raw.csv"
    agg_path = outdir / "aggregate.csv"
    failures = 0
    with raw_path.open("w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=RAW_FIELDS, lineterminator="\n")
        w.writeheader()
        for key in sorted(results):
            status, report = results[key]
            if status != "ok":
                failures += 1
            w.writerow(_raw_row(key, status, report))
    with agg_path.open("w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=AGG_FIELDS, lineterminator="\n")
        w.writeheader()
        for point in sorted(set(sweep.points())):
            reports = [results[(point[0], point[1], point[2], s)][1] for s in sweep.seeds
                       if results.get((point[0], point[1], point[2], s), ("", None))[1] is not None]
            w.writerow(_agg_row(point, reports))
    return failures, raw_path, agg_path


def emit_figure_data(aggregate_csv, panel: str, out_path):
    """Tidy (x, series, y, ci_low, ci_high) CSV for one figure panel."""
    if panel not in PANELS:
        raise ConfigError(f"unknown panel '{panel}'; know {sorted(PANELS)}")
    metric, series_key = PANELS[panel]
    with open(aggregate_csv, newline="") as f:
        reader = csv.DictReader(f)
        rows = list(reader)
        need = {f"{metric}_mean", f"{metric}_ci_low", f"{metric}_ci_high",
                "n_vehicles", "mode", "beta"}
        have = set(reader.fieldnames or [])
        missing = need - have
        if missing:
            raise ConfigError(f"aggregate CSV missing column(s): {', '.join(sorted(missing))}")
    if series_key == "mode":
        rows = [r for r in rows if float(r["beta"]) == 0.0]
    else:
        rows = [r for r in rows if r["mode"] == "hard"]
    out = []
    for r in rows:
        out.append({"x": int(r["n_vehicles"]), "series": r[series_key],
                    "y": r[f"{metric}_mean"], "ci_low": r[f"{metric}_ci_low"],
                    "ci_high": r[f"{metric}_ci_high"]})
    out.sort(key=lambda r: (str(r["series"]), r["x"]))
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["x", "series", "y", "ci_low", "ci_high"],
                           lineterminator="\n")
        w.writeheader()
        w.writerows(out)
    return out_path


def _parse_values(text: str, cast):
    return tuple(cast(v) for v in text.split(",") if v != "")


def _build_parser():
    p = argparse.ArgumentParser(prog="taskv2x",
                                description="task-oriented V2X content-selection simulator")
    sub = p.add_subparsers(dest="cmd", required=True)

    pv = sub.add_parser("validate-config", help="parse and range-check a config file")
    pv.add_argument("--config", required=True)

    pr = sub.add_parser("run", help="single simulation run")
    pr.add_argument("--config")
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--record", action="store_true", help="write the run-record")
    pr.add_argument("--out", default=None)

    ps = sub.add_parser("sweep", help="sweep over N / mode / beta x seeds")
    ps.add_argument("--config")
    ps.add_argument("--n-values", default="50,100,150,200,250,300,350,400")
    ps.add_argument("--modes", default="hard,soft")
    ps.add_argument("--betas", default="0")
    ps.add_argument("--seeds", type=int, default=20)
    ps.add_argument("--seed-base", type=int, default=0)
    ps.add_argument("--out", default=None)

    pf = sub.add_parser("figure-data", help="tidy CSV for one figure panel")
    pf.add_argument("--aggregate", required=True)
    pf.add_argument("--panel", required=True)
    pf.add_argument("--out", default=None)
    return p


def _load(path) -> Config:
    return parse_config(path) if path else Config()


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    outdir = Path(os.environ.get("TASKV2X_OUTDIR", "results"))
    workers = int(os.environ.get("TASKV2X_WORKERS", "1"))
    try:
        if args.cmd == "validate-config":
            cfg = parse_config(args.config)
            print("config ok")
            return 0
        if args.cmd == "run":
            cfg = _load(args.config)
            if args.record:
                cfg = cfg.replace(record_run=True)
            result = run_simulation(cfg, args.seed)
            summary = {"seed": args.seed, "no_samples": result.report.no_samples}
            for m in MetricsReport.metric_names():
                summary[m] = result.report.metric(m).mean
            print(json.dumps(summary, sort_keys=True))
            if args.out:
                out = Path(args.out)
                out.mkdir(parents=True, exist_ok=True)
                (out / f"metrics_seed{args.seed}.json").write_text(
                    json.dumps(summary, sort_keys=True, indent=2))
                dump_config(cfg, out / "config.yaml")
                if args.record:
                    (out / f"run_seed{args.seed}.jsonl").write_bytes(result.record_bytes())
            return 0
        if args.cmd == "sweep":
            cfg = _load(args.config)
            spec = SweepSpec(n_values=_parse_values(args.n_values, int),
                             modes=_parse_values(args.modes, str),
                             betas=_parse_values(args.betas, float),
                             seeds=tuple(range(args.seed_base, args.seed_base + args.seeds)))
            out = Path(args.out) if args.out else outdir
            failures, raw, agg = run_sweep(cfg, spec, out, workers=workers)
            print(f"sweep done: {raw} {agg} failures={failures}")
            return 3 if failures else 0
        if args.cmd == "figure-data":
            out = Path(args.out) if args.out else outdir / f"panel_{args.panel}.csv"
            path = emit_figure_data(args.aggregate, args.panel, out)
            print(f"wrote {path}")
            return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
