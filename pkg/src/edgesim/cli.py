"""Command-line entry points: validate, run, compare, sweep."""

from __future__ import annotations

import argparse
import csv
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

import yaml

from .audit import audit_trace
from .config import ConfigInvalid, load_config, parse_config, read_yaml, set_path, validate
from .metrics import ComparisonError, ScenarioReport, compare
from .scenario import run_scenario

CSV_HEADER = ("architecture", "request_kind", "metric", "value")
EXIT_OK, EXIT_INVALID, EXIT_VIOLATION = 0, 2, 3


def _architectures(arch: str) -> list[str]:
    arch = arch.upper()
    return ["CENTRALIZED", "EDGE"] if arch == "BOTH" else [arch]


def execute(config, out_dir: Path, *, trace: bool = False, arch: Optional[str] = None,
            log=print) -> int:
    """Run a loaded config and write its report files; returns the exit code."""
    out_dir.mkdir(parents=True, exist_ok=True)
    name = config.name
    reports, problems = {}, []
    for a in _architectures(arch or config.architecture):
        trace_path = out_dir / f"{name}.{a.lower()}.trace.csv" if trace else None
        report, violations = run_scenario(config, a, trace_path)
        path = out_dir / f"{name}.{a.lower()}.report.txt"
        path.write_text(report.to_text(), encoding="utf-8")
        log(f"{a.lower()}: wrote {path}")
        if trace_path is not None:
            result = audit_trace(trace_path)
            log(f"{a.lower()}: {result.summary()}")
            violations += [f"trace audit: {v}" for v in result.violations]
        for v in violations:
            where = f" (trace: {trace_path})" if trace_path else " (rerun with --trace for a trace)"
            problems.append(f"{a.lower()}: {v}{where}")
        reports[a] = report
    rows = [r for rep in reports.values() for r in rep.csv_rows()]
    if len(reports) == 2:
        cmp = compare(reports["CENTRALIZED"], reports["EDGE"])
        cmp_path = out_dir / f"{name}.compare.txt"
        cmp_path.write_text(cmp.to_text(), encoding="utf-8")
        log(f"comparison: wrote {cmp_path}")
        log(cmp.to_text().rstrip())
        rows += cmp.csv_rows()
    with (out_dir / f"{name}.metrics.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        w.writerows(rows)
    for p in problems:
        print(f"invariant violation: {p}", file=sys.stderr)
    return EXIT_VIOLATION if problems else EXIT_OK


def _cmd_validate(args) -> int:
    diags = validate(args.config)
    if diags:
        for d in diags:
            print(d, file=sys.stderr)
        return EXIT_INVALID
    print(f"{args.config}: ok")
    return EXIT_OK


def _cmd_run(args) -> int:
    try:
        config = load_config(args.config, seed=args.seed)
    except ConfigInvalid as exc:
        for d in exc.diagnostics:
            print(d, file=sys.stderr)
        return EXIT_INVALID
    return execute(config, Path(args.out), trace=args.trace, arch=args.arch)


def _cmd_compare(args) -> int:
    base = ScenarioReport.from_text(Path(args.baseline).read_text(encoding="utf-8"))
    edge = ScenarioReport.from_text(Path(args.edge).read_text(encoding="utf-8"))
    try:
        cmp = compare(base, edge)
    except ComparisonError as exc:
        print(f"comparison refused: {exc}", file=sys.stderr)
        return EXIT_INVALID
    text = cmp.to_text()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{cmp.scenario}.compare.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


SWEEP_COLUMNS = ("index", "param", "value", "latency_reduction_pct", "throughput_gain_pct",
                 "satisfaction_gain_pct", "response_time_reduction_pct", "edge_mean_ms",
                 "baseline_mean_ms", "edge_throughput_rps", "baseline_throughput_rps",
                 "edge_satisfaction", "baseline_satisfaction", "violations")


def sweep_point(raw: dict, param: str, value, index: int) -> tuple:
    """One grid point: both architectures on the same seed. Top level so it pickles."""
    raw = dict(raw)
    set_path(raw, param, value)
    config = parse_config(raw)
    base, vb = run_scenario(config, "CENTRALIZED")
    edge, ve = run_scenario(config, "EDGE")
    cmp = compare(base, edge)
    f = "{:.6f}".format
    sat = "" if cmp.satisfaction_gain is None else f(cmp.satisfaction_gain)
    return (index, param, value, f(cmp.latency_reduction), f(cmp.throughput_gain), sat,
            f(cmp.response_time_reduction), f(edge.latency["ALL"].mean),
            f(base.latency["ALL"].mean), f(edge.throughput), f(base.throughput),
            f(edge.satisfaction or 0.0), f(base.satisfaction or 0.0), len(vb) + len(ve))


def run_sweep(raw: dict, param: str, values: list, workers: int = 1) -> list[tuple]:
    import copy
    jobs = [(copy.deepcopy(raw), param, v, i) for i, v in enumerate(values)]
    if workers <= 1:
        return [sweep_point(*j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map yields in submission order, so rows stay ordered by point index
        return list(pool.map(sweep_point, *zip(*jobs)))


def _cmd_sweep(args) -> int:
    try:
        raw = read_yaml(args.config)
        if args.seed is not None:
            raw["seed"] = args.seed
        values = [yaml.safe_load(v) for v in args.values.split(",")]
        for v in values:
            probe = dict(raw)
            set_path(probe, args.param, v)
            parse_config(probe)
    except ConfigInvalid as exc:
        for d in exc.diagnostics:
            print(d, file=sys.stderr)
        return EXIT_INVALID
    rows = run_sweep(raw, args.param, values, args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    name = raw.get("name", "scenario")
    path = out / f"{name}.sweep.csv"
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        w.writerows(rows)
    for r in rows:
        print(",".join(str(x) for x in r))
    print(f"wrote {path}")
    return EXIT_VIOLATION if any(r[-1] for r in rows) else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="edgesim",
                                description="Edge vs centralized reservation-system simulator")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a scenario file")
    v.add_argument("--config", required=True)
    v.set_defaults(func=_cmd_validate)

    r = sub.add_parser("run", help="run a scenario and write report files")
    r.add_argument("--config", required=True)
    r.add_argument("--out", default="out")
    r.add_argument("--seed", type=int)
    r.add_argument("--trace", action="store_true")
    r.add_argument("--arch", choices=("edge", "centralized", "both"))
    r.set_defaults(func=_cmd_run)

    c = sub.add_parser("compare", help="re-compare two existing report files")
    c.add_argument("baseline")
    c.add_argument("edge")
    c.add_argument("--out")
    c.set_defaults(func=_cmd_compare)

    s = sub.add_parser("sweep", help="grid over one parameter, one comparison row per point")
    s.add_argument("--config", required=True)
    s.add_argument("--param", required=True, help="dotted config path, e.g. workload.base_rate")
    s.add_argument("--values", required=True, help="comma-separated YAML scalars")
    s.add_argument("--out", default="out")
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=_cmd_sweep)
    return p


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
