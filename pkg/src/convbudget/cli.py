"""Command-line front end: analyze, diff, rewrite, search, bench, zoo.

Exit codes: 0 success, 1 failed verification (a certificate or fixture check
outside tolerance), 2 bad input (parse or shape errors). Ratios print at two
decimals; JSON output carries the exact numerator/denominator alongside.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from fractions import Fraction
from pathlib import Path

from . import bench, rewrite, search, zoo
from .complexity import (ComplexityReport, diff_complexity, display_ratio,
                         total_complexity, train_time_estimate)
from .model import Architecture
from .notation import (NotationError, load_architecture, render_architecture,
                       save_architecture)
from .rewrite import RewriteError
from .search import SearchConfig
from .shapes import ShapeError

EXIT_OK = 0
EXIT_VERIFICATION = 1
EXIT_INPUT = 2


def _ratio_json(r: Fraction | None) -> dict | None:
    if r is None:
        return None
    return {"numerator": r.numerator, "denominator": r.denominator,
            "display": display_ratio(r)}


def _report_rows(arch: Architecture, report: ComplexityReport) -> list[dict]:
    rows = []
    cumulative = 0
    for term in report.terms:
        cumulative += term.value
        rows.append({
            "layer": term.layer_index,
            "stage": term.stage_index,
            "n_prev": term.in_channels,
            "s": term.filter_size,
            "n": term.width,
            "m": term.map_size,
            "term": term.value,
            "cumulative": cumulative,
            "relative": display_ratio(Fraction(cumulative, report.total)),
        })
    return rows


def _emit_table(rows: list[dict], out) -> None:
    if not rows:
        return
    headers = list(rows[0])
    widths = [max(len(str(h)), max(len(str(r[h])) for r in rows)) for h in headers]
    out.write("  ".join(h.rjust(w) for h, w in zip(headers, widths)) + "\n")
    for r in rows:
        out.write("  ".join(str(r[h]).rjust(w) for h, w in zip(headers, widths)) + "\n")


def _emit_csv(rows: list[dict], out) -> None:
    if not rows:
        return
    writer = csv.DictWriter(out, fieldnames=list(rows[0]))
    writer.writeheader()
    writer.writerows(rows)


def _emit_rows(rows: list[dict], fmt: str, out) -> None:
    if fmt == "csv":
        _emit_csv(rows, out)
    elif fmt == "json":
        json.dump(rows, out, indent=2)
        out.write("\n")
    else:
        _emit_table(rows, out)


def _load(path: str) -> Architecture:
    return load_architecture(path)


def cmd_analyze(args, out) -> int:
    arch = _load(args.architecture)
    baseline = _load(args.baseline) if args.baseline else None
    report = total_complexity(arch, baseline)
    rows = _report_rows(arch, report)
    if args.format == "json":
        payload = {
            "name": arch.name,
            "notation": render_architecture(arch),
            "input_size": arch.input_size,
            "input_channels": arch.input_channels,
            "depth": arch.depth,
            "layers": rows,
            "total": report.total,
            "per_stage": {str(k): v for k, v in sorted(report.per_stage.items())},
            "train_estimate": train_time_estimate(report),
            "baseline": report.baseline_name,
            "relative": _ratio_json(report.relative),
        }
        json.dump(payload, out, indent=2)
        out.write("\n")
        return EXIT_OK
    _emit_rows(rows, args.format, out)
    out.write(f"total {report.total}\n")
    out.write(f"train-estimate {train_time_estimate(report)}\n")
    if report.relative is not None:
        out.write(f"relative-to {report.baseline_name} "
                  f"{display_ratio(report.relative)}\n")
    return EXIT_OK


def cmd_diff(args, out) -> int:
    before = _load(args.before)
    after = _load(args.after)
    diff = diff_complexity(before, after)
    rows = []
    for delta in diff.stage_deltas:
        rows.append({
            "stage": delta.stage_index,
            "before": delta.before if delta.before is not None else "-",
            "after": delta.after if delta.after is not None else "-",
            "ratio": display_ratio(delta.ratio) if delta.ratio is not None else "-",
        })
    if args.format == "json":
        payload = {
            "before": {"name": before.name, "total": diff.before.total},
            "after": {"name": after.name, "total": diff.after.total},
            "ratio": _ratio_json(diff.ratio),
            "stages": rows,
        }
        json.dump(payload, out, indent=2)
        out.write("\n")
        return EXIT_OK
    _emit_rows(rows, args.format, out)
    out.write(f"whole-model ratio {display_ratio(diff.ratio)}\n")
    return EXIT_OK


def cmd_rewrite(args, out) -> int:
    arch = _load(args.architecture)
    steps = rewrite.parse_script(Path(args.script).read_text(encoding="utf-8"))
    result = rewrite.run_script(arch, steps,
                                allow_budget_increase=args.allow_budget_increase)
    tolerance = Fraction(args.tolerance)
    ok = result.all_within(tolerance)
    final = result.architecture
    if args.output:
        save_architecture(final, args.output)
    out.write(render_architecture(final) + "\n")
    for i, (step_, cert) in enumerate(zip(steps, result.certificates), 1):
        if cert is None:
            out.write(f"step {i} [{step_.rule}] no certificate (cost not preserved "
                      "by construction or rule carries none)\n")
            continue
        status = "PASS" if cert.within(tolerance) else "FAIL"
        out.write(f"step {i} [{step_.rule}] {cert.bound_kind} affected "
                  f"{cert.before_affected} -> {cert.after_affected} "
                  f"(x{display_ratio(cert.affected_ratio)}), total "
                  f"x{display_ratio(cert.total_ratio)} {status}\n")
    verdict = rewrite.verify_replacement(arch, final, tolerance)
    out.write(f"whole-chain {verdict.bound_kind} x{display_ratio(verdict.total_ratio)} "
              f"{'PASS' if verdict.within(tolerance) else 'FAIL'}\n")
    return EXIT_OK if ok and verdict.within(tolerance) else EXIT_VERIFICATION


def cmd_search(args, out) -> int:
    baseline = _load(args.baseline)
    config = SearchConfig(budget_ratio=Fraction(args.budget),
                          tolerance=Fraction(args.tol),
                          max_steps=args.steps,
                          beam_width=args.beam,
                          depth_cap=args.depth_cap)
    if args.exhaustive:
        results = search.exhaustive_search(baseline, config)
    else:
        results = search.budget_search(baseline, config)
    results = results[:args.top] if args.top else results
    rows = []
    for i, res in enumerate(results):
        rows.append({
            "rank": i,
            "depth": res.depth,
            "ratio": display_ratio(res.ratio),
            "steps": len(res.trace),
            "notation": render_architecture(res.architecture),
        })
    _emit_rows(rows, args.format, out)
    if args.emit_traces:
        trace_dir = Path(args.emit_traces)
        trace_dir.mkdir(parents=True, exist_ok=True)
        for i, res in enumerate(results):
            (trace_dir / f"result_{i:03d}.rwr").write_text(
                search.trace_to_script(res.trace) if res.trace else "",
                encoding="utf-8")
        out.write(f"traces written to {trace_dir}\n")
    return EXIT_OK


def cmd_bench(args, out) -> int:
    arch = _load(args.architecture)
    timings = bench.time_architecture(arch, input_scale=Fraction(args.scale),
                                      repeats=args.repeats, warmup=args.warmup)
    rows = []
    for rec in timings.conv_records:
        rows.append({
            "layer": rec.label, "s": rec.filter_size, "n_prev": rec.in_channels,
            "n": rec.width, "m": rec.out_size, "theoretical": rec.theoretical,
            "median_ns": rec.wall_ns,
            "ns_per_unit": f"{rec.ns_per_unit:.4f}",
        })
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="") as fh:
            _emit_csv(rows, fh)
    _emit_rows(rows, args.format, out)
    out.write(f"conv wall total {timings.conv_wall_ns} ns; theoretical total "
              f"{timings.theoretical_total}\n")
    out.write(f"pooling wall total {timings.pool_wall_ns} ns "
              "(overhead; excluded from the theoretical column)\n")
    if len(timings.conv_records) >= 3:
        try:
            corr = bench.correlate(timings.conv_records)
            out.write(f"pearson r = {corr.pearson:.4f}\n")
        except bench.BenchError as exc:
            out.write(f"correlation unavailable: {exc}\n")
    return EXIT_OK


def cmd_zoo(args, out) -> int:
    if args.show:
        arch = zoo.load(args.show)
        out.write(render_architecture(arch) + "\n")
        return EXIT_OK
    if args.check:
        checks = zoo.check_all()
        rows = []
        for c in checks:
            rows.append({
                "name": c.name,
                "kind": c.kind,
                "baseline": c.baseline,
                "published": f"{float(c.published):g}",
                "computed": display_ratio(c.computed) if c.computed is not None else "-",
                "status": c.status,
            })
        _emit_rows(rows, args.format, out)
        failed = [c for c in checks if c.passed is False]
        for c in failed:
            out.write(f"\n{c.name} out of bounds "
                      f"[{float(c.low):.3f}, {float(c.high):.3f}]; per-layer terms:\n")
            arch = zoo.load(c.name)
            _emit_table(_report_rows(arch, c.report), out)
        return EXIT_VERIFICATION if failed else EXIT_OK
    for name in zoo.names():
        out.write(name + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="convbudget",
        description="Budget, rewrite, search and benchmark conv-net architectures.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="per-layer cost table and totals")
    p.add_argument("architecture")
    p.add_argument("--baseline")
    p.add_argument("--format", choices=("table", "csv", "json"), default="table")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("diff", help="stage-aligned cost comparison")
    p.add_argument("before")
    p.add_argument("after")
    p.add_argument("--format", choices=("table", "csv", "json"), default="table")
    p.set_defaults(func=cmd_diff)

    p = sub.add_parser("rewrite", help="apply a rewrite script with certificates")
    p.add_argument("architecture")
    p.add_argument("--script", required=True)
    p.add_argument("--output", "-o")
    p.add_argument("--tolerance", default="0.08",
                   help="certificate tolerance on the whole-model ratio")
    p.add_argument("--allow-budget-increase", action="store_true",
                   help="permit rules that strictly grow the budget")
    p.set_defaults(func=cmd_rewrite)

    p = sub.add_parser("search", help="budget-constrained rewrite search")
    p.add_argument("--baseline", required=True)
    p.add_argument("--budget", default="1.0")
    p.add_argument("--tol", default="0.02")
    p.add_argument("--steps", type=int, default=4)
    p.add_argument("--beam", type=int, default=8)
    p.add_argument("--depth-cap", type=int, default=14)
    p.add_argument("--exhaustive", action="store_true")
    p.add_argument("--top", type=int, default=20)
    p.add_argument("--emit-traces")
    p.add_argument("--format", choices=("table", "csv", "json"), default="table")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("bench", help="time conv layers and check proportionality")
    p.add_argument("architecture")
    p.add_argument("--scale", default="1/4")
    p.add_argument("--repeats", type=int, default=9)
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--csv")
    p.add_argument("--format", choices=("table", "csv", "json"), default="table")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("zoo", help="list, show or check the fixture zoo")
    p.add_argument("--check", action="store_true")
    p.add_argument("--show")
    p.add_argument("--format", choices=("table", "csv", "json"), default="table")
    p.set_defaults(func=cmd_zoo)
    return parser


def main(argv=None, out=None) -> int:
    out = out if out is not None else sys.stdout
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, out)
    except (NotationError, ShapeError, FileNotFoundError, zoo.ZooError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (RewriteError, bench.BenchError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
