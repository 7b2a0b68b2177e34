"""
Command-line front end.

    mobsim gen spoiler --pages 128 --rounds 20 --window 56 --aliased 8 --seed 7 -o t.trace
    mobsim gen benign --kind forward-heavy --ops 1000 --seed 1 -o b.trace
    mobsim run t.trace --model m2 --seed 7 --out-dir results/
    mobsim compare results/m1.summary.json results/m2.summary.json results/m3.summary.json

Exit status: 0 ok, 2 usage error, 3 I/O or trace-format error, 4 simulation error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from typing import Any, Optional, Sequence

from .address import AddressError, AddressSpace
from .generators import (
    BENIGN_KINDS,
    GeneratorError,
    SpoilerParams,
    gen_benign_trace,
    gen_mixed_trace,
    gen_spoiler_trace,
    pick_aliased_pages,
)
from .metrics import MetricsError, classify_aliased, misspec_rate, per_page_latency
from .mob import Latencies, Model, SimConfig, SimStats, SimulationError, run_trace
from .trace import Trace, TraceFormatError, dumps_trace, read_trace

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_SIM = 4

# M3 counts as indistinguishable from M1 when the best balanced attacker accuracy stays below this
INDISTINGUISHABLE_ACCURACY = 0.55

SUMMARY_VERSION = 1
LOAD_CSV_COLUMNS = ("seq", "page", "pc", "reissues", "latency_cycles")
PAGE_CSV_COLUMNS = ("page", "aliased", "mean", "std", "n")
COMPARE_ROWS = (
    "total_cycles",
    "total_loads",
    "spoiler_violations",
    "attacker_stalls",
    "misspeculations",
    "remask_events",
    "reissue_cap_hits",
    "misspec_rate",
    "detection_accuracy",
    "detection_balanced_accuracy",
)

log = logging.getLogger("mobsim")


class UsageError(Exception):
    pass


def _build_trace(args: argparse.Namespace) -> Trace:
    if args.generator == "benign":
        return gen_benign_trace(args.kind, args.ops, args.seed)
    params = SpoilerParams(
        pages=args.pages,
        rounds=args.rounds,
        window=args.window,
        aliased_pages=pick_aliased_pages(args.pages, args.aliased, args.seed),
        seed=args.seed,
        offset=args.offset,
    )
    space = AddressSpace(args.seed)
    if args.generator == "mixed":
        return gen_mixed_trace(params, space, args.benign_per_round, args.benign_kind)
    return gen_spoiler_trace(params, space)


def _write_text(path: str, text: str) -> None:
    if path == "-":
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def cmd_gen(args: argparse.Namespace) -> int:
    try:
        trace = _build_trace(args)
    except (GeneratorError, AddressError) as exc:
        raise UsageError(str(exc)) from exc
    _write_text(args.out, dumps_trace(trace))
    log.info("wrote %d ops to %s", len(trace), args.out)
    return EXIT_OK


def config_from_args(args: argparse.Namespace) -> SimConfig:
    lat = Latencies(
        base_load=args.base_load,
        forward=args.forward,
        alias4k_stall=args.alias4k_stall,
        squash_penalty=args.squash_penalty,
    )
    return SimConfig(
        model=Model(args.model),
        seed=args.seed,
        sab_capacity=args.sab_capacity,
        mask_width=args.mask_width,
        latencies=lat,
        store_resolve_delay=args.resolve_delay,
        drain_delay=args.drain_delay,
        max_reissues=args.max_reissues,
    )


def build_summary(
    stats: SimStats, trace: Trace, config: SimConfig, trace_digest: str
) -> dict[str, Any]:
    summary: dict[str, Any] = {
        "summary_version": SUMMARY_VERSION,
        "model": config.model.value,
        "config": config.to_dict(),
        "trace": {
            "sha256": trace_digest,
            "generator": trace.metadata.get("generator"),
            "ops": len(trace),
        },
    }
    summary.update(stats.counters())
    summary["misspec_rate"] = misspec_rate(stats) if stats.total_loads else None
    try:
        profile = per_page_latency(stats, trace.metadata)
    except MetricsError:
        summary["detection"] = summary["detection_balanced"] = None
    else:
        summary["detection"] = classify_aliased(profile).to_dict()
        summary["detection_balanced"] = classify_aliased(profile, balanced=True).to_dict()
    return summary


def _write_load_csv(path: str, stats: SimStats) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOAD_CSV_COLUMNS)
        for rec in stats.per_load_latency:
            w.writerow((rec.seq, rec.page, f"{rec.pc:#x}", rec.reissues, rec.latency))


def _write_page_csv(path: str, stats: SimStats, trace: Trace) -> None:
    try:
        rows = per_page_latency(stats, trace.metadata).per_page
    except MetricsError:
        rows = []
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PAGE_CSV_COLUMNS)
        for r in rows:
            w.writerow((r.page, int(r.aliased), repr(r.mean), repr(r.std), r.n))


def _dump_json(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def cmd_run(args: argparse.Namespace) -> int:
    try:
        config = config_from_args(args)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    with open(args.trace, "rb") as fh:
        raw = fh.read()
    digest = hashlib.sha256(raw).hexdigest()
    trace = read_trace(args.trace)
    stats = run_trace(trace, config)

    os.makedirs(args.out_dir, exist_ok=True)
    prefix = os.path.join(args.out_dir, args.prefix or config.model.value)
    _write_load_csv(prefix + ".loads.csv", stats)
    _write_page_csv(prefix + ".pages.csv", stats, trace)
    summary = build_summary(stats, trace, config, digest)
    _write_text(prefix + ".summary.json", _dump_json(summary))
    log.info(
        "%s: %d cycles, %d misspeculations over %d loads",
        config.model.value,
        stats.total_cycles,
        stats.misspeculations,
        stats.total_loads,
    )
    return EXIT_OK


def _row_value(summary: dict[str, Any], row: str) -> Optional[float]:
    if row == "detection_accuracy":
        det = summary.get("detection")
        return None if det is None else det["accuracy"]
    if row == "detection_balanced_accuracy":
        det = summary.get("detection_balanced")
        return None if det is None else det["balanced_accuracy"]
    return summary.get(row)


def compare_summaries(summaries: Sequence[dict[str, Any]]) -> dict[str, Any]:
    """Side-by-side table of counters with deltas against the first summary."""
    if len(summaries) < 2:
        raise UsageError("compare needs at least two summaries")
    digests = {s["trace"]["sha256"] for s in summaries}
    if len(digests) != 1:
        raise UsageError("summaries come from different traces")

    labels: list[str] = []
    for s in summaries:
        label = s["model"]
        n = sum(1 for l in labels if l == label or l.startswith(label + "#"))
        labels.append(label if n == 0 else f"{label}#{n + 1}")

    table = {row: [_row_value(s, row) for s in summaries] for row in COMPARE_ROWS}
    deltas = {}
    for row, values in table.items():
        base = values[0]
        deltas[row] = [
            None if base is None or v is None else v - base for v in values
        ]

    verdict = None
    by_model = {s["model"]: s for s in summaries}
    if "m1" in by_model and "m3" in by_model and by_model["m3"].get("detection_balanced"):
        m3_acc = by_model["m3"]["detection_balanced"]["balanced_accuracy"]
        m1_cycles = by_model["m1"]["total_cycles"]
        m3_cycles = by_model["m3"]["total_cycles"]
        verdict = {
            "m3_balanced_accuracy": m3_acc,
            "accuracy_bound": INDISTINGUISHABLE_ACCURACY,
            "m3_vs_m1_cycle_ratio": m3_cycles / m1_cycles if m1_cycles else None,
            "indistinguishable": m3_acc <= INDISTINGUISHABLE_ACCURACY,
        }
    return {
        "labels": labels,
        "trace_sha256": digests.pop(),
        "table": table,
        "deltas": deltas,
        "verdict": verdict,
    }


def _fmt(v: Any) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def format_comparison(result: dict[str, Any]) -> str:
    labels = result["labels"]
    width = max(len(r) for r in COMPARE_ROWS) + 2
    col = max(12, *(len(l) + 2 for l in labels))
    lines = ["metric".ljust(width) + "".join(l.rjust(col) for l in labels)]
    for row in COMPARE_ROWS:
        lines.append(row.ljust(width) + "".join(_fmt(v).rjust(col) for v in result["table"][row]))
    verdict = result["verdict"]
    if verdict is not None:
        word = "indistinguishable" if verdict["indistinguishable"] else "DISTINGUISHABLE"
        lines.append(
            f"m3 vs m1: {word} (balanced attacker accuracy "
            f"{verdict['m3_balanced_accuracy']:.4f}, bound {verdict['accuracy_bound']})"
        )
    return "\n".join(lines) + "\n"


def cmd_compare(args: argparse.Namespace) -> int:
    summaries = []
    for path in args.summaries:
        with open(path, encoding="utf-8") as fh:
            try:
                summaries.append(json.load(fh))
            except json.JSONDecodeError as exc:
                raise TraceFormatError(f"{path}: bad summary JSON: {exc}") from None
    result = compare_summaries(summaries)
    sys.stdout.write(format_comparison(result))
    if args.json:
        _write_text(args.json, _dump_json(result))
    return EXIT_OK


def _add_spoiler_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--pages", type=int, default=128)
    p.add_argument("--rounds", type=int, default=20)
    p.add_argument("--window", type=int, default=56)
    p.add_argument("--aliased", type=int, default=8, help="number of planted aliased pages")
    p.add_argument("--offset", type=lambda s: int(s, 0), default=0x040, help="shared page offset")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mobsim", description=__doc__.split("\n\n")[0].strip())
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a trace file")
    gsub = gen.add_subparsers(dest="generator", required=True)
    sp = gsub.add_parser("spoiler", help="store-window fill + probe loads")
    _add_spoiler_flags(sp)
    bp = gsub.add_parser("benign", help="benign workload")
    bp.add_argument("--kind", choices=BENIGN_KINDS, required=True)
    bp.add_argument("--ops", type=int, required=True)
    mp = gsub.add_parser("mixed", help="spoiler rounds interleaved with benign bursts")
    _add_spoiler_flags(mp)
    mp.add_argument("--benign-per-round", type=int, default=32)
    mp.add_argument("--benign-kind", choices=BENIGN_KINDS, default="random")
    for p in (sp, bp, mp):
        p.add_argument("--seed", type=int, required=True)
        p.add_argument("-o", "--out", default="-", help="output path ('-' for stdout)")
        p.set_defaults(func=cmd_gen)

    defaults = SimConfig(Model.M3, 0)
    rp = sub.add_parser("run", help="simulate a trace under one model")
    rp.add_argument("trace")
    rp.add_argument("--model", choices=[m.value for m in Model], required=True)
    rp.add_argument("--seed", type=int, required=True, help="mask generator seed")
    rp.add_argument("--out-dir", required=True)
    rp.add_argument("--prefix", help="output file prefix (default: model name)")
    rp.add_argument("--sab-capacity", type=int, default=defaults.sab_capacity)
    rp.add_argument("--mask-width", type=int, default=None)
    rp.add_argument("--resolve-delay", type=int, default=defaults.store_resolve_delay)
    rp.add_argument("--drain-delay", type=int, default=defaults.drain_delay)
    rp.add_argument("--max-reissues", type=int, default=defaults.max_reissues)
    rp.add_argument("--base-load", type=int, default=defaults.latencies.base_load)
    rp.add_argument("--forward", type=int, default=defaults.latencies.forward)
    rp.add_argument("--alias4k-stall", type=int, default=defaults.latencies.alias4k_stall)
    rp.add_argument("--squash-penalty", type=int, default=defaults.latencies.squash_penalty)
    rp.set_defaults(func=cmd_run)

    cp = sub.add_parser("compare", help="compare run summaries over the same trace")
    cp.add_argument("summaries", nargs="+")
    cp.add_argument("--json", help="also write the comparison as JSON")
    cp.set_defaults(func=cmd_compare)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"mobsim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, TraceFormatError) as exc:
        print(f"mobsim: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SimulationError, AddressError, MetricsError, ValueError) as exc:
        print(f"mobsim: simulation error: {exc}", file=sys.stderr)
        return EXIT_SIM


if __name__ == "__main__":
    sys.exit(main())
