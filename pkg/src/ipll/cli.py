"""Command line entry point: ``ipll gen | run | ablate | report``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

from ipll import io
from ipll.config import VARIANTS, dump_config, load_config, load_generation_spec
from ipll.datagen import generate_stream
from ipll.errors import ConfigError, IPLLError
from ipll.trainer import average_incremental_accuracy, run_stream

log = logging.getLogger("ipll")


def cmd_gen(args) -> None:
    dspec, sspec = load_generation_spec(args.spec)
    stream = generate_stream(dspec, sspec)
    io.write_stream(args.out, stream)
    log.info("wrote %d training samples over %d tasks to %s",
             sum(len(t) for t in stream.tasks), stream.num_tasks, args.out)


def run_one(stream, config, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    report, state = run_stream(stream, config)
    io.write_metrics(out_dir / "metrics.csv", report)
    io.write_memory(out_dir / "memory.csv", report)
    io.write_separation(out_dir / "separation.csv", report)
    io.write_losses(out_dir / "losses.csv", report)
    io.write_checkpoint(out_dir / "checkpoint.txt", state.model, state.bank)
    (out_dir / "config.txt").write_text(dump_config(config))
    for event in state.events:
        log.warning(event)
    log.info("%s: average incremental accuracy %.2f", config.variant, report.average_incremental_accuracy)


def cmd_run(args) -> None:
    stream = io.read_stream(args.stream)
    run_one(stream, load_config(args.config), Path(args.out_dir))


def cmd_ablate(args) -> None:
    stream = io.read_stream(args.stream)
    base = load_config(args.config)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise ConfigError(f"unknown variants {unknown}; expected some of {VARIANTS}")
    for v in variants:
        run_one(stream, replace(base, variant=v), Path(args.out_dir) / v)


def cmd_report(args) -> None:
    in_dir = Path(args.in_dir)
    runs = sorted(p.parent for p in in_dir.glob("*/metrics.csv"))
    if (in_dir / "metrics.csv").exists():
        runs.insert(0, in_dir)
    if not runs:
        raise IPLLError(f"no metrics.csv found under {in_dir}")
    summary, long_rows = [], []
    for run in runs:
        name = run.name
        rows = io.read_metrics(run / "metrics.csv")
        accs = [r["acc_all"] for r in rows]
        final = rows[-1]
        summary.append([name, len(rows), average_incremental_accuracy(accs), final["acc_all"], final["acc_old"]])
        for r in rows:
            for metric in io.METRIC_COLUMNS[1:]:
                long_rows.append([name, int(r["task"]), metric, r[metric]])
    out = Path(args.out) if args.out else in_dir
    io._write_rows(out / "summary.csv", ("variant", "tasks", "avg_incremental_acc", "final_acc_all", "final_acc_old"), summary)
    io._write_rows(out / "long.csv", ("variant", "task", "metric", "value"), long_rows)
    with open(out / "summary.csv") as fh:
        for row in csv.reader(fh):
            print(",".join(row))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ipll", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a blurry partially-labeled stream")
    p.add_argument("--spec", required=True, help="key = value generation spec")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("run", help="train one variant on a stream")
    p.add_argument("--stream", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ablate", help="train several variants on one stream")
    p.add_argument("--stream", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--variants", required=True, help="comma separated, e.g. PGDR,NO_MEMORY")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="aggregate runs into summary.csv and long.csv")
    p.add_argument("--in-dir", required=True)
    p.add_argument("--out", help="output directory (default: --in-dir)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (IPLLError, OSError) as exc:
        print(f"ipll: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
