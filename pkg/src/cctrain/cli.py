"""Command line entry point.

    cctrain gen-data|pretrain|train|evaluate|compare-orders --config PATH [--out DIR] [--seed-offset N]

Exit codes: 0 on success, 1 for invalid input (config, data, contract), 2 for
runtime failures (numeric blow-up, scheduling, I/O).
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import pipeline
from .config import load_config
from .errors import NumericError, SchedulingError

log = logging.getLogger("cctrain")


def _prepare(args):
    cfg = load_config(args.config)
    if args.seed_offset:
        cfg = cfg.replace(seeds=cfg.seeds.offset(args.seed_offset))
    if args.out:
        cfg = cfg.replace(output_dir=str(args.out))
    return cfg


def cmd_gen_data(args) -> None:
    cfg = _prepare(args)
    path = pipeline.write_dataset(cfg, cfg.output_dir)
    print(path)


def cmd_pretrain(args) -> None:
    cfg = _prepare(args)
    pipeline.run_pretrain(cfg, cfg.output_dir)
    print(cfg.output_dir)


def cmd_train(args) -> None:
    cfg = _prepare(args)
    result = pipeline.run_pipeline(cfg, cfg.output_dir)
    print(f"{cfg.output_dir}: {len(result.log.stages)} stages, {result.log.total_epochs} epochs")


def cmd_evaluate(args) -> None:
    cfg = _prepare(args)
    ev = pipeline.evaluate_run(cfg.output_dir)
    print(f"mean prefix AUC {ev.profile.mean:.4f}  BWT {ev.bwt:+.4f}  FWT {ev.fwt:+.4f}  "
          f"PI non-coverage {ev.noncoverage:.3f}")


def cmd_compare_orders(args) -> None:
    cfg = _prepare(args)
    print(pipeline.compare_orders(cfg, out_dir=cfg.output_dir))


COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "compare-orders": cmd_compare_orders,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cctrain", description="Confidence-guided curriculum training for prefix classification.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run config")
        p.add_argument("--out", default=None, help="output directory (overrides output_dir)")
        p.add_argument("--seed-offset", type=int, default=0, help="added to every seed")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (NumericError, SchedulingError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        # every validation error in the package derives from ValueError
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
