"""Command-line interface.

Subcommands: ``train``, ``eval``, ``gradcheck``, ``params-table``,
``convert-text``.  On failure the process exits nonzero after printing a
single machine-parsable line ``error: <category>: <message>`` where the
category is the raising exception class.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import runner
from .data import convert_text
from .errors import SlimLstmError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slimlstm",
                                     description="LSTM gating-variant experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one training experiment")
    p_train.add_argument("--config", required=True, help="JSON experiment config")
    p_train.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                         help="override a config field")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", required=True,
                        help="JSON with data fields (task, paths, sizes); "
                             "evaluation runs on its test split")

    p_grad = sub.add_parser("gradcheck", help="verify BPTT against finite differences")
    p_grad.add_argument("--variant", default="standard")
    p_grad.add_argument("--m", type=int, default=3)
    p_grad.add_argument("--n", type=int, default=5)
    p_grad.add_argument("--T", type=int, default=7, dest="seq_len")
    p_grad.add_argument("--seed", type=int, default=0)

    sub.add_parser("params-table", help="print parameter counts per variant")

    p_conv = sub.add_parser("convert-text", help="raw labeled text -> token id file")
    p_conv.add_argument("--in", dest="in_path", required=True)
    p_conv.add_argument("--out", dest="out_path", required=True)
    p_conv.add_argument("--vocab", type=int, required=True)
    return parser


def _cmd_train(args) -> int:
    config_dict = json.loads(Path(args.config).read_text(encoding="utf-8"))
    config = runner.ExperimentConfig.from_dict(config_dict).with_overrides(args.set)
    history, checkpoint = runner.train(config)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    runner.emit_metrics_csv(history, out_dir / "metrics.csv")
    if history:
        runner.emit_curves_svg(history, out_dir / "curves.svg")
    runner.save_checkpoint(checkpoint, out_dir / "best.ckpt")
    best = checkpoint.meta["best_epoch"]
    best_acc = max((r.test_acc for r in history), default=float("nan"))
    print(f"trained {config.variant}/{config.task}: {len(history)} epochs, "
          f"best epoch {best}, best test accuracy {best_acc:.4f}")
    print(f"outputs written to {out_dir}")
    return 0


def _cmd_eval(args) -> int:
    checkpoint = runner.load_checkpoint(args.checkpoint)
    spec = json.loads(Path(args.data).read_text(encoding="utf-8"))
    merged = dict(checkpoint.config)
    merged.update(spec)
    config = runner.ExperimentConfig.from_dict(merged)
    _, test_ds = runner.load_datasets(config)
    loss, acc = runner.evaluate(checkpoint, test_ds)
    print(f"loss {loss:.6f} accuracy {acc:.4f} over {len(test_ds)} samples")
    return 0


def _cmd_gradcheck(args) -> int:
    err, passed = runner.gradcheck(args.variant, args.m, args.n, args.seq_len, args.seed)
    status = "PASS" if passed else "FAIL"
    print(f"{args.variant} m={args.m} n={args.n} T={args.seq_len} seed={args.seed}: "
          f"max relative error {err:.3e} -> {status} (tolerance 1e-06)")
    return 0 if passed else 1


def _cmd_convert(args) -> int:
    count = convert_text(args.in_path, args.out_path, args.vocab)
    print(f"wrote {count} samples to {args.out_path} (vocab limit {args.vocab})")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "gradcheck":
            return _cmd_gradcheck(args)
        if args.command == "params-table":
            print(runner.cli_params_table())
            return 0
        if args.command == "convert-text":
            return _cmd_convert(args)
        raise AssertionError(f"unhandled command {args.command}")
    except SlimLstmError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: IOError: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
