"""Command-line surface: train, eval, predict, selftest, params."""
import argparse
import logging
import sys

import numpy as np

from . import selftest, train as training
from .checkpoint import load_checkpoint
from .config import load_train_config
from .data import SplitSpec, load_dataset, split, synth_dataset
from .errors import ConfigError, ContractError, DataError, DimensionError, \
    NumericError
from .network import build_model

log = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """Routes usage errors through the normal config-error exit path."""

    def error(self, message):
        raise ConfigError(message)


def _parse_synth(spec):
    """'n=8,size=64' -> (8, 64)."""
    fields = {}
    for part in spec.split(","):
        key, eq, value = part.partition("=")
        if not eq or key.strip() not in ("n", "size"):
            raise ConfigError(f"--synth expects 'n=K,size=S', got {spec!r}")
        try:
            fields[key.strip()] = int(value)
        except ValueError:
            raise ConfigError(f"--synth values must be integers, got {spec!r}") from None
    if set(fields) != {"n", "size"}:
        raise ConfigError(f"--synth expects both n and size, got {spec!r}")
    return fields["n"], fields["size"]


def _load_samples(args, seed):
    if args.synth is not None:
        n, size = _parse_synth(args.synth)
        return synth_dataset(n, size, np.random.default_rng(seed))
    return load_dataset(args.data)


def _cmd_train(args):
    cfg = load_train_config(args.config)
    samples = _load_samples(args, cfg.seed)
    train_set, val_set, _ = split(samples, SplitSpec(seed=args.split_seed))
    if not val_set:
        log.warning("validation split is empty; validating on the training set")
        val_set = train_set
    result = training.train(cfg, train_set, val_set, args.out)
    print(f"best val dice {result.best_val_dice:.4f} at epoch {result.best_epoch}")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"history:    {result.history_path}")
    return 0


def _cmd_eval(args):
    model, _ = load_checkpoint(args.ckpt)
    samples = _load_samples(args, seed=0)
    parts = dict(zip(("train", "val", "test"), split(samples, SplitSpec(seed=args.split_seed))))
    part = parts[args.split]
    if not part:
        raise ConfigError(f"the {args.split} split is empty")
    report = training.evaluate(model, part)
    report.save(args.report)
    agg = report.aggregate()
    print(f"wrote {args.report} ({len(report.rows)} images)")
    print(", ".join(f"{k} {m:.4f}±{s:.4f}" for k, (m, s) in agg.items()))
    return 0


def _cmd_predict(args):
    model, _ = load_checkpoint(args.ckpt)
    training.predict(model, args.image, args.out, args.prob)
    print(f"wrote {args.out}")
    return 0


def _cmd_selftest(args):
    return 0 if selftest.run() else 2


def _cmd_params(args):
    cfg = load_train_config(args.config)
    report = build_model(cfg.model).param_report()
    width = max(len(name) for name in report)
    for name, count in report.items():
        print(f"{name:<{width}}  {count:>12,}")
    return 0


def build_parser():
    parser = _Parser(prog="wdffu", description="Breast-ultrasound segmentation "
                     "with a wavelet-guided state-space network.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_data_source(p):
        group = p.add_mutually_exclusive_group(required=True)
        group.add_argument("--data", help="dataset root with benign/ and malignant/")
        group.add_argument("--synth", help="synthetic set spec, e.g. n=8,size=64")
        p.add_argument("--split-seed", type=int, default=0,
                       help="seed for the train/val/test partition (default 0)")

    p = sub.add_parser("train", help="train a model and keep the best checkpoint")
    p.add_argument("--config", help="key = value config file")
    add_data_source(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--ckpt", required=True)
    add_data_source(p)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--report", required=True, help="CSV report path")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("predict", help="segment one image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="output mask PNG")
    p.add_argument("--prob", help="optional probability-map PNG")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("selftest", help="run built-in numerical checks")
    p.set_defaults(func=_cmd_selftest)

    p = sub.add_parser("params", help="print the parameter report")
    p.add_argument("--config", help="key = value config file")
    p.set_defaults(func=_cmd_params)
    return parser


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except (ConfigError, DimensionError, ContractError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports and exits
        print(f"unexpected error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
