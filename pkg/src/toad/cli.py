"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 data error, 1 anything else.
Every RunConfig key doubles as a flag (--key value); flags win over the
--config file. TOAD_THREADS caps evaluation worker threads.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields

from . import commands
from .config import RunConfig, apply_overrides, load_config
from .errors import ConfigError, DataError, ToadError


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="run configuration file")
    for f in fields(RunConfig):
        parser.add_argument(f"--{f.name.replace('_', '-')}", dest=f"cfg_{f.name}",
                            metavar="V", default=None)


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {f.name: getattr(args, f"cfg_{f.name}")
                 for f in fields(RunConfig)
                 if getattr(args, f"cfg_{f.name}", None) is not None}
    return apply_overrides(cfg, overrides).validate()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="toad",
        description="Streaming per-frame action detection over pre-extracted "
                    "features with a frozen text-embedding classifier.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model")
    _add_config_flags(p_train)
    p_train.add_argument("--resume", help="checkpoint to resume from")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_config_flags(p_eval)
    p_eval.add_argument("--checkpoint", required=True)

    p_zero = sub.add_parser("zeroshot", help="evaluate without training")
    _add_config_flags(p_zero)
    p_zero.add_argument("--checkpoint", default=None)

    p_few = sub.add_parser("fewshot", help="train/evaluate at 1,2,4,8 shots")
    _add_config_flags(p_few)

    p_abl = sub.add_parser("ablate", help="sweep one configuration axis")
    _add_config_flags(p_abl)
    p_abl.add_argument("--axis", required=True)

    p_stream = sub.add_parser("stream", help="score frames from a file or stdin")
    _add_config_flags(p_stream)
    p_stream.add_argument("--checkpoint", required=True)
    p_stream.add_argument("--vocab", required=True)
    p_stream.add_argument("--input", default="-",
                          help="feature file, or '-' for length-prefixed stdin")

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset")
    _add_config_flags(p_synth)
    p_synth.add_argument("--classes", type=int, required=True)
    p_synth.add_argument("--dim", type=int, required=True)
    p_synth.add_argument("--videos", type=int, required=True)
    p_synth.add_argument("--frames", type=int, required=True)
    p_synth.add_argument("--sep", type=float, required=True)
    p_synth.add_argument("--noise", type=float, default=1.0)
    p_synth.add_argument("--background", type=float, default=0.25)
    p_synth.add_argument("--action-len", type=int, default=90)
    p_synth.add_argument("--cyclic", action="store_true")
    p_synth.add_argument("--anchor-seed", type=int, default=None)
    p_synth.add_argument("--fps", type=float, default=30.0)
    return parser


def run(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    cfg = _resolve_config(args)
    if args.command == "train":
        commands.cmd_train(cfg, resume=args.resume)
    elif args.command == "eval":
        commands.cmd_eval(cfg, args.checkpoint)
    elif args.command == "zeroshot":
        commands.cmd_zeroshot(cfg, args.checkpoint)
    elif args.command == "fewshot":
        commands.cmd_fewshot(cfg)
    elif args.command == "ablate":
        commands.cmd_ablate(cfg, args.axis)
    elif args.command == "stream":
        commands.cmd_stream(cfg, args.checkpoint, args.vocab, args.input)
    elif args.command == "synth":
        commands.cmd_synth(cfg, args.classes, args.dim, args.videos, args.frames,
                           args.sep, noise=args.noise, background=args.background,
                           action_len=args.action_len, cyclic=args.cyclic,
                           anchor_seed=args.anchor_seed, fps=args.fps)
    return 0


def main(argv: list[str] | None = None) -> int:
    try:
        return run(argv)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except DataError as err:
        print(f"data error: {err}", file=sys.stderr)
        return 3
    except ToadError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
