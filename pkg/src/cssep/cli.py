"""Command-line interface.

Subcommands: simulate, train, separate, evaluate, count-params. Exit codes:
0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import config as config_mod
from .checkpoint import load_checkpoint
from .dsp import Waveform, read_wav, write_wav
from .errors import CssepError
from .evaluate import evaluate
from .pipeline import separate_stream
from .spatialsim import build_dataset, build_meetings
from .train import profile_param_count, train, train_counter


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _load_section(args, section: str) -> dict:
    data = config_mod.load_config(args.config) if args.config else {}
    merged = dict(data.get(section, {}))
    config_mod.apply_overrides(merged, args.set or [])
    return merged


def _cmd_simulate(args) -> int:
    section = _load_section(args, "simulate")
    cfg = config_mod.dataset_config(section, workers=args.workers)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / ("meetings.jsonl" if args.meetings else "manifest.jsonl")
    builder = build_meetings if args.meetings else build_dataset
    builder(manifest, args.count, cfg)
    print(f"wrote {args.count} examples to {manifest}")
    return 0


def _cmd_train(args) -> int:
    section = _load_section(args, "train")
    overrides = {
        "train_manifest": args.manifest,
        "checkpoint_out": args.out,
    }
    for name in ("criterion", "steps", "profile", "seed", "init_from"):
        value = getattr(args, name.replace("-", "_"), None)
        if value is not None:
            overrides[name] = value
    if args.multires is not None:
        overrides["multiresolution"] = args.multires
    cfg = config_mod.train_config(section, **overrides)
    if args.kind == "counter":
        path = train_counter(cfg)
    else:
        path = train(cfg)
    print(f"checkpoint written to {path}")
    return 0


def _cmd_separate(args) -> int:
    bundle = load_checkpoint(args.checkpoint)
    recording = read_wav(args.input)
    result = separate_stream(recording, bundle, use_counter=not args.no_counter)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for n in range(2):
        write_wav(out_dir / f"stream{n + 1}.wav", Waveform(result.streams[n]))
    (out_dir / "trace.json").write_text(json.dumps(result.trace, indent=2) + "\n")
    print(f"streams and trace written to {out_dir}")
    return 0


def _cmd_evaluate(args) -> int:
    bundle = load_checkpoint(args.checkpoint)
    report = evaluate(
        bundle,
        args.manifest,
        mode=args.mode,
        limit=args.limit,
        use_counter=not args.no_counter,
    )
    if args.out:
        report.save(args.out)
    print(report.to_json())
    return 0


def _cmd_count_params(args) -> int:
    print(profile_param_count(args.profile))
    return 0


def _add_config_args(parser):
    parser.add_argument("--config", help="YAML config file")
    parser.add_argument(
        "--set", action="append", metavar="KEY=VALUE", help="override a config key"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cssep", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render a simulated two-speaker dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--meetings", action="store_true", help="render long meetings")
    p.add_argument("--workers", type=int, default=1)
    _add_config_args(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("train", help="train the separator or the counter")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--kind", choices=("separator", "counter"), default="separator")
    p.add_argument("--criterion", choices=("pit", "lbt-azimuth", "lbt-distance"))
    p.add_argument("--multires", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--steps", type=int)
    p.add_argument("--profile", choices=("paper", "toy"))
    p.add_argument("--seed", type=int)
    p.add_argument("--init-from", help="separator checkpoint to extend (counter)")
    _add_config_args(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("separate", help="separate a multichannel recording")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="multichannel WAV")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-counter", action="store_true")
    p.set_defaults(func=_cmd_separate)

    p = sub.add_parser("evaluate", help="score a checkpoint on a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--mode", choices=("utterance", "continuous"), default="utterance")
    p.add_argument("--limit", type=int)
    p.add_argument("--out", help="write the JSON report here")
    p.add_argument("--no-counter", action="store_true")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("count-params", help="print the separator parameter count")
    p.add_argument("--profile", choices=("paper", "toy"), default="paper")
    p.set_defaults(func=_cmd_count_params)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except CssepError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"unexpected error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
