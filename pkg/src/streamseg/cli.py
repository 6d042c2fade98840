"""Command-line entry point: synth, train, eval, infer, gradcheck.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
failure. Behavior comes from an INI config plus --set overrides; named
profiles carry the published clip geometries.
"""
from __future__ import annotations

import argparse
import struct
import sys
import time
from pathlib import Path

import numpy as np

from . import gradcheck as gradcheck_mod
from .autodiff import Tensor, no_grad
from .config import (ConfigError, apply_overrides, build_model_config,
                     build_trainer_config, load_config)
from .dataio import (FEATURE_MAGIC, FORMAT_VERSION, METRIC_CSV_HEADER, FormatError,
                     load_checkpoint, metric_csv_row, read_classmap,
                     restore_parameters)
from .head import decide
from .metrics import evaluate_dataset, format_report, segments_text
from .model import SegmentationModel
from .synthetic import SynthConfig, gen_dataset, load_dataset
from .training import NumericalError, evaluate_model, run_training

__all__ = ["main"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        raise ConfigError(message)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI config file")
    p.add_argument("--profile", help="named clip-geometry profile")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override a single config entry (repeatable)")
    p.add_argument("--data", help="dataset directory (overrides [data] root)")
    p.add_argument("--out", help="output directory (overrides [data] out)")


def _load_run_config(args):
    cfg = load_config(args.config, args.profile)
    apply_overrides(cfg, args.set)
    if args.data:
        cfg["data"]["root"] = args.data
    if getattr(args, "out", None):
        cfg["data"]["out"] = args.out
    return cfg


def _load_data(cfg):
    root = cfg["data"]["root"]
    if not root:
        raise ConfigError("no dataset directory; pass --data or set [data] root")
    if not Path(root).is_dir():
        raise FormatError(f"dataset directory {root} does not exist")
    return load_dataset(root)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="streamseg",
                     description="Streaming temporal action segmentation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--classes", type=int, default=SynthConfig.num_classes)
    p.add_argument("--width", type=int, default=SynthConfig.width)
    p.add_argument("--train-videos", type=int, default=SynthConfig.train_videos)
    p.add_argument("--test-videos", type=int, default=SynthConfig.test_videos)
    p.add_argument("--t-min", type=int, default=SynthConfig.t_min)
    p.add_argument("--t-max", type=int, default=SynthConfig.t_max)
    p.add_argument("--dur-min", type=int, default=SynthConfig.dur_min)
    p.add_argument("--dur-max", type=int, default=SynthConfig.dur_max)
    p.add_argument("--center-scale", type=float, default=SynthConfig.center_scale)
    p.add_argument("--sigma", type=float, default=SynthConfig.sigma)
    p.add_argument("--blur", type=int, default=SynthConfig.blur)
    p.add_argument("--seed", type=int, default=SynthConfig.seed)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train a model")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("infer", help="stream one feature file through a checkpoint")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True, help="input .feat file")
    p.add_argument("--labels-out", required=True, help="output label file")
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("gradcheck", help="finite-difference checks of all kernels")
    p.add_argument("--cases", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)
    return parser


def _cmd_synth(args) -> int:
    cfg = SynthConfig(
        num_classes=args.classes, width=args.width,
        train_videos=args.train_videos, test_videos=args.test_videos,
        t_min=args.t_min, t_max=args.t_max,
        dur_min=args.dur_min, dur_max=args.dur_max,
        center_scale=args.center_scale, sigma=args.sigma, blur=args.blur,
        seed=args.seed)
    entries = gen_dataset(cfg, args.out)
    print(f"wrote {len(entries)} videos to {args.out}")
    return 0


def _cmd_train(args) -> int:
    cfg = _load_run_config(args)
    train_streams, test_streams = _load_data(cfg)
    model_cfg = build_model_config(cfg, input_width=train_streams[0].width,
                                   num_classes=train_streams[0].num_classes)
    trainer_cfg = build_trainer_config(cfg)
    out_dir = cfg["data"]["out"]
    run_training(train_streams, test_streams, model_cfg, trainer_cfg, out_dir,
                 log=print)
    print(f"checkpoints and metrics.csv written to {out_dir}")
    return 0


def _restore_model(cfg, checkpoint: str, input_width: int,
                   num_classes: int) -> SegmentationModel:
    model_cfg = build_model_config(cfg, input_width=input_width,
                                   num_classes=num_classes)
    model = SegmentationModel(model_cfg, np.random.default_rng(0))
    restore_parameters(model.named_parameters(), load_checkpoint(checkpoint))
    return model


def _cmd_eval(args) -> int:
    cfg = _load_run_config(args)
    train_streams, test_streams = _load_data(cfg)
    streams = train_streams if args.split == "train" else test_streams
    if not streams:
        raise FormatError(f"split {args.split!r} has no videos")
    model = _restore_model(cfg, args.checkpoint, streams[0].width,
                           streams[0].num_classes)
    out_dir = Path(cfg["data"]["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    pairs = []
    for stream in streams:
        predictions, _ = model.run_episode(stream)
        pairs.append((predictions, stream.labels))
        (out_dir / f"{stream.id}.segments.txt").write_text(segments_text(predictions))
    report = evaluate_dataset(pairs)
    text = format_report(report)
    (out_dir / "report.txt").write_text(text)
    (out_dir / "report.csv").write_text(
        METRIC_CSV_HEADER + "\n"
        + metric_csv_row(0, args.split, report.acc, report.edit, report.f1) + "\n")
    print(text, end="")
    return 0


def _cmd_infer(args) -> int:
    cfg = _load_run_config(args)
    root = cfg["data"]["root"]
    if not root:
        raise ConfigError("infer needs --data for the class map")
    names = read_classmap(Path(root) / "classes.txt")
    with open(args.features, "rb") as fh:
        magic = fh.read(4)
        if magic != FEATURE_MAGIC:
            raise FormatError(f"{args.features}: bad magic {magic!r}")
        version, total, width = struct.unpack("<III", fh.read(12))
        if version != FORMAT_VERSION:
            raise FormatError(f"{args.features}: unsupported version {version}")
        model = _restore_model(cfg, args.checkpoint, width, len(names))
        spec = model.cfg.clip
        latencies = []
        with open(args.labels_out, "w") as out, no_grad():
            bank = model.fresh_bank()
            done = 0
            while done < total:
                block_len = min(spec.L, total - done)
                payload = fh.read(4 * block_len * width)
                if len(payload) != 4 * block_len * width:
                    raise FormatError(f"{args.features}: truncated at frame {done}")
                block = np.frombuffer(payload, dtype="<f4").reshape(
                    block_len, width).astype(np.float64)
                start = time.perf_counter()
                rows = [min(b * spec.p, block_len - 1) for b in range(spec.k)]
                action, bank = model.forward_sampled(block[rows], block_len, bank)
                bank = bank.detach()
                labels = decide(action, spec)
                latencies.append(time.perf_counter() - start)
                out.write("".join(f"{int(v)}\n" for v in labels))
                out.flush()
                done += block_len
    stats = (f"clips {len(latencies)}\n"
             f"mean_ms {1e3 * float(np.mean(latencies)):.3f}\n"
             f"max_ms {1e3 * float(np.max(latencies)):.3f}\n")
    Path(str(args.labels_out) + ".stats.txt").write_text(stats)
    print(stats, end="")
    return 0


def _cmd_gradcheck(args) -> int:
    results = gradcheck_mod.run_all(cases=args.cases, seed=args.seed)
    print(gradcheck_mod.format_table(results), end="")
    if all(r.passed for r in results):
        return 0
    print("gradient check FAILED", file=sys.stderr)
    return 3


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, FileNotFoundError, NotADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
