"""Command line entry point: ``owvis generate | train | eval | infer | verify``.

Exit codes: 0 success, 1 usage error, 2 data error (unreadable or
inconsistent inputs, occupied output directory, diverged training),
3 verification failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import numerics as nx

log = logging.getLogger("owvis")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3
CONFIG_ECHO = "config.txt"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fresh_dir(path) -> Path:
    p = Path(path)
    if p.exists() and (not p.is_dir() or any(p.iterdir())):
        raise DataError(f"output directory {p} exists and is not empty")
    p.mkdir(parents=True, exist_ok=True)
    return p


def _load_config(path, overrides=None):
    from .config import Config, ConfigError

    try:
        cfg = Config.load(path) if path else Config()
        if overrides:
            cfg = cfg.replace(**overrides)
    except FileNotFoundError as exc:
        raise UsageError(f"config file not found: {path}") from exc
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    return cfg


def _read_data(data_dir, split=None):
    from .synthworld import DatasetError, read_dataset

    try:
        return read_dataset(data_dir, split)
    except (DatasetError, OSError) as exc:
        raise DataError(str(exc)) from exc


def _load_model(path):
    from .checkpoint import CheckpointError, load_checkpoint

    try:
        return load_checkpoint(path)
    except (CheckpointError, OSError) as exc:
        raise DataError(f"cannot load checkpoint {path}: {exc}") from exc


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_generate(args) -> int:
    from .caption_head import Vocabulary
    from .synthworld import generate_dataset, world_to_dict, write_dataset

    overrides = {"seed": args.seed} if args.seed is not None else None
    cfg = _load_config(args.config, overrides)
    out = _fresh_dir(args.out)
    videos, meta = generate_dataset(cfg.dataset_spec())
    meta["seed"] = cfg.seed
    meta["world"] = world_to_dict(cfg.world())
    meta["vocabulary"] = Vocabulary().tokens
    write_dataset(out, videos, meta)
    cfg.save(out / CONFIG_ECHO)
    print(f"wrote {len(videos)} videos to {out} (held out: {', '.join(meta['heldout'])})")
    return EXIT_OK


def cmd_train(args) -> int:
    from .checkpoint import save_checkpoint
    from .model import OWVisModel
    from .plotting import plot_losses
    from .train import TrainingDiverged, train, write_loss_log

    overrides = {}
    if args.steps is not None:
        overrides["train_steps"] = args.steps
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.lr is not None:
        overrides["lr"] = args.lr
    if args.no_open_queries:
        overrides["open_queries"] = False
    if args.no_contrastive:
        overrides["lambda_cont"] = 0.0
    if args.no_caption_mask:
        overrides["caption_mask"] = False
    if args.decoder_mode:
        overrides["decoder_mode"] = args.decoder_mode
    config_path = args.config
    if config_path is None and (Path(args.data) / CONFIG_ECHO).exists():
        config_path = Path(args.data) / CONFIG_ECHO
    cfg = _load_config(config_path, overrides)
    videos, manifest = _read_data(args.data)
    if manifest.get("train_classes") and list(manifest["train_classes"]) != cfg.train_classes():
        raise DataError(f"dataset trains on {manifest['train_classes']} but the config implies {cfg.train_classes()}")
    out = _fresh_dir(args.out)
    nx.set_precision(cfg.precision)
    model = OWVisModel(cfg)
    try:
        history = train(model, videos)
    except TrainingDiverged as exc:
        print(f"owvis train: training diverged: {exc}", file=sys.stderr)
        print("owvis train: try a smaller lr or check the dataset for corrupt frames", file=sys.stderr)
        return EXIT_DATA
    save_checkpoint(out / "model.owck", model)
    write_loss_log(out / "losses.csv", history)
    if history:
        plot_losses(history, out / "losses.png")
    cfg.save(out / CONFIG_ECHO)
    last = history[-1]["L_total"] if history else float("nan")
    print(f"trained {len(history)} steps, final L_total {last:.4f}; checkpoint {out / 'model.owck'}")
    return EXIT_OK


def _check_vocab(model, manifest, videos) -> None:
    vocab = manifest.get("vocabulary")
    if vocab is not None and list(vocab) != model.vocab.tokens:
        raise DataError("vocabulary mismatch between checkpoint and dataset")
    for v in videos:
        for fr in v.gt:
            for o in fr:
                missing = [w for w in o.caption if w not in model.vocab]
                if missing:
                    raise DataError(f"vocabulary mismatch: dataset word {missing[0]!r} unknown to the checkpoint")


def cmd_eval(args) -> int:
    from .evalkit import evaluate, gt_tracks, pred_tracks
    from .plotting import plot_owta_curve
    from .tracker import TrackerParams, process_video, tracks_to_json

    model = _load_model(args.ckpt)
    nx.set_precision(model.cfg.precision)
    videos, manifest = _read_data(args.data, args.split)
    if not videos:
        raise DataError(f"no videos in split {args.split!r}")
    _check_vocab(model, manifest, videos)
    out = _fresh_dir(args.out)
    params = TrackerParams.from_config(model.cfg)
    class_names = manifest.get("train_classes") or model.cfg.train_classes()
    (out / "tracks").mkdir()
    preds = []
    for v in videos:
        ts = process_video(v.frames, model, params)
        (out / "tracks" / f"{v.name}.json").write_text(json.dumps(tracks_to_json(ts, class_names)))
        preds.append(pred_tracks(ts, len(v.frames)))
    common = manifest.get("common") or model.cfg.train_classes()
    uncommon = manifest.get("uncommon") or model.cfg.heldout_classes()
    report = evaluate([gt_tracks(v) for v in videos], preds, common, uncommon)
    report.write(out / "report.json", out / "report.csv")
    plot_owta_curve(report, out / "owta.png")
    model.cfg.save(out / CONFIG_ECHO)
    s = report.splits
    print(f"OWTA all {s['all']['OWTA']:.4f}  common {s['common']['OWTA']:.4f}  uncommon {s['uncommon']['OWTA']:.4f}")
    print(f"CHOTA {report.CHOTA:.4f}  DetA {report.DetA:.4f}  AssA {report.AssA:.4f}  CapA {report.CapA:.4f}")
    print(f"AP {report.AP:.4f}  AP50 {report.AP50:.4f}  AP75 {report.AP75:.4f}")
    return EXIT_OK


def _read_video(path) -> np.ndarray:
    from .synthworld import DatasetError, read_frames

    p = Path(path)
    if p.is_dir():
        p = p / "frames.owt"
    try:
        return read_frames(p)
    except (DatasetError, OSError) as exc:
        raise DataError(f"cannot read video {path}: {exc}") from exc


def cmd_infer(args) -> int:
    from .render import render_video
    from .tracker import TrackerParams, process_video, tracks_to_json

    model = _load_model(args.ckpt)
    nx.set_precision(model.cfg.precision)
    frames = _read_video(args.video)
    if len(frames) == 0:
        raise DataError("video has no frames")
    out = _fresh_dir(args.out)
    ts = process_video(frames, model, TrackerParams.from_config(model.cfg))
    paths = render_video(frames, ts, out)
    (out / "tracks.json").write_text(json.dumps(tracks_to_json(ts, model.cfg.train_classes())))
    model.cfg.save(out / CONFIG_ECHO)
    print(f"rendered {len(paths)} frames with {len(ts.tracks)} tracks to {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_suite

    results = run_suite(grad_seeds=args.grad_seeds, hungarian_n=args.hungarian, progress=print)
    failed = [r for r in results if not r.passed]
    for r in failed:
        print(r.line())
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_VERIFY if failed else EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="owvis", description="Open-world video instance segmentation and captioning on synthetic scenes.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("generate", help="build a synthetic dataset with an open-world split")
    g.add_argument("--config", help="key = value config file")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True, help="output directory (must be empty or absent)")

    t = sub.add_parser("train", help="train a model on a generated dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="output directory for model.owck and the loss log")
    t.add_argument("--config", help="defaults to the config echoed into the dataset directory")
    t.add_argument("--steps", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--no-open-queries", action="store_true", help="drop open-world queries and their loss")
    t.add_argument("--no-contrastive", action="store_true", help="set the inter-query contrastive weight to 0")
    t.add_argument("--no-caption-mask", action="store_true", help="caption cross-attention sees the whole clip")
    t.add_argument("--decoder-mode", choices=("trainable", "frozen-random"))

    e = sub.add_parser("eval", help="track, caption and score the eval split")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True, help="report directory")
    e.add_argument("--split", default="eval")

    i = sub.add_parser("infer", help="render tracked masks and captions for one video")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--video", required=True, help="frames.owt file or a video directory")
    i.add_argument("--out", required=True)

    v = sub.add_parser("verify", help="run the oracle suite")
    v.add_argument("--grad-seeds", type=int, default=20)
    v.add_argument("--hungarian", type=int, default=1000)
    return p


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "infer": cmd_infer, "verify": cmd_verify}


def _thread_limit():
    raw = os.environ.get("OWVIS_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError as exc:
        raise UsageError(f"OWVIS_THREADS must be a positive integer, got {raw!r}") from exc
    if n < 1:
        raise UsageError("OWVIS_THREADS must be >= 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    prev_precision = nx.precision_name()
    try:
        limiter = _thread_limit()
        try:
            return COMMANDS[args.command](args)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
    except UsageError as exc:
        print(f"owvis {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"owvis {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    finally:
        nx.set_precision(prev_precision)


if __name__ == "__main__":
    sys.exit(main())
