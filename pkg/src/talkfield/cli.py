"""Command-line entry point: ``talkfield <subcommand>``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .camera import look_at_pose
from .errors import TalkfieldError
from .pipeline import (Checkpoint, LossLog, PipelineConfig, evaluate, synthesize, train_disentangle, train_nerf,
                       train_space)
from .synth import DataConfig, SyntheticDataset, generate_dataset, load_png, read_blob, save_png

log = logging.getLogger("talkfield")

CKPT_NAME = "checkpoint.pt"


def _pipeline_config(args) -> PipelineConfig:
    cfg = PipelineConfig.from_json(args.config) if args.config else PipelineConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "dataset", None):
        overrides["dataset"] = args.dataset
    for flag in ("no_disentangle", "no_global_space", "no_au_space"):
        if getattr(args, flag, False):
            overrides[flag] = True
    return replace(cfg, **overrides) if overrides else cfg


def _ckpt_path(path: str) -> Path:
    p = Path(path)
    return p / CKPT_NAME if p.is_dir() else p


def _finish(ckpt: Checkpoint, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    ckpt.save(out / CKPT_NAME)
    LossLog(ckpt.losses).write_csv(out / "loss_curve.csv")
    log.info("wrote %s (stage %s, step %d)", out / CKPT_NAME, ckpt.stage, ckpt.step)


def cmd_gen_data(args) -> None:
    cfg = DataConfig()
    if args.config:
        with open(args.config) as fh:
            cfg = DataConfig.from_dict(json.load(fh))
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    manifest = generate_dataset(args.out, cfg)
    log.info("wrote %d records to %s", len(manifest["records"]), args.out)


def cmd_train_disentangle(args) -> None:
    cfg = _pipeline_config(args)
    resume = Checkpoint.load(_ckpt_path(args.resume)) if args.resume else None
    _finish(train_disentangle(cfg, resume=resume), Path(args.out))


def cmd_train_nerf(args) -> None:
    cfg = _pipeline_config(args)
    resume = Checkpoint.load(_ckpt_path(args.resume)) if args.resume else None
    _finish(train_nerf(cfg, Checkpoint.load(_ckpt_path(args.stage1)), resume=resume), Path(args.out))


def cmd_train_space(args) -> None:
    cfg = _pipeline_config(args)
    resume = Checkpoint.load(_ckpt_path(args.resume)) if args.resume else None
    _finish(train_space(cfg, Checkpoint.load(_ckpt_path(args.stage2)), resume=resume), Path(args.out))


def _load_pipeline(args):
    ckpt = Checkpoint.load(_ckpt_path(args.ckpt))
    cfg = PipelineConfig.from_dict(ckpt.config)
    flags = {f: True for f in ("no_disentangle", "no_global_space", "no_au_space") if getattr(args, f, False)}
    if args.seed is not None:
        flags["seed"] = args.seed
    if getattr(args, "dataset", None):
        flags["dataset"] = args.dataset
    cfg = replace(cfg, **flags)
    return ckpt.pipeline(cfg), cfg


def cmd_synthesize(args) -> None:
    pipe, cfg = _load_pipeline(args)
    ds = SyntheticDataset(cfg.dataset)
    if args.audio:
        audio = read_blob(args.audio)
    else:
        records = [ds.records[i] for i in ds.indices(args.split) if ds.records[i]["identity"] == args.identity]
        ts = sorted({r["t"] for r in records})
        audio = ds.audio[args.identity][ts]
    if args.max_frames is not None:
        audio = audio[:args.max_frames]
    ident = load_png(args.identity_frame) if args.identity_frame else ds.identity_frames[args.identity]
    dc = ds.config
    yaws = args.yaw or [0.0]
    poses = [look_at_pose(y, dc.distance, dc.resolution, dc.fov_deg) for y in yaws]
    frames = synthesize(pipe, ident, audio, poses)
    out = Path(args.out) / "frames"
    out.mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(frames):
        save_png(out / f"{i:05d}.png", f)
    log.info("wrote %d frames to %s", len(frames), out)


def cmd_evaluate(args) -> None:
    pipe, cfg = _load_pipeline(args)
    ds = SyntheticDataset(cfg.dataset)
    metrics = evaluate(pipe, ds, args.split, max_frames=args.max_frames)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.json", "w") as fh:
        json.dump(metrics, fh, indent=2)
    print(json.dumps(metrics))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="talkfield", description="Audio-driven conditional radiance field heads")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, ablations=True, dataset=True):
        p.add_argument("--config", help="JSON config document")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", required=True, help="output directory")
        if dataset:
            p.add_argument("--dataset", help="dataset directory (overrides the config)")
        if ablations:
            p.add_argument("--no-disentangle", action="store_true", help="feed the whole audio window to the field")
            p.add_argument("--no-global-space", action="store_true")
            p.add_argument("--no-au-space", action="store_true")
        return p

    p = common(sub.add_parser("gen-data", help="render the synthetic dataset"), ablations=False, dataset=False)
    p.set_defaults(func=cmd_gen_data)

    p = common(sub.add_parser("train-disentangle", help="stage 1"))
    p.add_argument("--resume")
    p.set_defaults(func=cmd_train_disentangle)

    p = common(sub.add_parser("train-nerf", help="stage 2"))
    p.add_argument("--stage1", required=True)
    p.add_argument("--resume")
    p.set_defaults(func=cmd_train_nerf)

    p = common(sub.add_parser("train-space", help="stage 3"))
    p.add_argument("--stage2", required=True)
    p.add_argument("--resume")
    p.set_defaults(func=cmd_train_space)

    p = common(sub.add_parser("synthesize", help="render frames from audio"))
    p.add_argument("--ckpt", required=True)
    p.add_argument("--audio", help="audio blob (N, T_a, n_mel); defaults to the split's audio of --identity")
    p.add_argument("--identity", type=int, default=0)
    p.add_argument("--identity-frame", help="PNG identity frame; defaults to the dataset's")
    p.add_argument("--split", default="test")
    p.add_argument("--yaw", type=float, action="append", help="camera yaw in degrees; repeat for one per frame")
    p.add_argument("--max-frames", type=int, help="use only the first N audio windows")
    p.set_defaults(func=cmd_synthesize)

    p = common(sub.add_parser("evaluate", help="score a checkpoint on a split"))
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--max-frames", type=int, help="cap frames per (identity, pose) group")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (TalkfieldError, ValueError, FileNotFoundError) as err:
        log.error("%s", err)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
