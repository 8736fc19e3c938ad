"""Long training runs shared by the acceptance and trained-behaviour tests.

Each run is cached for the session, so a check that needs a trained
checkpoint reuses the one the acceptance criteria already paid for.
"""

from __future__ import annotations

import functools
import math
import tempfile
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from talkfield.metrics import LandmarkFitter
from talkfield.nerf import psnr, render_frame
from talkfield.pipeline import (Checkpoint, Pipeline, PipelineConfig, TrainData, evaluate, train_disentangle,
                                train_nerf, train_space)
from talkfield.synth import DataConfig, SyntheticDataset, generate_dataset

ABLATION_SEEDS = (0, 1, 2)
# stage-2 budget for the ablation runs; three seeds, two stage-2 runs each, must fit two hours on one core
ABLATION_NERF_ITERS = 4000
OVERFIT_DATA = DataConfig(n_identities=1, n_frames=50, yaws=(-20.0, 0.0, 20.0), test_fraction=0.0, seed=0)
OVERFIT_CHUNK = 500
OVERFIT_MAX_ITERS = 20000

_workdir = Path(tempfile.mkdtemp(prefix="talkfield_runs_"))


@functools.lru_cache(maxsize=None)
def dataset(name: str = "default") -> Path:
    root = _workdir / name
    generate_dataset(root, OVERFIT_DATA if name == "overfit" else DataConfig())
    return root


@functools.lru_cache(maxsize=None)
def train_data(name: str = "default") -> TrainData:
    root = dataset(name)
    return TrainData(SyntheticDataset(root), PipelineConfig(dataset=str(root)))


@dataclass
class SeedRun:
    seed: int
    cfg: PipelineConfig
    stage1: Checkpoint
    stage2: Checkpoint
    stage3: Checkpoint
    stage2_whole_audio: Checkpoint
    stage3_whole_audio: Checkpoint
    full: dict
    no_space: dict
    no_disentangle: dict
    no_disentangle_no_space: dict
    seconds: float


def _evaluate(ckpt: Checkpoint, cfg: PipelineConfig, ds: SyntheticDataset, fitter, **flags) -> dict:
    return evaluate(ckpt.pipeline(cfg), ds, "test", fitter=fitter, **flags)


@functools.lru_cache(maxsize=None)
def seed_run(seed: int) -> SeedRun:
    """Full and ablated pipelines for one seed on the default dataset."""
    t0 = time.time()
    data = train_data("default")
    ds = data.ds
    cfg = PipelineConfig(dataset=str(dataset("default")), seed=seed, nerf_iters=ABLATION_NERF_ITERS)
    whole = replace(cfg, no_disentangle=True)
    c1 = train_disentangle(cfg, data=data)
    c2 = train_nerf(cfg, c1, data=data)
    c3 = train_space(cfg, c2, data=data)
    c2w = train_nerf(whole, c1, data=data)
    c3w = train_space(whole, c2w, data=data)
    fitter = LandmarkFitter(resolution=ds.config.resolution)
    full = _evaluate(c3, cfg, ds, fitter)
    # both spaces off: the NeRF frame goes out unchanged
    no_space = _evaluate(c3, replace(cfg, no_global_space=True, no_au_space=True), ds, fitter)
    no_dis = _evaluate(c3w, whole, ds, fitter)
    no_dis_raw = _evaluate(c3w, replace(whole, no_global_space=True, no_au_space=True), ds, fitter)
    return SeedRun(seed, cfg, c1, c2, c3, c2w, c3w, full, no_space, no_dis, no_dis_raw, time.time() - t0)


@dataclass
class OverfitRun:
    iterations: int
    psnr: float
    history: list
    seconds: float


def held_in_psnr(pipe: Pipeline, data: TrainData) -> float:
    """Mean PSNR of deterministic renders of every training frame."""
    pipe.eval()
    cfg = pipe.cfg
    values = []
    with torch.no_grad():
        exp_aud, exp_style = pipe.expressions(data.identity_frames[data.identity], data.audio)
        for i in range(len(data)):
            params = pipe.head_params(data.identity_frames[data.identity[i]], exp_aud[i], exp_style[i])
            img = render_frame(data.ds.poses[data.pose[i]], params, cfg.render, pipe.field, pipe.upsampler)
            values.append(psnr(img, data.frames[i]))
    return float(np.mean(values))


@functools.lru_cache(maxsize=None)
def overfit_run() -> OverfitRun:
    """Stage 2 on one identity, 50 frames and 3 poses until held-in PSNR passes 25 dB."""
    t0 = time.time()
    data = train_data("overfit")
    cfg = PipelineConfig(dataset=str(dataset("overfit")), seed=0, nerf_iters=OVERFIT_MAX_ITERS)
    c1 = train_disentangle(cfg, data=data)
    ckpt, history = None, []
    for stop in range(OVERFIT_CHUNK, OVERFIT_MAX_ITERS + 1, OVERFIT_CHUNK):
        ckpt = train_nerf(cfg, c1, resume=ckpt, stop_at=stop if stop < OVERFIT_MAX_ITERS else None, data=data)
        value = held_in_psnr(ckpt.pipeline(cfg), data)
        history.append((ckpt.step, value))
        if value > 25.0:
            break
    return OverfitRun(ckpt.step, history[-1][1], history, time.time() - t0)


def finite(x) -> bool:
    return x is not None and math.isfinite(x)
