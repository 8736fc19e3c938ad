"""Three-stage training, inference and evaluation.

Stage 1 fits the audio disentanglement networks, stage 2 the conditional
radiance field with its upsampler and prior extractor, stage 3 the
standardized space. Every random draw inside a training step comes from a
generator keyed on (seed, stage, step), so a run resumed from a checkpoint
replays the same trajectory as an uninterrupted one.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .audio_disentangle import (AudioDisentangler, WholeAudioEncoder, cosine, exp_loss, lip_sync_loss,
                                sync_negative_loss, SyncEmbeddings)
from .camera import CameraPose
from .errors import CheckpointError
from .head_param import HEAD_DIMS, PriorExtractor, assemble
from .metrics import LandmarkFitter, au_acc, lmd79, ssim, syncnet_confidence, to_gray
from .nerf import ConditionalField, RenderConfig, UpsamplerHu, photometric_loss, psnr, render_frame
from .space import StandardizedSpace, au_loss, compute_au_weights, standardized_loss
from .synth import SyntheticDataset, identity_frame, prior_coefficients, render_gt

log = logging.getLogger(__name__)

STAGES = ("disentangle", "nerf", "space")
_ARCH_FIELDS = ("render", "au_book", "global_book", "d_sync")


@dataclass
class PipelineConfig:
    dataset: str = "data"
    seed: int = 0
    render: RenderConfig = field(default_factory=RenderConfig)
    batch_size: int = 8  # B in the lip-sync loss and every non-NeRF phase except AU pretraining
    au_batch_size: int = 32
    lr: float = 1e-4
    lr_pretrain: float = 1e-3
    lr_nerf: float = 5e-4
    nerf_warmup: int = 1000
    prior_iters: int = 1500
    sync_iters: int = 1500
    lipnet_iters: int = 1500
    disentangle_iters: int = 2000
    nerf_iters: int = 20000
    au_iters: int = 2000
    space_iters: int = 3000
    au_book: tuple[int, int] = (64, 32)
    global_book: tuple[int, int] = (128, 64)
    beta1: float = 0.25
    beta2: float = 0.25
    eps_sync: float = 1e-8
    eps_dice: float = 1e-7
    lip_weight: float = 0.1
    d_sync: int = 64
    dead_after: int = 500
    train_identities: list[int] | None = None
    train_poses: list[int] | None = None
    train_frames: int | None = None
    no_disentangle: bool = False
    no_global_space: bool = False
    no_au_space: bool = False
    log_every: int = 10

    def __post_init__(self):
        if isinstance(self.render, dict):
            self.render = RenderConfig(**self.render)
        self.au_book = tuple(self.au_book)
        self.global_book = tuple(self.global_book)
        for f in fields(self):
            v = getattr(self, f.name)
            if (f.name.endswith("_iters") or f.name == "nerf_warmup") and (not isinstance(v, int) or v < 0):
                raise ValueError(f"{f.name} must be a nonnegative integer")
        if min(self.batch_size, self.au_batch_size) < 1 or min(self.au_book + self.global_book) < 1:
            raise ValueError("batch size and codebook sizes must be positive")
        if min(self.beta1, self.beta2, self.lip_weight) < 0 or min(self.eps_sync, self.eps_dice) <= 0:
            raise ValueError("loss weights must be >= 0 and epsilons > 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["au_book"], d["global_book"] = list(self.au_book), list(self.global_book)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path: str | Path) -> "PipelineConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def arch_hash(self) -> str:
        """Hash of the fields that determine network shapes and wiring."""
        d = self.to_dict()
        blob = json.dumps({k: d[k] for k in _ARCH_FIELDS}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


class Pipeline(nn.Module):
    def __init__(self, cfg: PipelineConfig, resolution: int = 64, window_frames: int = 16, n_mel: int = 20):
        super().__init__()
        self.cfg = cfg
        self.shape = (resolution, window_frames, n_mel)
        torch.manual_seed(cfg.seed)
        self.disentangler = AudioDisentangler(resolution, window_frames, n_mel, cfg.d_sync)
        self.extractor = PriorExtractor(resolution)
        self.field = ConditionalField(cfg.render)
        self.upsampler = UpsamplerHu(cfg.render)
        self.whole_audio = WholeAudioEncoder(window_frames, n_mel)
        self.space = StandardizedSpace(resolution, au_book=cfg.au_book, global_book=cfg.global_book,
                                       dead_after=cfg.dead_after)

    def expressions(self, identity_frame: torch.Tensor, audio: torch.Tensor):
        """(exp_aud, exp_style) for a batch of audio windows."""
        if self.cfg.no_disentangle:
            out = self.whole_audio(audio)
            return out.f_exp_aud, out.f_exp_style
        dis, _, _ = self.disentangler(identity_frame, audio)
        return dis.f_exp_aud, dis.f_exp_style

    def head_params(self, identity_frame: torch.Tensor, exp_aud: torch.Tensor, exp_style: torch.Tensor):
        return assemble(self.extractor(identity_frame), exp_aud, exp_style)


@dataclass
class Checkpoint:
    stage: str
    step: int
    config: dict
    config_hash: str
    shape: tuple
    state: dict
    optimizer: dict | None = None
    phase: str | None = None
    losses: list = field(default_factory=list)

    def save(self, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        torch.save(asdict(self), path)

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        return cls(**torch.load(path, map_location="cpu", weights_only=False))

    def pipeline(self, cfg: PipelineConfig | None = None) -> Pipeline:
        """Rebuild the pipeline; ``cfg`` must share the checkpoint's architecture hash."""
        cfg = cfg or PipelineConfig.from_dict(self.config)
        if cfg.arch_hash() != self.config_hash:
            raise CheckpointError("checkpoint was written by a run with a different architecture config")
        pipe = Pipeline(cfg, *self.shape)
        pipe.load_state_dict(self.state)
        return pipe


def _make_checkpoint(stage, step, cfg, pipe, optimizer=None, phase=None, losses=()):
    return Checkpoint(stage, step, cfg.to_dict(), cfg.arch_hash(), pipe.shape,
                      copy.deepcopy(pipe.state_dict()), copy.deepcopy(optimizer.state_dict()) if optimizer else None,
                      phase, list(losses))


def step_rng(seed: int, stage: str, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, STAGES.index(stage), step])


def step_generator(seed: int, stage: str, step: int) -> torch.Generator:
    return torch.Generator().manual_seed(int(step_rng(seed, stage, step).integers(2**62)))


class TrainData:
    """Training-split tensors plus the analytic targets derived from the scenes."""

    def __init__(self, dataset: SyntheticDataset, cfg: PipelineConfig, split: str = "train"):
        self.ds = dataset
        idx = dataset.indices(split)
        recs = dataset.records
        if cfg.train_identities is not None:
            idx = [i for i in idx if recs[i]["identity"] in cfg.train_identities]
        if cfg.train_poses is not None:
            idx = [i for i in idx if recs[i]["pose"] in cfg.train_poses]
        if cfg.train_frames is not None:
            idx = [i for i in idx if recs[i]["t"] < cfg.train_frames]
        if not idx:
            raise ValueError(f"no records left in split {split!r} after filtering")
        self.indices = idx
        self.frames = torch.tensor(np.stack([dataset.frame(i) for i in idx]))
        self.audio = torch.tensor(np.stack([dataset.window(i) for i in idx]))
        self.au = torch.tensor(np.stack([dataset.au(i) for i in idx]), dtype=torch.float32)
        self.identity = torch.tensor([recs[i]["identity"] for i in idx])
        self.t = torch.tensor([recs[i]["t"] for i in idx])
        self.pose = [recs[i]["pose"] for i in idx]
        self.identity_frames = torch.tensor(np.stack(dataset.identity_frames))
        res = dataset.config.resolution
        frontal = dataset.poses[dataset.frontal_pose_index()]
        # Lip-wav targets: frontal frames with the drive aperture and neutral style
        self.lipwav = torch.tensor(np.stack([
            render_gt(dataset.scenes[int(k)], frontal, int(t), resolution=res, aperture=None, style=0.0)
            for k, t in zip(self.identity, self.t)
        ]), dtype=torch.float32)
        self.prior_targets = {
            name: torch.tensor(np.stack([prior_coefficients(dataset.scenes[int(k)], int(t))[name]
                                         for k, t in zip(self.identity, self.t)]), dtype=torch.float32)
            for name in ("f_id", "f_exp", "f_alb", "f_illu")
        }
        self.lipwav_prior_exp = torch.tensor(np.stack([
            prior_coefficients(dataset.scenes[int(k)], int(t), style=0.0)["f_exp"]
            for k, t in zip(self.identity, self.t)]), dtype=torch.float32)
        self.id_prior_targets = {
            name: torch.tensor(np.stack([prior_coefficients(s, aperture=0.0, style=0.0)[name]
                                         for s in dataset.scenes]), dtype=torch.float32)
            for name in ("f_id", "f_exp", "f_alb", "f_illu")
        }

    def __len__(self) -> int:
        return len(self.indices)

    def batch(self, rng: np.random.Generator, size: int) -> torch.Tensor:
        return torch.as_tensor(rng.integers(0, len(self), size=size))


class LossLog:
    def __init__(self, rows: list | None = None):
        self.rows: list[tuple[int, str, float]] = list(rows or [])

    def add(self, step: int, name: str, value: float) -> None:
        self.rows.append((step, name, float(value)))

    def series(self, name: str) -> list[tuple[int, float]]:
        return [(s, v) for s, n, v in self.rows if n == name]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "loss_name", "value"])
            w.writerows(self.rows)


@dataclass
class Phase:
    name: str
    iters: int
    params: Callable[[], list]
    lr: float
    step: Callable[[int, np.random.Generator, torch.Generator], dict]
    on_step: Callable[[int], None] | None = None
    warmup: int = 0

    def lr_at(self, k: int) -> float:
        """Learning rate at the phase's k-th step: linear ramp from 1% over ``warmup`` steps."""
        if k >= self.warmup:
            return self.lr
        return self.lr * (0.01 + 0.99 * k / self.warmup)


def _run_phases(stage: str, phases: list[Phase], cfg: PipelineConfig, pipe: Pipeline, resume: Checkpoint | None,
                stop_at: int | None, logbook: LossLog) -> Checkpoint:
    start = resume.step if resume is not None and resume.stage == stage else 0
    offset = 0
    opt = None
    last_phase = None
    for phase in phases:
        lo, hi = offset, offset + phase.iters
        offset = hi
        if hi <= start or phase.iters == 0:
            continue
        opt = torch.optim.Adam(phase.params(), lr=phase.lr)
        last_phase = phase.name
        if resume is not None and resume.stage == stage and resume.phase == phase.name and start > lo:
            opt.load_state_dict(resume.optimizer)
        for step in range(max(lo, start), hi):
            if stop_at is not None and step >= stop_at:
                return _make_checkpoint(stage, step, cfg, pipe, opt, phase.name, logbook.rows)
            rng = step_rng(cfg.seed, stage, step)
            gen = step_generator(cfg.seed, stage, step)
            for group in opt.param_groups:
                group["lr"] = phase.lr_at(step - lo)
            opt.zero_grad(set_to_none=True)
            losses = phase.step(step, rng, gen)
            losses["total"].backward()
            opt.step()
            if phase.on_step is not None:
                phase.on_step(step)
            if step == lo or (step - lo + 1) % cfg.log_every == 0 or step == hi - 1:
                for k, v in losses.items():
                    if k != "total":
                        logbook.add(step, k, float(v))
            if not math.isfinite(float(losses["total"].detach())):
                raise FloatingPointError(f"non-finite loss in {stage}/{phase.name} at step {step}: {losses}")
    return _make_checkpoint(stage, offset, cfg, pipe, opt, last_phase, logbook.rows)


def _prior_mse(prior, targets: dict, sel) -> torch.Tensor:
    return sum(F.mse_loss(getattr(prior, k), v[sel]) for k, v in targets.items())


def _load_data(cfg: PipelineConfig) -> tuple[SyntheticDataset, TrainData]:
    ds = SyntheticDataset(cfg.dataset)
    return ds, TrainData(ds, cfg)


def _new_pipeline(cfg: PipelineConfig, ds: SyntheticDataset, base: Checkpoint | None = None) -> Pipeline:
    c = ds.config
    pipe = Pipeline(cfg, c.resolution, c.window_frames, c.n_mel)
    if base is not None:
        if base.config_hash != cfg.arch_hash():
            raise CheckpointError("previous-stage checkpoint has a different architecture config")
        pipe.load_state_dict(base.state)
    return pipe


def train_disentangle(cfg: PipelineConfig, *, resume: Checkpoint | None = None, stop_at: int | None = None,
                      data: TrainData | None = None) -> Checkpoint:
    """Stage 1: prior extractor fit, SyncNet, LipNet pretraining, then L_exp + L_lip."""
    ds = data.ds if data is not None else SyntheticDataset(cfg.dataset)
    data = data or TrainData(ds, cfg)
    pipe = _new_pipeline(cfg, ds, resume)
    dis = pipe.disentangler
    B = cfg.batch_size

    def prior_step(step, rng, gen):
        sel = data.batch(rng, B)
        real = _prior_mse(dis.extractor(data.frames[sel]), data.prior_targets, sel)
        lip_prior = dis.extractor(data.lipwav[sel])
        lip = F.mse_loss(lip_prior.f_exp, data.lipwav_prior_exp[sel])
        k = torch.as_tensor(rng.integers(0, len(ds.scenes), size=2))
        ident = _prior_mse(dis.extractor(data.identity_frames[k]), data.id_prior_targets, k)
        total = real + lip + ident
        return {"total": total, "prior_fit": total.detach()}

    def sync_step(step, rng, gen):
        sel = data.batch(rng, B)
        emb = dis.syncnet(data.frames[sel], data.audio[sel])
        shuffled = emb.f_a.roll(1, dims=0)
        matched = lip_sync_loss(emb, cfg.eps_sync)
        negative = sync_negative_loss(emb.f_lip, shuffled, cfg.eps_sync)
        return {"total": matched + negative, "sync_matched": matched.detach(), "sync_negative": negative.detach()}

    def lipnet_step(step, rng, gen):
        sel = data.batch(rng, B)
        out = dis.lipnet(data.identity_frames[data.identity[sel]], data.audio[sel])
        rec = F.l1_loss(out, data.lipwav[sel])
        return {"total": rec, "lipnet_l1": rec.detach()}

    def main_step(step, rng, gen):
        sel = data.batch(rng, B)
        audio = data.audio[sel]
        (d, lipwav, gen_exp) = dis(data.identity_frames[data.identity[sel]], audio)
        with torch.no_grad():
            gt_exp = dis.extractor(data.frames[sel]).f_exp
        l_exp = exp_loss(gen_exp, gt_exp)
        l_lip = lip_sync_loss(dis.syncnet(lipwav, audio), cfg.eps_sync)
        return {"total": l_exp + cfg.lip_weight * l_lip, "L_exp": l_exp.detach(), "L_lip": l_lip.detach()}

    def main_params():
        for p in list(dis.extractor.parameters()) + list(dis.syncnet.parameters()):
            p.requires_grad_(False)
        return list(dis.lipnet.parameters()) + list(dis.stylenet.parameters()) + list(dis.fusenet.parameters())

    phases = [
        Phase("prior", cfg.prior_iters, lambda: list(dis.extractor.parameters()), cfg.lr_pretrain, prior_step),
        Phase("sync", cfg.sync_iters, lambda: list(dis.syncnet.parameters()), cfg.lr_pretrain, sync_step),
        Phase("lipnet", cfg.lipnet_iters, lambda: list(dis.lipnet.parameters()), cfg.lr_pretrain, lipnet_step),
        Phase("disentangle", cfg.disentangle_iters, main_params, cfg.lr, main_step),
    ]
    logbook = LossLog(resume.losses if resume is not None and resume.stage == "disentangle" else None)
    ckpt = _run_phases("disentangle", phases, cfg, pipe, resume, stop_at, logbook)
    if ckpt.step == sum(p.iters for p in phases):
        # the field's extractor starts from the fitted one
        pipe.extractor.load_state_dict(dis.extractor.state_dict())
        ckpt.state = copy.deepcopy(pipe.state_dict())
    return ckpt


def _frozen_expressions(pipe: Pipeline, data: TrainData) -> tuple[torch.Tensor, torch.Tensor]:
    with torch.no_grad():
        dis = pipe.disentangler
        aud, sty = [], []
        for chunk in torch.split(torch.arange(len(data)), 64):
            d, _, _ = dis(data.identity_frames[data.identity[chunk]], data.audio[chunk])
            aud.append(d.f_exp_aud)
            sty.append(d.f_exp_style)
        return torch.cat(aud), torch.cat(sty)


def train_nerf(cfg: PipelineConfig, stage1: Checkpoint, *, resume: Checkpoint | None = None,
               stop_at: int | None = None, data: TrainData | None = None) -> Checkpoint:
    """Stage 2: field, upsampler and prior extractor under the photometric loss."""
    ds = data.ds if data is not None else SyntheticDataset(cfg.dataset)
    data = data or TrainData(ds, cfg)
    pipe = _new_pipeline(cfg, ds, resume if resume is not None and resume.stage == "nerf" else stage1)
    if not cfg.no_disentangle:
        exp_aud, exp_style = _frozen_expressions(pipe, data)

    def nerf_step(step, rng, gen):
        i = int(rng.integers(0, len(data)))
        ident = data.identity_frames[data.identity[i]]
        if cfg.no_disentangle:
            out = pipe.whole_audio(data.audio[i])
            ea, es = out.f_exp_aud[0], out.f_exp_style[0]
        else:
            ea, es = exp_aud[i], exp_style[i]
        params = pipe.head_params(ident, ea, es)
        pose = ds.poses[data.pose[i]]
        img = render_frame(pose, params, cfg.render, pipe.field, pipe.upsampler, perturb=True,
                           seed=int(rng.integers(2**31)))
        loss = photometric_loss(img, data.frames[i])
        return {"total": loss, "L_pho": loss.detach(), "psnr": torch.tensor(psnr(img.detach(), data.frames[i]))}

    def params():
        ps = list(pipe.field.parameters()) + list(pipe.upsampler.parameters()) + list(pipe.extractor.parameters())
        if cfg.no_disentangle:
            ps += list(pipe.whole_audio.parameters())
        return ps

    phases = [Phase("nerf", cfg.nerf_iters, params, cfg.lr_nerf, nerf_step, warmup=cfg.nerf_warmup)]
    logbook = LossLog(resume.losses if resume is not None and resume.stage == "nerf" else None)
    return _run_phases("nerf", phases, cfg, pipe, resume, stop_at, logbook)


def stage2_renders(pipe: Pipeline, data: TrainData) -> torch.Tensor:
    """Deterministic renders of every training record by the frozen field."""
    cfg = pipe.cfg
    out = []
    with torch.no_grad():
        exp_aud, exp_style = pipe.expressions(data.identity_frames[data.identity], data.audio)
        for i in range(len(data)):
            params = pipe.head_params(data.identity_frames[data.identity[i]], exp_aud[i], exp_style[i])
            out.append(render_frame(data.ds.poses[data.pose[i]], params, cfg.render, pipe.field, pipe.upsampler))
    return torch.stack(out)


def train_space(cfg: PipelineConfig, stage2: Checkpoint, *, resume: Checkpoint | None = None,
                stop_at: int | None = None, data: TrainData | None = None) -> Checkpoint:
    """Stage 3: AU encoder with L_AU on real frames, then codebooks and decoder with L_S.

    The codebook phase maps stage-2 renders of the training records onto the
    matching real frames, with the AU encoder frozen.
    """
    ds = data.ds if data is not None else SyntheticDataset(cfg.dataset)
    data = data or TrainData(ds, cfg)
    pipe = _new_pipeline(cfg, ds, resume if resume is not None and resume.stage == "space" else stage2)
    space = pipe.space
    weights = compute_au_weights(ds.au_rates)
    use_au, use_glo = not cfg.no_au_space, not cfg.no_global_space
    space_iters = cfg.space_iters if (use_au or use_glo) else 0
    renders = stage2_renders(pipe, data) if space_iters else None

    def au_step(step, rng, gen):
        sel = data.batch(rng, cfg.au_batch_size)
        pred = space.au_encoder.predict(data.frames[sel])
        loss = au_loss(data.au[sel], pred, weights, cfg.eps_dice)
        return {"total": loss, "L_AU": loss.detach()}

    def space_step(step, rng, gen):
        sel = data.batch(rng, cfg.batch_size)
        out = space(renders[sel], use_au=use_au, use_global=use_glo)
        f_hat_au, f_hat_glo = out.get("f_hat_au"), out.get("f_hat_glo")
        loss = standardized_loss(out["image"], data.frames[sel],
                                 f_hat_au, out["au"].entry if use_au else None,
                                 f_hat_glo, out["glo"].entry if use_glo else None, cfg.beta1, cfg.beta2)
        if use_au:
            space.book_s.mark_used(out["au"].index, step)
            space.book_s.reseed_dead(step, f_hat_au, gen)
        if use_glo:
            space.book_g.mark_used(out["glo"].index, step)
            space.book_g.reseed_dead(step, f_hat_glo.reshape(-1, space.book_g.dim), gen)
        return {"total": loss, "L_S": loss.detach()}

    def space_params():
        space.au_encoder.requires_grad_(False)
        ps = list(space.decoder.parameters())
        if use_au:
            ps += list(space.book_s.parameters())
        if use_glo:
            ps += list(space.global_encoder.parameters()) + list(space.book_g.parameters())
        return ps

    def start_space():
        # usage clocks restart when codebook training begins
        space.book_s.last_used.fill_(cfg.au_iters)
        space.book_g.last_used.fill_(cfg.au_iters)
        return space_params()

    phases = [
        Phase("au", cfg.au_iters, lambda: list(space.au_encoder.parameters()), cfg.lr_pretrain, au_step),
        Phase("space", space_iters, start_space if not (resume and resume.phase == "space") else space_params,
              cfg.lr_pretrain, space_step),
    ]
    logbook = LossLog(resume.losses if resume is not None and resume.stage == "space" else None)
    return _run_phases("space", phases, cfg, pipe, resume, stop_at, logbook)


# -- inference ---------------------------------------------------------------

def _as_tensor(x, dtype=torch.float32):
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def synthesize(pipe: Pipeline, identity_frame, audio, poses: list[CameraPose], *, use_au: bool | None = None,
               use_global: bool | None = None, return_nerf: bool = False):
    """Audio windows (N, T_a, n_mel) -> N frames F_hat_{t+} as an (N, H, W, 3) array.

    ``poses`` holds one pose for every frame or a single pose used throughout.
    Space flags default to the pipeline's configuration.
    """
    cfg = pipe.cfg
    use_au = (not cfg.no_au_space) if use_au is None else use_au
    use_global = (not cfg.no_global_space) if use_global is None else use_global
    audio = _as_tensor(audio)
    if audio.dim() == 2:
        audio = audio[None]
    n = audio.shape[0]
    if len(poses) not in (1, n):
        raise ValueError("give one pose per audio window or a single pose")
    ident = _as_tensor(identity_frame)
    pipe.eval()
    frames, raw = [], []
    with torch.no_grad():
        exp_aud, exp_style = pipe.expressions(ident, audio)
        prior = pipe.extractor(ident)
        for i in range(n):
            params = assemble(prior, exp_aud[i], exp_style[i])
            pose = poses[i if len(poses) == n else 0]
            img = render_frame(pose, params, cfg.render, pipe.field, pipe.upsampler)
            raw.append(img)
            frames.append(pipe.space(img, use_au=use_au, use_global=use_global)["image"].clamp(0.0, 1.0))
    out = torch.stack(frames).numpy()
    return (out, torch.stack(raw).numpy()) if return_nerf else out


def evaluate_frames(pred, gt, *, pred_landmarks, gt_landmarks, au_pred=None, au_gt=None, sync_score=None) -> dict:
    """Average the metric suite over a set of frames."""
    s = [ssim(to_gray(p), to_gray(g)) for p, g in zip(pred, gt)]
    lm = [lmd79(a, b) for a, b in zip(pred_landmarks, gt_landmarks)]
    acc = [au_acc(p, g) for p, g in zip(au_pred, au_gt)] if au_pred is not None else []
    return {
        "ssim": float(np.mean(s)),
        "lmd79": float(np.mean(lm)),
        "au_acc": float(np.mean(acc)) if acc else None,
        "syncnet": sync_score,
    }


def evaluate(pipe: Pipeline, dataset: SyntheticDataset, split: str = "test", *, fitter: LandmarkFitter | None = None,
             use_au: bool | None = None, use_global: bool | None = None, identities=None, poses=None,
             max_frames: int | None = None) -> dict:
    """Synthesize every record of ``split`` from its audio and score it against ground truth."""
    fitter = fitter or LandmarkFitter(resolution=dataset.config.resolution)
    groups: dict[tuple[int, int], list[int]] = {}
    for i in dataset.indices(split):
        r = dataset.records[i]
        if identities is not None and r["identity"] not in identities:
            continue
        if poses is not None and r["pose"] not in poses:
            continue
        groups.setdefault((r["identity"], r["pose"]), []).append(i)
    preds, gts, plm, glm, aup, aug, sync_f, sync_a = [], [], [], [], [], [], [], []
    for (k, p), idx in sorted(groups.items()):
        idx = sorted(idx, key=lambda i: dataset.records[i]["t"])[:max_frames]
        audio = np.stack([dataset.window(i) for i in idx])
        frames = synthesize(pipe, dataset.identity_frames[k], audio, [dataset.poses[p]], use_au=use_au,
                            use_global=use_global)
        scene, pose = dataset.scenes[k], dataset.poses[p]
        for i, f in zip(idx, frames):
            preds.append(f)
            gts.append(dataset.frame(i))
            plm.append(fitter.landmarks(f, scene, pose, key=(k, p)))
            glm.append(dataset.landmark_set(i))
            aug.append(dataset.au(i))
            sync_f.append(f)
            sync_a.append(dataset.window(i))
        with torch.no_grad():
            aup.extend(pipe.space.au_encoder.predict(torch.as_tensor(frames)).numpy())
    if not preds:
        raise ValueError(f"split {split!r} has no records to evaluate")
    sync = syncnet_confidence(pipe.disentangler.syncnet, sync_f, sync_a)
    return evaluate_frames(preds, gts, pred_landmarks=plm, gt_landmarks=glm, au_pred=aup, au_gt=aug,
                           sync_score=sync)
