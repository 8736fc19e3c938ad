"""Conditional radiance field rendered to a feature map, then upsampled to RGB."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import torch
import torch.nn.functional as F
from torch import nn

from .camera import CameraPose, Ray, RayBundle, generate_rays
from .errors import DimensionError, NumericError
from .head_param import ALB_DIM, EXP_DIM, ID_DIM, ILLU_DIM, HeadParams

FieldFn = Callable[[torch.Tensor, torch.Tensor], tuple[torch.Tensor, torch.Tensor]]


@dataclass(frozen=True)
class RenderConfig:
    n_samples: int = 32
    low_res: int = 16
    upsample_factor: int = 4
    d_feat: int = 32
    l_pos: int = 10
    l_dir: int = 4
    t_near: float = 2.3
    t_far: float = 4.7
    hidden: int = 128
    upsampler_width: int = 48

    def __post_init__(self):
        for name in ("n_samples", "low_res", "upsample_factor", "d_feat", "l_pos", "l_dir", "hidden",
                     "upsampler_width"):
            if int(getattr(self, name)) <= 0:
                raise ValueError(f"{name} must be a positive integer")
        if self.upsample_factor != 4:
            raise ValueError("the upsampler is two x2 stages; upsample_factor must be 4")

    @property
    def out_res(self) -> int:
        return self.low_res * self.upsample_factor

    def to_dict(self) -> dict:
        return asdict(self)


def positional_encoding(x: torch.Tensor, n_freqs: int) -> torch.Tensor:
    """[x, sin(2^k x), cos(2^k x)] for k < n_freqs."""
    freqs = 2.0 ** torch.arange(n_freqs, dtype=x.dtype, device=x.device)
    scaled = x[..., None, :] * freqs[:, None]
    enc = torch.cat([torch.sin(scaled), torch.cos(scaled)], dim=-1).flatten(-2)
    return torch.cat([x, enc], dim=-1)


class ConditionalField(nn.Module):
    """F_theta: (position, view direction, head parameters) -> (feature z, density sigma).

    The shape condition (identity, both expressions, albedo) enters at the
    first layer; illumination and the encoded view direction join at the
    feature head, so density does not depend on them.
    """

    def __init__(self, cfg: RenderConfig = RenderConfig()):
        super().__init__()
        self.cfg = cfg
        pos_dim = 3 + 6 * cfg.l_pos
        dir_dim = 3 + 6 * cfg.l_dir
        cond_dim = ID_DIM + 2 * EXP_DIM + ALB_DIM
        h = cfg.hidden
        # a linear layer on [pos, cond] split into two so the per-frame
        # condition projection is computed once and broadcast
        self.pos_in = nn.Linear(pos_dim, h)
        self.cond_in = nn.Linear(cond_dim, h, bias=False)
        self.trunk = nn.Sequential(nn.SiLU(), nn.Linear(h, h), nn.SiLU(), nn.Linear(h, h), nn.SiLU(),
                                   nn.Linear(h, h), nn.SiLU())
        self.sigma_out = nn.Linear(h, 1)
        self.feature_head = nn.Sequential(nn.Linear(h + dir_dim + ILLU_DIM, h // 2), nn.SiLU(),
                                          nn.Linear(h // 2, cfg.d_feat))
        nn.init.constant_(self.sigma_out.bias, -1.0)

    def forward(self, points: torch.Tensor, dirs: torch.Tensor, params: HeadParams):
        """Evaluate at ``points`` (..., 3) seen along ``dirs`` (..., 3).

        ``params`` blocks either have no leading dims (one frame) or leading
        dims that broadcast against ``points[..., 0]``.

        Returns:
            z (..., d_feat) and sigma (...,), sigma >= 0.
        """
        cond = params.shape_condition()
        illu = params.f_illu
        while cond.dim() < points.dim():
            cond = cond.unsqueeze(-2)
            illu = illu.unsqueeze(-2)
        x = self.pos_in(positional_encoding(points, self.cfg.l_pos)) + self.cond_in(cond)
        h = self.trunk(x)
        sigma = F.softplus(self.sigma_out(h)).squeeze(-1)
        d_enc = positional_encoding(dirs, self.cfg.l_dir)
        illu = illu.expand(*h.shape[:-1], ILLU_DIM)
        z = self.feature_head(torch.cat([h, d_enc, illu], dim=-1))
        return z, sigma

    def bind(self, params: HeadParams) -> FieldFn:
        return lambda pts, dirs: self(pts, dirs, params)


def field_eval(field: ConditionalField, l: torch.Tensor, view_dir: torch.Tensor, params: HeadParams):
    """Single-point evaluation of the conditioned field."""
    if not (torch.isfinite(l).all() and torch.isfinite(view_dir).all()):
        raise NumericError("position and view direction must be finite")
    if l.shape[-1:] != (3,) or view_dir.shape[-1:] != (3,):
        raise DimensionError("position and view direction must be 3-vectors")
    return field(l, view_dir, params)


def sample_depths(n_rays: int, n_samples: int, t_near: float, t_far: float, *, perturb: bool = False,
                  generator: torch.Generator | None = None, dtype=torch.float32):
    """Stratified depths (n_rays, S) and spacings delta_i = t_{i+1} - t_i, last to ``t_far``.

    With ``perturb=False`` every sample sits at its bin midpoint.
    """
    edges = torch.linspace(t_near, t_far, n_samples + 1, dtype=dtype)
    lower, upper = edges[:-1], edges[1:]
    if perturb:
        u = torch.rand(n_rays, n_samples, generator=generator, dtype=dtype)
    else:
        u = torch.full((n_rays, n_samples), 0.5, dtype=dtype)
    t = lower + (upper - lower) * u
    nxt = torch.cat([t[:, 1:], torch.full((n_rays, 1), t_far, dtype=dtype)], dim=1)
    return t, nxt - t


def composite(sigma: torch.Tensor, z: torch.Tensor, deltas: torch.Tensor):
    """Alpha-composite samples along rays.

    Args:
        sigma: (..., S) densities.
        z: (..., S, D) features.
        deltas: (..., S) sample spacings.

    Returns:
        feature (..., D), opacity (...,), weights (..., S), transmittance (..., S + 1)
        where transmittance[..., i] is the fraction of light reaching sample i
        and the last entry is T_final.
    """
    optical = sigma * deltas
    alpha = 1.0 - torch.exp(-optical)
    acc = torch.cumsum(optical, dim=-1)
    trans = torch.exp(-torch.cat([torch.zeros_like(acc[..., :1]), acc], dim=-1))
    weights = trans[..., :-1] * alpha
    feature = torch.sum(weights[..., None] * z, dim=-2)
    return feature, weights.sum(dim=-1), weights, trans


def render_rays(field_fn: FieldFn, bundle: RayBundle, cfg: RenderConfig, *, perturb: bool = False,
                generator: torch.Generator | None = None):
    """Render every ray of ``bundle``; returns (features (N, D), opacity (N,), weights (N, S))."""
    n = bundle.origins.shape[0]
    dtype = bundle.origins.dtype
    t, deltas = sample_depths(n, cfg.n_samples, bundle.t_near, bundle.t_far, perturb=perturb,
                              generator=generator, dtype=dtype)
    pts = bundle.origins[:, None, :] + t[..., None] * bundle.directions[:, None, :]
    dirs = bundle.directions[:, None, :].expand_as(pts)
    z, sigma = field_fn(pts, dirs)
    feature, opacity, weights, _ = composite(sigma, z, deltas)
    return feature, opacity, weights


def render_ray(ray: Ray, params: HeadParams, cfg: RenderConfig, field: ConditionalField, *,
               dtype=torch.float64):
    """Render one ray; returns (feature (d_feat,), opacity)."""
    bundle = RayBundle(torch.as_tensor(ray.origin, dtype=dtype)[None], torch.as_tensor(ray.direction, dtype=dtype)[None],
                       1, 1, ray.t_near, ray.t_far)
    feature, opacity, _ = render_rays(field.bind(params), bundle, cfg)
    return feature[0], opacity[0]


class UpsamplerHu(nn.Module):
    """Two nearest-neighbour x2 stages, each followed by two 3x3 convolutions, then a 1x1 RGB head."""

    def __init__(self, cfg: RenderConfig = RenderConfig()):
        super().__init__()
        self.cfg = cfg
        w = cfg.upsampler_width
        self.stage1 = nn.Sequential(nn.Conv2d(cfg.d_feat, w, 3, padding=1), nn.SiLU(),
                                    nn.Conv2d(w, w, 3, padding=1), nn.SiLU())
        self.stage2 = nn.Sequential(nn.Conv2d(w, w // 2, 3, padding=1), nn.SiLU(),
                                    nn.Conv2d(w // 2, w // 2, 3, padding=1), nn.SiLU())
        self.to_rgb = nn.Conv2d(w // 2, 3, 1)

    def forward(self, feature_map: torch.Tensor) -> torch.Tensor:
        """(B?, low, low, d_feat) -> (B?, out, out, 3) in [0, 1]."""
        squeeze = feature_map.dim() == 3
        if squeeze:
            feature_map = feature_map.unsqueeze(0)
        lr = self.cfg.low_res
        if feature_map.dim() != 4 or feature_map.shape[1:] != (lr, lr, self.cfg.d_feat):
            raise DimensionError(f"expected ({lr}, {lr}, {self.cfg.d_feat}) feature map, got {tuple(feature_map.shape)}")
        x = feature_map.permute(0, 3, 1, 2)
        x = self.stage1(F.interpolate(x, scale_factor=2, mode="nearest"))
        x = self.stage2(F.interpolate(x, scale_factor=2, mode="nearest"))
        img = torch.sigmoid(self.to_rgb(x)).permute(0, 2, 3, 1)
        return img[0] if squeeze else img


def render_feature_map(field_fn: FieldFn, pose: CameraPose, cfg: RenderConfig, *, perturb: bool = False,
                       seed: int | None = None, dtype=torch.float32) -> torch.Tensor:
    """Low-resolution feature map (low, low, d_feat) for a pose given at output resolution."""
    low_pose = pose.scaled(1.0 / cfg.upsample_factor)
    bundle = generate_rays(low_pose, cfg.low_res, cfg.low_res, cfg.t_near, cfg.t_far, dtype=dtype)
    generator = None
    if perturb:
        generator = torch.Generator().manual_seed(0 if seed is None else seed)
    feature, _, _ = render_rays(field_fn, bundle, cfg, perturb=perturb, generator=generator)
    return feature.reshape(cfg.low_res, cfg.low_res, -1)


def render_frame(pose: CameraPose, params: HeadParams, cfg: RenderConfig, field: ConditionalField,
                 upsampler: UpsamplerHu, *, perturb: bool = False, seed: int | None = None) -> torch.Tensor:
    """Full frame F_hat_t (out, out, 3): feature-map volume rendering followed by H_u."""
    dtype = next(field.parameters()).dtype
    fmap = render_feature_map(field.bind(params), pose, cfg, perturb=perturb, seed=seed, dtype=dtype)
    return upsampler(fmap)


def photometric_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Sum of squared pixel differences."""
    if pred.shape != gt.shape:
        raise DimensionError(f"shape mismatch {tuple(pred.shape)} vs {tuple(gt.shape)}")
    return torch.sum((pred - gt) ** 2)


def psnr(pred: torch.Tensor, gt: torch.Tensor) -> float:
    mse = photometric_loss(pred, gt).item() / pred.numel()
    return float("inf") if mse == 0 else -10.0 * math.log10(mse)
