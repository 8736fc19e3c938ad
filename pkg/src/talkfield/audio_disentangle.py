"""Audio disentanglement into speech-movement and speaking-style expressions.

Flow: LipNet turns (identity frame, audio) into a Lip-wav frame, the prior
extractor reads its expression as ``f_exp_aud``, StyleNet reads ``f_exp_style``
from the audio, and FuseNet recombines both into ``f_gen_exp`` which is
supervised against the expression of the real frame.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ArgumentError, DimensionError, InputShapeError
from .head_param import EXP_DIM, PriorExtractor, check_frame, conv_trunk

COS_CLAMP = 1e-7


def check_audio(audio: torch.Tensor, window_frames: int, n_mel: int) -> torch.Tensor:
    """Validate an audio window and return it as a (B, T_a, n_mel) batch."""
    if audio.dim() == 2:
        audio = audio.unsqueeze(0)
    if audio.dim() != 3 or audio.shape[1:] != (window_frames, n_mel):
        raise InputShapeError(f"expected ({window_frames}, {n_mel}) audio windows, got {tuple(audio.shape)}")
    if not torch.isfinite(audio).all():
        raise InputShapeError("audio features must be finite")
    return audio


@dataclass(frozen=True)
class SyncEmbeddings:
    f_lip: torch.Tensor
    f_a: torch.Tensor

    def __post_init__(self):
        if self.f_lip.shape != self.f_a.shape:
            raise DimensionError("face and audio embeddings must have equal shapes")


@dataclass(frozen=True)
class DisentangledAudio:
    f_exp_aud: torch.Tensor
    f_exp_style: torch.Tensor


def _mlp(sizes: Sequence[int], out_act: nn.Module | None = None) -> nn.Sequential:
    layers: list[nn.Module] = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(nn.Linear(a, b))
        if i < len(sizes) - 2:
            layers.append(nn.SiLU())
    if out_act is not None:
        layers.append(out_act)
    return nn.Sequential(*layers)


class LipNet(nn.Module):
    """Small U-Net: identity frame + audio -> Lip-wav frame at the same resolution.

    The network predicts a logit-space residual on top of the identity frame.
    """

    def __init__(self, resolution: int = 64, window_frames: int = 16, n_mel: int = 20, width: int = 16):
        super().__init__()
        self.resolution, self.window_frames, self.n_mel = resolution, window_frames, n_mel
        w = width
        self.down1 = nn.Sequential(nn.Conv2d(3, w, 3, 2, 1), nn.SiLU())
        self.down2 = nn.Sequential(nn.Conv2d(w, 2 * w, 3, 2, 1), nn.SiLU())
        self.down3 = nn.Sequential(nn.Conv2d(2 * w, 2 * w, 3, 2, 1), nn.SiLU())
        self.audio = _mlp([window_frames * n_mel, 256, 2 * w], nn.SiLU())
        self.up3 = nn.Sequential(nn.Conv2d(4 * w, 2 * w, 3, 1, 1), nn.SiLU())
        self.up2 = nn.Sequential(nn.Conv2d(4 * w, 2 * w, 3, 1, 1), nn.SiLU())
        self.up1 = nn.Sequential(nn.Conv2d(3 * w, w, 3, 1, 1), nn.SiLU())
        self.out = nn.Conv2d(w + 3, 3, 3, 1, 1)
        # residual in logit space, starting as a copy of the identity frame
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, identity_frame: torch.Tensor, audio: torch.Tensor) -> torch.Tensor:
        squeeze = identity_frame.dim() == 3 and audio.dim() == 2
        x = check_frame(identity_frame, self.resolution)
        a = check_audio(audio, self.window_frames, self.n_mel)
        if a.shape[0] != x.shape[0]:
            if x.shape[0] != 1:
                raise InputShapeError("frame and audio batch sizes differ")
            x = x.expand(a.shape[0], -1, -1, -1)
        d1 = self.down1(x)
        d2 = self.down2(d1)
        d3 = self.down3(d2)
        code = self.audio(a.flatten(1))[:, :, None, None].expand(-1, -1, *d3.shape[2:])
        u = self.up3(torch.cat([d3, code], 1))
        u = self.up2(torch.cat([F.interpolate(u, scale_factor=2), d2], 1))
        u = self.up1(torch.cat([F.interpolate(u, scale_factor=2), d1], 1))
        delta = self.out(torch.cat([F.interpolate(u, scale_factor=2), x], 1))
        img = torch.sigmoid(torch.logit(x, eps=1e-3) + delta).permute(0, 2, 3, 1)
        return img[0] if squeeze else img


def lipnet_generate(lipnet: LipNet, identity_frame: torch.Tensor, audio: torch.Tensor) -> torch.Tensor:
    with torch.no_grad():
        return lipnet(identity_frame, audio)


class SyncNet(nn.Module):
    """Face encoder (lower half of the frame) and audio encoder into a shared embedding.

    Both towers end in ReLU so cosine similarities are nonnegative.
    """

    def __init__(self, resolution: int = 64, window_frames: int = 16, n_mel: int = 20, d_sync: int = 64):
        super().__init__()
        self.resolution, self.window_frames, self.n_mel = resolution, window_frames, n_mel
        self.face = nn.Sequential(conv_trunk((3, 32, 64, 64)), nn.Flatten(),
                                  nn.Linear(64 * (resolution // 16) * (resolution // 8), 256), nn.SiLU(),
                                  nn.Linear(256, d_sync), nn.ReLU())
        self.audio = _mlp([window_frames * n_mel, 256, 128, d_sync], nn.ReLU())

    def embed_face(self, face: torch.Tensor) -> torch.Tensor:
        x = check_frame(face, self.resolution)
        return self.face(x[:, :, self.resolution // 2:, :])

    def embed_audio(self, audio: torch.Tensor) -> torch.Tensor:
        return self.audio(check_audio(audio, self.window_frames, self.n_mel).flatten(1))

    def forward(self, face: torch.Tensor, audio: torch.Tensor) -> SyncEmbeddings:
        squeeze = face.dim() == 3
        f_lip, f_a = self.embed_face(face), self.embed_audio(audio)
        if f_lip.shape != f_a.shape:
            raise InputShapeError("face and audio batch sizes differ")
        return SyncEmbeddings(f_lip[0], f_a[0]) if squeeze else SyncEmbeddings(f_lip, f_a)


def syncnet_embed(syncnet: SyncNet, face: torch.Tensor, audio: torch.Tensor) -> SyncEmbeddings:
    with torch.no_grad():
        return syncnet(face, audio)


def cosine(f_lip: torch.Tensor, f_a: torch.Tensor, eps: float = 1e-8) -> torch.Tensor:
    """(f_lip . f_a) / max(|f_lip| |f_a|, eps) along the last axis."""
    denom = torch.clamp(f_lip.norm(dim=-1) * f_a.norm(dim=-1), min=eps)
    return (f_lip * f_a).sum(dim=-1) / denom


def _stack(pairs) -> SyncEmbeddings:
    if isinstance(pairs, SyncEmbeddings):
        if pairs.f_lip.dim() == 1:
            return SyncEmbeddings(pairs.f_lip[None], pairs.f_a[None])
        return pairs
    pairs = list(pairs)
    if not pairs:
        raise ArgumentError("lip_sync_loss needs at least one pair")
    return SyncEmbeddings(torch.stack([p.f_lip for p in pairs]), torch.stack([p.f_a for p in pairs]))


def lip_sync_loss(pairs, eps: float = 1e-8) -> torch.Tensor:
    """Mean of -log(cosine) over the batch, cosine clamped to [1e-7, 1].

    ``pairs`` is a list of SyncEmbeddings or one batched SyncEmbeddings.
    """
    if eps <= 0:
        raise ArgumentError("eps must be positive")
    batch = _stack(pairs)
    if batch.f_lip.shape[0] == 0:
        raise ArgumentError("lip_sync_loss needs at least one pair")
    cos = torch.clamp(cosine(batch.f_lip, batch.f_a, eps), COS_CLAMP, 1.0)
    return -torch.log(cos).mean()


def sync_negative_loss(f_lip: torch.Tensor, f_a_shuffled: torch.Tensor, eps: float = 1e-8) -> torch.Tensor:
    """-log(1 - cos) on mismatched pairs, the negative half of a binary cross-entropy on the cosine."""
    cos = torch.clamp(cosine(f_lip, f_a_shuffled, eps), max=1.0 - 1e-7)
    return -torch.log1p(-cos).mean()


class StyleNet(nn.Module):
    def __init__(self, window_frames: int = 16, n_mel: int = 20):
        super().__init__()
        self.window_frames, self.n_mel = window_frames, n_mel
        self.net = _mlp([window_frames * n_mel, 256, 128, EXP_DIM])

    def forward(self, audio: torch.Tensor) -> torch.Tensor:
        squeeze = audio.dim() == 2
        out = self.net(check_audio(audio, self.window_frames, self.n_mel).flatten(1))
        return out[0] if squeeze else out


def stylenet_extract(stylenet: StyleNet, audio: torch.Tensor) -> torch.Tensor:
    with torch.no_grad():
        return stylenet(audio)


class FuseNet(nn.Module):
    """Residual MLP over the concatenated expressions."""

    def __init__(self, hidden: int = 128):
        super().__init__()
        self.net = _mlp([2 * EXP_DIM, hidden, hidden, EXP_DIM])

    def forward(self, f_exp_aud: torch.Tensor, f_exp_style: torch.Tensor) -> torch.Tensor:
        if f_exp_aud.shape[-1:] != (EXP_DIM,) or f_exp_style.shape != f_exp_aud.shape:
            raise DimensionError(f"both expressions must have length {EXP_DIM}")
        return f_exp_aud + f_exp_style + self.net(torch.cat([f_exp_aud, f_exp_style], dim=-1))


def fuse(fusenet: FuseNet, f_exp_aud: torch.Tensor, f_exp_style: torch.Tensor) -> torch.Tensor:
    return fusenet(f_exp_aud, f_exp_style)


def exp_loss(f_gen_exp: torch.Tensor, f_gt_exp: torch.Tensor) -> torch.Tensor:
    """Squared L2 distance; batched inputs average the per-sample sums."""
    if f_gen_exp.shape != f_gt_exp.shape or f_gen_exp.shape[-1] != EXP_DIM:
        raise DimensionError(f"expression vectors must both have length {EXP_DIM}")
    per = torch.sum((f_gen_exp - f_gt_exp) ** 2, dim=-1)
    return per.mean() if per.dim() else per


class WholeAudioEncoder(nn.Module):
    """Ablation baseline: maps the entire audio window straight to both expression blocks."""

    def __init__(self, window_frames: int = 16, n_mel: int = 20):
        super().__init__()
        self.window_frames, self.n_mel = window_frames, n_mel
        self.net = _mlp([window_frames * n_mel, 256, 2 * EXP_DIM])

    def forward(self, audio: torch.Tensor) -> DisentangledAudio:
        out = self.net(check_audio(audio, self.window_frames, self.n_mel).flatten(1))
        return DisentangledAudio(out[:, :EXP_DIM], out[:, EXP_DIM:])


class AudioDisentangler(nn.Module):
    """Holds the four networks plus a snapshot of the prior extractor."""

    def __init__(self, resolution: int = 64, window_frames: int = 16, n_mel: int = 20, d_sync: int = 64):
        super().__init__()
        self.lipnet = LipNet(resolution, window_frames, n_mel)
        self.syncnet = SyncNet(resolution, window_frames, n_mel, d_sync)
        self.stylenet = StyleNet(window_frames, n_mel)
        self.fusenet = FuseNet()
        self.extractor = PriorExtractor(resolution)

    def forward(self, identity_frame: torch.Tensor, audio: torch.Tensor):
        """Returns (DisentangledAudio, Lip-wav frames, fused expression)."""
        lipwav = self.lipnet(identity_frame, audio)
        exp_aud = self.extractor(lipwav).f_exp
        exp_style = self.stylenet(audio)
        return DisentangledAudio(exp_aud, exp_style), lipwav, self.fusenet(exp_aud, exp_style)
