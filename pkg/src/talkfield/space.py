"""Local-global standardized space.

Frames are encoded twice: an AU encoder produces a local semantic feature and
a global encoder a grid of whole-face tokens. Each vector is snapped to its
nearest entry in a learned codebook, and a decoder turns the standardized
features back into an image.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .errors import ArgumentError, DimensionError
from .head_param import check_frame, conv_trunk

BCE_CLAMP = 1e-7


@dataclass(frozen=True)
class AUWeightVector:
    w: torch.Tensor
    r: torch.Tensor


def compute_au_weights(r) -> AUWeightVector:
    """w_i = n_AU (1 / r_i) / sum_j (1 / r_j); rare AUs get larger weights."""
    r = torch.as_tensor(r, dtype=torch.float64)
    if r.dim() != 1 or r.numel() == 0:
        raise ArgumentError("occurrence rates must be a nonempty vector")
    if torch.any(r <= 0) or torch.any(r > 1):
        raise ArgumentError("occurrence rates must lie in (0, 1]")
    inv = 1.0 / r
    return AUWeightVector(r.numel() * inv / inv.sum(), r)


def _au_args(x, x_hat, w):
    weights = w.w if isinstance(w, AUWeightVector) else torch.as_tensor(w)
    if x.shape != x_hat.shape or x.shape[-1] != weights.shape[-1]:
        raise DimensionError("AU labels, predictions and weights must have matching lengths")
    return weights.to(x_hat.dtype)


def bce_loss(x: torch.Tensor, x_hat: torch.Tensor, w) -> torch.Tensor:
    """Weighted binary cross-entropy averaged over AUs (and over the batch, if any)."""
    weights = _au_args(x, x_hat, w)
    p = torch.clamp(x_hat, BCE_CLAMP, 1.0 - BCE_CLAMP)
    per = -(weights * (x * torch.log(p) + (1 - x) * torch.log(1 - p))).mean(dim=-1)
    return per.mean()


def dice_loss(x: torch.Tensor, x_hat: torch.Tensor, w, eps: float = 1e-7) -> torch.Tensor:
    """Weighted multi-label Dice loss, one bracket per AU."""
    if eps <= 0:
        raise ArgumentError("eps must be positive")
    weights = _au_args(x, x_hat, w)
    ratio = (2 * x * x_hat + eps) / (x**2 + x_hat**2 + eps)
    return (weights * (1 - ratio)).mean(dim=-1).mean()


def au_loss(x, x_hat, w, eps: float = 1e-7) -> torch.Tensor:
    return bce_loss(x, x_hat, w) + dice_loss(x, x_hat, w, eps)


class Codebook(nn.Module):
    """M entries of dimension d, initialised uniformly in [-1/M, 1/M]."""

    def __init__(self, size: int, dim: int, dead_after: int = 500):
        super().__init__()
        if size < 1 or dim < 1:
            raise ArgumentError("codebook needs at least one entry of positive dimension")
        self.entries = nn.Parameter(torch.empty(size, dim).uniform_(-1.0 / size, 1.0 / size))
        self.dead_after = dead_after
        self.register_buffer("last_used", torch.zeros(size, dtype=torch.long))

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]

    @torch.no_grad()
    def mark_used(self, index: torch.Tensor, step: int) -> None:
        self.last_used[index.flatten().unique()] = step

    @torch.no_grad()
    def reseed_dead(self, step: int, samples: torch.Tensor, generator: torch.Generator | None = None) -> int:
        """Move entries unused for ``dead_after`` steps onto random rows of ``samples``."""
        dead = torch.nonzero(step - self.last_used >= self.dead_after).flatten()
        if dead.numel() == 0 or samples.numel() == 0:
            return 0
        pick = torch.randint(0, samples.shape[0], (dead.numel(),), generator=generator)
        self.entries[dead] = samples.detach()[pick].to(self.entries.dtype)
        self.last_used[dead] = step
        return int(dead.numel())


@dataclass(frozen=True)
class QuantizeResult:
    quantized: torch.Tensor  # equals entries[index]; gradient flows straight through to f_hat
    index: torch.Tensor
    entry: torch.Tensor  # entries[index] with gradient to the codebook


class _StraightThrough(torch.autograd.Function):
    @staticmethod
    def forward(ctx, f_hat, entry):
        return entry.clone()

    @staticmethod
    def backward(ctx, grad):
        return grad, None


def nearest_index(f_hat: torch.Tensor, entries: torch.Tensor) -> torch.Tensor:
    """Arg-min L2 over entries; ties go to the lowest index."""
    dist = ((f_hat.unsqueeze(-2) - entries) ** 2).sum(dim=-1)
    return torch.argmin(dist, dim=-1)


def quantize(f_hat: torch.Tensor, book) -> QuantizeResult:
    """Snap ``f_hat`` (..., d) to its nearest codebook entry."""
    entries = book.entries if isinstance(book, Codebook) else torch.as_tensor(book)
    if entries.dim() != 2 or entries.shape[0] == 0:
        raise ArgumentError("codebook must be a nonempty (M, d) matrix")
    if f_hat.shape[-1] != entries.shape[1]:
        raise ArgumentError(f"input dimension {f_hat.shape[-1]} does not match codebook dimension {entries.shape[1]}")
    index = nearest_index(f_hat.detach(), entries.detach().to(f_hat.dtype))
    entry = entries[index]
    return QuantizeResult(_StraightThrough.apply(f_hat, entry), index, entry)


def codebook_term(f_hat: torch.Tensor, f_q: torch.Tensor) -> torch.Tensor:
    """||sg(f_hat) - f_q||^2; moves codebook entries only."""
    return ((f_hat.detach() - f_q) ** 2).sum(-1).mean()


def commitment_term(f_hat: torch.Tensor, f_q: torch.Tensor) -> torch.Tensor:
    """||f_hat - sg(f_q)||^2; moves the encoder only."""
    return ((f_hat - f_q.detach()) ** 2).sum(-1).mean()


def standardized_loss(F_hat_plus, F_t, f_hat_au, f_au, f_hat_glo, f_glo, beta1: float = 0.25,
                      beta2: float = 0.25) -> torch.Tensor:
    """L1 reconstruction plus codebook and commitment terms for both spaces.

    Either space may be skipped by passing None for its pair of features.
    Batched features average their per-sample squared norms.
    """
    if F_hat_plus.shape != F_t.shape:
        raise DimensionError("reconstruction and target images differ in shape")
    if beta1 < 0 or beta2 < 0:
        raise ArgumentError("trade-off weights must be nonnegative")
    n = F_t.shape[0] if F_t.dim() == 4 else 1
    loss = torch.abs(F_hat_plus - F_t).sum() / n
    for f_hat, f_q, beta in ((f_hat_au, f_au, beta1), (f_hat_glo, f_glo, beta2)):
        if f_hat is None:
            continue
        if f_hat.shape != f_q.shape:
            raise DimensionError("encoder output and codebook feature differ in shape")
        loss = loss + codebook_term(f_hat, f_q) + beta * commitment_term(f_hat, f_q)
    return loss


class AUEncoder(nn.Module):
    """Four convolutions and four fully connected layers to the AU feature, plus a sigmoid AU head."""

    def __init__(self, resolution: int = 64, d_code: int = 32, n_au: int = 9):
        super().__init__()
        self.resolution = resolution
        self.convs = conv_trunk((3, 16, 32, 64, 64))
        flat = 64 * (resolution // 16) ** 2
        self.fcs = nn.Sequential(nn.Flatten(), nn.Linear(flat, 256), nn.SiLU(), nn.Linear(256, 128), nn.SiLU(),
                                 nn.Linear(128, 64), nn.SiLU(), nn.Linear(64, d_code))
        self.head = nn.Linear(d_code, n_au)

    def encode(self, frame: torch.Tensor) -> torch.Tensor:
        squeeze = frame.dim() == 3
        # centred input shortens the constant-predictor plateau early in training
        out = self.fcs(self.convs(2 * check_frame(frame, self.resolution) - 1))
        return out[0] if squeeze else out

    def predict(self, frame: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.head(self.encode(frame)))


class GlobalEncoder(nn.Module):
    """Three stride-2 convolutions to a grid of d_code tokens, one per 8x8 patch."""

    def __init__(self, resolution: int = 64, d_code: int = 64):
        super().__init__()
        self.resolution = resolution
        self.net = nn.Sequential(conv_trunk((3, 32, 64, 128)), nn.Conv2d(128, d_code, 1))

    def forward(self, frame: torch.Tensor) -> torch.Tensor:
        """(..., H, W, 3) -> (..., H/8, W/8, d_code)."""
        squeeze = frame.dim() == 3
        out = self.net(2 * check_frame(frame, self.resolution) - 1).permute(0, 2, 3, 1)
        return out[0] if squeeze else out


class Decoder(nn.Module):
    """(f_AU, f_glo token grid) -> RGB image.

    The AU feature is projected and broadcast over the token grid, then three
    x2 upsampling stages bring the grid to full resolution. Output is not
    bounded; callers clamp to [0, 1] for display.
    """

    def __init__(self, d_au: int = 32, d_glo: int = 64, resolution: int = 64, width: int = 64):
        super().__init__()
        self.d_au, self.d_glo, self.width = d_au, d_glo, width
        self.grid = resolution // 8
        self.au_proj = nn.Linear(d_au, width)
        self.mix = nn.Sequential(nn.Conv2d(d_glo + width, width, 3, padding=1), nn.SiLU())
        chans = (width, width, width // 2, width // 4)
        stages = []
        for a, b in zip(chans[:-1], chans[1:]):
            stages += [nn.Upsample(scale_factor=2), nn.Conv2d(a, b, 3, padding=1), nn.SiLU()]
        self.stages = nn.Sequential(*stages)
        self.to_rgb = nn.Conv2d(chans[-1], 3, 3, padding=1)

    def forward(self, f_au: torch.Tensor, f_glo: torch.Tensor) -> torch.Tensor:
        g = self.grid
        if (f_au.shape[-1] != self.d_au or f_glo.shape[-3:] != (g, g, self.d_glo)
                or f_au.shape[:-1] != f_glo.shape[:-3]):
            raise DimensionError(f"decoder expects a {self.d_au}-vector and a ({g}, {g}, {self.d_glo}) grid")
        squeeze = f_au.dim() == 1
        a = self.au_proj(f_au.reshape(-1, self.d_au))[:, :, None, None].expand(-1, -1, g, g)
        x = torch.cat([f_glo.reshape(-1, g, g, self.d_glo).permute(0, 3, 1, 2), a], dim=1)
        # linear output: a sigmoid saturates on the many exactly-black pixels under L1
        img = self.to_rgb(self.stages(self.mix(x))).permute(0, 2, 3, 1)
        return img[0] if squeeze else img


class StandardizedSpace(nn.Module):
    def __init__(self, resolution: int = 64, n_au: int = 9, au_book: tuple[int, int] = (64, 32),
                 global_book: tuple[int, int] = (128, 64), dead_after: int = 500):
        super().__init__()
        self.au_encoder = AUEncoder(resolution, au_book[1], n_au)
        self.global_encoder = GlobalEncoder(resolution, global_book[1])
        self.book_s = Codebook(*au_book, dead_after=dead_after)
        self.book_g = Codebook(*global_book, dead_after=dead_after)
        self.decoder = Decoder(au_book[1], global_book[1], resolution)

    def forward(self, frame: torch.Tensor, *, use_au: bool = True, use_global: bool = True) -> dict:
        """Encode, quantize and decode. A disabled space feeds zeros to the decoder."""
        if not (use_au or use_global):
            return {"image": frame}
        out: dict = {}
        lead = frame.shape[:-3]
        g = self.decoder.grid
        if use_au:
            f_hat = self.au_encoder.encode(frame)
            q = quantize(f_hat, self.book_s)
            out.update(f_hat_au=f_hat, au=q)
            f_au = q.quantized
        else:
            f_au = frame.new_zeros(*lead, self.book_s.dim)
        if use_global:
            g_hat = self.global_encoder(frame)
            qg = quantize(g_hat, self.book_g)
            out.update(f_hat_glo=g_hat, glo=qg)
            f_glo = qg.quantized
        else:
            f_glo = frame.new_zeros(*lead, g, g, self.book_g.dim)
        out["image"] = self.decoder(f_au, f_glo)
        return out


def au_encode(space: StandardizedSpace, frame: torch.Tensor) -> torch.Tensor:
    with torch.no_grad():
        return space.au_encoder.encode(frame)


def au_predict(space: StandardizedSpace, frame: torch.Tensor) -> torch.Tensor:
    with torch.no_grad():
        return space.au_encoder.predict(frame)


def decode(space: StandardizedSpace, f_au: torch.Tensor, f_glo: torch.Tensor) -> torch.Tensor:
    return space.decoder(f_au, f_glo)
