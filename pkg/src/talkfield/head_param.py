"""Five-part head parameterisation and the image prior extractor."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .errors import DimensionError, InputShapeError, NumericError

ID_DIM, EXP_DIM, ALB_DIM, ILLU_DIM = 100, 79, 100, 27
HEAD_DIMS = {"f_id": ID_DIM, "f_exp_aud": EXP_DIM, "f_exp_style": EXP_DIM, "f_alb": ALB_DIM, "f_illu": ILLU_DIM}
PRIOR_DIMS = {"f_id": ID_DIM, "f_exp": EXP_DIM, "f_alb": ALB_DIM, "f_illu": ILLU_DIM}


def _check_fields(obj, dims: dict[str, int]) -> None:
    lead = None
    for name, size in dims.items():
        value = getattr(obj, name)
        if not isinstance(value, torch.Tensor):
            raise DimensionError(f"{name} must be a tensor")
        if value.shape[-1:] != (size,):
            raise DimensionError(f"{name} must have trailing length {size}, got {tuple(value.shape)}")
        if lead is None:
            lead = value.shape[:-1]
        elif value.shape[:-1] != lead:
            raise DimensionError("all parameter blocks must share leading dimensions")
        if not torch.isfinite(value).all():
            raise NumericError(f"{name} contains non-finite values")


@dataclass(frozen=True)
class ExtractedPrior:
    """Image-derived subset of the head parameters.

    ``f_exp`` is the ground-truth expression when extracted from a real frame
    and the speech-movement expression when extracted from a Lip-wav frame.
    """

    f_id: torch.Tensor
    f_exp: torch.Tensor
    f_alb: torch.Tensor
    f_illu: torch.Tensor

    def __post_init__(self):
        _check_fields(self, PRIOR_DIMS)


@dataclass(frozen=True)
class HeadParams:
    f_id: torch.Tensor
    f_exp_aud: torch.Tensor
    f_exp_style: torch.Tensor
    f_alb: torch.Tensor
    f_illu: torch.Tensor

    def __post_init__(self):
        _check_fields(self, HEAD_DIMS)

    def shape_condition(self) -> torch.Tensor:
        """Blocks that condition density and features: id, both expressions, albedo."""
        return torch.cat([self.f_id, self.f_exp_aud, self.f_exp_style, self.f_alb], dim=-1)

    def replace(self, **blocks) -> "HeadParams":
        fields = {k: getattr(self, k) for k in HEAD_DIMS}
        fields.update(blocks)
        return HeadParams(**fields)

    def to(self, *args, **kwargs) -> "HeadParams":
        return HeadParams(**{k: getattr(self, k).to(*args, **kwargs) for k in HEAD_DIMS})


def assemble(prior: ExtractedPrior, exp_aud: torch.Tensor, exp_style: torch.Tensor) -> HeadParams:
    """Compose head parameters from an extracted prior and two expression blocks."""
    for name, value in (("exp_aud", exp_aud), ("exp_style", exp_style)):
        if value.shape[-1:] != (EXP_DIM,):
            raise DimensionError(f"{name} must have length {EXP_DIM}")
    return HeadParams(prior.f_id, exp_aud, exp_style, prior.f_alb, prior.f_illu)


def check_frame(frame: torch.Tensor, resolution: int) -> torch.Tensor:
    """Validate a frame and return it as a (B, 3, H, W) batch.

    Accepts (H, W, 3) or (B, H, W, 3) images in [0, 1].
    """
    if frame.dim() == 3:
        frame = frame.unsqueeze(0)
    if frame.dim() != 4 or frame.shape[1:] != (resolution, resolution, 3):
        raise InputShapeError(f"expected ({resolution}, {resolution}, 3) frames, got {tuple(frame.shape)}")
    if not torch.isfinite(frame).all() or frame.min() < 0 or frame.max() > 1:
        raise InputShapeError("pixel values must lie in [0, 1]")
    return frame.permute(0, 3, 1, 2)


def conv_trunk(channels: tuple[int, ...]) -> nn.Sequential:
    """Stride-2 3x3 conv stack with SiLU; halves resolution per layer."""
    layers = []
    for c_in, c_out in zip(channels[:-1], channels[1:]):
        layers += [nn.Conv2d(c_in, c_out, 3, stride=2, padding=1), nn.SiLU()]
    return nn.Sequential(*layers)


class PriorExtractor(nn.Module):
    """Convolutional stand-in for morphable-model fitting.

    Four stride-2 convolutions reduce a 64x64 frame to 4x4, a shared hidden
    layer follows, and one linear head per prior block.
    """

    def __init__(self, resolution: int = 64, width: int = 32, hidden: int = 256):
        super().__init__()
        self.resolution = resolution
        self.trunk = conv_trunk((3, width // 2, width, 2 * width, 2 * width))
        flat = 2 * width * (resolution // 16) ** 2
        self.hidden = nn.Sequential(nn.Flatten(), nn.Linear(flat, hidden), nn.SiLU())
        self.heads = nn.ModuleDict({name: nn.Linear(hidden, size) for name, size in PRIOR_DIMS.items()})

    def forward(self, frame: torch.Tensor) -> ExtractedPrior:
        squeeze = frame.dim() == 3
        h = self.hidden(self.trunk(check_frame(frame, self.resolution)))
        out = {name: head(h) for name, head in self.heads.items()}
        if squeeze:
            out = {k: v[0] for k, v in out.items()}
        return ExtractedPrior(**out)


def extract_prior(extractor: PriorExtractor, frame: torch.Tensor) -> ExtractedPrior:
    """Prior of a single frame under a fixed weight snapshot."""
    with torch.no_grad():
        return extractor(frame)
