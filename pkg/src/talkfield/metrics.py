"""Evaluation metrics: SSIM, LMD-79, AU accuracy and SyncNet confidence."""

from __future__ import annotations

import numpy as np
import torch
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ArgumentError, DimensionError, InputShapeError
from .synth import N_LANDMARKS, SceneSpec, gt_landmarks, render_gt


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def to_gray(image: np.ndarray) -> np.ndarray:
    """ITU-R 601 luma of an (H, W, 3) image; 2-D input passes through."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return image
    return image[..., :3] @ np.array([0.299, 0.587, 0.114])


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0, win_size: int = 11, sigma: float = 1.5) -> float:
    """Mean structural similarity of two grayscale images (valid windows only)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise DimensionError(f"ssim needs two equal-shape grayscale images, got {a.shape} and {b.shape}")
    if min(a.shape) < win_size:
        raise DimensionError("image smaller than the SSIM window")
    w = gaussian_window(win_size, sigma)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2

    def filt(x):
        return np.einsum("ijkl,kl->ij", sliding_window_view(x, (win_size, win_size)), w)

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a**2
    var_b = filt(b * b) - mu_b**2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def lmd79(a: np.ndarray, b: np.ndarray) -> float:
    """Mean Euclidean distance between corresponding lip landmarks."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != (N_LANDMARKS, 2) or b.shape != (N_LANDMARKS, 2):
        raise DimensionError(f"landmark sets must be ({N_LANDMARKS}, 2), got {a.shape} and {b.shape}")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise DimensionError("landmarks must be finite")
    return float(np.mean(np.linalg.norm(a - b, axis=1)))


def au_acc(pred, gt, threshold: float = 0.5) -> float:
    """Fraction of AUs whose thresholded prediction matches the binary label."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise DimensionError("prediction and label shapes differ")
    if not np.all((gt == 0) | (gt == 1)):
        raise ArgumentError("ground-truth AU labels must be binary")
    return float(np.mean((pred >= threshold) == (gt == 1)))


def syncnet_confidence(syncnet, frames, audio) -> float:
    """Mean cosine similarity between face and audio embeddings of matched pairs."""
    from .audio_disentangle import cosine

    frames, audio = list(frames), list(audio)
    if not frames or len(frames) != len(audio):
        raise ArgumentError("need equal-length, nonempty frame and audio lists")
    dtype = next(syncnet.parameters()).dtype
    with torch.no_grad():
        f = torch.stack([torch.as_tensor(np.asarray(x), dtype=dtype) for x in frames])
        a = torch.stack([torch.as_tensor(np.asarray(x), dtype=dtype) for x in audio])
        emb = syncnet(f, a)
        return float(cosine(emb.f_lip, emb.f_a).mean())


class LandmarkFitter:
    """Lip landmarks of an arbitrary frame by analysis-by-synthesis.

    For a known scene and pose, the (aperture, style) pair whose analytic
    render is closest to the frame in the mouth neighbourhood is found on a
    grid, and its contour is sampled exactly as the ground-truth landmarks.
    Renders are cached per (scene, pose).
    """

    def __init__(self, n_aperture: int = 41, n_style: int = 21, resolution: int = 64, supersample: int = 2):
        self.apertures = np.linspace(0.0, 1.0, n_aperture)
        self.styles = np.linspace(0.0, 1.0, n_style)
        self.resolution = resolution
        self.supersample = supersample
        self._banks: dict = {}

    def _bank(self, scene: SceneSpec, pose, key):
        if key not in self._banks:
            imgs = np.stack([
                np.stack([render_gt(scene, pose, 0, resolution=self.resolution, supersample=self.supersample,
                                    aperture=a, style=e) for e in self.styles])
                for a in self.apertures
            ])
            spread = imgs.std(axis=(0, 1)).sum(-1)
            mask = spread > 1e-6
            self._banks[key] = (to_gray(imgs)[..., mask], mask)
        return self._banks[key]

    def fit(self, frame: np.ndarray, scene: SceneSpec, pose, key=None) -> tuple[float, float]:
        frame = np.asarray(frame, dtype=np.float64)
        if frame.shape != (self.resolution, self.resolution, 3):
            raise InputShapeError("frame resolution does not match the fitter")
        key = key if key is not None else (scene.seed, tuple(pose.translation))
        bank, mask = self._bank(scene, pose, key)
        err = ((bank - to_gray(frame)[mask]) ** 2).sum(-1)
        i, j = np.unravel_index(np.argmin(err), err.shape)
        return float(self.apertures[i]), float(self.styles[j])

    def landmarks(self, frame: np.ndarray, scene: SceneSpec, pose, key=None) -> np.ndarray:
        a, e = self.fit(frame, scene, pose, key)
        return gt_landmarks(scene, pose, 0, aperture=a, style=e)
