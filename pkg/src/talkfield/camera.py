"""Pinhole cameras and ray generation.

Camera convention: x right, y down, z forward (OpenCV). ``rotation`` maps
camera-frame directions to world, ``translation`` is the camera centre.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import ArgumentError, PoseValidationError


@dataclass(frozen=True)
class CameraPose:
    rotation: np.ndarray
    translation: np.ndarray
    intrinsics: tuple[float, float, float, float]  # fx, fy, cx, cy

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        trans = np.asarray(self.translation, dtype=np.float64)
        if rot.shape != (3, 3) or trans.shape != (3,):
            raise PoseValidationError("rotation must be 3x3 and translation length 3")
        if not np.allclose(rot.T @ rot, np.eye(3), atol=1e-6) or abs(np.linalg.det(rot) - 1.0) > 1e-6:
            raise PoseValidationError("rotation must be orthonormal with determinant +1")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)
        object.__setattr__(self, "intrinsics", tuple(float(v) for v in self.intrinsics))

    def scaled(self, factor: float) -> "CameraPose":
        """Same pose with intrinsics for an image ``factor`` times the size."""
        fx, fy, cx, cy = self.intrinsics
        return CameraPose(self.rotation, self.translation, (fx * factor, fy * factor, cx * factor, cy * factor))

    def rolled(self, angle: float) -> "CameraPose":
        """Rotate the camera about its own optical axis by ``angle`` radians."""
        c, s = math.cos(angle), math.sin(angle)
        rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return CameraPose(self.rotation @ rz, self.translation, self.intrinsics)

    def project(self, points: np.ndarray) -> np.ndarray:
        """World points (..., 3) to pixel coordinates (..., 2)."""
        fx, fy, cx, cy = self.intrinsics
        cam = (np.asarray(points, dtype=np.float64) - self.translation) @ self.rotation
        return np.stack([fx * cam[..., 0] / cam[..., 2] + cx, fy * cam[..., 1] / cam[..., 2] + cy], axis=-1)

    def to_dict(self) -> dict:
        return {
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
            "intrinsics": list(self.intrinsics),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraPose":
        return cls(np.array(d["rotation"]), np.array(d["translation"]), tuple(d["intrinsics"]))


def look_at_pose(yaw_deg: float, distance: float, resolution: int, fov_deg: float = 40.0,
                 pitch_deg: float = 0.0) -> CameraPose:
    """Camera on a sphere around the origin, looking at it, world y up."""
    yaw, pitch = math.radians(yaw_deg), math.radians(pitch_deg)
    centre = distance * np.array([math.sin(yaw) * math.cos(pitch), math.sin(pitch), math.cos(yaw) * math.cos(pitch)])
    forward = -centre / np.linalg.norm(centre)
    right = np.cross(forward, [0.0, 1.0, 0.0])
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward], axis=1)
    f = resolution / (2.0 * math.tan(math.radians(fov_deg) / 2.0))
    return CameraPose(rot, centre, (f, f, resolution / 2.0, resolution / 2.0))


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_near: float
    t_far: float

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ArgumentError("ray direction must be unit length")
        if not 0 < self.t_near < self.t_far:
            raise ArgumentError("need 0 < t_near < t_far")


@dataclass(frozen=True)
class RayBundle:
    """All rays of one image, flattened row-major (row = y)."""

    origins: torch.Tensor  # (H*W, 3)
    directions: torch.Tensor  # (H*W, 3)
    width: int
    height: int
    t_near: float = field(default=2.3)
    t_far: float = field(default=4.7)

    def ray(self, index: int) -> Ray:
        return Ray(self.origins[index].double().numpy(), self.directions[index].double().numpy(),
                   self.t_near, self.t_far)


def pixel_directions(pose: CameraPose, width: int, height: int) -> np.ndarray:
    """Unit world-space directions through pixel centres, shape (H, W, 3), float64."""
    if width <= 0 or height <= 0:
        raise ArgumentError("image dimensions must be positive")
    fx, fy, cx, cy = pose.intrinsics
    u, v = np.meshgrid(np.arange(width) + 0.5, np.arange(height) + 0.5)
    cam = np.stack([(u - cx) / fx, (v - cy) / fy, np.ones_like(u)], axis=-1)
    cam /= np.linalg.norm(cam, axis=-1, keepdims=True)
    world = cam @ pose.rotation.T
    return world / np.linalg.norm(world, axis=-1, keepdims=True)


def generate_rays(pose: CameraPose, width: int, height: int, t_near: float = 2.3, t_far: float = 4.7,
                  dtype=torch.float32) -> RayBundle:
    """One ray per pixel of a ``width`` x ``height`` image."""
    if not 0 < t_near < t_far:
        raise ArgumentError("need 0 < t_near < t_far")
    dirs = pixel_directions(pose, width, height).reshape(-1, 3)
    origins = np.broadcast_to(pose.translation, dirs.shape)
    return RayBundle(torch.as_tensor(origins.copy(), dtype=dtype), torch.as_tensor(dirs, dtype=dtype),
                     width, height, t_near, t_far)
