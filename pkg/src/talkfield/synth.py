"""Synthetic talking-head scenes with exact ground truth.

A head is an ellipsoid centred at the origin facing +z, with two dark eyes
and an elliptical mouth whose half-height follows an aperture drive a(t) and
whose half-width follows a speaking-style drive e(t). Every supervision
signal (frames, audio windows, AU labels, lip landmarks, prior coefficients)
is a deterministic function of the scene.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .camera import CameraPose, look_at_pose, pixel_directions
from .errors import ArgumentError, InputShapeError

N_AU = 9
AU_NAMES = ("AU10", "AU12", "AU14", "AU18", "AU20", "AU23", "AU25", "AU26", "AU27")
N_LANDMARKS = 79

# spectral templates of the audio window; first entry is 1 so the centre row
# of bin 0 (resp. bin 8) carries a(t) (resp. e(t)) verbatim
_APERTURE_TEMPLATE = np.array([1.0, 0.8, 0.6, 0.9, 0.5, 0.7, 0.4, 0.3])
_STYLE_TEMPLATE = np.array([1.0, 0.6, 0.8, 0.4, 0.7, 0.5])
_N_CONTENT = len(_APERTURE_TEMPLATE)
_N_STYLE = len(_STYLE_TEMPLATE)
_BASIS_SEED = 20240917


@dataclass(frozen=True)
class DataConfig:
    n_identities: int = 2
    n_frames: int = 200
    yaws: tuple[float, ...] = (-30.0, -15.0, 0.0, 15.0, 30.0)
    resolution: int = 64
    distance: float = 3.5
    fov_deg: float = 40.0
    supersample: int = 2
    window_frames: int = 16  # T_a
    n_mel: int = 20
    test_fraction: float = 0.2
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "DataConfig":
        d = dict(d)
        if "yaws" in d:
            d["yaws"] = tuple(d["yaws"])
        return cls(**d)

    def poses(self) -> list[CameraPose]:
        return [look_at_pose(y, self.distance, self.resolution, self.fov_deg) for y in self.yaws]

    def frontal_pose(self) -> CameraPose:
        return look_at_pose(0.0, self.distance, self.resolution, self.fov_deg)


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    n_frames: int
    axes: tuple[float, float, float]
    mouth_center_y: float
    mouth_half_width: float
    mouth_max_half_height: float
    style_width_gain: float
    eye_offset: tuple[float, float]
    eye_radius: float
    skin_albedo: tuple[float, float, float]
    mouth_color: tuple[float, float, float]
    eye_color: tuple[float, float, float]
    light_dir: tuple[float, float, float]
    light_intensity: tuple[float, float, float]
    ambient: float
    timbre: tuple[float, ...]
    aperture: tuple[float, ...] = field(repr=False)
    style: tuple[float, ...] = field(repr=False)

    def __post_init__(self):
        if self.n_frames < 1 or len(self.aperture) != self.n_frames or len(self.style) != self.n_frames:
            raise ArgumentError("drive signals must have n_frames >= 1 entries")
        a = np.asarray(self.aperture)
        if a.min() < 0 or a.max() > 1:
            raise ArgumentError("aperture drive must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def _drive(rng: np.random.Generator, n: int) -> np.ndarray:
    """Smooth signal normalised to span exactly [0, 1], float32-representable."""
    t = np.arange(n, dtype=np.float64)
    s = np.zeros(n)
    for _ in range(3):
        s += rng.uniform(0.5, 1.0) * np.sin(2 * np.pi * rng.uniform(0.02, 0.12) * t + rng.uniform(0, 2 * np.pi))
    if n == 1:
        return np.zeros(1)
    s = (s - s.min()) / (s.max() - s.min())
    return np.clip(s.astype(np.float32), 0.0, 1.0).astype(np.float64)


def make_scene(seed: int, config: DataConfig | None = None) -> SceneSpec:
    """Deterministic random head from ``seed``."""
    config = config or DataConfig()
    rng = np.random.default_rng([config.seed, seed])
    light = np.array([rng.uniform(-0.4, 0.4), rng.uniform(0.1, 0.5), 1.0])
    light /= np.linalg.norm(light)
    skin = np.array([rng.uniform(0.7, 0.95), rng.uniform(0.5, 0.7), rng.uniform(0.35, 0.55)])
    return SceneSpec(
        seed=seed,
        n_frames=config.n_frames,
        axes=(rng.uniform(0.75, 0.85), rng.uniform(0.95, 1.05), rng.uniform(0.8, 0.9)),
        mouth_center_y=rng.uniform(-0.5, -0.4),
        mouth_half_width=rng.uniform(0.24, 0.3),
        mouth_max_half_height=rng.uniform(0.15, 0.19),
        style_width_gain=0.35,
        eye_offset=(rng.uniform(0.26, 0.32), rng.uniform(0.2, 0.3)),
        eye_radius=rng.uniform(0.08, 0.11),
        skin_albedo=tuple(skin),
        mouth_color=(rng.uniform(0.3, 0.45), 0.05, rng.uniform(0.05, 0.12)),
        eye_color=(0.08, 0.08, rng.uniform(0.1, 0.3)),
        light_dir=tuple(light),
        light_intensity=tuple(rng.uniform(0.9, 1.1, size=3)),
        ambient=rng.uniform(0.3, 0.4),
        timbre=tuple(rng.normal(0.0, 1.0, size=6)),
        aperture=tuple(_drive(rng, config.n_frames)),
        style=tuple(_drive(rng, config.n_frames)),
    )


def _check_t(scene: SceneSpec, t: int) -> None:
    if not 0 <= t < scene.n_frames:
        raise IndexError(f"frame {t} outside [0, {scene.n_frames})")


def mouth_shape(scene: SceneSpec, aperture: float, style: float) -> tuple[float, float]:
    """(half_width, half_height) of the mouth opening."""
    return scene.mouth_half_width * (1.0 + scene.style_width_gain * style), scene.mouth_max_half_height * aperture


def _intersect(scene: SceneSpec, origin: np.ndarray, dirs: np.ndarray):
    axes = np.asarray(scene.axes)
    o = origin / axes
    d = dirs / axes
    a = np.sum(d * d, axis=-1)
    b = 2.0 * np.sum(d * o, axis=-1)
    c = np.sum(o * o) - 1.0
    disc = b * b - 4 * a * c
    hit = disc > 0
    s = (-b - np.sqrt(np.where(hit, disc, 0.0))) / (2 * a)
    hit &= s > 0
    return hit, origin + s[..., None] * dirs


def mouth_mask(scene: SceneSpec, points: np.ndarray, aperture: float, style: float) -> np.ndarray:
    w, h = mouth_shape(scene, aperture, style)
    if h <= 0:
        return np.zeros(points.shape[:-1], dtype=bool)
    x, y, z = points[..., 0], points[..., 1], points[..., 2]
    return (z > 0) & ((x / w) ** 2 + ((y - scene.mouth_center_y) / h) ** 2 < 1.0)


def shade(scene: SceneSpec, points: np.ndarray, aperture: float, style: float) -> np.ndarray:
    """Lambertian shading of surface points (..., 3) -> RGB (..., 3)."""
    axes = np.asarray(scene.axes)
    normal = points / axes**2
    normal /= np.linalg.norm(normal, axis=-1, keepdims=True)
    lam = np.clip(normal @ np.asarray(scene.light_dir), 0.0, None)
    base = np.broadcast_to(np.asarray(scene.skin_albedo), points.shape).copy()
    ex, ey = scene.eye_offset
    x, y, z = points[..., 0], points[..., 1], points[..., 2]
    eyes = (z > 0) & (((np.abs(x) - ex) ** 2 + (y - ey) ** 2) < scene.eye_radius**2)
    base[eyes] = scene.eye_color
    base[mouth_mask(scene, points, aperture, style)] = scene.mouth_color
    light = scene.ambient + (1.0 - scene.ambient) * lam[..., None] * np.asarray(scene.light_intensity)
    return np.clip(base * light, 0.0, 1.0)


def render_gt(scene: SceneSpec, pose: CameraPose, t: int, *, resolution: int = 64, supersample: int = 2,
              aperture: float | None = None, style: float | None = None) -> np.ndarray:
    """Ray-traced RGB frame (H, W, 3) in [0, 1], black background.

    ``aperture`` / ``style`` override the drive values at frame ``t``.
    """
    _check_t(scene, t)
    a = scene.aperture[t] if aperture is None else aperture
    e = scene.style[t] if style is None else style
    ss = supersample
    dirs = pixel_directions(pose.scaled(ss * resolution / (2 * pose.intrinsics[2])), ss * resolution, ss * resolution)
    hit, pts = _intersect(scene, pose.translation, dirs)
    img = np.zeros(dirs.shape)
    img[hit] = shade(scene, pts[hit], a, e)
    return img.reshape(resolution, ss, resolution, ss, 3).mean(axis=(1, 3))


def identity_frame(scene: SceneSpec, pose: CameraPose, resolution: int = 64, supersample: int = 2) -> np.ndarray:
    """Closed-mouth, neutral-style reference frame I_id."""
    return render_gt(scene, pose, 0, resolution=resolution, supersample=supersample, aperture=0.0, style=0.0)


def _mouth_points(scene: SceneSpec, phi: np.ndarray, aperture: float, style: float) -> np.ndarray:
    w, h = mouth_shape(scene, aperture, style)
    x = w * np.cos(phi)
    y = scene.mouth_center_y + h * np.sin(phi)
    ax, ay, az = scene.axes
    z = az * np.sqrt(np.clip(1.0 - (x / ax) ** 2 - (y / ay) ** 2, 0.0, None))
    return np.stack([x, y, z], axis=-1)


def gt_landmarks(scene: SceneSpec, pose: CameraPose, t: int, *, aperture: float | None = None,
                 style: float | None = None, n_dense: int = 4001) -> np.ndarray:
    """79 pixel-space lip landmarks, uniform in projected arc length.

    The contour starts at the mouth corner at phi = pi, runs over the upper
    lip to the other corner and back along the lower lip.
    """
    _check_t(scene, t)
    a = scene.aperture[t] if aperture is None else aperture
    e = scene.style[t] if style is None else style
    phi = np.linspace(np.pi, -np.pi, n_dense)
    dense = pose.project(_mouth_points(scene, phi, a, e))
    seg = np.linalg.norm(np.diff(dense, axis=0), axis=-1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    targets = np.arange(N_LANDMARKS) * total / N_LANDMARKS
    if total <= 0:
        phi_k = np.full(N_LANDMARKS, np.pi)
    elif mouth_shape(scene, a, e)[1] > 0:
        phi_k = np.interp(targets, cum, phi)
    else:
        # symmetric lookup keeps upper/lower rows bit-identical when the mouth is shut
        half = np.minimum(targets, total - targets)
        sign = np.where(targets <= total / 2, 1.0, -1.0)
        mid = (n_dense - 1) // 2
        phi_half = np.interp(half, cum[: mid + 1], phi[: mid + 1])
        phi_k = sign * phi_half
    return pose.project(_mouth_points(scene, phi_k, a, e))


def au_from_drives(aperture: float, style: float) -> np.ndarray:
    a, e = aperture, style
    return np.array([
        a > 0.3,   # AU10 upper lip raiser
        e > 0.5,   # AU12 lip corner puller
        e > 0.75,  # AU14 dimpler
        e < 0.2,   # AU18 lip pucker
        e > 0.35,  # AU20 lip stretcher
        a < 0.08,  # AU23 lip tightener
        a > 0.1,   # AU25 lips part
        a > 0.55,  # AU26 jaw drop
        a > 0.85,  # AU27 mouth stretch
    ], dtype=np.float64)


def gt_au_labels(scene: SceneSpec, t: int) -> np.ndarray:
    _check_t(scene, t)
    return au_from_drives(scene.aperture[t], scene.style[t])


def audio_track(scene: SceneSpec, window_frames: int = 16, n_mel: int = 20) -> np.ndarray:
    """Mel-like audio windows, shape (T, window_frames, n_mel), float32.

    Row ``window_frames // 2`` is centred on the video frame. Bins
    [0, 8) encode the aperture, [8, 14) the speaking-style drive, the rest are
    speaker timbre plus per-frame noise.
    """
    if n_mel < _N_CONTENT + _N_STYLE + 1 or window_frames < 2:
        raise ArgumentError("audio window too small for the synthetic encoding")
    n = scene.n_frames
    centre = window_frames // 2
    times = np.arange(n)[:, None] + (np.arange(window_frames)[None, :] - centre) / centre
    frames = np.arange(n, dtype=np.float64)
    a = np.interp(times, frames, np.asarray(scene.aperture))
    e = np.interp(times, frames, np.asarray(scene.style))
    rng = np.random.default_rng([scene.seed, 7919])
    out = np.zeros((n, window_frames, n_mel))
    out[..., :_N_CONTENT] = a[..., None] * _APERTURE_TEMPLATE
    out[..., _N_CONTENT:_N_CONTENT + _N_STYLE] = e[..., None] * _STYLE_TEMPLATE
    out[..., 1:_N_CONTENT] += rng.normal(0.0, 0.05, size=(n, window_frames, _N_CONTENT - 1))
    out[..., _N_CONTENT + 1:_N_CONTENT + _N_STYLE] += rng.normal(0.0, 0.05, size=(n, window_frames, _N_STYLE - 1))
    n_nuis = n_mel - _N_CONTENT - _N_STYLE
    timbre = np.resize(np.asarray(scene.timbre), n_nuis)
    out[..., _N_CONTENT + _N_STYLE:] = timbre + rng.normal(0.0, 0.5, size=(n, window_frames, n_nuis))
    # exact carriers survive float32 because the drives are float32-representable
    out[:, centre, 0] = np.asarray(scene.aperture)
    out[:, centre, _N_CONTENT] = np.asarray(scene.style)
    return out.astype(np.float32)


def decode_aperture(window: np.ndarray) -> float:
    """Invert the audio encoding: the aperture carried by a window."""
    window = np.asarray(window)
    return float(window[window.shape[0] // 2, 0])


def decode_style(window: np.ndarray) -> float:
    window = np.asarray(window)
    return float(window[window.shape[0] // 2, _N_CONTENT])


# -- prior coefficients: the analytic stand-in for a morphable-model fit ----------

def _bases():
    rng = np.random.default_rng(_BASIS_SEED)
    exp_basis, _ = np.linalg.qr(rng.normal(size=(79, 2)))
    id_basis = rng.normal(size=(100, 9)) / 3.0
    alb_basis = rng.normal(size=(100, 9)) / 3.0
    return exp_basis, id_basis, alb_basis


_EXP_BASIS, _ID_BASIS, _ALB_BASIS = _bases()


def sh_basis(direction: np.ndarray) -> np.ndarray:
    """Real spherical harmonics up to order 2 at a unit direction, length 9."""
    x, y, z = direction
    return np.array([
        0.282095,
        0.488603 * y, 0.488603 * z, 0.488603 * x,
        1.092548 * x * y, 1.092548 * y * z, 0.315392 * (3 * z * z - 1), 1.092548 * x * z,
        0.546274 * (x * x - y * y),
    ])


def expression_coefficients(aperture: float, style: float) -> np.ndarray:
    return 2.0 * (_EXP_BASIS[:, 0] * (aperture - 0.5) + _EXP_BASIS[:, 1] * (style - 0.5))


def prior_coefficients(scene: SceneSpec, t: int | None = None, *, aperture: float | None = None,
                       style: float | None = None) -> dict[str, np.ndarray]:
    """Ground-truth (f_id, f_exp, f_alb, f_illu) for a frame."""
    a = aperture if aperture is not None else (scene.aperture[t] if t is not None else 0.0)
    e = style if style is not None else (scene.style[t] if t is not None else 0.0)
    geom = np.array([
        (scene.axes[0] - 0.8) / 0.05, (scene.axes[1] - 1.0) / 0.05, (scene.axes[2] - 0.85) / 0.05,
        (scene.mouth_center_y + 0.45) / 0.05, (scene.mouth_half_width - 0.27) / 0.03,
        (scene.mouth_max_half_height - 0.17) / 0.02, (scene.eye_offset[0] - 0.29) / 0.03,
        (scene.eye_offset[1] - 0.25) / 0.05, (scene.eye_radius - 0.095) / 0.015,
    ])
    colors = (np.concatenate([scene.skin_albedo, scene.mouth_color, scene.eye_color]) - 0.4) / 0.3
    illu = np.outer(sh_basis(np.asarray(scene.light_dir)), np.asarray(scene.light_intensity)) * (1 - scene.ambient)
    illu[0] += scene.ambient
    return {
        "f_id": _ID_BASIS @ geom,
        "f_exp": expression_coefficients(a, e),
        "f_alb": _ALB_BASIS @ colors,
        "f_illu": illu.T.reshape(-1) * 2.0,
    }


# -- blobs and manifest -------------------------------------------------------

def write_blob(path: str | Path, array: np.ndarray) -> None:
    """Little-endian float32 array behind a one-line JSON header."""
    arr = np.ascontiguousarray(array, dtype="<f4")
    header = json.dumps({"shape": list(arr.shape), "dtype": "f32", "order": "row-major"})
    with open(path, "wb") as fh:
        fh.write(header.encode() + b"\n")
        fh.write(arr.tobytes())


def read_blob(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        data = fh.read()
    if header.get("dtype") != "f32" or header.get("order") != "row-major":
        raise InputShapeError(f"unsupported blob header {header}")
    return np.frombuffer(data, dtype="<f4").reshape(header["shape"]).copy()


def save_png(path: str | Path, image: np.ndarray) -> None:
    arr = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def load_png(path: str | Path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0


def occurrence_rates(labels: np.ndarray) -> np.ndarray:
    """Fraction of frames in which each AU is active."""
    return np.asarray(labels, dtype=np.float64).mean(axis=0)


def split_frames(n_frames: int, test_fraction: float) -> tuple[list[int], list[int]]:
    """Temporally disjoint split: the last ``test_fraction`` of frames are held out."""
    n_test = int(round(n_frames * test_fraction))
    n_train = n_frames - n_test
    return list(range(n_train)), list(range(n_train, n_frames))


def generate_dataset(out_dir: str | Path, config: DataConfig | None = None) -> dict:
    """Render a full dataset to ``out_dir`` and return the manifest."""
    config = config or DataConfig()
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    (out / "audio").mkdir(exist_ok=True)
    (out / "landmarks").mkdir(exist_ok=True)
    poses = config.poses()
    train_t, test_t = split_frames(config.n_frames, config.test_fraction)
    scenes, records, identities = [], [], []
    train_labels = []
    for k in range(config.n_identities):
        scene = make_scene(k, config)
        scenes.append(scene.to_dict())
        audio = audio_track(scene, config.window_frames, config.n_mel)
        audio_path = f"audio/id{k}.bin"
        write_blob(out / audio_path, audio)
        id_path = f"frames/id{k}_identity.png"
        save_png(out / id_path, identity_frame(scene, config.frontal_pose(), config.resolution, config.supersample))
        identities.append({"identity": k, "identity_frame": id_path, "audio": audio_path,
                           "landmarks": f"landmarks/id{k}.bin"})
        marks = np.zeros((len(poses), config.n_frames, N_LANDMARKS, 2))
        for p, pose in enumerate(poses):
            (out / "frames" / f"id{k}" / f"p{p}").mkdir(parents=True, exist_ok=True)
            for t in range(config.n_frames):
                path = f"frames/id{k}/p{p}/{t:05d}.png"
                save_png(out / path, render_gt(scene, pose, t, resolution=config.resolution,
                                               supersample=config.supersample))
                marks[p, t] = gt_landmarks(scene, pose, t)
                labels = gt_au_labels(scene, t)
                split = "train" if t in train_t else "test"
                if split == "train":
                    train_labels.append(labels)
                records.append({
                    "identity": k, "pose": p, "t": t, "frame": path, "audio": audio_path,
                    "audio_index": t, "landmarks": f"landmarks/id{k}.bin", "landmark_index": [p, t],
                    "au": labels.astype(int).tolist(), "split": split,
                })
        write_blob(out / f"landmarks/id{k}.bin", marks)
    rates = occurrence_rates(np.array(train_labels))
    if np.any(rates <= 0):
        raise ArgumentError("an AU never occurs in the training split; lengthen the drive signals")
    manifest = {
        "config": {**asdict(config), "yaws": list(config.yaws)},
        "poses": [p.to_dict() for p in poses],
        "scenes": scenes,
        "identities": identities,
        "au_names": list(AU_NAMES),
        "au_rates": rates.tolist(),
        "split": {
            "train": [i for i, r in enumerate(records) if r["split"] == "train"],
            "test": [i for i, r in enumerate(records) if r["split"] == "test"],
        },
        "records": records,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh)
    return manifest


class SyntheticDataset:
    """In-memory view of a generated dataset directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        manifest_path = self.root / "manifest.json"
        if not manifest_path.exists():
            raise FileNotFoundError(f"no dataset manifest at {manifest_path}")
        with open(manifest_path) as fh:
            self.manifest = json.load(fh)
        self.config = DataConfig.from_dict(self.manifest["config"])
        self.poses = [CameraPose.from_dict(p) for p in self.manifest["poses"]]
        self.scenes = [SceneSpec.from_dict(s) for s in self.manifest["scenes"]]
        self.records = self.manifest["records"]
        self.au_rates = np.asarray(self.manifest["au_rates"])
        self.audio = [read_blob(self.root / i["audio"]) for i in self.manifest["identities"]]
        self.landmarks = [read_blob(self.root / i["landmarks"]) for i in self.manifest["identities"]]
        self.identity_frames = [load_png(self.root / i["identity_frame"]) for i in self.manifest["identities"]]
        self._frames: dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.records)

    def indices(self, split: str) -> list[int]:
        return list(self.manifest["split"][split])

    def frame(self, index: int) -> np.ndarray:
        if index not in self._frames:
            self._frames[index] = load_png(self.root / self.records[index]["frame"])
        return self._frames[index]

    def window(self, index: int) -> np.ndarray:
        r = self.records[index]
        return self.audio[r["identity"]][r["audio_index"]]

    def au(self, index: int) -> np.ndarray:
        return np.asarray(self.records[index]["au"], dtype=np.float64)

    def landmark_set(self, index: int) -> np.ndarray:
        r = self.records[index]
        p, t = r["landmark_index"]
        return self.landmarks[r["identity"]][p, t].astype(np.float64)

    def find(self, identity: int, pose: int, t: int) -> int:
        for i, r in enumerate(self.records):
            if r["identity"] == identity and r["pose"] == pose and r["t"] == t:
                return i
        raise IndexError((identity, pose, t))

    def frontal_pose_index(self) -> int:
        return int(np.argmin(np.abs(np.asarray(self.config.yaws))))
