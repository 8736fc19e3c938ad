import hashlib
import json
import math

import numpy as np
import pytest

from conftest import TINY_DATA
from talkfield.camera import look_at_pose
from talkfield.errors import ArgumentError
from talkfield.synth import (AU_NAMES, DataConfig, SceneSpec, SyntheticDataset, au_from_drives, audio_track,
                             decode_aperture, decode_style, generate_dataset, gt_au_labels, gt_landmarks, identity_frame,
                             make_scene, mouth_shape, prior_coefficients, read_blob, render_gt, write_blob)

CFG = DataConfig(n_frames=60)


def test_make_scene_deterministic_and_seed_dependent():
    a, b = make_scene(4, CFG), make_scene(4, CFG)
    assert a == b
    c = make_scene(5, CFG)
    assert a.skin_albedo != c.skin_albedo
    assert SceneSpec.from_dict(a.to_dict()) == a


def test_drives_are_bounded():
    for seed in range(10):
        s = make_scene(seed, CFG)
        for drive in (s.aperture, s.style):
            assert min(drive) >= 0.0 and max(drive) <= 1.0
            assert min(drive) == 0.0 and max(drive) == 1.0


def test_scene_rejects_bad_drive():
    d = make_scene(0, CFG).to_dict()
    d["aperture"] = [1.5] * d["n_frames"]
    with pytest.raises(ArgumentError):
        SceneSpec.from_dict(d)


def test_render_gt_closed_mouth_is_skin():
    scene = make_scene(0, CFG)
    pose = look_at_pose(0.0, 3.5, 64)
    closed = render_gt(scene, pose, 0, aperture=0.0, style=0.9)
    np.testing.assert_array_equal(closed, identity_frame(scene, pose))


def test_render_gt_mouth_area_grows_with_aperture():
    scene = make_scene(1, CFG)
    pose = look_at_pose(0.0, 3.5, 64)
    closed = render_gt(scene, pose, 0, aperture=0.0, style=0.5, supersample=4)
    areas = []
    for a in np.linspace(0.1, 1.0, 10):
        img = render_gt(scene, pose, 0, aperture=a, style=0.5, supersample=4)
        areas.append(np.abs(img - closed).sum())
    assert np.all(np.diff(areas) > 0)


def test_render_gt_pose_and_determinism():
    scene = make_scene(2, CFG)
    a = render_gt(scene, look_at_pose(-15.0, 3.5, 64), 7)
    b = render_gt(scene, look_at_pose(15.0, 3.5, 64), 7)
    assert np.abs(a - b).mean() > 1e-2
    np.testing.assert_array_equal(a, render_gt(scene, look_at_pose(-15.0, 3.5, 64), 7))
    assert a.shape == (64, 64, 3) and a.min() >= 0 and a.max() <= 1
    with pytest.raises(IndexError):
        render_gt(scene, look_at_pose(0.0, 3.5, 64), CFG.n_frames)


def test_landmarks_closed_mouth_rows_coincide():
    scene = make_scene(0, CFG)
    pose = look_at_pose(20.0, 3.5, 64)
    lm = gt_landmarks(scene, pose, 0, aperture=0.0, style=0.4)
    assert lm.shape == (79, 2)
    for k in range(1, 40):
        assert np.max(np.abs(lm[k] - lm[79 - k])) < 1e-9


@pytest.mark.parametrize("a", [0.0, 0.3, 1.0])
def test_landmarks_roll_consistency(a):
    scene = make_scene(3, CFG)
    pose = look_at_pose(10.0, 3.5, 64)
    theta = math.radians(33.0)
    base = gt_landmarks(scene, pose, 0, aperture=a, style=0.6) - 32.0
    rolled = gt_landmarks(scene, pose.rolled(theta), 0, aperture=a, style=0.6) - 32.0
    c, s = math.cos(theta), math.sin(theta)
    np.testing.assert_allclose(rolled, base @ np.array([[c, -s], [s, c]]), atol=1e-6)


def test_landmarks_are_uniform_in_arc_length():
    scene = make_scene(4, CFG)
    lm = gt_landmarks(scene, look_at_pose(0.0, 3.5, 64), 0, aperture=0.8, style=0.2)
    gaps = np.linalg.norm(np.diff(np.vstack([lm, lm[:1]]), axis=0), axis=-1)
    # chords of a smooth curve at equal arc spacing are nearly equal
    assert gaps.max() / gaps.min() < 1.05
    with pytest.raises(IndexError):
        gt_landmarks(scene, look_at_pose(0.0, 3.5, 64), -1)


def test_au_labels_by_construction():
    assert au_from_drives(1.0, 0.5)[AU_NAMES.index("AU26")] == 1.0
    assert au_from_drives(0.0, 0.5)[AU_NAMES.index("AU23")] == 1.0
    scene = make_scene(0, CFG)
    t = int(np.argmax(scene.aperture))
    assert scene.aperture[t] == 1.0 and gt_au_labels(scene, t)[AU_NAMES.index("AU26")] == 1.0


def test_audio_track_encodes_drives_exactly():
    scene = make_scene(5, CFG)
    audio = audio_track(scene)
    assert audio.shape == (CFG.n_frames, 16, 20) and audio.dtype == np.float32
    for t in range(CFG.n_frames):
        assert abs(decode_aperture(audio[t]) - scene.aperture[t]) < 1e-9
        assert abs(decode_style(audio[t]) - scene.style[t]) < 1e-9
        np.testing.assert_array_equal(au_from_drives(decode_aperture(audio[t]), decode_style(audio[t])),
                                      gt_au_labels(scene, t))


def test_prior_coefficients_shapes_and_expression_dependence():
    scene = make_scene(0, CFG)
    p0 = prior_coefficients(scene, aperture=0.0, style=0.0)
    p1 = prior_coefficients(scene, aperture=1.0, style=0.0)
    assert {k: v.shape for k, v in p0.items()} == {"f_id": (100,), "f_exp": (79,), "f_alb": (100,), "f_illu": (27,)}
    np.testing.assert_array_equal(p0["f_id"], p1["f_id"])
    assert np.linalg.norm(p0["f_exp"] - p1["f_exp"]) > 1.0


def test_blob_round_trip(tmp_path, rng):
    arr = rng.normal(size=(3, 4, 5)).astype(np.float32)
    write_blob(tmp_path / "x.bin", arr)
    with open(tmp_path / "x.bin", "rb") as fh:
        header = json.loads(fh.readline())
    assert header == {"shape": [3, 4, 5], "dtype": "f32", "order": "row-major"}
    np.testing.assert_array_equal(read_blob(tmp_path / "x.bin"), arr)
    raw = (tmp_path / "x.bin").read_bytes().split(b"\n", 1)[1]
    assert np.frombuffer(raw, dtype="<f4")[1] == arr.ravel()[1]


def _digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_dataset_regeneration_is_bit_stable(tmp_path):
    cfg = DataConfig(n_identities=1, n_frames=30, yaws=(0.0, 20.0), seed=11)
    generate_dataset(tmp_path / "a", cfg)
    generate_dataset(tmp_path / "b", cfg)
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")


def test_dataset_manifest_invariants(tiny_dataset):
    ds = SyntheticDataset(tiny_dataset)
    n = TINY_DATA.n_identities * len(TINY_DATA.yaws) * TINY_DATA.n_frames
    train, test = set(ds.indices("train")), set(ds.indices("test"))
    assert len(ds) == n and not train & test and train | test == set(range(n))
    # rates are the empirical training frequencies
    labels = np.array([ds.au(i) for i in sorted(train)])
    np.testing.assert_array_equal(ds.au_rates, labels.mean(0))
    assert np.all(ds.au_rates > 0) and np.all(ds.au_rates <= 1)
    for i in range(0, n, 7):
        r = ds.records[i]
        scene = ds.scenes[r["identity"]]
        w = ds.window(i)
        a, e = decode_aperture(w), decode_style(w)
        assert a == scene.aperture[r["t"]]
        np.testing.assert_array_equal(ds.au(i), au_from_drives(a, e))
        np.testing.assert_allclose(ds.landmark_set(i), gt_landmarks(scene, ds.poses[r["pose"]], r["t"]), atol=1e-4)
        frame = ds.frame(i)
        truth = render_gt(scene, ds.poses[r["pose"]], r["t"])
        assert np.abs(frame - truth).max() <= 0.5 / 255 + 1e-6
        assert len(audio_track(scene)) == scene.n_frames


def test_mouth_shape_follows_drives():
    scene = make_scene(0, CFG)
    w0, h0 = mouth_shape(scene, 0.0, 0.0)
    w1, h1 = mouth_shape(scene, 1.0, 1.0)
    assert h0 == 0.0 and h1 == scene.mouth_max_half_height and w1 > w0
