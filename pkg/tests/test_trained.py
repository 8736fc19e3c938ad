"""Behaviour of trained networks on the default synthetic dataset.

These reuse the seed-0 run that the ablation criterion trains, so they cost
nothing extra when the acceptance suite runs in the same session.
"""

import numpy as np
import pytest
import torch

import _runs
from talkfield.audio_disentangle import cosine
from talkfield.pipeline import LossLog, stage2_renders, synthesize
from talkfield.synth import SyntheticDataset, decode_aperture, render_gt

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def run():
    return _runs.seed_run(_runs.ABLATION_SEEDS[0])


@pytest.fixture(scope="module")
def ds():
    return SyntheticDataset(_runs.dataset("default"))


def _drop_from_iteration_10(ckpt, name):
    series = LossLog(ckpt.losses).series(name)
    start = series[0][0]
    at10 = dict(series)[start + 9]
    return at10, series[-1][1]


def test_stage1_exp_loss_halves(run):
    at10, final = _drop_from_iteration_10(run.stage1, "L_exp")
    assert final <= 0.5 * at10, (at10, final)


def test_stage3_standardized_loss_halves(run):
    at10, final = _drop_from_iteration_10(run.stage3, "L_S")
    assert final <= 0.5 * at10, (at10, final)


def test_lipnet_follows_aperture(run, ds):
    pipe = run.stage3.pipeline()
    test = [i for i in ds.indices("test") if ds.records[i]["identity"] == 0]
    aps = {i: decode_aperture(ds.window(i)) for i in test}
    lo, hi = min(test, key=aps.get), max(test, key=aps.get)
    assert aps[hi] - aps[lo] > 0.5
    scene = ds.scenes[0]
    frontal = ds.poses[ds.frontal_pose_index()]
    mouth = np.abs(render_gt(scene, frontal, 0, aperture=1.0, style=0.5)
                   - render_gt(scene, frontal, 0, aperture=0.0, style=0.5)).sum(-1) > 0
    with torch.no_grad():
        out = pipe.disentangler.lipnet(torch.as_tensor(ds.identity_frames[0]).expand(2, -1, -1, -1),
                                       torch.as_tensor(np.stack([ds.window(lo), ds.window(hi)]))).numpy()
    assert np.abs(out[0] - out[1])[mouth].mean() > 1e-3


def test_syncnet_prefers_matched_pairs(run, ds):
    net = run.stage1.pipeline().disentangler.syncnet
    idx = np.random.default_rng(0).choice(ds.indices("test"), 100, replace=False)
    with torch.no_grad():
        emb = net(torch.as_tensor(np.stack([ds.frame(i) for i in idx])),
                  torch.as_tensor(np.stack([ds.window(i) for i in idx])))
    matched = cosine(emb.f_lip, emb.f_a).mean().item()
    mismatched = cosine(emb.f_lip, emb.f_a.roll(1, dims=0)).mean().item()
    assert matched > mismatched


def test_au_accuracy_on_held_out_frames(run, ds):
    enc = run.stage3.pipeline().space.au_encoder
    idx = ds.indices("test")
    with torch.no_grad():
        pred = enc.predict(torch.as_tensor(np.stack([ds.frame(i) for i in idx]))).numpy()
    gt = np.stack([ds.au(i) for i in idx])
    assert ((pred >= 0.5) == (gt >= 0.5)).mean() > 0.9


def test_au_codes_separate_different_labels(run, ds):
    enc = run.stage3.pipeline().space.au_encoder
    idx = np.random.default_rng(1).choice(ds.indices("test"), 200, replace=False)
    with torch.no_grad():
        codes = enc.encode(torch.as_tensor(np.stack([ds.frame(i) for i in idx])))
    labels = np.stack([ds.au(i) for i in idx])
    a, b = np.arange(0, 200, 2), np.arange(1, 200, 2)
    differ = np.any(labels[a] != labels[b], axis=1)
    assert differ.sum() >= 10
    cos = cosine(codes[a][differ], codes[b][differ])
    assert cos.mean().item() < 0.99


def test_codebook_usage_on_training_set(run):
    # the codebooks are fitted to stage-2 renders of the training records, so usage is counted there
    pipe = run.stage3.pipeline()
    renders = stage2_renders(pipe, _runs.train_data("default"))
    seen = {"au": set(), "glo": set()}
    with torch.no_grad():
        for chunk in renders.split(100):
            out = pipe.space(chunk)
            for key, indices in seen.items():
                indices.update(out[key].index.unique().tolist())
    for key, book in (("au", pipe.space.book_s), ("glo", pipe.space.book_g)):
        assert len(seen[key]) >= 0.25 * book.size, (key, len(seen[key]), book.size)


def test_trained_field_renders_poses_differently(run, ds):
    pipe = run.stage2.pipeline()
    audio = ds.window(ds.indices("test")[0])[None]
    a = synthesize(pipe, ds.identity_frames[0], audio, [ds.poses[0]], use_au=False, use_global=False)
    b = synthesize(pipe, ds.identity_frames[0], audio, [ds.poses[-1]], use_au=False, use_global=False)
    assert np.abs(a - b).mean() > 1e-3

