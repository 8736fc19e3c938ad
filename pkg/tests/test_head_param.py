import pytest
import torch

from talkfield.errors import DimensionError, InputShapeError, NumericError
from talkfield.head_param import (ALB_DIM, EXP_DIM, ID_DIM, ILLU_DIM, ExtractedPrior, HeadParams, PriorExtractor,
                                  assemble, extract_prior)
from talkfield.nerf import ConditionalField, RenderConfig, field_eval


@pytest.fixture(scope="module")
def extractor():
    torch.manual_seed(0)
    return PriorExtractor(64)


def test_extract_prior_dimensions(extractor):
    frame = torch.rand(64, 64, 3)
    prior = extract_prior(extractor, frame)
    assert [prior.f_id.shape[0], prior.f_exp.shape[0], prior.f_alb.shape[0], prior.f_illu.shape[0]] == [100, 79, 100, 27]


def test_extract_prior_zero_frame_is_finite(extractor):
    prior = extract_prior(extractor, torch.zeros(64, 64, 3))
    for v in (prior.f_id, prior.f_exp, prior.f_alb, prior.f_illu):
        assert torch.isfinite(v).all()


def test_extract_prior_is_deterministic(extractor):
    frame = torch.rand(64, 64, 3)
    a, b = extract_prior(extractor, frame), extract_prior(extractor, frame)
    for name in ("f_id", "f_exp", "f_alb", "f_illu"):
        assert torch.equal(getattr(a, name), getattr(b, name))


def test_extract_prior_batched_matches_single(extractor):
    frames = torch.rand(3, 64, 64, 3)
    batch = extract_prior(extractor, frames)
    single = extract_prior(extractor, frames[1])
    torch.testing.assert_close(batch.f_exp[1], single.f_exp, rtol=1e-5, atol=1e-6)


@pytest.mark.parametrize("frame", [torch.rand(32, 32, 3), torch.rand(64, 64, 4), torch.rand(64, 64)])
def test_extract_prior_rejects_wrong_shape(extractor, frame):
    with pytest.raises(InputShapeError):
        extract_prior(extractor, frame)


@pytest.mark.parametrize("value", [-0.1, 1.5, float("nan")])
def test_extract_prior_rejects_out_of_range_pixels(extractor, value):
    frame = torch.rand(64, 64, 3)
    frame[5, 5, 0] = value
    with pytest.raises(InputShapeError):
        extract_prior(extractor, frame)


def _prior():
    return ExtractedPrior(torch.randn(ID_DIM), torch.randn(EXP_DIM), torch.randn(ALB_DIM), torch.randn(ILLU_DIM))


def test_assemble_zero_expressions():
    prior = _prior()
    hp = assemble(prior, torch.zeros(EXP_DIM), torch.zeros(EXP_DIM))
    assert torch.equal(hp.f_exp_aud, torch.zeros(EXP_DIM)) and torch.equal(hp.f_exp_style, torch.zeros(EXP_DIM))
    assert hp.f_id is prior.f_id and hp.f_alb is prior.f_alb and hp.f_illu is prior.f_illu


def test_assemble_round_trip_and_no_mutation():
    prior = _prior()
    e, s = torch.randn(EXP_DIM), torch.randn(EXP_DIM)
    e0, s0, id0 = e.clone(), s.clone(), prior.f_id.clone()
    hp = assemble(prior, e, s)
    assert torch.equal(hp.f_exp_aud, e0) and torch.equal(hp.f_exp_style, s0)
    assert torch.equal(e, e0) and torch.equal(s, s0) and torch.equal(prior.f_id, id0)


@pytest.mark.parametrize("n_aud, n_style", [(78, 79), (79, 80), (100, 79)])
def test_assemble_length_mismatch(n_aud, n_style):
    with pytest.raises(DimensionError):
        assemble(_prior(), torch.zeros(n_aud), torch.zeros(n_style))


def test_head_params_invariants():
    with pytest.raises(DimensionError):
        HeadParams(torch.zeros(99), torch.zeros(79), torch.zeros(79), torch.zeros(100), torch.zeros(27))
    bad = torch.zeros(27)
    bad[3] = float("inf")
    with pytest.raises(NumericError):
        HeadParams(torch.zeros(100), torch.zeros(79), torch.zeros(79), torch.zeros(100), bad)
    with pytest.raises(DimensionError):
        HeadParams(torch.zeros(2, 100), torch.zeros(79), torch.zeros(79), torch.zeros(100), torch.zeros(27))


def test_lipwav_prior_feeds_the_field(extractor):
    lipwav = torch.rand(64, 64, 3)
    prior = extract_prior(extractor, lipwav)
    hp = assemble(prior, prior.f_exp, torch.zeros(EXP_DIM))
    field = ConditionalField(RenderConfig())
    with torch.no_grad():
        z, sigma = field_eval(field, torch.tensor([0.1, 0.2, 0.3]), torch.tensor([0.0, 0.0, 1.0]), hp)
    assert z.shape == (32,) and sigma.shape == () and sigma >= 0
