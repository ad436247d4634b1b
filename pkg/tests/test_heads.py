import numpy as np
import pytest

from dregcn_absa.autodiff import Tensor
from dregcn_absa.heads import (
    MessagePassingConfig,
    ae_head_forward,
    as_head_forward,
    distance_factors,
    forward_rounds,
    init_ae_head,
    init_as_head,
    init_re_encoder,
    message_width,
    opinion_attention,
    opinion_probs,
)

RNG = np.random.default_rng(11)
D_S, D_T = 10, 6


def make_heads(seed=0):
    rng = np.random.default_rng(seed)
    return init_ae_head(rng, D_S, D_T), init_as_head(rng, D_S, D_T)


def test_mp_config_validation():
    with pytest.raises(ValueError):
        MessagePassingConfig("bogus", 1)
    with pytest.raises(ValueError):
        MessagePassingConfig("predictions", -1)
    assert MessagePassingConfig("none", 3).effective_rounds == 0
    assert MessagePassingConfig("representations", 2).effective_rounds == 2


def test_distance_factors_values():
    fac = distance_factors(8)
    assert fac[2, 5] == pytest.approx(1 / 3, abs=0)
    assert fac[5, 2] == fac[2, 5]
    assert (np.diag(fac) == 0).all()
    assert fac[0, 1] == 1.0


def test_ae_head_distribution():
    ae_head, _ = make_heads()
    hs = Tensor(RNG.normal(size=(5, D_S)))
    hae, yae = ae_head_forward(hs, ae_head)
    assert hae.shape == (5, D_T) and yae.shape == (5, 5)
    np.testing.assert_allclose(yae.data.sum(axis=1), 1.0, atol=1e-12)


def test_opinion_probs_slice():
    _, as_head = make_heads()
    yae = Tensor(np.abs(RNG.normal(size=(4, 5))))
    pop = opinion_probs(yae)
    np.testing.assert_allclose(pop.data, yae.data[:, 2:4].sum(axis=1))


def test_attention_zero_diagonal_and_stochastic_rows():
    _, as_head = make_heads()
    n = 6
    has = Tensor(RNG.normal(size=(n, D_T)))
    pop = Tensor(RNG.random(n))
    m = opinion_attention(has, as_head.bilinear, pop)
    assert (np.diag(m.data) == 0).all()
    np.testing.assert_allclose(m.data.sum(axis=1), 1.0, atol=1e-9)


def test_attention_single_token_row_is_zero():
    _, as_head = make_heads()
    has = Tensor(RNG.normal(size=(1, D_T)))
    pop = Tensor(RNG.random(1))
    m = opinion_attention(has, as_head.bilinear, pop)
    assert m.shape == (1, 1) and (m.data == 0).all()


def test_attention_respects_pad_mask():
    _, as_head = make_heads()
    n = 5
    has = Tensor(RNG.normal(size=(n, D_T)))
    pop = Tensor(RNG.random(n))
    pad = np.array([True, True, True, False, False])
    m = opinion_attention(has, as_head.bilinear, pop, pad_mask=pad)
    assert (m.data[:, ~pad] == 0).all()
    assert (m.data[~pad] == 0).all()
    np.testing.assert_allclose(m.data[pad].sum(axis=1), 1.0, atol=1e-9)


def test_as_head_shapes_and_opinion_passing_toggle():
    ae_head, as_head = make_heads()
    hs = Tensor(RNG.normal(size=(4, D_S)))
    _, yae = ae_head_forward(hs, ae_head)
    has, has_final, yas, m = as_head_forward(hs, as_head, yae)
    assert has.shape == (4, D_T)
    assert has_final.shape == (4, 2 * D_T)
    assert yas.shape == (4, 3)
    np.testing.assert_allclose(yas.data.sum(axis=1), 1.0, atol=1e-12)
    # disabling opinion passing keeps all widths but zeroes the context half
    has2, has_final2, _, m2 = as_head_forward(hs, as_head, yae, opinion_passing=False)
    assert (m2.data == 0).all()
    assert has_final2.shape == (4, 2 * D_T)
    np.testing.assert_array_equal(has_final2.data[:, D_T:], 0.0)
    np.testing.assert_array_equal(has_final2.data[:, :D_T], has2.data)


def test_message_width_table():
    assert message_width("predictions", D_T) == 8
    assert message_width("representations", D_T) == 3 * D_T
    assert message_width("representations", D_T, pass_pre_attention_as=True) == 2 * D_T
    with pytest.raises(ValueError):
        message_width("none", D_T)


def test_re_encoder_consumes_exact_width():
    rng = np.random.default_rng(1)
    re_p = init_re_encoder(rng, D_S, "predictions", D_T, False)
    assert re_p.weight.shape == (D_S, D_S + 8)
    re_r = init_re_encoder(rng, D_S, "representations", D_T, False)
    assert re_r.weight.shape == (D_S, D_S + 3 * D_T)


def test_forward_rounds_counts_and_none_equals_t0():
    ae_head, as_head = make_heads()
    rng = np.random.default_rng(2)
    re = init_re_encoder(rng, D_S, "representations", D_T, False)
    hs0 = Tensor(RNG.normal(size=(5, D_S)))

    out_none = forward_rounds(hs0, ae_head, as_head, None, MessagePassingConfig("none", 0))
    out_t0 = forward_rounds(
        hs0, ae_head, as_head, re, MessagePassingConfig("representations", 0)
    )
    out_t2 = forward_rounds(
        hs0, ae_head, as_head, re, MessagePassingConfig("representations", 2)
    )
    assert len(out_none.rounds) == 1
    assert len(out_t0.rounds) == 1
    assert len(out_t2.rounds) == 3
    # variant none and zero rounds are the same computation, bit for bit
    np.testing.assert_array_equal(out_none.final.yae.data, out_t0.final.yae.data)
    np.testing.assert_array_equal(out_none.final.yas.data, out_t0.final.yas.data)
    # round 0 of a T=2 run equals the T=0 run
    np.testing.assert_array_equal(out_t2.rounds[0].yae.data, out_t0.final.yae.data)
    # later rounds actually move
    assert np.abs(out_t2.final.yae.data - out_t0.final.yae.data).max() > 0


def test_forward_rounds_predictions_variant():
    ae_head, as_head = make_heads()
    rng = np.random.default_rng(3)
    re = init_re_encoder(rng, D_S, "predictions", D_T, False)
    hs0 = Tensor(RNG.normal(size=(4, D_S)))
    out = forward_rounds(hs0, ae_head, as_head, re, MessagePassingConfig("predictions", 1))
    assert len(out.rounds) == 2
    assert out.final.hs.shape == (4, D_S)


def test_forward_rounds_pre_attention_message():
    ae_head, as_head = make_heads()
    rng = np.random.default_rng(4)
    re = init_re_encoder(rng, D_S, "representations", D_T, True)
    assert re.weight.shape == (D_S, D_S + 2 * D_T)
    hs0 = Tensor(RNG.normal(size=(4, D_S)))
    out = forward_rounds(
        hs0, ae_head, as_head, re, MessagePassingConfig("representations", 1),
        pass_pre_attention_as=True,
    )
    assert len(out.rounds) == 2
