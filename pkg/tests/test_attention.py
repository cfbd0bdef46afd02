import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from elpg.attention import (
    BiLstmParams,
    ChannelBandMask,
    LstmDirection,
    SparsityPrior,
    apply_mask,
    bilstm_encode,
    kl_sparsity,
)
from elpg.errors import InputError, ShapeError
from elpg.tensor import Tensor, check_gradient


def mask_from(chan, band):
    return ChannelBandMask(Tensor(np.asarray(chan, float), True), Tensor(np.asarray(band, float), True))


def logit(p):
    return math.log(p / (1 - p))


# ----------------------------------------------------------------- mask


def test_mask_is_rank_one_in_unit_box(rng):
    m = mask_from(rng.normal(size=6) * 3, rng.normal(size=4) * 3)
    A = m.values().data
    assert A.shape == (6, 4)
    assert np.all((A >= 0) & (A <= 1))
    assert np.linalg.matrix_rank(A) == 1


def test_saturated_mask_is_identity(rng):
    # sigmoid(20)**2 = 1 - 4.1e-9, so the bound holds for unit-range (z-scored) inputs
    de = rng.uniform(-1, 1, size=(5, 6, 4))
    out = apply_mask(de, ChannelBandMask.init(6, 4, logit=20.0))
    assert np.max(np.abs(out.data - de)) <= 1e-8


def test_closed_channel_annihilates(rng):
    de = rng.normal(size=(5, 6, 4))
    chan = np.zeros(6)
    chan[2] = -60.0
    out = apply_mask(de, mask_from(chan, np.zeros(4))).data
    assert np.max(np.abs(out[:, 2, :])) <= 1e-20


def test_mask_elementwise(rng):
    de = rng.normal(size=(3, 6, 4))
    m = mask_from(rng.normal(size=6), rng.normal(size=4))
    A = m.values().data
    np.testing.assert_array_equal(apply_mask(de, m).data, A[None] * de)


def test_mask_shape_mismatch():
    with pytest.raises(ShapeError):
        apply_mask(np.ones((2, 5, 4)), ChannelBandMask.init(6, 4))


@settings(max_examples=30, deadline=None)
@given(k=st.integers(-20, 20), sign=st.sampled_from([-1.0, 1.0]), c=st.floats(-1e3, 1e3),
       seed=st.integers(0, 2**31 - 1))
def test_mask_is_one_homogeneous(k, sign, c, seed):
    rng = np.random.default_rng(seed)
    de = rng.normal(size=(2, 3, 4))
    m = mask_from(rng.normal(size=3), rng.normal(size=4))
    # power-of-two scales commute with rounding, so equality is exact
    p2 = sign * 2.0**k
    np.testing.assert_array_equal(apply_mask(p2 * de, m).data, p2 * apply_mask(de, m).data)
    # a general scale differs by at most the two roundings of the product
    np.testing.assert_allclose(apply_mask(c * de, m).data, c * apply_mask(de, m).data, rtol=4.5e-16, atol=0)


def test_mask_gradient(rng):
    de = rng.normal(size=(3, 5, 4))
    w = rng.normal(size=(3, 5, 4))
    chan, band = Tensor(rng.normal(size=5)), Tensor(rng.normal(size=4))
    report = check_gradient(lambda c, b: (apply_mask(de, ChannelBandMask(c, b)) * w).sum(), [chan, band])
    assert report.passed


# ------------------------------------------------------------------- KL


def test_prior_validation():
    for bad in (0.0, 1.0, -0.1):
        with pytest.raises(InputError):
            SparsityPrior(p0=bad)
    with pytest.raises(InputError):
        SparsityPrior(beta=-1.0)
    assert SparsityPrior() == SparsityPrior(p0=0.2, beta=1e-3)


def test_kl_zero_at_prior():
    m = mask_from(np.full(4, logit(0.2)), np.full(3, 40.0))
    assert abs(kl_sparsity(m, SparsityPrior(0.2, 1.0)).item()) <= 1e-12


def test_kl_single_cell_value():
    m = mask_from([0.0], [40.0])  # q = 0.5 * 1.0
    expected = 0.5 * math.log(5) + 0.5 * math.log(5 / 9)
    assert kl_sparsity(m, SparsityPrior(0.1, 1.0)).item() == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.5108, abs=1e-4)


def test_kl_beta_zero(rng):
    m = mask_from(rng.normal(size=5) * 4, rng.normal(size=4) * 4)
    assert kl_sparsity(m, SparsityPrior(0.3, 0.0)).item() == 0.0


def test_kl_positive_away_from_prior(rng):
    prior = SparsityPrior(0.2, 1.0)
    for _ in range(100):
        m = mask_from(rng.normal(size=4) * 2, rng.normal(size=3) * 2)
        assert kl_sparsity(m, prior).item() > 0.0


def test_kl_clamped_for_saturated_mask():
    m = mask_from([60.0, -60.0], [60.0])
    val = kl_sparsity(m, SparsityPrior(0.2, 1.0)).item()
    assert math.isfinite(val) and val > 0


def test_kl_gradient(rng):
    prior = SparsityPrior(0.2, 0.7)
    chan, band = Tensor(rng.normal(size=4)), Tensor(rng.normal(size=3))
    assert check_gradient(lambda c, b: kl_sparsity(ChannelBandMask(c, b), prior), [chan, band]).passed


# --------------------------------------------------------------- BiLSTM


def test_bilstm_init():
    p = BiLstmParams.init(np.random.default_rng(0))
    k = 1 / 8
    for d in (p.fwd, p.bwd):
        assert d.w_ih.shape == (10, 256) and d.w_hh.shape == (64, 256) and d.bias.shape == (256,)
        assert np.all(d.bias.data[64:128] == 1.0)
        others = np.concatenate([d.w_ih.data.ravel(), d.w_hh.data.ravel(), d.bias.data[:64], d.bias.data[128:]])
        assert np.all(np.abs(others) <= k)


def _zero_direction(I, H):
    return LstmDirection(Tensor(np.zeros((I, 4 * H))), Tensor(np.zeros((H, 4 * H))), Tensor(np.zeros(4 * H)))


def test_bilstm_zero_weights_zero_output(rng):
    p = BiLstmParams(_zero_direction(10, 64), _zero_direction(10, 64))
    out = bilstm_encode(rng.normal(size=(5, 3, 10)), p)
    assert out.shape == (3, 128)
    assert np.all(out.data == 0.0)


def test_bilstm_single_step_halves_match(rng):
    p = BiLstmParams.init(rng)
    shared = BiLstmParams(p.fwd, p.fwd)
    out = bilstm_encode(rng.normal(size=(1, 4, 10)), shared).data
    np.testing.assert_array_equal(out[:, :64], out[:, 64:])


def test_bilstm_matches_reference_recurrence(rng):
    """Compare against a plain numpy LSTM written independently of the tape."""
    H = 5
    p = BiLstmParams.init(rng, input_size=3, hidden=H)
    seq = rng.normal(size=(4, 2, 3))

    def sig(z):
        return 1 / (1 + np.exp(-z))

    def run(x, d):
        h = c = np.zeros(H)
        for xt in x:
            z = xt @ d.w_ih.data + h @ d.w_hh.data + d.bias.data
            i, f, g, o = sig(z[:H]), sig(z[H:2 * H]), np.tanh(z[2 * H:3 * H]), sig(z[3 * H:])
            c = f * c + i * g
            h = o * np.tanh(c)
        return h

    out = bilstm_encode(seq, p).data
    for n in range(2):
        ref = np.concatenate([run(seq[:, n], p.fwd), run(seq[::-1, n], p.bwd)])
        np.testing.assert_allclose(out[n], ref, rtol=1e-12, atol=1e-14)


def test_bilstm_mean_aggregate(rng):
    p = BiLstmParams.init(rng, input_size=3, hidden=4)
    seq = rng.normal(size=(1, 2, 3))
    np.testing.assert_allclose(bilstm_encode(seq, p, "mean").data, bilstm_encode(seq, p, "last").data)
    with pytest.raises(InputError):
        bilstm_encode(seq, p, "attention")


def test_bilstm_batch_axes(rng):
    p = BiLstmParams.init(rng, input_size=10, hidden=6)
    batch = rng.normal(size=(3, 5, 4, 10))
    out = bilstm_encode(batch, p).data
    assert out.shape == (3, 4, 12)
    np.testing.assert_allclose(out[1], bilstm_encode(batch[1], p).data, rtol=1e-13, atol=1e-15)


def test_bilstm_shape_errors(rng):
    p = BiLstmParams.init(rng)
    with pytest.raises(ShapeError):
        bilstm_encode(rng.normal(size=(5, 3, 9)), p)
    with pytest.raises(ShapeError):
        bilstm_encode(rng.normal(size=(5, 10)), p)


def test_bilstm_channel_permutation_equivariant(rng):
    p = BiLstmParams.init(rng)
    seq = rng.normal(size=(5, 7, 10))
    perm = rng.permutation(7)
    np.testing.assert_array_equal(bilstm_encode(seq[:, perm], p).data, bilstm_encode(seq, p).data[perm])


def test_bilstm_gradient_check(rng):
    p = BiLstmParams.init(rng)
    seq = Tensor(rng.normal(size=(5, 4, 10)))
    readout = rng.normal(size=(4, 128))
    tensors = [seq] + p.tensors()

    def f(x, *ws):
        params = BiLstmParams(LstmDirection(*ws[:3]), LstmDirection(*ws[3:]))
        return (bilstm_encode(x, params) * readout).sum()

    report = check_gradient(f, tensors, tol=1e-4, n_probe=25, seed=3)
    assert report.passed, report
