import numpy as np
import pytest
from hypothesis import given, strategies as st

from onebit_ofdm.chanest import (
    ChannelEstimate,
    PilotSet,
    build_labeled_set,
    channel_dnn_spec,
    draw_pilots,
    estimation_mse,
    from_real,
    generative_estimate,
    ls_estimate,
    theorem_scale,
    to_real,
    train_channel_dnn,
)
from onebit_ofdm.dsp import (
    ChannelRealization,
    PowerProfile,
    apply_channel,
    dft,
    draw_channel,
    random_qpsk,
)
from onebit_ofdm.nn import TrainingConfig, forward, mse_loss
from onebit_ofdm.quantization import bussgang_gain, one_bit_quantize


def _train(ch, n_t, snr_db, seed, epochs=None):
    rng = np.random.default_rng(seed)
    p = PowerProfile.from_snr_db(snr_db)
    ps = draw_pilots(n_t, ch.n, rng)
    data = build_labeled_set(ch, ps, p.sigma_n2, rng)
    cfg = None if epochs is None else TrainingConfig(epochs=epochs, seed=seed, lr=3e-4)
    return train_channel_dnn(data, seed, cfg), data, ps, p


@given(st.integers(1, 16), st.integers(0, 2**31))
def test_real_complex_round_trip(n, seed):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((2, n)) + 1j * rng.standard_normal((2, n))
    assert np.array_equal(from_real(to_real(z)), z)
    assert to_real(z).shape == (2, 2 * n)


def test_pilot_set_shapes(rng):
    ps = draw_pilots(10, 64, rng)
    assert ps.n_t == 10 and ps.n == 64
    assert np.allclose(np.abs(ps.pilots), 1)
    assert ps.subset(4).n_t == 4
    with pytest.raises(ValueError):
        draw_pilots(0, 64, rng)


def test_labeled_set_shapes(rng):
    ch = draw_channel(10, 64, rng)
    data = build_labeled_set(ch, draw_pilots(10, 64, rng), 0.1, rng)
    assert len(data) == 10
    assert data.inputs.shape == data.labels.shape == (10, 128)
    with pytest.raises(ValueError):
        build_labeled_set(ch, draw_pilots(2, 32, rng), 0.1, rng)


def test_noiseless_flat_labels(rng):
    ch = ChannelRealization([1.0], 8)
    s = np.full((1, 8), (1 + 1j) / np.sqrt(2))
    data = build_labeled_set(ch, PilotSet(s), 0.0, rng)
    fr = dft(one_bit_quantize(apply_channel(ch, s, 0.0)))
    assert np.allclose(np.abs(from_real(data.labels)), np.abs(fr))


def test_label_mean_matches_theorem(rng):
    ch = draw_channel(3, 16, rng)
    p = PowerProfile.from_snr_db(10)
    data = build_labeled_set(ch, draw_pilots(100_000, 16, rng), p.sigma_n2, rng)
    mean = from_real(data.labels).mean(axis=0)
    expect = bussgang_gain(PowerProfile(1, ch.sigma_chn2_inst, p.sigma_n2)) * ch.lam
    assert np.linalg.norm(mean - expect) / np.linalg.norm(expect) < 0.05


def test_parameter_count():
    spec = channel_dnn_spec(64)
    assert spec.n_params(bias=False) == 32 * 64**2
    assert spec.n_params() == 32 * 64**2 + 4 * 64 + 4 * 64 + 2 * 64


def test_training_beats_mean_predictor_and_is_deterministic(rng):
    ch = draw_channel(10, 64, rng)
    m, data, _, _ = _train(ch, 20, 10, seed=1, epochs=200)
    fit = mse_loss(forward(m, data.inputs)[0], data.labels)[0]
    const = mse_loss(np.broadcast_to(data.labels.mean(axis=0), data.labels.shape), data.labels)[0]
    assert fit < const
    m2 = train_channel_dnn(data, 1, TrainingConfig(epochs=200, seed=1, lr=3e-4))
    assert all(np.array_equal(a, b) for a, b in zip(m.weights, m2.weights))


def test_empty_training_set(rng):
    ch = draw_channel(2, 8, rng)
    data = build_labeled_set(ch, draw_pilots(2, 8, rng), 0.1, rng)
    with pytest.raises(ValueError):
        train_channel_dnn(data.head(0), 0)


def test_generative_single_sample(rng):
    ch = draw_channel(2, 8, rng)
    m, *_ = _train(ch, 4, 10, seed=0, epochs=3)
    est = generative_estimate(m, 1, np.random.default_rng(9), scale_mode="raw")
    x = random_qpsk((1, 8), np.random.default_rng(9))
    assert np.allclose(est.h_hat, from_real(forward(m, to_real(x))[0])[0])
    with pytest.raises(ValueError):
        generative_estimate(m, 0, rng)
    with pytest.raises(ValueError):
        generative_estimate(m, 5, rng, scale_mode="nominal-rescaled")


def test_averaging_variance(rng):
    ch = draw_channel(10, 64, rng)
    m, _, _, p = _train(ch, 20, 10, seed=2, epochs=100)
    small = [generative_estimate(m, 100, np.random.default_rng(i), profile=p).h_hat for i in range(8)]
    big = [generative_estimate(m, 10_000, np.random.default_rng(50 + i), profile=p).h_hat for i in range(8)]
    assert np.var(np.array(small), axis=0).sum() > np.var(np.array(big), axis=0).sum()


def test_dnn_beats_onebit_ls_at_10db():
    errs_dnn, errs_ls = [], []
    for seed in range(4):
        rng = np.random.default_rng(100 + seed)
        ch = draw_channel(10, 64, rng)
        m, data, ps, p = _train(ch, 20, 10, seed=seed)
        errs_dnn.append(estimation_mse(generative_estimate(m, 10_000, rng, profile=p), ch))
        errs_ls.append(estimation_mse(ls_estimate(data.received, ps, "onebit"), ch))
    assert np.mean(errs_dnn) < np.mean(errs_ls)


def test_scale_modes(rng):
    p = PowerProfile.from_snr_db(10)
    ch = draw_channel(4, 16, rng)
    assert theorem_scale(p, "raw") == 1.0
    assert np.isclose(theorem_scale(p, "nominal-rescaled"), bussgang_gain(PowerProfile(1, 1, 0.1)))
    assert np.isclose(
        theorem_scale(p, "oracle-rescaled", ch), bussgang_gain(PowerProfile(1, ch.sigma_chn2_inst, 0.1))
    )
    with pytest.raises(ValueError):
        theorem_scale(p, "oracle-rescaled")
    with pytest.raises(ValueError):
        ChannelEstimate(np.zeros(4), "bogus")
    with pytest.raises(ValueError):
        ChannelEstimate(np.array([np.nan]))


def test_ls_noiseless_exact(rng):
    ch = draw_channel(5, 32, rng)
    ps = draw_pilots(3, 32, rng)
    est = ls_estimate(apply_channel(ch, ps.pilots, 0.0), ps)
    assert np.allclose(est.h_hat, ch.lam, atol=1e-12)
    assert estimation_mse(est, ch) < 1e-24


@pytest.mark.parametrize("n_t,s2", [(10, 0.1), (20, 0.1), (10, 0.4)])
def test_ls_variance(n_t, s2, rng):
    errs = []
    for _ in range(300):
        ch = draw_channel(10, 64, rng)
        ps = draw_pilots(n_t, 64, rng)
        errs.append(estimation_mse(ls_estimate(apply_channel(ch, ps.pilots, s2, rng), ps), ch))
    assert 0.8 <= np.mean(errs) / (s2 / n_t) <= 1.2


def test_onebit_ls_floors(rng):
    res = {}
    for snr in (20, 40, 60):
        p = PowerProfile.from_snr_db(snr)
        errs = []
        for _ in range(50):
            ch = draw_channel(10, 64, rng)
            ps = draw_pilots(20, 64, rng)
            est = ls_estimate(apply_channel(ch, ps.pilots, p.sigma_n2, rng), ps, "onebit", p)
            errs.append(estimation_mse(est.compensated, ch))
        res[snr] = np.mean(errs)
    assert res[60] > 0.02 and res[60] > 0.5 * res[20]


def test_ls_errors(rng):
    ps = draw_pilots(2, 8, rng)
    with pytest.raises(ValueError):
        ls_estimate(np.zeros((3, 8)), ps)
    with pytest.raises(ValueError):
        ls_estimate(np.zeros((2, 8)), ps, "twobit")
    with pytest.raises(ZeroDivisionError):
        ls_estimate(np.zeros((1, 2)), PilotSet(np.array([[1, 0]])))


def test_mse_examples(rng):
    ch = draw_channel(10, 64, rng)
    assert estimation_mse(ch.lam, ch) == 0
    assert np.isclose(estimation_mse(ch.lam + 1, ch), 1)
    assert np.isclose(estimation_mse(np.zeros(64), ch), ch.sigma_chn2_inst)
    with pytest.raises(ValueError):
        estimation_mse(np.zeros(3), ch)


def test_consistency_with_more_pilots_and_samples():
    small, big = [], []
    for seed in range(3):
        ch = draw_channel(10, 64, np.random.default_rng(200 + seed))
        rng = np.random.default_rng(seed)
        m, _, _, p = _train(ch, 10, 10, seed=seed, epochs=300)
        small.append(estimation_mse(generative_estimate(m, 1000, rng, profile=p), ch))
        m, _, _, p = _train(ch, 200, 10, seed=seed, epochs=300)
        big.append(estimation_mse(generative_estimate(m, 100_000, rng, profile=p), ch))
    assert np.mean(big) < np.mean(small)


def test_retraining_contract():
    rng = np.random.default_rng(5)
    ch_a, ch_b = draw_channel(10, 64, rng), draw_channel(10, 64, rng)
    m_a, *_ = _train(ch_a, 20, 10, seed=1)
    m_b, _, _, p = _train(ch_b, 20, 10, seed=2)
    own = estimation_mse(generative_estimate(m_b, 5000, rng, profile=p), ch_b)
    other = estimation_mse(generative_estimate(m_a, 5000, rng, profile=p), ch_b)
    assert own < other
