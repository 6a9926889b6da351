import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, strategies as st

from onebit_ofdm.nn import (
    AdamState,
    BadHeaderError,
    ChecksumError,
    MlpModel,
    MlpSpec,
    TrainingConfig,
    TruncatedCheckpointError,
    UnsupportedVersionError,
    adam_step,
    adam_update,
    backward,
    forward,
    gradient_check,
    load_checkpoint,
    load_matrix,
    mse_loss,
    save_checkpoint,
    save_matrix,
    train,
)


def _model(sizes, acts, seed=0, bias=0.1):
    rng = np.random.default_rng(seed)
    m = MlpModel.init(MlpSpec(sizes, acts), rng)
    for w in m.weights:
        w[:, -1] = bias * rng.standard_normal(w.shape[0])
    return m


def test_spec_validation():
    with pytest.raises(ValueError):
        MlpSpec((3,), ())
    with pytest.raises(ValueError):
        MlpSpec((3, 0), ("linear",))
    with pytest.raises(ValueError):
        MlpSpec((3, 2), ("tanh",))
    with pytest.raises(ValueError):
        MlpSpec((3, 2, 1), ("relu",))


def test_identity_layer():
    w = np.hstack([np.eye(3), np.zeros((3, 1))])
    m = MlpModel(MlpSpec((3, 3), ("linear",)), [w])
    x = np.array([1.0, -2.0, 0.5])
    assert np.array_equal(m(x), x)


def test_zero_weights_give_last_bias():
    m = _model((4, 6, 2), ("relu", "linear"))
    for w in m.weights:
        w[:, :-1] = 0
    m.weights[0][:, -1] = 0
    m.weights[1][:, -1] = [0.3, -1.2]
    assert np.allclose(m(np.ones(4)), [0.3, -1.2])


def test_forward_matches_hand_evaluation():
    m = _model((4, 8, 2), ("relu", "linear"), seed=3)
    x = np.random.default_rng(4).standard_normal(4)
    w1, w2 = m.weights
    h = np.maximum(w1[:, :4] @ x + w1[:, 4], 0)
    ref = w2[:, :8] @ h + w2[:, 8]
    assert np.abs(m(x) - ref).max() < 1e-12


def test_forward_dimension_mismatch():
    m = _model((4, 2), ("linear",))
    with pytest.raises(ValueError):
        forward(m, np.ones(5))


def test_scalar_linear_gradient():
    m = MlpModel(MlpSpec((1, 1), ("linear",)), [np.array([[1.5, 0.0]])])
    x, t = 2.0, 1.0
    out, cache = forward(m, np.array([[x]]))
    _, g = mse_loss(out, np.array([[t]]))
    grads = backward(m, cache, g)
    assert np.isclose(grads[0][0, 0], 2 * (1.5 * x - t) * x)


def test_zero_grad_out():
    m = _model((3, 5, 2), ("relu", "linear"))
    _, cache = forward(m, np.ones((2, 3)))
    assert all(np.all(g == 0) for g in backward(m, cache, np.zeros((2, 2))))


def test_stale_cache():
    m = _model((3, 5, 2), ("relu", "linear"))
    _, cache = forward(m, np.ones((2, 3)))
    with pytest.raises(ValueError):
        backward(m, cache, np.zeros((3, 2)))


def test_relu_subgradient_at_zero():
    w = np.array([[1.0, 0.0]])
    m = MlpModel(MlpSpec((1, 1, 1), ("relu", "linear")), [w.copy(), np.array([[1.0, 0.0]])])
    _, cache = forward(m, np.array([[0.0]]))
    g = backward(m, cache, np.array([[1.0]]))
    assert g[0][0, 0] == 0 and g[0][0, 1] == 0


@given(
    st.integers(1, 12), st.integers(1, 16), st.integers(1, 6),
    st.sampled_from(["relu", "linear"]), st.integers(0, 2**31),
)
def test_gradient_check_property(n_in, n_hidden, n_out, act, seed):
    m = _model((n_in, n_hidden, n_out), (act, "linear"), seed=seed)
    rng = np.random.default_rng(seed + 1)
    x = rng.standard_normal((3, n_in))
    y = rng.standard_normal((3, n_out))
    assert gradient_check(m, x, y) < 1e-5


def test_gradient_check_large_model():
    m = _model((128, 256, 64), ("relu", "linear"), seed=7)
    rng = np.random.default_rng(8)
    err = gradient_check(m, rng.standard_normal((2, 128)), rng.standard_normal((2, 64)), n_probe=30, rng=rng)
    assert err < 1e-5


def test_adam_first_step():
    p = [np.zeros(1)]
    adam_update(p, [np.array([2.0])], AdamState(lr=0.01))
    assert 0.0099 <= -p[0][0] <= 0.01


def test_adam_zero_gradient_and_counter():
    p = [np.ones(3)]
    st_ = AdamState()
    adam_update(p, [np.zeros(3)], st_)
    assert np.array_equal(p[0], np.ones(3)) and st_.step == 1


def test_adam_constant_gradient_is_monotone():
    p = [np.zeros(1)]
    st_ = AdamState()
    traj = []
    for _ in range(3):
        adam_update(p, [np.array([-0.5])], st_)
        traj.append(p[0][0])
    assert 0 < traj[0] < traj[1] < traj[2]


def test_adam_matches_textbook(rng):
    p = [rng.standard_normal(5)]
    ref = p[0].copy()
    m = np.zeros(5)
    v = np.zeros(5)
    st_ = AdamState(lr=0.003)
    for t in range(1, 6):
        g = rng.standard_normal(5)
        adam_update(p, [g], st_)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref -= 0.003 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    assert np.allclose(p[0], ref, rtol=1e-10, atol=1e-14)


def test_adam_rejects_bad_gradients():
    with pytest.raises(FloatingPointError):
        adam_update([np.zeros(2)], [np.array([np.nan, 1.0])], AdamState())
    with pytest.raises(ValueError):
        adam_update([np.zeros(2)], [np.zeros(3)], AdamState())


def test_adam_step_wrapper():
    m = _model((2, 2), ("linear",))
    before = m.weights[0].copy()
    m2, st_ = adam_step(m, [np.ones_like(before)], AdamState())
    assert m2 is m and st_.step == 1 and np.all(m.weights[0] < before)


def test_training_config_validation():
    with pytest.raises(ValueError):
        TrainingConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainingConfig(epochs=0)


def _linear_data(rng, n=256):
    a = rng.standard_normal((2, 2))
    x = rng.standard_normal((n, 2))
    return x, x @ a.T


def test_linear_convergence(rng):
    x, y = _linear_data(rng)
    m = _model((2, 2), ("linear",))
    res = train(m, x, y, TrainingConfig(batch_size=32, epochs=400, lr=0.01))
    assert mse_loss(m(x), y)[0] < 1e-6
    trace = np.array(res.losses)
    assert np.all(trace[1:] <= trace[:-1] * 1.05 + 1e-12)


def test_training_determinism(rng):
    x, y = _linear_data(rng)
    ws = []
    for _ in range(2):
        m = _model((2, 4, 2), ("relu", "linear"), seed=5)
        train(m, x, y, TrainingConfig(epochs=5, seed=11))
        ws.append(m.weights)
    assert all(np.array_equal(a, b) for a, b in zip(*ws))


def test_train_errors():
    m = _model((2, 2), ("linear",))
    with pytest.raises(ValueError):
        train(m, np.zeros((0, 2)), np.zeros((0, 2)), TrainingConfig())
    with pytest.raises(ValueError):
        train(m, np.zeros((3, 2)), np.zeros((3, 3)), TrainingConfig())


def test_early_stopping_restores_best(rng):
    x, y = _linear_data(rng, 200)
    m = _model((2, 2), ("linear",))
    res = train(m, x, y, TrainingConfig(epochs=50, lr=0.5, val_fraction=0.2, patience=1))
    assert len(res.val_losses) <= 50
    best = min(res.val_losses)
    val_idx = np.random.default_rng(0).permutation(200)[:40]
    assert np.isclose(mse_loss(m(x[val_idx]), y[val_idx])[0], best)


def test_initialization_scale(rng):
    m = MlpModel.init(MlpSpec((128, 512, 512, 128), ("relu", "relu", "linear")), rng)
    x = rng.standard_normal((2000, 128))
    _, cache = forward(m, x)
    for z in cache.pre[:2]:
        assert 0.5 <= np.var(z) / (1.0 if z is cache.pre[0] else 1.0) <= 4.0
    # He scaling keeps the first pre-activation at about 2x unit variance
    assert 0.5 <= np.var(cache.pre[0]) / 2 <= 2


def test_checkpoint_round_trip(tmp_path):
    m = _model((5, 7, 3), ("relu", "linear"), seed=2)
    p = tmp_path / "m.ckpt"
    save_checkpoint(m, p)
    back = load_checkpoint(p)
    assert back.spec == m.spec
    assert all(np.array_equal(a, b) for a, b in zip(back.weights, m.weights))


def test_matrix_round_trip(tmp_path, rng):
    a = rng.standard_normal((4, 6)) + 1j * rng.standard_normal((4, 6))
    save_matrix(a, tmp_path / "p.ckpt")
    assert np.array_equal(load_matrix(tmp_path / "p.ckpt"), a)


def test_checkpoint_errors(tmp_path):
    m = _model((3, 2), ("linear",))
    p = tmp_path / "m.ckpt"
    save_checkpoint(m, p)
    raw = bytearray(p.read_bytes())

    bad = bytearray(raw)
    bad[0:3] = b"XXX"
    p.write_bytes(bytes(bad))
    with pytest.raises(BadHeaderError, match="bad header"):
        load_checkpoint(p)

    bad = bytearray(raw)
    bad[8:12] = struct.pack("<I", 99)
    p.write_bytes(bytes(bad))
    with pytest.raises(UnsupportedVersionError, match="unsupported version"):
        load_checkpoint(p)

    p.write_bytes(bytes(raw[:-10]))
    with pytest.raises(TruncatedCheckpointError):
        load_checkpoint(p)

    bad = bytearray(raw)
    bad[-6] ^= 0xFF
    p.write_bytes(bytes(bad))
    with pytest.raises(ChecksumError):
        load_checkpoint(p)

    # the checksum covers the whole body
    assert zlib.crc32(bytes(raw[:-4])) == struct.unpack("<I", bytes(raw[-4:]))[0]


def test_checkpoint_kind_mismatch(tmp_path, rng):
    save_matrix(np.eye(2), tmp_path / "p.ckpt")
    with pytest.raises(BadHeaderError):
        load_checkpoint(tmp_path / "p.ckpt")
