import math
import time
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aupipe.errors import DomainError, FormatError, ShapeError, TrainingDivergedError
from aupipe.lstm import (
    LstmConfig,
    LstmModel,
    LstmParams,
    backward,
    forward,
    init_params,
    load_lstm,
    loss,
    predict_sequence,
    save_lstm,
    train,
)

from oracles import finite_difference_grad, lstm_single_step, max_relative_error


def seeded_params(d=3, h=4, seed=0, scale=1.0):
    p = init_params(LstmConfig(input_dim=d, hidden_units=h), np.random.default_rng(seed))
    return p.map(lambda a: a * scale)


def seq(features, labels):
    return SimpleNamespace(features=np.asarray(features, float), labels=np.asarray(labels))


# ---------------------------------------------------------------------------
# forward and loss


def test_zero_params_give_half():
    probs, _ = forward(LstmParams.zeros(3, 5), np.random.default_rng(0).normal(size=(7, 3)))
    np.testing.assert_array_equal(probs, 0.5)


def test_single_step_matches_scalar_oracle():
    p = seeded_params(3, 4, seed=2, scale=2.0)
    x = np.array([0.3, -1.2, 0.8])
    probs, _ = forward(p, x[None, :])
    np.testing.assert_allclose(probs[0], lstm_single_step(p, x), rtol=0, atol=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 30))
def test_softmax_rows_and_gate_ranges(seed, t_len):
    rng = np.random.default_rng(seed)
    p = seeded_params(3, 5, seed=seed % 1000, scale=3.0)
    probs, cache = forward(p, rng.normal(size=(t_len, 3)))
    assert np.all(np.abs(probs.sum(axis=1) - 1.0) <= 1e-12)
    sig = cache.gates[:, [0, 1, 3]]
    assert np.all((sig > 0) & (sig < 1))
    assert np.all(np.abs(cache.gates[:, 2]) < 1)


def test_loss_examples():
    assert loss([[0.0, 1.0], [1.0, 0.0]], [1, 0]) == 0.0
    assert loss([[0.5, 0.5]] * 3, [1, 0, 1]) == pytest.approx(math.log(2), abs=1e-15)
    assert loss([[0.1, 0.9], [0.9, 0.1]], [1, 0]) == pytest.approx(-math.log(0.9), abs=1e-15)
    assert loss([[1.0, 0.0]], [1]) == pytest.approx(-math.log(1e-12))
    with pytest.raises(ShapeError):
        loss([[0.5, 0.5]], [1, 0])


def test_shape_errors():
    p = seeded_params()
    with pytest.raises(ShapeError):
        forward(p, np.zeros((4, 2)))
    _, cache = forward(p, np.zeros((4, 3)))
    with pytest.raises(ShapeError):
        backward(cache, [0, 1, 0])


# ---------------------------------------------------------------------------
# gradients


def test_gradient_check_tiny_network():
    start = time.perf_counter()
    rng = np.random.default_rng(42)
    p = seeded_params(3, 4, seed=42, scale=2.0)
    x = rng.normal(size=(5, 3))
    y = np.array([0, 1, 1, 0, 1])
    _, cache = forward(p, x)
    analytic = backward(cache, y)
    numeric = finite_difference_grad(p, lambda q: loss(forward(q, x)[0], y), eps=1e-5)
    assert max_relative_error(analytic, numeric) <= 1e-4
    assert time.perf_counter() - start < 10


def test_saturated_gradient_vanishes():
    p = seeded_params(3, 4, seed=1)
    p.by[:] = [-30.0, 30.0]
    x = np.random.default_rng(1).normal(size=(6, 3))
    _, cache = forward(p, x)
    g = backward(cache, np.ones(6, int))
    assert math.sqrt(sum(float((a * a).sum()) for a in g.arrays())) < 1e-6


def test_doubled_sequence_gradient_unchanged():
    p = seeded_params(3, 4, seed=3)
    x = np.random.default_rng(3).normal(size=(5, 3))
    y = np.array([1, 0, 0, 1, 1])
    _, cache = forward(p, x)
    once = backward(cache, y)
    copies = [backward(forward(p, x)[1], y) for _ in range(2)]
    mean = copies[0].map(lambda a, b: (a + b) / 2, copies[1])
    for a, b in zip(once.arrays(), mean.arrays()):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-15)


# ---------------------------------------------------------------------------
# training


def toy_sequences(n=4, t_len=30, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        latent = np.repeat(rng.choice([-1.0, 1.0], size=t_len // 5), 5)
        feats = np.stack([latent + rng.normal(0, 0.3, t_len), rng.normal(size=t_len)], axis=1)
        out.append(seq(feats, (latent > 0).astype(int)))
    return out


def test_training_deterministic():
    cfg = LstmConfig(input_dim=2, hidden_units=6, learning_rate=0.01, weight_noise_std=0.1, epochs=3, seed=9)
    a = train(toy_sequences(), cfg)
    b = train(toy_sequences(), cfg)
    assert a.params.to_vector().tobytes() == b.params.to_vector().tobytes()
    assert a.loss_history == b.loss_history


def test_first_step_velocity_is_minus_lr_grad():
    cfg = LstmConfig(input_dim=2, hidden_units=4, learning_rate=0.05, momentum=0.9,
                     weight_noise_std=0.0, epochs=1)
    s = toy_sequences(1)
    init = seeded_params(2, 4, seed=5)
    model = train(s, cfg, init=init)
    g = backward(forward(init, s[0].features)[1], s[0].labels)
    np.testing.assert_allclose(model.params.to_vector() - init.to_vector(), -0.05 * g.to_vector(), atol=1e-15)


def test_zero_learning_rate_leaves_params():
    cfg = LstmConfig(input_dim=2, hidden_units=4, learning_rate=0.0, weight_noise_std=0.5, epochs=3)
    init = seeded_params(2, 4, seed=6)
    model = train(toy_sequences(), cfg, init=init)
    assert model.params.to_vector().tobytes() == init.to_vector().tobytes()


def test_noise_not_persisted_into_params():
    cfg = LstmConfig(input_dim=2, hidden_units=4, learning_rate=0.0, weight_noise_std=1.0, epochs=1,
                     noise_on_biases=False)
    init = seeded_params(2, 4, seed=7)
    assert np.array_equal(train(toy_sequences(2), cfg, init=init).params.b, init.b)


def test_learnability():
    seqs = toy_sequences(6, 40, seed=1)
    cfg = LstmConfig(input_dim=2, hidden_units=8, learning_rate=0.05, momentum=0.9,
                     weight_noise_std=0.0, epochs=200, seed=0)
    model = train(seqs, cfg)
    correct = sum(int(np.sum(predict_sequence(model.params, s.features)[0] == s.labels.astype(bool))) for s in seqs)
    assert correct / sum(len(s.labels) for s in seqs) > 0.95


def test_validation_checkpoint_recorded():
    cfg = LstmConfig(input_dim=2, hidden_units=4, learning_rate=0.05, weight_noise_std=0.0, epochs=5)
    model = train(toy_sequences(), cfg, validation=toy_sequences(2, seed=8))
    assert len(model.val_history) == 5
    assert model.val_history[model.epoch - 1] == max(model.val_history)


def test_divergence_reported():
    cfg = LstmConfig(input_dim=2, hidden_units=4, learning_rate=1.0, weight_noise_std=0.0, epochs=1)
    init = seeded_params(2, 4)
    init.wy[:] = np.nan
    with pytest.raises((TrainingDivergedError, FloatingPointError)):
        train(toy_sequences(1), cfg, init=init)


def test_config_validation():
    with pytest.raises(DomainError):
        LstmConfig(input_dim=2, momentum=1.0)
    with pytest.raises(DomainError):
        LstmConfig(input_dim=0)


# ---------------------------------------------------------------------------
# prediction


def test_symmetric_params_tie_to_present():
    pred, scores, _ = predict_sequence(LstmParams.zeros(3, 2), np.ones((4, 3)))
    assert pred.all() and np.all(scores == 0.0)


def test_full_length_sequence_single_pass():
    p = seeded_params(8, 6)
    x = np.random.default_rng(0).normal(size=(4845, 8))
    pred, scores, _ = predict_sequence(p, x)
    assert pred.shape == (4845,) and np.all(np.isfinite(scores))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 39))
def test_state_carrying_equivalence(seed, cut):
    p = seeded_params(3, 5, seed=seed % 97, scale=2.0)
    x = np.random.default_rng(seed).normal(size=(40, 3))
    whole, ws, _ = predict_sequence(p, x)
    a, sa, state = predict_sequence(p, x[:cut])
    b, sb, _ = predict_sequence(p, x[cut:], state)
    np.testing.assert_array_equal(np.concatenate([a, b]), whole)
    np.testing.assert_allclose(np.concatenate([sa, sb]), ws, rtol=0, atol=1e-13)


# ---------------------------------------------------------------------------
# serialization


def test_lstm_round_trip_bit_exact(tmp_path):
    cfg = LstmConfig(input_dim=3, hidden_units=4, epochs=2)
    model = LstmModel(seeded_params(3, 4, seed=4), cfg, 2, [0.7, 0.6], [0.5], au=12, network="synthetic")
    save_lstm(model, tmp_path / "m.lstm")
    back = load_lstm(tmp_path / "m.lstm")
    assert back.params.to_vector().tobytes() == model.params.to_vector().tobytes()
    assert back.config == cfg and back.au == 12 and back.loss_history == [0.7, 0.6]
    save_lstm(back, tmp_path / "n.lstm")
    assert (tmp_path / "m.lstm").read_bytes() == (tmp_path / "n.lstm").read_bytes()


def test_params_vector_layout():
    p = seeded_params(3, 4, seed=0)
    v = p.to_vector()
    # gate 0 block: wx (4x3) then wh (4x4) then b (4)
    np.testing.assert_array_equal(v[:12], p.wx[0].ravel())
    np.testing.assert_array_equal(v[12:28], p.wh[0].ravel())
    np.testing.assert_array_equal(v[28:32], p.b[0])
    np.testing.assert_array_equal(v[-2:], p.by)
    assert LstmParams.from_vector(v, 3, 4).to_vector().tobytes() == v.tobytes()


def test_bad_lstm_file(tmp_path):
    (tmp_path / "x.lstm").write_bytes(b"NOPE" + bytes(8))
    with pytest.raises(FormatError):
        load_lstm(tmp_path / "x.lstm")
