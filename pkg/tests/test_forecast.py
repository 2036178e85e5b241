import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cyberder.forecast import (
    PARAM_NAMES,
    ForecasterRegistry,
    LstmCell,
    LstmNetwork,
    TrainConfig,
    TrainingDiverged,
    bptt_gradients,
    cell_forward,
    make_windows,
    one_step_rmse,
    predict_batch,
    predict_voltage,
    train,
)
from oracles import scalar_lstm_step


def test_zero_cell_gives_half_cell_state_decay():
    cell = LstmCell.zeros(3)
    h, c, _ = cell_forward(cell, [0.7], np.zeros(3), np.full(3, 0.4))
    assert np.allclose(c, 0.2)
    assert np.allclose(h, 0.5 * np.tanh(0.2))


def test_saturated_gates():
    cell = LstmCell.zeros(2)
    for name in ("b_i", "b_f", "b_o"):
        getattr(cell, name)[:] = 50.0
    cell.b_C[:] = 50.0
    h, c, cache = cell_forward(cell, [0.0], np.zeros(2), np.full(2, 0.3))
    assert np.allclose(cache.i, 1.0) and np.allclose(cache.f, 1.0)
    assert np.allclose(c, 1.3)
    assert np.allclose(h, np.tanh(1.3))


def test_sigmoid_extremes_are_finite():
    cell = LstmCell.zeros(2)
    cell.b_f[:] = -1e4
    cell.b_i[:] = 1e4
    _, c, cache = cell_forward(cell, [0.0], np.zeros(2), np.ones(2))
    assert np.all(np.isfinite(c)) and np.allclose(cache.f, 0.0)


@pytest.mark.parametrize("seed", range(5))
def test_cell_matches_scalar_loops(seed):
    rng = np.random.default_rng(seed)
    cell = LstmCell.random(5, 1, rng)
    x, h0, c0 = rng.normal(size=1), rng.normal(size=5), rng.normal(size=5)
    h, c, _ = cell_forward(cell, x, h0, c0)
    ho, co = scalar_lstm_step(cell, x, h0, c0)
    assert np.max(np.abs(h - ho)) <= 1e-12 and np.max(np.abs(c - co)) <= 1e-12


def test_cell_rejects_bad_shapes():
    cell = LstmCell.zeros(3)
    with pytest.raises(ValueError):
        cell_forward(cell, [0.1, 0.2], np.zeros(3), np.zeros(3))
    with pytest.raises(ValueError):
        cell_forward(cell, [np.nan], np.zeros(3), np.zeros(3))


def _loss(net, windows, targets):
    return float(np.mean((predict_batch(net, windows) - targets) ** 2))


@pytest.mark.parametrize("seed", range(5))
def test_bptt_matches_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    net = LstmNetwork.init(hidden_size=4, lookback=5, seed=seed)
    windows = rng.normal(size=(3, 5))
    targets = rng.normal(size=3)
    grads = bptt_gradients(net, windows, targets)
    h = 1e-5
    for name in PARAM_NAMES:
        base = {k: np.array(v, dtype=float) for k, v in net.params().items()}
        flat = base[name].reshape(-1)
        for j in range(flat.size):
            plus = {k: v.copy() for k, v in base.items()}
            minus = {k: v.copy() for k, v in base.items()}
            plus[name].reshape(-1)[j] += h
            minus[name].reshape(-1)[j] -= h
            fd = (_loss(net.with_params(plus), windows, targets) - _loss(net.with_params(minus), windows, targets)) / (2 * h)
            an = np.asarray(grads[name]).reshape(-1)[j]
            assert abs(an - fd) <= 1e-4 * max(abs(fd), 1e-6), (name, j, an, fd)


def test_zero_error_gives_zero_gradients():
    net = LstmNetwork.init(hidden_size=4, lookback=3, seed=2)
    windows = np.random.default_rng(0).normal(size=(6, 3))
    grads = bptt_gradients(net, windows, predict_batch(net, windows))
    assert all(np.all(np.asarray(g) == 0) for g in grads.values())


def test_duplicated_windows_give_same_mean_gradient():
    net = LstmNetwork.init(hidden_size=4, lookback=3, seed=3)
    rng = np.random.default_rng(1)
    w, y = rng.normal(size=(2, 3)), rng.normal(size=2)
    once = bptt_gradients(net, w, y)
    twice = bptt_gradients(net, np.vstack([w, w]), np.concatenate([y, y]))
    for k in once:
        assert np.allclose(once[k], twice[k], rtol=1e-12, atol=1e-15)


def test_gradient_input_validation():
    net = LstmNetwork.init(hidden_size=2, lookback=3)
    with pytest.raises(ValueError):
        bptt_gradients(net, np.zeros((0, 3)), np.zeros(0))
    with pytest.raises(ValueError):
        bptt_gradients(net, np.zeros((2, 3)), np.zeros(3))


def test_constant_series_learned():
    net = LstmNetwork.init(hidden_size=8, lookback=5, seed=0, v_center=1.0, v_spread=0.05)
    result = train(net, np.full(200, 1.01), TrainConfig(epochs=30, learning_rate=1e-2, batch=32))
    assert one_step_rmse(result.network, np.full(60, 1.01)) <= 1e-4


def test_sine_held_out_error_small():
    t = np.arange(900)
    series = 1.0 + 0.02 * np.sin(2 * np.pi * t / 50)
    net = LstmNetwork.init(hidden_size=12, lookback=10, seed=1, v_center=1.0, v_spread=0.05)
    result = train(net, series[:700], TrainConfig(epochs=150, learning_rate=5e-3, batch=32, seed=1))
    assert one_step_rmse(result.network, series[700:]) <= 0.01 * 0.02
    assert result.loss_history[-1] < result.loss_history[0]


def test_training_is_deterministic():
    series = 1.0 + 0.01 * np.sin(np.arange(120) / 5)
    cfg = TrainConfig(epochs=3, batch=16, seed=7)
    a = train(LstmNetwork.init(hidden_size=4, lookback=4, seed=7), series, cfg)
    b = train(LstmNetwork.init(hidden_size=4, lookback=4, seed=7), series, cfg)
    assert a.loss_history == b.loss_history
    for k, v in a.network.params().items():
        assert np.array_equal(v, b.network.params()[k])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reported():
    net = LstmNetwork.init(hidden_size=2, lookback=2)
    with pytest.raises(TrainingDiverged):
        train(net, np.array([1.0, 1.0, 1e200, 1.0, 1.0]), TrainConfig(epochs=1))


def test_non_finite_series_rejected():
    with pytest.raises(ValueError):
        train(LstmNetwork.init(hidden_size=2, lookback=2), np.array([1.0, np.inf, 1.0, 1.0]), TrainConfig(epochs=1))


@pytest.mark.parametrize("kw", [dict(epochs=0), dict(learning_rate=0.0), dict(batch=0), dict(optimizer="rmsprop")])
def test_train_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_windows_shape():
    w, y = make_windows(np.arange(10.0), 4)
    assert w.shape == (6, 4) and np.array_equal(w[0], [0, 1, 2, 3]) and y[0] == 4
    with pytest.raises(ValueError):
        make_windows(np.arange(4.0), 4)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.1, 100), st.floats(-2, 2), st.floats(0.01, 10), st.floats(0.1, 500))
def test_scaler_round_trip(v_base, center, spread, v):
    net = LstmNetwork.init(hidden_size=2, lookback=2, v_base=v_base, v_center=center, v_spread=spread)
    assert net.denormalize(net.normalize(v)) == pytest.approx(v, rel=1e-12)


def test_identity_scaler():
    net = LstmNetwork.init(hidden_size=2, lookback=2)
    assert net.normalize(1.23) == 1.23 and net.denormalize(0.5) == 0.5


def test_kv_inputs_normalized_to_per_unit():
    net = LstmNetwork.init(hidden_size=2, lookback=2, v_base=4.8)
    assert net.normalize(4.8) == pytest.approx(1.0)


def test_predict_voltage_checks_length():
    net = LstmNetwork.init(hidden_size=2, lookback=3)
    with pytest.raises(ValueError):
        predict_voltage(net, [1.0, 1.0])


def test_registry(tmp_path):
    reg = ForecasterRegistry()
    with pytest.raises(KeyError, match="702"):
        reg[702]
    net = LstmNetwork.init(hidden_size=3, lookback=4, v_base=4.8, seed=9, v_center=1.0, v_spread=0.05)
    reg.register(702, net)
    reg.save(tmp_path)
    back = ForecasterRegistry.load(tmp_path, [702])
    hist = [4.8, 4.79, 4.81, 4.8]
    assert back.predict(702, hist) == reg.predict(702, hist)
    with pytest.raises(FileNotFoundError):
        ForecasterRegistry.load(tmp_path, [999])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.lists(st.floats(-50, 50), min_size=1, max_size=1))
def test_gate_ranges(seed, x):
    rng = np.random.default_rng(seed)
    cell = LstmCell.random(4, 1, rng)
    h, c, cache = cell_forward(cell, x, rng.normal(size=4), rng.normal(size=4))
    for gate in (cache.i, cache.f, cache.o):
        assert np.all((gate >= 0) & (gate <= 1))
    assert np.all(np.abs(cache.g) <= 1) and np.all(np.abs(h) <= 1)
