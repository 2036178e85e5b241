import csv
from collections import deque

import numpy as np
import pytest
from scipy import optimize

from cyberder.cyber import (
    SKIP,
    DelayModel,
    MessageKind,
    MessageLog,
    Strategy,
    calibrate_threshold,
    classify_arrivals,
    resolve_missing,
    sample_delays,
)
from cyberder.forecast import ForecasterRegistry, LstmNetwork, TrainConfig, train

DEFAULT = DelayModel(seed=1)


def analytic_quantile(model, rate):
    return optimize.brentq(lambda x: model.sf(x) - rate, 0.0, 50.0, xtol=1e-12)


def test_degenerate_delay():
    model = DelayModel(mean_ms=5.0, std_ms=1e-9, p_mix=1.0)
    d = sample_delays(model, 1000, model.rng())
    assert np.allclose(d, 5.0, atol=1e-7)


def test_mean_matches_mixture_moment():
    d = sample_delays(DEFAULT, 100_000, DEFAULT.rng())
    assert abs(d.mean() - DEFAULT.mean()) <= 0.02 * DEFAULT.mean()


def test_samples_nonnegative_after_redraw():
    model = DelayModel(mean_ms=0.1, std_ms=1.0)
    assert (sample_delays(model, 10_000, model.rng()) >= 0).all()


def test_sampling_deterministic():
    a = sample_delays(DEFAULT, 500, DEFAULT.rng())
    b = sample_delays(DEFAULT, 500, DEFAULT.rng())
    assert np.array_equal(a, b)


@pytest.mark.parametrize("kw", [dict(std_ms=0.0), dict(rate_per_ms=-1.0), dict(p_mix=1.5)])
def test_model_validation(kw):
    with pytest.raises(ValueError):
        DelayModel(**kw)


def test_calibration_matches_analytic_quantile():
    d = calibrate_threshold(DEFAULT, 0.01, 1_000_000)
    assert d == pytest.approx(analytic_quantile(DEFAULT, 0.01), rel=0.01)


def test_calibration_seed_stability():
    a = calibrate_threshold(DelayModel(seed=11), 0.01, 1_000_000)
    b = calibrate_threshold(DelayModel(seed=12), 0.01, 1_000_000)
    assert abs(a - b) <= 0.01 * a


def test_calibration_monotone():
    rates = [0.001, 0.01, 0.05, 0.1, 0.5]
    d = [calibrate_threshold(DEFAULT, r, 200_000) for r in rates]
    assert all(x >= y for x, y in zip(d, d[1:]))


def test_calibration_high_loss_limit():
    samples = 100_000
    d = calibrate_threshold(DEFAULT, 0.999, samples)
    draws = np.sort(sample_delays(DEFAULT, samples, DEFAULT.rng(offset=1)))
    assert d <= draws[int(0.01 * samples)]


def test_calibration_degenerate_returns_midpoint():
    model = DelayModel(mean_ms=5.0, std_ms=1e-9, p_mix=1.0)
    assert calibrate_threshold(model, 0.5, 1000) == pytest.approx(5.0, abs=1e-7)


@pytest.mark.parametrize("rate", [0.0, 1.0, -0.1])
def test_calibration_rate_range(rate):
    with pytest.raises(ValueError):
        calibrate_threshold(DEFAULT, rate, 100)


def test_window_inactive_all_on_time():
    recs = classify_arrivals(3, [1, 2, 3], DEFAULT, 0.0, False, DEFAULT.rng())
    assert len(recs) == 3 and all(r.on_time for r in recs)


def test_zero_deadline_all_late():
    recs = classify_arrivals(3, list(range(14)), DEFAULT, 0.0, True, DEFAULT.rng())
    assert len(recs) == 14 and not any(r.on_time for r in recs)


def test_late_fraction_at_99th_percentile():
    d_star = analytic_quantile(DEFAULT, 0.01)
    rng = DEFAULT.rng(offset=5)
    nodes = list(range(14))
    late = total = 0
    for k in range(100_000 // 10):
        # batching ten iterations per call keeps the test fast; records stay one per message
        recs = classify_arrivals(k, nodes * 10, DEFAULT, d_star, True, rng)
        late += sum(not r.on_time for r in recs)
        total += len(recs)
    assert total == 100_000 * 14
    assert abs(late / total - 0.01) <= 0.002


def test_resolve_previous():
    assert resolve_missing(Strategy.PREVIOUS_VALUE, 5, [1.0, 0.99, 0.981]) == 0.981
    assert resolve_missing("previous", 5, deque([0.97])) == 0.97
    with pytest.raises(ValueError):
        resolve_missing(Strategy.PREVIOUS_VALUE, 5, [])


def test_resolve_skip():
    assert resolve_missing(Strategy.SKIP_UPDATE, 5, [1.0]) is SKIP


@pytest.fixture(scope="module")
def constant_registry():
    net = LstmNetwork.init(hidden_size=6, lookback=5, seed=0, v_center=1.0, v_spread=0.05)
    result = train(net, np.full(120, 1.0), TrainConfig(epochs=20, batch=32))
    return ForecasterRegistry({7: result.network})


def test_resolve_lstm_constant(constant_registry):
    v = resolve_missing(Strategy.LSTM_FORECAST, 7, deque([1.0] * 8), constant_registry)
    assert abs(v - 1.0) <= 1e-3


def test_resolve_lstm_unit_scale(constant_registry):
    net = constant_registry[7]
    scaled = ForecasterRegistry({7: LstmNetwork(net.cell, net.output_weights, net.output_bias, net.lookback, 4.8, 1.0, 0.05)})
    a = resolve_missing(Strategy.LSTM_FORECAST, 7, [1.0] * 5, constant_registry)
    b = resolve_missing(Strategy.LSTM_FORECAST, 7, [1.0] * 5, scaled, unit_scale=4.8)
    assert b == pytest.approx(a, rel=1e-12)


def test_resolve_lstm_fallbacks(constant_registry, caplog):
    caplog.set_level("INFO")
    assert resolve_missing(Strategy.LSTM_FORECAST, 7, [0.99, 0.98], constant_registry) == 0.98
    assert resolve_missing(Strategy.LSTM_FORECAST, 8, [0.99] * 6, constant_registry) == 0.99
    assert resolve_missing(Strategy.LSTM_FORECAST, 8, [0.99] * 6, None) == 0.99
    assert "previous value" in caplog.text


def test_strategy_parse():
    assert Strategy.parse("PreviousValue") is Strategy.PREVIOUS_VALUE
    assert Strategy.parse("lstm-forecast") is Strategy.LSTM_FORECAST
    with pytest.raises(ValueError):
        Strategy.parse("guess")


def test_message_log_csv(tmp_path):
    log = MessageLog()
    for r in classify_arrivals(0, [702, 704], DEFAULT, 3.0, True, DEFAULT.rng()):
        log.add(r, "previous" if not r.on_time else "")
    log.extend(1, MessageKind.DOWNLINK_DUALS, [18], [1.25], [False], ["previous"])
    path = tmp_path / "messages.csv"
    log.write_csv(path)
    rows = list(csv.DictReader(open(path)))
    assert len(rows) == len(log) == 3
    assert list(rows[0]) == ["iteration", "kind", "node", "delay_ms", "on_time", "strategy_action"]
    assert rows[2]["kind"] == "downlink-duals" and float(rows[2]["delay_ms"]) == 1.25
    assert sum(r["on_time"] == "0" for r in rows) == log.late_count()
