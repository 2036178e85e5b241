"""Single-layer LSTM voltage forecaster, numpy only.

Each measured node gets its own network that maps the last ``lookback``
per-unit voltages to a one-step-ahead prediction.  Gradients are exact
backpropagation through time; :func:`bptt_gradients` returns gradients of
the batch mean squared error, and :func:`train` follows the RMSE loss by
the chain rule ``dRMSE = dMSE / (2 RMSE)``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

GATES = ("i", "f", "o", "C")
PARAM_NAMES = ("W_i", "W_f", "W_o", "W_C", "b_i", "b_f", "b_o", "b_C", "output_weights", "output_bias")


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"training loss became non-finite at epoch {epoch}")
        self.epoch = epoch


def sigmoid(x):
    # split form avoids overflow in exp for large |x|
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class LstmCell:
    W_i: np.ndarray
    W_f: np.ndarray
    W_o: np.ndarray
    W_C: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_o: np.ndarray
    b_C: np.ndarray

    def __post_init__(self):
        h = self.b_i.shape[0]
        cols = self.W_i.shape[1]
        if cols <= h:
            raise ValueError("weight matrices must have hidden_size + input_size columns")
        for g in GATES:
            w, b = getattr(self, f"W_{g}"), getattr(self, f"b_{g}")
            if w.shape != (h, cols) or b.shape != (h,):
                raise ValueError(f"gate {g}: inconsistent shapes {w.shape}, {b.shape}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"gate {g}: non-finite parameters")

    @property
    def hidden_size(self) -> int:
        return self.b_i.shape[0]

    @property
    def input_size(self) -> int:
        return self.W_i.shape[1] - self.hidden_size

    @classmethod
    def zeros(cls, hidden_size: int, input_size: int = 1) -> "LstmCell":
        cols = hidden_size + input_size
        return cls(
            *(np.zeros((hidden_size, cols)) for _ in GATES),
            *(np.zeros(hidden_size) for _ in GATES),
        )

    @classmethod
    def random(cls, hidden_size: int, input_size: int = 1, rng=None, forget_bias: float = 1.0) -> "LstmCell":
        rng = np.random.default_rng(rng)
        bound = 1.0 / np.sqrt(hidden_size)
        cols = hidden_size + input_size
        ws = [rng.uniform(-bound, bound, (hidden_size, cols)) for _ in GATES]
        bs = [np.zeros(hidden_size) for _ in GATES]
        bs[1] += forget_bias
        return cls(*ws, *bs)

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """Gate weights stacked in (i, f, o, C) order: (4H, H+I) and (4H,)."""
        w = np.concatenate([self.W_i, self.W_f, self.W_o, self.W_C], axis=0)
        b = np.concatenate([self.b_i, self.b_f, self.b_o, self.b_C])
        return w, b


@dataclass
class GateCache:
    hx: np.ndarray
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    g: np.ndarray
    c_prev: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray


def cell_forward(cell: LstmCell, x_t, h_prev, c_prev, stacked=None):
    """One LSTM step.  Works on single vectors or (batch, features) arrays.

    Returns ``(h_t, c_t, cache)``; ``cache`` keeps the gate activations for
    the backward pass.
    """
    x_t = np.asarray(x_t, dtype=float)
    h_prev = np.asarray(h_prev, dtype=float)
    c_prev = np.asarray(c_prev, dtype=float)
    hs = cell.hidden_size
    if x_t.shape[-1] != cell.input_size or h_prev.shape[-1] != hs or c_prev.shape != h_prev.shape:
        raise ValueError("cell_forward: shape mismatch")
    if not np.all(np.isfinite(x_t)):
        raise ValueError("cell_forward: non-finite input")
    w, b = stacked if stacked is not None else cell.stacked()
    hx = np.concatenate([h_prev, x_t], axis=-1)
    z = hx @ w.T + b
    i = sigmoid(z[..., :hs])
    f = sigmoid(z[..., hs : 2 * hs])
    o = sigmoid(z[..., 2 * hs : 3 * hs])
    g = np.tanh(z[..., 3 * hs :])
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    return h, c, GateCache(hx, i, f, o, g, c_prev, c, tanh_c)


@dataclass
class LstmNetwork:
    cell: LstmCell
    output_weights: np.ndarray
    output_bias: float
    lookback: int
    v_base: float = 1.0
    # fixed affine shift/scale applied after per-unit conversion
    v_center: float = 0.0
    v_spread: float = 1.0

    def __post_init__(self):
        if self.lookback < 1:
            raise ValueError("lookback must be at least 1")
        if self.v_base <= 0 or self.v_spread <= 0:
            raise ValueError("v_base and v_spread must be positive")
        self.output_weights = np.asarray(self.output_weights, dtype=float).reshape(-1)
        if self.output_weights.shape != (self.cell.hidden_size,):
            raise ValueError("output_weights must have hidden_size entries")
        self.output_bias = float(self.output_bias)

    @classmethod
    def init(
        cls,
        hidden_size: int = 16,
        lookback: int = 10,
        v_base: float = 1.0,
        seed: int = 0,
        v_center: float = 0.0,
        v_spread: float = 1.0,
    ) -> "LstmNetwork":
        rng = np.random.default_rng(seed)
        cell = LstmCell.random(hidden_size, 1, rng)
        bound = 1.0 / np.sqrt(hidden_size)
        return cls(cell, rng.uniform(-bound, bound, hidden_size), 0.0, lookback, v_base, v_center, v_spread)

    @property
    def hidden_size(self) -> int:
        return self.cell.hidden_size

    def normalize(self, v):
        return (np.asarray(v, dtype=float) / self.v_base - self.v_center) / self.v_spread

    def denormalize(self, x):
        return (np.asarray(x, dtype=float) * self.v_spread + self.v_center) * self.v_base

    def params(self) -> dict:
        out = {name: getattr(self.cell, name) for name in PARAM_NAMES[:8]}
        out["output_weights"] = self.output_weights
        out["output_bias"] = np.array(self.output_bias)
        return out

    def with_params(self, params: Mapping[str, np.ndarray]) -> "LstmNetwork":
        cell = LstmCell(*(np.array(params[name], dtype=float) for name in PARAM_NAMES[:8]))
        return LstmNetwork(
            cell,
            np.array(params["output_weights"]),
            float(params["output_bias"]),
            self.lookback,
            self.v_base,
            self.v_center,
            self.v_spread,
        )

    def to_dict(self) -> dict:
        doc = {
            "hidden_size": self.hidden_size,
            "input_size": self.cell.input_size,
            "lookback": self.lookback,
            "v_base": self.v_base,
            "v_center": self.v_center,
            "v_spread": self.v_spread,
        }
        for name, value in self.params().items():
            doc[name] = value.tolist()
        doc["output_bias"] = float(self.output_bias)
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping) -> "LstmNetwork":
        h, i = int(doc["hidden_size"]), int(doc["input_size"])
        arrays = {}
        for name in PARAM_NAMES[:4]:
            arrays[name] = np.array(doc[name], dtype=float).reshape(h, h + i)
        for name in PARAM_NAMES[4:8]:
            arrays[name] = np.array(doc[name], dtype=float).reshape(h)
        cell = LstmCell(*(arrays[n] for n in PARAM_NAMES[:8]))
        return cls(
            cell,
            np.array(doc["output_weights"], dtype=float),
            float(doc["output_bias"]),
            int(doc["lookback"]),
            float(doc["v_base"]),
            float(doc.get("v_center", 0.0)),
            float(doc.get("v_spread", 1.0)),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "LstmNetwork":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _forward_batch(net: LstmNetwork, windows: np.ndarray):
    stacked = net.cell.stacked()
    batch = windows.shape[0]
    h = np.zeros((batch, net.hidden_size))
    c = np.zeros_like(h)
    caches = []
    for t in range(windows.shape[1]):
        h, c, cache = cell_forward(net.cell, windows[:, t : t + 1], h, c, stacked)
        caches.append(cache)
    return h @ net.output_weights + net.output_bias, h, caches


def sequence_forward(net: LstmNetwork, window) -> float:
    """Prediction from one window of normalized voltages."""
    window = np.asarray(window, dtype=float)
    if window.shape != (net.lookback,):
        raise ValueError(f"window must have length {net.lookback}, got {window.shape}")
    y, _, _ = _forward_batch(net, window[None, :])
    return float(y[0])


def predict_batch(net: LstmNetwork, windows) -> np.ndarray:
    windows = np.asarray(windows, dtype=float)
    if windows.ndim != 2 or windows.shape[1] != net.lookback:
        raise ValueError(f"windows must be (batch, {net.lookback})")
    return _forward_batch(net, windows)[0]


def bptt_gradients(net: LstmNetwork, windows, targets) -> dict:
    """Exact gradients of ``mean((prediction - target)^2)`` over the batch."""
    windows = np.asarray(windows, dtype=float)
    targets = np.asarray(targets, dtype=float).reshape(-1)
    if windows.ndim != 2 or windows.shape[0] == 0 or windows.shape[1] != net.lookback:
        raise ValueError(f"windows must be a nonempty (batch, {net.lookback}) array")
    if targets.shape != (windows.shape[0],):
        raise ValueError("one target per window required")
    return _gradients(net, windows, targets)[0]


def _gradients(net: LstmNetwork, windows, targets):
    hs = net.hidden_size
    w, _ = net.cell.stacked()
    y, h_last, caches = _forward_batch(net, windows)
    err = y - targets
    mse = float(np.mean(err**2))
    dy = 2.0 * err / len(targets)

    grads = {"output_weights": h_last.T @ dy, "output_bias": np.array(dy.sum())}
    dw = np.zeros_like(w)
    db = np.zeros(w.shape[0])
    dh = dy[:, None] * net.output_weights[None, :]
    dc = np.zeros_like(dh)
    for cache in reversed(caches):
        do = dh * cache.tanh_c
        dc = dc + dh * cache.o * (1.0 - cache.tanh_c**2)
        di = dc * cache.g
        dg = dc * cache.i
        df = dc * cache.c_prev
        dz = np.concatenate(
            [
                di * cache.i * (1.0 - cache.i),
                df * cache.f * (1.0 - cache.f),
                do * cache.o * (1.0 - cache.o),
                dg * (1.0 - cache.g**2),
            ],
            axis=1,
        )
        dw += dz.T @ cache.hx
        db += dz.sum(axis=0)
        dh = (dz @ w)[:, :hs]
        dc = dc * cache.f
    for k, gate in enumerate(GATES):
        grads[f"W_{gate}"] = dw[k * hs : (k + 1) * hs]
        grads[f"b_{gate}"] = db[k * hs : (k + 1) * hs]
    return grads, mse


@dataclass
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 1e-2
    batch: int = 64
    seed: int = 0
    clip_norm: float = 1.0
    optimizer: str = "adam"
    hidden_size: int = 16

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch < 1:
            raise ValueError("batch must be at least 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainResult:
    network: LstmNetwork
    loss_history: list = field(default_factory=list)  # training RMSE after each epoch

    @property
    def final_rmse(self) -> float:
        return self.loss_history[-1]


def make_windows(series, lookback: int) -> tuple[np.ndarray, np.ndarray]:
    """Stride-1 sliding windows and their next-step targets."""
    series = np.asarray(series, dtype=float)
    if series.ndim != 1 or len(series) <= lookback:
        raise ValueError(f"series of length {len(series)} is too short for lookback {lookback}")
    windows = np.lib.stride_tricks.sliding_window_view(series[:-1], lookback)
    return np.ascontiguousarray(windows), series[lookback:].copy()


def train(net: LstmNetwork, series, cfg: TrainConfig) -> TrainResult:
    """Fit ``net`` to one-step-ahead prediction on raw voltage series.

    ``series`` is a 1-D array or a list of 1-D arrays (separate episodes;
    windows never straddle two episodes).  Values are normalized with the
    network's ``v_base`` before training.
    """
    if isinstance(series, np.ndarray) and series.ndim == 1:
        series = [series]
    parts = [make_windows(net.normalize(s), net.lookback) for s in series]
    windows = np.concatenate([p[0] for p in parts])
    targets = np.concatenate([p[1] for p in parts])

    rng = np.random.default_rng(cfg.seed)
    params = {k: np.array(v, dtype=float) for k, v in net.params().items()}
    # start the head at the mean target so early epochs are not spent learning the offset
    params["output_bias"] = np.array(float(np.mean(targets)))
    net = net.with_params(params)
    moments = {k: (np.zeros_like(v), np.zeros_like(v)) for k, v in params.items()}
    beta1, beta2, adam_eps = 0.9, 0.999, 1e-8
    step = 0
    history = []
    n = len(targets)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch):
            idx = order[start : start + cfg.batch]
            grads, mse = _gradients(net, windows[idx], targets[idx])
            rmse = np.sqrt(mse)
            scale = 1.0 / (2.0 * rmse) if rmse > 0 else 0.0
            grads = {k: g * scale for k, g in grads.items()}
            norm = np.sqrt(sum(float(np.sum(g**2)) for g in grads.values()))
            if not np.isfinite(norm):
                raise TrainingDiverged(epoch)
            if norm > cfg.clip_norm:
                grads = {k: g * (cfg.clip_norm / norm) for k, g in grads.items()}
            step += 1
            if cfg.optimizer == "sgd":
                for k in params:
                    params[k] = params[k] - cfg.learning_rate * grads[k]
            else:
                for k in params:
                    m, v = moments[k]
                    m[...] = beta1 * m + (1 - beta1) * grads[k]
                    v[...] = beta2 * v + (1 - beta2) * grads[k] ** 2
                    m_hat = m / (1 - beta1**step)
                    v_hat = v / (1 - beta2**step)
                    params[k] = params[k] - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + adam_eps)
            net = net.with_params(params)
        epoch_rmse = float(np.sqrt(np.mean((predict_batch(net, windows) - targets) ** 2)))
        if not np.isfinite(epoch_rmse):
            raise TrainingDiverged(epoch)
        history.append(epoch_rmse)
    return TrainResult(net, history)


def predict_voltage(net: LstmNetwork, history) -> float:
    """Normalize, run the network, de-normalize.  ``history`` is in raw units."""
    history = np.asarray(history, dtype=float)
    if history.shape != (net.lookback,):
        raise ValueError(f"history must have length {net.lookback}, got {history.shape}")
    value = float(net.denormalize(sequence_forward(net, net.normalize(history))))
    if not np.isfinite(value):
        raise ValueError("forecast is not finite")
    return value


def one_step_rmse(net: LstmNetwork, series) -> float:
    """RMSE of one-step predictions over a raw series (raw units)."""
    windows, targets = make_windows(np.asarray(series, dtype=float), net.lookback)
    pred = net.denormalize(predict_batch(net, net.normalize(windows)))
    return float(np.sqrt(np.mean((pred - targets) ** 2)))


class ForecasterRegistry:
    """Maps node ids to their trained networks."""

    def __init__(self, networks: Mapping | None = None):
        self._nets = dict(networks or {})

    def __contains__(self, node) -> bool:
        return node in self._nets

    def __len__(self) -> int:
        return len(self._nets)

    def __getitem__(self, node) -> LstmNetwork:
        try:
            return self._nets[node]
        except KeyError:
            raise KeyError(f"no forecaster registered for node {node!r}") from None

    def nodes(self) -> list:
        return list(self._nets)

    def register(self, node, net: LstmNetwork) -> None:
        self._nets[node] = net

    def predict(self, node, history: Sequence[float]) -> float:
        return predict_voltage(self[node], history)

    def save(self, directory) -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for node, net in self._nets.items():
            path = directory / f"node_{node}.json"
            net.save(path)
            paths.append(path)
        return paths

    @classmethod
    def load(cls, directory, nodes: Sequence) -> "ForecasterRegistry":
        directory = Path(directory)
        nets = {}
        for node in nodes:
            path = directory / f"node_{node}.json"
            if not path.exists():
                raise FileNotFoundError(f"missing forecaster model for node {node!r}: {path}")
            nets[node] = LstmNetwork.load(path)
        return cls(nets)
