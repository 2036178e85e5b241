"""Communication layer: stochastic delays, the deadline, and late-message handling.

Delays follow a two-component mixture: with probability ``p_mix`` a
Gaussian latency, otherwise the same Gaussian plus an exponential tail
(an exponentially modified Gaussian).  Negative draws are redrawn.  A
message is on time iff its delay does not exceed the deadline ``d_star``;
late messages are treated as lost for that control iteration.
"""

from __future__ import annotations

import csv
import enum
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

log = logging.getLogger(__name__)

# calibrated so that 1% of draws exceed 6.675 ms
DEFAULT_MEAN_MS = 3.0
DEFAULT_STD_MS = 0.8
DEFAULT_P_MIX = 0.9
DEFAULT_RATE_PER_MS = 0.6651
REFERENCE_D_STAR_MS = 6.675


class Strategy(str, enum.Enum):
    PREVIOUS_VALUE = "previous"
    SKIP_UPDATE = "skip"
    LSTM_FORECAST = "lstm"

    @classmethod
    def parse(cls, value) -> "Strategy":
        if isinstance(value, cls):
            return value
        aliases = {
            "previousvalue": cls.PREVIOUS_VALUE,
            "previous": cls.PREVIOUS_VALUE,
            "skipupdate": cls.SKIP_UPDATE,
            "skip": cls.SKIP_UPDATE,
            "lstmforecast": cls.LSTM_FORECAST,
            "lstm": cls.LSTM_FORECAST,
        }
        key = str(value).replace("_", "").replace("-", "").lower()
        if key not in aliases:
            raise ValueError(f"unknown strategy {value!r}")
        return aliases[key]


class MessageKind(str, enum.Enum):
    UPLINK_VOLTAGE = "uplink-voltage"
    UPLINK_HEADPOWER = "uplink-headpower"
    DOWNLINK_DUALS = "downlink-duals"


@dataclass(frozen=True)
class DelayModel:
    mean_ms: float = DEFAULT_MEAN_MS
    std_ms: float = DEFAULT_STD_MS
    p_mix: float = DEFAULT_P_MIX
    rate_per_ms: float = DEFAULT_RATE_PER_MS
    seed: int = 0

    def __post_init__(self):
        if not self.std_ms > 0:
            raise ValueError("std_ms must be positive")
        if not self.rate_per_ms > 0:
            raise ValueError("rate_per_ms must be positive")
        if not 0.0 <= self.p_mix <= 1.0:
            raise ValueError("p_mix must lie in [0, 1]")

    def rng(self, offset: int = 0) -> np.random.Generator:
        return np.random.default_rng([self.seed, offset])

    def mean(self) -> float:
        """Mixture mean, ignoring the (negligible) effect of redrawing negatives."""
        return self.mean_ms + (1.0 - self.p_mix) / self.rate_per_ms

    def sf(self, x) -> np.ndarray:
        """Survival function P(delay > x) of the untruncated mixture."""
        body = stats.norm(self.mean_ms, self.std_ms).sf(x)
        tail = stats.exponnorm(
            K=1.0 / (self.std_ms * self.rate_per_ms), loc=self.mean_ms, scale=self.std_ms
        ).sf(x)
        return self.p_mix * body + (1.0 - self.p_mix) * tail


def sample_delays(model: DelayModel, size: int, rng: np.random.Generator) -> np.ndarray:
    """``size`` delays in ms from ``rng``; negative draws are redrawn."""
    out = np.empty(size)
    todo = np.arange(size)
    while todo.size:
        body = rng.normal(model.mean_ms, model.std_ms, todo.size)
        tail = rng.exponential(1.0 / model.rate_per_ms, todo.size)
        use_tail = rng.random(todo.size) >= model.p_mix
        draw = body + np.where(use_tail, tail, 0.0)
        ok = draw >= 0.0
        out[todo[ok]] = draw[ok]
        todo = todo[~ok]
    return out


def sample_delay(model: DelayModel, rng: np.random.Generator | None = None) -> float:
    return float(sample_delays(model, 1, rng if rng is not None else model.rng())[0])


def calibrate_threshold(model: DelayModel, target_loss_rate: float, samples: int = 1_000_000) -> float:
    """Deadline d* such that a fraction ``target_loss_rate`` of delays exceed it.

    Empirical quantile of ``samples`` seeded draws.  When the quantile is not
    unique (the order statistic falls exactly between two samples) the
    midpoint is returned.
    """
    if not 0.0 < target_loss_rate < 1.0:
        raise ValueError("target_loss_rate must lie in (0, 1)")
    draws = np.sort(sample_delays(model, samples, model.rng(offset=1)))
    k = (1.0 - target_loss_rate) * samples
    k_int = int(round(k))
    if abs(k - k_int) < 1e-9 and 0 < k_int < samples:
        lo, hi = draws[k_int - 1], draws[k_int]
        if lo != hi:
            log.debug("quantile not unique on [%g, %g]; using the midpoint", lo, hi)
        return float(0.5 * (lo + hi))
    return float(draws[min(int(np.ceil(k)) - 1, samples - 1)])


@dataclass(frozen=True)
class MessageRecord:
    iteration: int
    kind: MessageKind
    node: object
    delay_ms: float
    on_time: bool
    strategy_action: str = ""


def classify_arrivals(
    iteration: int,
    nodes: Sequence,
    model: DelayModel,
    d_star: float,
    window_active: bool,
    rng: np.random.Generator,
    kind: MessageKind = MessageKind.UPLINK_VOLTAGE,
) -> list[MessageRecord]:
    """One record per expected message.  Outside the delay window every
    message arrives instantly."""
    if not window_active:
        return [MessageRecord(iteration, kind, n, 0.0, True) for n in nodes]
    delays = sample_delays(model, len(nodes), rng)
    return [MessageRecord(iteration, kind, n, float(dl), bool(dl <= d_star)) for n, dl in zip(nodes, delays)]


SKIP = object()  # resolve_missing result: freeze this node's duals


def resolve_missing(strategy: Strategy, node, history: Sequence[float], forecasters=None, unit_scale: float = 1.0):
    """Stand-in value for a late voltage message, or :data:`SKIP`.

    ``history`` holds the node's resolved voltages, most recent last.  The
    forecaster sees ``history * unit_scale`` (e.g. p.u. to kV) and its output
    is scaled back.  The LSTM strategy falls back to the previous value when
    no model is registered or the history is shorter than the look-back.
    """
    strategy = Strategy.parse(strategy)
    if strategy is Strategy.SKIP_UPDATE:
        return SKIP
    if strategy is Strategy.LSTM_FORECAST:
        if forecasters is not None and node in forecasters:
            net = forecasters[node]
            if len(history) >= net.lookback:
                window = np.asarray(list(history)[-net.lookback :], dtype=float) * unit_scale
                return forecasters.predict(node, window) / unit_scale
            log.info("node %r: %d samples of history, need %d; using previous value", node, len(history), net.lookback)
        else:
            log.info("node %r: no forecaster registered; using previous value", node)
    if len(history) == 0:
        raise ValueError(f"node {node!r}: no previous measurement available")
    return float(history[-1])


@dataclass
class MessageLog:
    """Columnar message log written as ``iteration,kind,node,delay_ms,on_time,strategy_action``."""

    iteration: list = field(default_factory=list)
    kind: list = field(default_factory=list)
    node: list = field(default_factory=list)
    delay_ms: list = field(default_factory=list)
    on_time: list = field(default_factory=list)
    action: list = field(default_factory=list)

    def add(self, record: MessageRecord, action: str = "") -> None:
        self.iteration.append(record.iteration)
        self.kind.append(record.kind.value)
        self.node.append(record.node)
        self.delay_ms.append(record.delay_ms)
        self.on_time.append(record.on_time)
        self.action.append(action or record.strategy_action)

    def extend(self, iteration: int, kind: MessageKind, nodes, delays, on_time, actions) -> None:
        n = len(nodes)
        self.iteration.extend([iteration] * n)
        self.kind.extend([kind.value] * n)
        self.node.extend(nodes)
        self.delay_ms.extend(delays)
        self.on_time.extend(on_time)
        self.action.extend(actions)

    def __len__(self) -> int:
        return len(self.iteration)

    def late_count(self) -> int:
        return sum(1 for ok in self.on_time if not ok)

    def write_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "kind", "node", "delay_ms", "on_time", "strategy_action"])
            for row in zip(self.iteration, self.kind, self.node, self.delay_ms, self.on_time, self.action):
                it, kind, node, delay, ok, action = row
                w.writerow([it, kind, node, f"{delay:.17g}", int(ok), action])
