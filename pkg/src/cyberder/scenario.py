"""Experiment inputs: head-power setpoint schedules, PV and load profiles, configs."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.signal import lfilter

from .control import ControlParams
from .cyber import DelayModel, Strategy

SECONDS_PER_HOUR = 3600
DEFAULT_HORIZON_S = 7200
START_OF_DAY_S = 12 * SECONDS_PER_HOUR  # horizon starts at 12:00


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Segment:
    start: int
    end: int
    kind: str  # "constant" | "ramp" | "step-train"
    params: tuple

    def value(self, t: float) -> float:
        if self.kind == "constant":
            return self.params[0]
        if self.kind == "ramp":
            v0, v1 = self.params
            return v0 + (v1 - v0) * (t - self.start) / (self.end - self.start)
        if self.kind == "step-train":
            period, levels = self.params[0], self.params[1:]
            return levels[min(int((t - self.start) // period), len(levels) - 1)]
        raise ScenarioError(f"unknown segment kind {self.kind!r}")


@dataclass(frozen=True)
class SetpointSchedule:
    segments: tuple
    horizon: int

    def __post_init__(self):
        if not self.segments:
            raise ScenarioError("schedule needs at least one segment")
        t = 0
        for seg in self.segments:
            if seg.start != t or seg.end <= seg.start:
                raise ScenarioError(f"segments must tile [0, {self.horizon}); bad segment at t={seg.start}")
            t = seg.end
        if t != self.horizon:
            raise ScenarioError(f"segments end at {t}, horizon is {self.horizon}")

    def segment_at(self, t: float) -> Segment:
        if not 0 <= t < self.horizon:
            raise ScenarioError(f"t={t} outside [0, {self.horizon})")
        for seg in self.segments:
            if seg.start <= t < seg.end:
                return seg
        raise AssertionError("unreachable")

    def value(self, t: float) -> float:
        return self.segment_at(t).value(t)

    def sample(self) -> np.ndarray:
        """Setpoint at every integer second of the horizon."""
        out = np.empty(self.horizon)
        for seg in self.segments:
            t = np.arange(seg.start, seg.end)
            if seg.kind == "constant":
                out[seg.start : seg.end] = seg.params[0]
            elif seg.kind == "ramp":
                v0, v1 = seg.params
                out[seg.start : seg.end] = v0 + (v1 - v0) * (t - seg.start) / (seg.end - seg.start)
            else:
                period, levels = seg.params[0], np.array(seg.params[1:])
                idx = np.minimum((t - seg.start) // period, len(levels) - 1)
                out[seg.start : seg.end] = levels[idx]
        return out

    def steady_mask(self, settle: int = 60) -> np.ndarray:
        """True at seconds inside constant blocks or step-train levels, at least
        ``settle`` seconds after the last setpoint change."""
        mask = np.zeros(self.horizon, dtype=bool)
        for seg in self.segments:
            if seg.kind == "constant":
                mask[seg.start + settle : seg.end] = True
            elif seg.kind == "step-train":
                period = seg.params[0]
                for k in range(seg.start, seg.end, period):
                    mask[k + settle : min(k + period, seg.end)] = True
        return mask

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "segments": [
                {"start": s.start, "end": s.end, "kind": s.kind, "params": list(s.params)} for s in self.segments
            ],
        }


def _levels(rng, count, lo, hi):
    return [float(x) for x in rng.uniform(lo, hi, count)]


def generate_setpoint_schedule(horizon: int = DEFAULT_HORIZON_S, seed: int = 0, lo: float = 0.0, hi: float = 1.0) -> SetpointSchedule:
    """Two-hour composite schedule: 5-minute dispatch levels, 1-minute AGC
    levels, ramps, and a 65-minute constant command.  Levels are drawn in
    [lo, hi] (p.u. head power).  Time beyond two hours is filled with more
    5-minute blocks.
    """
    if horizon < DEFAULT_HORIZON_S:
        raise ScenarioError(f"horizon must be at least {DEFAULT_HORIZON_S} s, got {horizon}")
    if not lo < hi:
        raise ScenarioError("need lo < hi")
    rng = np.random.default_rng(seed)
    segs = []
    ed = _levels(rng, 4, lo, hi)
    segs.append(Segment(0, 1200, "step-train", (300, *ed)))
    agc = _levels(rng, 10, lo, hi)
    segs.append(Segment(1200, 1800, "step-train", (60, *agc)))
    mid = _levels(rng, 1, lo, hi)[0]
    segs.append(Segment(1800, 2400, "ramp", (agc[-1], mid)))
    segs.append(Segment(2400, 6300, "constant", (mid,)))
    end = _levels(rng, 1, lo, hi)[0]
    segs.append(Segment(6300, 6900, "ramp", (mid, end)))
    segs.append(Segment(6900, 7200, "constant", (end,)))
    t = DEFAULT_HORIZON_S
    while t < horizon:
        stop = min(t + 1200, horizon)
        n = math.ceil((stop - t) / 300)
        segs.append(Segment(t, stop, "step-train", (300, *_levels(rng, n, lo, hi))))
        t = stop
    return SetpointSchedule(tuple(segs), horizon)


def random_setpoint_schedule(horizon: int, seed: int, lo: float, hi: float) -> SetpointSchedule:
    """Random sequence of constant blocks, step trains and ramps (training episodes)."""
    if horizon < 1 or not lo < hi:
        raise ScenarioError("need horizon >= 1 and lo < hi")
    rng = np.random.default_rng(seed)
    segs = []
    t = 0
    level = float(rng.uniform(lo, hi))
    while t < horizon:
        kind = rng.choice(["constant", "step-train", "ramp"])
        length = int(min(rng.integers(120, 900), horizon - t))
        if kind == "constant":
            level = float(rng.uniform(lo, hi))
            segs.append(Segment(t, t + length, "constant", (level,)))
        elif kind == "step-train":
            period = int(rng.choice([60, 300]))
            levels = _levels(rng, max(1, math.ceil(length / period)), lo, hi)
            level = levels[-1]
            segs.append(Segment(t, t + length, "step-train", (period, *levels)))
        else:
            new = float(rng.uniform(lo, hi))
            segs.append(Segment(t, t + length, "ramp", (level, new)))
            level = new
        t += length
    return SetpointSchedule(tuple(segs), horizon)


@dataclass
class Profile:
    samples: np.ndarray
    unit: str = "kW"

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ScenarioError("profile must be a non-empty 1-D series")
        if not np.all(np.isfinite(self.samples)):
            raise ScenarioError("profile contains non-finite values")

    @property
    def length(self) -> int:
        return self.samples.size

    def __getitem__(self, t):
        return self.samples[t]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t_s", "value"])
            for t, v in enumerate(self.samples):
                w.writerow([t, repr(float(v))])


def _smooth_noise(rng, n: int, tau: float) -> np.ndarray:
    """Unit-variance AR(1) noise with correlation time ``tau`` samples, filtered twice."""
    a = math.exp(-1.0 / tau)
    x = rng.standard_normal(n + int(5 * tau))
    x = lfilter([1.0 - a], [1.0, -a], x)
    x = lfilter([1.0 - a], [1.0, -a], x)
    x = x[int(5 * tau) :]
    return x / (np.std(x) + 1e-12)


def clear_sky(hours: np.ndarray, sunrise: float = 6.3, sunset: float = 19.9) -> np.ndarray:
    """Normalized clear-sky PV shape; zero outside daylight."""
    phase = (hours - sunrise) / (sunset - sunrise)
    inside = (phase > 0) & (phase < 1)
    out = np.zeros_like(hours, dtype=float)
    out[inside] = np.sin(np.pi * phase[inside]) ** 1.3
    return out


def cloud_attenuation(n: int, seed: int, floor: float = 0.2, tau: float = 240.0, cover: float = 1.0) -> np.ndarray:
    """Smooth attenuation factor in [floor, 1]; ``cover`` raises the threshold for cloud onset."""
    rng = np.random.default_rng(seed)
    z = _smooth_noise(rng, n, tau)
    cloudiness = np.clip((z - cover) / 1.5, 0.0, 1.0)
    return 1.0 - (1.0 - floor) * cloudiness


def generate_pv_profile(
    horizon: int,
    capacity: float,
    cloud_seed: int,
    start_s: int = START_OF_DAY_S,
    cover: float = 1.0,
) -> Profile:
    """Synthetic 1 s PV availability (kW): clear-sky curve times cloud attenuation."""
    if not capacity > 0:
        raise ScenarioError("capacity must be positive")
    hours = (start_s + np.arange(horizon)) / SECONDS_PER_HOUR
    values = capacity * clear_sky(hours) * cloud_attenuation(horizon, cloud_seed, cover=cover)
    return Profile(np.clip(values, 0.0, capacity), "kW")


def generate_load_profile(horizon: int, seed: int, start_s: int = START_OF_DAY_S, swing: float = 0.03) -> Profile:
    """Slowly varying load multiplier around 1 (dimensionless)."""
    rng = np.random.default_rng(seed)
    hours = (start_s + np.arange(horizon)) / SECONDS_PER_HOUR
    trend = 1.0 + swing * np.sin(2 * np.pi * (hours - 10.0) / 24.0)
    wander = 0.5 * swing * _smooth_noise(rng, horizon, 600.0)
    return Profile(trend + wander, "pu")


def load_profile_csv(path, unit: str = "kW", nonnegative: bool = True) -> Profile:
    """Read a ``t_s,value`` CSV with uniform 1 s steps."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ScenarioError(f"{path}: empty file")
    if [c.strip() for c in rows[0]] != ["t_s", "value"]:
        raise ScenarioError(f"{path}: header must be 't_s,value'")
    if len(rows) == 1:
        raise ScenarioError(f"{path}: no data rows")
    times, values = [], []
    for k, row in enumerate(rows[1:], start=2):
        if len(row) != 2:
            raise ScenarioError(f"{path}: row {k}: expected 2 columns")
        try:
            t, v = float(row[0]), float(row[1])
        except ValueError:
            raise ScenarioError(f"{path}: row {k}: non-numeric value {row!r}") from None
        if times and t != times[-1] + 1:
            raise ScenarioError(f"{path}: row {k}: timestamp {t:g} breaks the uniform 1 s step")
        if nonnegative and v < 0:
            raise ScenarioError(f"{path}: row {k}: negative value {v:g}")
        times.append(t)
        values.append(v)
    return Profile(np.array(values), unit)


# ---------------------------------------------------------------------------
# experiment configuration


@dataclass
class DelayConfig:
    mean_ms: float = 3.0
    std_ms: float = 0.8
    p_mix: float = 0.9
    rate_per_ms: float = 0.6651
    seed: int = 1
    d_star_ms: float = 6.675
    window: tuple = (1800, 5400)
    uplink: bool = True
    downlink: bool = False
    head_power: bool = False

    def model(self) -> DelayModel:
        return DelayModel(self.mean_ms, self.std_ms, self.p_mix, self.rate_per_ms, self.seed)


@dataclass
class ScheduleConfig:
    horizon: int = DEFAULT_HORIZON_S
    seed: int = 4
    # setpoint levels are drawn inside this fraction of the feasible head-power envelope
    envelope_lo: float = 0.3
    envelope_hi: float = 0.8


@dataclass
class ProfileConfig:
    pv_seed: int = 3
    pv_csv: str | None = None
    pv_cover: float = 2.5
    load_seed: int = 5
    load_csv: str | None = None
    load_scale: float = 1.0


@dataclass
class TrainingConfig:
    episodes: int = 3
    horizon: int = 3600
    seed: int = 100
    epochs: int = 20
    learning_rate: float = 3e-3
    batch: int = 64
    hidden_size: int = 16
    lookback: int = 10
    optimizer: str = "adam"
    v_center: float = 1.0
    v_spread: float = 0.05
    holdout_fraction: float = 0.2


@dataclass
class ExperimentConfig:
    feeder: str = "bundled:ieee37"
    control: ControlParams = field(default_factory=ControlParams)
    delay: DelayConfig = field(default_factory=DelayConfig)
    strategy: Strategy = Strategy.LSTM_FORECAST
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    profiles: ProfileConfig = field(default_factory=ProfileConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    lstm_dir: str = "models"
    output_dir: str = "out"
    violation_tol: float = 1e-3
    base_dir: str = "."

    def resolve(self, path: str | None) -> Path | None:
        """Paths in the config are relative to the config file's directory."""
        if path is None:
            return None
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["control"] = asdict(self.control)
        doc["strategy"] = self.strategy.value
        doc["delay"]["window"] = list(self.delay.window)
        doc.pop("base_dir")
        return doc


def _build(cls, doc, where):
    if doc is None:
        return cls()
    if not isinstance(doc, dict):
        raise ScenarioError(f"{where}: expected an object")
    names = {f.name for f in fields(cls)}
    unknown = set(doc) - names
    if unknown:
        raise ScenarioError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**doc)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{where}: {exc}") from exc


def config_from_dict(doc: dict, base_dir=".") -> ExperimentConfig:
    known = {f.name for f in fields(ExperimentConfig)} - {"base_dir"}
    unknown = set(doc) - known
    if unknown:
        raise ScenarioError(f"config: unknown keys {sorted(unknown)}")
    delay = _build(DelayConfig, doc.get("delay"), "delay")
    delay.window = tuple(delay.window)
    if len(delay.window) != 2 or not delay.window[0] <= delay.window[1]:
        raise ScenarioError("delay.window must be [start, end] seconds")
    cfg = ExperimentConfig(
        feeder=doc.get("feeder", "bundled:ieee37"),
        control=_build(ControlParams, doc.get("control"), "control"),
        delay=delay,
        strategy=Strategy.parse(doc.get("strategy", "lstm")),
        schedule=_build(ScheduleConfig, doc.get("schedule"), "schedule"),
        profiles=_build(ProfileConfig, doc.get("profiles"), "profiles"),
        training=_build(TrainingConfig, doc.get("training"), "training"),
        lstm_dir=doc.get("lstm_dir", "models"),
        output_dir=doc.get("output_dir", "out"),
        violation_tol=float(doc.get("violation_tol", 1e-3)),
        base_dir=str(base_dir),
    )
    if delay.window[1] > cfg.schedule.horizon:
        raise ScenarioError("delay.window extends past the schedule horizon")
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: parse error at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return config_from_dict(doc, base_dir=path.parent)
