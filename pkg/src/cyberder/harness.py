"""Closed-loop co-simulation of the feeder, the DERMS, the DER agents and the network.

One control iteration per simulated second.  Each iteration:

1. solve the nonlinear power flow at the dispatched setpoints (measurements)
2. validate uplink arrivals against the deadline
3. resolve late voltages with the active strategy
4. dual update at the DERMS (skipped nodes keep their multipliers)
5. broadcast duals to the agents (downlink losses keep stale duals)
6. each agent takes a projected gradient step with its current availability
7. record metrics
"""

from __future__ import annotations

import json
import logging
import time
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import control
from .control import ControlParams, DualState
from .cyber import (
    SKIP,
    DelayModel,
    MessageKind,
    MessageLog,
    Strategy,
    calibrate_threshold,
    resolve_missing,
    sample_delays,
)
from .feeder import FeederModel, load_feeder, solve_power_flow
from .forecast import ForecasterRegistry, LstmNetwork, TrainConfig, TrainingDiverged, one_step_rmse, train
from .linmodel import LinearGridModel, linearize_analytic
from .scenario import (
    ExperimentConfig,
    SetpointSchedule,
    generate_load_profile,
    generate_pv_profile,
    generate_setpoint_schedule,
    load_profile_csv,
    random_setpoint_schedule,
)

log = logging.getLogger(__name__)

PV_REFERENCE_KW = 50.0
RESULTS_HEADER = ["t_s", "p0_kw", "p0_set_kw", "tracking_err_kw", "v_min_pu", "v_max_pu", "dual_norm", "late_msgs"]


class SimulationError(RuntimeError):
    pass


@dataclass
class ScenarioInputs:
    """Time series driving one run, all per-unit, indexed by second."""

    setpoint: np.ndarray  # (T,)
    p_av: np.ndarray  # (T, n_der)
    load_mult: np.ndarray  # (T,)
    schedule: SetpointSchedule | None = None

    @property
    def horizon(self) -> int:
        return self.setpoint.shape[0]


@dataclass
class SimulationState:
    t_k: int
    duals: DualState
    p: np.ndarray
    q: np.ndarray
    agent_duals: np.ndarray  # (n_der, 2M + 2) duals as last received by each agent
    history: list  # per measured node: deque of resolved voltages (p.u.)
    v_prev: np.ndarray | None = None  # warm start for the power flow


@dataclass
class RunMetrics:
    tracking_rmse: float  # kW
    tracking_error_series: np.ndarray  # kW, |P0 - P0_set| per iteration
    voltage_violation_count: int  # (iteration, node) pairs outside limits +- violation_tol
    max_excursion: float  # p.u., largest distance outside [v_min, v_max] (0 if none)
    forecast_rmse: float | None  # p.u., over LSTM-resolved messages
    late_message_count: int
    iterations: int = 0
    window_tracking_rmse: float = 0.0  # kW, restricted to the delay window

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["tracking_error_series"] = [float(x) for x in self.tracking_error_series]
        return doc


@dataclass
class Recorder:
    t: list = field(default_factory=list)
    p0: list = field(default_factory=list)
    p0_set: list = field(default_factory=list)
    v_min: list = field(default_factory=list)
    v_max: list = field(default_factory=list)
    dual_norm: list = field(default_factory=list)
    late: list = field(default_factory=list)
    measured_v: list = field(default_factory=list)
    violations: int = 0
    excursion: float = 0.0
    forecast_err: list = field(default_factory=list)
    events: list | None = None


class Simulator:
    """Holds the static pieces of a run; :meth:`step` advances one iteration."""

    def __init__(
        self,
        feeder: FeederModel,
        model: LinearGridModel,
        params: ControlParams,
        strategy: Strategy = Strategy.PREVIOUS_VALUE,
        delay: DelayModel | None = None,
        d_star: float = np.inf,
        window: tuple = (0, 0),
        uplink: bool = True,
        downlink: bool = False,
        head_power_delays: bool = False,
        forecasters: ForecasterRegistry | None = None,
        violation_tol: float = 1e-3,
        record_events: bool = False,
    ):
        self.feeder = feeder
        self.model = model
        self.params = params
        self.strategy = Strategy.parse(strategy)
        self.delay = delay or DelayModel()
        self.d_star = d_star
        self.window = window
        self.uplink = uplink
        self.downlink = downlink
        self.head_power_delays = head_power_delays
        self.forecasters = forecasters
        self.violation_tol = violation_tol
        self.der_nodes = list(feeder.der_capacity)
        self.measured = list(feeder.measured_nodes)
        if not self.measured:
            raise SimulationError("feeder has no measured nodes")
        self.der_pos = feeder.positions(self.der_nodes)
        self.meas_pos = feeder.positions(self.measured)
        self.s_max = np.array([feeder.der_capacity[n] for n in self.der_nodes])
        self.base_load = feeder.load_vector()
        self.lookback = 10
        if forecasters is not None and len(forecasters):
            self.lookback = max(forecasters[n].lookback for n in forecasters.nodes())
        self.rng = self.delay.rng()
        self.log = MessageLog()
        self.rec = Recorder(events=[] if record_events else None)
        self._last_p0 = None

    def initial_state(self, inputs: ScenarioInputs | None = None) -> SimulationState:
        """Zero duals and a cold start at zero output, or at the available
        power (MPPT) when ``inputs`` is given."""
        m = len(self.measured)
        duals = DualState.zeros(m)
        n_der = len(self.der_nodes)
        p0 = np.minimum(inputs.p_av[0], self.s_max) if inputs is not None else np.zeros(n_der)
        return SimulationState(
            t_k=0,
            duals=duals,
            p=p0.copy(),
            q=np.zeros(n_der),
            agent_duals=np.tile(duals.as_vector(), (n_der, 1)),
            history=[deque(maxlen=max(self.lookback, 1)) for _ in range(m)],
        )

    def window_active(self, t: int) -> bool:
        return self.window[0] <= t < self.window[1]

    def _event(self, name: str) -> None:
        if self.rec.events is not None:
            self.rec.events.append(name)

    def _arrivals(self, t: int, kind: MessageKind, nodes: Sequence) -> tuple[np.ndarray, np.ndarray]:
        n = len(nodes)
        if not self.window_active(t):
            return np.zeros(n), np.ones(n, dtype=bool)
        delays = sample_delays(self.delay, n, self.rng)
        return delays, delays <= self.d_star

    def step(self, state: SimulationState, inputs: ScenarioInputs) -> SimulationState:
        t = state.t_k
        p_av = inputs.p_av[t]
        p0_set = inputs.setpoint[t]

        # (1) physical grid at the currently dispatched setpoints
        self._event("measure")
        s_inj = -self.base_load * inputs.load_mult[t]
        s_inj[self.der_pos] += state.p + 1j * state.q
        sol = solve_power_flow(self.feeder, s_inj, v_init=state.v_prev)
        if not sol.converged:
            raise SimulationError(f"power flow diverged at iteration {t}")
        v_all = sol.magnitudes
        v_true = v_all[self.meas_pos]
        p0_true = sol.head_power.real

        # (2) validate uplink arrivals within d*
        self._event("validate")
        uplink_on = self.uplink and self.window_active(t)
        if uplink_on:
            delays, on_time = self._arrivals(t, MessageKind.UPLINK_VOLTAGE, self.measured)
        else:
            delays, on_time = np.zeros(len(self.measured)), np.ones(len(self.measured), dtype=bool)
        p0_meas = p0_true
        if self.head_power_delays and self.window_active(t):
            hp_delay, hp_ok = self._arrivals(t, MessageKind.UPLINK_HEADPOWER, [self.feeder.head])
            if not hp_ok[0] and self._last_p0 is not None:
                p0_meas = self._last_p0
            self.log.extend(t, MessageKind.UPLINK_HEADPOWER, [self.feeder.head], hp_delay.tolist(), hp_ok.tolist(), ["" if hp_ok[0] else "previous"])
        self._last_p0 = p0_meas

        # (3) resolve late voltages
        resolved = v_true.copy()
        frozen = np.zeros(len(self.measured), dtype=bool)
        actions = [""] * len(self.measured)
        late = np.flatnonzero(~on_time)
        if late.size:
            self._event("estimate")
        for k in late:
            node = self.measured[k]
            value = resolve_missing(self.strategy, node, state.history[k], self.forecasters, self.feeder.base_kv)
            if value is SKIP:
                frozen[k] = True
                actions[k] = "skip"
                resolved[k] = state.history[k][-1] if state.history[k] else v_true[k]
            else:
                resolved[k] = value
                actions[k] = self.strategy.value
                if self.strategy is Strategy.LSTM_FORECAST:
                    self.rec.forecast_err.append(value - v_true[k])
        for k in range(len(self.measured)):
            state.history[k].append(resolved[k])
        self.log.extend(t, MessageKind.UPLINK_VOLTAGE, self.measured, delays.tolist(), on_time.tolist(), actions)

        # (4) dual update at the DERMS
        self._event("dual_update")
        duals = control.dual_update(state.duals, resolved, p0_meas, p0_set, self.params, frozen if frozen.any() else None)

        # (5) broadcast
        self._event("broadcast")
        new_vec = duals.as_vector()
        agent_duals = state.agent_duals
        skip_primal = np.zeros(len(self.der_nodes), dtype=bool)
        if self.downlink and self.window_active(t):
            dl_delay, dl_ok = self._arrivals(t, MessageKind.DOWNLINK_DUALS, self.der_nodes)
            agent_duals = agent_duals.copy()
            agent_duals[dl_ok] = new_vec
            if self.strategy is Strategy.SKIP_UPDATE:
                skip_primal = ~dl_ok
            dl_actions = ["" if ok else ("skip" if self.strategy is Strategy.SKIP_UPDATE else "previous") for ok in dl_ok]
            self.log.extend(t, MessageKind.DOWNLINK_DUALS, self.der_nodes, dl_delay.tolist(), dl_ok.tolist(), dl_actions)
            uniform = False
        else:
            agent_duals = np.broadcast_to(new_vec, agent_duals.shape)
            uniform = True

        # (6) local primal steps at every agent
        self._event("primal_update")
        if uniform:
            d_p, d_q = control.lagrangian_gradient_all(
                state.p, state.q, p_av, duals, self.model, self.der_pos, self.meas_pos, self.params
            )
        else:
            d_p, d_q = self._gradient_per_agent(state, p_av, agent_duals)
        p_new, q_new = control.primal_update_all(state.p, state.q, p_av, self.s_max, d_p, d_q, self.params)
        p_new = np.where(skip_primal, np.minimum(state.p, p_av), p_new)
        q_new = np.where(skip_primal, state.q, q_new)
        if skip_primal.any():
            # a held setpoint must still respect the current availability
            p_new, q_new = control.project_capability_all(p_new, q_new, p_av, self.s_max)
        self._event("dispatch")

        # (7) metrics
        rec = self.rec
        rec.t.append(t)
        rec.p0.append(p0_true)
        rec.p0_set.append(p0_set)
        rec.v_min.append(float(v_all.min()))
        rec.v_max.append(float(v_all.max()))
        rec.dual_norm.append(duals.norm())
        rec.late.append(int(late.size))
        rec.measured_v.append(v_true)
        below = self.params.v_min - v_all
        above = v_all - self.params.v_max
        worst = max(float(below.max()), float(above.max()), 0.0)
        rec.excursion = max(rec.excursion, worst)
        rec.violations += int(np.sum(below > self.violation_tol) + np.sum(above > self.violation_tol))

        return SimulationState(
            t_k=t + 1,
            duals=duals,
            p=p_new,
            q=q_new,
            agent_duals=np.array(agent_duals),
            history=state.history,
            v_prev=sol.voltages,
        )

    def _gradient_per_agent(self, state, p_av, agent_duals):
        m = len(self.measured)
        gamma, mu = agent_duals[:, :m], agent_duals[:, m : 2 * m]
        lam, zeta = agent_duals[:, 2 * m], agent_duals[:, 2 * m + 1]
        a_sub = self.model.A[np.ix_(self.meas_pos, self.der_pos)]
        b_sub = self.model.B[np.ix_(self.meas_pos, self.der_pos)]
        weight = mu - gamma
        pr = self.params
        d_p = (
            -2.0 * pr.c_p * (p_av - state.p)
            + np.einsum("im,mi->i", weight, a_sub)
            + (lam - zeta) * self.model.M[0, self.der_pos]
            + pr.nu * state.p
        )
        d_q = (
            2.0 * pr.c_q * state.q
            + np.einsum("im,mi->i", weight, b_sub)
            + (lam - zeta) * self.model.Nmat[0, self.der_pos]
            + pr.nu * state.q
        )
        return d_p, d_q

    def metrics(self, window: tuple | None = None) -> RunMetrics:
        rec = self.rec
        base = self.feeder.base_kva
        err = np.abs(np.array(rec.p0) - np.array(rec.p0_set)) * base
        rmse = float(np.sqrt(np.mean(err**2))) if err.size else 0.0
        w = window or self.window
        sel = err[w[0] : w[1]]
        w_rmse = float(np.sqrt(np.mean(sel**2))) if sel.size else 0.0
        f_rmse = float(np.sqrt(np.mean(np.square(rec.forecast_err)))) if rec.forecast_err else None
        late = sum(1 for ok in self.log.on_time if not ok)
        return RunMetrics(rmse, err, rec.violations, rec.excursion, f_rmse, late, len(rec.t), w_rmse)


def run_iteration(sim: Simulator, state: SimulationState, inputs: ScenarioInputs) -> SimulationState:
    return sim.step(state, inputs)


def simulate(sim: Simulator, inputs: ScenarioInputs, iterations: int | None = None) -> SimulationState:
    state = sim.initial_state()
    for _ in range(inputs.horizon if iterations is None else iterations):
        state = sim.step(state, inputs)
    return state


# ---------------------------------------------------------------------------
# scenario assembly


def head_power_envelope(feeder: FeederModel, p_av: np.ndarray, load_mult: np.ndarray, stride: int = 60) -> tuple[float, float]:
    """Head-power range reachable at every sampled second (max PV .. no PV)."""
    der_pos = feeder.positions(list(feeder.der_capacity))
    base = feeder.load_vector()
    lo, hi = -np.inf, np.inf
    for t in range(0, len(load_mult), stride):
        s = -base * load_mult[t]
        hi = min(hi, solve_power_flow(feeder, s).head_power.real)
        s_pv = s.copy()
        s_pv[der_pos] += p_av[t]
        lo = max(lo, solve_power_flow(feeder, s_pv).head_power.real)
    if not lo < hi:
        raise SimulationError("no head-power setpoint is reachable over the whole horizon")
    return lo, hi


def build_inputs(
    cfg: ExperimentConfig,
    feeder: FeederModel,
    schedule_seed: int | None = None,
    horizon: int | None = None,
    random_schedule: bool = False,
    pv_seed: int | None = None,
    load_seed: int | None = None,
) -> ScenarioInputs:
    horizon = horizon or cfg.schedule.horizon
    prof = cfg.profiles
    if prof.pv_csv:
        pv_kw = load_profile_csv(cfg.resolve(prof.pv_csv)).samples[:horizon]
    else:
        pv_kw = generate_pv_profile(horizon, PV_REFERENCE_KW, prof.pv_seed if pv_seed is None else pv_seed, cover=prof.pv_cover).samples
    if prof.load_csv:
        load_mult = load_profile_csv(cfg.resolve(prof.load_csv), unit="pu").samples[:horizon]
    else:
        load_mult = generate_load_profile(horizon, prof.load_seed if load_seed is None else load_seed).samples
    if len(pv_kw) < horizon or len(load_mult) < horizon:
        raise SimulationError("profiles are shorter than the horizon")
    load_mult = load_mult * prof.load_scale
    # every DER hosts the same PV array behind its own inverter rating
    s_max = np.array(list(feeder.der_capacity.values()))
    p_av = np.minimum(np.outer(pv_kw / feeder.base_kva, np.ones_like(s_max)), s_max)

    lo, hi = head_power_envelope(feeder, p_av, load_mult)
    span = hi - lo
    lo_set = lo + cfg.schedule.envelope_lo * span
    hi_set = lo + cfg.schedule.envelope_hi * span
    seed = cfg.schedule.seed if schedule_seed is None else schedule_seed
    if random_schedule:
        schedule = random_setpoint_schedule(horizon, seed, lo_set, hi_set)
    else:
        schedule = generate_setpoint_schedule(horizon, seed, lo_set, hi_set)
    return ScenarioInputs(schedule.sample(), p_av, load_mult, schedule)


def measured_feeder(cfg: ExperimentConfig) -> FeederModel:
    feeder = load_feeder(cfg.feeder if str(cfg.feeder).startswith("bundled:") else cfg.resolve(cfg.feeder))
    if not feeder.measured_nodes:
        raise SimulationError("feeder file lists no measured_nodes")
    return feeder


def make_simulator(cfg: ExperimentConfig, feeder: FeederModel, model: LinearGridModel, forecasters=None, **overrides) -> Simulator:
    d = cfg.delay
    kwargs = dict(
        strategy=cfg.strategy,
        delay=d.model(),
        d_star=d.d_star_ms,
        window=tuple(d.window),
        uplink=d.uplink,
        downlink=d.downlink,
        head_power_delays=d.head_power,
        forecasters=forecasters,
        violation_tol=cfg.violation_tol,
    )
    kwargs.update(overrides)
    return Simulator(feeder, model, cfg.control, **kwargs)


# ---------------------------------------------------------------------------
# experiments


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_results_csv(sim: Simulator, path) -> None:
    rec = sim.rec
    base = sim.feeder.base_kva
    with open(path, "w") as fh:
        fh.write(",".join(RESULTS_HEADER) + "\n")
        for t, p0, ps, vmin, vmax, dn, late in zip(rec.t, rec.p0, rec.p0_set, rec.v_min, rec.v_max, rec.dual_norm, rec.late):
            p0_kw, ps_kw = p0 * base, ps * base
            fh.write(
                ",".join([str(t), _fmt(p0_kw), _fmt(ps_kw), _fmt(abs(p0_kw - ps_kw)), _fmt(vmin), _fmt(vmax), _fmt(dn), str(late)])
                + "\n"
            )


def read_results_csv(path) -> dict:
    data = np.genfromtxt(path, delimiter=",", names=True)
    return {name: data[name] for name in data.dtype.names}


def load_forecasters(cfg: ExperimentConfig, feeder: FeederModel) -> ForecasterRegistry:
    return ForecasterRegistry.load(cfg.resolve(cfg.lstm_dir), feeder.measured_nodes)


def run_experiment(
    cfg: ExperimentConfig,
    output_dir=None,
    forecasters: ForecasterRegistry | None = None,
    write: bool = True,
    inputs: ScenarioInputs | None = None,
) -> tuple[RunMetrics, Simulator]:
    """Full-horizon run; writes results.csv, messages.csv, metrics.json and SVG plots."""
    feeder = measured_feeder(cfg)
    model = linearize_analytic(feeder)
    if cfg.strategy is Strategy.LSTM_FORECAST and forecasters is None:
        forecasters = load_forecasters(cfg, feeder)
    inputs = inputs or build_inputs(cfg, feeder)
    sim = make_simulator(cfg, feeder, model, forecasters)
    start = time.perf_counter()
    simulate(sim, inputs)
    elapsed = time.perf_counter() - start
    metrics = sim.metrics()
    log.info("run finished: %d iterations in %.1f s, tracking RMSE %.3f kW", metrics.iterations, elapsed, metrics.tracking_rmse)
    if write:
        from .plots import plot_run

        out = Path(output_dir) if output_dir is not None else cfg.resolve(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_results_csv(sim, out / "results.csv")
        sim.log.write_csv(out / "messages.csv")
        doc = metrics.to_dict()
        doc["strategy"] = cfg.strategy.value
        doc["elapsed_s"] = elapsed
        (out / "metrics.json").write_text(json.dumps(doc, indent=1))
        plot_run(sim, inputs, out)
    return metrics, sim


def run_sensitivity_sweep(
    cfg: ExperimentConfig,
    loss_rates: Sequence[float],
    directions: Sequence[str] = ("uplink", "downlink"),
    strategies: Sequence = (Strategy.PREVIOUS_VALUE,),
    seeds: Sequence[int] = (1,),
    forecasters: ForecasterRegistry | None = None,
    output_dir=None,
    calibration_samples: int = 200_000,
) -> list[dict]:
    """Tracking RMSE per (loss rate, direction, strategy), averaged over delay seeds.

    A loss rate of 0 disables delays; other rates are turned into a deadline
    by :func:`calibrate_threshold`.
    """
    for rate in loss_rates:
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"loss rate {rate} outside [0, 1)")
    feeder = measured_feeder(cfg)
    model = linearize_analytic(feeder)
    inputs = build_inputs(cfg, feeder)
    strategies = [Strategy.parse(s) for s in strategies]
    if Strategy.LSTM_FORECAST in strategies and forecasters is None:
        forecasters = load_forecasters(cfg, feeder)
    base_model = cfg.delay.model()
    thresholds = {r: (np.inf if r == 0 else calibrate_threshold(base_model, r, calibration_samples)) for r in loss_rates}

    ideal = make_simulator(cfg, feeder, model, forecasters, uplink=False, downlink=False)
    simulate(ideal, inputs)
    ideal_rmse = ideal.metrics().tracking_rmse

    rows = []
    for rate in loss_rates:
        for direction in directions:
            if direction not in ("uplink", "downlink"):
                raise ValueError(f"unknown direction {direction!r}")
            for strategy in strategies:
                values = []
                for seed in seeds:
                    if rate == 0:
                        values.append(ideal_rmse)
                        continue
                    sim = make_simulator(
                        cfg,
                        feeder,
                        model,
                        forecasters,
                        strategy=strategy,
                        delay=replace(base_model, seed=seed),
                        d_star=thresholds[rate],
                        uplink=direction == "uplink",
                        downlink=direction == "downlink",
                    )
                    simulate(sim, inputs)
                    values.append(sim.metrics().tracking_rmse)
                rows.append(
                    {
                        "loss_rate": rate,
                        "direction": direction,
                        "strategy": strategy.value,
                        "d_star_ms": thresholds[rate],
                        "tracking_rmse_kw": float(np.mean(values)),
                        "degradation_kw": float(np.mean(values)) - ideal_rmse,
                    }
                )
    if output_dir is not None:
        from .plots import plot_sweep

        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "sweep.csv", "w") as fh:
            fh.write("loss_rate,direction,strategy,d_star_ms,tracking_rmse_kw,degradation_kw\n")
            for r in rows:
                fh.write(
                    f"{r['loss_rate']!r},{r['direction']},{r['strategy']},{_fmt(r['d_star_ms'])},"
                    f"{_fmt(r['tracking_rmse_kw'])},{_fmt(r['degradation_kw'])}\n"
                )
        plot_sweep(rows, out / "sweep.svg")
    return rows


def collect_training_series(cfg: ExperimentConfig, feeder: FeederModel | None = None) -> list[np.ndarray]:
    """Ideal-network closed-loop episodes with random setpoint curves.

    Returns one (episodes * horizon, ) block per measured node, episodes
    concatenated in order; use :data:`TrainingConfig.horizon` to split.
    """
    feeder = feeder or measured_feeder(cfg)
    model = linearize_analytic(feeder)
    tc = cfg.training
    per_node = [[] for _ in feeder.measured_nodes]
    for ep in range(tc.episodes):
        seed = tc.seed + ep
        inputs = build_inputs(cfg, feeder, schedule_seed=seed, horizon=tc.horizon, random_schedule=True, pv_seed=seed, load_seed=seed)
        sim = make_simulator(cfg, feeder, model, None, strategy=Strategy.PREVIOUS_VALUE, uplink=False, downlink=False)
        simulate(sim, inputs)
        v = np.array(sim.rec.measured_v)
        for k in range(len(feeder.measured_nodes)):
            per_node[k].append(v[:, k])
    return [np.stack(eps) for eps in per_node]


def train_forecasters(cfg: ExperimentConfig, output_dir=None, feeder: FeederModel | None = None) -> tuple[ForecasterRegistry, dict]:
    """Train one network per measured node and write ``node_<id>.json`` files.

    Voltages are handed to the networks in kV (the raw unit of a meter
    reading) and normalized by the feeder's voltage base.  The last
    ``holdout_fraction`` of every episode is held out for the report.
    """
    feeder = feeder or measured_feeder(cfg)
    tc = cfg.training
    series = collect_training_series(cfg, feeder)
    registry = ForecasterRegistry()
    report = {}
    split = int(round(tc.horizon * (1.0 - tc.holdout_fraction)))
    for k, node in enumerate(feeder.measured_nodes):
        episodes_kv = series[k] * feeder.base_kv
        net = LstmNetwork.init(tc.hidden_size, tc.lookback, feeder.base_kv, seed=tc.seed + k, v_center=tc.v_center, v_spread=tc.v_spread)
        train_cfg = TrainConfig(
            epochs=tc.epochs,
            learning_rate=tc.learning_rate,
            batch=tc.batch,
            seed=tc.seed + k,
            optimizer=tc.optimizer,
            hidden_size=tc.hidden_size,
        )
        try:
            result = train(net, [ep[:split] for ep in episodes_kv], train_cfg)
        except TrainingDiverged as exc:
            log.error("node %r: %s", node, exc)
            report[str(node)] = {"error": str(exc)}
            continue
        held = [one_step_rmse(result.network, ep[split - tc.lookback :]) / feeder.base_kv for ep in episodes_kv]
        registry.register(node, result.network)
        report[str(node)] = {
            "train_rmse_pu": result.final_rmse * tc.v_spread,
            "holdout_rmse_pu": float(np.sqrt(np.mean(np.square(held)))),
            "epochs": tc.epochs,
        }
    if output_dir is not None:
        out = Path(output_dir)
        registry.save(out)
        (out / "training_report.json").write_text(json.dumps(report, indent=1))
    return registry, report


def compare_strategies(
    cfg: ExperimentConfig,
    strategies: Sequence = tuple(Strategy),
    seeds: Sequence[int] = (1, 2, 3, 4, 5),
    forecasters: ForecasterRegistry | None = None,
) -> dict:
    """Seed-averaged tracking RMSE (kW) per strategy plus the ideal baseline.

    Every strategy sees the same delay realization for a given seed, so the
    differences come from late-message handling alone.
    """
    feeder = measured_feeder(cfg)
    model = linearize_analytic(feeder)
    inputs = build_inputs(cfg, feeder)
    strategies = [Strategy.parse(s) for s in strategies]
    if Strategy.LSTM_FORECAST in strategies and forecasters is None:
        forecasters = load_forecasters(cfg, feeder)
    ideal = make_simulator(cfg, feeder, model, forecasters, uplink=False, downlink=False)
    simulate(ideal, inputs)
    out = {"ideal": ideal.metrics().tracking_rmse, "per_seed": {}}
    for strategy in strategies:
        values = []
        for seed in seeds:
            sim = make_simulator(cfg, feeder, model, forecasters, strategy=strategy, delay=replace(cfg.delay.model(), seed=seed))
            simulate(sim, inputs)
            values.append(sim.metrics().tracking_rmse)
        out[strategy.value] = float(np.mean(values))
        out["per_seed"][strategy.value] = values
    return out
