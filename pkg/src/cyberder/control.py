"""Primal-dual feedback controller for PV inverters.

The DERMS side runs :func:`dual_update` on measured voltages and head power;
each DER agent runs :func:`lagrangian_gradient` and :func:`primal_update`
locally.  ``*_all`` variants evaluate every DER at once and are what the
simulation loop uses; the scalar functions are the per-agent reference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linmodel import LinearGridModel

# relative slack accepted when deciding a point already lies in the capability set
_FEAS_RTOL = 1e-14


@dataclass(frozen=True)
class ControlParams:
    alpha: float = 0.1
    nu: float = 1e-3
    epsilon: float = 1e-4
    E: float = 0.001
    v_min: float = 0.95
    v_max: float = 1.05
    c_p: float = 3.0
    c_q: float = 1.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.nu < 0 or self.epsilon < 0 or self.E < 0:
            raise ValueError("nu, epsilon and E must be nonnegative")
        if not self.v_min < self.v_max:
            raise ValueError("v_min must be below v_max")
        if self.c_p < 0 or self.c_q < 0:
            raise ValueError("objective weights must be nonnegative")


@dataclass(frozen=True)
class DualState:
    gamma: np.ndarray  # lower-voltage multipliers, one per measured node
    mu: np.ndarray  # upper-voltage multipliers
    lam: float = 0.0  # P0 above setpoint band
    zeta: float = 0.0  # P0 below setpoint band

    @classmethod
    def zeros(cls, n_measured: int) -> "DualState":
        return cls(np.zeros(n_measured), np.zeros(n_measured), 0.0, 0.0)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.gamma, self.mu, [self.lam, self.zeta]])

    def norm(self) -> float:
        return float(np.linalg.norm(self.as_vector()))


@dataclass(frozen=True)
class DerCapability:
    p_av: float
    s_max: float

    def __post_init__(self):
        if self.p_av < 0 or not self.s_max > 0:
            raise ValueError(f"invalid capability p_av={self.p_av}, s_max={self.s_max}")


@dataclass(frozen=True)
class DerSetpoint:
    p: float = 0.0
    q: float = 0.0


def dual_update(
    d: DualState,
    measured_v,
    measured_p0: float,
    p0_set: float,
    params: ControlParams,
    frozen=None,
) -> DualState:
    """Projected dual ascent step on the voltage and tracking multipliers.

    ``frozen`` is an optional boolean mask over measured nodes whose
    multipliers are held at their current value (skip-update strategy).
    """
    v = np.asarray(measured_v, dtype=float)
    if v.shape != d.gamma.shape:
        raise ValueError(f"expected {d.gamma.shape[0]} voltage measurements, got {v.shape}")
    a, eps = params.alpha, params.epsilon
    gamma = np.maximum(0.0, d.gamma + a * (params.v_min - v - eps * d.gamma))
    mu = np.maximum(0.0, d.mu + a * (v - params.v_max - eps * d.mu))
    if frozen is not None:
        frozen = np.asarray(frozen, dtype=bool)
        gamma = np.where(frozen, d.gamma, gamma)
        mu = np.where(frozen, d.mu, mu)
    lam = max(0.0, d.lam + a * (measured_p0 - p0_set - params.E - eps * d.lam))
    zeta = max(0.0, d.zeta + a * (p0_set - measured_p0 - params.E - eps * d.zeta))
    return DualState(gamma, mu, lam, zeta)


def lagrangian_gradient(
    setpoint: DerSetpoint,
    cap: DerCapability,
    d: DualState,
    model: LinearGridModel,
    der_pos: int,
    measured_pos,
    params: ControlParams,
) -> tuple[float, float]:
    """Gradient of the regularized Lagrangian w.r.t. (P_i, Q_i) of one DER.

    ``der_pos`` is the DER node's position in per-node arrays and
    ``measured_pos`` the positions of the measured nodes, both as returned by
    :meth:`FeederModel.positions`.
    """
    if not 0 <= der_pos < model.n:
        raise ValueError(f"DER position {der_pos} outside the model")
    measured_pos = np.asarray(measured_pos, dtype=int)
    weight = d.mu - d.gamma
    track = d.lam - d.zeta
    d_p = (
        -2.0 * params.c_p * (cap.p_av - setpoint.p)
        + weight @ model.A[measured_pos, der_pos]
        + track * model.M[0, der_pos]
        + params.nu * setpoint.p
    )
    d_q = (
        2.0 * params.c_q * setpoint.q
        + weight @ model.B[measured_pos, der_pos]
        + track * model.Nmat[0, der_pos]
        + params.nu * setpoint.q
    )
    return float(d_p), float(d_q)


def lagrangian_gradient_all(p, q, p_av, d: DualState, model: LinearGridModel, der_pos, measured_pos, params):
    """Vectorized :func:`lagrangian_gradient` over all DERs."""
    weight = d.mu - d.gamma
    track = d.lam - d.zeta
    a_sub = model.A[np.ix_(measured_pos, der_pos)]
    b_sub = model.B[np.ix_(measured_pos, der_pos)]
    d_p = -2.0 * params.c_p * (p_av - p) + weight @ a_sub + track * model.M[0, der_pos] + params.nu * p
    d_q = 2.0 * params.c_q * q + weight @ b_sub + track * model.Nmat[0, der_pos] + params.nu * q
    return d_p, d_q


def project_capability_all(p, q, p_av, s_max) -> tuple[np.ndarray, np.ndarray]:
    """Euclidean projection onto {0 <= p <= p_av, p^2 + q^2 <= s_max^2}, elementwise.

    The minimizer is one of: the point itself, its radial scaling onto the
    disk, its clamp onto the p=0 or p=p_av face, or a face/arc corner.  All
    feasible candidates are enumerated and the closest one is kept.
    """
    p, q, p_av, s_max = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (p, q, p_av, s_max)))
    p_top = np.minimum(p_av, s_max)
    q_top = np.sqrt(np.maximum(s_max**2 - p_top**2, 0.0))
    r = np.hypot(p, q)
    with np.errstate(all="ignore"):
        scale = np.where(r > 0, s_max / r, 0.0)
        radial_p, radial_q = p * scale, q * scale
    cands_p = np.stack(
        [p, radial_p, np.zeros_like(p), p_top, np.zeros_like(p), np.zeros_like(p), p_top, p_top], axis=-1
    )
    cands_q = np.stack(
        [q, radial_q, np.clip(q, -s_max, s_max), np.clip(q, -q_top, q_top), s_max, -s_max, q_top, -q_top],
        axis=-1,
    )
    s2 = (s_max**2)[..., None]
    tol = _FEAS_RTOL * np.maximum(s2, 1.0)
    feasible = (
        (cands_p >= 0.0)
        & (cands_p <= np.maximum(p_av, 0.0)[..., None])
        & (cands_p**2 + cands_q**2 <= s2 + tol)
    )
    dist = (cands_p - p[..., None]) ** 2 + (cands_q - q[..., None]) ** 2
    dist = np.where(feasible, dist, np.inf)
    # ties go to the earliest candidate, so feasible inputs are returned untouched
    best = np.argmin(dist, axis=-1)
    out_p = np.take_along_axis(cands_p, best[..., None], axis=-1)[..., 0]
    out_q = np.take_along_axis(cands_q, best[..., None], axis=-1)[..., 0]
    return out_p, out_q


def project_capability(point, cap: DerCapability) -> DerSetpoint:
    p, q = point
    out_p, out_q = project_capability_all(p, q, cap.p_av, cap.s_max)
    return DerSetpoint(float(out_p), float(out_q))


def primal_update(setpoint: DerSetpoint, cap: DerCapability, grad, params: ControlParams) -> DerSetpoint:
    d_p, d_q = grad
    if not (np.isfinite(d_p) and np.isfinite(d_q)):
        raise ValueError(f"non-finite gradient ({d_p}, {d_q})")
    return project_capability(
        (setpoint.p - params.alpha * d_p, setpoint.q - params.alpha * d_q), cap
    )


def primal_update_all(p, q, p_av, s_max, d_p, d_q, params: ControlParams):
    if not (np.all(np.isfinite(d_p)) and np.all(np.isfinite(d_q))):
        raise ValueError("non-finite gradient")
    return project_capability_all(p - params.alpha * d_p, q - params.alpha * d_q, p_av, s_max)


def lagrangian_value(p, q, p_av, d: DualState, model: LinearGridModel, p_inj, q_inj, measured_pos, p0_set, params) -> float:
    """Regularized Lagrangian with voltages and P0 from the linear model.

    ``p``/``q`` are DER setpoints; ``p_inj``/``q_inj`` the matching per-node
    net injections.  Used as the reference for gradient checks.
    """
    v = model.A @ p_inj + model.B @ q_inj + model.c
    p0 = (model.M @ p_inj + model.Nmat @ q_inj + model.o)[0]
    v_m = v[measured_pos]
    value = np.sum(params.c_p * (p_av - p) ** 2 + params.c_q * q**2)
    value += np.sum(d.gamma * (params.v_min - v_m) + d.mu * (v_m - params.v_max))
    value += d.lam * (p0 - p0_set - params.E) + d.zeta * (p0_set - p0 - params.E)
    value += 0.5 * params.nu * np.sum(p**2 + q**2)
    value -= 0.5 * params.epsilon * np.sum(d.as_vector() ** 2)
    return float(value)

