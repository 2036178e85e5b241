"""Affine voltage / head-power sensitivity model.

    |v|        ~ A p_inj + B q_inj + c
    [P0, Q0]^T ~ M p_inj + N q_inj + o

Two constructions: the LinDistFlow common-path rule (no operating point
needed) and central finite differences of the sweep solver.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .feeder import FeederModel, solve_power_flow

DEFAULT_FD_STEP = 1e-4


@dataclass(frozen=True)
class LinearGridModel:
    A: np.ndarray
    B: np.ndarray
    M: np.ndarray
    Nmat: np.ndarray
    c: np.ndarray
    o: np.ndarray

    def __post_init__(self):
        n = self.c.shape[0]
        shapes = {
            "A": (self.A.shape, (n, n)),
            "B": (self.B.shape, (n, n)),
            "M": (self.M.shape, (2, n)),
            "Nmat": (self.Nmat.shape, (2, n)),
            "o": (self.o.shape, (2,)),
        }
        for name, (got, want) in shapes.items():
            if got != want:
                raise ValueError(f"{name} has shape {got}, expected {want}")
        for arr in (self.A, self.B, self.M, self.Nmat, self.c, self.o):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.c.shape[0]

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("A", "B", "M", "Nmat", "c", "o")}

    @classmethod
    def from_dict(cls, doc: dict) -> "LinearGridModel":
        return cls(**{k: np.array(doc[k], dtype=float) for k in ("A", "B", "M", "Nmat", "c", "o")})

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "LinearGridModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def linearize_analytic(feeder: FeederModel) -> LinearGridModel:
    """LinDistFlow sensitivities from common-path resistances/reactances."""
    z = feeder.common_path_impedance()
    v0 = feeder.head_voltage
    n = feeder.n
    ones = np.ones(n)
    zeros = np.zeros(n)
    return LinearGridModel(
        A=z.real / v0,
        B=z.imag / v0,
        M=np.vstack([-ones, zeros]),
        Nmat=np.vstack([zeros, -ones]),
        c=np.full(n, v0),
        o=np.zeros(2),
    )


def linearize_numeric(
    feeder: FeederModel,
    operating_injection: np.ndarray | None = None,
    step: float = DEFAULT_FD_STEP,
) -> LinearGridModel:
    """Central-difference Jacobian of the sweep solver around an operating point.

    ``c`` and ``o`` are chosen so the model reproduces the nonlinear solution
    exactly at ``operating_injection`` (defaults to zero injection).
    """
    n = feeder.n
    s0 = np.zeros(n, dtype=complex) if operating_injection is None else np.asarray(operating_injection, complex)

    def evaluate(s):
        sol = solve_power_flow(feeder, s)
        if not sol.converged:
            raise RuntimeError("power flow diverged while building the numeric linear model")
        return sol.magnitudes, np.array([sol.head_power.real, sol.head_power.imag])

    v_op, h_op = evaluate(s0)
    jac = {}
    for name, unit in (("p", 1.0), ("q", 1j)):
        dv = np.empty((n, n))
        dh = np.empty((2, n))
        for k in range(n):
            delta = np.zeros(n, dtype=complex)
            delta[k] = unit * step
            v_plus, h_plus = evaluate(s0 + delta)
            v_minus, h_minus = evaluate(s0 - delta)
            dv[:, k] = (v_plus - v_minus) / (2 * step)
            dh[:, k] = (h_plus - h_minus) / (2 * step)
        jac[name] = (dv, dh)
    A, M = jac["p"]
    B, Nmat = jac["q"]
    c = v_op - A @ s0.real - B @ s0.imag
    o = h_op - M @ s0.real - Nmat @ s0.imag
    return LinearGridModel(A=A, B=B, M=M, Nmat=Nmat, c=c, o=o)


def predict(model: LinearGridModel, p_inj, q_inj) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate the affine model; returns (voltage magnitudes, [P0, Q0])."""
    p = np.asarray(p_inj, dtype=float)
    q = np.asarray(q_inj, dtype=float)
    if p.shape != (model.n,) or q.shape != (model.n,):
        raise ValueError(f"injection vectors must have length {model.n}")
    v = model.A @ p + model.B @ q + model.c
    head = model.M @ p + model.Nmat @ q + model.o
    return v, head
