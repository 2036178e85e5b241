"""Desk-scale co-simulation of primal-dual DER control over a lossy network,
with LSTM forecasts standing in for late voltage measurements."""

from .control import ControlParams, DualState
from .cyber import DelayModel, Strategy, calibrate_threshold
from .feeder import FeederModel, load_feeder, solve_power_flow
from .forecast import ForecasterRegistry, LstmNetwork
from .harness import RunMetrics, Simulator, run_experiment, run_sensitivity_sweep, train_forecasters
from .linmodel import LinearGridModel, linearize_analytic, linearize_numeric
from .scenario import ExperimentConfig, load_config

__version__ = "0.1.0"

__all__ = [
    "ControlParams",
    "DelayModel",
    "DualState",
    "ExperimentConfig",
    "FeederModel",
    "ForecasterRegistry",
    "LinearGridModel",
    "LstmNetwork",
    "RunMetrics",
    "Simulator",
    "Strategy",
    "calibrate_threshold",
    "linearize_analytic",
    "linearize_numeric",
    "load_config",
    "load_feeder",
    "run_experiment",
    "run_sensitivity_sweep",
    "solve_power_flow",
    "train_forecasters",
]
