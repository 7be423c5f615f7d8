"""Nonlinear MPC for quadrotors with the low-level rate loop in the prediction model."""

from __future__ import annotations

__version__ = "0.1.0"

from .bench import BenchReport, Scenario, ScenarioMatrix, position_rmse, prediction_rmse, run_matrix
from .controllers import LolNmpc, NmpcController, StandardNmpc, make_controller
from .model import QuadModel, actuator_constraint_matrices
from .ocp import OcpConfig, OcpProblem, OcpSolution, OcpSolver, SolveMode
from .params import VehicleParams, default_params, load_vehicle
from .plant import Desaturation, FlightLog, PlantConfig, run_closed_loop
from .trajectories import ReferenceTrajectory, make_preset

__all__ = [
    "__version__",
    "BenchReport", "Scenario", "ScenarioMatrix", "position_rmse", "prediction_rmse", "run_matrix",
    "LolNmpc", "NmpcController", "StandardNmpc", "make_controller",
    "QuadModel", "actuator_constraint_matrices",
    "OcpConfig", "OcpProblem", "OcpSolution", "OcpSolver", "SolveMode",
    "VehicleParams", "default_params", "load_vehicle",
    "Desaturation", "FlightLog", "PlantConfig", "run_closed_loop",
    "ReferenceTrajectory", "make_preset",
]
