"""Distributed Kalman-Bucy filtering with fixed-time consensus on information matrices (ODEFTC)."""

from .centralized import CentralizedFilterState, central_step, steady_state_covariance
from .consensus import ConsensusParams, phi, run_consensus
from .exceptions import NumericalFailure, ScenarioError
from .graph import GraphTopology
from .model import PlantModel, SensorModel, TimeVaryingMatrix, estimate_bounds, parse_expr
from .node import NodeState, init_node, node_step
from .scenario import Scenario, SimConfig, load_scenario
from .simulator import McSummary, monte_carlo, run_realization

__version__ = "0.1.0"

__all__ = [
    "CentralizedFilterState", "central_step", "steady_state_covariance",
    "ConsensusParams", "phi", "run_consensus",
    "NumericalFailure", "ScenarioError",
    "GraphTopology",
    "PlantModel", "SensorModel", "TimeVaryingMatrix", "estimate_bounds", "parse_expr",
    "NodeState", "init_node", "node_step",
    "Scenario", "SimConfig", "load_scenario",
    "McSummary", "monte_carlo", "run_realization",
]
