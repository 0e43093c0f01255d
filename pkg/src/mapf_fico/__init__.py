"""Receding-horizon multi-agent path finding with factorized conflict resolution."""

from .grid_world import GridGraph, GridMap, ScenarioEntry, build_graph, load_map, parse_map, parse_scenario
from .heuristics import GoalContext, HeuristicTable, candidate_set, distance, path_count, sample_balanced
from .planners import (
    FicoController,
    PibtController,
    PlannerConfig,
    Workspace,
    fico_step,
    pibt_controller,
)
from .simulator import Termination, compute_metrics, run_closed_loop, validate_trace
from .system_model import (
    DelayActuator,
    Environment,
    GoalStreams,
    Instance,
    Movement,
    PerfectActuator,
    State,
)

__all__ = [
    "GridGraph", "GridMap", "ScenarioEntry", "build_graph", "load_map", "parse_map", "parse_scenario",
    "GoalContext", "HeuristicTable", "candidate_set", "distance", "path_count", "sample_balanced",
    "FicoController", "PibtController", "PlannerConfig", "Workspace", "fico_step", "pibt_controller",
    "Termination", "compute_metrics", "run_closed_loop", "validate_trace",
    "DelayActuator", "Environment", "GoalStreams", "Instance", "Movement", "PerfectActuator", "State",
]
