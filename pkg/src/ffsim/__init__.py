"""Lattice evacuation simulator with heterogeneous agents.

Agents hop over a rectangular grid toward a single exit, guided by a
precomputed distance field, queueing bonds and an aggressiveness-based
conflict rule.  The harness sweeps scenario x occupancy x repetition
grids under periodic boundaries and emits a reproducible CSV tree of
travel-time statistics.
"""

__version__ = "0.1.0"

from .lattice import Cell, ConfigurationError, Room, build_room, neighborhood
from .population import (Agent, AgentParams, Scenario, sample_population,
                         scenario_groups)
from .dynamics import (Conflict, Simulation, choose_target, place_agents,
                       resolve_conflict, resolve_conflicts, schedule_next,
                       target_distribution)
from .measurement import (OccupancyTrace, PassageRecord, compute_nmean,
                          free_flow_velocity, outflow, relative_travel_time)
from .analysis import (BoxplotSummary, PiecewiseFit, QuantileSeries,
                       boxplot_summary, fit_piecewise, histogram,
                       quantile_curves, weighted_mean_r2)
from .harness import (ExperimentConfig, RunResult, analyze_directory,
                      emit_outputs, parse_config, run_experiment, run_single)

__all__ = [
    "__version__",
    "Cell", "ConfigurationError", "Room", "build_room", "neighborhood",
    "Agent", "AgentParams", "Scenario", "sample_population", "scenario_groups",
    "Conflict", "Simulation", "choose_target", "place_agents",
    "resolve_conflict", "resolve_conflicts", "schedule_next",
    "target_distribution",
    "OccupancyTrace", "PassageRecord", "compute_nmean", "free_flow_velocity",
    "outflow", "relative_travel_time",
    "BoxplotSummary", "PiecewiseFit", "QuantileSeries", "boxplot_summary",
    "fit_piecewise", "histogram", "quantile_curves", "weighted_mean_r2",
    "ExperimentConfig", "RunResult", "analyze_directory", "emit_outputs",
    "parse_config", "run_experiment", "run_single",
]
