"""Multirobot informative path planning for quantile estimation."""

from .field import Field, GridSpec, Measurement, footprint, load_field, sample, save_field, synth_field
from .gp import BeliefModel, KernelParams
from .objective import QuantileEstimate, QuantileSet, objective_score, quantile_se, quantiles
from .planner import Move, PlannerConfig, PlanningState, legal_actions, plan_step
from .stats import PairedSample, rmse, wilcoxon_signed_rank
from .team import (BudgetSpec, CommSpec, MissionConfig, PlacementSpec, TrialResult, allocate_budgets,
                   broadcast, comm_success_prob, place_initial, run_mission, voronoi_partition)

__version__ = "0.1.0"
