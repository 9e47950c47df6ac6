"""Experiment sweeps, reports and figures."""

from .render import paths_svg, render_paths
from .report import PairSpec, Report, parse_pairs, report
from .sweep import (RESULTS_HEADER, ResultsTable, SweepSpec, Trial, enumerate_configs, enumerate_trials,
                    make_field, preset, run_sweep, trial_seed)

__all__ = ["PairSpec", "RESULTS_HEADER", "Report", "ResultsTable", "SweepSpec", "Trial", "enumerate_configs",
           "enumerate_trials", "make_field", "parse_pairs", "paths_svg", "preset", "render_paths", "report",
           "run_sweep", "trial_seed"]
