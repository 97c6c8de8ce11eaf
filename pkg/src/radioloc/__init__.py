"""Radio localization toolkit: geometric and cooperative position solvers,
Bayesian grid and particle inference, array angle-of-arrival estimation,
RSSI fingerprinting, ranging bounds and a Monte Carlo harness."""

from . import aoa, bayes, bounds, coop, fingerprint, geomsolve, harness, scenario
from .errors import *  # noqa: F401,F403
from .scenario import NetworkScenario, RangeSet, generate_benchmark_scenario, synthesize_ranges
from .geomsolve import SolverReport, foy_tdoa, iterative_wls, trilaterate
from .coop import (PositionEstimateSet, SolverConfig, solve_admm, solve_ls_gradient,
                   solve_mds_smacof, solve_pocs, solve_sequential)
from .harness import ExperimentConfig, MetricTable, run_experiment

__version__ = "0.1.0"
