"""Design-based survey estimation with random-forest-assisted estimators.

Finite populations and exact sampling designs, variance-reduction
regression trees and forests whose fits are explicit donor-weight
combinations, model-assisted estimators of population totals with
design-consistent variances and confidence intervals, multi-variable
model calibration, and a Monte Carlo laboratory.
"""

from ._kernels import BACKEND as kernel_backend
from .calibration import (CalibrationError, CalibrationProblem,
                          CalibrationResult, build_h, calibrate, mc_total)
from .cart import (RegressionTree, SplitRule, TreeError, best_split,
                   grow_tree, split_gain, tree_route)
from .design import (DesignError, DesignSpec, SampleIndex, draw_sample,
                     make_design, proportional_allocation)
from .estimators import (EstimateReport, EstimatorError, domain_total,
                         greg_fits, greg_total, ht_total, ma_total,
                         oob_decomposition, pgd_total, rf_total_population,
                         rf_total_sample)
from .forest import (ForestError, ForestModel, ForestParams,
                     PredictionWeightVector, ResampleMode, draw_membership,
                     fit_forest, forest_predict, forest_weights,
                     parse_forest_text, serialize_forest)
from .population import DataError, PopulationFrame, read_population
from .simlab import (EstimatorSpec, H5Config, McConfig, McPopulation, McRow,
                     McSummary, SimulationError, SyntheticModelSpec,
                     gen_population, h5_diagnostic, run_mc,
                     working_predictors)
from .variance import (ResidualSet, VarianceError, confidence_interval,
                       design_variance_total, var_ma, var_ma_total)

__version__ = "0.1.0"

__all__ = [
    "kernel_backend", "__version__",
    "PopulationFrame", "read_population", "DataError",
    "DesignSpec", "SampleIndex", "make_design", "draw_sample",
    "proportional_allocation", "DesignError",
    "RegressionTree", "SplitRule", "split_gain", "best_split", "grow_tree",
    "tree_route", "TreeError",
    "ResampleMode", "ForestParams", "ForestModel", "draw_membership",
    "fit_forest", "forest_predict", "forest_weights",
    "PredictionWeightVector", "serialize_forest", "parse_forest_text",
    "ForestError",
    "EstimateReport", "ht_total", "greg_total", "greg_fits", "pgd_total",
    "ma_total", "rf_total_sample", "rf_total_population",
    "oob_decomposition", "domain_total", "EstimatorError",
    "ResidualSet", "var_ma", "var_ma_total", "design_variance_total",
    "confidence_interval", "VarianceError",
    "CalibrationProblem", "CalibrationResult", "build_h", "calibrate",
    "mc_total", "CalibrationError",
    "SyntheticModelSpec", "gen_population", "working_predictors",
    "McPopulation", "EstimatorSpec", "McConfig", "McRow", "McSummary",
    "run_mc", "H5Config", "h5_diagnostic", "SimulationError",
]
