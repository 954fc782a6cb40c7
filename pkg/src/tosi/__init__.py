"""Two-directional simultaneous inference: ToMax/ToMin tests for sets of zeros and nonzeros."""

from .core import (
    EstimateSet,
    MultiSplitResult,
    SplitPlan,
    TestResult,
    by_adjust,
    combine_splits,
    holm_adjust,
    make_split_plan,
    markov_rule,
    stage1_select,
    stage2_test,
    tosi_multi,
    tosi_single,
    wald_stat,
)
from .errors import (
    ConvergenceError,
    DegreesOfFreedomError,
    DomainError,
    NoFactorError,
    SingularityError,
    TooFewObservationsError,
    TosiError,
)
from .factor import FactorBackend, FactorFit, factor_estimates, factor_fit, select_q, sparsify_loadings
from .harness import SimConfig, SimTable, build_gsets, gen_factor, gen_mean, gen_regression, qq_data, run_size_power
from .mean import MeanBackend, mean_estimates
from .numerics import RngStream, chi2_sf, draw, gammaincc, spd_inv, spd_inv_sqrt, thin_svd
from .regression import (
    DebiasConfig,
    LassoFit,
    NodewiseFit,
    RegressionBackend,
    cv_lasso,
    debiased_estimates,
    debiased_lasso,
    lasso_cd,
    noise_variance,
    nodewise,
)
from .tuning import TuningOutcome, lambda_grid, select_lambda_tosi

__version__ = "0.1.0"
