"""CES production functions with separate mean and variance components.

The mean is a CES function of the inputs and the variance is a second,
independently parameterized CES kernel, so an input can raise expected
output while lowering output risk. The package evaluates both components
and their risk derivatives, estimates them by three-stage nonlinear least
squares, checks residuals for heteroscedasticity and simulates the model.
"""

__version__ = "0.1.0"

from ._kernels import BACKEND
from .data import Dataset, describe, load_dataset, save_dataset
from .diagnostics import DiagnosticsReport, bp_style_test, emit_plot_data, white_style_test
from .errors import (
    CesDomainError,
    CesRiskError,
    ConfigError,
    DataError,
    EstimationError,
    RankDeficientError,
    StageError,
)
from .justpope import FitOptions, ThreeStageResult, fit_threshold_mean, run_three_stage, stage1_fit, stage2_fit, stage3_fit
from .model import (
    CesMeanParams,
    CesVarParams,
    InputPoint,
    ThresholdParams,
    dvar_dinput,
    dvar_mp_dinput,
    eval_log_mean,
    eval_mean,
    eval_threshold_mean,
    eval_variance,
    jp_var_mp,
    marginal_product,
    var_marginal_product,
)
from .nls import FitResult, NlsOptions, NlsProblem, multi_start, solve_nls
from .ols import OlsResult, f_pvalue, solve_ols
from .synth import McSummary, SyntheticSpec, generate, monte_carlo
