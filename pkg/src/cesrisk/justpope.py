"""Three-stage estimation of the composite CES mean/variance model.

Stage 1 fits the CES mean by NLS. Stage 2 fits the CES variance kernel to the
squared stage-1 residuals. Stage 3 refits the mean by weighted NLS with
weights ``h_hat^(-1/2)``.

Both the mean stages and the stage-2 regressand can be posed in log space
(the default) or in levels; see :class:`FitOptions`.
"""

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import EstimationError, RankDeficientError, StageError
from .fitting import (
    DEFAULT_R_GRID,
    MeanLayout,
    ThresholdLayout,
    VarLayout,
    mean_problem,
    mean_starts,
    threshold_problem,
    threshold_starts,
    variance_problem,
    variance_starts,
)
from .model import log_mean_values, variance_values
from .nls import FitResult, NlsOptions, multi_start

__all__ = [
    "FitOptions",
    "ThreeStageResult",
    "stage1_fit",
    "stage2_fit",
    "stage3_fit",
    "run_three_stage",
    "fit_threshold_mean",
    "RESIDUAL_FLOOR",
]

RESIDUAL_FLOOR = 1e-12
_SPACES = ("log", "level")


@dataclass(frozen=True)
class FitOptions:
    """Knobs shared by all stages.

    space
        ``"log"`` fits ln y on the log mean (the estimable log form);
        ``"level"`` fits y on f directly.
    stage2_space
        ``"log"`` regresses ln u^2 on ln h; ``"level"`` regresses u^2 on h.
    variance_degree
        Exponent numerator of the variance kernel, ``T^(degree/r2)``.
    """

    space: str = "log"
    stage2_space: str = "log"
    residual_floor: float = RESIDUAL_FLOOR
    r_grid: tuple = DEFAULT_R_GRID
    variance_degree: float = 1.0
    nls: NlsOptions = field(default_factory=NlsOptions)

    def __post_init__(self):
        if self.space not in _SPACES:
            raise ValueError(f"space must be one of {_SPACES}, got {self.space!r}")
        if self.stage2_space not in _SPACES:
            raise ValueError(f"stage2_space must be one of {_SPACES}, got {self.stage2_space!r}")
        if not self.r_grid:
            raise ValueError("r_grid must not be empty")
        if not self.residual_floor > 0:
            raise ValueError("residual_floor must be positive")
        if not self.variance_degree > 0:
            raise ValueError("variance_degree must be positive for estimation")


@dataclass(frozen=True)
class ThreeStageResult:
    stage1: FitResult
    stage2: Optional[FitResult]
    stage3: Optional[FitResult]
    weights: Optional[np.ndarray]
    space: str
    stage2_space: str
    clipped: int
    variance_identified: bool
    warnings: tuple = ()
    residuals: dict = field(default_factory=dict)


def _mean_layout(data):
    return MeanLayout(k=data.inputs.shape[1], dummy_years=data.dummy_years)


def _var_layout(data, options):
    return VarLayout(k=data.inputs.shape[1], dummy_years=data.dummy_years, degree=options.variance_degree)


def _min_obs(data, n_free, what):
    if data.n < n_free + 1:
        raise ValueError(f"insufficient observations: {data.n} rows for {n_free} {what} parameters")


def _target(data, space):
    return np.log(data.yield_) if space == "log" else np.asarray(data.yield_, dtype=float)


def _mean_fitted(p, data, space):
    lm = log_mean_values(p, data.inputs, data.dummies)
    return lm if space == "log" else np.exp(lm)


def stage1_fit(data, options=None):
    """Unweighted NLS of the CES mean, multi-started over ``options.r_grid``.

    The returned residuals are ``target - fitted`` in the fitting space.
    """
    options = options or FitOptions()
    layout = _mean_layout(data)
    _min_obs(data, layout.n_free, "mean")
    X, y, D = data.inputs, data.yield_, data.dummies
    prob = mean_problem(X, y, D, layout, space=options.space, options=options.nls)
    fit = multi_start(prob, mean_starts(X, y, D, layout, options.r_grid))
    p = layout.params(fit.theta)
    fitted = _mean_fitted(p, data, options.space)
    return replace(fit, params=p, fitted=fitted, info={**fit.info, "space": options.space})


def _squared(residuals, floor):
    u2 = np.asarray(residuals, dtype=float) ** 2
    low = u2 < floor
    return np.where(low, floor, u2), int(low.sum())


def stage2_fit(data, stage1_residuals, options=None):
    """Fit the CES variance kernel to squared stage-1 residuals.

    Squared residuals below ``options.residual_floor`` are raised to the
    floor; the count is returned in ``info["clipped"]``.
    """
    options = options or FitOptions()
    r = np.asarray(stage1_residuals, dtype=float)
    if r.shape != (data.n,):
        raise ValueError(f"residual vector has shape {r.shape}, expected ({data.n},)")
    layout = _var_layout(data, options)
    _min_obs(data, layout.n_free, "variance")
    u2, clipped = _squared(r, options.residual_floor)
    X, D = data.inputs, data.dummies
    sp = options.stage2_space
    prob = variance_problem(X, u2, D, layout, space=sp, options=options.nls)
    fit = multi_start(prob, variance_starts(X, u2, D, layout, space=sp, r_grid=options.r_grid))
    p = layout.params(fit.theta)
    h = variance_values(p, X, D)
    fitted = np.log(h) if sp == "log" else h
    return replace(fit, params=p, fitted=fitted, info={**fit.info, "space": sp, "clipped": clipped})


def stage_weights(data, stage2):
    """Per-observation weights ``h_hat^(-1/2)`` from a stage-2 fit."""
    with np.errstate(all="ignore"):
        h = variance_values(stage2.params, data.inputs, data.dummies)
        w = 1.0 / np.sqrt(h)
    bad = np.flatnonzero(~(np.isfinite(w) & (w > 0)))
    if bad.size:
        rows = ", ".join(str(int(i)) for i in bad[:20])
        more = "" if bad.size <= 20 else f" (+{bad.size - 20} more)"
        raise ValueError(f"non-finite stage-3 weight at observations {rows}{more}")
    return w


def stage3_fit(data, stage2, options=None, start=None):
    """Weighted NLS of the mean with weights ``h_hat^(-1/2)``.

    ``start`` (a stage-1 FitResult) is tried before the default grid.
    ``residuals`` on the result are the weighted ones; ``info["raw_residuals"]``
    holds the unweighted residuals in the fitting space.
    """
    options = options or FitOptions()
    layout = _mean_layout(data)
    _min_obs(data, layout.n_free, "mean")
    w = stage_weights(data, stage2)
    X, y, D = data.inputs, data.yield_, data.dummies
    prob = mean_problem(X, y, D, layout, space=options.space, weights=w, options=options.nls)
    starts = mean_starts(X, y, D, layout, options.r_grid)
    if start is not None:
        starts = [np.asarray(start.theta, dtype=float)] + starts
    fit = multi_start(prob, starts)
    p = layout.params(fit.theta)
    fitted = _mean_fitted(p, data, options.space)
    raw = _target(data, options.space) - fitted
    return replace(
        fit, params=p, fitted=fitted, info={**fit.info, "space": options.space, "weights": w, "raw_residuals": raw}
    )


_STAGE_ERRORS = (ValueError, ArithmeticError, EstimationError, RankDeficientError, np.linalg.LinAlgError)


def run_three_stage(data, options=None):
    """Run stages 1-3 in order.

    When too few squared residuals lie above the floor to identify the
    variance parameters, stages 2 and 3 are skipped and the result is
    flagged ``variance_identified=False``. Any stage failure raises
    :class:`StageError` carrying the completed stages in ``partial``.
    """
    options = options or FitOptions()
    warnings = []
    partial = {}
    if not data.dummy_years:
        warnings.append("single year in data: dummy coefficients omitted")

    try:
        s1 = stage1_fit(data, options)
    except _STAGE_ERRORS as exc:
        raise StageError(1, exc, partial) from exc
    partial["stage1"] = s1
    if not s1.converged:
        warnings.append(f"stage 1 did not converge: {s1.message}")
    residuals = {"stage1": s1.residuals}

    layout = _var_layout(data, options)
    _, clipped = _squared(s1.residuals, options.residual_floor)
    if data.n - clipped < layout.n_free + 1:
        warnings.append(
            f"variance unidentified: {clipped} of {data.n} squared residuals at the floor {options.residual_floor:g}"
        )
        return ThreeStageResult(
            s1, None, None, None, options.space, options.stage2_space, clipped, False, tuple(warnings), residuals
        )

    try:
        s2 = stage2_fit(data, s1.residuals, options)
    except _STAGE_ERRORS as exc:
        raise StageError(2, exc, partial) from exc
    partial["stage2"] = s2
    if s2.info["clipped"]:
        warnings.append(f"stage 2: {s2.info['clipped']} squared residuals clipped to {options.residual_floor:g}")
    if not s2.converged:
        warnings.append(f"stage 2 did not converge: {s2.message}")
    if options.stage2_space != "log":
        warnings.append(f"stage 2 regressand in {options.stage2_space} space (non-default)")
    residuals["stage2"] = s2.residuals

    try:
        s3 = stage3_fit(data, s2, options, start=s1)
    except _STAGE_ERRORS as exc:
        raise StageError(3, exc, partial) from exc
    if not s3.converged:
        warnings.append(f"stage 3 did not converge: {s3.message}")
    residuals["stage3"] = s3.info["raw_residuals"]
    residuals["stage3_weighted"] = s3.residuals
    return ThreeStageResult(
        s1,
        s2,
        s3,
        s3.info["weights"],
        options.space,
        options.stage2_space,
        s2.info["clipped"],
        True,
        tuple(warnings),
        residuals,
    )


def fit_threshold_mean(data, options=None):
    """Log-space NLS of the threshold CES mean, estimating ``b`` jointly.

    Each threshold is parameterized as ``b_i = min(x_i) - exp(tau_i)`` so
    that every observation stays above it.
    """
    options = options or FitOptions()
    base = _mean_layout(data)
    X, y, D = data.inputs, data.yield_, data.dummies
    layout = ThresholdLayout(base, tuple(float(v) for v in X.min(axis=0)))
    _min_obs(data, layout.n_free, "threshold-mean")
    prob = threshold_problem(X, y, D, layout, options=options.nls)
    fit = multi_start(prob, threshold_starts(X, y, D, layout, options.r_grid))
    p = layout.params(fit.theta)
    return replace(fit, params=p, fitted=np.log(y) - fit.residuals, info={**fit.info, "space": "log"})
