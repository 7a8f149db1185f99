"""Auxiliary-regression heteroscedasticity checks and scatterplot point files.

Both tests regress raw squared residuals u^2 by OLS: on the inputs
(:func:`bp_style_test`) or on the fitted values and their squares
(:func:`white_style_test`). Residuals are whatever the caller supplies,
normally the stage-1 residuals in the fitting space.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .ols import OlsResult, solve_ols

__all__ = [
    "DiagnosticsReport",
    "bp_style_test",
    "white_style_test",
    "emit_plot_data",
    "PLOT_FILES",
    "ALPHA",
]

ALPHA = 0.05
HETERO = "heteroscedastic"
NO_HETERO = "no heteroscedasticity detected"

PLOT_FILES = (
    "yield_vs_water",
    "yield_vs_nitrogen",
    "resid2_vs_water",
    "resid2_vs_nitrogen",
    "resid2_vs_fitted",
    "resid_vs_fitted",
)


@dataclass(frozen=True)
class DiagnosticsReport:
    kind: str  # "inputs-regression" or "fitted-regression"
    ols: OlsResult
    verdict: str
    directions: dict  # regressor -> {"sign": +1/-1/0, "significant": bool}
    points: dict = field(default_factory=dict)  # name -> (x, y)

    @property
    def f(self):
        return self.ols.f

    @property
    def p_value(self):
        return self.ols.f_pvalue

    @property
    def heteroscedastic(self):
        return self.verdict == HETERO


def _aligned(data, name, v):
    v = np.asarray(v, dtype=float).reshape(-1)
    if data.n == 0:
        raise DataError("no observations")
    if v.size != data.n:
        raise ValueError(f"{name} has {v.size} entries, dataset has {data.n}")
    return v


def _report(kind, ols, points):
    verdict = HETERO if ols.f_pvalue < ALPHA else NO_HETERO
    directions = {}
    for j, name in enumerate(ols.names):
        if name == "_cons":
            continue
        directions[name] = {"sign": int(np.sign(ols.coef[j])), "significant": bool(ols.p[j] < ALPHA)}
    return DiagnosticsReport(kind, ols, verdict, directions, points)


def bp_style_test(data, residuals):
    """OLS of u^2 on (water, nitrogen, constant).

    Nitrogen enters at its estimation value (after the +1 shift); the shift
    only moves the intercept.
    """
    u = _aligned(data, "residuals", residuals)
    u2 = u * u
    X = np.column_stack([data.water, data.nitrogen, np.ones(data.n)])
    ols = solve_ols(X, u2, ("water", "nitrogen", "_cons"))
    points = {
        "resid2_vs_water": (data.water, u2),
        "resid2_vs_nitrogen": (data.raw_nitrogen, u2),
    }
    return _report("inputs-regression", ols, points)


def white_style_test(data, residuals, fitted):
    """OLS of u^2 on (yhat, yhat^2, constant)."""
    u = _aligned(data, "residuals", residuals)
    yhat = _aligned(data, "fitted", fitted)
    u2 = u * u
    X = np.column_stack([yhat, yhat * yhat, np.ones(data.n)])
    ols = solve_ols(X, u2, ("yhat", "yhat2", "_cons"))
    return _report("fitted-regression", ols, {"resid2_vs_fitted": (yhat, u2)})


def _write_points(path, x, y):
    with open(path, "w", encoding="utf-8") as fh:
        for a, b in zip(x, y):
            fh.write(f"{float(a)!r} {float(b)!r}\n")


def emit_plot_data(data, residuals, fitted, out_dir):
    """Write the six ``<name>.points`` files into ``out_dir``.

    Each file is headerless, one ``x y`` pair per line, with values written
    in shortest round-trip form. Nitrogen is the recorded (unshifted) value.
    Returns ``{name: path}``.
    """
    u = _aligned(data, "residuals", residuals)
    yhat = _aligned(data, "fitted", fitted)
    u2 = u * u
    sets = {
        "yield_vs_water": (data.water, data.yield_),
        "yield_vs_nitrogen": (data.raw_nitrogen, data.yield_),
        "resid2_vs_water": (data.water, u2),
        "resid2_vs_nitrogen": (data.raw_nitrogen, u2),
        "resid2_vs_fitted": (yhat, u2),
        "resid_vs_fitted": (yhat, u),
    }
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name in PLOT_FILES:
        p = out / f"{name}.points"
        _write_points(p, *sets[name])
        paths[name] = p
    return paths
