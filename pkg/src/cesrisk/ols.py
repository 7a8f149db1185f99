"""Ordinary least squares with a Stata-style inference table."""

from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from .errors import RankDeficientError

__all__ = ["OlsResult", "solve_ols", "f_pvalue"]


@dataclass(frozen=True)
class OlsResult:
    names: tuple
    coef: np.ndarray
    se: np.ndarray
    t: np.ndarray
    p: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    n_obs: int
    df_model: int
    df_resid: int
    ss_model: float
    ss_resid: float
    ss_total: float
    r2: float
    adj_r2: float
    f: float
    f_pvalue: float
    root_mse: float
    fitted: np.ndarray
    resid: np.ndarray

    @property
    def ms_model(self):
        return self.ss_model / self.df_model if self.df_model else float("nan")

    @property
    def ms_resid(self):
        return self.ss_resid / self.df_resid

    @property
    def ms_total(self):
        return self.ss_total / (self.n_obs - 1)

    def row(self, name):
        i = self.names.index(name)
        return {
            "coef": float(self.coef[i]),
            "se": float(self.se[i]),
            "t": float(self.t[i]),
            "p": float(self.p[i]),
            "ci": (float(self.ci_low[i]), float(self.ci_high[i])),
        }


def f_pvalue(F, df1, df2):
    """Upper-tail probability of the F(df1, df2) distribution.

    Uses the regularized incomplete beta function,
    ``P(F' > F) = I_{df2/(df2 + df1 F)}(df2/2, df1/2)``.
    """
    if not (df1 >= 1 and df2 >= 1) or not (np.isfinite(df1) and np.isfinite(df2)):
        raise ValueError(f"degrees of freedom must be >= 1, got ({df1}, {df2})")
    if np.isnan(F) or F < 0:
        raise ValueError(f"F must be non-negative, got {F}")
    if F == np.inf:
        return 0.0
    if F == 0:
        return 1.0
    return float(special.betainc(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * F)))


def _intercept_column(X):
    const = np.all(X == X[:1, :], axis=0) & (X[0] != 0)
    idx = np.flatnonzero(const)
    if idx.size == 0:
        raise ValueError("design matrix must contain an intercept column")
    return int(idx[0])


def _check_rank(X, names):
    norms = np.linalg.norm(X, axis=0)
    Z = X / np.where(norms > 0, norms, 1.0)
    for j in range(X.shape[1]):
        if norms[j] == 0 or np.linalg.matrix_rank(Z[:, : j + 1], tol=1e-10) < j + 1:
            raise RankDeficientError(f"design matrix is rank-deficient: column {names[j]!r} is collinear", [names[j]])


def solve_ols(X, y, names=None):
    """OLS of ``y`` on ``X``; ``X`` must include a constant column.

    Collinearity is checked column by column from the left, and the first
    column that adds no rank is named in the error.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    names = tuple(names) if names is not None else tuple(f"x{j}" for j in range(p))
    if n <= p:
        raise ValueError(f"need more observations ({n}) than columns ({p})")
    _intercept_column(X)
    _check_rank(X, names)

    XtX_inv = np.linalg.inv(X.T @ X)
    coef = np.linalg.lstsq(X, y, rcond=None)[0]
    fitted = X @ coef
    resid = y - fitted
    ybar = y.mean()
    ss_total = float(np.sum((y - ybar) ** 2))
    ss_resid = float(resid @ resid)
    df_model, df_resid = p - 1, n - p

    scale = max(np.max(np.abs(y)), 1e-300)
    if ss_total <= n * (64 * np.finfo(float).eps * scale) ** 2:
        # constant response
        ss_total = ss_model = 0.0
        r2, F, fp = 0.0, 0.0, 1.0
    else:
        ss_model = float(np.sum((fitted - ybar) ** 2))
        r2 = ss_model / ss_total
        if ss_resid <= (n * np.finfo(float).eps) ** 2 * ss_total:
            # exact fit up to rounding: infinite F
            F, fp = np.inf, 0.0
        else:
            F = (ss_model / df_model) / (ss_resid / df_resid)
            fp = f_pvalue(F, df_model, df_resid)
    adj_r2 = 1.0 - (1.0 - r2) * (n - 1) / df_resid

    sigma2 = ss_resid / df_resid
    se = np.sqrt(np.clip(np.diag(XtX_inv) * sigma2, 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = coef / se
    pv = np.where(np.isfinite(t), 2.0 * stats.t.sf(np.abs(t), df_resid), np.where(np.isnan(t), np.nan, 0.0))
    q = stats.t.ppf(0.975, df_resid)
    return OlsResult(
        names=names,
        coef=coef,
        se=se,
        t=t,
        p=pv,
        ci_low=coef - q * se,
        ci_high=coef + q * se,
        n_obs=n,
        df_model=df_model,
        df_resid=df_resid,
        ss_model=ss_model,
        ss_resid=ss_resid,
        ss_total=ss_total,
        r2=r2,
        adj_r2=adj_r2,
        f=F,
        f_pvalue=fp,
        root_mse=float(np.sqrt(sigma2)),
        fitted=fitted,
        resid=resid,
    )
