"""CES mean and variance functions and their analytic derivatives.

The mean function is

    f(x) = exp(ln_a + dummy_coef . D) * [sum_i alpha_i x_i^r]^(1/r)

and the variance function of the composite model y = f(x) + h(x)^(1/2) eps is

    h(x) = exp(2 (ln_b + dummy_coef . D)) * [sum_i beta_i x_i^r]^(degree/r)

with ``degree = 1`` by default. Everything is evaluated in log space through
:func:`cesrisk._kernels.ces_log_kernel`, which also handles the Cobb-Douglas
limit ``|r| < 1e-8`` and large ``|r| * ln x`` without overflow.

Point-wise functions take an :class:`InputPoint`; the ``*_values`` variants
take an ``(n, k)`` input matrix and an optional dummy matrix.
"""

from dataclasses import dataclass, field

import numpy as np

from ._kernels import CD_SWITCH, ces_log_kernel
from .errors import CesDomainError

__all__ = [
    "CD_SWITCH",
    "CesMeanParams",
    "CesVarParams",
    "ThresholdParams",
    "InputPoint",
    "eval_mean",
    "eval_log_mean",
    "eval_variance",
    "eval_log_variance",
    "eval_threshold_mean",
    "marginal_product",
    "dvar_dinput",
    "var_marginal_product",
    "dvar_mp_dinput",
    "variance_partial",
    "jp_var_mp",
    "jp_dvar_mp_dinput",
    "mean_values",
    "log_mean_values",
    "variance_values",
    "log_variance_values",
    "lognormal_var_exp",
]

_SUM_TOL = 1e-9


def _frozen(a):
    a = np.array(a, dtype=float).reshape(-1)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class CesMeanParams:
    """Parameters of the CES mean function.

    ``shares`` must be positive and sum to one. ``dummy_coef`` holds one
    log-shift per non-base year (empty or 0.0 when there is a single year).
    """

    ln_a: float
    r: float
    shares: np.ndarray
    dummy_coef: np.ndarray = field(default_factory=lambda: _frozen([]))

    def __post_init__(self):
        object.__setattr__(self, "ln_a", float(self.ln_a))
        object.__setattr__(self, "r", float(self.r))
        object.__setattr__(self, "shares", _frozen(self.shares))
        object.__setattr__(self, "dummy_coef", _frozen(self.dummy_coef))
        if not np.isfinite(self.ln_a):
            raise ValueError("ln_a must be finite")
        if not np.isfinite(self.r):
            raise ValueError("r must be finite")
        if self.shares.size < 1:
            raise ValueError("at least one input share is required")
        if np.any(self.shares <= 0):
            raise ValueError(f"shares must be positive, got {self.shares.tolist()}")
        if abs(self.shares.sum() - 1.0) > _SUM_TOL:
            raise ValueError(f"shares must sum to one, got sum {self.shares.sum()!r}")
        if not np.all(np.isfinite(self.dummy_coef)):
            raise ValueError("dummy_coef must be finite")

    @property
    def elasticity(self):
        """Elasticity of substitution 1/(1 - r); inf at r = 1."""
        return np.inf if self.r == 1.0 else 1.0 / (1.0 - self.r)

    @property
    def n_inputs(self):
        return self.shares.size


@dataclass(frozen=True)
class CesVarParams:
    """Parameters of the CES variance function.

    ``weights`` sum to one but may be negative. ``ln_b = -inf`` switches the
    noise off entirely (h = 0). ``degree`` is the homogeneity degree of h in
    the inputs; it is fixed, never estimated. ``degree = 0`` gives a constant
    (homoscedastic) variance.
    """

    ln_b: float
    r: float
    weights: np.ndarray
    dummy_coef: np.ndarray = field(default_factory=lambda: _frozen([]))
    degree: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "ln_b", float(self.ln_b))
        object.__setattr__(self, "r", float(self.r))
        object.__setattr__(self, "weights", _frozen(self.weights))
        object.__setattr__(self, "dummy_coef", _frozen(self.dummy_coef))
        object.__setattr__(self, "degree", float(self.degree))
        if np.isnan(self.ln_b) or self.ln_b == np.inf:
            raise ValueError("ln_b must be finite or -inf")
        if not np.isfinite(self.r):
            raise ValueError("r must be finite")
        if self.weights.size < 1 or not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite and non-empty")
        if abs(self.weights.sum() - 1.0) > _SUM_TOL:
            raise ValueError(f"weights must sum to one, got sum {self.weights.sum()!r}")
        if not np.all(np.isfinite(self.dummy_coef)):
            raise ValueError("dummy_coef must be finite")
        if not (np.isfinite(self.degree) and self.degree >= 0):
            raise ValueError("degree must be non-negative")

    @property
    def n_inputs(self):
        return self.weights.size


@dataclass(frozen=True)
class ThresholdParams:
    base: CesMeanParams
    thresholds: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "thresholds", _frozen(self.thresholds))
        if self.thresholds.size != self.base.n_inputs:
            raise ValueError("one threshold per input is required")


@dataclass(frozen=True)
class InputPoint:
    values: np.ndarray
    dummy: np.ndarray = field(default_factory=lambda: _frozen([]))

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))
        object.__setattr__(self, "dummy", _frozen(self.dummy))
        if not np.all(self.values > 0):
            raise CesDomainError(f"input values must be strictly positive, got {self.values.tolist()}")


# -- vectorized evaluation ---------------------------------------------------


def _shift(coef, D, n):
    """Per-row log shift coef . D for an (n, m) or (n,) dummy matrix."""
    if coef.size == 0 or D is None:
        return np.zeros(n)
    D = np.asarray(D, dtype=float)
    if D.ndim == 1:
        D = D.reshape(n, -1)
    if D.shape != (n, coef.size):
        raise ValueError(f"dummy matrix has shape {D.shape}, expected {(n, coef.size)}")
    return D @ coef


def _logx(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if np.any(X <= 0) or not np.all(np.isfinite(X)):
        raise CesDomainError("inputs must be finite and strictly positive")
    return np.log(X)


def _check_k(X, k):
    if X.shape[1] != k:
        raise ValueError(f"expected {k} inputs per observation, got {X.shape[1]}")


def log_mean_values(p, X, D=None):
    logx = _logx(X)
    _check_k(logx, p.n_inputs)
    G, _, _, _ = ces_log_kernel(logx, p.r, p.shares)
    out = p.ln_a + _shift(p.dummy_coef, D, logx.shape[0]) + G
    if not np.all(np.isfinite(out)):
        raise CesDomainError(f"non-finite CES value for exponent r={p.r!r}")
    return out


def mean_values(p, X, D=None):
    with np.errstate(over="ignore"):
        out = np.exp(log_mean_values(p, X, D))
    if not np.all(np.isfinite(out)):
        raise CesDomainError(f"CES level overflows for exponent r={p.r!r}")
    return out


def log_variance_values(p, X, D=None):
    logx = _logx(X)
    _check_k(logx, p.n_inputs)
    G, _, _, ok = ces_log_kernel(logx, p.r, p.weights)
    if not ok.all():
        bad = np.flatnonzero(~ok)
        raise CesDomainError(f"variance kernel non-positive at point(s) {bad[:10].tolist()}")
    return 2.0 * (p.ln_b + _shift(p.dummy_coef, D, logx.shape[0])) + p.degree * G


def variance_values(p, X, D=None):
    return np.exp(log_variance_values(p, X, D))


# -- point-wise API ----------------------------------------------------------


def _point(pt):
    return pt.values[None, :], None


def _dummy_for(coef, pt):
    if coef.size == 0:
        return None
    if pt.dummy.size == 0:
        return np.zeros((1, coef.size))
    return pt.dummy.reshape(1, -1)


def eval_log_mean(p, pt):
    X, _ = _point(pt)
    return float(log_mean_values(p, X, _dummy_for(p.dummy_coef, pt))[0])


def eval_mean(p, pt):
    X, _ = _point(pt)
    return float(mean_values(p, X, _dummy_for(p.dummy_coef, pt))[0])


def eval_log_variance(p, pt):
    X, _ = _point(pt)
    return float(log_variance_values(p, X, _dummy_for(p.dummy_coef, pt))[0])


def eval_variance(p, pt):
    return float(np.exp(eval_log_variance(p, pt)))


def eval_threshold_mean(p, pt):
    shifted = pt.values - p.thresholds
    if np.any(shifted <= 0):
        raise CesDomainError(
            f"input below threshold: x={pt.values.tolist()}, b={p.thresholds.tolist()}"
        )
    return eval_mean(p.base, InputPoint(shifted, pt.dummy))


def _kernel_weights(r, c, x):
    """Value G and normalized weights c_j x_j^r / sum(c x^r) at one point."""
    logx = np.log(x)[None, :]
    G, _, _, ok = ces_log_kernel(logx, r, c)
    if not ok[0]:
        raise CesDomainError(f"variance kernel non-positive at point {x.tolist()}")
    g = G[0]
    w = c * np.exp(r * (logx[0] - g))
    return g, w


def _index(p, i):
    k = p.n_inputs
    if not 0 <= i < k:
        raise IndexError(f"input index {i} out of range for {k} inputs")
    return i


def _check_var_eps(var_eps):
    if not var_eps >= 0:
        raise ValueError("var_eps must be non-negative")


def marginal_product(p, pt, i):
    """df/dx_i at eps = 0."""
    i = _index(p, i)
    f = eval_mean(p, pt)
    _, w = _kernel_weights(p.r, p.shares, pt.values)
    return float(f * w[i] / pt.values[i])


def dvar_dinput(p, var_eps, pt, i):
    """dV(y)/dx_i for the multiplicative model y = f(x) e^eps.

    Always positive when ``var_eps > 0``.
    """
    _check_var_eps(var_eps)
    i = _index(p, i)
    f = eval_mean(p, pt)
    _, w = _kernel_weights(p.r, p.shares, pt.values)
    return float(2.0 * f * f * w[i] / pt.values[i] * var_eps)


def var_marginal_product(p, var_eps, pt, i):
    _check_var_eps(var_eps)
    mp = marginal_product(p, pt, i)
    return mp * mp * var_eps


def dvar_mp_dinput(p, var_eps, pt, i):
    """d/dx_i of V(df/dx_i) in the multiplicative model.

    Equals ``2 V(mp_i) (r - 1) (1 - w_i) / x_i`` with ``w_i`` the normalized
    kernel weight of input i, so it is negative whenever r < 1.
    """
    _check_var_eps(var_eps)
    i = _index(p, i)
    if p.n_inputs < 2:
        raise ValueError("needs at least two inputs")
    f = eval_mean(p, pt)
    _, w = _kernel_weights(p.r, p.shares, pt.values)
    x = pt.values[i]
    mp = f * w[i] / x
    others = np.delete(w, i).sum()
    return float(2.0 * mp * mp * (p.r - 1.0) * others / x * var_eps)


def variance_partial(p, pt, i):
    """dh/dx_i of the CES variance function; any sign is possible."""
    i = _index(p, i)
    h = eval_variance(p, pt)
    _, v = _kernel_weights(p.r, p.weights, pt.values)
    return float(h * p.degree * v[i] / pt.values[i])


def jp_var_mp(mean, var, pt, i):
    """V(dy/dx_i) = h_i^2 / (4 h) in the composite model.

    ``mean`` is accepted for interface symmetry; the result depends on the
    variance function only.
    """
    del mean
    i = _index(var, i)
    h = eval_variance(var, pt)
    if h == 0.0:
        return 0.0
    _, v = _kernel_weights(var.r, var.weights, pt.values)
    x = pt.values[i]
    q = var.degree * v[i]
    return float(h * q * q / (4.0 * x * x))


def jp_dvar_mp_dinput(mean, var, pt, i):
    """d/dx_i of :func:`jp_var_mp`, i.e. h_i (2 h h_ii - h_i^2) / (4 h^2)."""
    del mean
    i = _index(var, i)
    h = eval_variance(var, pt)
    if h == 0.0:
        return 0.0
    _, v = _kernel_weights(var.r, var.weights, pt.values)
    x = pt.values[i]
    g = var.degree
    # h_i = h g v / x ;  h_ii = h g v [ (g - 1) v + (r - 1) (1 - v) ] / x^2
    vi = v[i]
    rest = np.delete(v, i).sum()
    hi = h * g * vi / x
    hii = h * g * vi * ((g - 1.0) * vi + (var.r - 1.0) * rest) / (x * x)
    return float(hi * (2.0 * h * hii - hi * hi) / (4.0 * h * h))


def lognormal_var_exp(sigma2=1.0):
    """V(e^eps) for eps ~ N(0, sigma2): (e^s2 - 1) e^s2."""
    return float(np.expm1(sigma2) * np.exp(sigma2))
