"""NLS problem builders for the CES mean, variance and threshold forms.

Constraints are imposed through the parameterization, never by penalty:

* mean shares: softmax over K-1 free logits (last logit fixed at 0);
* variance weights: beta_K = 1 - sum(beta_1..beta_{K-1}), signs free;
* substitution exponents: r = 1 - exp(rho), so r < 1;
* thresholds: b_i = min(x_i) - exp(tau_i), so x_i - b_i > 0 everywhere.
"""

from dataclasses import dataclass

import numpy as np

from ._kernels import ces_log_kernel
from .model import CesMeanParams, CesVarParams, ThresholdParams
from .nls import NlsOptions, NlsProblem, Transform

DEFAULT_R_GRID = (-2.0, -1.0, -0.5, 0.1, 0.5, 0.9)


def _softmax(phi):
    z = np.append(phi, 0.0)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def _softmax_jac(alpha):
    """d alpha / d phi for the K-1 free logits, shape (K, K-1)."""
    k = alpha.size
    J = -np.outer(alpha, alpha[: k - 1])
    J[np.arange(k - 1), np.arange(k - 1)] += alpha[: k - 1]
    return J


def _r_from_rho(rho):
    # huge rho only arises on trial steps, which the damping loop rejects
    with np.errstate(over="ignore"):
        return 1.0 - np.exp(rho)


def _rho_from_r(r):
    if not r < 1:
        raise ValueError(f"starting exponent must be < 1, got {r}")
    return float(np.log1p(-r))


@dataclass(frozen=True)
class MeanLayout:
    """Index bookkeeping for [lnA, dummies..., rho, phi...] (free) and
    [lnA, dummies..., r, alpha...] (reported)."""

    k: int
    dummy_years: tuple
    prefix: str = "A"
    r_name: str = "r1"
    share_name: str = "alpha"
    scale_name: str = "lnA"

    @property
    def m(self):
        return len(self.dummy_years)

    @property
    def n_free(self):
        return 2 + self.m + self.k - 1

    @property
    def names(self):
        return (
            (self.scale_name,)
            + tuple(f"{self.prefix}_{y}" for y in self.dummy_years)
            + (self.r_name,)
            + tuple(f"{self.share_name}{j + 1}" for j in range(self.k))
        )

    @property
    def free_names(self):
        return (
            (self.scale_name,)
            + tuple(f"{self.prefix}_{y}" for y in self.dummy_years)
            + ("rho",)
            + tuple(f"logit_{self.share_name}{j + 1}" for j in range(self.k - 1))
        )

    def split(self, theta):
        m = self.m
        return theta[0], theta[1 : 1 + m], theta[1 + m], theta[2 + m :]

    def forward(self, theta):
        lna, dum, rho, phi = self.split(theta)
        return np.concatenate([[lna], dum, [_r_from_rho(rho)], _softmax(phi)])

    def jacobian(self, theta):
        lna, dum, rho, phi = self.split(theta)
        m, k = self.m, self.k
        G = np.zeros((2 + m + k, self.n_free))
        G[0, 0] = 1.0
        G[1 : 1 + m, 1 : 1 + m] = np.eye(m)
        G[1 + m, 1 + m] = -np.exp(rho)
        G[2 + m :, 2 + m :] = _softmax_jac(_softmax(phi))
        return G

    def transform(self):
        return Transform(self.forward, self.jacobian)

    def params(self, theta):
        lna, dum, rho, phi = self.split(theta)
        return CesMeanParams(lna, _r_from_rho(rho), _softmax(phi), dum)

    def theta_from(self, p: CesMeanParams):
        a = p.shares
        return np.concatenate([[p.ln_a], p.dummy_coef, [_rho_from_r(p.r)], np.log(a[:-1] / a[-1])])


@dataclass(frozen=True)
class VarLayout:
    """[lnB, dummies..., rho, beta_1..beta_{K-1}] free; beta_K implied."""

    k: int
    dummy_years: tuple
    degree: float = 1.0

    @property
    def m(self):
        return len(self.dummy_years)

    @property
    def n_free(self):
        return 2 + self.m + self.k - 1

    @property
    def names(self):
        return (
            ("lnB",)
            + tuple(f"B_{y}" for y in self.dummy_years)
            + ("r2",)
            + tuple(f"beta{j + 1}" for j in range(self.k))
        )

    @property
    def free_names(self):
        return ("lnB",) + tuple(f"B_{y}" for y in self.dummy_years) + ("rho",) + tuple(
            f"beta{j + 1}" for j in range(self.k - 1)
        )

    def split(self, theta):
        m = self.m
        return theta[0], theta[1 : 1 + m], theta[1 + m], theta[2 + m :]

    def weights(self, free):
        return np.append(free, 1.0 - np.sum(free))

    def forward(self, theta):
        lnb, dum, rho, bf = self.split(theta)
        return np.concatenate([[lnb], dum, [_r_from_rho(rho)], self.weights(bf)])

    def jacobian(self, theta):
        lnb, dum, rho, bf = self.split(theta)
        m, k = self.m, self.k
        G = np.zeros((2 + m + k, self.n_free))
        G[0, 0] = 1.0
        G[1 : 1 + m, 1 : 1 + m] = np.eye(m)
        G[1 + m, 1 + m] = -np.exp(rho)
        G[2 + m : 1 + m + k, 2 + m :] = np.eye(k - 1)
        G[1 + m + k, 2 + m :] = -1.0
        return G

    def transform(self):
        return Transform(self.forward, self.jacobian)

    def params(self, theta):
        lnb, dum, rho, bf = self.split(theta)
        return CesVarParams(lnb, _r_from_rho(rho), self.weights(bf), dum, degree=self.degree)

    def theta_from(self, p: CesVarParams):
        return np.concatenate([[p.ln_b], p.dummy_coef, [_rho_from_r(p.r)], p.weights[:-1]])


def _dummy_matrix(D, n, m):
    if m == 0:
        return np.zeros((n, 0))
    D = np.asarray(D, dtype=float)
    return D.reshape(n, m)


def _intercept_start(z, D):
    """Least-squares [intercept, dummies] for target z."""
    A = np.column_stack([np.ones(z.size), D])
    return np.linalg.lstsq(A, z, rcond=None)[0]


# -- mean problems -----------------------------------------------------------


def mean_problem(X, y, D, layout: MeanLayout, space="log", weights=None, options=None, x0=None):
    """NLS problem for ln y (``space="log"``) or y (``"level"``) on the CES mean.

    ``weights`` multiplies each residual (and Jacobian row); used at stage 3.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = y.size
    logx = np.log(X)
    D = _dummy_matrix(D, n, layout.m)
    m, k = layout.m, layout.k
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    target = np.log(y) if space == "log" else y
    if space not in ("log", "level"):
        raise ValueError(f"unknown space {space!r}")

    def pieces(theta):
        lna, dum, rho, phi = layout.split(theta)
        r = _r_from_rho(rho)
        alpha = _softmax(phi)
        G, dG_dr, E, _ = ces_log_kernel(logx, r, alpha)
        return lna + D @ dum + G, r, alpha, dG_dr, E, rho

    def residuals(theta):
        lm = pieces(theta)[0]
        fit = lm if space == "log" else np.exp(lm)
        return w * (target - fit)

    def jacobian(theta):
        lm, r, alpha, dG_dr, E, rho = pieces(theta)
        J = np.empty((n, layout.n_free))
        J[:, 0] = 1.0
        J[:, 1 : 1 + m] = D
        J[:, 1 + m] = dG_dr * (-np.exp(rho))
        J[:, 2 + m :] = E[:, : k - 1] * alpha[: k - 1]
        scale = -w if space == "log" else -w * np.exp(lm)
        return J * scale[:, None]

    return NlsProblem(
        residuals=residuals,
        x0=np.zeros(layout.n_free) if x0 is None else np.asarray(x0, dtype=float),
        jacobian=jacobian,
        transform=layout.transform(),
        names=layout.names,
        free_names=layout.free_names,
        options=options or NlsOptions(),
    )


def mean_starts(X, y, D, layout: MeanLayout, r_grid=DEFAULT_R_GRID):
    """Equal shares, r from the grid, intercept/dummies by least squares on
    ln y minus the equal-share kernel."""
    logx = np.log(np.asarray(X, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    D = _dummy_matrix(D, ly.size, layout.m)
    eq = np.full(layout.k, 1.0 / layout.k)
    starts = []
    for r in r_grid:
        G = ces_log_kernel(logx, r, eq)[0]
        c = _intercept_start(ly - G, D)
        starts.append(np.concatenate([c, [_rho_from_r(r)], np.zeros(layout.k - 1)]))
    return starts


# -- variance problems -------------------------------------------------------


def variance_problem(X, u2, D, layout: VarLayout, space="log", options=None, x0=None):
    """NLS of ln u2 on ln h (``space="log"``) or of u2 on h (``"level"``)."""
    X = np.asarray(X, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    n = u2.size
    logx = np.log(X)
    D = _dummy_matrix(D, n, layout.m)
    m, k, g = layout.m, layout.k, layout.degree
    if space not in ("log", "level"):
        raise ValueError(f"unknown stage-2 space {space!r}")
    target = np.log(u2) if space == "log" else u2

    def pieces(theta):
        lnb, dum, rho, bf = layout.split(theta)
        r = _r_from_rho(rho)
        beta = layout.weights(bf)
        G, dG_dr, E, ok = ces_log_kernel(logx, r, beta)
        return 2.0 * (lnb + D @ dum) + g * G, dG_dr, E, ok, rho

    def residuals(theta):
        lh, _, _, ok, _ = pieces(theta)
        if not ok.all():
            return np.full(n, np.nan)
        return target - (lh if space == "log" else np.exp(lh))

    def jacobian(theta):
        lh, dG_dr, E, ok, rho = pieces(theta)
        J = np.empty((n, layout.n_free))
        J[:, 0] = 2.0
        J[:, 1 : 1 + m] = 2.0 * D
        J[:, 1 + m] = g * dG_dr * (-np.exp(rho))
        J[:, 2 + m :] = g * (E[:, : k - 1] - E[:, k - 1 : k])
        scale = -np.ones(n) if space == "log" else -np.exp(lh)
        return J * scale[:, None]

    return NlsProblem(
        residuals=residuals,
        x0=np.zeros(layout.n_free) if x0 is None else np.asarray(x0, dtype=float),
        jacobian=jacobian,
        transform=layout.transform(),
        names=layout.names,
        free_names=layout.free_names,
        options=options or NlsOptions(),
    )


def variance_starts(X, u2, D, layout: VarLayout, space="log", r_grid=DEFAULT_R_GRID):
    logx = np.log(np.asarray(X, dtype=float))
    u2 = np.asarray(u2, dtype=float)
    D = _dummy_matrix(D, u2.size, layout.m)
    eq = np.full(layout.k, 1.0 / layout.k)
    lu = np.log(u2)
    starts = []
    for r in r_grid:
        G = layout.degree * ces_log_kernel(logx, r, eq)[0]
        c = _intercept_start((lu - G) / 2.0, D)
        if space == "level":
            # ln mean(u2) rather than mean ln(u2)
            c[0] += 0.5 * (np.log(np.mean(u2)) - np.mean(lu))
        starts.append(np.concatenate([c, [_rho_from_r(r)], eq[:-1]]))
    return starts


# -- threshold mean ----------------------------------------------------------


@dataclass(frozen=True)
class ThresholdLayout:
    base: MeanLayout
    x_min: tuple

    @property
    def k(self):
        return self.base.k

    @property
    def n_free(self):
        return self.base.n_free + self.k

    @property
    def names(self):
        return self.base.names + tuple(f"b{j + 1}" for j in range(self.k))

    @property
    def free_names(self):
        return self.base.free_names + tuple(f"log_gap{j + 1}" for j in range(self.k))

    def split(self, theta):
        nb = self.base.n_free
        return theta[:nb], theta[nb:]

    def thresholds(self, tau):
        return np.asarray(self.x_min) - np.exp(tau)

    def forward(self, theta):
        tb, tau = self.split(theta)
        return np.concatenate([self.base.forward(tb), self.thresholds(tau)])

    def jacobian(self, theta):
        tb, tau = self.split(theta)
        Gb = self.base.jacobian(tb)
        out = np.zeros((Gb.shape[0] + self.k, self.n_free))
        out[: Gb.shape[0], : Gb.shape[1]] = Gb
        out[Gb.shape[0] :, Gb.shape[1] :] = np.diag(-np.exp(tau))
        return out

    def params(self, theta):
        tb, tau = self.split(theta)
        return ThresholdParams(self.base.params(tb), self.thresholds(tau))


def threshold_problem(X, y, D, layout: ThresholdLayout, options=None, x0=None):
    """Log-space NLS of ln y on the threshold-shifted CES mean."""
    X = np.asarray(X, dtype=float)
    ly = np.log(np.asarray(y, dtype=float))
    n = ly.size
    bl = layout.base
    D = _dummy_matrix(D, n, bl.m)
    m, k = bl.m, bl.k

    def pieces(theta):
        tb, tau = layout.split(theta)
        lna, dum, rho, phi = bl.split(tb)
        r = _r_from_rho(rho)
        alpha = _softmax(phi)
        gap = X - layout.thresholds(tau)
        logx = np.log(gap)
        G, dG_dr, E, _ = ces_log_kernel(logx, r, alpha)
        return lna + D @ dum + G, r, alpha, dG_dr, E, rho, tau, gap

    def residuals(theta):
        return ly - pieces(theta)[0]

    def jacobian(theta):
        lm, r, alpha, dG_dr, E, rho, tau, gap = pieces(theta)
        J = np.empty((n, layout.n_free))
        J[:, 0] = 1.0
        J[:, 1 : 1 + m] = D
        J[:, 1 + m] = dG_dr * (-np.exp(rho))
        J[:, 2 + m : bl.n_free] = E[:, : k - 1] * alpha[: k - 1]
        # dG/dx_j = alpha_j e^{z_j} / gap_j ; db_j/dtau_j = -e^tau_j ; dgap/db = -1
        wgt = alpha * (1.0 + r * E)
        J[:, bl.n_free :] = wgt / gap * np.exp(tau)
        return -J

    return NlsProblem(
        residuals=residuals,
        x0=np.zeros(layout.n_free) if x0 is None else np.asarray(x0, dtype=float),
        jacobian=jacobian,
        transform=Transform(layout.forward, layout.jacobian),
        names=layout.names,
        free_names=layout.free_names,
        options=options or NlsOptions(),
    )


def threshold_starts(X, y, D, layout: ThresholdLayout, r_grid=DEFAULT_R_GRID, fractions=(0.0, 0.5)):
    X = np.asarray(X, dtype=float)
    xmin = np.asarray(layout.x_min)
    starts = []
    for frac in fractions:
        b0 = frac * xmin
        tau0 = np.log(xmin - b0)
        for s in mean_starts(X - b0, y, D, layout.base, r_grid):
            starts.append(np.concatenate([s, tau0]))
    return starts
