"""Damped Gauss-Newton (Levenberg-Marquardt) nonlinear least squares.

Problems are posed in an unconstrained parameter space; a :class:`Transform`
maps unconstrained parameters to the reported (constrained) ones and the
covariance is carried across with the delta method.
"""

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from .errors import EstimationError, RankDeficientError

__all__ = [
    "NlsOptions",
    "Transform",
    "NlsProblem",
    "FitResult",
    "solve_nls",
    "multi_start",
    "numerical_jacobian",
]


@dataclass(frozen=True)
class NlsOptions:
    max_iter: int = 500
    ftol: float = 1e-10  # relative SSR change on an accepted step
    xtol: float = 1e-10  # relative step size that must accompany the ftol exit
    gtol: float = 1e-8  # max cosine between residual and Jacobian columns
    lambda0: float = 1e-3
    lambda_factor: float = 10.0
    lambda_max: float = 1e16
    rank_rcond: float = 1e-12


@dataclass(frozen=True)
class Transform:
    """Map from unconstrained to reported parameters, with its Jacobian."""

    forward: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]


IDENTITY = Transform(lambda t: np.array(t, dtype=float), lambda t: np.eye(len(t)))


@dataclass
class NlsProblem:
    """Residual vector r(theta) to be minimized in the sum of squares.

    ``residuals`` may return non-finite values to signal an infeasible point;
    such trial steps are rejected by the damping loop.
    """

    residuals: Callable[[np.ndarray], np.ndarray]
    x0: np.ndarray
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    transform: Transform = IDENTITY
    names: Optional[Sequence[str]] = None
    free_names: Optional[Sequence[str]] = None
    options: NlsOptions = field(default_factory=NlsOptions)


@dataclass(frozen=True)
class FitResult:
    names: tuple
    estimates: np.ndarray
    se: np.ndarray
    cov: np.ndarray
    residuals: np.ndarray
    ssr: float
    sigma2: float
    n_obs: int
    n_params: int
    iterations: int
    converged: bool
    grad_norm: float
    grad_cosine: float
    theta: np.ndarray
    message: str = ""
    trace: tuple = ()
    params: object = None
    fitted: Optional[np.ndarray] = None
    info: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return float(self.estimates[self.names.index(name)])

    def stderr(self, name):
        return float(self.se[self.names.index(name)])

    def as_dict(self):
        return {n: (float(e), float(s)) for n, e, s in zip(self.names, self.estimates, self.se)}

    @property
    def pvalues(self):
        """Two-sided p-values of estimate/SE against the standard normal."""
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.abs(self.estimates / self.se)
        return 2.0 * stats.norm.sf(z)


def numerical_jacobian(fun, theta, rel_step=1e-6):
    """Central-difference Jacobian of a vector function."""
    theta = np.asarray(theta, dtype=float)
    f0 = np.asarray(fun(theta), dtype=float)
    J = np.empty((f0.size, theta.size))
    for j in range(theta.size):
        h = rel_step * max(1.0, abs(theta[j]))
        tp = theta.copy()
        tm = theta.copy()
        tp[j] += h
        tm[j] -= h
        J[:, j] = (np.asarray(fun(tp)) - np.asarray(fun(tm))) / (2.0 * h)
    return J


def _grad_measures(J, r):
    g = J.T @ r
    rn = np.linalg.norm(r)
    cn = np.linalg.norm(J, axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(cn > 0, np.abs(g) / (cn * rn), 0.0) if rn > 0 else np.zeros_like(g)
    return float(np.max(np.abs(g), initial=0.0)), float(np.max(cos, initial=0.0))


def _ssr(r):
    if not np.all(np.isfinite(r)):
        return np.inf
    return float(r @ r)


def _covariance(J, sigma2, transform_jac, rcond, free_names):
    U, s, Vt = np.linalg.svd(J, full_matrices=False)
    if s.size == 0 or s[0] == 0.0 or s[-1] <= rcond * s[0]:
        null = Vt[-1]
        big = np.argsort(-np.abs(null))
        involved = [free_names[i] for i in big if abs(null[i]) > 0.2] or [free_names[big[0]]]
        raise RankDeficientError(
            "Jacobian rank-deficient; null direction involves "
            + ", ".join(f"{free_names[i]}:{null[i]:+.3f}" for i in big if abs(null[i]) > 0.2),
            involved,
        )
    cov_u = sigma2 * (Vt.T / s**2) @ Vt
    G = transform_jac
    cov = G @ cov_u @ G.T
    cov = 0.5 * (cov + cov.T)
    return cov


def _jac_at(jac, theta):
    J = np.asarray(jac(theta), dtype=float)
    if not np.all(np.isfinite(J)):
        raise FloatingPointError("non-finite Jacobian at current estimate")
    return J


def solve_nls(problem: NlsProblem) -> FitResult:
    """Minimize ||r(theta)||^2 with a Levenberg-Marquardt damping schedule.

    The step solves ``(J'J + lam * diag(J'J)) d = -J'r``; ``lam`` starts at
    ``options.lambda0`` and is divided by ``lambda_factor`` after an accepted
    step and multiplied by it after a rejected one.
    """
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        return _solve_nls(problem)


def _solve_nls(problem):
    opt = problem.options
    res = problem.residuals
    jac = problem.jacobian or (lambda t: numerical_jacobian(res, t))
    theta = np.array(problem.x0, dtype=float)
    p = theta.size
    free_names = list(problem.free_names or [f"theta[{i}]" for i in range(p)])

    r = np.asarray(res(theta), dtype=float)
    n = r.size
    if n < p + 1:
        raise ValueError(f"insufficient observations: {n} for {p} parameters")
    ssr = _ssr(r)
    if not np.isfinite(ssr):
        raise ValueError("residuals are not finite at the starting point")
    ssr0 = ssr
    J = _jac_at(jac, theta)

    lam = opt.lambda0
    path = [ssr]
    converged = False
    message = "maximum iterations reached"
    it = 0
    while it < opt.max_iter:
        if np.sqrt(ssr) <= 1e-14 * max(1.0, np.sqrt(ssr0)):
            converged, message = True, "zero residual"
            break
        _, cos = _grad_measures(J, r)
        if cos < opt.gtol:
            converged, message = True, "gradient tolerance"
            break
        g = J.T @ r
        A = J.T @ J
        d = np.diag(A).copy()
        dmax = d.max() if d.size else 0.0
        d = np.maximum(d, 1e-12 * dmax if dmax > 0 else 1.0)
        it += 1
        accepted = False
        while lam <= opt.lambda_max:
            try:
                step = np.linalg.solve(A + lam * np.diag(d), -g)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(A + lam * np.diag(d), -g, rcond=None)[0]
            trial = theta + step
            r_new = np.asarray(res(trial), dtype=float)
            ssr_new = _ssr(r_new)
            if ssr_new < ssr:
                accepted = True
                break
            lam *= opt.lambda_factor
        if not accepted:
            _, cos = _grad_measures(J, r)
            converged = cos < np.sqrt(opt.gtol)
            message = "stalled: no decrease at maximum damping"
            break
        rel = (ssr - ssr_new) / ssr
        small_step = np.linalg.norm(step) <= opt.xtol * (np.linalg.norm(theta) + opt.xtol)
        theta, r, ssr = trial, r_new, ssr_new
        path.append(ssr)
        J = _jac_at(jac, theta)
        lam = max(lam / opt.lambda_factor, 1e-15)
        if rel < opt.ftol and small_step:
            converged, message = True, "relative SSR tolerance"
            break

    if converged:
        # one undamped Gauss-Newton step; exact for problems linear in theta
        step = np.linalg.lstsq(J, -r, rcond=None)[0]
        trial = theta + step
        r_new = np.asarray(res(trial), dtype=float)
        ssr_new = _ssr(r_new)
        # at the optimum the two SSRs differ only by rounding
        if ssr_new <= ssr * (1.0 + opt.ftol):
            J_new = jac(trial)
            if np.all(np.isfinite(J_new)):
                theta, r, ssr, J = trial, r_new, ssr_new, np.asarray(J_new, dtype=float)
                path.append(ssr)

    grad_norm, cos = _grad_measures(J, r)
    sigma2 = ssr / (n - p)
    tj = np.asarray(problem.transform.jacobian(theta), dtype=float)
    cov = _covariance(J, sigma2, tj, opt.rank_rcond, free_names)
    est = np.asarray(problem.transform.forward(theta), dtype=float)
    names = tuple(problem.names or [f"b{i}" for i in range(est.size)])
    return FitResult(
        names=names,
        estimates=est,
        se=np.sqrt(np.clip(np.diag(cov), 0.0, None)),
        cov=cov,
        residuals=r,
        ssr=ssr,
        sigma2=sigma2,
        n_obs=n,
        n_params=p,
        iterations=it,
        converged=converged,
        grad_norm=grad_norm,
        grad_cosine=cos,
        theta=theta,
        message=message,
        trace=(ssr,),
        info={"ssr_path": tuple(path)},
    )


def multi_start(problem: NlsProblem, starts) -> FitResult:
    """Run :func:`solve_nls` from each start and keep the best.

    The winner is the converged fit with the lowest SSR; fits within a
    relative 1e-10 of that SSR count as tied and the tie goes to the fewest
    iterations, then to the earliest start. If no start converges the best
    non-converged fit is returned (``converged=False``). ``trace`` holds the
    per-start SSR, NaN for starts that raised.
    """
    starts = [np.asarray(s, dtype=float) for s in starts]
    if not starts:
        raise ValueError("empty starting grid")
    fits, failures, trace = [], [], []
    for i, s in enumerate(starts):
        try:
            fit = solve_nls(replace(problem, x0=s))
        except (ValueError, ArithmeticError, FloatingPointError, np.linalg.LinAlgError) as exc:
            failures.append((i, str(exc)))
            trace.append(np.nan)
            continue
        fits.append((i, fit))
        trace.append(fit.ssr)
    if not fits:
        raise EstimationError("all starts failed", failures)
    pool = [(i, f) for i, f in fits if f.converged] or fits
    best_ssr = min(f.ssr for _, f in pool)
    tol = 1e-10 * best_ssr
    tied = [(i, f) for i, f in pool if f.ssr <= best_ssr + tol]
    i_best, best = min(tied, key=lambda t: (t[1].iterations, t[0]))
    return replace(best, trace=tuple(trace))
