"""Simulation of the composite CES model y = f(X) + h(X)^(1/2) (eps + omega).

``omega`` is an optional common shock per year (off by default); estimators
absorb year effects with dummies instead. Rows with y <= 0 are redrawn and
counted. Monte Carlo replications derive their seeds from the master seed
with ``numpy.random.SeedSequence([master, replication])``.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from itertools import product
from pathlib import Path
from typing import Callable, Union

import numpy as np

from .data import NITROGEN_SHIFT, Dataset, load_dataset, read_kv
from .errors import CesDomainError, ConfigError
from .justpope import FitOptions, run_three_stage, stage1_fit
from .model import CesMeanParams, CesVarParams, log_variance_values, mean_values

__all__ = [
    "Design",
    "SyntheticSpec",
    "ParamSummary",
    "McSummary",
    "NOISE",
    "noise_var_exp",
    "grid_design",
    "generate",
    "replication_seed",
    "monte_carlo",
    "load_spec",
    "MAX_REDRAWS",
]

log = logging.getLogger(__name__)

MAX_REDRAWS = 100
_SQRT3 = math.sqrt(3.0)


def _normal(rng, n):
    return rng.standard_normal(n)


def _uniform(rng, n):
    return rng.uniform(-_SQRT3, _SQRT3, n)


def _laplace(rng, n):
    return rng.laplace(0.0, 1.0 / math.sqrt(2.0), n)


# Each draws mean-0, variance-1 noise.
NOISE = {"normal": _normal, "uniform": _uniform, "laplace": _laplace}


def noise_var_exp(name="normal"):
    """V(e^eps) for the named unit-variance noise; inf when it does not exist."""
    if name == "normal":
        e = math.e
        return e * (e - 1.0)
    if name == "uniform":
        m1 = math.sinh(_SQRT3) / _SQRT3
        m2 = math.sinh(2 * _SQRT3) / (2 * _SQRT3)
        return m2 - m1 * m1
    if name == "laplace":
        # E e^{k eps} = 1 / (1 - k^2/2) needs |k| < sqrt(2); k = 2 fails.
        return math.inf
    raise ValueError(f"unknown noise distribution {name!r}")


@dataclass(frozen=True)
class Design:
    """Design points: per-row year and (water, nitrogen) in estimation units."""

    year: np.ndarray
    inputs: np.ndarray

    def __post_init__(self):
        year = np.array(self.year, dtype=np.int64).reshape(-1)
        X = np.array(self.inputs, dtype=float)
        if X.ndim != 2 or X.shape[0] != year.size:
            raise ValueError(f"inputs must be ({year.size}, k), got {X.shape}")
        bad = np.flatnonzero(~np.all(X > 0, axis=1))
        if bad.size:
            raise CesDomainError(f"design point {X[bad[0]].tolist()} has a non-positive input")
        year.flags.writeable = False
        X.flags.writeable = False
        object.__setattr__(self, "year", year)
        object.__setattr__(self, "inputs", X)

    @property
    def n(self):
        return self.year.size

    @property
    def dummy_years(self):
        yrs = np.unique(self.year)
        return tuple(int(y) for y in yrs[1:])

    @property
    def dummies(self):
        yrs = self.dummy_years
        if not yrs:
            return np.zeros((self.n, 0))
        return np.column_stack([(self.year == y).astype(float) for y in yrs])


def grid_design(water, nitrogen, years=(1970,), replicates=1, nitrogen_shift=NITROGEN_SHIFT):
    """Full factorial of water x raw nitrogen x years, repeated ``replicates`` times."""
    rows = [(yr, w, n + nitrogen_shift) for _ in range(replicates) for yr, w, n in product(years, water, nitrogen)]
    if not rows:
        raise ValueError("empty design")
    arr = np.array(rows, dtype=float)
    return Design(arr[:, 0].astype(np.int64), arr[:, 1:])


@dataclass(frozen=True)
class SyntheticSpec:
    mean: CesMeanParams
    var: CesVarParams
    design: Design
    noise: Union[str, Callable] = "normal"
    year_shock_sd: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.noise, str) and self.noise not in NOISE:
            raise ValueError(f"unknown noise distribution {self.noise!r}")
        if not self.year_shock_sd >= 0:
            raise ValueError("year_shock_sd must be non-negative")
        m = len(self.design.dummy_years)
        for label, p in (("mean", self.mean), ("var", self.var)):
            if p.dummy_coef.size not in (0, m):
                raise ValueError(f"{label} dummy_coef has {p.dummy_coef.size} values, design has {m} non-base years")


def _draw(spec, rng, n):
    fn = NOISE[spec.noise] if isinstance(spec.noise, str) else spec.noise
    return np.asarray(fn(rng, n), dtype=float)


def _dummy_arg(p, D):
    return D if p.dummy_coef.size else None


def generate(spec: SyntheticSpec) -> Dataset:
    """Draw one dataset. ``meta["redraws"]`` counts rows redrawn for y <= 0."""
    X, D = spec.design.inputs, spec.design.dummies
    if X.shape[1] != 2:
        raise ValueError("datasets carry exactly two inputs (water, nitrogen)")
    f = mean_values(spec.mean, X, _dummy_arg(spec.mean, D))
    try:
        lh = log_variance_values(spec.var, X, _dummy_arg(spec.var, D))
    except CesDomainError:
        for x in X:
            try:
                log_variance_values(spec.var, x[None, :])
            except CesDomainError:
                raise CesDomainError(f"variance undefined at design point {x.tolist()}") from None
        raise
    sd = np.exp(0.5 * lh)

    rng = np.random.default_rng(spec.seed)
    n = X.shape[0]
    years = np.unique(spec.design.year)
    omega = np.zeros(n)
    if spec.year_shock_sd > 0:
        shocks = spec.year_shock_sd * rng.standard_normal(years.size)
        omega = shocks[np.searchsorted(years, spec.design.year)]
    y = f + sd * (_draw(spec, rng, n) + omega)
    redraws = 0
    attempts = np.zeros(n, dtype=int)
    bad = np.flatnonzero(~(y > 0))
    while bad.size:
        attempts[bad] += 1
        if attempts.max() > MAX_REDRAWS:
            i = int(np.argmax(attempts))
            raise ValueError(f"DGP produces non-positive output at design point {X[i].tolist()}")
        redraws += bad.size
        y[bad] = f[bad] + sd[bad] * (_draw(spec, rng, bad.size) + omega[bad])
        bad = bad[~(y[bad] > 0)]
    return Dataset(
        spec.design.year,
        X[:, 0],
        X[:, 1],
        y,
        site="synthetic",
        meta={"seed": spec.seed, "redraws": redraws},
    )


def replication_seed(master, rep):
    """64-bit seed for replication ``rep`` mixed from ``master``."""
    return int(np.random.SeedSequence([int(master), int(rep)]).generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class ParamSummary:
    truth: float
    mean: float
    bias: float
    rmse: float
    emp_se: float  # None with fewer than two successes
    mean_se: float
    coverage: float
    n: int

    def as_dict(self):
        return dict(self.__dict__)


@dataclass(frozen=True)
class McSummary:
    estimator: str
    replications: int
    failures: int
    stages: dict = field(default_factory=dict)
    failure_messages: tuple = ()
    redraws: int = 0

    @property
    def successes(self):
        return self.replications - self.failures

    def param(self, stage, name):
        return self.stages[stage][name]


def _truth(spec):
    mp, vp = spec.mean, spec.var
    yrs = spec.design.dummy_years
    mdum = mp.dummy_coef if mp.dummy_coef.size else np.zeros(len(yrs))
    vdum = vp.dummy_coef if vp.dummy_coef.size else np.zeros(len(yrs))
    mean = {"lnA": mp.ln_a}
    mean.update({f"A_{y}": float(c) for y, c in zip(yrs, mdum)})
    mean["r1"] = mp.r
    mean.update({f"alpha{j + 1}": float(a) for j, a in enumerate(mp.shares)})
    var = {"lnB": vp.ln_b}
    var.update({f"B_{y}": float(c) for y, c in zip(yrs, vdum)})
    var["r2"] = vp.r
    var.update({f"beta{j + 1}": float(b) for j, b in enumerate(vp.weights)})
    return mean, var


def _summarize(truth, fits):
    out = {}
    z = 1.959963984540054
    for name, t in truth.items():
        est = np.array([f[name] for f in fits])
        se = np.array([f.stderr(name) for f in fits])
        k = est.size
        out[name] = ParamSummary(
            truth=float(t),
            mean=float(est.mean()),
            bias=float(est.mean() - t),
            rmse=float(np.sqrt(np.mean((est - t) ** 2))),
            emp_se=float(est.std(ddof=1)) if k > 1 else None,
            mean_se=float(se.mean()),
            coverage=float(np.mean(np.abs(est - t) <= z * se)),
            n=k,
        )
    return out


def _fit_once(data, estimator, options):
    """Return {stage: FitResult} or raise."""
    if estimator == "stage1":
        s1 = stage1_fit(data, options)
        if not s1.converged:
            raise RuntimeError(f"stage 1 did not converge: {s1.message}")
        return {"stage1": s1}
    res = run_three_stage(data, options)
    if not res.variance_identified:
        raise RuntimeError("variance unidentified")
    fits = {"stage1": res.stage1, "stage2": res.stage2, "stage3": res.stage3}
    for k, f in fits.items():
        if not f.converged:
            raise RuntimeError(f"{k} did not converge: {f.message}")
    return fits


MC_OPTIONS = FitOptions(space="level")


def monte_carlo(spec, estimator="three-stage", replications=100, options=None):
    """Repeated generate-then-fit with bias / RMSE / coverage per parameter.

    ``estimator`` is ``"stage1"``, ``"three-stage"`` (stages 2 and 3 are
    summarized) or ``"both"`` (stages 1-3 from the same three-stage runs, so
    stage-1 and stage-3 figures are paired by replication). The mean stages
    are fit in level space by default, matching the additive generator.
    Replication failures are logged and counted; only an all-failed run raises.
    Replications are independent, so aggregation does not depend on order.
    """
    if replications < 1:
        raise ValueError("replications must be >= 1")
    if estimator not in ("stage1", "three-stage", "both"):
        raise ValueError(f"unknown estimator {estimator!r}")
    options = options or MC_OPTIONS
    collected = {}
    failures = []
    redraws = 0
    for rep in range(replications):
        sub = replace(spec, seed=replication_seed(spec.seed, rep))
        try:
            data = generate(sub)
            redraws += data.meta["redraws"]
            fits = _fit_once(data, estimator, options)
        except Exception as exc:  # counted, not fatal
            log.warning("replication %d failed: %s", rep, exc)
            failures.append(f"replication {rep}: {exc}")
            continue
        for k, f in fits.items():
            if estimator == "three-stage" and k == "stage1":
                continue
            collected.setdefault(k, []).append(f)
    if len(failures) == replications:
        raise RuntimeError(f"all {replications} replications failed; first: {failures[0]}")
    mean_truth, var_truth = _truth(spec)
    stages = {
        k: _summarize(var_truth if k == "stage2" else mean_truth, fits) for k, fits in sorted(collected.items())
    }
    return McSummary(estimator, replications, len(failures), stages, tuple(failures), redraws)


# -- config files ------------------------------------------------------------

_KEYS = {
    "mean.lnA",
    "mean.dummy",
    "mean.r",
    "mean.shares",
    "var.lnB",
    "var.dummy",
    "var.r",
    "var.weights",
    "var.degree",
    "design",
    "design.water",
    "design.nitrogen",
    "design.years",
    "design.replicates",
    "design.file",
    "noise",
    "year_shock_sd",
    "seed",
}
_REQUIRED = ("mean.lnA", "mean.r", "mean.shares", "var.lnB", "var.r", "var.weights", "design")


def _floats(kv, key):
    try:
        return [float(v) for v in kv[key].split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {kv[key]!r}", key=key) from None


def _float(kv, key, default=None):
    if key not in kv:
        return default
    vals = _floats(kv, key)
    if len(vals) != 1:
        raise ConfigError(f"expected one number, got {kv[key]!r}", key=key)
    return vals[0]


def _int(kv, key, default):
    if key not in kv:
        return default
    try:
        return int(kv[key])
    except ValueError:
        raise ConfigError(f"expected an integer, got {kv[key]!r}", key=key) from None


def load_spec(path, seed=None):
    """Build a :class:`SyntheticSpec` from a flat key = value file.

    Vectors are comma-separated. ``design = grid`` uses ``design.water``,
    ``design.nitrogen`` (as recorded, before the +1 shift), ``design.years``
    and ``design.replicates``; ``design = file`` reads the inputs and years of
    a data file named by ``design.file`` (relative to the config file).
    """
    path = Path(path)
    kv = read_kv(path)
    for k in kv:
        if k not in _KEYS:
            raise ConfigError("unknown key", key=k)
    for k in _REQUIRED:
        if k not in kv:
            raise ConfigError("missing required key", key=k)

    kind = kv["design"]
    if kind == "grid":
        for k in ("design.water", "design.nitrogen"):
            if k not in kv:
                raise ConfigError("missing required key for grid design", key=k)
        years = tuple(int(v) for v in _floats(kv, "design.years")) if "design.years" in kv else (1970,)
        try:
            design = grid_design(
                _floats(kv, "design.water"),
                _floats(kv, "design.nitrogen"),
                years,
                _int(kv, "design.replicates", 1),
            )
        except ValueError as exc:
            raise ConfigError(str(exc), key="design.water") from None
    elif kind == "file":
        if "design.file" not in kv:
            raise ConfigError("missing required key for file design", key="design.file")
        src = Path(kv["design.file"])
        if not src.is_absolute():
            src = path.parent / src
        d = load_dataset(src)
        design = Design(d.year, d.inputs)
    else:
        raise ConfigError(f"design must be 'grid' or 'file', got {kind!r}", key="design")

    m = len(design.dummy_years)

    def dummy(key):
        vals = _floats(kv, key) if key in kv else [0.0] * m
        if len(vals) != m:
            raise ConfigError(f"expected {m} values (one per non-base year), got {len(vals)}", key=key)
        return vals

    ln_a, r1, shares, mdum = _float(kv, "mean.lnA"), _float(kv, "mean.r"), _floats(kv, "mean.shares"), dummy("mean.dummy")
    try:
        mean = CesMeanParams(ln_a, r1, shares, mdum)
    except ValueError as exc:
        raise ConfigError(str(exc), key="mean.shares") from None
    ln_b, r2, weights, vdum = _float(kv, "var.lnB"), _float(kv, "var.r"), _floats(kv, "var.weights"), dummy("var.dummy")
    degree = _float(kv, "var.degree", 1.0)
    if degree < 0:
        raise ConfigError("must be non-negative", key="var.degree")
    try:
        var = CesVarParams(ln_b, r2, weights, vdum, degree=degree)
    except ValueError as exc:
        raise ConfigError(str(exc), key="var.weights") from None
    noise = kv.get("noise", "normal")
    if noise not in NOISE:
        raise ConfigError(f"unknown noise distribution {noise!r}", key="noise")
    shock = _float(kv, "year_shock_sd", 0.0)
    if shock < 0:
        raise ConfigError("must be non-negative", key="year_shock_sd")
    if seed is None:
        seed = _int(kv, "seed", 0)
    return SyntheticSpec(mean, var, design, noise, shock, seed)
