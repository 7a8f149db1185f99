import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cesrisk.errors import CesDomainError
from cesrisk.model import (
    CesMeanParams,
    CesVarParams,
    InputPoint,
    ThresholdParams,
    dvar_dinput,
    dvar_mp_dinput,
    eval_log_mean,
    eval_log_variance,
    eval_mean,
    eval_threshold_mean,
    eval_variance,
    jp_dvar_mp_dinput,
    jp_var_mp,
    lognormal_var_exp,
    marginal_product,
    mean_values,
    var_marginal_product,
    variance_partial,
    variance_values,
)
from cesrisk.synth import Design, SyntheticSpec, generate

LN2 = math.log(2.0)


def pt(*x, dummy=()):
    return InputPoint(np.array(x, dtype=float), np.array(dummy, dtype=float))


def fd(fun, x, i, h=1e-6):
    up = np.array(x, dtype=float)
    dn = up.copy()
    step = h * max(1.0, abs(up[i]))
    up[i] += step
    dn[i] -= step
    return (fun(up) - fun(dn)) / (2 * step)


# -- evaluation oracles -------------------------------------------------------


def test_linear_case():
    p = CesMeanParams(LN2, 1.0, (0.5, 0.5), [0.0])
    assert eval_mean(p, pt(4, 6)) == pytest.approx(10.0, rel=1e-14)
    assert eval_log_mean(p, pt(4, 6)) == pytest.approx(math.log(10.0), rel=1e-14)


@pytest.mark.parametrize("r", [-3.0, -0.5, 1e-9, 0.3, 0.9])
def test_equal_inputs_collapse(r):
    p = CesMeanParams(math.log(3.0), r, (0.2, 0.8), [0.0])
    assert eval_mean(p, pt(7, 7)) == pytest.approx(21.0, rel=1e-12)
    assert eval_log_mean(p, pt(7, 7)) == pytest.approx(math.log(21.0), rel=1e-12)


def test_cobb_douglas_limit():
    p = CesMeanParams(0.0, 0.0, (0.5, 0.5))
    assert eval_mean(p, pt(4, 9)) == pytest.approx(6.0, rel=1e-14)


def test_dummy_shift_multiplies():
    p = CesMeanParams(LN2, 1.0, (0.5, 0.5), [0.25])
    assert eval_mean(p, pt(4, 6, dummy=[1.0])) == pytest.approx(10.0 * math.exp(0.25))
    assert eval_mean(p, pt(4, 6, dummy=[0.0])) == pytest.approx(10.0)


def test_variance_examples():
    assert eval_variance(CesVarParams(0.0, 1.0, (0.5, 0.5), [0.0]), pt(4, 6)) == pytest.approx(5.0)
    assert eval_variance(CesVarParams(math.log(3), 1.0, (1.3, -0.3), [0.0]), pt(2, 2)) == pytest.approx(18.0)


def test_log_consistency_random(rng):
    for _ in range(50):
        a = rng.uniform(0.05, 0.95)
        p = CesMeanParams(rng.normal(), rng.uniform(-3, 0.95), (a, 1 - a))
        x = pt(*rng.uniform(0.5, 50, 2))
        assert eval_log_mean(p, x) == pytest.approx(math.log(eval_mean(p, x)), rel=1e-12, abs=1e-12)


def test_negative_weight_variance_kernel_domain_error():
    v = CesVarParams(0.0, 1.0, (2.0, -1.0))
    with pytest.raises(CesDomainError, match="variance kernel non-positive at point"):
        eval_variance(v, pt(1, 5))


def test_zero_scale_variance_is_zero():
    v = CesVarParams(-np.inf, 0.5, (0.5, 0.5))
    assert eval_variance(v, pt(3, 4)) == 0.0


def test_vectorized_matches_pointwise(rng):
    p = CesMeanParams(1.2, -0.7, (0.3, 0.7), [0.4])
    v = CesVarParams(-1.0, 0.5, (1.1, -0.1), [0.2])
    X = rng.uniform(1, 30, size=(25, 2))
    D = rng.integers(0, 2, size=(25, 1)).astype(float)
    f = mean_values(p, X, D)
    h = variance_values(v, X, D)
    for t in range(25):
        assert f[t] == pytest.approx(eval_mean(p, pt(*X[t], dummy=D[t])), rel=1e-13)
        assert h[t] == pytest.approx(eval_variance(v, pt(*X[t], dummy=D[t])), rel=1e-13)


def test_invalid_parameters_rejected():
    with pytest.raises(ValueError):
        CesMeanParams(0.0, 0.5, (0.6, 0.6))
    with pytest.raises(ValueError):
        CesMeanParams(0.0, 0.5, (1.2, -0.2))
    with pytest.raises(ValueError):
        CesVarParams(0.0, 0.5, (0.6, 0.6))
    with pytest.raises(ValueError):
        CesVarParams(0.0, 0.5, (0.5, 0.5), degree=-1)
    with pytest.raises(CesDomainError):
        pt(0.0, 3.0)


def test_overflow_names_exponent():
    p = CesMeanParams(700.0, 0.5, (0.5, 0.5))
    with pytest.raises(CesDomainError, match="r=0.5"):
        eval_mean(p, pt(1e300, 1e300))


# -- nesting -------------------------------------------------------------------


def test_leontief_approach():
    p200 = CesMeanParams(0.0, -200.0, (0.5, 0.5))
    p20 = CesMeanParams(0.0, -20.0, (0.5, 0.5))
    f200 = eval_mean(p200, pt(2, 10))
    f20 = eval_mean(p20, pt(2, 10))
    assert abs(f200 - 2.0) / 2.0 < 0.01
    assert abs(f20 - f200) / f200 < 0.05
    values = [eval_mean(CesMeanParams(0.0, r, (0.5, 0.5)), pt(2, 10)) for r in (-1, -5, -20, -200)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_switch_continuity(rng):
    tau = 1e-8
    for _ in range(30):
        a = rng.uniform(0.05, 0.95)
        x = pt(*rng.uniform(0.1, 100, 2))
        up = eval_mean(CesMeanParams(0.3, tau, (a, 1 - a)), x)
        dn = eval_mean(CesMeanParams(0.3, -tau, (a, 1 - a)), x)
        cd = eval_mean(CesMeanParams(0.3, 0.0, (a, 1 - a)), x)
        assert abs(up - dn) / cd <= 1e-6


def test_degree_two_variance_nests_multiplicative_model():
    # y = f e^eps has V(y) = f^2 V(e^eps): a degree-2 variance kernel with
    # the mean's exponent and shares and lnB = lnA + ln V(e^eps) / 2
    mean = CesMeanParams(1.1, 0.35, (0.7, 0.3))
    ve = lognormal_var_exp(0.2)
    var = CesVarParams(mean.ln_a + 0.5 * math.log(ve), mean.r, mean.shares, degree=2.0)
    x = pt(5, 17)
    f = eval_mean(mean, x)
    assert eval_variance(var, x) == pytest.approx(f * f * ve, rel=1e-12)
    for i in range(2):
        assert variance_partial(var, x, i) == pytest.approx(dvar_dinput(mean, ve, x, i), rel=1e-12)


def test_degree_zero_is_homoscedastic():
    v = CesVarParams(0.5, -0.4, (0.3, 0.7), degree=0.0)
    assert eval_variance(v, pt(1, 2)) == pytest.approx(math.exp(1.0))
    assert eval_variance(v, pt(40, 0.2)) == pytest.approx(math.exp(1.0))
    assert variance_partial(v, pt(3, 4), 0) == 0.0


# -- derivative examples ------------------------------------------------------


def test_marginal_product_examples():
    p = CesMeanParams(LN2, 1.0, (0.7, 0.3))
    assert marginal_product(p, pt(3, 11), 0) == pytest.approx(1.4)
    sym = CesMeanParams(LN2, -0.6, (0.5, 0.5))
    assert marginal_product(sym, pt(5, 5), 1) == pytest.approx(1.0)


def test_marginal_product_finite_difference():
    p = CesMeanParams(math.log(1.5), 0.5, (0.3, 0.7))
    f = lambda x: eval_mean(p, InputPoint(x))
    for i in range(2):
        assert marginal_product(p, pt(2, 5), i) == pytest.approx(fd(f, [2, 5], i), rel=1e-6)


def test_variance_derivative_examples():
    p = CesMeanParams(0.0, 1.0, (0.5, 0.5))
    assert dvar_dinput(p, 0.0, pt(4, 6), 0) == 0.0
    assert dvar_dinput(p, 1.0, pt(4, 6), 0) == pytest.approx(5.0)
    assert var_marginal_product(p, 0.0, pt(4, 6), 0) == 0.0
    lin = CesMeanParams(math.log(3), 1.0, (0.25, 0.75))
    for x in (pt(1, 2), pt(30, 0.5)):
        assert var_marginal_product(lin, 0.7, x, 1) == pytest.approx(9 * 0.75**2 * 0.7)
    assert dvar_mp_dinput(p, 0.0, pt(4, 6), 0) == 0.0


def test_dvar_mp_dinput_finite_difference():
    p = CesMeanParams(0.0, 0.9, (0.5, 0.5))
    g = lambda x: var_marginal_product(p, 1.0, InputPoint(x), 0)
    assert dvar_mp_dinput(p, 1.0, pt(3, 3), 0) == pytest.approx(fd(g, [3, 3], 0), rel=1e-5)


def test_jp_var_mp_examples():
    mean = CesMeanParams(0.0, 0.5, (0.5, 0.5))
    lin = CesVarParams(0.0, 1.0, (0.5, 0.5))
    assert jp_var_mp(mean, lin, pt(4, 6), 0) == pytest.approx(0.0125)
    flat = CesVarParams(0.0, 1.0, (0.0, 1.0))
    assert jp_var_mp(mean, flat, pt(4, 6), 0) == 0.0
    assert variance_partial(flat, pt(4, 6), 0) == 0.0


def test_risk_reducing_weight_gives_negative_partial():
    v = CesVarParams(0.0, 0.5, (1.2, -0.2))
    assert variance_partial(v, pt(10, 40), 1) < 0
    assert variance_partial(v, pt(10, 40), 0) > 0


def test_jp_derivatives_finite_difference(rng):
    mean = CesMeanParams(0.0, 0.4, (0.6, 0.4))
    for _ in range(20):
        b = rng.uniform(-0.3, 1.3)
        var = CesVarParams(rng.normal(), rng.uniform(-2, 0.9), (b, 1 - b), degree=rng.uniform(0.5, 2))
        x = rng.uniform(2, 20, 2)
        try:
            eval_variance(var, InputPoint(x))
        except CesDomainError:
            continue
        h = lambda z: eval_variance(var, InputPoint(z))
        s = lambda z: jp_var_mp(mean, var, InputPoint(z), 0)
        assert variance_partial(var, InputPoint(x), 0) == pytest.approx(fd(h, x, 0), rel=1e-6, abs=1e-12)
        assert jp_dvar_mp_dinput(mean, var, InputPoint(x), 0) == pytest.approx(fd(s, x, 0), rel=1e-5, abs=1e-12)


def test_index_checked():
    p = CesMeanParams(0.0, 0.5, (0.5, 0.5))
    with pytest.raises(IndexError):
        marginal_product(p, pt(1, 2), 2)
    with pytest.raises(ValueError):
        dvar_dinput(p, -1.0, pt(1, 2), 0)


# -- sign laws -----------------------------------------------------------------


@settings(max_examples=300, deadline=None)
@given(
    ln_a=st.floats(-3, 3),
    r=st.floats(-10, 0.99),
    a=st.floats(0.01, 0.99),
    x=st.tuples(st.floats(0.05, 500), st.floats(0.05, 500)),
    ve=st.floats(1e-3, 5),
    i=st.integers(0, 1),
)
def test_multiplicative_sign_laws(ln_a, r, a, x, ve, i):
    p = CesMeanParams(ln_a, r, (a, 1 - a))
    point = InputPoint(np.array(x))
    assert dvar_dinput(p, ve, point, i) > 0
    assert dvar_mp_dinput(p, ve, point, i) < 0


# -- simulation oracles ---------------------------------------------------------


def test_lognormal_var_exp_simulation():
    e = np.exp(np.random.default_rng(0).normal(size=1_000_000))
    assert lognormal_var_exp() == pytest.approx(math.e * (math.e - 1))
    se = e.var() * 0.05  # heavy tail: generous Monte Carlo band
    assert abs(e.var() - lognormal_var_exp()) < se


def test_variance_matches_simulated_draws():
    mean = CesMeanParams(3.4554, 0.4094, (0.784, 0.216))
    var = CesVarParams(2.0, -0.3, (1.04, -0.04))
    n = 100_000
    x = np.array([24.0, 121.0])
    design = Design(np.full(n, 1971), np.tile(x, (n, 1)))
    d = generate(SyntheticSpec(mean, var, design, seed=21))
    h = eval_variance(var, pt(*x))
    sample = d.yield_.var(ddof=1)
    assert abs(sample - h) < 3 * h * math.sqrt(2.0 / (n - 1))


def test_jp_var_mp_simulation():
    mean = CesMeanParams(1.0, 0.3, (0.6, 0.4))
    var = CesVarParams(0.2, -0.5, (1.3, -0.3), degree=1.0)
    x = np.array([6.0, 9.0])
    delta = 1e-5
    xd = x + np.array([delta, 0.0])
    eps = np.random.default_rng(2).normal(size=100_000)
    y0 = eval_mean(mean, InputPoint(x)) + math.sqrt(eval_variance(var, InputPoint(x))) * eps
    y1 = eval_mean(mean, InputPoint(xd)) + math.sqrt(eval_variance(var, InputPoint(xd))) * eps
    target = jp_var_mp(mean, var, InputPoint(x), 0)
    sample = ((y1 - y0) / delta).var(ddof=1)
    assert abs(sample - target) < 3 * target * math.sqrt(2.0 / eps.size) + 1e-6 * target


# -- thresholds -----------------------------------------------------------------


def test_threshold_examples():
    base = CesMeanParams(0.4, -0.8, (0.3, 0.7))
    assert eval_threshold_mean(ThresholdParams(base, (0, 0)), pt(5, 8)) == eval_mean(base, pt(5, 8))
    assert eval_threshold_mean(ThresholdParams(base, (1, 2)), pt(5, 8)) == pytest.approx(eval_mean(base, pt(4, 6)))
    with pytest.raises(CesDomainError, match="input below threshold"):
        eval_threshold_mean(ThresholdParams(base, (1, 1)), pt(1, 5))
    with pytest.raises(ValueError):
        ThresholdParams(base, (1.0,))


def test_log_variance_helper():
    v = CesVarParams(0.3, 0.6, (0.4, 0.6), [0.5])
    x = pt(2, 3, dummy=[1.0])
    assert eval_log_variance(v, x) == pytest.approx(math.log(eval_variance(v, x)))
