import math

import numpy as np
import pytest
from scipy import integrate

from ubmlab.determinantal import CircleTest, FredholmProblem, equilibrium_extended_kernel, fredholm_expectation
from ubmlab.dynamics import phase_path
from ubmlab.fisher_hartwig import (ConvolutionError, FHSymbol, InsertionConfig, LogSingularity, PointSingularity,
                                   Smooth, SmoothInsertion, covariance_functional, exact_linear_covariance,
                                   fh_single_coefficients, fh_symbol_coefficients, log_widom_asymptotic,
                                   multitime_fh_rhs, toeplitz_determinant, widom_asymptotic)
from ubmlab.montecarlo import mean_and_stderr
from ubmlab.seeding import SeedTree
from ubmlab.special import fh_constant_log, keating_snaith_moment
from ubmlab.symbols import constant_symbol, cos_symbol, from_coefficients, sin_symbol, trig_symbol


# --------------------------------------------------------------------------
# coefficients


def test_half_exponent_mean():
    val = fh_single_coefficients(0.5, np.array([0]))[0]
    quad, _ = integrate.quad(lambda t: 2 * math.sin(t / 2), 0, 2 * math.pi, epsabs=1e-14)
    assert val == pytest.approx(4 / math.pi, abs=1e-14)
    assert val == pytest.approx(quad / (2 * math.pi), abs=1e-10)


@pytest.mark.parametrize("alpha", [-0.3, 0.25, 0.5, 1.7])
def test_single_coefficients_are_even(alpha):
    ks = np.arange(1, 60)
    assert np.allclose(fh_single_coefficients(alpha, ks), fh_single_coefficients(alpha, -ks), rtol=0, atol=0)


@pytest.mark.parametrize("alpha", [-0.3, 0.25, 1.7])
def test_single_coefficients_against_quadrature(alpha):
    # |1 - e^{it}|^{2a} = t^{2a} (2pi - t)^{2a} * smooth on (0, 2pi): algebraic-weight quadrature
    def smooth(t, k):
        if t <= 0 or t >= 2 * math.pi:
            return math.cos(k * t) / (2 * math.pi) ** (2 * alpha)
        return (2 * math.sin(t / 2) / (t * (2 * math.pi - t))) ** (2 * alpha) * math.cos(k * t)
    for k in (0, 1, 5, 24, 30):
        quad, _ = integrate.quad(smooth, 0, 2 * math.pi, args=(k,), weight="alg", wvar=(2 * alpha, 2 * alpha),
                                 epsabs=1e-13, limit=400)
        assert fh_single_coefficients(alpha, np.array([k]))[0] == pytest.approx(quad / (2 * math.pi), abs=1e-10)


def test_two_factor_coefficients_against_quadrature():
    a, b = 0.25, 0.35
    sym = FHSymbol(((0.0, a), (math.pi, b)))
    coeffs = fh_symbol_coefficients(sym, 40)

    # even symbol: f_hat(k) = (1/pi) int_0^pi f cos(kt), f = t^{2a} (pi - t)^{2b} * smooth
    def smooth(t, k):
        s = (2 * math.sin(t / 2) / t) ** (2 * a) if t > 0 else 1.0
        c = (2 * math.cos(t / 2) / (math.pi - t)) ** (2 * b) if t < math.pi else 1.0
        return s * c * math.cos(k * t)
    for k in (0, 1, 2, 7, 19, 40):
        quad, _ = integrate.quad(smooth, 0, math.pi, args=(k,), weight="alg", wvar=(2 * a, 2 * b),
                                 epsabs=1e-13, limit=400)
        assert abs(coeffs.coef(k) - quad / math.pi) <= 1e-8
        assert abs(coeffs.coef(-k) - coeffs.coef(k)) <= 1e-12


def test_smooth_factor_coefficients():
    v = trig_symbol(cos={1: 0.6})
    c = fh_symbol_coefficients(FHSymbol((), v), 10)
    from scipy.special import iv
    assert np.allclose(c.coeffs.real, iv(np.abs(np.arange(-10, 11)), 0.6), atol=1e-14)


def test_convolution_bound_is_enforced():
    sym = FHSymbol(((0.0, -0.2), (1.0, -0.2)))
    with pytest.raises(ConvolutionError):
        fh_symbol_coefficients(sym, 16, working_k=64)


def test_exponent_floor():
    with pytest.raises(ValueError):
        FHSymbol(((0.0, -0.5),))


# --------------------------------------------------------------------------
# Toeplitz determinants


def test_toeplitz_of_one():
    assert toeplitz_determinant(constant_symbol(1.0).padded(5), 6).value == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("gamma", [0.5, 1.0, 1.5, 2.0])
def test_heine_identity(gamma):
    c = fh_symbol_coefficients(FHSymbol(((0.0, gamma / 2),)), 40)
    for n in (1, 2, 5, 13, 32):
        res = toeplitz_determinant(c, n)
        assert res.reliable
        assert res.value == pytest.approx(keating_snaith_moment(n, gamma), rel=1e-8)


def test_strong_szego():
    a = 0.5
    c = fh_symbol_coefficients(FHSymbol((), cos_symbol(1, 2 * a)), 80)
    assert abs(toeplitz_determinant(c, 64).value / math.exp(a * a) - 1) <= 1e-6


def test_toeplitz_needs_coefficients():
    with pytest.raises(ValueError):
        toeplitz_determinant(constant_symbol(1.0), 3)


# --------------------------------------------------------------------------
# Widom asymptotics


def test_widom_single_singularity():
    alpha = 0.5
    sym = FHSymbol(((0.0, alpha),))
    c = fh_symbol_coefficients(sym, 80)
    devs = []
    for n in (16, 32, 64):
        pred = n ** (alpha ** 2) * math.exp(fh_constant_log(alpha))
        assert widom_asymptotic(sym, n) == pytest.approx(pred, rel=1e-13)
        devs.append(abs(toeplitz_determinant(c, n).value / pred - 1))
    assert devs[0] > devs[1] > devs[2]


def test_widom_smooth_only():
    a = 0.3
    assert widom_asymptotic(FHSymbol((), cos_symbol(1, 2 * a)), 50) == pytest.approx(math.exp(a * a), rel=1e-14)


def test_widom_non_centered_smooth_part():
    a, c, n = 0.3, 0.2, 24
    sym = FHSymbol((), constant_symbol(c) + cos_symbol(1, 2 * a))
    exact = math.exp(n * c + a * a)
    assert widom_asymptotic(sym, n) == pytest.approx(exact, rel=1e-12)
    assert toeplitz_determinant(fh_symbol_coefficients(sym, 80), n).value == pytest.approx(exact, rel=1e-8)
    sym = FHSymbol(((0.0, 0.5),), constant_symbol(c))
    # the constant scales the determinant by e^{n c} and does not touch the singular factor
    ratio = widom_asymptotic(sym, n) / widom_asymptotic(FHSymbol(((0.0, 0.5),)), n)
    assert ratio == pytest.approx(math.exp(n * c), rel=1e-12)


def test_widom_pair_factor():
    sym = FHSymbol(((0.0, 0.25), (math.pi, 0.25)))
    single = log_widom_asymptotic(FHSymbol(((0.0, 0.25),)), 10)
    # the pair product contributes 2^{-2/16}; each singularity its own n^{1/16} G-ratio
    assert log_widom_asymptotic(sym, 10) == pytest.approx(2 * single - 2 * 0.0625 * math.log(2), abs=1e-13)


def test_widom_rejects_coincident_singularities():
    with pytest.raises(ValueError):
        widom_asymptotic(FHSymbol(((1.0, 0.2), (1.0 + 2 * math.pi, 0.3))), 10)


# --------------------------------------------------------------------------
# multi-time right-hand side


def test_multitime_single_singularity():
    for gamma in (0.5, 1.0, 2.0):
        cfg = InsertionConfig([PointSingularity(0.3, 1.1, gamma)])
        assert multitime_fh_rhs(cfg, 40) == pytest.approx(40 ** (gamma ** 2 / 4) * math.exp(fh_constant_log(gamma / 2)),
                                                         rel=1e-13)


@pytest.mark.parametrize("g1,g2,phi", [(1.0, 1.0, math.pi), (0.5, 1.5, 1.0), (2.0, 0.3, 2.5)])
def test_multitime_reduces_to_widom(g1, g2, phi):
    cfg = InsertionConfig([PointSingularity(0.0, 0.0, g1), PointSingularity(0.0, phi, g2)])
    sym = FHSymbol(((0.0, g1 / 2), (phi, g2 / 2)))
    assert multitime_fh_rhs(cfg, 24) == pytest.approx(widom_asymptotic(sym, 24), rel=1e-12)


def test_multitime_one_singularity_one_smooth():
    gamma, t, x = 1.0, 0.4, 0.7
    f = trig_symbol(cos={1: 0.4, 2: -0.2}, const=0.1)
    cfg = InsertionConfig([PointSingularity(t, x, gamma)], [SmoothInsertion(0.0, f)])
    n = 30
    smooth_part = n * 0.1 + 0.5 * f.h_norm_sq()
    cross = -(gamma / 2) * (0.4 * math.exp(-t) * math.cos(x) - 0.2 * math.exp(-2 * t) * math.cos(2 * x))
    single = gamma ** 2 / 4 * math.log(n) + fh_constant_log(gamma / 2)
    assert math.log(multitime_fh_rhs(cfg, n)) == pytest.approx(smooth_part + cross + single, abs=1e-12)


def test_multitime_against_exact_fredholm():
    # at finite n the joint moment is a two-time Fredholm determinant; the prediction is its large-n limit
    g0 = CircleTest(lambda x: np.exp(0.4 * np.cos(x)) - 1.0)
    g1 = CircleTest(lambda x: np.abs(2 * np.sin(x / 2)) - 1.0, breakpoints=(0.0,))
    cfg = InsertionConfig([PointSingularity(0.4, 0.0, 1.0)], [SmoothInsertion(0.0, cos_symbol(1, 0.4))])
    gaps = []
    for n in (12, 24, 48):
        exact = fredholm_expectation(FredholmProblem(equilibrium_extended_kernel(n, [0.0, 0.4]), [g0, g1])).value
        gaps.append(exact / multitime_fh_rhs(cfg, n) - 1.0)
    # relative error of order 1/n: halves with each doubling
    assert 0 < gaps[2] < gaps[1] < gaps[0] < 0.02
    assert gaps[1] / gaps[0] == pytest.approx(0.5, abs=0.02) and gaps[2] / gaps[1] == pytest.approx(0.5, abs=0.02)


def test_insertions_validate():
    with pytest.raises(ValueError):
        InsertionConfig([PointSingularity(0.0, 1.0, 1.0), PointSingularity(0.0, 1.0 + 2 * math.pi, 1.0)])
    with pytest.raises(ValueError):
        InsertionConfig([PointSingularity(0.0, 1.0, 5.0)])


def test_insertions_json_round_trip():
    f = from_coefficients({-1: 0.2, 1: 0.2})
    cfg = InsertionConfig([PointSingularity(0.1, 0.2, 1.0)], [SmoothInsertion(0.0, f)])
    back = InsertionConfig.from_json(cfg.to_json())
    assert back.singularities == cfg.singularities
    assert np.allclose(back.smooth[0].f.coeffs, f.coeffs)
    assert multitime_fh_rhs(back, 12) == pytest.approx(multitime_fh_rhs(cfg, 12), rel=1e-14)


# --------------------------------------------------------------------------
# covariance functional


def test_covariance_examples():
    gamma, d = 1.3, 0.6
    assert covariance_functional(Smooth(0.0, cos_symbol()), LogSingularity(d, 0.0, gamma)) == \
        pytest.approx(-gamma * math.exp(-d) / 2, abs=1e-15)
    assert covariance_functional(LogSingularity(0.0, 0.0, 1.5), LogSingularity(0.0, math.pi, 0.8)) == \
        pytest.approx(1.5 * 0.8 * (-0.5 * math.log(2)), abs=1e-15)
    for a, b in ((Smooth(0.0, cos_symbol()), Smooth(math.inf, cos_symbol())),
                 (Smooth(0.0, cos_symbol()), LogSingularity(math.inf, 0.3, 1.0)),
                 (LogSingularity(0.0, 0.0, 1.0), LogSingularity(math.inf, 0.3, 1.0))):
        assert covariance_functional(a, b) == 0.0
    assert covariance_functional(LogSingularity(0.0, 0.0, 1.0), LogSingularity(60.0, 0.0, 1.0)) <= 1e-20
    with pytest.raises(ValueError):
        covariance_functional(LogSingularity(0.2, 1.0, 1.0), LogSingularity(0.2, 1.0, 1.0))


def test_covariance_symmetry():
    items = [Smooth(0.1, trig_symbol(cos={1: 0.3}, sin={2: 0.5})), Smooth(0.7, sin_symbol(3)),
             LogSingularity(0.0, 0.4, 1.2), LogSingularity(0.5, 2.0, 0.6)]
    for a in items:
        for b in items:
            if a is b and isinstance(a, LogSingularity):
                continue
            assert covariance_functional(a, b) == pytest.approx(covariance_functional(b, a), abs=1e-12)


# --------------------------------------------------------------------------
# exact covariance of linear statistics


def test_exact_covariance_examples():
    c = cos_symbol()
    for n in (2, 7, 30):
        for t in (0.1, 0.5, 3.0):
            assert exact_linear_covariance(n, t, c, c) == pytest.approx(math.exp(-t) / 2, rel=1e-13)
        assert exact_linear_covariance(n, 0.0, c, c) == pytest.approx(0.5, rel=1e-14)
    for n in (3, 8):
        cn = cos_symbol(n)
        for t in (0.2, 1.0):
            expected = 0.5 * math.exp(-n * t) * math.sinh(n * t) / math.sinh(t)
            assert exact_linear_covariance(n, t, cn, cn) == pytest.approx(expected, rel=1e-12)


def test_exact_covariance_is_continuous_at_zero():
    f = trig_symbol(cos={1: 0.5, 5: 1.0, 9: -0.7})
    assert exact_linear_covariance(6, 1e-9, f, f) == pytest.approx(exact_linear_covariance(6, 0.0, f, f), rel=1e-7)


@pytest.mark.parametrize("n", [16, 32])
def test_exact_covariance_against_simulation(n):
    syms = {"cos": cos_symbol(), "sin": sin_symbol(), "cos2": cos_symbol(2)}
    times = [0.0, 0.25, 1.0]
    root = SeedTree(77).child(f"corollary{n}")
    traces = {k: [] for k in syms}
    for i in range(1500):
        tr = phase_path(n, times, root.child("s", i))
        for k, f in syms.items():
            traces[k].append([float(np.real(f.trace(row))) for row in tr.phases])
    for k1, f in syms.items():
        for k2, g in syms.items():
            x = np.array(traces[k1])[:, 0]
            for ti, t in enumerate(times):
                y = np.array(traces[k2])[:, ti]
                m, se = mean_and_stderr((x - x.mean()) * (y - y.mean()))
                assert abs(m - exact_linear_covariance(n, t, f, g)) <= 3.5 * se
