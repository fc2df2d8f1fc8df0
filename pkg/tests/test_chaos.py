import math

import numpy as np
import pytest
from scipy import integrate

from ubmlab.chaos import (NO_ACCEPTANCE, CylinderField, CylinderGrid, cylinder_covariance, gaussian_field_covariance,
                          gaussian_field_variance, gmc_measure, gmc_second_moment_prediction,
                          matrix_field, max_field_statistic, max_field_trend, mollified_log_char_poly,
                          mollified_log_normalizer, poisson_green, row_maximum, sample_gaussian_field,
                          sample_matrix_field, two_point_factor)
from ubmlab.dynamics import cue_phases, phase_path
from ubmlab.fisher_hartwig import LogSingularity, covariance_functional
from ubmlab.montecarlo import mean_and_stderr
from ubmlab.observables import log_char_poly
from ubmlab.seeding import SeedTree
from ubmlab.special import keating_snaith_moment

TWO_PI = 2 * math.pi


def _seeds(label, count, master=53):
    root = SeedTree(master).child(label)
    return [root.child("sample", i) for i in range(count)]


# --------------------------------------------------------------------------
# Gaussian reference field


def test_gaussian_marginal_variance():
    grid = CylinderGrid(0.0, 0.1, 0.0, TWO_PI, 1, 3)
    k_max = 6
    vals = np.array([sample_gaussian_field(k_max, grid, s).values[0, 0] for s in _seeds("var", 20000)])
    m, se = mean_and_stderr(vals ** 2)
    assert abs(m - 0.5 * sum(1 / k for k in range(1, k_max + 1))) <= 3 * se
    assert gaussian_field_variance(k_max) == pytest.approx(0.5 * sum(1 / k for k in range(1, 7)), rel=1e-15)


def test_gaussian_single_mode_two_time_covariance():
    grid = CylinderGrid(0.0, 1.0, 0.0, 3.0, 2, 2)   # times 0.25, 0.75; angles 0.75, 2.25
    pairs = np.array([sample_gaussian_field(1, grid, s).values for s in _seeds("k1", 20000)])
    x, y = pairs[:, 0, 0], pairs[:, 1, 1]
    m, se = mean_and_stderr(x * y)
    assert abs(m - 0.5 * math.cos(1.5) * math.exp(-0.5)) <= 3 * se


def test_gaussian_covariance_at_probe_pairs():
    grid = CylinderGrid(0.0, 1.2, 0.0, TWO_PI, 4, 8)
    k_max = 5
    fields = np.array([sample_gaussian_field(k_max, grid, s).values for s in _seeds("probe", 10000)])
    ts, xs = grid.times, grid.angles
    probes = [((0, 0), (0, 1)), ((0, 0), (0, 4)), ((0, 0), (1, 0)), ((0, 0), (3, 7)), ((1, 2), (2, 5)),
              ((2, 3), (3, 3)), ((0, 5), (2, 1)), ((1, 1), (1, 6)), ((3, 0), (3, 2)), ((0, 7), (3, 7))]
    for (i, a), (j, b) in probes:
        m, se = mean_and_stderr(fields[:, i, a] * fields[:, j, b])
        pred = gaussian_field_covariance(k_max, ts[j] - ts[i], xs[b] - xs[a])
        assert abs(m - pred) <= 3 * se


def test_gaussian_slices_have_zero_mean():
    grid = CylinderGrid(0.0, 1.0, 0.0, TWO_PI, 5, 16)
    f = sample_gaussian_field(7, grid, SeedTree(3))
    assert np.max(np.abs(f.values.mean(axis=1))) <= 1e-14


def test_gaussian_mollified_variance():
    assert gaussian_field_variance(4, 0.1) == pytest.approx(
        0.5 * sum(math.exp(-0.2 * k) / k for k in range(1, 5)), rel=1e-15)
    with pytest.raises(ValueError):
        sample_gaussian_field(0, CylinderGrid(0, 1, 0, 1, 1, 1))


# --------------------------------------------------------------------------
# covariance kernel


def test_cylinder_covariance_examples():
    assert cylinder_covariance(0j, complex(0, math.pi)) == pytest.approx(-0.5 * math.log(2), abs=1e-15)
    for tau in (0.1, 1.0, 3.0):
        assert cylinder_covariance(complex(tau, 0.4), complex(0, 0.4)) == \
            pytest.approx(-0.5 * math.log(1 - math.exp(-tau)), rel=1e-14)
    assert abs(cylinder_covariance(complex(200, 0.0), 0j)) <= 1e-80
    with pytest.raises(ValueError):
        cylinder_covariance(complex(0.3, 1.0), complex(0.3, 1.0))


def test_cylinder_covariance_definition_and_poisson_form():
    rng = np.random.default_rng(4)
    for _ in range(20):
        z = complex(rng.uniform(-2, 2), rng.uniform(0, TWO_PI))
        w = complex(rng.uniform(-2, 2), rng.uniform(0, TWO_PI))
        direct = 0.5 * math.log(max(abs(np.exp(z)), abs(np.exp(w))) / abs(np.exp(z) - np.exp(w)))
        assert cylinder_covariance(z, w) == pytest.approx(direct, abs=1e-12)
        assert cylinder_covariance(z, w) == pytest.approx(poisson_green(z.real - w.real, z.imag - w.imag), abs=1e-12)
        # the same kernel through the H^{1/2} pairing of two log singularities
        pair = covariance_functional(LogSingularity(z.real, z.imag, 1.0), LogSingularity(w.real, w.imag, 1.0))
        assert cylinder_covariance(z, w) == pytest.approx(pair, abs=1e-12)


# --------------------------------------------------------------------------
# GMC measures


def test_gamma_zero_is_lebesgue():
    grid = CylinderGrid(0.0, 1.0, 0.0, 2.0, 4, 6)
    f = sample_gaussian_field(5, grid, SeedTree(5))
    m = gmc_measure(f, 0.0, cells=(2, 3))
    assert np.allclose(m.masses, grid.area / 6, rtol=1e-14)
    assert m.normalization == "none"


def test_gmc_rejections():
    grid = CylinderGrid(0.0, 1.0, 0.0, 2.0, 4, 6)
    f = sample_gaussian_field(5, grid, SeedTree(5))
    for g in (-0.1, 2 * math.sqrt(2), 3.0):
        with pytest.raises(ValueError):
            gmc_measure(f, g)
    with pytest.raises(ValueError):
        gmc_measure(f, 1.0, cells=(3, 3))
    with pytest.raises(ValueError):
        gmc_measure(f, 1.0, epsilon=0.1)
    with pytest.raises(ValueError):
        gmc_measure(phase_path(4, grid.times, SeedTree(6)), 1.0)


def test_l1_phase_is_tagged():
    grid = CylinderGrid(0.0, 1.0, 0.0, 2.0, 2, 2)
    f = sample_gaussian_field(5, grid, SeedTree(7))
    assert gmc_measure(f, 2.2).tag == NO_ACCEPTANCE
    assert gmc_measure(f, 1.0).tag == ""


def test_trajectory_input():
    grid = CylinderGrid(0.0, 0.2, 0.0, 1.0, 2, 4)
    tr = phase_path(12, grid.times, SeedTree(8))
    a = gmc_measure(tr, 1.0, epsilon=0.3, grid=grid)
    b = gmc_measure(matrix_field(tr, grid, 0.3), 1.0)
    assert np.array_equal(a.masses, b.masses) and a.normalization == "toeplitz-mollified"
    c = gmc_measure(tr, 1.0, grid=grid)
    assert c.normalization == "keating-snaith"
    direct = np.exp(1.0 * np.array([log_char_poly(tr.at(t), grid.angles)[0] for t in grid.times]))
    assert np.allclose(c.masses, direct * grid.point_area / keating_snaith_moment(12, 1.0), rtol=1e-12)


def test_mollified_field_and_normalizer():
    ph = cue_phases(9, SeedTree(9))
    x = np.linspace(0, 6, 11)
    r = math.exp(-0.2)
    direct = np.array([np.sum(np.log(np.abs(1 - r * np.exp(1j * (ph - xi))))) for xi in x])
    assert np.allclose(mollified_log_char_poly(ph, x, 0.2), direct, atol=1e-13)
    # the mollified normalizer tends to the Keating-Snaith moment as eps -> 0 and is 0 as eps -> infinity
    assert mollified_log_normalizer(6, 1.0, 1e-3) == pytest.approx(math.log(keating_snaith_moment(6, 1.0)), abs=1e-2)
    assert mollified_log_normalizer(6, 1.0, 30.0) == pytest.approx(0.0, abs=1e-12)


def test_mollified_normalizer_against_simulation():
    n, gamma, eps = 10, 1.0, 0.3
    vals = [math.exp(gamma * mollified_log_char_poly(cue_phases(n, s), np.array([0.7]), eps)[0])
            for s in _seeds("norm", 20000)]
    m, se = mean_and_stderr(vals)
    assert abs(m - math.exp(mollified_log_normalizer(n, gamma, eps))) <= 3 * se


def test_total_mass_normalization_gaussian():
    grid = CylinderGrid(0.0, 0.5, 0.0, 1.0, 4, 8)
    for gamma in (0.5, 1.5):
        totals = [gmc_measure(sample_gaussian_field(24, grid, s), gamma).total
                  for s in _seeds(f"mass{gamma}", 10000)]
        m, se = mean_and_stderr(totals)
        assert abs(m - grid.area) <= 3 * se


@pytest.fixture(scope="module")
def matrix_patch_totals():
    n = 48
    eps = 4.0 / n
    grid = CylinderGrid(0.0, 0.5, 0.0, 0.5, 8, 8)
    ln = mollified_log_normalizer(n, 1.0, eps)
    return grid, np.array([gmc_measure(sample_matrix_field(n, grid, s, eps), 1.0, log_norm=ln).total
                           for s in _seeds("patch", 2000)])


def test_total_mass_normalization_matrix(matrix_patch_totals):
    grid, totals = matrix_patch_totals
    m, se = mean_and_stderr(totals)
    assert abs(m - grid.area) <= 3 * se


def test_second_moment_matches_prediction(matrix_patch_totals):
    grid, totals = matrix_patch_totals
    pred = gmc_second_moment_prediction([(0.0, 0.5, 0.0, 0.5)], 1.0, 4.0 / 48)
    m, se = mean_and_stderr(totals ** 2)
    assert 3 * se <= 0.15 * pred              # the sample is large enough to resolve the band
    assert abs(m / pred - 1) <= 0.15


# --------------------------------------------------------------------------
# second-moment prediction


def test_prediction_small_gamma():
    patch = (0.0, 0.7, 0.2, 1.0)
    area = 0.7 * 0.8
    assert gmc_second_moment_prediction([patch], 1e-4, 0.1) == pytest.approx(area ** 2, rel=1e-6)
    assert gmc_second_moment_prediction([patch], 1e-4, 0.0) == pytest.approx(area ** 2, rel=1e-6)


def test_prediction_concentrated_patches():
    h = 1e-3
    z, w = complex(0.0, 0.0), complex(0.4, 1.3)
    p = (z.real, z.real + h, z.imag, z.imag + h)
    q = (w.real, w.real + h, w.imag, w.imag + h)
    both = gmc_second_moment_prediction([p, q], 1.0, 0.0)
    self_p = gmc_second_moment_prediction([p], 1.0, 0.0)
    self_q = gmc_second_moment_prediction([q], 1.0, 0.0)
    cross = 0.5 * (both - self_p - self_q)
    centre = complex(h / 2, h / 2)
    assert cross / h ** 4 == pytest.approx(two_point_factor(z + centre, w + centre, 1.0), rel=1e-6)
    assert cross / h ** 4 == pytest.approx(math.exp(cylinder_covariance(z + centre, w + centre)), rel=1e-6)


def test_prediction_against_direct_quadrature():
    p, q = (0.0, 0.3, 0.0, 0.4), (0.5, 0.9, 1.0, 1.2)
    pred = gmc_second_moment_prediction([p, q], 0.8, 0.05, weights=[1.0, -0.5])

    def pair(a, b):
        val, _ = integrate.nquad(lambda y, s, x, t: two_point_factor(complex(t, x), complex(s, y), 0.8, 0.05),
                                 [(b[2], b[3]), (b[0], b[1]), (a[2], a[3]), (a[0], a[1])],
                                 opts={"epsabs": 1e-8, "epsrel": 1e-6})
        return val
    direct = pair(p, p) + 0.25 * pair(q, q) - 2 * 0.5 * pair(p, q)
    assert pred == pytest.approx(direct, rel=1e-4)


def test_prediction_epsilon_dependence():
    patch = (0.0, 1.0, 0.0, 1.0)
    a = gmc_second_moment_prediction([patch], 1.0, 0.05)
    b = gmc_second_moment_prediction([patch], 1.0, 0.025)
    assert abs(b / a - 1) <= 0.05


def test_prediction_rejects_l1_phase():
    with pytest.raises(ValueError):
        gmc_second_moment_prediction([(0, 1, 0, 1)], 2.0)


# --------------------------------------------------------------------------
# maximum of the field


def test_zero_field_statistic():
    grid = CylinderGrid(0.0, 1.0, 0.0, 1.0, 3, 3)
    assert max_field_statistic(CylinderField(grid, np.zeros((3, 3)), "matrix-born", n=16), 16) == 0.0


def test_row_maximum_against_dense_grid():
    for n, i in ((2, 0), (9, 1), (40, 2)):
        ph = cue_phases(n, SeedTree(10).child("row", i))
        val, x = row_maximum(ph)
        g = np.linspace(0, TWO_PI, 200001)
        dense = log_char_poly(ph, g)[0].max()
        assert dense <= val + 1e-10 and val - dense <= 1e-6
        assert log_char_poly(ph, [x])[0][0] == pytest.approx(val, abs=1e-12)


@pytest.fixture(scope="module")
def max_trend():
    # the median moves by about 0.02 per doubling of n, so the trend needs more samples than the range check
    return max_field_trend([32, 64, 128], 800, SeedTree(61))


def test_max_statistic_range(max_trend):
    vals = np.array(max_trend.samples[64][:200])
    assert np.mean((vals >= 0.8) & (vals <= 2.0)) >= 0.95


def test_max_statistic_trend(max_trend):
    assert max_trend.monotone, (max_trend.medians, max_trend.distances)
