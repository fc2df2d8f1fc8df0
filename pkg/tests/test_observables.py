import math

import numpy as np
import pytest
from scipy import integrate

from ubmlab.dynamics import PhaseTrajectory, cue_phases, phase_path, sample_haar_unitary
from ubmlab.fisher_hartwig import exact_linear_covariance
from ubmlab.montecarlo import mean_and_stderr
from ubmlab.observables import (BiasSpec, borel_transform, characteristic_flow, counting_statistic,
                                equispaced_angles, field_from_trajectory, im_log_char_poly, log_char_poly,
                                loop_equation_rhs, reweighted_expectation, self_normalized)
from ubmlab.seeding import SeedTree
from ubmlab.special import keating_snaith_log_variance
from ubmlab.symbols import cos_symbol, from_coefficients, sin_symbol, trig_symbol

N_CUE = 2000


@pytest.fixture(scope="module")
def cue32():
    root = SeedTree(2024).child("cue32")
    return [cue_phases(32, root.child("sample", i)) for i in range(N_CUE)]


def _arc_count_symbol(n, theta, k_max):
    # pi * (1_{(0, theta]} - theta / 2pi)
    c = {}
    for k in range(-k_max, k_max + 1):
        if k:
            c[k] = math.pi * (1 - np.exp(-1j * k * theta)) / (2j * math.pi * k)
    return from_coefficients(c)


# --------------------------------------------------------------------------
# the field


def test_single_particle_field():
    v, clipped = log_char_poly(np.array([0.0]), np.array([math.pi]))
    assert v[0] == pytest.approx(math.log(2.0), abs=1e-15) and not clipped[0]


def test_field_has_zero_spatial_mean():
    traj = phase_path(6, [0.0, 0.2], SeedTree(1))
    for row in traj.phases:
        # adaptive quadrature split at the log singularities
        pts = np.sort(np.mod(row, 2 * math.pi))
        edges = np.concatenate([[0.0], pts, [2 * math.pi]])
        total = sum(integrate.quad(lambda x: log_char_poly(row, np.array([x]))[0][0], a, b, limit=200)[0]
                    for a, b in zip(edges[:-1], edges[1:]) if b > a)
        assert abs(total) <= 1e-8
    # the equispaced grid mean is exactly (1/M) sum_k log|1 - e^{iM(theta_k - offset)}|
    m, off = 4096, 1e-3
    fs = field_from_trajectory(traj, equispaced_angles(m, offset=off))
    oracle = [np.sum(np.log(np.abs(1 - np.exp(1j * m * (row - off))))) / m for row in traj.phases]
    assert np.allclose(fs.spatial_mean(), oracle, atol=1e-12)
    assert not fs.clipped.any()


def test_clipping_is_flagged():
    v, clipped = log_char_poly(np.array([0.0, 1.0]), np.array([0.0, 2.0]))
    assert clipped.tolist() == [True, False]
    assert math.isfinite(v[0])


def test_field_csv(tmp_path):
    traj = PhaseTrajectory(2, [0.0], [[0.0, math.pi]], seed="x")
    p = field_from_trajectory(traj, [0.5, 1.5]).write_csv(tmp_path / "f.csv")
    lines = p.read_text().splitlines()
    assert lines[1] == "t,theta,value,clipped" and len(lines) == 4


def test_field_variance_exact(cue32):
    h = np.array([log_char_poly(p, np.array([0.0]))[0][0] for p in cue32])
    m, se = mean_and_stderr((h - h.mean()) ** 2)
    assert abs(m - keating_snaith_log_variance(32)) <= 3 * se


@pytest.mark.xfail(strict=True, reason="golden range [0.7, 1.3] excludes the exact value 1.455 at N=32")
def test_field_variance_golden_range(cue32):
    h = np.array([log_char_poly(p, np.array([0.0]))[0][0] for p in cue32])
    assert 0.7 <= h.var(ddof=1) / (0.5 * math.log(32)) <= 1.3


# --------------------------------------------------------------------------
# counting statistic


def test_counting_trivial_cases():
    n = 10
    lattice = 2 * math.pi * (np.arange(n) + 0.5) / n
    assert counting_statistic(lattice, 2 * math.pi - 1e-12) == pytest.approx(0.0, abs=1e-9)
    for m in (1, 4, 9):
        val = counting_statistic(lattice, 2 * math.pi * (m + 0.5) / n + 1e-9) / math.pi
        assert round(val + (m + 0.5)) == m + 1 and abs(val) <= 0.5 + 1e-8
    with pytest.raises(ValueError):
        counting_statistic(lattice, 0.0)


def test_counting_matches_im_log_increments():
    for phases in ([0.3, 2.0, 4.5], [1.0, 1.1, 6.0], [0.01, 3.0, 3.2]):
        phases = np.array(phases)
        for theta in (0.5, 1.05, 2.5, 4.0, 6.2):
            jump = im_log_char_poly(phases, theta) - im_log_char_poly(phases, 0.0)
            assert counting_statistic(phases, theta) == pytest.approx(jump, abs=1e-13)


def test_counting_variance_exact(cue32):
    x = np.array([counting_statistic(p, math.pi) for p in cue32])
    m, se = mean_and_stderr((x - x.mean()) ** 2)
    f = _arc_count_symbol(32, math.pi, 4096)
    assert abs(m - exact_linear_covariance(32, 0.0, f, f)) <= 3 * se


@pytest.mark.xfail(strict=True, reason="golden range [0.5, 2.0] excludes the exact ratio 3.31 at N=32")
def test_counting_variance_golden_range(cue32):
    x = np.array([counting_statistic(p, math.pi) for p in cue32])
    assert 0.5 <= x.var(ddof=1) / (0.5 * math.log(32)) <= 2.0


# --------------------------------------------------------------------------
# Borel transform and characteristics


def test_borel_transform_limits():
    u = sample_haar_unitary(5, SeedTree(3))
    assert borel_transform(u, 1e9) == pytest.approx(1.0, abs=1e-8)
    assert borel_transform(u, 0.0) == pytest.approx(-1.0, abs=1e-12)
    lam = np.linalg.eigvals(u)[0]
    with pytest.raises(ValueError):
        borel_transform(u, lam)


def test_borel_transform_local_law_shape():
    n, z = 64, 1.1
    root = SeedTree(8).child("borel")
    hits = [abs(borel_transform(sample_haar_unitary(n, root.child("s", i)), z) - 1)
            <= 5 / (n * (abs(z) - 1)) for i in range(300)]
    assert np.mean(hits) >= 0.99


def test_characteristic_flow():
    assert characteristic_flow(2, math.log(2)) == pytest.approx(4.0)
    assert characteristic_flow(0.5, math.log(2)) == pytest.approx(0.25)
    assert characteristic_flow(0.3 + 2j, 0.0) == 0.3 + 2j
    with pytest.raises(ValueError):
        characteristic_flow(1.0, 1.0)


# --------------------------------------------------------------------------
# biased measures


def test_loop_rhs_examples():
    assert loop_equation_rhs(BiasSpec([]), cos_symbol(), 0.3) == 0.0
    a, gap = 0.35, 0.7
    assert loop_equation_rhs(BiasSpec([(0.0, cos_symbol(1, 2 * a))]), cos_symbol(), gap) == \
        pytest.approx(a * math.exp(-gap), abs=1e-15)
    assert loop_equation_rhs(BiasSpec([(0.2, cos_symbol())]), sin_symbol(), 1.3) == pytest.approx(0.0, abs=1e-15)


def _paths(n, times, count, label):
    root = SeedTree(99).child(label)
    return [phase_path(n, times, root.child("s", i)) for i in range(count)]


def test_reweighting_trivial_cases():
    paths = _paths(4, [0.0, 0.1], 60, "trivial")
    obs = lambda tr: float(np.sum(np.cos(tr.at(0.1))))
    zero = reweighted_expectation(paths, BiasSpec([(0.0, trig_symbol())]), obs)
    assert zero.value == pytest.approx(np.mean([obs(p) for p in paths]), abs=1e-12)
    one = reweighted_expectation(paths, BiasSpec([(0.0, cos_symbol(1, 0.4))]), lambda tr: 1.0)
    assert one.value == 1.0


def test_effective_sample_size_floor():
    with pytest.raises(ValueError):
        self_normalized([0.0] * 10 + [50.0], [1.0] * 11)


def test_loop_equation_against_simulation():
    n, r = 24, 0.3
    paths = _paths(n, [0.0, r], 3000, "loop")
    bias = BiasSpec([(0.0, cos_symbol(1, 0.4))])
    est = reweighted_expectation(paths, bias, lambda tr: float(np.sum(np.cos(tr.at(r)))))
    pred = loop_equation_rhs(bias, cos_symbol(), r)
    assert pred == pytest.approx(0.2 * math.exp(-r), abs=1e-15)
    assert abs(est.value - pred) <= 3 * est.stderr
    # twice the prediction is far outside the error bar
    assert abs(est.value - 2 * pred) > 3 * est.stderr
