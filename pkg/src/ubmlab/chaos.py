"""Cylinder free field, Gaussian multiplicative chaos and max-field statistics.

Two kinds of fields live on a grid of the cylinder ``R x U``:

* ``gaussian-reference``: ``h = sum_{k<=k_max} A_k(t) cos(kx) + B_k(t) sin(kx)`` with
  independent stationary Ornstein-Uhlenbeck modes of variance ``1/(2k)`` and
  rate ``k``, so ``E h(s,x) h(t,y) = (1/2) sum cos(k(x-y)) e^{-k|t-s|} / k``;
* ``matrix-born``: ``h_N(t, x) = log|det(e^{ix} - U_t)|``, optionally Poisson
  smoothed in angle, ``P_eps h_N(t,x) = sum_k log|1 - e^{-eps} e^{i(theta_k - x)}|``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from numba import njit
from scipy import integrate

from .dynamics import PhaseTrajectory, cue_phases, evolve_eigenphases, default_dt, phase_path
from .fisher_hartwig import toeplitz_determinant
from .observables import log_char_poly
from .seeding import SeedLike, as_generator, seed_label
from .special import log_keating_snaith_moment
from .symbols import fourier_coefficients

TWO_PI = 2.0 * np.pi
GAMMA_MAX = 2.0 * math.sqrt(2.0)
NO_ACCEPTANCE = "no-quantitative-acceptance"


# --------------------------------------------------------------------------
# Grids and fields


@dataclass(frozen=True)
class CylinderGrid:
    """Uniform midpoint grid on ``[t_lo, t_hi] x [x_lo, x_hi]``."""

    t_lo: float
    t_hi: float
    x_lo: float
    x_hi: float
    n_t: int
    n_x: int

    @property
    def times(self) -> np.ndarray:
        h = (self.t_hi - self.t_lo) / self.n_t
        return self.t_lo + h * (np.arange(self.n_t) + 0.5)

    @property
    def angles(self) -> np.ndarray:
        h = (self.x_hi - self.x_lo) / self.n_x
        return self.x_lo + h * (np.arange(self.n_x) + 0.5)

    @property
    def point_area(self) -> float:
        return (self.t_hi - self.t_lo) * (self.x_hi - self.x_lo) / (self.n_t * self.n_x)

    @property
    def area(self) -> float:
        return (self.t_hi - self.t_lo) * (self.x_hi - self.x_lo)


@dataclass
class CylinderField:
    grid: CylinderGrid
    values: np.ndarray                 # (n_t, n_x)
    kind: str                          # "gaussian-reference" | "matrix-born"
    k_max: Optional[int] = None
    n: Optional[int] = None
    epsilon: Optional[float] = None
    seed: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_t, self.grid.n_x):
            raise ValueError("values do not match the grid")
        if self.kind not in ("gaussian-reference", "matrix-born"):
            raise ValueError(f"unknown field kind {self.kind!r}")


def gaussian_field_variance(k_max: int, epsilon: float = 0.0) -> float:
    k = np.arange(1, k_max + 1)
    return 0.5 * float(np.sum(np.exp(-2.0 * k * epsilon) / k))


def gaussian_field_covariance(k_max: int, dt: float, dx: float, epsilon: float = 0.0) -> float:
    """``(1/2) sum_{k<=k_max} cos(k dx) e^{-k(|dt| + 2 eps)} / k``."""
    k = np.arange(1, k_max + 1)
    return 0.5 * float(np.sum(np.cos(k * dx) * np.exp(-k * (abs(dt) + 2 * epsilon)) / k))


def sample_gaussian_field(k_max: int, grid: CylinderGrid, seed: SeedLike = None,
                          epsilon: float = 0.0) -> CylinderField:
    """Exact sampling of the truncated field on the grid.

    Mode ``k`` is a stationary OU process with variance ``1/(2k)`` and rate
    ``k``; between grid times it is advanced with the exact Gaussian transition
    ``X <- e^{-k dt} X + sqrt((1 - e^{-2k dt})/(2k)) Z``. Poisson smoothing
    multiplies mode ``k`` by ``e^{-k eps}``.
    """
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    rng = as_generator(seed)
    k = np.arange(1, k_max + 1, dtype=float)
    var = 1.0 / (2.0 * k)
    times = grid.times
    a = np.empty((times.size, k_max))
    b = np.empty((times.size, k_max))
    a[0] = np.sqrt(var) * rng.standard_normal(k_max)
    b[0] = np.sqrt(var) * rng.standard_normal(k_max)
    for i in range(1, times.size):
        rho = np.exp(-k * (times[i] - times[i - 1]))
        sd = np.sqrt(var * (1.0 - rho * rho))
        a[i] = rho * a[i - 1] + sd * rng.standard_normal(k_max)
        b[i] = rho * b[i - 1] + sd * rng.standard_normal(k_max)
    damp = np.exp(-k * epsilon)
    x = grid.angles
    vals = (a * damp) @ np.cos(np.outer(k, x)) + (b * damp) @ np.sin(np.outer(k, x))
    return CylinderField(grid, vals, "gaussian-reference", k_max=k_max, epsilon=epsilon,
                         seed=seed_label(seed))


def mollified_log_char_poly(phases: np.ndarray, angles: np.ndarray, epsilon: float) -> np.ndarray:
    """``P_eps h_N = sum_k log|1 - e^{-eps} e^{i(theta_k - x)}|``."""
    r = math.exp(-epsilon)
    d = np.subtract.outer(np.asarray(angles, dtype=float), np.asarray(phases, dtype=float))
    # |1 - r e^{i d}|^2 = 1 - 2 r cos d + r^2
    return 0.5 * np.log1p(r * r - 2.0 * r * np.cos(d)).sum(axis=-1)


def matrix_field(traj: PhaseTrajectory, grid: CylinderGrid,
                 epsilon: Optional[float] = None) -> CylinderField:
    """Matrix-born field on ``grid``; the trajectory must be recorded at ``grid.times``."""
    rows = []
    for t in grid.times:
        ph = traj.at(t)
        if epsilon is None:
            rows.append(log_char_poly(ph, grid.angles)[0])
        else:
            rows.append(mollified_log_char_poly(ph, grid.angles, epsilon))
    return CylinderField(grid, np.array(rows), "matrix-born", n=traj.n, epsilon=epsilon,
                         seed=traj.seed)


def sample_matrix_field(n: int, grid: CylinderGrid, seed: SeedLike = None,
                        epsilon: Optional[float] = None, dt: Optional[float] = None) -> CylinderField:
    """CUE start at time 0, circular Dyson dynamics up to the grid times."""
    traj = phase_path(n, list(grid.times), seed, dt)
    return matrix_field(traj, grid, epsilon)


# --------------------------------------------------------------------------
# Normalizations


def mollified_log_normalizer(n: int, gamma: float, epsilon: float) -> float:
    """``log E e^{gamma P_eps h_N(t,x)}`` at equilibrium, exactly.

    By the Heine identity this is the Toeplitz determinant of
    ``|1 - e^{-eps} e^{i theta}|^gamma``, a smooth symbol whose coefficients
    decay like ``e^{-k eps}``.
    """
    r = math.exp(-epsilon)
    k_max = max(n, int(math.ceil(45.0 / epsilon)))
    f = fourier_coefficients(lambda th: (1.0 + r * r - 2.0 * r * np.cos(th)) ** (0.5 * gamma),
                             k_max, quadrature_points=4 * k_max)
    res = toeplitz_determinant(f, n)
    return res.log_abs


def log_normalizer(field: CylinderField, gamma: float) -> float:
    if field.kind == "gaussian-reference":
        return 0.5 * gamma ** 2 * gaussian_field_variance(field.k_max, field.epsilon or 0.0)
    if field.epsilon is None:
        return log_keating_snaith_moment(field.n, gamma)
    return mollified_log_normalizer(field.n, gamma, field.epsilon)


# --------------------------------------------------------------------------
# GMC measures


@dataclass
class ChaosMeasure:
    gamma: float
    t_edges: np.ndarray
    theta_edges: np.ndarray
    masses: np.ndarray                 # (len(t_edges)-1, len(theta_edges)-1)
    normalization: str
    tag: str = ""

    @property
    def total(self) -> float:
        return math.fsum(self.masses.ravel())

    def write_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        lines = [f"# gamma={self.gamma:.17g} normalization={self.normalization} tag={self.tag}",
                 "t_lo,t_hi,theta_lo,theta_hi,mass"]
        for i in range(self.masses.shape[0]):
            for j in range(self.masses.shape[1]):
                lines.append(",".join(format(v, ".17g") for v in (
                    self.t_edges[i], self.t_edges[i + 1], self.theta_edges[j],
                    self.theta_edges[j + 1], self.masses[i, j])))
        path.write_text("\n".join(lines) + "\n")
        return path


def gmc_measure(field: Union[CylinderField, PhaseTrajectory], gamma: float, epsilon: Optional[float] = None,
                cells: Tuple[int, int] = None, log_norm: Optional[float] = None,
                grid: Optional[CylinderGrid] = None) -> ChaosMeasure:
    """Cell masses of ``e^{gamma h} / E e^{gamma h}`` by midpoint quadrature.

    ``field`` is either a sampled field or a phase trajectory; a trajectory is
    turned into the matrix-born field on ``grid`` (required then, and the
    trajectory must be recorded at ``grid.times``) with mollification
    ``epsilon``. ``cells = (c_t, c_x)`` groups the field grid into
    ``c_t x c_x`` product cells (the grid sizes must be divisible); by default
    each grid point is a cell. ``log_norm`` may be passed to reuse a
    precomputed normalizer.
    """
    if not 0.0 <= gamma < GAMMA_MAX:
        raise ValueError(f"gamma must lie in [0, 2 sqrt 2), got {gamma}")
    if isinstance(field, PhaseTrajectory):
        if grid is None:
            raise ValueError("a trajectory needs a grid to build the field on")
        field = matrix_field(field, grid, epsilon)
    elif epsilon is not None and epsilon != field.epsilon:
        raise ValueError("epsilon does not match the mollification of the sampled field")
    g = field.grid
    c_t, c_x = (g.n_t, g.n_x) if cells is None else cells
    if g.n_t % c_t or g.n_x % c_x:
        raise ValueError("cell counts must divide the grid")
    if gamma == 0:
        dens = np.ones_like(field.values)
        src = "none"
    else:
        ln = log_normalizer(field, gamma) if log_norm is None else log_norm
        dens = np.exp(gamma * field.values - ln)
        src = ("gaussian-variance" if field.kind == "gaussian-reference"
               else "keating-snaith" if field.epsilon is None else "toeplitz-mollified")
    pts = dens * g.point_area
    masses = pts.reshape(c_t, g.n_t // c_t, c_x, g.n_x // c_x).sum(axis=(1, 3))
    t_edges = np.linspace(g.t_lo, g.t_hi, c_t + 1)
    x_edges = np.linspace(g.x_lo, g.x_hi, c_x + 1)
    tag = NO_ACCEPTANCE if gamma >= 2.0 else ""
    return ChaosMeasure(gamma, t_edges, x_edges, masses, src, tag)


# --------------------------------------------------------------------------
# Covariances and two-point predictions


def cylinder_covariance(z: complex, w: complex) -> float:
    """``(1/2) log(max(|e^z|, |e^w|) / |e^z - e^w|)`` for ``z = t + i theta``."""
    if z == w:
        raise ValueError("the covariance diverges at z = w")
    d = abs(z.real - w.real)
    gap = abs(1.0 - math.exp(-d) * complex(math.cos(z.imag - w.imag), math.sin(z.imag - w.imag)))
    if gap == 0.0:
        raise ValueError("the covariance diverges at coincident points")
    return -0.5 * math.log(gap)


def poisson_green(dt: float, dx: float, epsilon: float = 0.0) -> float:
    """``P_{|dt| + 2 eps} C(dx) = -(1/2) log|1 - e^{-|dt| - 2eps} e^{i dx}|``."""
    return -0.5 * math.log(abs(1.0 - math.exp(-abs(dt) - 2.0 * epsilon) *
                               complex(math.cos(dx), math.sin(dx))))


def two_point_factor(z: complex, w: complex, gamma: float, epsilon: float = 0.0) -> float:
    return math.exp(gamma ** 2 * poisson_green(z.real - w.real, z.imag - w.imag, epsilon))


def _overlap(a0, a1, b0, b1):
    """Length of ``[a0, a1] cap [b0 + u, b1 + u]`` as a piecewise-linear function of ``u``."""
    def lam(u):
        return np.maximum(0.0, np.minimum(a1, b1 + u) - np.maximum(a0, b0 + u))
    knots = sorted({a0 - b1, a0 - b0, a1 - b1, a1 - b0})
    return lam, knots


def _patch_pair_integral(p, q, gamma, epsilon):
    """``int_p int_q exp(gamma^2 P_{|t-s|+2eps} C(x-y)) dz dw`` for rectangles ``p, q``."""
    lam_t, kt = _overlap(p[0], p[1], q[0], q[1])
    lam_x, kx = _overlap(p[2], p[3], q[2], q[3])
    g2 = gamma * gamma

    def kern(u, v):
        return math.exp(g2 * poisson_green(u, v, epsilon))

    singular = epsilon == 0.0 and kt[0] < 0 < kt[-1] and kx[0] < 0 < kx[-1]
    if not singular:
        val, _ = integrate.nquad(lambda v, u: kern(u, v) * lam_t(u) * lam_x(v),
                                 [lambda u: (kx[0], kx[-1]), (kt[0], kt[-1])],
                                 opts=[{"points": kx + [0.0], "epsabs": 1e-11, "epsrel": 1e-9, "limit": 200},
                                       {"points": kt + [0.0], "epsabs": 1e-11, "epsrel": 1e-9, "limit": 200}])
        return val
    # polar coordinates around the diagonal singularity, one quadrant at a time
    total = 0.0
    for su in (-1.0, 1.0):
        for sv in (-1.0, 1.0):
            lu = kt[-1] if su > 0 else -kt[0]
            lv = kx[-1] if sv > 0 else -kx[0]
            corner = math.atan2(lv, lu)

            def rmax(phi, lu=lu, lv=lv):
                c, s = math.cos(phi), math.sin(phi)
                return min(lu / c if c > 1e-300 else np.inf, lv / s if s > 1e-300 else np.inf)

            def integrand(r, phi, su=su, sv=sv):
                u, v = su * r * math.cos(phi), sv * r * math.sin(phi)
                if r == 0.0:
                    return 0.0
                return r * kern(u, v) * float(lam_t(u)) * float(lam_x(v))

            for lo, hi in ((0.0, corner), (corner, 0.5 * math.pi)):
                val, _ = integrate.nquad(integrand, [lambda phi: (0.0, rmax(phi)), (lo, hi)],
                                         opts=[{"epsabs": 1e-11, "epsrel": 1e-9, "limit": 200},
                                               {"epsabs": 1e-11, "epsrel": 1e-9, "limit": 200}])
                total += val
    return total


def gmc_second_moment_prediction(patches: Sequence[Tuple[float, float, float, float]], gamma: float,
                                 epsilon: float = 0.0, weights: Optional[Sequence[float]] = None) -> float:
    """``int int f(z) f(w) exp(gamma^2 P_{|t-s|+2eps} C(x-y)) dz dw`` for ``f = sum c_i 1_{R_i}``.

    Rectangles are ``(t_lo, t_hi, theta_lo, theta_hi)``. Each pair of
    rectangles reduces exactly to a 2-D integral over the difference variables
    with piecewise-linear overlap weights; the logarithmic singularity on the
    diagonal (``eps = 0``) is handled in polar coordinates.

    Raises
    ------
    ValueError
        For ``gamma >= 2``, where the unmollified integral diverges.
    """
    if gamma >= 2.0:
        raise ValueError("the second moment is only finite for gamma < 2")
    weights = [1.0] * len(patches) if weights is None else list(weights)
    total = 0.0
    for i, p in enumerate(patches):
        for j, q in enumerate(patches):
            if j < i:
                continue
            val = _patch_pair_integral(p, q, gamma, epsilon)
            total += (1.0 if i == j else 2.0) * weights[i] * weights[j] * val
    return total


# --------------------------------------------------------------------------
# Maximum of the field


@njit(cache=True)
def _gap_maxima(th: np.ndarray, iters: int) -> np.ndarray:
    """Critical point of ``log|det|`` in each gap ``(th[j], th[j+1])`` (sorted, lifted)."""
    n = th.size
    out = np.empty(n)
    for j in range(n):
        lo = th[j]
        hi = th[j + 1] if j + 1 < n else th[0] + 2.0 * math.pi
        x = 0.5 * (lo + hi)
        for _ in range(iters):
            f1 = 0.0
            f2 = 0.0
            for k in range(n):
                c = 1.0 / math.tan(0.5 * (x - th[k]))
                f1 += 0.5 * c
                f2 -= 0.25 * (1.0 + c * c)
            step = -f1 / f2
            if abs(step) < 1e-14:
                # converged to rounding; a bracket update here would start a pointless bisection
                x += step
                break
            if f1 > 0:
                lo = x
            else:
                hi = x
            x = x + step if lo < x + step < hi else 0.5 * (lo + hi)
        out[j] = x
    return out


def row_maximum(phases: np.ndarray, iters: int = 60) -> Tuple[float, float]:
    """Exact ``max_x log|det(e^{ix} - U)|`` for one time slice.

    Between consecutive eigenangles ``log|det|`` is concave, so each gap holds a
    single local maximum, located by safeguarded Newton steps on the derivative
    ``(1/2) sum_k cot((x - theta_k)/2)``.
    """
    th = np.sort(np.mod(np.asarray(phases, dtype=float), TWO_PI))
    x = _gap_maxima(th, iters)
    vals, _ = log_char_poly(th, x)
    k = int(np.argmax(vals))
    return float(vals[k]), float(np.mod(x[k], TWO_PI))


def max_field_statistic(field: Union[CylinderField, np.ndarray], n: int) -> float:
    """``max h / log N`` over the field values (0 for an identically zero field)."""
    vals = field.values if isinstance(field, CylinderField) else np.asarray(field, dtype=float)
    return float(np.max(vals)) / math.log(n)


def max_statistic_sample(n: int, seed: SeedLike = None, t_window: float = 0.5,
                         rows_per_unit: Optional[float] = None, dt: Optional[float] = None) -> float:
    """``max_{t, x} h_N(t, x) / log N`` over ``[0, t_window] x U``.

    The angle maximum is exact per time row; rows are spaced ``1/(4N)`` apart by
    default (a discrete-time proxy for the continuous maximum).
    """
    rng = as_generator(seed)
    dt = default_dt(n) if dt is None else dt
    rows_per_unit = 4.0 * n if rows_per_unit is None else rows_per_unit
    n_rows = max(2, int(round(t_window * rows_per_unit)) + 1)
    times = np.linspace(0.0, t_window, n_rows)
    traj = phase_path(n, list(times), rng, dt)
    best = max(row_maximum(traj.phases[i])[0] for i in range(n_rows))
    return best / math.log(n)


@dataclass
class MaxTrend:
    ns: List[int]
    medians: List[float]
    distances: List[float]
    monotone: bool
    samples: Dict[int, List[float]] = field(default_factory=dict)


def max_field_trend(ns: Sequence[int], n_samples: int, seed, t_window: float = 0.5) -> MaxTrend:
    """Median of the max statistic per ``n`` and whether it approaches ``sqrt 2`` monotonically."""
    from .seeding import SeedTree

    root = seed if isinstance(seed, SeedTree) else SeedTree(int(seed))
    med, dist, samples = [], [], {}
    for n in ns:
        vals = [max_statistic_sample(n, root.child(f"max-n{n}", i), t_window) for i in range(n_samples)]
        samples[n] = vals
        m = float(np.median(vals))
        med.append(m)
        dist.append(abs(m - math.sqrt(2.0)))
    mono = all(b <= a for a, b in zip(dist, dist[1:]))
    return MaxTrend(list(ns), med, dist, mono, samples)
