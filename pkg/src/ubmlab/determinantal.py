"""Multi-time determinantal structure of the unitary Brownian motion.

Conventions. Times are in the clock of ``dU = sqrt(2) U dB - U dt``. With
``c = (N+1)/2``, ``M = (N-1)/2``, ``m_k = k - c`` and ``tau = |t_i - t_j|/N``:

* ``t_i <= t_j``: ``K = (1/2pi) sum_{1<=k<=N} e^{(m_k^2 - M^2) tau} e^{i(x-y) m_k}``;
* ``t_i > t_j``:  ``K = -(1/2pi) sum_{k not in [1,N]} e^{-(m_k^2 - M^2) tau} e^{i(x-y) m_k}``.

Angles are integrated against Lebesgue measure ``dx`` on ``[0, 2pi)``.
The twisted heat kernel ``T`` and the out-of-equilibrium kernel are written in
their own clock, in which ``B_t ~ N(0, t)``; a unitary-Brownian time ``t``
corresponds to ``2t/N`` there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import integrate
from scipy.special import wofz

from .symbols import CircleSymbol, Singularity

TWO_PI = 2.0 * np.pi
TAIL_TOL = 1e-16
_LOG_TAIL = -math.log(TAIL_TOL)


# --------------------------------------------------------------------------
# Equilibrium extended kernel


def _inner_modes(n: int) -> np.ndarray:
    return np.arange(1, n + 1) - 0.5 * (n + 1)


def _outer_modes(n: int, tau: float) -> Tuple[np.ndarray, np.ndarray]:
    """Modes ``|m| > M`` and their weights ``e^{-(m^2 - M^2) tau}`` down to the tail tolerance.

    Consecutive weights shrink by at least ``r = e^{-(2|m|+1) tau}``, so the
    discarded tail on each side is at most ``w_last r / (1 - r)``; modes are
    added until that bound falls below 1e-16.
    """
    big_m = 0.5 * (n - 1)
    mods, wts = [], []
    m = big_m + 1.0
    while True:
        w = math.exp(-(m * m - big_m * big_m) * tau)
        mods.append(m)
        wts.append(w)
        r = math.exp(-(2.0 * m + 1.0) * tau)
        if w * r / (1.0 - r) < TAIL_TOL:
            break
        m += 1.0
    mods = np.array(mods)
    wts = np.array(wts)
    return np.concatenate([-mods[::-1], mods]), np.concatenate([wts[::-1], wts])


@dataclass(frozen=True)
class ExtendedKernel:
    """Evaluator of ``K(i, x; j, y)`` for the equilibrium process at ``times``.

    At equal times with ``i > j`` the displayed sum equals the Dirichlet kernel
    minus a delta function on the diagonal; the regular part (the Dirichlet
    kernel) is returned, and :func:`fredholm_expectation` merges equal-time
    copies so the delta never needs to be represented.
    """

    n: int
    times: Tuple[float, ...]

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")
        t = tuple(float(s) for s in self.times)
        if not all(math.isfinite(s) for s in t):
            raise ValueError("times must be finite")
        if any(b < a for a, b in zip(t, t[1:])):
            raise ValueError("times must be sorted in non-decreasing order")
        object.__setattr__(self, "times", t)

    def modes(self, i: int, j: int) -> Tuple[np.ndarray, np.ndarray]:
        """Fourier modes ``m`` and coefficients ``a_m`` with ``K = sum a_m e^{i(x-y)m}``."""
        n = self.n
        tau = abs(self.times[i] - self.times[j]) / n
        big_m = 0.5 * (n - 1)
        if i <= j or tau == 0.0:
            m = _inner_modes(n)
            return m, np.exp((m * m - big_m * big_m) * tau) / TWO_PI
        m, w = _outer_modes(n, tau)
        return m, -w / TWO_PI

    def block(self, i: int, xs: np.ndarray, j: int, ys: np.ndarray) -> np.ndarray:
        m, a = self.modes(i, j)
        ex = np.exp(1j * np.multiply.outer(np.asarray(xs, dtype=float), m))
        ey = np.exp(-1j * np.multiply.outer(np.asarray(ys, dtype=float), m))
        return (ex * a) @ ey.T

    def evaluate(self, i: int, x: float, j: int, y: float) -> complex:
        return complex(self.block(i, np.array([x]), j, np.array([y]))[0, 0])

    __call__ = evaluate


def equilibrium_extended_kernel(n: int, times: Sequence[float]) -> ExtendedKernel:
    return ExtendedKernel(int(n), tuple(times))


def dirichlet_kernel(n: int, d: np.ndarray) -> np.ndarray:
    """``(1/2pi) sin(N d/2) / sin(d/2)`` with the limit ``N/2pi`` at ``d = 0 mod 2pi``."""
    d = np.asarray(d, dtype=float)
    s = np.sin(0.5 * d)
    small = np.abs(s) < 1e-12
    safe = np.where(small, 1.0, s)
    # at d = 2 pi k the ratio is N (-1)^{k(N-1)}
    k = np.rint(d / TWO_PI)
    lim = n * np.where((k * (n - 1)) % 2 == 0, 1.0, -1.0)
    return np.where(small, lim, np.sin(0.5 * n * d) / safe) / TWO_PI


# --------------------------------------------------------------------------
# Twisted heat kernel


def twisted_heat_kernel(x, y, t: float, n: int, mode: str = "theta-series") -> np.ndarray:
    """``T(x, y)`` in its own clock (Gaussian kernel of variance ``t``).

    ``theta-series``: ``sum_k (-1)^{k(N-1)} p_t(x, y + 2k pi)``.
    ``fourier-series``: ``(1/2pi) sum_n e^{i(x-y)(n-c)} e^{-(n-c)^2 t/2}``, ``c = (N+1)/2``.
    Both sums stop once the neglected terms are below 1e-16.
    """
    if not t > 0:
        raise ValueError("t must be positive")
    raw = np.subtract(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    # T(d + 2 pi) = (-1)^{N-1} T(d): reduce to [-pi, pi) and carry the sign
    q = np.floor((raw + np.pi) / TWO_PI)
    d = raw - TWO_PI * q
    sgn = np.where((q * (n - 1)) % 2 == 0, 1.0, -1.0)
    return sgn * _twisted_reduced(d, t, n, mode)


def _twisted_reduced(d: np.ndarray, t: float, n: int, mode: str) -> np.ndarray:
    if mode == "theta-series":
        # image terms p_t(d - 2 k pi); |d| <= pi so |d - 2k pi| >= (2|k| - 1) pi
        kmax = 1
        while ((2 * kmax - 1) * np.pi) ** 2 / (2 * t) < _LOG_TAIL + 5 + 0.5 * max(0.0, -math.log(t)):
            kmax += 1
        ks = np.arange(-kmax, kmax + 1)
        sign = np.where((ks * (n - 1)) % 2 == 0, 1.0, -1.0)
        shifted = np.subtract.outer(d, TWO_PI * ks)
        vals = sign * np.exp(-shifted ** 2 / (2 * t)) / math.sqrt(TWO_PI * t)
        return vals.sum(axis=-1)
    if mode == "fourier-series":
        c = 0.5 * (n + 1)
        # |n - c| up to L where e^{-L^2 t/2} is below the tolerance
        big_l = math.sqrt(2 * (_LOG_TAIL + 5) / t) + 2
        ns = np.arange(math.floor(c - big_l), math.ceil(c + big_l) + 1)
        m = ns - c
        u = np.exp(-0.5 * m * m * t)
        vals = np.real(np.exp(1j * np.multiply.outer(d, m))) * u
        return vals.sum(axis=-1) / TWO_PI
    raise ValueError(f"unknown mode {mode!r}")


# --------------------------------------------------------------------------
# Out-of-equilibrium kernel


def out_of_equilibrium_kernel(x: Sequence[float], t: float, z, y, hermite_order: int = 40,
                              clock: str = "native") -> np.ndarray:
    """``K_{t,x}(z, y) = sum_i T(x_i, z) E prod_{j != i} sin((y - iB_t - x_j)/2) / sin((x_i - x_j)/2)``.

    The Gaussian expectation is done with Gauss-Hermite quadrature. By default
    (``clock="native"``) ``t`` is the variance of ``B_t``, the clock of ``T``;
    ``clock="ubm"`` converts a unitary-Brownian time via ``t -> 2t/N``.
    """
    x = np.asarray(x, dtype=float).ravel()
    n = x.size
    if not t > 0:
        raise ValueError("t must be positive")
    if n > 1:
        xs = np.sort(np.mod(x, TWO_PI))
        gaps = np.diff(np.concatenate([xs, [xs[0] + TWO_PI]]))
        if gaps.min() <= 1e-8:
            raise ValueError("initial angles must be pairwise separated by more than 1e-8")
    if clock == "ubm":
        s = 2.0 * t / n
    elif clock == "native":
        s = float(t)
    else:
        raise ValueError(f"unknown clock {clock!r}")
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    zz, yy = np.broadcast_arrays(z, y)
    nodes, weights = np.polynomial.hermite.hermgauss(hermite_order)
    b = math.sqrt(2.0 * s) * nodes
    weights = weights / math.sqrt(math.pi)
    out = np.zeros(zz.shape, dtype=complex)
    for i in range(n):
        others = np.delete(x, i)
        denom = np.prod(np.sin(0.5 * (x[i] - others)))
        # arg[..., q, j] = (y - i b_q - x_j)/2
        arg = 0.5 * (yy[..., None, None] - 1j * b[:, None] - others)
        num = np.prod(np.sin(arg), axis=-1)
        expect = (num @ weights) / denom
        out += twisted_heat_kernel(x[i], zz, s, n) * expect
    return out


# --------------------------------------------------------------------------
# Microscale limit


def microscale_limit_kernel(mu: float, tau: float, branch: str = "forward") -> float:
    """Limits of ``(1/N) K`` at angle gap ``mu/N`` and time gap ``tau/N``.

    forward:  ``(1/2pi) int_{|z|<1/2} e^{(z^2 - 1/4) tau + i mu z} dz`` (adaptive quadrature);
    backward: ``(1/2pi) int_{|z|>1/2} e^{(1/4 - z^2) tau + i mu z} dz`` (closed form
    through the Faddeeva function). Both integrals are real by symmetry.
    """
    if tau < 0:
        raise ValueError("tau must be non-negative")
    if branch == "forward":
        val, _ = integrate.quad(lambda z: math.exp((z * z - 0.25) * tau) * math.cos(mu * z),
                                -0.5, 0.5, epsabs=1e-13, epsrel=1e-12, limit=200)
        return val / TWO_PI
    if branch == "backward":
        if tau == 0:
            raise ValueError("the backward branch diverges at tau = 0")
        return backward_closed_form(mu, tau)
    raise ValueError(f"unknown branch {branch!r}")


def backward_closed_form(mu: float, tau: float) -> float:
    """``(1/pi) int_{1/2}^inf e^{(1/4 - z^2) tau} cos(mu z) dz``.

    Completing the square gives
    ``(1/pi) Re[ sqrt(pi)/(2 sqrt(tau)) e^{i mu/2} w(i sqrt(tau)/2 + mu/(2 sqrt(tau))) ]``.
    """
    r = math.sqrt(tau)
    val = math.sqrt(math.pi) / (2 * r) * np.exp(0.5j * mu) * wofz(0.5j * r + mu / (2 * r))
    return float(np.real(val)) / math.pi


def backward_by_quadrature(mu: float, tau: float) -> float:
    f = lambda z: math.exp((0.25 - z * z) * tau) * math.cos(mu * z)
    val, _ = integrate.quad(f, 0.5, np.inf, epsabs=1e-13, epsrel=1e-12, limit=400)
    return val / math.pi


# --------------------------------------------------------------------------
# Fredholm determinants


@dataclass(frozen=True)
class CircleTest:
    """A bounded test function ``g`` on the circle.

    ``breakpoints`` lists angles where ``g`` is not smooth (jumps, kinks,
    joins of piecewise definitions). ``arcs`` optionally lists ``(a, b)`` with
    ``a < b <= a + 2pi`` outside of which ``g`` vanishes. Without breakpoints
    or arcs the periodic trapezoid rule is used; otherwise Gauss-Legendre
    panels between consecutive breakpoints.
    """

    func: Callable[[np.ndarray], np.ndarray]
    breakpoints: Tuple[float, ...] = ()
    arcs: Optional[Tuple[Tuple[float, float], ...]] = None
    label: str = ""

    def __call__(self, theta):
        return np.asarray(self.func(np.asarray(theta, dtype=float)), dtype=float)

    def cut_points(self) -> np.ndarray:
        pts = list(self.breakpoints)
        if self.arcs:
            for a, b in self.arcs:
                pts.extend([a, b])
        return np.unique(np.mod(np.asarray(pts, dtype=float), TWO_PI))

    def in_support(self, theta: np.ndarray) -> np.ndarray:
        if self.arcs is None:
            return np.ones(np.shape(theta), dtype=bool)
        inside = np.zeros(np.shape(theta), dtype=bool)
        for a, b in self.arcs:
            inside |= np.mod(theta - a, TWO_PI) < (b - a)
        return inside


def zero_test() -> CircleTest:
    return CircleTest(lambda th: np.zeros_like(th), label="zero")


def constant_test(c: float) -> CircleTest:
    return CircleTest(lambda th: np.full_like(th, c), label=f"const({c})")


def arc_indicator_test(a: float, b: float, value: float) -> CircleTest:
    """``value`` on the arc ``[a, b]``, zero elsewhere."""
    if not a < b <= a + TWO_PI:
        raise ValueError("need a < b <= a + 2pi")

    def g(theta):
        return np.where(np.mod(theta - a, TWO_PI) <= (b - a), value, 0.0)

    return CircleTest(g, (), ((float(a), float(b)),), f"{value}*1[{a},{b}]")


def symbol_test(f: CircleSymbol, scale: float = 1.0) -> CircleTest:
    """``scale * f`` as a test; marked singular angles become breakpoints."""
    bps = tuple(s.angle for s in f.singularities)
    return CircleTest(lambda th: scale * np.real(f(th)), bps, None, f.kind)


def merge_tests(a: CircleTest, b: CircleTest) -> CircleTest:
    """The equal-time combination ``(1 + g_a)(1 + g_b) - 1``."""
    arcs = None
    if a.arcs is not None and b.arcs is not None:
        arcs = tuple(a.arcs) + tuple(b.arcs)
    bps = tuple(a.breakpoints) + tuple(b.breakpoints)
    if arcs is None:
        for s in (a, b):
            if s.arcs:
                bps += tuple(x for arc in s.arcs for x in arc)
    fa, fb = a.func, b.func
    return CircleTest(lambda th: (1.0 + fa(th)) * (1.0 + fb(th)) - 1.0, bps, arcs,
                      f"({a.label})*({b.label})")


def quadrature_nodes(test: CircleTest, m: int) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes and weights (summing to the support length) for one circle copy."""
    cuts = test.cut_points()
    if cuts.size == 0:
        x = TWO_PI * np.arange(m) / m
        return x, np.full(m, TWO_PI / m)
    edges = np.concatenate([cuts, [cuts[0] + TWO_PI]])
    gx, gw = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        length = hi - lo
        if length <= 1e-15:
            continue
        mid = 0.5 * (lo + hi)
        if not test.in_support(np.array([mid]))[0]:
            continue
        q = max(16, int(math.ceil(m * length / TWO_PI)))
        t, w = np.polynomial.legendre.leggauss(q)
        gx.append(mid + 0.5 * length * t)
        gw.append(0.5 * length * w)
    if not gx:
        return np.zeros(0), np.zeros(0)
    return np.concatenate(gx), np.concatenate(gw)


@dataclass
class FredholmProblem:
    kernel: ExtendedKernel
    tests: List[CircleTest]
    quadrature_points: Optional[int] = None

    def __post_init__(self):
        if len(self.tests) != len(self.kernel.times):
            raise ValueError("need one test per kernel time")
        self.tests = [t if isinstance(t, CircleTest) else CircleTest(t) for t in self.tests]
        if self.quadrature_points is None:
            self.quadrature_points = 8 * self.kernel.n
        if self.quadrature_points < 8 * self.kernel.n:
            raise ValueError(f"quadrature_points must be at least 8N = {8 * self.kernel.n}")


@dataclass
class FredholmResult:
    value: float
    imag_residue: float
    m: int
    n: int
    times: Tuple[float, ...]
    size: int = 0

    def row(self) -> dict:
        return {"value": self.value, "imag_residue": self.imag_residue, "m": self.m,
                "n": self.n, "times": " ".join(f"{t:.17g}" for t in self.times)}


class FredholmError(RuntimeError):
    pass


def _merged_copies(problem: FredholmProblem):
    """Group equal times; the i > j delta at equal times is absorbed by merging tests."""
    times = problem.kernel.times
    groups: List[Tuple[int, CircleTest]] = []
    for idx, (t, g) in enumerate(zip(times, problem.tests)):
        if groups and times[groups[-1][0]] == t:
            groups[-1] = (groups[-1][0], merge_tests(groups[-1][1], g))
        else:
            groups.append((idx, g))
    return groups


def fredholm_matrix(problem: FredholmProblem) -> np.ndarray:
    """``sqrt(w_a) g(x_a) K(x_a, x_b) sqrt(w_b)`` over all merged circle copies."""
    k = problem.kernel
    copies = []
    for idx, g in _merged_copies(problem):
        x, w = quadrature_nodes(g, problem.quadrature_points)
        gx = g(x)
        keep = gx != 0.0
        copies.append((idx, x[keep], w[keep], gx[keep]))
    sizes = [c[1].size for c in copies]
    total = sum(sizes)
    mat = np.zeros((total, total), dtype=complex)
    offs = np.concatenate([[0], np.cumsum(sizes)])
    for a, (i, xa, wa, ga) in enumerate(copies):
        if xa.size == 0:
            continue
        left = np.sqrt(wa) * ga
        for b, (j, xb, wb, _) in enumerate(copies):
            if xb.size == 0:
                continue
            blk = k.block(i, xa, j, xb)
            mat[offs[a]:offs[a + 1], offs[b]:offs[b + 1]] = left[:, None] * blk * np.sqrt(wb)[None, :]
    return mat


def fredholm_expectation(problem: FredholmProblem) -> FredholmResult:
    """``E prod_j prod_i (1 + g_j(z_i(t_j)))`` as ``det(Id + g K)``.

    Raises
    ------
    FredholmError
        If the imaginary part of the determinant exceeds 1e-6.
    """
    mat = fredholm_matrix(problem)
    k = problem.kernel
    if mat.shape[0] == 0:
        return FredholmResult(1.0, 0.0, problem.quadrature_points, k.n, k.times, 0)
    sign, logdet = np.linalg.slogdet(np.eye(mat.shape[0]) + mat)
    val = sign * np.exp(logdet)
    resid = abs(val.imag)
    if resid > 1e-6:
        raise FredholmError(f"imaginary residue {resid:.3g} exceeds 1e-6; refine the quadrature")
    return FredholmResult(float(val.real), float(resid), problem.quadrature_points, k.n,
                          k.times, mat.shape[0])


# --------------------------------------------------------------------------
# Truncated singularities and decoupling


def smootherstep_bump(r) -> np.ndarray:
    """C^2 radial bump: 1 on ``r <= 1``, 0 on ``r >= 2``, ``1 - (10s^3 - 15s^4 + 6s^5)`` with ``s = r - 1`` between."""
    s = np.clip(np.asarray(r, dtype=float) - 1.0, 0.0, 1.0)
    return 1.0 - s ** 3 * (10.0 - 15.0 * s + 6.0 * s * s)


def _chord(theta, e):
    return np.abs(2.0 * np.sin(0.5 * (np.asarray(theta, dtype=float) - e)))


def truncated_singularity_symbol(e: float, gamma: float, lam: float, n: int,
                                 k_max: Optional[int] = None) -> CircleSymbol:
    """``f(z) = |z-E|^gamma chi(|z-E|/theta) + (2 theta)^gamma (1 - chi)``, ``theta = lam/n``.

    Distances are chordal, ``|e^{i phi} - e^{i E}|``. Coefficients come from a
    fine trapezoid rule on the smooth-in-pieces evaluator.
    """
    if lam < 1:
        raise ValueError("lambda must be at least 1")
    theta = lam / n
    far = (2.0 * theta) ** gamma

    def ev(phi):
        d = _chord(phi, e)
        chi = smootherstep_bump(d / theta)
        with np.errstate(divide="ignore", invalid="ignore"):
            near = np.where(d > 0, d ** gamma, 0.0 if gamma > 0 else 1.0)
        return near * chi + far * (1.0 - chi)

    k_max = 8 * n if k_max is None else k_max
    pts = max(64 * n, 16 * k_max)
    grid = TWO_PI * np.arange(pts) / pts
    fft = np.fft.fft(ev(grid)) / pts
    ks = np.arange(-k_max, k_max + 1)
    sing = (Singularity(e, gamma, "power"),) if gamma != 0 else ()
    return CircleSymbol(fft[ks % pts], ev, sing, "truncated-singularity")


def truncated_singularity_test(e: float, gamma: float, lam: float, n: int) -> CircleTest:
    """``f / (2 theta)^gamma - 1``: compactly supported version of the symbol.

    Rescaling each factor by a constant leaves the decoupling ratio unchanged.
    """
    theta = lam / n
    if 2 * theta >= 2.0:
        raise ValueError("lambda/n must be below 1 so the support is a proper arc")
    f = truncated_singularity_symbol(e, gamma, lam, n, k_max=1)
    scale = (2.0 * theta) ** (-gamma)
    half = 2.0 * math.asin(theta)               # chord = 2 theta
    join = 2.0 * math.asin(0.5 * theta)         # chord = theta
    bps = (e, e - join, e + join)
    return CircleTest(lambda phi: scale * f.evaluator(phi) - 1.0, bps,
                      ((e - half, e + half),), f"trunc({e:.6g},{gamma:g})")


@dataclass
class DecouplingResult:
    ratio: float
    joint: float
    first: float
    second: float
    m: int


def decoupling_ratio(e1: float, e2: float, t1: float, t2: float, gammas: Tuple[float, float],
                     lam: float, n: int, quadrature_points: Optional[int] = None) -> DecouplingResult:
    """``E[prod f_1(z(t_1)) prod f_2(z(t_2))] / (E[prod f_1] E[prod f_2])`` via Fredholm determinants."""
    theta = lam / n
    dang = abs(math.remainder(e1 - e2, TWO_PI))
    if t1 == t2 and dang < 4.0 * theta:
        raise ValueError("equal-time singularities must be separated by at least 4*lambda/n")
    m = 8 * n if quadrature_points is None else quadrature_points
    g1 = truncated_singularity_test(e1, gammas[0], lam, n)
    g2 = truncated_singularity_test(e2, gammas[1], lam, n)
    order = [(t1, g1), (t2, g2)]
    order.sort(key=lambda p: p[0])
    joint = fredholm_expectation(FredholmProblem(
        equilibrium_extended_kernel(n, [order[0][0], order[1][0]]), [order[0][1], order[1][1]], m))
    a = fredholm_expectation(FredholmProblem(equilibrium_extended_kernel(n, [t1]), [g1], m))
    b = fredholm_expectation(FredholmProblem(equilibrium_extended_kernel(n, [t2]), [g2], m))
    return DecouplingResult(joint.value / (a.value * b.value), joint.value, a.value, b.value, m)
