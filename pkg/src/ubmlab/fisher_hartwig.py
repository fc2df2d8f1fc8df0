"""Toeplitz determinants, Fisher-Hartwig symbols and their asymptotic predictions."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import toeplitz
from scipy.special import gammaln, rgamma

from .special import fh_constant_log, log_barnes_g
from .symbols import CircleSymbol, Singularity, h_half_inner, symbol_from_spec

TWO_PI = 2.0 * np.pi
WORKING_K = 1 << 16
CONV_TOL = 1e-8


# --------------------------------------------------------------------------
# Symbols with Fisher-Hartwig singularities


@dataclass(frozen=True)
class FHSymbol:
    """``f(e^{i theta}) = e^{V} prod_j |e^{i theta} - e^{i z_j}|^{2 alpha_j}``."""

    singular: Tuple[Tuple[float, float], ...] = ()
    smooth: Optional[CircleSymbol] = None

    def __post_init__(self):
        sing = tuple((float(a), float(b)) for a, b in self.singular)
        for _, alpha in sing:
            if not alpha > -0.5:
                raise ValueError(f"exponents must exceed -1/2, got {alpha}")
        object.__setattr__(self, "singular", sing)
        if self.smooth is not None:
            if not self.smooth.is_real():
                raise ValueError("the smooth part V must be real")

    def __call__(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        out = np.ones(theta.shape)
        for z, alpha in self.singular:
            out = out * np.abs(2.0 * np.sin(0.5 * (theta - z))) ** (2 * alpha)
        if self.smooth is not None:
            out = out * np.exp(np.real(self.smooth(theta)))
        return out


def fh_single_coefficients(alpha: float, ks: np.ndarray) -> np.ndarray:
    """Coefficients of ``|1 - e^{i theta}|^{2 alpha}``:
    ``(-1)^k Gamma(1+2a) / (Gamma(1+a+k) Gamma(1+a-k))``.

    For large ``|k|`` the reflection formula turns this into
    ``-Gamma(1+2a) sin(pi a)/pi * Gamma(|k|-a)/Gamma(|k|+1+a)``,
    evaluated through log-gamma differences.
    """
    ks = np.abs(np.asarray(ks))
    out = np.empty(ks.shape, dtype=float)
    g = math.gamma(1.0 + 2.0 * alpha)
    direct = ks <= max(20, int(alpha) + 2)
    kd = ks[direct].astype(float)
    out[direct] = g * np.where(ks[direct] % 2 == 0, 1.0, -1.0) * rgamma(1.0 + alpha + kd) * rgamma(1.0 + alpha - kd)
    kl = ks[~direct].astype(float)
    out[~direct] = -g * math.sin(math.pi * alpha) / math.pi * np.exp(
        gammaln(kl - alpha) - gammaln(kl + 1.0 + alpha))
    return out


def _tail_l1(alpha: float, w: int) -> float:
    """``sum_{|k| > w} |c_k|`` for the single factor: explicit terms to 4w plus a power-law remainder."""
    if float(alpha).is_integer():
        return 0.0
    ks = np.arange(w + 1, 4 * w + 1)
    c = np.abs(fh_single_coefficients(alpha, ks))
    if alpha <= 0:
        return float("inf")
    last = c[-1] * (4 * w) ** (1 + 2 * alpha)
    remainder = last * (4 * w) ** (-2 * alpha) / (2 * alpha)
    return 2.0 * (math.fsum(c) + remainder)


def _tail_sup(alpha: float, w: int) -> float:
    if float(alpha).is_integer():
        return 0.0
    return float(abs(fh_single_coefficients(alpha, np.array([w + 1]))[0]))


def _tail_l2(alpha: float, w: int) -> float:
    if float(alpha).is_integer():
        return 0.0
    ks = np.arange(w + 1, 4 * w + 1)
    c2 = fh_single_coefficients(alpha, ks) ** 2
    if 1 + 4 * alpha <= 0:
        return float("inf")
    last = c2[-1] * (4 * w) ** (2 + 4 * alpha)
    remainder = last * (4 * w) ** (-1 - 4 * alpha) / (1 + 4 * alpha)
    return math.sqrt(2.0 * (math.fsum(c2) + remainder))


def _fft_convolve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    size = a.size + b.size - 1
    nfft = 1 << (size - 1).bit_length()
    return np.fft.ifft(np.fft.fft(a, nfft) * np.fft.fft(b, nfft))[:size]


class ConvolutionError(RuntimeError):
    pass


def fh_symbol_coefficients(symbol: FHSymbol, k_max: int, working_k: int = WORKING_K) -> CircleSymbol:
    """Fourier coefficients of an FH symbol for ``|k| <= k_max``.

    Each singular factor has closed-form coefficients (rotated by
    ``e^{-ik z_j}``); ``e^V`` comes from an FFT of the smooth evaluator. The
    factors are convolved exactly after truncation at ``working_k``.

    Raises
    ------
    ConvolutionError
        When the tail-norm bound on the truncation loss exceeds 1e-8.
    """
    factors = []
    tails = []         # (l1 tail, sup tail at the lag, l2 tail, l1 norm, l2 norm)
    m = len(symbol.singular) + (symbol.smooth is not None)
    ks_w = np.arange(-working_k, working_k + 1)
    lag = (working_k - k_max) // max(1, m - 1)
    for z, alpha in symbol.singular:
        c = fh_single_coefficients(alpha, ks_w) * np.exp(-1j * ks_w * z)
        factors.append(c)
        tails.append((_tail_l1(alpha, working_k), _tail_sup(alpha, lag), _tail_l2(alpha, working_k),
                      float(np.sum(np.abs(c))) + _tail_l1(alpha, working_k),
                      float(np.sqrt(np.sum(np.abs(c) ** 2)))))
    if symbol.smooth is not None:
        v = symbol.smooth
        kk = max(64, 8 * v.k_max)
        while True:
            pts = 4 * kk
            grid = TWO_PI * np.arange(pts) / pts
            ev = np.exp(np.real(v.series(grid))) if v.evaluator is None else np.exp(np.real(v(grid)))
            fft = np.fft.fft(ev) / pts
            kks = np.arange(-kk, kk + 1)
            c = fft[kks % pts]
            edge = np.abs(c[:4]).max()
            if edge < 1e-18 * np.abs(c).max() or kk >= working_k:
                break
            kk *= 2
        full = np.zeros(2 * working_k + 1, dtype=complex)
        full[working_k - kk:working_k + kk + 1] = c
        factors.append(full)
        tails.append((0.0, 0.0, 0.0, float(np.sum(np.abs(c))), float(np.sqrt(np.sum(np.abs(c) ** 2)))))
    if not factors:
        c = np.zeros(2 * k_max + 1, dtype=complex)
        c[k_max] = 1.0
        return CircleSymbol(c, symbol, (), "fh")
    # truncation bound: a dropped index |j_f| > W forces another index beyond the lag
    err = 0.0
    if len(factors) > 1:
        for f in range(len(factors)):
            for g in range(len(factors)):
                if f == g:
                    continue
                rest = 1.0
                for h in range(len(factors)):
                    if h not in (f, g):
                        rest *= tails[h][3]
                pair = min(tails[f][0] * tails[g][1], tails[f][2] * tails[g][4])
                err += pair * rest
    if err > CONV_TOL:
        raise ConvolutionError(f"convolution truncation bound {err:.3g} exceeds {CONV_TOL:g}; "
                               "increase the working truncation")
    prod = factors[0]
    for c in factors[1:]:
        full = _fft_convolve(prod, c)
        mid = (full.size - 1) // 2
        prod = full[mid - working_k:mid + working_k + 1]
    out = prod[working_k - k_max:working_k + k_max + 1]
    sing = tuple(Singularity(z, 2 * a, "power") for z, a in symbol.singular if a != 0)
    result = CircleSymbol(out, symbol, sing, "fh")
    object.__setattr__(result, "kind", "fh")
    return result


# --------------------------------------------------------------------------
# Toeplitz determinants


@dataclass
class ToeplitzResult:
    value: float
    log_abs: float
    sign: complex
    condition: float
    reliable: bool


def toeplitz_determinant(coeffs: CircleSymbol, n: int) -> ToeplitzResult:
    """``D_n(f) = det(f_hat(j - k))_{0 <= j,k < n}`` by pivoted LU in complex arithmetic.

    ``reliable`` is false when the 2-norm condition number exceeds 1e12.
    """
    if n < 1:
        raise ValueError("n must be positive")
    if coeffs.k_max < n - 1:
        raise ValueError(f"need coefficients up to |k| = {n - 1}, have {coeffs.k_max}")
    col = coeffs.coef(np.arange(n))
    row = coeffs.coef(-np.arange(n))
    mat = toeplitz(col, row)
    sign, logdet = np.linalg.slogdet(mat)
    cond = float(np.linalg.cond(mat))
    val = sign * math.exp(logdet) if logdet < 700 else sign * float("inf")
    value = float(val.real) if abs(val.imag) <= 1e-12 * abs(val) else val
    return ToeplitzResult(value, float(logdet), complex(sign), cond, cond <= 1e12)


# --------------------------------------------------------------------------
# Asymptotic predictions


def log_widom_asymptotic(symbol: FHSymbol, n: int) -> float:
    alphas = [a for _, a in symbol.singular]
    zs = [z for z, _ in symbol.singular]
    for i in range(len(zs)):
        for j in range(i + 1, len(zs)):
            if abs(2.0 * math.sin(0.5 * (zs[i] - zs[j]))) < 1e-14:
                raise ValueError("coincident singularities")
    out = [math.log(n) * sum(a * a for a in alphas)]
    out.extend(fh_constant_log(a) for a in alphas)
    for i in range(len(zs)):
        for j in range(i + 1, len(zs)):
            out.append(-2 * alphas[i] * alphas[j] * math.log(abs(2.0 * math.sin(0.5 * (zs[i] - zs[j])))))
    v = symbol.smooth
    if v is not None:
        v0 = float(np.real(v.mean))
        # a non-centered V contributes e^{n V_0}; the point values enter through V - V_0
        out.append(n * v0 + 0.5 * v.h_norm_sq())
        for z, a in symbol.singular:
            out.append(-a * (float(np.real(v.series(np.array([z]))[0])) - v0))
    return math.fsum(out)


def widom_asymptotic(symbol: FHSymbol, n: int) -> float:
    """``e^{(1/2)|V|_H^2 - sum a_j V(z_j)} n^{sum a_j^2} prod_{j<k} |z_j - z_k|^{-2 a_j a_k}
    prod G(1+a_j)^2 / G(1+2a_j)``."""
    return math.exp(log_widom_asymptotic(symbol, n))


@dataclass(frozen=True)
class PointSingularity:
    t: float
    theta: float
    gamma: float


@dataclass(frozen=True)
class SmoothInsertion:
    s: float
    f: CircleSymbol
    ref: object = None


@dataclass
class InsertionConfig:
    """Singularities ``(t, theta, gamma)`` and smooth insertions ``(s, f_s)``."""

    singularities: List[PointSingularity] = field(default_factory=list)
    smooth: List[SmoothInsertion] = field(default_factory=list)
    gamma_max: float = 4.0

    def __post_init__(self):
        self.singularities = [p if isinstance(p, PointSingularity) else PointSingularity(*p)
                              for p in self.singularities]
        self.smooth = [q if isinstance(q, SmoothInsertion) else SmoothInsertion(*q) for q in self.smooth]
        for p in self.singularities:
            if not 0 <= p.gamma <= self.gamma_max:
                raise ValueError(f"exponent {p.gamma} outside [0, {self.gamma_max}]")
        pts = self.singularities
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                if pts[i].t == pts[j].t and abs(math.remainder(pts[i].theta - pts[j].theta, TWO_PI)) < 1e-14:
                    raise ValueError("singularities must be pairwise distinct")

    def to_json(self) -> str:
        sm = []
        for q in self.smooth:
            ref = q.ref if q.ref is not None else {"coefficients": {
                str(k): [c.real, c.imag] for k, c in q.f.to_dict().items()}}
            sm.append({"s": q.s, "symbol_ref": ref})
        return json.dumps({"singularities": [{"t": p.t, "theta": p.theta, "gamma": p.gamma}
                                             for p in self.singularities], "smooth": sm},
                          sort_keys=True)

    @classmethod
    def from_json(cls, text: Union[str, dict], base_dir=None) -> "InsertionConfig":
        d = json.loads(text) if isinstance(text, str) else text
        sing = [PointSingularity(float(p["t"]), float(p["theta"]), float(p["gamma"]))
                for p in d.get("singularities", [])]
        sm = [SmoothInsertion(float(q["s"]), symbol_from_spec(q["symbol_ref"], base_dir), q["symbol_ref"])
              for q in d.get("smooth", [])]
        return cls(sing, sm)


def _poisson_point_value(f: CircleSymbol, delta: float, x: float, drop_mean: bool = True) -> float:
    """``[(P_delta - P_inf) f](e^{ix})`` (or ``P_delta f`` when ``drop_mean`` is false)."""
    ks = f.ks
    w = f.coeffs * np.exp(-np.abs(ks) * delta + 1j * ks * x)
    if drop_mean:
        w = w[ks != 0]
    return float(np.real(np.sum(w)))


def log_multitime_fh_rhs(config: InsertionConfig, n: int) -> float:
    parts = []
    sm = config.smooth
    for q in sm:
        parts.append(n * float(np.real(q.f.mean)))
    for q in sm:
        for r in sm:
            parts.append(0.5 * float(np.real(h_half_inner(q.f, r.f, abs(q.s - r.s)))))
    for p in config.singularities:
        for q in sm:
            parts.append(-0.5 * p.gamma * _poisson_point_value(q.f, abs(p.t - q.s), p.theta))
    for p in config.singularities:
        parts.append(p.gamma ** 2 / 4 * math.log(n) + fh_constant_log(p.gamma / 2))
    pts = config.singularities
    for i, p in enumerate(pts):
        for j, w in enumerate(pts):
            if i == j:
                continue
            parts.append(p.gamma * w.gamma / 4 * _log_max_over_gap(p.t, p.theta, w.t, w.theta))
    return math.fsum(parts)


def _log_max_over_gap(t1, x1, t2, x2) -> float:
    """``log(max(|e^z|, |e^w|) / |e^z - e^w|)`` for ``z = t1 + i x1``, ``w = t2 + i x2``."""
    d = abs(t1 - t2)
    gap = abs(1.0 - math.exp(-d) * complex(math.cos(x1 - x2), math.sin(x1 - x2)))
    if gap == 0:
        raise ValueError("coincident singularities")
    return -math.log(gap)


def multitime_fh_rhs(config: InsertionConfig, n: int) -> float:
    """Right-hand side of the multi-time Fisher-Hartwig asymptotics.

    Pairs of singularities enter as ordered pairs, each with exponent
    ``gamma_z gamma_w / 4``; smooth-smooth terms run over ordered pairs
    including the diagonal, with the factor 1/2.
    """
    return math.exp(log_multitime_fh_rhs(config, n))


# --------------------------------------------------------------------------
# Covariance functional


@dataclass(frozen=True)
class Smooth:
    t: float
    f: CircleSymbol


@dataclass(frozen=True)
class LogSingularity:
    """The insertion ``gamma log|z - e^{i angle}|`` at time ``t``."""

    t: float
    angle: float
    gamma: float


def green_poisson(d: float, delta: float) -> float:
    """``P_delta C(d) = -(1/2) log|1 - e^{-delta} e^{id}|``."""
    gap = abs(1.0 - math.exp(-delta) * complex(math.cos(d), math.sin(d)))
    if gap == 0:
        raise ValueError("log/log covariance diverges at zero separation and equal times")
    return -0.5 * math.log(gap)


def covariance_functional(a: Union[Smooth, LogSingularity], b: Union[Smooth, LogSingularity]) -> float:
    delta = abs(a.t - b.t)
    if math.isinf(delta):
        return 0.0
    if isinstance(a, Smooth) and isinstance(b, Smooth):
        return float(np.real(h_half_inner(a.f, b.f, delta)))
    if isinstance(a, LogSingularity) and isinstance(b, Smooth):
        a, b = b, a
    if isinstance(a, Smooth):
        return -0.5 * b.gamma * _poisson_point_value(a.f, delta, b.angle)
    return a.gamma * b.gamma * green_poisson(a.angle - b.angle, delta)


# --------------------------------------------------------------------------
# Exact covariance of linear statistics


def _sinh_ratio(p: float, q: float) -> float:
    """``sinh(p)/sinh(q)`` for ``p >= q > 0`` without overflow; limit handled by callers."""
    return math.exp(p - q) * (-math.expm1(-2 * p)) / (-math.expm1(-2 * q))


def covariance_weights(n: int, t: float, ks: np.ndarray) -> np.ndarray:
    """Weights ``w_j`` with ``Cov = sum_j f_hat(j) g_hat(-j) w_j``.

    ``|j| <= N-1``: ``e^{-|j|t} sinh(j^2 t/N)/sinh(|j|t/N)`` (limit ``|j|`` at ``t=0``);
    ``|j| >= N``: ``e^{-j^2 t/N} sinh(|j|t)/sinh(|j|t/N)`` (limit ``N`` at ``t=0``).
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    out = np.zeros(len(ks))
    for idx, j in enumerate(np.abs(np.asarray(ks))):
        if j == 0:
            continue
        if t == 0:
            out[idx] = min(j, n)
            continue
        b = j * t / n
        if j <= n - 1:
            out[idx] = math.exp(-j * t) * _sinh_ratio(j * b, b)
        else:
            out[idx] = math.exp(-j * j * t / n) * _sinh_ratio(j * t, b)
    return out


def exact_linear_covariance(n: int, t: float, f: CircleSymbol, g: CircleSymbol) -> float:
    """``Cov(sum_k f(z_k(0)), sum_k g(z_k(t)))`` at equilibrium, exact for every ``n`` and ``t``."""
    k = max(f.k_max, g.k_max)
    ks = np.arange(-k, k + 1)
    w = covariance_weights(n, t, ks)
    val = np.sum(f.coef(ks) * g.coef(-ks) * w)
    return float(np.real(val))
