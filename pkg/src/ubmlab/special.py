"""Barnes G-function and the CUE moments of |det(U - e^{i theta})|."""

from __future__ import annotations

import math

import numpy as np
from scipy.special import gammaln, zeta

EULER_GAMMA = 0.57721566490153286061
_K = 64          # explicit factors in the Weierstrass product
_TAIL_TERMS = 40


def _log_g_one_plus(z: float) -> float:
    """log G(1+z) for |z| <= 1 from the Weierstrass product.

    The product is truncated after ``_K`` factors; the remainder
    ``sum_{k>K} [k log(1+z/k) - z + z^2/(2k)]`` is re-expanded in powers of ``z``
    and summed with Hurwitz zeta values, which is exact up to the truncation of
    a series with ratio ``|z|/(K+1)``.
    """
    k = np.arange(1, _K + 1, dtype=float)
    head = math.fsum(k * np.log1p(z / k) - z + z * z / (2.0 * k))
    m = np.arange(3, _TAIL_TERMS + 3)
    tail = math.fsum((-1.0) ** (m + 1) * z ** m / m * zeta(m - 1.0, _K + 1.0))
    return 0.5 * z * math.log(2 * math.pi) - 0.5 * (z + (1.0 + EULER_GAMMA) * z * z) + head + tail


def log_barnes_g(x: float) -> float:
    """``log G(x)`` for real ``x > 0``; ``G`` is positive there."""
    x = float(x)
    if not x > 0 or not math.isfinite(x):
        raise ValueError(f"barnes_g is implemented for finite x > 0, got {x}")
    # walk down with log G(y+1) = lgamma(y) + log G(y) until 1 + z, |z| <= 1
    acc = []
    y = x
    while y > 2.0:
        y -= 1.0
        acc.append(gammaln(y))
    return _log_g_one_plus(y - 1.0) + math.fsum(acc)


def barnes_g(x: float) -> float:
    return math.exp(log_barnes_g(x))


def fh_constant_log(alpha: float) -> float:
    """``log[G(1+alpha)^2 / G(1+2 alpha)]``, the single-singularity constant."""
    return 2.0 * log_barnes_g(1.0 + alpha) - log_barnes_g(1.0 + 2.0 * alpha)


def log_keating_snaith_moment(n: int, gamma: float) -> float:
    """``log E|det(U - e^{i theta})|^gamma`` for Haar ``U`` of size ``n``."""
    if n < 1:
        raise ValueError("n must be positive")
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    j = np.arange(1, n + 1, dtype=float)
    terms = gammaln(j) + gammaln(j + gamma) - 2.0 * gammaln(j + 0.5 * gamma)
    return math.fsum(terms)


def keating_snaith_moment(n: int, gamma: float) -> float:
    return math.exp(log_keating_snaith_moment(n, gamma))


def keating_snaith_log_variance(n: int) -> float:
    """``Var log|det(U - e^{i theta})|`` = (1/2) sum_{j<=n} psi'(j).

    Obtained from the second derivative in ``gamma`` of the log-moment at 0.
    """
    from scipy.special import polygamma

    j = np.arange(1, n + 1, dtype=float)
    return 0.5 * math.fsum(polygamma(1, j))
