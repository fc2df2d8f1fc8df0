"""Functions on the unit circle carried by their Fourier coefficients.

Normalization: ``f_hat(k) = (1/2pi) int_0^{2pi} f(e^{i theta}) e^{-ik theta} d theta``,
so ``f(e^{i theta}) = sum_k f_hat(k) e^{ik theta}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

TWO_PI = 2.0 * np.pi


class SingularSymbolError(ValueError):
    """Quadrature was requested for a symbol with a marked or detected singularity."""


@dataclass(frozen=True)
class Singularity:
    angle: float
    exponent: float = 0.0
    kind: str = "power"          # "power": |z - e^{i angle}|^exponent, "log": log|z - e^{i angle}|


@dataclass(frozen=True)
class CircleSymbol:
    """Fourier coefficients ``f_hat(k)`` for ``|k| <= k_max``, stored as ``coeffs[k + k_max]``.

    ``evaluator`` (optional) maps angles to values; ``singularities`` marks points
    where the evaluator blows up or loses smoothness.
    """

    coeffs: np.ndarray
    evaluator: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)
    singularities: Tuple[Singularity, ...] = ()
    kind: str = "custom"

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex).ravel()
        if c.size % 2 != 1:
            raise ValueError("coefficient array must have odd length 2*k_max + 1")
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "singularities", tuple(self.singularities))

    # -- access ------------------------------------------------------------
    @property
    def k_max(self) -> int:
        return (self.coeffs.size - 1) // 2

    @property
    def ks(self) -> np.ndarray:
        return np.arange(-self.k_max, self.k_max + 1)

    def coef(self, k) -> np.ndarray:
        k = np.asarray(k)
        inside = np.abs(k) <= self.k_max
        idx = np.where(inside, k + self.k_max, 0)
        return np.where(inside, self.coeffs[idx], 0.0)

    @property
    def mean(self) -> complex:
        return complex(self.coef(0))

    @property
    def is_singular(self) -> bool:
        return len(self.singularities) > 0

    def is_real(self, tol: float = 1e-12) -> bool:
        return bool(np.all(np.abs(self.coeffs - np.conj(self.coeffs[::-1])) <= tol))

    def series(self, theta) -> np.ndarray:
        """Truncated Fourier sum at ``theta`` (ignores the evaluator)."""
        theta = np.asarray(theta, dtype=float)
        phase = np.exp(1j * np.multiply.outer(theta, self.ks))
        return phase @ self.coeffs

    def __call__(self, theta) -> np.ndarray:
        if self.evaluator is not None:
            return self.evaluator(np.asarray(theta, dtype=float))
        vals = self.series(theta)
        return vals.real if self.is_real() else vals

    def trace(self, phases: np.ndarray) -> np.ndarray:
        """``Tr f(U) = sum_k f(e^{i theta_k})``; last axis indexes eigenangles."""
        return np.sum(self(np.asarray(phases)), axis=-1)

    # -- algebra -----------------------------------------------------------
    def padded(self, k_max: int) -> "CircleSymbol":
        if k_max < self.k_max:
            return CircleSymbol(self.coeffs[self.k_max - k_max:self.k_max + k_max + 1],
                                None, self.singularities, self.kind)
        c = np.zeros(2 * k_max + 1, dtype=complex)
        c[k_max - self.k_max:k_max + self.k_max + 1] = self.coeffs
        return CircleSymbol(c, self.evaluator, self.singularities, self.kind)

    def scaled(self, a: complex) -> "CircleSymbol":
        ev = None if self.evaluator is None else (lambda th, e=self.evaluator: a * e(th))
        return CircleSymbol(a * self.coeffs, ev, self.singularities, self.kind)

    def __add__(self, other: "CircleSymbol") -> "CircleSymbol":
        k = max(self.k_max, other.k_max)
        ev = None
        if self.evaluator is not None and other.evaluator is not None:
            ev = lambda th, a=self.evaluator, b=other.evaluator: a(th) + b(th)
        c = self.padded(k).coeffs + other.padded(k).coeffs
        return CircleSymbol(c, ev, self.singularities + other.singularities, "sum")

    def rotated(self, phi: float) -> "CircleSymbol":
        """``theta -> f(theta - phi)``; coefficients pick up ``e^{-ik phi}``."""
        ev = None if self.evaluator is None else (lambda th, e=self.evaluator: e(th - phi))
        sing = tuple(Singularity(s.angle + phi, s.exponent, s.kind) for s in self.singularities)
        return CircleSymbol(self.coeffs * np.exp(-1j * self.ks * phi), ev, sing, self.kind)

    def h_norm_sq(self) -> float:
        return float(np.real(h_half_inner(self, self, 0.0)))

    def to_dict(self) -> Dict[int, complex]:
        return {int(k): complex(c) for k, c in zip(self.ks, self.coeffs) if c != 0}


# --------------------------------------------------------------------------
# Constructors


def from_coefficients(coeffs: Mapping[int, complex], kind: str = "trig") -> CircleSymbol:
    k_max = max((abs(int(k)) for k in coeffs), default=0)
    c = np.zeros(2 * k_max + 1, dtype=complex)
    for k, v in coeffs.items():
        c[int(k) + k_max] += v
    return CircleSymbol(c, None, (), kind)


def trig_symbol(cos: Mapping[int, float] = None, sin: Mapping[int, float] = None,
                const: float = 0.0) -> CircleSymbol:
    """``const + sum a_k cos(k theta) + sum b_k sin(k theta)`` with an exact evaluator."""
    cos = dict(cos or {})
    sin = dict(sin or {})
    coeffs: Dict[int, complex] = {0: const}
    for k, a in cos.items():
        if k <= 0:
            raise ValueError("cosine modes must be positive")
        coeffs[k] = coeffs.get(k, 0) + a / 2
        coeffs[-k] = coeffs.get(-k, 0) + a / 2
    for k, b in sin.items():
        if k <= 0:
            raise ValueError("sine modes must be positive")
        coeffs[k] = coeffs.get(k, 0) + b / 2j
        coeffs[-k] = coeffs.get(-k, 0) - b / 2j

    def ev(theta):
        out = np.full(np.shape(theta), float(const))
        for k, a in cos.items():
            out = out + a * np.cos(k * theta)
        for k, b in sin.items():
            out = out + b * np.sin(k * theta)
        return out

    s = from_coefficients(coeffs)
    return CircleSymbol(s.coeffs, ev, (), "trig")


def cos_symbol(mode: int = 1, amplitude: float = 1.0) -> CircleSymbol:
    return trig_symbol(cos={mode: amplitude})


def sin_symbol(mode: int = 1, amplitude: float = 1.0) -> CircleSymbol:
    return trig_symbol(sin={mode: amplitude})


def constant_symbol(c: float) -> CircleSymbol:
    return trig_symbol(const=c)


def log_singularity_symbol(angle: float, k_max: int) -> CircleSymbol:
    """``theta -> log|e^{i theta} - e^{i angle}|`` with analytic coefficients.

    ``log|1 - e^{i theta}| = -sum_{k != 0} e^{ik theta} / (2|k|)``; rotation to
    ``angle`` multiplies mode ``k`` by ``e^{-ik angle}``.
    """
    ks = np.arange(-k_max, k_max + 1)
    c = np.zeros(ks.size, dtype=complex)
    nz = ks != 0
    c[nz] = -np.exp(-1j * ks[nz] * angle) / (2.0 * np.abs(ks[nz]))

    def ev(theta):
        with np.errstate(divide="ignore"):
            return np.log(np.abs(np.exp(1j * theta) - np.exp(1j * angle)))

    return CircleSymbol(c, ev, (Singularity(angle, 0.0, "log"),), "log-singularity")


# --------------------------------------------------------------------------
# Fourier calculus


def fourier_coefficients(f: Union[Callable, CircleSymbol], k_max: int,
                         quadrature_points: Optional[int] = None,
                         kind: str = "quadrature") -> CircleSymbol:
    """Periodic trapezoid rule for ``f_hat(k)``, ``|k| <= k_max``.

    Raises
    ------
    SingularSymbolError
        For symbols carrying singularity markers (use their analytic
        coefficients instead) and for evaluators returning non-finite values.
    """
    if isinstance(f, CircleSymbol):
        if f.is_singular:
            raise SingularSymbolError("symbol has marked singularities; use its analytic "
                                      "coefficients instead of quadrature")
        if f.evaluator is None:
            return f.padded(k_max)
        func = f.evaluator
    else:
        func = f
    m = 4 * k_max if quadrature_points is None else int(quadrature_points)
    m = max(m, 8)
    if m < 4 * k_max:
        raise ValueError(f"need at least 4*k_max = {4 * k_max} quadrature points, got {m}")
    theta = TWO_PI * np.arange(m) / m
    vals = np.asarray(func(theta), dtype=complex)
    if not np.all(np.isfinite(vals)):
        raise SingularSymbolError("evaluator is not finite on the quadrature grid; "
                                  "mark the singularity and supply analytic coefficients")
    fft = np.fft.fft(vals) / m
    ks = np.arange(-k_max, k_max + 1)
    return CircleSymbol(fft[ks % m], func, (), kind)


def h_half_inner(f: CircleSymbol, g: CircleSymbol, t: float = 0.0):
    """``(f, P_t g)_H = sum_k |k| f_hat(k) g_hat(-k) e^{-|k| t}``.

    Real inputs give a real float. ``t = inf`` returns 0.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    if math.isinf(t):
        return 0.0
    k = max(f.k_max, g.k_max)
    ks = np.arange(-k, k + 1)
    w = np.abs(ks) * np.exp(-np.abs(ks) * t)
    val = np.sum(w * f.coef(ks) * g.coef(-ks))
    scale = np.sum(np.abs(w * f.coef(ks) * g.coef(-ks))) + 1e-300
    if abs(val.imag) <= 1e-12 * max(scale, 1.0):
        return float(val.real)
    return complex(val)


def poisson_smooth(f: CircleSymbol, t: float) -> CircleSymbol:
    """Poisson semigroup ``f_hat(k) -> f_hat(k) e^{-|k| t}``; ``t = 0`` is the identity."""
    if t < 0:
        raise ValueError("t must be non-negative")
    if t == 0:
        return f
    return CircleSymbol(f.coeffs * np.exp(-np.abs(f.ks) * t), None, (), f.kind)


def convolve_symbols(f: CircleSymbol, g: CircleSymbol, k_max: Optional[int] = None) -> CircleSymbol:
    """Product ``f g`` by coefficient convolution, truncated at ``k_max``."""
    full = np.convolve(f.coeffs, g.coeffs)
    kf = f.k_max + g.k_max
    k_max = kf if k_max is None else k_max
    ev = None
    if f.evaluator is not None and g.evaluator is not None:
        ev = lambda th, a=f.evaluator, b=g.evaluator: a(th) * b(th)
    s = CircleSymbol(full, ev, f.singularities + g.singularities, "product")
    return s.padded(k_max) if k_max != kf else s


# --------------------------------------------------------------------------
# Exchange format and config references


def write_symbol(sym: CircleSymbol, path: Union[str, Path]) -> Path:
    path = Path(path)
    lines = [f"# kind={sym.kind}", f"# k_max={sym.k_max}"]
    for k, c in zip(sym.ks, sym.coeffs):
        lines.append(f"{k},{c.real:.17g},{c.imag:.17g}")
    path.write_text("\n".join(lines) + "\n")
    return path


def read_symbol(path: Union[str, Path]) -> CircleSymbol:
    kind = "custom"
    coeffs: Dict[int, complex] = {}
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            if key == "kind":
                kind = value
            continue
        if line.strip():
            k, re, im = line.split(",")
            coeffs[int(k)] = complex(float(re), float(im))
    s = from_coefficients(coeffs)
    return CircleSymbol(s.coeffs, None, (), kind)


def symbol_from_spec(spec: Union[Mapping, str], base_dir: Union[str, Path, None] = None,
                     k_max: int = 64) -> CircleSymbol:
    """Build a symbol from a config reference.

    Accepted forms: ``{"cos": {"1": 0.4}, "sin": {...}, "const": c}``,
    ``{"coefficients": {"k": [re, im]}}``, ``{"log_singularity": angle}`` and
    ``{"file": "symbol.csv"}`` (or a bare path string).
    """
    if isinstance(spec, str):
        spec = {"file": spec}
    if "file" in spec:
        p = Path(spec["file"])
        if base_dir is not None and not p.is_absolute():
            p = Path(base_dir) / p
        return read_symbol(p)
    if "coefficients" in spec:
        return from_coefficients({int(k): complex(*v) if isinstance(v, (list, tuple)) else complex(v)
                                  for k, v in spec["coefficients"].items()})
    if "log_singularity" in spec:
        return log_singularity_symbol(float(spec["log_singularity"]), int(spec.get("k_max", k_max)))
    if any(key in spec for key in ("cos", "sin", "const")):
        return trig_symbol({int(k): float(v) for k, v in spec.get("cos", {}).items()},
                           {int(k): float(v) for k, v in spec.get("sin", {}).items()},
                           float(spec.get("const", 0.0)))
    raise ValueError(f"unrecognized symbol reference: {spec!r}")
