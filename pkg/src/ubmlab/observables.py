"""Spectral observables: the log-characteristic-polynomial field, counting
statistics, Borel transforms and reweighted (biased-measure) expectations."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .dynamics import PhaseTrajectory
from .montecarlo import Estimate
from .symbols import CircleSymbol, h_half_inner

TWO_PI = 2.0 * np.pi
CLIP_DISTANCE = 1e-12
CLIP_VALUE = math.log(CLIP_DISTANCE)
MIN_ESS = 50.0


# --------------------------------------------------------------------------
# Field h_N(t, theta) = sum_k log|e^{i theta_k(t)} - e^{i theta}|


def log_char_poly(phases: np.ndarray, angles: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """``sum_k log|e^{i theta_k} - e^{i x}|`` for each ``x`` in ``angles``.

    Terms with ``|e^{i theta_k} - e^{i x}| < 1e-12`` are clipped to ``log(1e-12)``;
    the second return value flags the affected angles.
    """
    phases = np.asarray(phases, dtype=float)
    angles = np.asarray(angles, dtype=float)
    dist = np.abs(2.0 * np.sin(0.5 * np.subtract.outer(angles, phases)))
    hit = dist < CLIP_DISTANCE
    with np.errstate(divide="ignore"):
        terms = np.where(hit, CLIP_VALUE, np.log(np.where(hit, 1.0, dist)))
    return terms.sum(axis=-1), hit.any(axis=-1)


@dataclass
class FieldSample:
    """``values[i, a] = h_N(times[i], angles[a])`` on a rectangular grid."""

    times: np.ndarray
    angles: np.ndarray
    values: np.ndarray
    clipped: np.ndarray
    source: str = ""

    def spatial_mean(self) -> np.ndarray:
        # equispaced periodic grids: the trapezoid rule is the plain average
        return self.values.mean(axis=1)

    def write_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        lines = [f"# source={self.source}", "t,theta,value,clipped"]
        for i, t in enumerate(self.times):
            for a, x in enumerate(self.angles):
                lines.append(f"{t:.17g},{x:.17g},{self.values[i, a]:.17g},{int(self.clipped[i, a])}")
        path.write_text("\n".join(lines) + "\n")
        return path


def field_from_trajectory(traj: PhaseTrajectory, grid: Sequence[float],
                          time_indices: Optional[Sequence[int]] = None) -> FieldSample:
    idx = range(traj.times.size) if time_indices is None else list(time_indices)
    grid = np.asarray(grid, dtype=float)
    vals, clip = [], []
    for i in idx:
        v, c = log_char_poly(traj.phases[i], grid)
        vals.append(v)
        clip.append(c)
    return FieldSample(traj.times[list(idx)], grid, np.array(vals), np.array(clip), traj.seed)


def equispaced_angles(m: int, offset: float = 0.0) -> np.ndarray:
    return offset + TWO_PI * np.arange(m) / m


# --------------------------------------------------------------------------
# Counting statistic and Im log


def counting_statistic(phases: np.ndarray, theta: float) -> float:
    """``pi (N(0, theta] - N theta / 2pi)`` for one time slice."""
    if not 0.0 < theta < TWO_PI:
        raise ValueError("theta must lie in (0, 2 pi)")
    p = np.mod(np.asarray(phases, dtype=float), TWO_PI)
    count = np.count_nonzero((p > 0.0) & (p <= theta))
    return math.pi * (count - p.size * theta / TWO_PI)


def im_log_one_minus(phi: np.ndarray) -> np.ndarray:
    """``Im log(1 - e^{i phi})`` on the branch ``(phi mod 2pi - pi)/2``."""
    return 0.5 * (np.mod(phi, TWO_PI) - np.pi)


def im_log_char_poly(phases: np.ndarray, theta: float) -> float:
    """``Im log det(1 - e^{-i theta} U) = sum_k Im log(1 - e^{i(theta_k - theta)})``."""
    return float(np.sum(im_log_one_minus(np.asarray(phases, dtype=float) - theta)))


# --------------------------------------------------------------------------
# Borel transform and characteristics


def borel_transform(u: np.ndarray, z: complex, a: Optional[np.ndarray] = None) -> complex:
    """``Tr(((z + U)/(z - U)) A)``, ``A = Id/N`` by default, via a linear solve.

    Raises
    ------
    ValueError
        If ``z`` is within 1e-12 of the spectrum of ``U``.
    """
    u = np.asarray(u, dtype=complex)
    n = u.shape[0]
    eye = np.eye(n)
    a = eye / n if a is None else np.asarray(a, dtype=complex)
    lhs = z * eye - u
    # U is normal, so the smallest singular value of z - U is the distance to the spectrum
    if np.linalg.svd(lhs, compute_uv=False).min() < 1e-12:
        raise ValueError(f"z = {z} lies within 1e-12 of an eigenvalue")
    x = np.linalg.solve(lhs, (z * eye + u) @ a)
    return complex(np.trace(x))


def characteristic_flow(z: complex, t: float) -> complex:
    """``z e^t`` outside the unit circle, ``z e^{-t}`` inside."""
    r = abs(z)
    if r == 1.0:
        raise ValueError("the characteristic flow is undefined on the unit circle")
    return z * math.exp(t) if r > 1.0 else z * math.exp(-t)


# --------------------------------------------------------------------------
# Biased measures


@dataclass
class BiasSpec:
    """Insertions ``(t_j, f_j)``; the biased law has density ``exp(sum_j Tr f_j(U_{t_j}))``."""

    insertions: List[Tuple[float, CircleSymbol]] = field(default_factory=list)

    def __post_init__(self):
        for t, f in self.insertions:
            if not math.isfinite(f.h_norm_sq()):
                raise ValueError(f"bias symbol at t={t} has infinite H^(1/2) norm")

    @property
    def times(self) -> List[float]:
        return [t for t, _ in self.insertions]

    def log_weight(self, phases_at: Callable[[float], np.ndarray]) -> float:
        return math.fsum(float(np.real(f.trace(phases_at(t)))) for t, f in self.insertions)


def self_normalized(log_weights: Sequence[float], values: Sequence[float],
                    seed: str = "", min_ess: float = MIN_ESS) -> Estimate:
    """Self-normalized importance sampling with a delta-method standard error.

    Raises
    ------
    ValueError
        On non-finite inputs or when the effective sample size is below ``min_ess``.
    """
    lw = np.asarray(log_weights, dtype=float)
    x = np.asarray(values, dtype=float)
    if lw.shape != x.shape or lw.size < 2:
        raise ValueError("need matching weight and value arrays with at least two entries")
    if not (np.all(np.isfinite(lw)) and np.all(np.isfinite(x))):
        raise ValueError("weights and observable values must be finite")
    w = np.exp(lw - lw.max())
    w /= math.fsum(w)
    ess = 1.0 / math.fsum(w * w)
    if ess < min_ess:
        raise ValueError(f"effective sample size {ess:.1f} is below {min_ess:g}")
    mean = math.fsum(w * x)
    se = math.sqrt(math.fsum(w * w * (x - mean) ** 2))
    return Estimate(mean, se, int(x.size), seed, extra={"ess": ess})


def reweighted_expectation(samples: Sequence[PhaseTrajectory], bias: BiasSpec,
                           observable: Callable[[PhaseTrajectory], float],
                           seed: str = "") -> Estimate:
    """``E[obs w] / E[w]`` with ``w = exp(sum_j Tr f_j(U_{t_j}))``."""
    lw = [bias.log_weight(s.at) for s in samples]
    vals = [float(observable(s)) for s in samples]
    return self_normalized(lw, vals, seed)


def loop_equation_rhs(bias: BiasSpec, h: CircleSymbol, r: float) -> float:
    """Predicted ``E_f[Tr h(U_r)] - N h_hat(0)``:
    ``sum_j sum_k e^{-|k||t_j - r|} |k| f_j_hat(-k) h_hat(k)``."""
    return math.fsum(np.real(h_half_inner(h, f, abs(t - r))) for t, f in bias.insertions)
