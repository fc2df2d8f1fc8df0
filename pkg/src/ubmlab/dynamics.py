"""Unitary Brownian motion: Haar sampling, matrix-level and eigenvalue-level paths.

Time is measured in the clock of ``dU = sqrt(2) U dB - U dt``, where ``B`` is a
Brownian motion on the skew-Hermitian matrices, normalized by the basis returned
by :func:`skew_basis`. In that clock the eigenangles follow the circular Dyson
dynamics with ``beta = 2``, cotangent drift ``beta/(2N)`` and noise ``sqrt(2/N)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
from numba import njit

from .seeding import SeedLike, as_generator, seed_label

TWO_PI = 2.0 * np.pi
COLLISION_TOL = 1e-12
NOISE_K = 3.0


class CollisionError(RuntimeError):
    """Two eigenangles met (beta < 1) or adaptive step halving gave up."""

    def __init__(self, message, step=-1, seed_path=""):
        super().__init__(f"{message} at step {step} [seed_path={seed_path}]")
        self.reason = message
        self.step = step
        self.seed_path = seed_path


# --------------------------------------------------------------------------
# Haar measure


def sample_haar_unitary(n: int, seed: SeedLike = None) -> np.ndarray:
    """Draw an ``n x n`` Haar unitary.

    QR of a complex Ginibre matrix, with the phases of ``diag(R)`` pushed into
    ``Q`` so that the law is exactly Haar.
    """
    if n < 1:
        raise ValueError(f"dimension must be positive, got {n}")
    rng = as_generator(seed)
    z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r)
    return q * (d / np.abs(d))


def unitary_phases(u: np.ndarray) -> np.ndarray:
    """Eigenangles of a unitary matrix, sorted in ``[0, 2 pi)``."""
    ev = np.linalg.eigvals(u)
    return np.sort(np.mod(np.angle(ev), TWO_PI))


def cue_phases(n: int, seed: SeedLike = None) -> np.ndarray:
    """Sorted eigenangles of one CUE(n) sample."""
    return unitary_phases(sample_haar_unitary(n, seed))


def unitarity_defect(u: np.ndarray) -> float:
    n = u.shape[-1]
    return float(np.max(np.abs(u.conj().T @ u - np.eye(n))))


# --------------------------------------------------------------------------
# Skew-Hermitian basis


@dataclass(frozen=True)
class SkewBasis:
    """Orthonormal basis of the skew-Hermitian matrices for ``N <X, Y>_R``.

    Ordering: the real antisymmetric pairs ``(E_kl - E_lk)/sqrt(2N)`` for
    ``k < l``, then the imaginary symmetric pairs ``i(E_kl + E_lk)/sqrt(2N)``,
    then the diagonal ``i E_kk / sqrt(N)``.
    """

    n: int
    elements: np.ndarray

    def __len__(self):
        return self.elements.shape[0]

    def combine(self, coeffs: np.ndarray) -> np.ndarray:
        """``sum_k coeffs[..., k] X_k`` without forming the dense sum."""
        n = self.n
        coeffs = np.asarray(coeffs, dtype=float)
        iu, ju = np.triu_indices(n, 1)
        m = iu.size
        a = coeffs[..., :m] / np.sqrt(2.0 * n)
        b = coeffs[..., m:2 * m] / np.sqrt(2.0 * n)
        c = coeffs[..., 2 * m:] / np.sqrt(n)
        out = np.zeros(coeffs.shape[:-1] + (n, n), dtype=complex)
        out[..., iu, ju] = a + 1j * b
        out[..., ju, iu] = -a + 1j * b
        di = np.arange(n)
        out[..., di, di] = 1j * c
        return out


def skew_basis(n: int) -> SkewBasis:
    if n < 1:
        raise ValueError(f"dimension must be positive, got {n}")
    eye = np.eye(n * n)
    return SkewBasis(n, SkewBasis(n, np.empty(0)).combine(eye))


def real_inner(x: np.ndarray, y: np.ndarray) -> float:
    """``<X, Y>_R = Re Tr(X^* Y)``."""
    return float(np.real(np.vdot(x, y)))


# --------------------------------------------------------------------------
# Matrix-level dynamics


def _skew_gaussian(n: int, rng: np.random.Generator) -> np.ndarray:
    """Hermitian ``H`` with ``iH = sum_k X_k xi_k``, ``xi`` iid standard normal."""
    m = n * (n - 1) // 2
    xi = rng.standard_normal(2 * m + n)
    iu, ju = np.triu_indices(n, 1)
    h = np.zeros((n, n), dtype=complex)
    # (a + ib)/sqrt(2n) above the diagonal of i*H  ->  H_kl = (b - ia)/sqrt(2n)
    a = xi[:m] / np.sqrt(2.0 * n)
    b = xi[m:2 * m] / np.sqrt(2.0 * n)
    h[iu, ju] = b - 1j * a
    h[ju, iu] = b + 1j * a
    h[np.arange(n), np.arange(n)] = xi[2 * m:] / np.sqrt(n)
    return h


def _skew_gaussian_batch(n: int, rngs: Sequence[np.random.Generator]) -> np.ndarray:
    """:func:`_skew_gaussian` for one draw from each generator, stacked."""
    m = n * (n - 1) // 2
    xi = np.stack([g.standard_normal(2 * m + n) for g in rngs])
    iu, ju = np.triu_indices(n, 1)
    h = np.zeros((len(rngs), n, n), dtype=complex)
    a = xi[:, :m] / np.sqrt(2.0 * n)
    b = xi[:, m:2 * m] / np.sqrt(2.0 * n)
    h[:, iu, ju] = b - 1j * a
    h[:, ju, iu] = b + 1j * a
    h[:, np.arange(n), np.arange(n)] = xi[:, 2 * m:] / np.sqrt(n)
    return h


def default_dt(n: int) -> float:
    return min(1e-3, 0.1 / n)


def evolve_unitary(u: np.ndarray, dt: float, steps: int, seed: SeedLike = None,
                   record: bool = True) -> List[np.ndarray]:
    """Geometric Euler scheme ``U <- U exp(sqrt(2 dt) Xi)``.

    ``Xi`` is a standard Gaussian in the skew-Hermitian basis. No drift term is
    added: the second-order term of the exponential has mean ``-dt Id``, which is
    the Ito correction of the SDE. Each factor is unitary to rounding error.

    Returns the list ``[U_0, U_dt, ..., U_{steps dt}]`` (only the endpoints when
    ``record`` is false).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if steps < 0:
        raise ValueError("steps must be non-negative")
    rng = as_generator(seed)
    u = np.array(u, dtype=complex)
    n = u.shape[0]
    scale = math.sqrt(2.0 * dt)
    out = [u.copy()]
    for k in range(steps):
        w, v = np.linalg.eigh(_skew_gaussian(n, rng))
        u = u @ ((v * np.exp(1j * scale * w)) @ v.conj().T)
        if not np.all(np.isfinite(u)):
            raise FloatingPointError(f"non-finite entries after step {k + 1} "
                                     f"[seed_path={seed_label(seed)}]")
        if record:
            out.append(u.copy())
    if not record and steps > 0:
        out.append(u)
    return out


def matrix_path(n: int, times: Sequence[float], seed: SeedLike = None,
                dt: Optional[float] = None) -> List[np.ndarray]:
    """Haar start, then the matrix at each requested time (non-decreasing, >= 0)."""
    rng = as_generator(seed)
    dt = default_dt(n) if dt is None else dt
    u = sample_haar_unitary(n, rng)
    now, out = 0.0, []
    for t in times:
        gap = t - now
        if gap < -1e-15:
            raise ValueError("times must be non-decreasing and non-negative")
        steps = int(math.ceil(gap / dt - 1e-9)) if gap > 0 else 0
        if steps:
            u = evolve_unitary(u, gap / steps, steps, rng, record=False)[-1]
        out.append(u)
        now = t
    return out


def matrix_paths(n: int, times: Sequence[float], seeds: Sequence[SeedLike],
                 dt: Optional[float] = None) -> np.ndarray:
    """Many independent :func:`matrix_path` runs at once, shape ``(paths, times, n, n)``.

    Every path draws from its own generator in the same order as
    :func:`matrix_path`, so path ``p`` does not depend on the batch it ran in;
    only the eigendecompositions are batched.
    """
    rngs = [as_generator(s) for s in seeds]
    dt = default_dt(n) if dt is None else dt
    u = np.stack([sample_haar_unitary(n, g) for g in rngs])
    out = np.empty((len(rngs), len(times), n, n), dtype=complex)
    now = 0.0
    for i, t in enumerate(times):
        gap = t - now
        if gap < -1e-15:
            raise ValueError("times must be non-decreasing and non-negative")
        steps = int(math.ceil(gap / dt - 1e-9)) if gap > 0 else 0
        if steps:
            scale = math.sqrt(2.0 * gap / steps)
            for _ in range(steps):
                h = _skew_gaussian_batch(n, rngs)
                w, v = np.linalg.eigh(h)
                u = u @ ((v * np.exp(1j * scale * w)[:, None, :]) @ np.conj(np.swapaxes(v, -1, -2)))
            if not np.all(np.isfinite(u)):
                raise FloatingPointError("non-finite entries in a matrix path")
        out[:, i] = u
        now = t
    return out


# --------------------------------------------------------------------------
# Eigenvalue-level dynamics


@njit(cache=True)
def _drift(theta, beta, out):
    n = theta.shape[0]
    c = np.cos(theta)
    s = np.sin(theta)
    for j in range(n):
        out[j] = 0.0
    for j in range(n):
        for i in range(j + 1, n):
            dx = c[j] - c[i]
            dy = s[j] - s[i]
            sx = c[j] + c[i]
            sy = s[j] + s[i]
            # cot((th_j - th_i)/2) = -Im[(z_j + z_i)/(z_j - z_i)]
            cot = -(sy * dx - sx * dy) / (dx * dx + dy * dy)
            out[j] += cot
            out[i] -= cot
    for j in range(n):
        out[j] *= beta / (2.0 * n)


@njit(cache=True)
def _min_gap(theta):
    n = theta.shape[0]
    g = theta[0] + 2.0 * np.pi - theta[n - 1]
    for j in range(n - 1):
        d = theta[j + 1] - theta[j]
        if d < g:
            g = d
    return g


@njit(cache=True)
def _gap_shrink(old, new):
    """Smallest ratio new_gap / old_gap over cyclically adjacent pairs."""
    n = old.shape[0]
    r = (new[0] + 2.0 * np.pi - new[n - 1]) / (old[0] + 2.0 * np.pi - old[n - 1])
    for j in range(n - 1):
        q = (new[j + 1] - new[j]) / (old[j + 1] - old[j])
        if q < r:
            r = q
    return r


@njit(cache=True)
def _dyson_kernel(theta0, dt, steps, beta, rng, record_every, out, max_halvings, tol, noise_k):
    """Euler-Maruyama with an exact Bessel step for close pairs and Brownian-bridge halving.

    Particles are kept in cyclic order in lifted coordinates. For ``beta >= 1``
    an isolated pair whose gap ``g`` is below the pair-noise scale
    ``noise_k * sigma * sqrt(2h)`` is advanced by splitting: the centre and the
    smooth part of the drift by Euler, the singular part ``(2 beta/N)/g`` of the
    gap dynamics by the exact Bessel(beta + 1) transition driven by the same
    pair increment, ``g' = sqrt((g + smooth h + dW)^2 + 2 sigma^2 h chi2_beta)``.
    A step is refused (and bisected) when the drift moves a particle by more
    than half the smallest other gap, when close gaps form a cluster, or when a
    gap more than halves or closes. Returns ``(status, step, halvings)`` with
    status 0 ok, 1 collision (beta < 1), 2 halving limit.
    """
    n = theta0.shape[0]
    th = theta0.copy()
    new = np.empty(n)
    d = np.empty(n)
    dw = np.empty(n)
    gaps = np.empty(n)
    special = np.zeros(n, dtype=np.bool_)
    sig = np.sqrt(2.0 / n)
    coef = beta / (2.0 * n)
    cap = max_halvings + 2
    st_h = np.empty(cap)
    st_depth = np.empty(cap, dtype=np.int64)
    st_dw = np.empty((cap, n))
    halvings = 0
    row = 0
    for j in range(n):
        out[0, j] = th[j]
    sq = np.sqrt(dt)
    for step in range(steps):
        for j in range(n):
            st_dw[0, j] = sq * rng.standard_normal()
        st_h[0] = dt
        st_depth[0] = 0
        top = 1
        while top > 0:
            top -= 1
            h = st_h[top]
            depth = st_depth[top]
            for j in range(n):
                dw[j] = st_dw[top, j]
            ok = True
            collided = False
            if n > 1:
                _drift(th, beta, d)
                for k in range(n - 1):
                    gaps[k] = th[k + 1] - th[k]
                gaps[n - 1] = th[0] + 2.0 * np.pi - th[n - 1]
                thr = noise_k * sig * np.sqrt(2.0 * h)
                for k in range(n):
                    special[k] = beta >= 1.0 and gaps[k] < thr
                for k in range(n):
                    if special[k] and n > 2 and (special[(k - 1) % n] or special[(k + 1) % n]):
                        ok = False
                    if special[k] and n == 2 and special[1 - k]:
                        ok = False
                if ok:
                    mg = np.inf
                    for k in range(n):
                        if special[k]:
                            a = k
                            b = (k + 1) % n
                            s = coef * 2.0 / gaps[k]
                            d[a] += s
                            d[b] -= s
                        elif gaps[k] < mg:
                            mg = gaps[k]
                    maxd = 0.0
                    for j in range(n):
                        if abs(d[j]) > maxd:
                            maxd = abs(d[j])
                    if maxd * h > 0.5 * mg:
                        ok = False
                if ok:
                    for j in range(n):
                        new[j] = th[j] + d[j] * h + sig * dw[j]
                    for k in range(n):
                        if special[k]:
                            a = k
                            b = (k + 1) % n
                            wrap = 2.0 * np.pi if b == 0 else 0.0
                            nb = new[b] + wrap
                            c = 0.5 * (new[a] + nb)
                            delta = nb - new[a]
                            extra = 2.0 * sig * sig * h * 2.0 * rng.standard_gamma(0.5 * beta)
                            g = np.sqrt(delta * delta + extra)
                            new[a] = c - 0.5 * g
                            new[b] = c + 0.5 * g - wrap
                    for k in range(n):
                        if special[k]:
                            continue
                        if k < n - 1:
                            gn = new[k + 1] - new[k]
                        else:
                            gn = new[0] + 2.0 * np.pi - new[n - 1]
                        if gn <= tol:
                            ok = False
                            collided = True
                        elif gn < 0.5 * gaps[k]:
                            ok = False
            else:
                new[0] = th[0] + sig * dw[0]
            if ok:
                for j in range(n):
                    th[j] = new[j]
                continue
            if collided and beta < 1.0:
                return 1, step, halvings
            if depth >= max_halvings:
                return 2, step, halvings
            # bridge midpoint given the endpoint: mean dw/2, variance h/4
            half = 0.5 * h
            sd = 0.5 * np.sqrt(h)
            for j in range(n):
                mid = 0.5 * dw[j] + sd * rng.standard_normal()
                st_dw[top, j] = dw[j] - mid
                st_dw[top + 1, j] = mid
            st_h[top] = half
            st_h[top + 1] = half
            st_depth[top] = depth + 1
            st_depth[top + 1] = depth + 1
            top += 2
            halvings += 1
        if (step + 1) % record_every == 0 or step + 1 == steps:
            row += 1
            for j in range(n):
                out[row, j] = th[j]
    return 0, -1, halvings


@dataclass
class PhaseTrajectory:
    """Eigenangle paths; ``phases[i, k]`` is particle ``k`` at ``times[i]``.

    Angles are lifted (never reduced mod 2 pi) so windings are visible.
    """

    n: int
    times: np.ndarray
    phases: np.ndarray
    beta: float = 2.0
    dt: float = float("nan")
    seed: str = ""
    halvings: int = 0

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.phases = np.atleast_2d(np.asarray(self.phases, dtype=float))
        if self.phases.shape != (self.times.size, self.n):
            raise ValueError(f"phases shape {self.phases.shape} does not match "
                             f"{self.times.size} times x {self.n} particles")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    def index(self, t: float, tol: float = 1e-9) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > tol:
            raise KeyError(f"time {t} is not on the trajectory grid")
        return i

    def at(self, t: float) -> np.ndarray:
        return self.phases[self.index(t)]

    def sorted_phases(self, i: int) -> np.ndarray:
        return np.sort(np.mod(self.phases[i], TWO_PI))

    def last(self) -> np.ndarray:
        return self.phases[-1]


def evolve_eigenphases(start: Union[np.ndarray, PhaseTrajectory], dt: Optional[float] = None,
                       steps: int = 1, beta: float = 2.0, seed: SeedLike = None,
                       record_every: int = 1, t0: float = 0.0,
                       max_halvings: int = 20) -> PhaseTrajectory:
    """Euler-Maruyama for the circular Dyson dynamics.

    ``d theta_j = beta/(2N) sum_{i != j} cot((theta_j - theta_i)/2) dt + sqrt(2/N) dB_j``.

    Particle labels follow ``start``. For ``beta >= 1`` a refused step is
    bisected with a Brownian bridge, up to ``max_halvings`` times; for
    ``beta < 1`` a collision aborts the path.

    Raises
    ------
    CollisionError
        On a collision with ``beta < 1`` or when the halving budget is exhausted.
    """
    if isinstance(start, PhaseTrajectory):
        t0 = float(start.times[-1])
        start = start.last()
    theta = np.asarray(start, dtype=float).ravel()
    n = theta.size
    if n < 1:
        raise ValueError("need at least one particle")
    if beta <= 0:
        raise ValueError("beta must be positive")
    dt = default_dt(n) if dt is None else float(dt)
    if dt <= 0 or steps < 0 or record_every < 1:
        raise ValueError("need dt > 0, steps >= 0, record_every >= 1")
    reduced = np.mod(theta, TWO_PI)
    winding = theta - reduced
    order = np.argsort(reduced, kind="stable")
    internal = reduced[order]
    if n > 1 and _min_gap(internal) <= COLLISION_TOL:
        raise ValueError("initial phases must be pairwise distinct mod 2 pi")
    rows = steps // record_every + (1 if steps % record_every else 0) + 1
    out = np.empty((rows, n))
    rng = as_generator(seed)
    status, step, halvings = _dyson_kernel(internal, dt, steps, float(beta), rng,
                                           record_every, out, max_halvings, COLLISION_TOL, NOISE_K)
    if status == 1:
        raise CollisionError("eigenphase collision (beta < 1)", step, seed_label(seed))
    if status == 2:
        raise CollisionError(f"near-collision persisted after {max_halvings} halvings",
                             step, seed_label(seed))
    phases = np.empty_like(out)
    phases[:, order] = out
    phases += winding
    steps_at = [0] + [k for k in range(1, steps + 1) if k % record_every == 0 or k == steps]
    times = t0 + dt * np.asarray(steps_at, dtype=float)
    return PhaseTrajectory(n, times, phases, beta=float(beta), dt=dt,
                           seed=seed_label(seed), halvings=int(halvings))


def phase_path(n: int, times: Sequence[float], seed: SeedLike = None,
               dt: Optional[float] = None, beta: float = 2.0) -> PhaseTrajectory:
    """CUE start at time 0, then eigenangles recorded exactly at ``times``.

    Each gap is covered with the largest step not exceeding ``dt`` that divides it.
    """
    rng = as_generator(seed)
    dt = default_dt(n) if dt is None else dt
    theta = cue_phases(n, rng)
    now = 0.0
    rows, halvings = [], 0
    for t in times:
        gap = t - now
        if gap < -1e-15:
            raise ValueError("times must be non-decreasing and non-negative")
        if gap > 1e-15:
            steps = int(math.ceil(gap / dt - 1e-9))
            tr = evolve_eigenphases(theta, gap / steps, steps, beta, rng,
                                    record_every=steps, t0=now)
            theta = tr.last()
            halvings += tr.halvings
        rows.append(theta.copy())
        now = t
    return PhaseTrajectory(n, np.asarray(times, dtype=float), np.array(rows), beta=beta,
                           dt=dt, seed=seed_label(seed), halvings=halvings)


# --------------------------------------------------------------------------
# Rigidity


@dataclass
class RigidityReport:
    times: np.ndarray
    deviation: np.ndarray        # max_k |theta_(k) - gamma_k - phi| after alignment
    rotation: np.ndarray         # optimal phi per time
    scaled: np.ndarray           # N * deviation / log N
    bound: float                 # (log N)^2, the flagging threshold for N * deviation
    flagged: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))


def lattice_deviation(phases: np.ndarray) -> tuple:
    """Smallest ``max_k |theta_(k) - 2 pi k/N - phi|`` over rotations ``phi``.

    With ``d_k = theta_(k) - 2 pi k/N`` the optimum is ``phi = (max d + min d)/2``
    and the deviation is half the spread of ``d``. Relabelling the sorted
    phases cyclically shifts every ``d_k`` by the same amount, so the result is
    invariant under global rotations.
    """
    theta = np.sort(np.mod(np.asarray(phases, dtype=float), TWO_PI))
    n = theta.size
    d = theta - TWO_PI * np.arange(1, n + 1) / n
    hi, lo = d.max(), d.min()
    return 0.5 * (hi - lo), 0.5 * (hi + lo)


def rigidity_report(traj: PhaseTrajectory) -> RigidityReport:
    n = traj.n
    dev = np.empty(traj.times.size)
    rot = np.empty(traj.times.size)
    for i in range(traj.times.size):
        dev[i], rot[i] = lattice_deviation(traj.phases[i])
    logn = math.log(n) if n > 1 else float("nan")
    bound = logn ** 2
    scaled = n * dev / logn
    return RigidityReport(traj.times.copy(), dev, rot, scaled, bound, n * dev > bound)


# --------------------------------------------------------------------------
# Trajectory dump


def write_trajectory(traj: PhaseTrajectory, path: Union[str, Path]) -> Path:
    """Write CSV (``.csv``) or binary NumPy (``.npz``) trajectory files."""
    path = Path(path)
    if path.suffix == ".npz":
        np.savez(path, n=traj.n, times=traj.times, phases=traj.phases, beta=traj.beta,
                 dt=traj.dt, seed=np.array(traj.seed))
        return path
    lines = [f"# n={traj.n} dt={traj.dt:.17g} beta={traj.beta:.17g} seed_path={traj.seed}"]
    for t, row in zip(traj.times, traj.phases):
        lines.append(",".join(format(v, ".17g") for v in (t, *row)))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_trajectory(path: Union[str, Path]) -> PhaseTrajectory:
    path = Path(path)
    if path.suffix == ".npz":
        z = np.load(path)
        return PhaseTrajectory(int(z["n"]), z["times"], z["phases"], float(z["beta"]),
                               float(z["dt"]), str(z["seed"]))
    header = {}
    rows = []
    for line in path.read_text().splitlines():
        if line.startswith("#"):
            for item in line[1:].split():
                key, _, value = item.partition("=")
                header[key] = value
        elif line.strip():
            rows.append([float(v) for v in line.split(",")])
    data = np.array(rows)
    return PhaseTrajectory(int(header["n"]), data[:, 0], data[:, 1:], float(header["beta"]),
                           float(header["dt"]), header.get("seed_path", ""))
