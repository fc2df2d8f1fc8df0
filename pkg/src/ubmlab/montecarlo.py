"""Monte Carlo driving: estimates, deterministic reductions, verdicts."""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from .seeding import SeedTree


class SampleError(RuntimeError):
    """A single Monte Carlo sample failed; carries the seed path for replay."""

    def __init__(self, message: str, seed_path: str = ""):
        super().__init__(f"{message} [seed_path={seed_path}]" if seed_path else message)
        self.seed_path = seed_path


@dataclass
class Estimate:
    value: float
    stderr: float
    n_samples: int
    seed: str = ""
    prediction: Optional[float] = None
    verdict: Optional[str] = None
    rule: Optional[str] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.stderr < 0:
            raise ValueError("stderr must be non-negative")

    @property
    def z_score(self) -> float:
        if self.prediction is None:
            return float("nan")
        if self.stderr == 0:
            return 0.0 if self.value == self.prediction else float("inf")
        return (self.value - self.prediction) / self.stderr

    def compare(self, prediction: float, n_sigma: float = 3.0) -> "Estimate":
        """Attach a prediction and the default ``|x - p| <= n_sigma * stderr`` verdict."""
        ok = abs(self.value - prediction) <= n_sigma * self.stderr
        self.prediction = float(prediction)
        self.verdict = "pass" if ok else "fail"
        self.rule = f"|empirical-prediction|<={n_sigma:g}*stderr"
        return self

    def as_dict(self) -> Dict[str, Any]:
        return asdict(self)


def tree_sum(values: Sequence[float]) -> float:
    # fsum is exactly rounded, so the result does not depend on summation order.
    return math.fsum(values)


def mean_and_stderr(values: Sequence[float]) -> tuple:
    x = np.asarray(values, dtype=float)
    n = x.size
    if n < 2:
        raise ValueError("need at least two samples for a standard error")
    mean = tree_sum(x) / n
    var = tree_sum((x - mean) ** 2) / (n - 1)
    return mean, math.sqrt(var / n)


def worker_count(default: int = 1) -> int:
    raw = os.environ.get("UBMLAB_WORKERS")
    if not raw:
        return default
    try:
        return max(1, int(raw))
    except ValueError as exc:
        raise ValueError(f"UBMLAB_WORKERS must be an integer, got {raw!r}") from exc


def _run_chunk(task):
    fn, seed, indices = task
    return [fn(seed.child("sample", i)) for i in indices]


def map_samples(fn: Callable[[SeedTree], Any], seed: SeedTree, n_samples: int,
                workers: Optional[int] = None, chunk: int = 256) -> List[Any]:
    """Evaluate ``fn(seed.child("sample", i))`` for ``i < n_samples``.

    Results come back in index order; the worker count changes only the wall
    time. With more than one worker ``fn`` must be picklable.
    """
    workers = worker_count() if workers is None else workers
    blocks = [range(a, min(a + chunk, n_samples)) for a in range(0, n_samples, chunk)]
    if workers <= 1 or len(blocks) <= 1:
        out = []
        for block in blocks:
            out.extend(_run_chunk((fn, seed, block)))
        return out
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = pool.map(_run_chunk, [(fn, seed, b) for b in blocks])
        return [item for part in parts for item in part]


def mc_estimate(sampler: Callable[[SeedTree], Any], observable: Callable[[Any], float],
                n_samples: int, seed: SeedTree, workers: Optional[int] = None) -> Estimate:
    """Plain Monte Carlo mean of ``observable(sampler(stream_i))``.

    Raises
    ------
    ValueError
        If fewer than two samples are requested.
    SampleError
        If an observable value is not finite; the message names the seed path.
    """
    if n_samples < 2:
        raise ValueError("mc_estimate needs n_samples >= 2")
    values = map_samples(_Composed(sampler, observable), seed, n_samples, workers)
    for i, v in enumerate(values):
        if not math.isfinite(v):
            raise SampleError("non-finite observable", str(seed.child("sample", i)))
    mean, se = mean_and_stderr(values)
    return Estimate(mean, se, n_samples, str(seed))


class _Composed:
    def __init__(self, sampler, observable):
        self.sampler = sampler
        self.observable = observable

    def __call__(self, s: SeedTree) -> float:
        return float(self.observable(self.sampler(s)))


def deterministic_verdict(value: float, prediction: float, rtol: float = 0.0,
                          atol: float = 0.0) -> str:
    ok = abs(value - prediction) <= atol + rtol * abs(prediction)
    return "pass" if ok else "fail"
