"""Holes, survival times and Monte Carlo escape rates."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .maps import IntervalMap, conjugacy_logistic_tent

SURVIVOR_FLOOR = 30
MIN_FIT_POINTS = 5

Sampler = Callable[[np.random.Generator, int], np.ndarray]


class InsufficientDecayError(RuntimeError):
    pass


@dataclass(frozen=True)
class Hole:
    """Finite union of disjoint open intervals.

    Endpoints may lie outside [0, 1]: ``Hole.centered(0, e)`` is stored as
    (-e, e) so that the boundary point 0 belongs to the hole, matching
    (z - e, z + e) intersected with [0, 1].
    """

    intervals: tuple[tuple[float, float], ...] = ()
    center: Optional[float] = None
    radius: Optional[float] = None

    def __post_init__(self):
        ivs = sorted((float(a), float(b)) for a, b in self.intervals)
        for a, b in ivs:
            if not a < b:
                raise ValueError(f"empty hole interval ({a}, {b})")
        for (a0, b0), (a1, b1) in zip(ivs, ivs[1:]):
            if a1 < b0:
                raise ValueError("hole intervals overlap")
        object.__setattr__(self, "intervals", tuple(ivs))
        if self.length >= 1.0:
            raise ValueError("hole must have total length < 1")

    @classmethod
    def centered(cls, z: float, eps: float) -> "Hole":
        return cls(((z - eps, z + eps),), center=float(z), radius=float(eps))

    @classmethod
    def empty(cls) -> "Hole":
        return cls(())

    @property
    def is_empty(self) -> bool:
        return not self.intervals

    @property
    def clipped(self) -> tuple[tuple[float, float], ...]:
        return tuple((max(a, 0.0), min(b, 1.0)) for a, b in self.intervals if min(b, 1.0) > max(a, 0.0))

    @property
    def length(self) -> float:
        return sum(b - a for a, b in self.clipped)

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        inside = np.zeros(x.shape, dtype=bool)
        for a, b in self.intervals:
            inside |= (x > a) & (x < b)
        return inside

    def to_config(self) -> dict:
        if self.center is not None:
            return {"z": self.center, "eps": self.radius}
        return {"intervals": [list(iv) for iv in self.intervals]}


def hole_from_config(spec: Optional[dict]) -> Hole:
    if not spec:
        return Hole.empty()
    if "intervals" in spec:
        return Hole(tuple(tuple(iv) for iv in spec["intervals"]))
    return Hole.centered(float(spec["z"]), float(spec["eps"]))


def survival_time(fmap: IntervalMap, hole: Hole, x: float, n_max: int) -> int:
    """First n <= n_max with f^n(x) in the hole, else n_max + 1."""
    v = np.array([float(x)])
    for n in range(n_max + 1):
        if hole.contains(v)[0]:
            return n
        v = fmap.apply(v)
    return n_max + 1


# ---------------------------------------------------------------------------
# samplers

def lebesgue_sampler(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.random(n)


class AcipSamplerLogistic4:
    """Draws g(u) = sin^2(pi u / 2) with u uniform: density 1/(pi sqrt(x(1-x))).

    A float u lies on the 2^-53 grid, and g of a dyadic u is mapped onto 0 by
    the logistic map after about 53 steps, which shows up as a burst of
    spurious escapes.  A second uniform fills in u below the grid spacing
    through the first-order term g'(u) du.
    """

    def __init__(self, seed: Optional[int] = None):
        self.seed = seed
        self._g = conjugacy_logistic_tent().forward

    def __call__(self, rng: np.random.Generator, n: int) -> np.ndarray:
        u = rng.random(n)
        du = rng.random(n) * 2.0 ** -53
        x = self._g(u) + 0.5 * np.pi * np.sin(np.pi * u) * du
        return np.clip(x, 0.0, 1.0)

    def sample(self, n: int) -> np.ndarray:
        rng = np.random.Generator(np.random.Philox(self.seed if self.seed is not None else 0))
        return self(rng, n)


def acip_sampler_logistic4(seed: Optional[int] = None) -> AcipSamplerLogistic4:
    return AcipSamplerLogistic4(seed)


# ---------------------------------------------------------------------------
# Monte Carlo

@dataclass
class SurvivalFit:
    rate: float
    intercept: float
    r2: float
    window: tuple[int, int]
    stderr: float
    stderr_ols: float
    stderr_counting: float
    flagged: bool


@dataclass
class SurvivalSeries:
    counts: np.ndarray
    n_samples: int
    seed: int
    fit: Optional[SurvivalFit] = None
    meta: dict = field(default_factory=dict)

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "survivors"])
            for k, c in enumerate(self.counts):
                w.writerow([k, int(c)])
        side = {"n_samples": self.n_samples, "seed": self.seed, "rng": "Philox4x64",
                "fit": asdict(self.fit) if self.fit else None, **self.meta}
        path.with_suffix(".json").write_text(json.dumps(side, indent=2, sort_keys=True, default=float))


def _tent_states(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    u = np.floor(np.clip(x, 0.0, 1.0 - 2.0 ** -53) * 2.0 ** 53).astype(np.uint64) << np.uint64(11)
    return u | rng.integers(0, 2 ** 11, size=x.size, dtype=np.uint64)


def _tent_step(u: np.ndarray, bits: np.ndarray) -> np.ndarray:
    # binary tent: shift, complementing when the leading bit is 1; refill the
    # low bit with fresh random bits so orbits do not collapse onto dyadics
    top = (u >> np.uint64(63)).astype(bool)
    u = np.where(top, ~u, u) << np.uint64(1)
    return u | bits


def _tent_points(u: np.ndarray) -> np.ndarray:
    return u.astype(np.float64) * 2.0 ** -64


def _survivor_counts(fmap: IntervalMap, hole: Hole, x0: np.ndarray, n_steps: int,
                     rng: np.random.Generator) -> np.ndarray:
    counts = np.zeros(n_steps + 1, dtype=np.int64)
    exact_tent = fmap.kind == "tent2"
    if exact_tent:
        state = _tent_states(x0, rng)
        x = _tent_points(state)
    else:
        x = np.asarray(x0, dtype=float)
    # c_n counts orbits whose first n points (times 0..n-1) avoid the hole
    counts[0] = x.size
    # refill bits are drawn for every initial point so that sample i sees the
    # same bits whatever the hole; enlarging the hole can then only lower c_n
    idx = np.arange(x.size)
    total = x.size
    for n in range(1, n_steps + 1):
        alive = ~hole.contains(x)
        if exact_tent:
            state = state[alive]
            idx = idx[alive]
        x = x[alive]
        counts[n] = x.size
        if x.size == 0:
            break
        if exact_tent:
            bits = rng.integers(0, 2, size=total, dtype=np.uint64)[idx]
            state = _tent_step(state, bits)
            x = _tent_points(state)
        else:
            x = fmap.apply(x)
    return counts


def _slope_se_death_process(steps: np.ndarray, c: np.ndarray) -> float:
    # slope = sum_n w_n log c_n = sum_k delta_k W_k with delta_k = log(c_{k+1}/c_k)
    # independent, Var(delta_k) ~ h / ((1 - h) c_k) for per-step death fraction h
    if steps.size < 2 or np.any(np.diff(steps) != 1):
        return 0.0
    w = (steps - steps.mean()) / float(np.sum((steps - steps.mean()) ** 2))
    W = np.cumsum(w[::-1])[::-1][1:]
    cf = c.astype(float)
    h_bar = float(np.clip(1.0 - (cf[-1] / cf[0]) ** (1.0 / (cf.size - 1)), 0.0, 1.0 - 1e-12))
    var = np.sum(W ** 2 * h_bar / ((1.0 - h_bar) * cf[:-1]))
    return float(math.sqrt(var))


def fit_survival(counts: np.ndarray, floor: int = SURVIVOR_FLOOR, poly_degree: int = 0) -> SurvivalFit:
    """Least-squares fit of log c_n on [n/4, n] restricted to c_n >= floor.

    With ``poly_degree`` d the regressand is log c_n - d log n, for survival
    of the form n^d lam^n (chained dominant blocks of a reducible operator).

    ``stderr`` is the larger of the OLS slope error and the slope error
    propagated from binomial step-to-step deaths; the OLS error alone ignores
    the serial correlation of cumulative survival counts.
    """
    n_steps = counts.size - 1
    lo = n_steps // 4
    steps = np.arange(lo, n_steps + 1)
    c = counts[lo:]
    keep = c >= floor
    steps, c = steps[keep], c[keep]
    if steps.size < MIN_FIT_POINTS:
        raise InsufficientDecayError(f"only {steps.size} usable fit points (need {MIN_FIT_POINTS})")
    y = np.log(c.astype(float)) - poly_degree * np.log(np.maximum(steps, 1))
    A = np.vstack([steps, np.ones_like(steps)]).T.astype(float)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    slope, intercept = float(coef[0]), float(coef[1])
    resid = y - A @ coef
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum(resid ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    dof = max(steps.size - 2, 1)
    sxx = float(np.sum((steps - steps.mean()) ** 2))
    se_ols = math.sqrt(ss_res / dof / sxx) if sxx > 0 else 0.0
    se_count = _slope_se_death_process(steps, c)
    return SurvivalFit(rate=-slope, intercept=intercept, r2=r2, window=(int(steps[0]), int(steps[-1])),
                       stderr=max(se_ols, se_count), stderr_ols=se_ols, stderr_counting=se_count,
                       flagged=r2 < 0.99)


def monte_carlo_escape(fmap: IntervalMap, hole: Hole, sampler: Sampler = lebesgue_sampler,
                       n_samples: int = 100_000, n_steps: int = 200, seed: int = 0,
                       block_size: int = 250_000, poly_degree: int = 0) -> SurvivalSeries:
    """Survivor counts for ``n_samples`` orbits drawn from ``sampler``.

    Blocks use Philox generators spawned from ``seed``; counts are summed, so
    the result depends only on the seed and the block size.  ``poly_degree``
    is passed to :func:`fit_survival`.
    """
    if n_samples < 1000 or n_steps < 20:
        raise ValueError("need n_samples >= 1000 and n_steps >= 20")
    n_blocks = -(-n_samples // block_size)
    children = np.random.SeedSequence(seed).spawn(n_blocks)
    counts = np.zeros(n_steps + 1, dtype=np.int64)
    for b, child in enumerate(children):
        m = min(block_size, n_samples - b * block_size)
        rng = np.random.Generator(np.random.Philox(child))
        counts += _survivor_counts(fmap, hole, sampler(rng, m), n_steps, rng)
    series = SurvivalSeries(counts=counts, n_samples=n_samples, seed=seed,
                            meta={"block_size": block_size, "n_steps": n_steps, "poly_degree": poly_degree})
    if hole.is_empty:
        series.fit = SurvivalFit(0.0, math.log(n_samples), 1.0, (n_steps // 4, n_steps), 0.0, 0.0, 0.0, False)
    else:
        series.fit = fit_survival(counts, poly_degree=poly_degree)
    return series
