"""Piecewise-monotone maps of the unit interval.

A map is an ordered tuple of monotone branches whose domains tile [0, 1].
Evaluators are vectorised over numpy arrays; scalar helpers wrap them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

ArrayFn = Callable[[np.ndarray], np.ndarray]

ENDPOINT_TOL = 1e-12


class DomainError(ValueError):
    """Point outside [0, 1] (or outside a branch image)."""


class KinkError(ValueError):
    """Derivative requested at a non-differentiable breakpoint."""

    def __init__(self, x: float, left: float, right: float):
        super().__init__(f"map is not differentiable at {x!r}: one-sided derivatives {left!r}, {right!r}")
        self.x = x
        self.left = left
        self.right = right


def _check_unit(x) -> None:
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0.0) or np.any(arr > 1.0) or np.any(np.isnan(arr)):
        raise DomainError(f"point(s) outside [0, 1]: {x!r}")


@dataclass(frozen=True)
class Branch:
    lo: float
    hi: float
    increasing: bool
    forward: ArrayFn = field(repr=False)
    derivative: ArrayFn = field(repr=False)
    inverse: Optional[ArrayFn] = field(default=None, repr=False)

    @property
    def image(self) -> tuple[float, float]:
        a = float(self.forward(np.array([self.lo]))[0])
        b = float(self.forward(np.array([self.hi]))[0])
        return (min(a, b), max(a, b))

    def invert(self, y) -> np.ndarray:
        """Preimage of ``y`` (array) in this branch's domain."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if self.inverse is not None:
            return np.clip(self.inverse(y), self.lo, self.hi)
        out = np.empty_like(y)
        ylo, yhi = self.image
        for k, v in enumerate(y):
            if v <= ylo:
                out[k] = self.lo if self.increasing else self.hi
            elif v >= yhi:
                out[k] = self.hi if self.increasing else self.lo
            else:
                out[k] = brentq(lambda s: float(self.forward(np.array([s]))[0]) - v,
                                self.lo, self.hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
        return out


@dataclass(frozen=True)
class IntervalMap:
    """A piecewise-monotone map of [0, 1].

    ``crit`` lists (point, order) pairs.  Turning points of piecewise-linear
    maps are registered as critical with order 1.
    """

    branches: tuple[Branch, ...]
    crit: tuple[tuple[float, float], ...]
    kind: str = "custom"
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.branches:
            raise ValueError("a map needs at least one branch")
        if abs(self.branches[0].lo) > ENDPOINT_TOL or abs(self.branches[-1].hi - 1.0) > ENDPOINT_TOL:
            raise ValueError("branch domains must cover [0, 1]")
        for left, right in zip(self.branches, self.branches[1:]):
            if abs(left.hi - right.lo) > ENDPOINT_TOL:
                raise ValueError("branch domains must be contiguous")
        bounds = self.breakpoints
        for c, _ in self.crit:
            if 0.0 < c < 1.0 and not np.any(np.abs(bounds - c) < ENDPOINT_TOL):
                raise ValueError(f"critical point {c} is not a branch boundary")

    @property
    def breakpoints(self) -> np.ndarray:
        """Interior branch boundaries."""
        return np.array([b.hi for b in self.branches[:-1]], dtype=float)

    @property
    def crit_points(self) -> np.ndarray:
        return np.array([c for c, _ in self.crit], dtype=float)

    @property
    def is_piecewise_linear(self) -> bool:
        return self.kind in ("tent2", "piecewise_linear")

    def branch_index(self, x) -> np.ndarray:
        # shared endpoints go to the left branch
        return np.searchsorted(self.breakpoints, np.asarray(x, dtype=float), side="left")

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Vectorised evaluation without domain checks."""
        x = np.asarray(x, dtype=float)
        idx = self.branch_index(x)
        out = np.empty_like(x)
        for k, br in enumerate(self.branches):
            sel = idx == k
            if np.any(sel):
                out[sel] = br.forward(x[sel])
        return np.clip(out, 0.0, 1.0)

    def dfdx(self, x: np.ndarray) -> np.ndarray:
        """Vectorised derivative, branch chosen by the left-tie rule."""
        x = np.asarray(x, dtype=float)
        idx = self.branch_index(x)
        out = np.empty_like(x)
        for k, br in enumerate(self.branches):
            sel = idx == k
            if np.any(sel):
                out[sel] = br.derivative(x[sel])
        return out

    def __call__(self, x):
        return evaluate(self, x)


def evaluate(fmap: IntervalMap, x):
    _check_unit(x)
    if np.ndim(x) == 0:
        return float(fmap.apply(np.array([x], dtype=float))[0])
    return fmap.apply(np.asarray(x, dtype=float))


def derivative(fmap: IntervalMap, x: float) -> float:
    """Signed derivative; 0 at registered critical points."""
    _check_unit(x)
    x = float(x)
    if fmap.crit and np.any(np.abs(fmap.crit_points - x) < ENDPOINT_TOL):
        return 0.0
    bps = fmap.breakpoints
    hit = np.nonzero(np.abs(bps - x) < ENDPOINT_TOL)[0]
    if hit.size:
        k = int(hit[0])
        left = float(fmap.branches[k].derivative(np.array([x]))[0])
        right = float(fmap.branches[k + 1].derivative(np.array([x]))[0])
        if fmap.is_piecewise_linear or left != right:
            raise KinkError(x, left, right)
    return float(fmap.dfdx(np.array([x]))[0])


def preimages(fmap: IntervalMap, y: float) -> list[float]:
    _check_unit(y)
    out: list[float] = []
    for br in fmap.branches:
        lo, hi = br.image
        if lo - ENDPOINT_TOL <= y <= hi + ENDPOINT_TOL:
            out.append(float(br.invert(min(max(y, lo), hi))[0]))
    out.sort()
    dedup: list[float] = []
    for v in out:
        if not dedup or abs(v - dedup[-1]) > 1e-14:
            dedup.append(v)
    return dedup


def orbit(fmap: IntervalMap, x: float, n: int) -> list[float]:
    _check_unit(x)
    pts = [float(x)]
    for _ in range(n):
        pts.append(float(fmap.apply(np.array([pts[-1]]))[0]))
    return pts


def interval_image(fmap: IntervalMap, a: float, b: float) -> tuple[float, float]:
    """Hull of f([a, b]); exact for continuous maps."""
    lo, hi = math.inf, -math.inf
    for br in fmap.branches:
        s, t = max(a, br.lo), min(b, br.hi)
        if s > t:
            continue
        v = br.forward(np.array([s, t]))
        lo, hi = min(lo, v.min()), max(hi, v.max())
    return (float(max(lo, 0.0)), float(min(hi, 1.0)))


# ---------------------------------------------------------------------------
# catalogue

def logistic4() -> IntervalMap:
    def inv_left(y):
        return 0.5 * (1.0 - np.sqrt(np.clip(1.0 - y, 0.0, None)))

    def inv_right(y):
        return 0.5 * (1.0 + np.sqrt(np.clip(1.0 - y, 0.0, None)))

    fwd = lambda x: 4.0 * x * (1.0 - x)
    der = lambda x: 4.0 - 8.0 * x
    branches = (
        Branch(0.0, 0.5, True, fwd, der, inv_left),
        Branch(0.5, 1.0, False, fwd, der, inv_right),
    )
    return IntervalMap(branches, ((0.5, 2.0),), kind="logistic4")


def piecewise_linear(breakpoints: Sequence[float], slopes: Sequence[float],
                     starts: Optional[Sequence[float]] = None, kind: str = "piecewise_linear") -> IntervalMap:
    """Piecewise-linear map with branch i on [b_i, b_{i+1}] and slope s_i.

    ``starts`` gives f(b_i+) per branch; by default increasing branches start
    at 0 and decreasing ones at 1, which yields full branches when
    |s_i| (b_{i+1} - b_i) = 1.
    """
    b = [float(v) for v in breakpoints]
    s = [float(v) for v in slopes]
    if len(b) != len(s) + 1 or b[0] != 0.0 or b[-1] != 1.0:
        raise ValueError("breakpoints must run from 0 to 1 with one more entry than slopes")
    if any(x >= y for x, y in zip(b, b[1:])):
        raise ValueError("breakpoints must be strictly increasing")
    if any(v == 0.0 for v in s):
        raise ValueError("slopes must be nonzero")
    if starts is None:
        starts = [0.0 if v > 0 else 1.0 for v in s]
    branches = []
    for lo, hi, slope, v0 in zip(b, b[1:], s, starts):
        end = v0 + slope * (hi - lo)
        if min(v0, end) < -1e-12 or max(v0, end) > 1 + 1e-12:
            raise ValueError("branch image leaves [0, 1]")
        branches.append(Branch(
            lo, hi, slope > 0,
            (lambda x, lo=lo, v0=v0, slope=slope: v0 + slope * (x - lo)),
            (lambda x, slope=slope: np.full_like(np.asarray(x, dtype=float), slope)),
            (lambda y, lo=lo, v0=v0, slope=slope: lo + (y - v0) / slope),
        ))
    crit = []
    for k in range(len(branches) - 1):
        left, right = branches[k], branches[k + 1]
        joined = abs(left.forward(np.array([left.hi]))[0] - right.forward(np.array([right.lo]))[0]) < 1e-12
        if joined and left.increasing != right.increasing:
            crit.append((left.hi, 1.0))
    return IntervalMap(tuple(branches), tuple(crit), kind=kind,
                       params={"breakpoints": b, "slopes": s, "starts": list(starts)})


def tent2() -> IntervalMap:
    fmap = piecewise_linear([0.0, 0.5, 1.0], [2.0, -2.0], kind="tent2")
    return fmap


def custom(branch_specs: Sequence[dict], crit: Sequence[tuple[float, float]] = (),
           fd_check_points: int = 100, fd_rtol: float = 1e-6) -> IntervalMap:
    """Map from user-supplied evaluators.

    Each spec carries ``lo``, ``hi``, ``forward``, ``derivative`` and optionally
    ``inverse``.  The derivative is cross-checked by central differences.
    """
    branches = []
    for spec in branch_specs:
        lo, hi = float(spec["lo"]), float(spec["hi"])
        fwd, der = spec["forward"], spec["derivative"]
        x = np.linspace(lo, hi, fd_check_points + 2)[1:-1]
        h = 1e-6 * (hi - lo)
        fd = (fwd(x + h) - fwd(x - h)) / (2 * h)
        d = der(x)
        big = np.abs(d) > 1e-3
        rel = np.abs(fd[big] - d[big]) / np.abs(d[big])
        if rel.size and rel.max() > fd_rtol:
            raise ValueError(f"derivative fails finite-difference check on [{lo}, {hi}] (rel err {rel.max():.2e})")
        inc = bool(fwd(np.array([hi]))[0] > fwd(np.array([lo]))[0])
        branches.append(Branch(lo, hi, inc, fwd, der, spec.get("inverse")))
    return IntervalMap(tuple(branches), tuple((float(c), float(d)) for c, d in crit), kind="custom")


def map_from_config(spec: dict) -> IntervalMap:
    kind = spec.get("kind")
    if kind == "logistic4":
        return logistic4()
    if kind == "tent2":
        return tent2()
    if kind == "piecewise_linear":
        return piecewise_linear(spec["breakpoints"], spec["slopes"], spec.get("starts"))
    raise ValueError(f"unknown map kind {kind!r}")


def map_to_config(fmap: IntervalMap) -> dict:
    if fmap.kind in ("logistic4", "tent2"):
        return {"kind": fmap.kind}
    if fmap.kind == "piecewise_linear":
        return {"kind": "piecewise_linear", **fmap.params}
    return {"kind": "custom"}


# ---------------------------------------------------------------------------
# conjugacy and periodicity

@dataclass(frozen=True)
class ConjugacyPair:
    """``target . forward == forward . source``."""

    forward: ArrayFn
    inverse: ArrayFn
    source: IntervalMap
    target: IntervalMap


def conjugacy_logistic_tent() -> ConjugacyPair:
    return ConjugacyPair(
        forward=lambda x: np.sin(0.5 * np.pi * np.asarray(x, dtype=float)) ** 2,
        inverse=lambda y: (2.0 / np.pi) * np.arcsin(np.sqrt(np.clip(np.asarray(y, dtype=float), 0.0, 1.0))),
        source=tent2(),
        target=logistic4(),
    )


def detect_period(fmap: IntervalMap, z: float, p_max: int = 20, tol: float = 1e-9) -> Optional[int]:
    """Smallest p <= p_max with f^p(z) = z, confirmed by root polishing."""
    _check_unit(z)
    x = np.array([float(z)])
    for p in range(1, p_max + 1):
        x = fmap.apply(x)
        if abs(x[0] - z) >= tol:
            continue
        if x[0] == z:
            return p

        def g(s, p=p):
            v = np.array([s])
            for _ in range(p):
                v = fmap.apply(v)
            return float(v[0] - s)

        a, b = max(0.0, z - 10 * tol), min(1.0, z + 10 * tol)
        ga, gb = g(a), g(b)
        if ga == 0.0 or gb == 0.0 or ga * gb < 0:
            return p
    return None
