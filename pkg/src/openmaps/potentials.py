"""Potentials, Birkhoff sums and pressure."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .maps import IntervalMap

T_RANGE = (-1.0, 1.5)


class ConfigurationError(ValueError):
    pass


class UnsupportedMapError(ValueError):
    pass


HOLDER_CATALOG: dict[str, Callable[..., Callable[[np.ndarray], np.ndarray]]] = {
    "constant": lambda c=0.0: (lambda x: np.full_like(np.asarray(x, dtype=float), float(c))),
    "cos2pi": lambda: (lambda x: np.cos(2.0 * np.pi * np.asarray(x, dtype=float))),
    "negsq": lambda: (lambda x: -np.asarray(x, dtype=float) ** 2),
}


@dataclass(frozen=True)
class Potential:
    """Either ``-t log|Df|`` or a Hölder function of x, minus ``shift``.

    ``shift`` is the pressure subtracted at normalisation; ``pressure`` is the
    pressure of the potential as it evaluates now (0 once normalised).
    """

    kind: str
    t: Optional[float] = None
    func: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, repr=False, compare=False)
    name: str = ""
    params: dict = field(default_factory=dict, compare=False)
    exponent: float = 1.0
    shift: float = 0.0
    pressure: Optional[float] = None
    normalized: bool = False

    @classmethod
    def geometric(cls, t: float, allow_any_t: bool = False) -> "Potential":
        if not allow_any_t and not (T_RANGE[0] <= t <= T_RANGE[1]):
            raise ConfigurationError(f"t={t} outside the supported range {T_RANGE}; pass allow_any_t=True to override")
        return cls("geometric", t=float(t), name=f"geometric(t={t:g})")

    @classmethod
    def holder(cls, name: str, exponent: float = 1.0, **params) -> "Potential":
        if name not in HOLDER_CATALOG:
            raise ConfigurationError(f"unknown Hölder potential {name!r}; known: {sorted(HOLDER_CATALOG)}")
        func = HOLDER_CATALOG[name](**params)
        sample = func(np.linspace(0.0, 1.0, 10_000))
        if not np.all(np.isfinite(sample)):
            raise ConfigurationError(f"Hölder potential {name!r} is unbounded on [0, 1]")
        return cls("holder", func=func, name=name, params=dict(params), exponent=exponent)

    @classmethod
    def constant(cls, c: float) -> "Potential":
        return cls.holder("constant", c=c)

    @property
    def is_constant(self) -> bool:
        return self.kind == "holder" and self.name == "constant"

    def values(self, fmap: IntervalMap, x) -> np.ndarray:
        """phi(x); at critical points -t log 0 gives +inf for t > 0 and -inf for t < 0."""
        x = np.asarray(x, dtype=float)
        if self.kind == "geometric":
            d = np.abs(fmap.dfdx(x))
            if fmap.crit:
                at_crit = np.any(np.abs(x[..., None] - fmap.crit_points) < 1e-15, axis=-1)
                d = np.where(at_crit, 0.0, d)
            with np.errstate(divide="ignore"):
                logd = np.log(d)
            if self.t == 0.0:
                out = np.zeros_like(x)
            else:
                out = -self.t * logd
            return out - self.shift
        return self.func(x) - self.shift

    def transfer_density(self, fmap: IntervalMap, x) -> np.ndarray:
        """exp(phi) |Df| evaluated at x, the Jacobian-weighted transfer weight."""
        x = np.asarray(x, dtype=float)
        d = np.abs(fmap.dfdx(x))
        if self.kind == "geometric":
            with np.errstate(divide="ignore"):
                return d ** (1.0 - self.t) * math.exp(-self.shift)
        return np.exp(self.func(x) - self.shift) * d

    def to_config(self) -> dict:
        if self.kind == "geometric":
            return {"kind": "geometric", "t": self.t}
        return {"kind": "holder", "name": self.name, **self.params}


def potential_from_config(spec: dict) -> Potential:
    kind = spec.get("kind")
    if kind == "geometric":
        return Potential.geometric(float(spec["t"]), allow_any_t=bool(spec.get("allow_any_t", False)))
    if kind == "holder":
        params = {k: v for k, v in spec.items() if k not in ("kind", "name", "exponent")}
        return Potential.holder(spec["name"], exponent=float(spec.get("exponent", 1.0)), **params)
    raise ConfigurationError(f"unknown potential kind {kind!r}")


def birkhoff_sum(pot: Potential, fmap: IntervalMap, x: float, n: int) -> float:
    """S_n phi(x); -inf when a geometric potential meets a critical point."""
    if n < 1:
        raise ValueError("n must be >= 1")
    pts = np.empty(n)
    v = np.array([float(x)])
    for k in range(n):
        pts[k] = v[0]
        v = fmap.apply(v)
    vals = pot.values(fmap, pts)
    if np.any(np.isinf(vals)):
        return -math.inf
    return float(np.sum(vals))


def is_full_branch_pl(fmap: IntervalMap) -> bool:
    if not fmap.is_piecewise_linear:
        return False
    return all(abs(br.image[0]) < 1e-12 and abs(br.image[1] - 1.0) < 1e-12 for br in fmap.branches)


def pressure_pl_full_branch(fmap: IntervalMap, t: float) -> float:
    """log sum_i |s_i|^{-t}, the full-shift pressure of -t log|Df|."""
    if not is_full_branch_pl(fmap):
        raise UnsupportedMapError("analytic pressure needs a piecewise-linear map with full branches")
    slopes = [abs(float(br.derivative(np.array([0.5 * (br.lo + br.hi)]))[0])) for br in fmap.branches]
    return math.log(sum(s ** (-t) for s in slopes))


def pressure_numeric(fmap: IntervalMap, pot: Potential, N: int = 4096, tol: float = 1e-12) -> float:
    """log of the leading eigenvalue of the closed Ulam operator."""
    if N < 64 or N & (N - 1):
        raise ValueError("N must be a power of two >= 64")
    from .ulam import build_ulam, leading_eigen

    op = build_ulam(fmap, pot, N, require_normalized=False)
    res = leading_eigen(op, tol=tol)
    return math.log(res.lam)


def pressure(fmap: IntervalMap, pot: Potential, N: int = 4096) -> float:
    """Analytic pressure where available, else the Ulam estimate."""
    if is_full_branch_pl(fmap):
        if pot.kind == "geometric":
            return pressure_pl_full_branch(fmap, pot.t) - pot.shift
        if pot.is_constant:
            return pot.params.get("c", 0.0) - pot.shift + math.log(len(fmap.branches))
    return pressure_numeric(fmap, pot, N)


def normalize(pot: Potential, fmap: IntervalMap, N: int = 4096, check_holder: bool = True) -> Potential:
    """Return phi - P(phi) with the normalised flag set."""
    if pot.normalized:
        return pot
    p = pressure(fmap, pot, N)
    out = replace(pot, shift=pot.shift + p, pressure=0.0, normalized=True)
    if check_holder and out.kind == "holder":
        sup = float(np.max(out.values(fmap, np.linspace(0.0, 1.0, 10_000))))
        if sup >= 0.0:
            raise ConfigurationError(
                f"normalised Hölder potential has sup {sup:.3g} >= 0; replace it by a cohomologous one with phi < P(phi)")
    return out


def lyapunov_exponent(fmap: IntervalMap, density: np.ndarray, left: np.ndarray) -> float:
    """Integral of log|Df| against the Ulam invariant measure (bin midpoints)."""
    N = density.size
    mids = (np.arange(N) + 0.5) / N
    w = density * left
    w = w / w.sum()
    return float(np.sum(w * np.log(np.abs(fmap.dfdx(mids)))))
