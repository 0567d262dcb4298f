"""Hofbauer extensions, trimmed inducing windows and first-return schemes.

Domains are closed intervals [lo, hi]; a domain D is subdivided at the cut
points lying in its interior and each piece P maps to the domain f(D cap Z),
Z the 1-cylinder containing P.  Everything is computed with floating point
intervals and explicit tolerances.
"""

from __future__ import annotations

import csv
import math
import warnings
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import networkx as nx
import numpy as np

from .maps import IntervalMap, DomainError, preimages

DEDUP_TOL = 1e-12
EDGE_TOL = 1e-10
MARKOV_TOL = 1e-9
MIN_PIECE = 1e-15


class ExtensionExplosionError(RuntimeError):
    pass


class TruncationTooSmallError(RuntimeError):
    pass


class MarkovViolationError(RuntimeError):
    def __init__(self, cylinder, image, window):
        super().__init__(f"return image {image} of cylinder {cylinder} is not the window {window}")
        self.cylinder = cylinder
        self.image = image
        self.window = window


# ---------------------------------------------------------------------------
# cut sets

@dataclass(frozen=True)
class CutSet:
    points: tuple[float, ...]
    tags: tuple[str, ...]

    def subset(self, tags: Iterable[str]) -> "CutSet":
        keep = set(tags)
        pairs = [(p, t) for p, t in zip(self.points, self.tags) if t in keep]
        return CutSet(tuple(p for p, _ in pairs), tuple(t for _, t in pairs))

    def as_array(self) -> np.ndarray:
        return np.array(self.points, dtype=float)


def _add(points: list, tags: list, values: Iterable[float], tag: str) -> None:
    for v in values:
        if not 0.0 < v < 1.0:
            continue
        if any(abs(v - p) < DEDUP_TOL for p in points):
            continue
        points.append(float(v))
        tags.append(tag)


def make_cutset(fmap: IntervalMap, z: Optional[float] = None, eps0: Optional[float] = None,
                eps: Optional[float] = None, L: Optional[int] = None) -> CutSet:
    """Crit, plus f^-1(z), f^-1(z +- eps0), f^-1(z +- eps) as requested.

    With ``L`` given, eps0 is checked against the bound from the level-L
    partition and the genericity of the orbits of z +- eps0; both only warn.
    """
    if eps is not None and (eps0 is None or not eps < eps0):
        raise ValueError("eps requires eps0 with eps < eps0")
    points: list[float] = []
    tags: list[str] = []
    _add(points, tags, [c for c, _ in fmap.crit], "crit")
    _add(points, tags, fmap.breakpoints.tolist(), "breakpoint")
    if z is not None:
        _add(points, tags, preimages(fmap, z), "preimage_of_z")
    if eps0 is not None:
        if z is None:
            raise ValueError("eps0 requires z")
        if z - eps0 < 0.0 or z + eps0 > 1.0:
            raise DomainError(f"z +- eps0 = ({z - eps0}, {z + eps0}) leaves [0, 1]")
        for y in (z - eps0, z + eps0):
            _add(points, tags, preimages(fmap, y), "preimage_of_z_eps0")
    if eps is not None:
        for y in (z - eps, z + eps):
            if 0.0 <= y <= 1.0:
                _add(points, tags, preimages(fmap, y), "preimage_of_z_eps")
    order = np.argsort(points)
    cuts = CutSet(tuple(points[k] for k in order), tuple(tags[k] for k in order))
    if eps0 is not None and L is not None:
        star = eps0_bound(fmap, z, L)
        if not eps0 < star:
            warnings.warn(f"eps0={eps0:g} violates the level-{L} bound eps0* = {star:.3g}", stacklevel=2)
        if not eps0_is_generic(fmap, z, eps0):
            warnings.warn(f"orbits of z +- eps0 meet the extended critical set (eps0={eps0:g})", stacklevel=2)
    return cuts


def _iterated_preimages(fmap: IntervalMap, ys: Iterable[float], depth: int) -> list[float]:
    layer = [y for y in ys]
    out = list(layer)
    for _ in range(depth):
        nxt = []
        for y in layer:
            nxt.extend(preimages(fmap, y))
        layer = nxt
        out.extend(nxt)
    return out


def _sup_derivative(fmap: IntervalMap, L: int, n: int = 10_001) -> float:
    x = np.concatenate([np.linspace(0.0, 1.0, n), fmap.breakpoints])
    d = np.ones_like(x)
    v = x.copy()
    for _ in range(L):
        d *= np.abs(fmap.dfdx(v))
        v = fmap.apply(v)
    return float(d.max())


def eps0_bound(fmap: IntervalMap, z: float, L: int) -> float:
    """(1 / sup|Df^L|) * min distance between level-L boundary points and orbit points of Crit_z."""
    crit_z = make_cutset(fmap, z).points
    bdry = np.array(_iterated_preimages(fmap, crit_z, L))
    orbit_pts = []
    for c in crit_z:
        v = np.array([c])
        for _ in range(L + 1):
            orbit_pts.append(float(v[0]))
            v = fmap.apply(v)
    orbit_pts = np.array(orbit_pts)
    diff = np.abs(bdry[:, None] - orbit_pts[None, :])
    diff = diff[diff > DEDUP_TOL]
    return float(diff.min() / _sup_derivative(fmap, L)) if diff.size else math.inf


def eps0_is_generic(fmap: IntervalMap, z: float, eps0: float, n_iter: int = 50, tol: float = 1e-9) -> bool:
    crit_z = np.array(make_cutset(fmap, z).points)
    for y in (z - eps0, z + eps0):
        v = np.array([y])
        for _ in range(n_iter + 1):
            if np.any(np.abs(crit_z - v[0]) < tol):
                return False
            v = fmap.apply(v)
    v = np.array([z])
    for _ in range(n_iter + 1):
        if min(abs(v[0] - z + eps0), abs(v[0] - z - eps0)) < tol:
            return False
        v = fmap.apply(v)
    return True


# ---------------------------------------------------------------------------
# extension

@dataclass(frozen=True)
class HofbauerDomain:
    id: int
    lo: float
    hi: float
    level: int


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    witness: tuple[float, float]


@dataclass
class HofbauerExtension:
    fmap: IntervalMap = field(repr=False)
    cuts: CutSet
    domains: dict[int, HofbauerDomain]
    edges: list[Edge]
    base_id: int
    L_max: int
    transitive_only: bool = False

    def graph(self) -> nx.MultiDiGraph:
        g = nx.MultiDiGraph()
        g.add_nodes_from(self.domains)
        g.add_edges_from((e.src, e.dst) for e in self.edges)
        return g

    def out_edges(self, did: int) -> list[Edge]:
        return [e for e in self.edges if e.src == did]

    def find(self, lo: float, hi: float, tol: float = DEDUP_TOL) -> Optional[int]:
        for d in self.domains.values():
            if abs(d.lo - lo) <= tol and abs(d.hi - hi) <= tol:
                return d.id
        return None

    def recomputed_levels(self) -> dict[int, int]:
        g = nx.DiGraph()
        g.add_nodes_from(self.domains)
        g.add_edges_from((e.src, e.dst) for e in self.edges)
        if self.base_id not in g:
            return {}
        return nx.single_source_shortest_path_length(g, self.base_id)

    def export(self, path) -> None:
        with Path(path).open("w") as fh:
            for d in sorted(self.domains.values(), key=lambda d: d.id):
                fh.write(f"domain {d.id} {float(d.lo)!r} {float(d.hi)!r} {d.level}\n")
            for e in self.edges:
                fh.write(f"edge {e.src} {e.dst} {float(e.witness[0])!r} {float(e.witness[1])!r}\n")


class _IntervalIndex:
    """Lookup of intervals up to an absolute tolerance."""

    def __init__(self, tol: float = DEDUP_TOL):
        self.tol = tol
        self._buckets: dict[tuple[int, int], list[tuple[float, float, int]]] = {}
        self._scale = 1e9

    def _key(self, lo: float, hi: float) -> tuple[int, int]:
        return (int(math.floor(lo * self._scale)), int(math.floor(hi * self._scale)))

    def get(self, lo: float, hi: float) -> Optional[int]:
        k0, k1 = self._key(lo, hi)
        for a in (k0 - 1, k0, k0 + 1):
            for b in (k1 - 1, k1, k1 + 1):
                for l, h, v in self._buckets.get((a, b), ()):
                    if abs(l - lo) <= self.tol and abs(h - hi) <= self.tol:
                        return v
        return None

    def put(self, lo: float, hi: float, value: int) -> None:
        self._buckets.setdefault(self._key(lo, hi), []).append((lo, hi, value))


def _cylinder_bounds(cuts: np.ndarray, a: float, b: float) -> tuple[float, float]:
    """The 1-cylinder [zl, zh] containing the piece [a, b]."""
    mid = 0.5 * (a + b)
    k = int(np.searchsorted(cuts, mid))
    zl = cuts[k - 1] if k > 0 else 0.0
    zh = cuts[k] if k < cuts.size else 1.0
    return zl, zh


def _split(cuts: np.ndarray, a: float, b: float) -> list[tuple[float, float]]:
    inner = cuts[(cuts > a + DEDUP_TOL) & (cuts < b - DEDUP_TOL)]
    pts = [a, *inner.tolist(), b]
    return list(zip(pts[:-1], pts[1:]))


def _branch_for(fmap: IntervalMap, a: float, b: float) -> int:
    return int(fmap.branch_index(np.array([0.5 * (a + b)]))[0])


def _image(fmap: IntervalMap, k: int, a: float, b: float) -> tuple[float, float]:
    v = fmap.branches[k].forward(np.array([a, b]))
    v = np.clip(v, 0.0, 1.0)
    return (float(v.min()), float(v.max()))


def child_domains(fmap: IntervalMap, cuts: np.ndarray, lo: float, hi: float):
    """Yield (witness_lo, witness_hi, branch, image_lo, image_hi) for the pieces of [lo, hi]."""
    for a, b in _split(cuts, lo, hi):
        k = _branch_for(fmap, a, b)
        ilo, ihi = _image(fmap, k, a, b)
        yield a, b, k, ilo, ihi


def build_extension(fmap: IntervalMap, cuts: CutSet, L_max: int, max_domains: int = 100_000) -> HofbauerExtension:
    if L_max < 1:
        raise ValueError("L_max must be >= 1")
    c = cuts.as_array()
    index = _IntervalIndex()
    domains = {0: HofbauerDomain(0, 0.0, 1.0, 0)}
    index.put(0.0, 1.0, 0)
    edges: list[Edge] = []
    queue = deque([0])
    while queue:
        did = queue.popleft()
        d = domains[did]
        if d.level >= L_max:
            continue
        for a, b, _, ilo, ihi in child_domains(fmap, c, d.lo, d.hi):
            if ihi - ilo <= DEDUP_TOL:
                continue
            tgt = index.get(ilo, ihi)
            if tgt is None:
                tgt = len(domains)
                if tgt >= max_domains:
                    raise ExtensionExplosionError(
                        f"more than {max_domains} domains below level {L_max} (last level {d.level + 1})")
                domains[tgt] = HofbauerDomain(tgt, ilo, ihi, d.level + 1)
                index.put(ilo, ihi, tgt)
                queue.append(tgt)
            edges.append(Edge(did, tgt, (a, b)))
    return HofbauerExtension(fmap, cuts, domains, edges, 0, L_max)


def transitive_component(ext: HofbauerExtension) -> HofbauerExtension:
    """Restrict to the largest recurrent strongly connected component reachable from the base."""
    g = nx.DiGraph()
    g.add_nodes_from(ext.domains)
    g.add_edges_from((e.src, e.dst) for e in ext.edges)
    reach = nx.descendants(g, ext.base_id) | {ext.base_id}
    best = None
    for comp in nx.strongly_connected_components(g):
        if not comp & reach:
            continue
        n = next(iter(comp))
        if len(comp) == 1 and not g.has_edge(n, n):
            continue
        key = (len(comp), -min(ext.domains[i].level for i in comp))
        if best is None or key > best[0]:
            best = (key, comp)
    if best is None:
        raise TruncationTooSmallError(f"no recurrent component below level {ext.L_max}")
    comp = best[1]
    return replace(ext, domains={i: d for i, d in ext.domains.items() if i in comp},
                   edges=[e for e in ext.edges if e.src in comp and e.dst in comp], transitive_only=True)


def check_semiconjugacy(ext: HofbauerExtension, n_samples: int = 10_000, seed: int = 0) -> dict:
    """Sample (x, D), step with the edge structure and compare projections with f(x)."""
    rng = np.random.default_rng(seed)
    by_src: dict[int, list[Edge]] = {}
    for e in ext.edges:
        by_src.setdefault(e.src, []).append(e)
    expanded = sorted(by_src)
    failures = 0
    for _ in range(n_samples):
        did = expanded[rng.integers(len(expanded))]
        d = ext.domains[did]
        x = d.lo + (d.hi - d.lo) * rng.uniform(1e-9, 1 - 1e-9)
        hit = [e for e in by_src[did] if e.witness[0] <= x <= e.witness[1]]
        if not hit:
            failures += 1
            continue
        e = hit[0]
        k = _branch_for(ext.fmap, *e.witness)
        y = float(ext.fmap.branches[k].forward(np.array([x]))[0])
        fx = float(ext.fmap.apply(np.array([x]))[0])
        tgt = ext.domains.get(e.dst)
        if tgt is None or abs(y - fx) > 1e-12 or not (tgt.lo - 1e-12 <= y <= tgt.hi + 1e-12):
            failures += 1
    return {"samples": n_samples, "failures": failures, "seed": seed}


def check_edges(ext: HofbauerExtension) -> list[Edge]:
    """Edges whose witness does not map onto the target interval."""
    bad = []
    for e in ext.edges:
        k = _branch_for(ext.fmap, *e.witness)
        lo, hi = _image(ext.fmap, k, *e.witness)
        t = ext.domains[e.dst]
        if abs(lo - t.lo) > EDGE_TOL or abs(hi - t.hi) > EDGE_TOL:
            bad.append(e)
    return bad


# ---------------------------------------------------------------------------
# trimming

@dataclass(frozen=True)
class Window:
    domain_id: int
    domain: tuple[float, float]
    lo: float
    hi: float

    @property
    def length(self) -> float:
        return self.hi - self.lo


def _push(fmap: IntervalMap, itin: Sequence[int], x: float) -> float:
    v = np.array([x])
    for k in itin:
        v = np.clip(fmap.branches[k].forward(v), 0.0, 1.0)
    return float(v[0])


def _pull(fmap: IntervalMap, itin: Sequence[int], y: float) -> float:
    v = np.array([y])
    for k in reversed(itin):
        v = fmap.branches[k].invert(v)
    return float(v[0])


def _extreme_cylinder(fmap: IntervalMap, cuts: np.ndarray, lo: float, hi: float, L: int, left: bool) -> float:
    """Inner endpoint of the leftmost (or rightmost) L-cylinder of [lo, hi]."""
    anchor, other = (lo, hi) if left else (hi, lo)
    itin: list[int] = []
    for _ in range(L):
        ya, yo = _push(fmap, itin, anchor), _push(fmap, itin, other)
        s, t = min(ya, yo), max(ya, yo)
        inner = cuts[(cuts > s + DEDUP_TOL) & (cuts < t - DEDUP_TOL)]
        if inner.size:
            c = inner[np.argmin(np.abs(inner - ya))]
            other = _pull(fmap, itin, float(c))
            yo = float(c)
        itin.append(_branch_for(fmap, min(ya, yo), max(ya, yo)))
    return other


def trim(ext: HofbauerExtension, L: int, basis: Optional[CutSet] = None) -> list[Window]:
    """Remove the extreme L-cylinders of every domain of level <= L.

    ``basis`` selects the cut set defining the L-cylinders (default: the
    extension's own cuts).  Empty windows are dropped.
    """
    if L > ext.L_max:
        raise ValueError("L must not exceed L_max")
    cuts = (basis or ext.cuts).as_array()
    out = []
    for d in sorted(ext.domains.values(), key=lambda d: d.id):
        if d.level > L:
            continue
        a = _extreme_cylinder(ext.fmap, cuts, d.lo, d.hi, L, left=True)
        b = _extreme_cylinder(ext.fmap, cuts, d.lo, d.hi, L, left=False)
        if b - a > DEDUP_TOL:
            out.append(Window(d.id, (d.lo, d.hi), a, b))
    return out


def windows_hitting(windows: Sequence[Window], a: float, b: float) -> list[Window]:
    """Windows whose interior meets the open interval (a, b)."""
    return [w for w in windows if w.hi > a + DEDUP_TOL and w.lo < b - DEDUP_TOL]


# ---------------------------------------------------------------------------
# first-return scheme

@dataclass(frozen=True)
class Cylinder:
    lo: float
    hi: float
    host: int
    R: int
    image_id: int
    image: tuple[float, float]


@dataclass
class InducedScheme:
    Y: list[Window]
    cylinders: list[Cylinder]
    tail: np.ndarray
    uncovered_mass: float
    T_max: int
    mode: str
    violations: list[Cylinder] = field(default_factory=list)

    @property
    def total_length(self) -> float:
        return sum(w.length for w in self.Y)

    @property
    def markov_fraction(self) -> float:
        n = len(self.cylinders)
        return 1.0 if n == 0 else 1.0 - len(self.violations) / n

    def export(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lo", "hi", "host", "R", "image_id"])
            for c in self.cylinders:
                w.writerow([repr(float(c.lo)), repr(float(c.hi)), c.host, c.R, c.image_id])


def _push_many(fmap: IntervalMap, branch: np.ndarray, x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    for k in np.unique(branch):
        sel = branch == k
        out[sel] = fmap.branches[int(k)].forward(x[sel])
    return np.clip(out, 0.0, 1.0)


def _pull_many(fmap: IntervalMap, itin: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Pull y back through the itineraries (one row per point)."""
    y = np.array(y, dtype=float)
    for j in range(itin.shape[1] - 1, -1, -1):
        col = itin[:, j]
        for k in np.unique(col):
            sel = col == k
            y[sel] = fmap.branches[int(k)].invert(y[sel])
    return y


def first_return_scheme(ext: HofbauerExtension, Y: Sequence[Window], T_max: int = 20, mode: str = "first",
                        strict: bool = True, max_pieces: int = 2_000_000) -> InducedScheme:
    """Iterate Y through the extension until pieces land back in Y.

    ``mode="first"`` is the first return map: any part of a piece inside a
    window returns.  ``mode="full"`` only accepts a return when the piece
    covers the whole window, which gives full-branch cylinders even when the
    first return map is not Markov.  Returned cylinders whose image is not
    the whole window raise ``MarkovViolationError`` when ``strict``, and are
    collected in ``violations`` otherwise.

    All live pieces of one step are processed together as arrays.
    """
    if not Y:
        raise ValueError("Y is empty")
    if T_max < 1:
        raise ValueError("T_max must be >= 1")
    if mode not in ("first", "full"):
        raise ValueError("mode must be 'first' or 'full'")
    fmap = ext.fmap
    cuts = ext.cuts.as_array()
    win_index = _IntervalIndex(tol=1e-10)
    for k, w in enumerate(Y):
        win_index.put(w.domain[0], w.domain[1], k)
    w_lo = np.array([w.lo for w in Y])
    w_hi = np.array([w.hi for w in Y])
    w_dom = np.array([w.domain_id for w in Y])

    dlo = np.array([w.domain[0] for w in Y])
    dhi = np.array([w.domain[1] for w in Y])
    lo, hi = w_lo.copy(), w_hi.copy()
    host = np.arange(len(Y))
    itin = np.zeros((len(Y), 0), dtype=np.int16)

    cylinders: list[Cylinder] = []
    violations: list[Cylinder] = []
    lost = 0.0
    for n in range(1, T_max + 1):
        # split every piece at the cut points inside it
        first = np.searchsorted(cuts, lo + DEDUP_TOL, side="right")
        last = np.searchsorted(cuts, hi - DEDUP_TOL, side="left")
        count = np.maximum(last - first, 0) + 1
        parent = np.repeat(np.arange(lo.size), count)
        pos = np.arange(parent.size) - np.repeat(np.cumsum(count) - count, count)
        k0 = first[parent] + pos
        a = np.where(pos == 0, lo[parent], cuts[np.clip(k0 - 1, 0, max(cuts.size - 1, 0))] if cuts.size else lo[parent])
        b = np.where(pos == count[parent] - 1, hi[parent], cuts[np.clip(k0, 0, max(cuts.size - 1, 0))] if cuts.size else hi[parent])
        mid = 0.5 * (a + b)
        br = fmap.branch_index(mid)
        kz = np.searchsorted(cuts, mid)
        zl = np.where(kz > 0, cuts[np.clip(kz - 1, 0, None)] if cuts.size else 0.0, 0.0)
        zh = np.where(kz < cuts.size, cuts[np.clip(kz, None, cuts.size - 1)] if cuts.size else 1.0, 1.0)
        pd0 = _push_many(fmap, br, np.maximum(dlo[parent], zl))
        pd1 = _push_many(fmap, br, np.minimum(dhi[parent], zh))
        pa, pb = _push_many(fmap, br, a), _push_many(fmap, br, b)
        ndlo, ndhi = np.minimum(pd0, pd1), np.maximum(pd0, pd1)
        nlo = np.maximum(np.minimum(pa, pb), ndlo)
        nhi = np.minimum(np.maximum(pa, pb), ndhi)
        nitin = np.hstack([itin[parent], br[:, None].astype(np.int16)])
        nhost = host[parent]

        tiny = nhi - nlo <= MIN_PIECE
        if np.any(tiny):
            ends = _pull_many(fmap, itin[parent][tiny], np.concatenate([a[tiny]])), \
                _pull_many(fmap, itin[parent][tiny], b[tiny])
            lost += float(np.sum(np.abs(ends[1] - ends[0])))
        keep = ~tiny
        ndlo, ndhi, nlo, nhi, nitin, nhost = ndlo[keep], ndhi[keep], nlo[keep], nhi[keep], nitin[keep], nhost[keep]

        # window lookup per distinct target domain
        wk = np.full(ndlo.size, -1)
        pairs, inv = np.unique(np.stack([ndlo, ndhi], axis=1), axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        for u, (x0, x1) in enumerate(pairs):
            k = win_index.get(float(x0), float(x1))
            if k is not None:
                wk[inv == u] = k
        has = wk >= 0
        wl = np.where(has, w_lo[np.maximum(wk, 0)], 0.0)
        wh = np.where(has, w_hi[np.maximum(wk, 0)], 0.0)
        ilo, ihi = np.maximum(nlo, wl), np.minimum(nhi, wh)
        inside = has & (ihi - ilo > MIN_PIECE)
        full = inside & (ilo <= wl + MARKOV_TOL) & (ihi >= wh - MARKOV_TOL)
        ret = full if mode == "full" else inside

        if np.any(ret):
            x0 = _pull_many(fmap, nitin[ret], ilo[ret])
            x1 = _pull_many(fmap, nitin[ret], ihi[ret])
            for j, (u0, u1, h, wkk, i0, i1, ok) in enumerate(zip(
                    x0, x1, nhost[ret], wk[ret], ilo[ret], ihi[ret], full[ret])):
                cyl = Cylinder(float(min(u0, u1)), float(max(u0, u1)), int(w_dom[h]), n, int(w_dom[wkk]),
                               (float(i0), float(i1)))
                cylinders.append(cyl)
                if not ok:
                    if strict:
                        raise MarkovViolationError(cyl, cyl.image, (float(w_lo[wkk]), float(w_hi[wkk])))
                    violations.append(cyl)
        # what continues: non-returning pieces whole, returning pieces minus the window
        cont_left = ret & (nlo < ilo - MIN_PIECE)
        cont_right = ret & (nhi > ihi + MIN_PIECE)
        stay = ~ret
        dlo = np.concatenate([ndlo[stay], ndlo[cont_left], ndlo[cont_right]])
        dhi = np.concatenate([ndhi[stay], ndhi[cont_left], ndhi[cont_right]])
        lo = np.concatenate([nlo[stay], nlo[cont_left], ihi[cont_right]])
        hi = np.concatenate([nhi[stay], ilo[cont_left], nhi[cont_right]])
        itin = np.concatenate([nitin[stay], nitin[cont_left], nitin[cont_right]])
        host = np.concatenate([nhost[stay], nhost[cont_left], nhost[cont_right]])
        if lo.size > max_pieces:
            raise ExtensionExplosionError(f"{lo.size} live pieces at step {n}")
        if lo.size == 0:
            break
    remaining = 0.0
    if lo.size:
        remaining = float(np.sum(np.abs(_pull_many(fmap, itin, hi) - _pull_many(fmap, itin, lo))))
    uncovered = remaining + lost
    R = np.array([c.R for c in cylinders], dtype=int)
    size = np.array([c.hi - c.lo for c in cylinders])
    tail = np.array([size[R > m].sum() + uncovered for m in range(T_max + 1)])
    return InducedScheme(list(Y), cylinders, tail, uncovered, T_max, mode, violations)


def fit_tail(scheme: InducedScheme, n_lo: int = 5, n_hi: Optional[int] = None) -> dict:
    """Log-linear fit of m(R > n) over [n_lo, n_hi]: returns alpha, C, r2."""
    n_hi = scheme.T_max if n_hi is None else n_hi
    n = np.arange(n_lo, n_hi + 1)
    t = scheme.tail[n]
    ok = t > 0
    n, y = n[ok], np.log(t[ok])
    if n.size < 3:
        return {"alpha": math.nan, "C": math.nan, "r2": math.nan, "points": int(n.size)}
    slope, icpt = np.polyfit(n, y, 1)
    resid = y - (slope * n + icpt)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return {"alpha": float(-slope), "C": float(math.exp(icpt)), "r2": r2, "points": int(n.size)}


def kac_check(scheme: InducedScheme) -> dict:
    """sum |Y_i| R_i over the scheme plus a censored lower bound for the rest."""
    s = sum((c.hi - c.lo) * c.R for c in scheme.cylinders)
    censored = scheme.uncovered_mass * (scheme.T_max + 1)
    return {"integral_R": s + censored, "returned_part": s, "censored_part": censored,
            "Y_length": scheme.total_length}


def expansion_diagnostic(scheme: InducedScheme, fmap: IntervalMap, samples: int = 5,
                         max_cylinders: int = 2000, margin: float = 0.01, seed: int = 0) -> dict:
    """Minimum |DF| and maximal distortion |DF(x)/DF(y)| over sampled cylinder points."""
    rng = np.random.default_rng(seed)
    cyls = scheme.cylinders
    if len(cyls) > max_cylinders:
        cyls = [cyls[k] for k in sorted(rng.choice(len(cyls), max_cylinders, replace=False))]
    min_df = math.inf
    max_ratio = 1.0
    for c in cyls:
        x = c.lo + (c.hi - c.lo) * rng.uniform(0.05, 0.95, samples)
        d = np.ones_like(x)
        v = x.copy()
        for _ in range(c.R):
            d *= np.abs(fmap.dfdx(v))
            v = fmap.apply(v)
        min_df = min(min_df, float(d.min()))
        if d.min() > 0:
            max_ratio = max(max_ratio, float(d.max() / d.min()))
    return {"min_DF": min_df, "max_distortion": max_ratio, "expanding": min_df > 1.0 + margin,
            "cylinders_sampled": len(cyls)}


def compare_schemes(a: InducedScheme, b: InducedScheme, tol: float = 1e-9) -> dict:
    """Count cylinders shared (same interval, host and return time) by two schemes."""
    keys_b = {(round(c.lo / tol), round(c.hi / tol), c.R) for c in b.cylinders}
    shared = [c for c in a.cylinders if (round(c.lo / tol), round(c.hi / tol), c.R) in keys_b]
    mass = sum(c.hi - c.lo for c in shared)
    return {"shared": len(shared), "only_a": len(a.cylinders) - len(shared),
            "only_b": len(b.cylinders) - len(shared), "shared_mass": mass}


def hole_avoidance(Y: Sequence[Window], z: float, eps0: float) -> list[Window]:
    """Windows of Y whose interior meets (z - eps0, z + eps0); empty when Y avoids the hole."""
    return windows_hitting(Y, z - eps0, z + eps0)
