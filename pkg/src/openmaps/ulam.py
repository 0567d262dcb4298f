"""Ulam discretisation of the (punctured) transfer operator.

``W[i, j]`` is the average over target bin ``B_i`` of the transfer operator
applied to the indicator of source bin ``B_j``:

    W[i, j] = (1 / |B_i|) * sum_b  int_{B_j cap f_b^{-1} B_i} e^{phi} |Df| dy

so W acts on bin values of functions (densities with respect to the
conformal reference) and sources sit in columns.  For phi = -log|Df| the
integrand is 1 and the weights are exact preimage lengths.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order, connected_components

from .maps import IntervalMap, map_to_config
from .openmap import Hole
from .potentials import Potential

GL_NODES, GL_WEIGHTS = np.polynomial.legendre.leggauss(8)
QUAD_TOL = 1e-10
QUAD_MAX_DEPTH = 20
SNAP_MAX_MULTIPLE = 64


class QuadratureError(RuntimeError):
    pass


class AlignmentError(ValueError):
    pass


class NonConvergenceError(RuntimeError):
    def __init__(self, msg: str, residual: float):
        super().__init__(f"{msg} (last residual {residual:.3e})")
        self.residual = residual


class DegenerateError(RuntimeError):
    pass


class TotalEscapeError(RuntimeError):
    pass


@dataclass(frozen=True)
class UlamOperator:
    N: int
    W: sp.csr_matrix = field(repr=False)
    hole_mask: np.ndarray = field(repr=False)
    punctured: bool = False
    fmap: Optional[IntervalMap] = field(default=None, repr=False, compare=False)
    potential: Optional[Potential] = field(default=None, repr=False, compare=False)
    hole: Optional[Hole] = None

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.N + 1)

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.N) + 0.5) / self.N


@dataclass
class SpectralResult:
    lam: float
    right: np.ndarray = field(repr=False)
    left: np.ndarray = field(repr=False)
    residual: float
    iterations: int
    degenerate: bool = False
    n_blocks: int = 0
    dominant_chain: int = 1


# ---------------------------------------------------------------------------
# assembly

def _gl(fn, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    x = mid[:, None] + half[:, None] * GL_NODES[None, :]
    return half * (fn(x) @ GL_WEIGHTS)


def _adaptive(fn, a: np.ndarray, b: np.ndarray, depth: int = 0) -> np.ndarray:
    whole = _gl(fn, a, b)
    m = 0.5 * (a + b)
    halves = _gl(fn, a, m) + _gl(fn, m, b)
    bad = np.abs(whole - halves) > QUAD_TOL
    out = halves
    if np.any(bad):
        if depth >= QUAD_MAX_DEPTH:
            raise QuadratureError(f"quadrature did not settle after {QUAD_MAX_DEPTH} bisections "
                                  f"near x={a[bad][0]:.6g}")
        ab, bb, mb = a[bad], b[bad], m[bad]
        out = out.copy()
        out[bad] = _adaptive(fn, ab, mb, depth + 1) + _adaptive(fn, mb, bb, depth + 1)
    return out


def _integrate(fmap: IntervalMap, pot: Potential, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """int_a^b e^phi |Df| dy per piece, with a square-root substitution at critical points."""
    dens = lambda x: pot.transfer_density(fmap, x)
    out = np.empty_like(a)
    crit = fmap.crit_points if fmap.crit else np.empty(0)
    left_c = np.isin(a, crit) if crit.size else np.zeros(a.shape, bool)
    right_c = np.isin(b, crit) & ~left_c if crit.size else np.zeros(a.shape, bool)
    plain = ~(left_c | right_c)
    if np.any(plain):
        out[plain] = _adaptive(dens, a[plain], b[plain])
    # y = c +- u^2 removes the square-root behaviour of |Df| at a critical point
    for k in np.nonzero(left_c | right_c)[0]:
        c = a[k] if left_c[k] else b[k]
        sgn = 1.0 if left_c[k] else -1.0
        fn = lambda u, c=c, sgn=sgn: dens(c + sgn * u ** 2) * 2.0 * u
        out[k] = _adaptive(fn, np.array([0.0]), np.array([math.sqrt(b[k] - a[k])]))[0]
    return out


def _constant_integrand(fmap: IntervalMap, pot: Potential) -> bool:
    if pot.kind == "geometric" and pot.t == 1.0:
        return True
    return fmap.is_piecewise_linear and (pot.kind == "geometric" or pot.is_constant)


def build_ulam(fmap: IntervalMap, pot: Potential, N: int, require_normalized: bool = True) -> UlamOperator:
    if N < 2:
        raise ValueError("N must be >= 2")
    if require_normalized and not pot.normalized:
        raise ValueError("build_ulam expects a normalised potential")
    edges = np.linspace(0.0, 1.0, N + 1)
    exact = _constant_integrand(fmap, pot)
    rows, cols, vals = [], [], []
    for br in fmap.branches:
        src = edges[(edges > br.lo) & (edges < br.hi)]
        ylo, yhi = br.image
        tgt = edges[(edges > ylo) & (edges < yhi)]
        pts = np.unique(np.concatenate([[br.lo, br.hi], src, br.invert(tgt) if tgt.size else []]))
        a, b = pts[:-1], pts[1:]
        keep = b > a
        a, b = a[keep], b[keep]
        mid = 0.5 * (a + b)
        j = np.minimum((mid * N).astype(np.int64), N - 1)
        i = np.minimum((br.forward(mid) * N).astype(np.int64), N - 1)
        if exact:
            w = pot.transfer_density(fmap, mid) * (b - a)
        else:
            w = _integrate(fmap, pot, a, b)
        rows.append(i)
        cols.append(j)
        vals.append(w * N)
    W = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N)).tocsr()
    W.sum_duplicates()
    W.eliminate_zeros()
    return UlamOperator(N=N, W=W, hole_mask=np.zeros(N, dtype=bool), fmap=fmap, potential=pot)


# ---------------------------------------------------------------------------
# holes

def _grid_multiple(x: float, M: int) -> Optional[int]:
    k = round(x * M)
    return k if abs(k / M - x) <= 1e-9 else None


def snap_hole(hole: Hole, N: int, max_multiple: int = SNAP_MAX_MULTIPLE) -> tuple[Hole, int]:
    """Align hole endpoints with a uniform grid.

    Tries N' = N, 2N, ..., max_multiple * N for an exact fit (to 1e-9);
    otherwise rounds every endpoint to the nearest multiple of 1/N.
    Endpoints outside [0, 1] are left alone.
    """
    inner = [e for iv in hole.intervals for e in iv if 0.0 < e < 1.0]
    for k in range(1, max_multiple + 1):
        M = k * N
        if all(_grid_multiple(e, M) is not None for e in inner):
            break
    else:
        M = N

    def snap(e: float) -> float:
        if not 0.0 < e < 1.0:
            return e
        return round(e * M) / M

    ivs = []
    for a, b in hole.intervals:
        sa, sb = snap(a), snap(b)
        if sb > sa:
            ivs.append((sa, sb))
    merged: list[tuple[float, float]] = []
    for a, b in sorted(ivs):
        if merged and a < merged[-1][1]:
            merged[-1] = (merged[-1][0], max(b, merged[-1][1]))
        else:
            merged.append((a, b))
    out = Hole(tuple(merged))
    if hole.center is not None and len(merged) == 1:
        a, b = merged[0]
        out = Hole(tuple(merged), center=hole.center, radius=_snapped_radius(hole.center, a, b))
    return out, M


def _snapped_radius(z: float, a: float, b: float) -> float:
    lo = z - max(a, 0.0) if a > 0.0 else None
    hi = min(b, 1.0) - z if b < 1.0 else None
    parts = [v for v in (lo, hi) if v is not None]
    return 0.5 * (min(b, 1.0) - max(a, 0.0)) if not parts else float(np.mean(parts))


def hole_bins(hole: Hole, N: int) -> np.ndarray:
    mids = (np.arange(N) + 0.5) / N
    return hole.contains(mids)


def puncture(op: UlamOperator, hole: Hole) -> UlamOperator:
    """Remove the hole: zero the rows and columns of hole bins.

    Zeroing rows as well as columns realises L(1_{I^1} psi) with
    I^1 = (I minus H) cap f^{-1}(I minus H); the nonzero spectrum is the
    same as with columns alone.
    """
    for a, b in hole.intervals:
        for e in (a, b):
            if 0.0 < e < 1.0 and abs(e * op.N - round(e * op.N)) > 1e-9 * op.N:
                raise AlignmentError(f"hole endpoint {e!r} is not on the 1/{op.N} grid; use snap_hole first")
    mask = hole_bins(hole, op.N) | op.hole_mask
    if hole.is_empty:
        return op
    keep = sp.diags((~mask).astype(float))
    W = (keep @ op.W @ keep).tocsr()
    W.eliminate_zeros()
    return replace(op, W=W, hole_mask=mask, punctured=True, hole=hole)


# ---------------------------------------------------------------------------
# spectrum

def _power(A: sp.csr_matrix, v: np.ndarray, tol: float, max_iter: int,
           shift: Optional[float] = None) -> tuple[float, np.ndarray, float, int]:
    """Shifted power iteration on a nonnegative matrix from a nonnegative start.

    With ``shift=None`` the shift follows half the current eigenvalue
    estimate; a fixed shift far above the spectral radius stalls convergence.
    """
    v = v / v.sum()
    lam_prev = math.inf
    resid = math.inf
    for it in range(1, max_iter + 1):
        Av = A @ v
        lam = Av.sum() / v.sum()
        resid = np.abs(Av - lam * v).sum() / v.sum()
        if abs(lam - lam_prev) < tol and resid < 10 * tol:
            return lam, v, resid, it
        lam_prev = lam
        w = Av + (0.5 * lam if shift is None else shift) * v
        s = w.sum()
        if s == 0.0:
            return 0.0, v, 0.0, it
        v = w / s
    raise NonConvergenceError(f"power iteration did not converge in {max_iter} steps", resid)


def _block_structure(W: sp.csr_matrix):
    n_comp, labels = connected_components(W, directed=True, connection="strong")
    coo = W.tocoo()
    # edge j -> i for W[i, j] > 0
    src, dst = labels[coo.col], labels[coo.row]
    self_loop = np.zeros(n_comp, dtype=bool)
    self_loop[src[src == dst]] = True
    sizes = np.bincount(labels, minlength=n_comp)
    nontrivial = np.nonzero((sizes > 1) | self_loop)[0]
    cross = src != dst
    C = sp.coo_matrix((np.ones(cross.sum()), (src[cross], dst[cross])), shape=(n_comp, n_comp)).tocsr()
    return labels, nontrivial, C


def _dominant_chain(C: sp.csr_matrix, dominant: list) -> int:
    """Most dominant blocks on one path of the block DAG.

    A chain of k such blocks makes n-step survival decay like n^(k-1) lam^n.
    """
    is_dom = np.zeros(C.shape[0], dtype=int)
    is_dom[dominant] = 1
    order = _topological_order(C)
    best = is_dom.copy()
    for c in order:
        succ = C.indices[C.indptr[c]:C.indptr[c + 1]]
        if succ.size:
            best[succ] = np.maximum(best[succ], best[c] + is_dom[succ])
    return int(best.max())


def _topological_order(C: sp.csr_matrix) -> np.ndarray:
    indeg = np.diff(C.tocsc().indptr).astype(int)
    stack = list(np.nonzero(indeg == 0)[0])
    order = []
    while stack:
        c = stack.pop()
        order.append(c)
        succ = C.indices[C.indptr[c]:C.indptr[c + 1]]
        indeg[succ] -= 1
        stack.extend(succ[indeg[succ] == 0].tolist())
    return np.asarray(order, dtype=int)


def leading_eigen(op: UlamOperator, tol: float = 1e-10, max_iter: int = 100_000) -> SpectralResult:
    """Leading eigenvalue with right (density) and left (measure) vectors.

    The spectral radius is the largest over irreducible diagonal blocks, each
    found by power iteration.  Eigenvectors are then grown from a dominant
    block that reaches (right) or is reached by (left) no other dominant block,
    which avoids the Jordan coupling of reducible punctured operators.
    """
    W = op.W.tocsr()
    N = W.shape[0]
    labels, nontrivial, C = _block_structure(W)
    if nontrivial.size == 0:
        z = np.zeros(N)
        return SpectralResult(0.0, z, z.copy(), 0.0, 0, degenerate=True, n_blocks=0)
    lams = {}
    total_it = 0
    for c in nontrivial:
        idx = np.nonzero(labels == c)[0]
        if idx.size == 1:
            lams[c] = float(W[idx[0], idx[0]])
            continue
        sub = W[idx][:, idx]
        lam, _, _, it = _power(sub, np.ones(idx.size), tol, max_iter)
        lams[c] = lam
        total_it += it
    lam_max = max(lams.values())
    dominant = [c for c, v in lams.items() if v >= lam_max * (1 - 1e-8)]

    def pick(graph: sp.csr_matrix) -> int:
        for c in dominant:
            reach = breadth_first_order(graph, c, directed=True, return_predecessors=False)
            if not any(d in set(reach.tolist()) for d in dominant if d != c):
                return c
        return dominant[0]

    def grow(A: sp.csr_matrix, block: int, graph: sp.csr_matrix) -> tuple[np.ndarray, float, int]:
        comps = breadth_first_order(graph, block, directed=True, return_predecessors=False)
        nodes = np.nonzero(np.isin(labels, comps))[0]
        sub = A[nodes][:, nodes]
        v = np.where(labels[nodes] == block, 1.0, 0.0)
        lam, v, res, it = _power(sub, v, tol, max_iter, shift=0.5 * lam_max)
        out = np.zeros(N)
        out[nodes] = v
        return out, res, it

    chain = _dominant_chain(C, dominant) if len(dominant) > 1 else 1
    right, res, it_r = grow(W, pick(C), C)
    WT = W.T.tocsr()
    CT = C.T.tocsr()
    left, _, it_l = grow(WT, pick(CT), CT)
    left = left / left.sum()
    Wg = W @ right
    lam = float(Wg.sum() / right.sum())
    residual = float(np.abs(Wg - lam * right).sum() / right.sum())
    pairing = float(right @ left)
    degenerate = bool(pairing <= 1e-12 * right.sum() * left.max())
    if degenerate:
        right = right * N / right.sum()
    else:
        right = right / pairing
    return SpectralResult(lam, right, left, residual, total_it + it_r + it_l, degenerate, len(nontrivial), chain)


def escape_rate_spectral(fmap: IntervalMap, pot: Potential, hole: Hole, N: int = 4096, tol: float = 1e-10,
                         base: Optional[UlamOperator] = None) -> tuple[float, SpectralResult, UlamOperator]:
    """-log of the leading eigenvalue of the punctured operator.

    Returns (rate, result, punctured operator).  ``base`` reuses an assembled
    closed operator when the snapped grid matches.
    """
    snapped, M = snap_hole(hole, N)
    if base is None or base.N != M:
        base = build_ulam(fmap, pot, M)
    op = puncture(base, snapped)
    res = leading_eigen(op, tol=tol)
    rate = math.inf if res.lam <= 0.0 else -math.log(res.lam)
    return rate, res, op


def accim_density(result: SpectralResult, op: UlamOperator, reference_left: Optional[np.ndarray] = None) -> np.ndarray:
    """Conditionally invariant density, zero on the hole, with sum g m0 = 1."""
    if result.lam <= 0.0:
        raise DegenerateError("leading eigenvalue is 0: everything escapes")
    g = np.where(op.hole_mask, 0.0, result.right)
    m0 = reference_left if reference_left is not None else np.full(g.size, 1.0 / g.size)
    return g / float(g @ m0)


@dataclass
class Evolution:
    densities: list = field(repr=False)
    distances: np.ndarray
    theta: float


def _l1(v: np.ndarray) -> float:
    return float(np.abs(v).sum() / v.size)


def conditional_evolve(op: UlamOperator, psi: np.ndarray, n: int, target: np.ndarray,
                       keep_densities: bool = False) -> Evolution:
    """Iterate psi -> W psi / |W psi|_1 and track the L1 distance to ``target``.

    ``theta`` is exp of the slope of log-distance over the later half of
    the steps lying above the rounding floor (10x the smallest distance, at
    least 1e-13); it is 0 when fewer than three such steps exist.
    """
    psi = np.asarray(psi, dtype=float)
    if np.any(psi < 0) or _l1(np.where(op.hole_mask, 0.0, psi)) == 0.0:
        raise ValueError("psi must be nonnegative and not vanish off the hole")
    tgt = target / _l1(target)
    v = psi / _l1(psi)
    dists = np.empty(n + 1)
    dens = []
    dists[0] = _l1(v - tgt)
    for k in range(1, n + 1):
        w = op.W @ v
        s = _l1(w)
        if s == 0.0:
            raise TotalEscapeError(f"all mass escaped at step {k}")
        v = w / s
        dists[k] = _l1(v - tgt)
        if keep_densities:
            dens.append(v.copy())
    floor = max(1e-13, 10.0 * float(dists.min()))
    above = np.nonzero(dists > floor)[0]
    above = above[above.size // 2:]
    if above.size < 3:
        theta = 0.0
    else:
        slope = np.polyfit(above, np.log(dists[above]), 1)[0]
        theta = float(math.exp(slope))
    return Evolution(dens, dists, theta)


# ---------------------------------------------------------------------------
# export

def export_operator(op: UlamOperator, path, snapped_eps: Optional[float] = None) -> None:
    path = Path(path)
    coo = op.W.tocoo()
    header = {"N": op.N, "map": map_to_config(op.fmap) if op.fmap else None,
              "potential": op.potential.to_config() if op.potential else None,
              "hole": op.hole.to_config() if op.hole else None, "snapped_eps": snapped_eps}
    with path.open("w") as fh:
        fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        for i, j, w in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i} {j} {float(w)!r}\n")


def export_result(res: SpectralResult, path) -> None:
    path = Path(path)
    path.with_suffix(".json").write_text(json.dumps(
        {"lambda": res.lam, "residual": res.residual, "iterations": res.iterations,
         "degenerate": res.degenerate}, indent=2, sort_keys=True))
    with path.with_suffix(".csv").open("w") as fh:
        fh.write("bin,density,left\n")
        for k, (g, m) in enumerate(zip(res.right, res.left)):
            fh.write(f"{k},{float(g)!r},{float(m)!r}\n")
