import math

import numpy as np
import pytest
import scipy.sparse as sp

from openmaps.openmap import Hole
from openmaps.potentials import Potential
from openmaps.ulam import (AlignmentError, accim_density, build_ulam, conditional_evolve, escape_rate_spectral,
                           export_operator, export_result, hole_bins, leading_eigen, puncture, snap_hole)

MARKOV = Hole(((0.25, 0.5),))
GOLDEN = Hole(((0.0, 0.25),))


def oracle_3x3():
    # surviving quarters A=[0,1/4], C=[1/2,3/4], D=[3/4,1]; mass moves with weight 1/2 per covered quarter
    return np.array([[0.5, 0.0, 0.5],
                     [0.0, 0.5, 0.0],
                     [0.0, 0.5, 0.0]])


def test_tent_n4_entries(tent, tent_pot):
    W = build_ulam(tent, tent_pot, 4).W.toarray()
    assert set(np.unique(W)) <= {0.0, 0.5, 1.0}
    assert np.allclose(W.sum(axis=0), 1.0, atol=1e-12)
    expected = np.array([[0.5, 0, 0, 0.5], [0.5, 0, 0, 0.5], [0, 0.5, 0.5, 0], [0, 0.5, 0.5, 0]])
    assert np.allclose(W, expected)


@pytest.mark.parametrize("N", [2, 8, 64, 1000])
def test_lebesgue_is_fixed(tent, tent_pot, N):
    op = build_ulam(tent, tent_pot, N)
    assert np.allclose(op.W @ np.ones(N), np.ones(N), atol=1e-12)
    assert np.all(op.W.data >= 0)


def test_logistic_near_stochastic(logistic, logistic_pot):
    W = build_ulam(logistic, logistic_pot, 2048).W
    s = np.asarray(W.sum(axis=0)).ravel()
    assert s.min() >= 0.999 and s.max() <= 1.001


def test_build_requires_normalised(tent):
    with pytest.raises(ValueError):
        build_ulam(tent, Potential.constant(0.0), 16)
    assert build_ulam(tent, Potential.constant(0.0), 16, require_normalized=False).N == 16


def test_puncture_examples(tent, tent_pot):
    op = build_ulam(tent, tent_pot, 4)
    assert puncture(op, Hole.empty()) is op
    p = puncture(op, MARKOV)
    W = p.W.toarray()
    assert np.all(W[:, 1] == 0) and np.all(W[1, :] == 0)
    keep = [0, 2, 3]
    lam = max(abs(np.linalg.eigvals(W[np.ix_(keep, keep)])))
    assert lam == pytest.approx(0.5)
    assert lam == pytest.approx(max(abs(np.linalg.eigvals(oracle_3x3()))))


def test_puncture_everything_escapes(tent, tent_pot):
    # (0, 3/4) leaves [3/4, 1], which maps into the hole; Hole rejects total length 1
    rate, res, _ = escape_rate_spectral(tent, tent_pot, Hole(((0.0, 0.75),)), 4)
    assert res.lam == 0.0 and rate == math.inf and res.degenerate


def test_puncture_requires_alignment(tent, tent_pot):
    with pytest.raises(AlignmentError):
        puncture(build_ulam(tent, tent_pot, 4), Hole(((0.1, 0.3),)))


def test_snap_examples():
    h, M = snap_hole(Hole.centered(0.5, 0.125), 64)
    assert M == 64 and h.intervals == ((0.375, 0.625),)
    # 2/3 -+ 1/100 = 197/300, 203/300 already lie on the grid
    h, M = snap_hole(Hole.centered(2 / 3, 0.01), 300)
    assert M == 300 and np.allclose(h.intervals, [(197 / 300, 203 / 300)], rtol=0, atol=1e-15)
    h, M = snap_hole(Hole.centered(2 / 3, 1 / 300), 300)
    assert M == 300 and np.allclose(h.intervals, [(199 / 300, 201 / 300)], rtol=0, atol=1e-15)
    h, M = snap_hole(Hole.centered(2 / 3, 0.0101), 300, max_multiple=1)
    assert M == 300 and np.allclose(h.intervals, [(197 / 300, 203 / 300)], rtol=0, atol=1e-15)
    h, M = snap_hole(Hole.centered(1 / 3, 1 / 7), 21)
    assert M == 21 and np.allclose(h.intervals, [(4 / 21, 10 / 21)], rtol=0, atol=1e-15)


def test_snap_refines_grid_for_exact_fit():
    h, M = snap_hole(Hole(((1 / 3, 2 / 3),)), 64)
    assert M == 192 and np.allclose(h.intervals, [(1 / 3, 2 / 3)], rtol=0, atol=1e-15)


def test_leading_eigen_closed(tent, tent_pot):
    res = leading_eigen(build_ulam(tent, tent_pot, 1024))
    assert res.lam == pytest.approx(1.0, abs=1e-10)
    assert np.ptp(res.right) < 1e-8
    assert res.right @ res.left == pytest.approx(1.0)


def test_leading_eigen_markov_hole(tent, tent_pot):
    rate, res, op = escape_rate_spectral(tent, tent_pot, MARKOV, 1024)
    assert res.lam == pytest.approx(0.5, abs=1e-9)
    assert rate == pytest.approx(math.log(2), abs=1e-6)
    assert res.dominant_chain == 2


def _acip_distance(logistic, pot, N):
    res = leading_eigen(build_ulam(logistic, pot, N))
    e = np.linspace(0, 1, N + 1)
    exact = (2 / np.pi) * (np.arcsin(np.sqrt(e[1:])) - np.arcsin(np.sqrt(e[:-1]))) * N
    g = res.right / res.right.mean()
    return float(np.abs(g - exact).sum() / N)


def test_logistic_invariant_density(logistic, logistic_pot):
    # L1 distance to the bin averages of 1/(pi sqrt(x(1-x))), a lower bound for the distance to the function
    assert _acip_distance(logistic, logistic_pot, 4096) < 0.02


def test_logistic_invariant_density_converges(logistic, logistic_pot):
    d = [_acip_distance(logistic, logistic_pot, N) for N in (1024, 2048, 4096, 8192)]
    assert all(b < a for a, b in zip(d, d[1:]))
    assert d[-1] < 0.02


def test_empty_hole_rate_zero(tent, tent_pot):
    assert escape_rate_spectral(tent, tent_pot, Hole.empty(), 64)[0] == pytest.approx(0.0, abs=1e-12)


def test_logistic_fixed_point_ratio(logistic, logistic_pot):
    eps = 2.0 ** -7
    rate, _, op = escape_rate_spectral(logistic, logistic_pot, Hole.centered(0.75, eps), 2 ** 14)
    mu = (2 / math.pi) * (math.asin(math.sqrt(0.75 + eps)) - math.asin(math.sqrt(0.75 - eps)))
    assert 0.4 <= rate / mu <= 0.6


def test_refinement_stability(tent, tent_pot):
    h = Hole.centered(2 / 3, 2.0 ** -6)
    r = [escape_rate_spectral(tent, tent_pot, h, N)[0] for N in (2 ** 10, 2 ** 11, 2 ** 12)]
    assert abs(r[0] - r[1]) <= 5 * abs(r[1] - r[2]) + 1e-12


def test_accim_closed_is_invariant_density(tent, tent_pot):
    op = build_ulam(tent, tent_pot, 64)
    g = accim_density(leading_eigen(op), op)
    assert np.allclose(g, 1.0)


def test_accim_matches_oracle_eigenvector(tent, tent_pot):
    _, res, op = escape_rate_spectral(tent, tent_pot, MARKOV, 64)
    g = accim_density(res, op)
    quarters = g.reshape(4, 16)
    assert np.allclose(quarters, quarters[:, :1])
    w, v = np.linalg.eig(oracle_3x3())
    # the right eigenvector of the 3x3 oracle at 1/2 lives on A only (C and D are transient for it)
    vec = np.real(v[:, np.argmax(np.real(w))])
    vec = vec / vec.sum()
    got = quarters[[0, 2, 3], 0]
    assert np.allclose(got / got.sum(), vec, atol=1e-8)
    assert quarters[1, 0] == 0.0


def test_accim_positive_golden(tent, tent_pot):
    _, res, op = escape_rate_spectral(tent, tent_pot, GOLDEN, 64)
    g = accim_density(res, op)
    assert np.all(g[~op.hole_mask] > 0) and np.all(g[op.hole_mask] == 0)
    assert g.mean() == pytest.approx(1.0)


def test_accim_logistic_small_hole(logistic, logistic_pot):
    N = 4096
    _, res, op = escape_rate_spectral(logistic, logistic_pot, Hole.centered(0.75, 2.0 ** -8), N)
    g = accim_density(res, op)
    e = np.linspace(0, 1, N + 1)
    exact = (2 / np.pi) * (np.arcsin(np.sqrt(e[1:])) - np.arcsin(np.sqrt(e[:-1]))) * N
    off = ~op.hole_mask
    assert np.abs(g[off] - exact[off]).sum() / N < 0.05


def test_conditional_evolve_fixed_at_target(tent, tent_pot):
    _, res, op = escape_rate_spectral(tent, tent_pot, GOLDEN, 64)
    g = accim_density(res, op)
    ev = conditional_evolve(op, g, 20, g)
    # g is an eigenvector to solver tolerance (1e-10), not to rounding
    assert np.max(ev.distances) < 1e-9


def test_conditional_evolve_geometric(tent, tent_pot):
    _, res, op = escape_rate_spectral(tent, tent_pot, GOLDEN, 64)
    g = accim_density(res, op)
    ev = conditional_evolve(op, np.ones(64), 60, g)
    # second eigenvalue ratio of the golden-mean matrix: |(1 - sqrt 5)/(1 + sqrt 5)|
    assert ev.theta == pytest.approx((math.sqrt(5) - 1) / (math.sqrt(5) + 1), rel=0.02)
    assert ev.distances[-1] < 1e-8


def test_conditional_evolve_logistic_gap(logistic, logistic_pot):
    N = 2 ** 12
    hole, _ = snap_hole(Hole.centered(0.75, 2.0 ** -6), N)
    _, res, op = escape_rate_spectral(logistic, logistic_pot, hole, N)
    base = leading_eigen(build_ulam(logistic, logistic_pot, N))
    ev = conditional_evolve(op, base.right, 60, accim_density(res, op))
    assert ev.theta < 0.9


def test_conditional_evolve_rejects_bad_start(tent, tent_pot):
    _, res, op = escape_rate_spectral(tent, tent_pot, GOLDEN, 64)
    with pytest.raises(ValueError):
        conditional_evolve(op, -np.ones(64), 5, np.ones(64))
    with pytest.raises(ValueError):
        conditional_evolve(op, op.hole_mask.astype(float), 5, np.ones(64))


def test_hole_bins():
    assert hole_bins(Hole(((0.25, 0.5),)), 8).tolist() == [False, False, True, True, False, False, False, False]


def test_exports(tmp_path, tent, tent_pot):
    _, res, op = escape_rate_spectral(tent, tent_pot, GOLDEN, 8)
    export_operator(op, tmp_path / "op.txt", snapped_eps=0.125)
    lines = (tmp_path / "op.txt").read_text().splitlines()
    assert lines[0].startswith("# ") and '"N": 8' in lines[0]
    i, j, w = lines[1].split()
    assert op.W[int(i), int(j)] == float(w)
    export_result(res, tmp_path / "res")
    assert (tmp_path / "res.json").exists() and len((tmp_path / "res.csv").read_text().splitlines()) == 9


def test_reducible_operator_blocks():
    # two dominant diagonal blocks chained: the solver reports the chain and keeps eigenvectors nonnegative
    from openmaps.ulam import UlamOperator

    W = sp.csr_matrix(np.array([[0.5, 0.0, 0.0], [0.5, 0.5, 0.0], [0.0, 0.5, 0.25]]))
    res = leading_eigen(UlamOperator(3, W, np.zeros(3, dtype=bool)))
    assert res.lam == pytest.approx(0.5)
    assert res.dominant_chain == 2
    assert np.all(res.right >= 0) and np.all(res.left >= 0)
