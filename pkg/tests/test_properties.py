import math

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from openmaps import experiments as ex
from openmaps.maps import conjugacy_logistic_tent, logistic4, piecewise_linear, preimages, tent2
from openmaps.openmap import Hole
from openmaps.potentials import Potential, normalize
from openmaps.ulam import build_ulam, escape_rate_spectral, snap_hole

FAST = settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
unit = st.floats(0.0, 1.0, allow_nan=False)


@st.composite
def full_branch_maps(draw):
    k = draw(st.integers(2, 4))
    cuts = sorted(draw(st.lists(st.floats(0.05, 0.95), min_size=k - 1, max_size=k - 1, unique=True)))
    b = [0.0, *cuts, 1.0]
    if min(np.diff(b)) < 0.02:
        b = list(np.linspace(0, 1, k + 1))
    signs = draw(st.lists(st.sampled_from([1.0, -1.0]), min_size=k, max_size=k))
    return piecewise_linear(b, [s / (hi - lo) for s, lo, hi in zip(signs, b, b[1:])])


@st.composite
def dyadic_holes(draw, N=64):
    a = draw(st.integers(0, N - 2))
    w = draw(st.integers(1, min(N // 2, N - a - 1)))
    return Hole(((a / N, (a + w) / N),))


@FAST
@given(full_branch_maps(), st.sampled_from([8, 32, 100]))
def test_ulam_columns_stochastic_for_pl_full_branch(fmap, N):
    pot = normalize(Potential.geometric(1.0), fmap)
    W = build_ulam(fmap, pot, N).W
    assert np.all(W.data >= 0)
    assert np.allclose(np.asarray(W.sum(axis=0)).ravel(), 1.0, atol=1e-12)


@FAST
@given(dyadic_holes(), dyadic_holes())
def test_escape_rate_monotone_in_hole(h1, h2):
    T = tent2()
    pot = normalize(Potential.geometric(1.0), T)
    lo = min(h1.intervals[0][0], h2.intervals[0][0])
    hi = max(h1.intervals[0][1], h2.intervals[0][1])
    if hi - lo >= 1.0:
        return
    big = Hole(((lo, hi),))
    r1 = escape_rate_spectral(T, pot, h1, 64)[0]
    rb = escape_rate_spectral(T, pot, big, 64)[0]
    assert r1 >= 0.0
    assert rb >= r1 - 1e-9


@FAST
@given(st.floats(0.01, 0.99), st.floats(1e-4, 0.2), st.sampled_from([16, 64, 100, 1024]))
def test_snap_lands_on_grid(z, eps, N):
    snapped, M = snap_hole(Hole.centered(z, eps), N)
    assert M % N == 0
    for a, b in snapped.intervals:
        for e in (a, b):
            if 0.0 < e < 1.0:
                assert abs(e * M - round(e * M)) < 1e-9


@FAST
@given(unit)
def test_preimages_map_back(y):
    for f in (tent2(), logistic4()):
        pre = preimages(f, y)
        assert 1 <= len(pre) <= 2
        assert np.allclose(f.apply(np.array(pre)), y, atol=1e-12)


@FAST
@given(unit)
def test_conjugacy_pointwise(x):
    g = conjugacy_logistic_tent()
    lhs = g.target.apply(np.array([g.forward(x)]))[0]
    rhs = g.forward(g.source.apply(np.array([x]))[0])
    assert abs(lhs - rhs) < 1e-12


@FAST
@given(st.lists(st.integers(0, 7), min_size=1, max_size=3, unique=True))
def test_variational_oracle_on_random_cylinder_unions(cells):
    T = tent2()
    holes = sorted((c / 8, (c + 1) / 8) for c in cells)
    merged = []
    for a, b in holes:
        if merged and merged[-1][1] == a:
            merged[-1] = (merged[-1][0], b)
        else:
            merged.append((a, b))
    rep = ex.variational_oracle(T, Potential.geometric(1.0), Hole(tuple(merged)))
    assert rep["difference"] < 1e-8


@FAST
@given(st.floats(-2, 2), st.floats(-5, 5), st.lists(st.floats(1e-3, 0.5), min_size=3, max_size=6, unique=True))
def test_richardson_exact_on_linear(c0, c1, eps):
    eps = sorted(eps, reverse=True)
    est, (lo, hi) = ex.richardson(eps, [c0 + c1 * e for e in eps])
    assert math.isclose(est, c0, abs_tol=1e-9)
    assert lo <= est <= hi


@FAST
@given(st.floats(0.05, 0.95), st.integers(1, 3))
def test_ratio_consistency(z, k):
    T = tent2()
    pot = normalize(Potential.geometric(1.0), T)
    s = ex.scaling_limit(T, pot, z, [2.0 ** -(4 + k), 2.0 ** -(5 + k)], 2 ** 10)
    for r in s.rows:
        if r.failed is None:
            assert r.rate == -math.log(r.lam)
