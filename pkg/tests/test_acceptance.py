"""Acceptance criteria, one test per criterion (criterion 6 is split in two).

Every test prints a single ``CRITERION <n> PASS|FAIL`` line with the measured
quantities, whatever the outcome, and then asserts at the stated tolerance.
"""

import json
import math
import time
import warnings
from pathlib import Path

import numpy as np
import pytest

from openmaps import experiments as ex
from openmaps import hofbauer as hb
from openmaps.maps import logistic4, tent2
from openmaps.openmap import Hole
from openmaps.potentials import Potential, normalize
from openmaps.ulam import accim_density, conditional_evolve, escape_rate_spectral

EPS_LIST = [2.0 ** -k for k in range(6, 13)]
N_BASE = 2 ** 14
ORACLE = json.loads((Path(__file__).parent / "data" / "staircase_oracle.json").read_text())


@pytest.fixture
def report(capsys):
    def emit(label, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {label} {'PASS' if ok else 'FAIL'} {detail}")
    return emit


@pytest.fixture(scope="module")
def T():
    return tent2()


@pytest.fixture(scope="module")
def F():
    return logistic4()


@pytest.fixture(scope="module")
def potT(T):
    return normalize(Potential.geometric(1.0), T)


@pytest.fixture(scope="module")
def potF(F):
    return normalize(Potential.geometric(1.0), F)


def test_criterion_1_counterexample(report):
    t0 = time.perf_counter()
    rep = ex.counterexample_ex(N_BASE, EPS_LIST)
    dt = time.perf_counter() - t0
    lo, hi = rep["logistic_interval"]
    ok = abs(rep["logistic_limit"] - 0.5) <= 0.05 and not (lo <= 0.75 <= hi) and dt <= 300
    report(1, ok, f"logistic limit {rep['logistic_limit']:.4f} (target 0.50 +- 0.05), interval [{lo:.4f}, {hi:.4f}] "
                  f"excludes 0.75: {not (lo <= 0.75 <= hi)}, tent limit {rep['tent_limit']:.4f}, {dt:.1f} s")
    assert abs(rep["logistic_limit"] - 0.5) <= 0.05
    assert not (lo <= 0.75 <= hi)
    assert dt <= 300


@pytest.mark.parametrize("name,z,target,tol", [("tent2", 2 / 3, 0.5, 0.05), ("tent2", 0.4, 0.75, 0.05),
                                               ("logistic4", 0.75, 0.5, 0.08)])
def test_criterion_2_periodic(report, T, F, potT, potF, name, z, target, tol):
    fmap, pot = (T, potT) if name == "tent2" else (F, potF)
    t0 = time.perf_counter()
    s = ex.scaling_limit(fmap, pot, z, EPS_LIST, N_BASE)
    dt = time.perf_counter() - t0
    ok = abs(s.extrapolated_limit - target) <= tol and dt <= 300
    report(f"2[{name} z={z:.4f}]", ok, f"extrapolated {s.extrapolated_limit:.4f}, predicted {s.predicted_limit:.4f}, "
                                       f"target {target} +- {tol}, {dt:.1f} s")
    assert abs(s.predicted_limit - target) < 1e-12
    assert abs(s.extrapolated_limit - target) <= tol
    assert dt <= 300


def test_criterion_3_aperiodic(report, T):
    pot = normalize(Potential.constant(0.0), T)
    z = 1 / math.sqrt(2)
    s = ex.scaling_limit(T, pot, z, EPS_LIST, N_BASE)
    ok = abs(s.extrapolated_limit - 1.0) <= 0.07 and s.provenance == "aperiodic"
    report(3, ok, f"extrapolated {s.extrapolated_limit:.4f} (target 1.00 +- 0.07), "
                  f"interval [{s.extrapolation_interval[0]:.4f}, {s.extrapolation_interval[1]:.4f}]")
    assert s.predicted_limit == 1.0
    assert abs(s.extrapolated_limit - 1.0) <= 0.07


def test_criterion_4_markov_oracle(report, T):
    t0 = time.perf_counter()
    pot = Potential.geometric(1.0)
    worst_rate, worst_var, count = 0.0, 0.0, 0
    for k in range(1, 5):
        for hole in ex.markov_holes(k, 3):
            rep = ex.variational_oracle(T, pot, hole)
            lu, lm = rep["log_lambda_ulam"], rep["log_lambda_matrix"]
            rate_diff = 0.0 if (math.isinf(lu) and math.isinf(lm)) else abs(-lu - (-lm))
            worst_rate = max(worst_rate, rate_diff)
            worst_var = max(worst_var, rep["difference"])
            count += 1
    dt = time.perf_counter() - t0
    ok = worst_rate < 1e-6 and worst_var < 1e-8 and dt <= 120
    report(4, ok, f"{count} holes, max |rate diff| {worst_rate:.2e} (< 1e-6), "
                  f"max variational diff {worst_var:.2e} (< 1e-8), {dt:.1f} s")
    assert worst_rate < 1e-6 and worst_var < 1e-8 and dt <= 120


def test_criterion_5_accim(report, T, potT):
    hole = Hole(((0.0, 0.25),))
    rate, res, op = escape_rate_spectral(T, potT, hole, 1024)
    g = accim_density(res, op)
    ev = conditional_evolve(op, np.ones(op.N), 60, g)
    hit = np.nonzero(ev.distances < 1e-8)[0]
    first = int(hit[0]) if hit.size else None
    positive = bool(np.all(g[~op.hole_mask] > 0))
    ok = res.residual < 1e-9 and positive and first is not None and first <= 60 and ev.theta < 1
    report(5, ok, f"residual {res.residual:.1e}, min g off hole {g[~op.hole_mask].min():.4f}, "
                  f"L1 distance < 1e-8 at step {first}, theta_hat {ev.theta:.4f}")
    assert res.residual < 1e-9
    assert positive
    assert first is not None and first <= 60
    assert ev.theta < 1


@pytest.fixture(scope="module")
def staircase(T, potT):
    g = ORACLE["eps_grid"]
    grid = np.geomspace(g["lo"], g["hi"], g["n"])
    return ex.devil_staircase(T, potT, ORACLE["z"], grid, ORACLE["N"], ORACLE["tol"])


def test_criterion_6a_staircase_threshold(report, staircase):
    s = staircase
    ok = s.monotone and s.plateau_fraction >= ORACLE["plateau_threshold"] and not s.failures
    report("6a", ok, f"monotone {s.monotone}, plateau_fraction {s.plateau_fraction:.3f} "
                     f">= committed threshold {ORACLE['plateau_threshold']}, {len(s.plateaus)} plateaus")
    assert s.monotone and not s.failures
    assert s.plateau_fraction >= ORACLE["plateau_threshold"]


def test_criterion_6b_staircase_majority(report, staircase):
    s = staircase
    ok = len(s.plateaus) > 0 and s.plateau_fraction > 0.5
    report("6b", ok, f"plateaus {len(s.plateaus)}, plateau_fraction {s.plateau_fraction:.3f} (> 0.5 required), "
                     f"runs spanning distinct holes {s.nontrivial_plateau_fraction:.3f}")
    assert len(s.plateaus) > 0
    assert s.plateau_fraction > 0.5


MARKOV_INSTANCES = [("logistic4", 0.75, None), ("tent2", 2 / 3, None), ("tent2", 0.4, None),
                    ("logistic4", 0.3, None), ("logistic4", 0.3, 0.01), ("tent2", 0.3, 0.01),
                    ("logistic4", 0.05, 0.02), ("logistic4", 0.6, 0.05)]


def test_criterion_7_hofbauer(report, T, F):
    t0 = time.perf_counter()
    maps = {"tent2": T, "logistic4": F}
    semi_fail = 0
    total, violations, worst_book = 0, 0, 0.0
    for name, z, eps0 in MARKOV_INSTANCES:
        fmap = maps[name]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            cuts = hb.make_cutset(fmap, z, eps0, L=1 if eps0 else None)
        ext = hb.build_extension(fmap, cuts, 5)
        semi_fail += hb.check_semiconjugacy(ext, 10_000, seed=0)["failures"]
        comp = hb.transitive_component(ext)
        s = hb.first_return_scheme(comp, hb.trim(comp, 1), 20, strict=False)
        total += len(s.cylinders)
        violations += len(s.violations)
        worst_book = max(worst_book, abs(sum(c.hi - c.lo for c in s.cylinders) + s.uncovered_mass - s.total_length))
    single = hb.build_extension(T, hb.make_cutset(T), 5)
    semi_fail += hb.check_semiconjugacy(single, 10_000, seed=0)["failures"]
    Y = hb.trim(single, 2)
    full = hb.first_return_scheme(single, Y, 20, mode="full")
    tail = hb.fit_tail(full, 5, 20)
    first = hb.first_return_scheme(single, Y, 20, mode="first", strict=False)
    dt = time.perf_counter() - t0
    ok = (semi_fail == 0 and violations == 0 and not full.violations and tail["alpha"] > 0 and tail["r2"] > 0.95
          and dt <= 60)
    report(7, ok, f"semiconjugacy failures {semi_fail}; Markov compliance {total - violations}/{total} cylinders on "
                  f"{len(MARKOV_INSTANCES)} L=1 instances (bookkeeping {worst_book:.1e}); tent2 single-domain L=2 "
                  f"full-branch scheme {len(full.cylinders)} cylinders, 0 violations required, got "
                  f"{len(full.violations)}; tail alpha {tail['alpha']:.4f} r2 {tail['r2']:.4f}; {dt:.1f} s. "
                  f"[note: literal first-return map at L=2 is not Markov: "
                  f"{len(first.violations)}/{len(first.cylinders)} cylinders, see README]")
    assert semi_fail == 0
    assert violations == 0 and worst_book < 1e-10
    assert not full.violations
    assert tail["alpha"] > 0 and tail["r2"] > 0.95
    assert dt <= 60


@pytest.mark.parametrize("name,z", [("logistic4", 0.0), ("tent2", 2 / 3), ("tent2", 0.4), ("logistic4", 0.75)])
def test_criterion_8_mc_vs_spectral(report, T, F, potT, potF, name, z):
    fmap, pot = (T, potT) if name == "tent2" else (F, potF)
    rep = ex.mc_spectral_agreement(fmap, pot, Hole.centered(z, EPS_LIST[0]), N_BASE, n_samples=10 ** 6, seed=0)
    report(f"8[{name} z={z:.4f}]", rep["pass"],
           f"spectral {rep['spectral']:.6f}, MC {rep['monte_carlo']:.6f} +- {rep['stderr']:.6f}, "
           f"z-score {rep['z']:.2f} (|z| <= 3), {rep['n_steps']} steps")
    assert rep["pass"]
