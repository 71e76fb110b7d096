import math

import numpy as np
import pytest
from scipy import stats
from scipy.integrate import quad

from bbmlab.bbm_engine import EngineConfig, run_replications, simulate_single_type, simulate_two_type
from bbmlab.martingale_lab import (
    GibbsFunctionalSpec,
    PiecewiseLinear,
    additive_W,
    const,
    derivative_Z,
    derivative_Z_second_moment,
    gibbs_gaussian_functional,
    gibbs_mea_functional,
    mu_gau,
    mu_mea,
)
from bbmlab.phase_atlas import Params

STD = Params(1.0, 1.0)
BOX = PiecewiseLinear((-1.0, -1.0, 1.0, 1.0), (0.0, 1.0, 1.0, 0.0))
UNIT = PiecewiseLinear((0.0, 0.0, 1.0, 1.0), (0.0, 1.0, 1.0, 0.0))
TENT = PiecewiseLinear((-1.0, 0.0, 2.0), (0.0, 2.0, 0.0))


def _mea_spec():
    return GibbsFunctionalSpec(UNIT, lambda t: t**-0.25, lambda t: t**-0.25 / 2, critical=True)


def test_time_zero():
    s = simulate_single_type(STD, 0.0)
    assert additive_W(s, 0.7) == 1.0
    assert derivative_Z(s) == 0.0


def test_lambda_zero_counts():
    s = simulate_single_type(Params(2.0, 0.5), 2.0, seed=4)
    assert additive_W(s, 0.0) == pytest.approx(s.size * math.exp(-4.0), rel=1e-12)


def test_rejects_two_type():
    s = simulate_two_type(EngineConfig(Params(1.0, 1.0), 3.0, seed=2))
    assert np.any(s.types == 2)
    with pytest.raises(ValueError):
        derivative_Z(s)


def test_second_moment_formula():
    assert derivative_Z_second_moment(STD, 0.0) == 0.0
    assert derivative_Z_second_moment(STD, 4.0) == pytest.approx(4471.048302717828, rel=1e-12)
    b, s2, t = 2.0, 0.5, 3.0
    v2 = 2 * b * s2
    ref = math.exp(b * t) * (v2 * t * t + s2 * t)
    ref += quad(lambda u: 2 * b * math.exp(b * u) * (v2 * u * u + s2 * u), 0, t)[0]
    assert derivative_Z_second_moment(Params(b, s2), t) == pytest.approx(ref, rel=1e-12)


def test_second_moment_matches_sample_at_small_t():
    # the tail is light enough at t = 1/4 for a plain sample second moment
    t = 0.25
    z = np.array(run_replications(EngineConfig(STD, t, seed=7, two_type=False), 100_000, derivative_Z))
    assert abs(np.mean(z * z) / derivative_Z_second_moment(STD, t) - 1) < 0.05


def test_additive_positive_and_Z_both_signs():
    cfg = EngineConfig(STD, 1.0, seed=12, two_type=False)
    out = run_replications(cfg, 10_000, lambda s: (additive_W(s, 0.5), derivative_Z(s)))
    w = np.array([a for a, _ in out])
    z = np.array([b for _, b in out])
    assert np.all(w > 0)
    assert np.any(z > 0) and np.any(z < 0)


@pytest.mark.slow
def test_Z_mostly_positive_at_t10():
    z = np.array(run_replications(EngineConfig(STD, 10.0, seed=13, two_type=False), 400, derivative_Z))
    assert np.mean(z > 0) > 0.95


# --- profiles and companions ---------------------------------------------------------------


def test_piecewise_linear():
    assert np.array_equal(BOX(np.array([-2.0, -0.5, 0.5, 2.0])), [0.0, 1.0, 1.0, 0.0])
    assert TENT(np.array([-0.5, 1.0]))[0] == pytest.approx(1.0)
    assert TENT(np.array([1.0]))[0] == pytest.approx(1.0)
    assert TENT.sup_norm == 2.0
    with pytest.raises(ValueError):
        PiecewiseLinear((0.0, math.inf), (1.0, 1.0))
    with pytest.raises(ValueError):
        PiecewiseLinear((1.0, 0.0), (1.0, 1.0))


def test_spec_validation():
    with pytest.raises(ValueError):
        GibbsFunctionalSpec(BOX, const(0.0), const(1.0))
    with pytest.raises(ValueError):
        GibbsFunctionalSpec(BOX, const(0.0), const(1.0), lam=1.0, critical=True)
    sp = GibbsFunctionalSpec(BOX, const(0.0), const(0.0), lam=1.0)
    with pytest.raises(ValueError):
        sp.F([0.0], 1.0)
    a = GibbsFunctionalSpec(BOX, const(0.0), const(1.0), alpha=lambda t: t**0.25)
    assert a.lam_t(16.0) == pytest.approx(math.sqrt(2) / 2)


def test_mu_gau_box():
    sp = GibbsFunctionalSpec(BOX, const(0.0), const(1.0), lam=1.0)
    assert mu_gau(sp, 5.0) == pytest.approx(0.6826894921370859, abs=1e-12)


@pytest.mark.parametrize("G", [BOX, UNIT, TENT])
@pytest.mark.parametrize("hsign", [1.0, -1.0])
def test_companions_match_quadrature(G, hsign):
    sp = GibbsFunctionalSpec(G, const(0.3), const(0.7 * hsign), lam=1.0)
    t = 4.0
    pts = sorted({0.3 + 0.7 * hsign * y for y in G.z} | {0.0})
    lo, hi = pts[0], pts[-1]
    g = quad(lambda z: sp.F([z], t)[0] * math.exp(-z * z / 2) / math.sqrt(2 * math.pi), lo, hi, points=pts)[0]
    m = quad(lambda z: sp.F([z], t)[0] * z * math.exp(-z * z / 2), max(lo, 0.0), max(hi, 0.0), points=pts)[0]
    assert mu_gau(sp, t) == pytest.approx(g, abs=1e-9)
    assert mu_mea(sp, t) == pytest.approx(m, abs=1e-9)
    assert mu_gau(sp, t) >= 0 and mu_mea(sp, t) >= 0


def test_mu_mea_closed_form():
    t = 10.0
    sp = _mea_spec()
    a = t**-0.25
    b = a + a / 2
    assert mu_mea(sp, t) == pytest.approx(math.exp(-a * a / 2) - math.exp(-b * b / 2), abs=1e-14)


def test_companions_linear_in_G():
    for c in (0.5, 3.0):
        sp = GibbsFunctionalSpec(TENT, const(0.2), const(1.3), lam=1.0)
        sc = GibbsFunctionalSpec(TENT.scaled(c), const(0.2), const(1.3), lam=1.0)
        assert mu_gau(sc, 2.0) == pytest.approx(c * mu_gau(sp, 2.0), rel=1e-12)
        assert mu_mea(sc, 2.0) == pytest.approx(c * mu_mea(sp, 2.0), rel=1e-12)


def test_zero_profile_gives_zero():
    zero = PiecewiseLinear((0.0, 1.0), (0.0, 0.0))
    sp = GibbsFunctionalSpec(zero, const(0.0), const(1.0), critical=True)
    s = simulate_single_type(STD, 3.0, seed=1)
    assert gibbs_mea_functional(s, sp) == 0.0
    assert mu_mea(sp, 3.0) == 0.0


def test_gaussian_functional_huge_support():
    wide = PiecewiseLinear((-1e6, 1e6), (1.0, 1.0))
    sp = GibbsFunctionalSpec(wide, const(0.0), const(1.0), lam=0.0)
    s = simulate_single_type(STD, 3.0, seed=2)
    assert gibbs_gaussian_functional(s, sp) == pytest.approx(s.size * math.exp(-3.0), rel=1e-12)


def test_functional_bounded_by_W():
    sp = GibbsFunctionalSpec(TENT, const(0.1), const(0.8), lam=1.0)
    for seed in range(20):
        s = simulate_single_type(STD, 4.0, seed=seed)
        assert gibbs_gaussian_functional(s, sp) <= TENT.sup_norm * additive_W(s, 1.0) * (1 + 1e-12)


def test_functional_needs_standard_params():
    s = simulate_single_type(Params(2.0, 0.5), 2.0, seed=1)
    with pytest.raises(ValueError):
        gibbs_gaussian_functional(s, GibbsFunctionalSpec(BOX, const(0.0), const(1.0), lam=1.0))


@pytest.mark.slow
def test_gibbs_gaussian_ratio_tightens():
    sp = GibbsFunctionalSpec(BOX, const(0.0), const(1.0), lam=1.0)
    devs = []
    for t, seed in ((6.0, 21), (10.0, 22)):
        cfg = EngineConfig(STD, t, seed=seed, two_type=False)
        r = np.array(run_replications(cfg, 300, lambda s: gibbs_gaussian_functional(s, sp) / additive_W(s, 1.0)))
        med = np.median(r / mu_gau(sp, t))
        assert 0.5 <= med <= 2.0
        devs.append(abs(med - 1))
    assert devs[1] < devs[0]


@pytest.mark.slow
def test_gibbs_mea_correlates_with_Z():
    t = 10.0
    sp = _mea_spec()
    mu = mu_mea(sp, t)
    cfg = EngineConfig(STD, t, seed=23, two_type=False)
    out = np.array(
        run_replications(cfg, 2000, lambda s: (math.sqrt(t) * gibbs_mea_functional(s, sp) / mu, derivative_Z(s)))
    )
    # rank correlation: rare particles far ahead of sqrt2 t give Z_t values
    # near -1e3 that swamp a Pearson coefficient
    corr = stats.spearmanr(out[:, 0], math.sqrt(2 / math.pi) * out[:, 1])[0]
    assert corr > 0.5
