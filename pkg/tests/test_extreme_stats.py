import math

import numpy as np
import pytest

from bbmlab.bbm_engine import EngineConfig, simulate_single_type
from bbmlab.extreme_stats import (
    Ensemble,
    EstimatorError,
    Record,
    WindowSpec,
    build_ensemble,
    decoration_gaps,
    extract_record,
    first_moment_tail_ratio,
    fit_log_correction,
    gap_statistics,
    laplace_brute_force,
    laplace_shape,
    laplace_shape_factor,
    localization_fraction,
    max_quantiles,
    relative_points,
)
from bbmlab.phase_atlas import FAMILIES, SQRT2, ApproxFamily, Params, centering, derived_constants, make_approximation

STD = Params(1.0, 1.0)
H10 = math.log(2) / math.log(10)
B23 = ApproxFamily(Params(1.5, 0.5), "B23_plus", H10)

TARGETS = {
    "B13_plus": Params(2.0, 2.0 / 3.0),
    "B13_minus": Params(2.0, 2.0 / 3.0),
    "B23_plus": Params(1.5, 0.5),
    "B23_minus": Params(1.5, 0.5),
    "P11_f1": Params(1.0, 1.0),
    "P11_f2": Params(1.0, 1.0),
    "P11_f3": Params(1.0, 1.0),
}


def _ens(maxima, **kw):
    return Ensemble(10.0, STD, np.asarray(maxima, dtype=float), **kw)


# --- maximum ---------------------------------------------------------------------------


def test_max_quantiles():
    e = _ens(np.arange(1.0, 102.0))
    assert max_quantiles(e, [0.5]) == pytest.approx([51.0])
    with pytest.raises(EstimatorError):
        max_quantiles(e, [1.0])
    with pytest.raises(EstimatorError):
        _ens([])


def test_fit_recovers_exact_curve():
    ts = np.array([4.0, 8.0, 16.0, 32.0])
    y = SQRT2 * ts - 1.5 / SQRT2 * np.log(ts) + 0.3
    f = fit_log_correction(np.column_stack([ts, y]))
    assert (f.l, f.s, f.c) == pytest.approx((SQRT2, 1.5 / SQRT2, 0.3), abs=1e-10)
    assert f.residual < 1e-10 and not f.pinned
    g = fit_log_correction(np.column_stack([ts, y]), l_pinned=SQRT2)
    assert (g.s, g.c) == pytest.approx((1.5 / SQRT2, 0.3), abs=1e-10)
    assert g.pinned


def test_fit_invariances():
    rng = np.random.default_rng(0)
    ts = np.array([5.0, 7.0, 9.0, 11.0, 13.0])
    y = 1.4 * ts - 0.9 * np.log(ts) + rng.normal(0, 0.05, ts.size)
    base = fit_log_correction(np.column_stack([ts, y]))
    shifted = fit_log_correction(np.column_stack([ts, y + 2.0]))
    assert shifted.c == pytest.approx(base.c + 2.0, abs=1e-10)
    assert shifted.l == pytest.approx(base.l, abs=1e-10)
    perm = fit_log_correction(np.column_stack([ts, y])[::-1])
    assert perm.s == pytest.approx(base.s, abs=1e-10)


def test_fit_rejects_degenerate():
    with pytest.raises(EstimatorError):
        fit_log_correction([[1.0, 1.0], [1.0, 2.0], [2.0, 3.0]])
    with pytest.raises(EstimatorError):
        fit_log_correction([[1.0, 1.0], [1.0 + 1e-14, 1.0], [1.0 + 2e-14, 1.0]])
    with pytest.raises(EstimatorError):
        fit_log_correction([[1.0, 1.0, 1.0]])


def test_build_ensemble_checks_family():
    cfg = EngineConfig(Params(1.5, 0.5), 2.0, seed=1)
    with pytest.raises(EstimatorError):
        build_ensemble(cfg, 2, family=B23)
    good = EngineConfig(make_approximation(B23, 2.0), 2.0, seed=1)
    e = build_ensemble(good, 5, family=B23)
    assert e.size == 5 and len(e.records) == 5
    for m, r in zip(e.maxima, e.records):
        assert r.positions.max() == m
        assert r.floor == m - e.a_keep
    bare = build_ensemble(good, 5, a_keep=None)
    assert bare.records == () and np.array_equal(bare.maxima, e.maxima)


def test_extract_record_floor():
    s = simulate_single_type(STD, 3.0, seed=2)
    r = extract_record(s, a_keep=1.0, floor=s.maximum - 5.0)
    assert r.floor == s.maximum - 5.0
    assert np.array_equal(np.sort(r.positions), np.sort(s.positions[s.positions >= s.maximum - 5.0]))


# --- windows ----------------------------------------------------------------------------


def test_window_boundary_b13_minus():
    f = ApproxFamily(TARGETS["B13_minus"], "B13_minus", 0.3)
    t, R = 1e4, 3.0
    k = derived_constants(make_approximation(f, t))
    w = WindowSpec(f, R)
    for ts in (R * t**0.3, t**0.3 / R):
        s = t - ts
        x = k.v * s - (k.theta - k.v) * ts
        assert w.contains(s, x, t)
    ts = R * t**0.3 * (1 + 1e-9)
    s = t - ts
    assert not w.contains(s, k.v * s - (k.theta - k.v) * ts, t)


def test_window_boundary_b23_plus():
    t, R = 10.0, 2.0
    k = derived_constants(make_approximation(B23, t))
    w = WindowSpec(B23, R)
    s = k.p_star * t + R * math.sqrt(t)
    assert w.contains(s, k.a_star * s, t)
    s2 = k.p_star * t + R * math.sqrt(t) * (1 + 1e-9)
    assert not w.contains(s2, k.a_star * s2, t)
    s = k.p_star * t
    assert w.contains(s, k.a_star * s + R * math.sqrt(s), t)
    assert not w.contains(s, k.a_star * s + R * math.sqrt(s) * (1 + 1e-9), t)


@pytest.mark.parametrize("fam", FAMILIES)
def test_windows_nest_in_R(fam):
    f = ApproxFamily(TARGETS[fam], fam, 0.4)
    t = 100.0
    rng = np.random.default_rng(11)
    s = rng.uniform(0, t, 10_000)
    x = rng.uniform(0, 2.5 * t, 10_000) * rng.uniform(0, 1, 10_000) ** 0.2
    small = WindowSpec(f, 2.0).contains(s, x, t)
    big = WindowSpec(f, 8.0).contains(s, x, t)
    assert np.all(big[small])


def test_window_rejects_small_R():
    with pytest.raises(EstimatorError):
        WindowSpec(B23, 1.0)


def _synthetic(points, level):
    recs = []
    for s, x in points:
        recs.append(Record(level - 1, np.array([level + 0.5]), np.array([2]), np.array([s]), np.array([x])))
    return Ensemble(10.0, make_approximation(B23, 10.0), np.full(len(recs), level + 0.5), B23, tuple(recs))


def test_localization_fraction_synthetic():
    t = 10.0
    k = derived_constants(make_approximation(B23, t))
    level = centering(B23, t).value(t) - 2.0
    inside = (k.p_star * t, k.a_star * k.p_star * t)
    far = (k.p_star * t + 10 * math.sqrt(t), 0.0)
    e = _synthetic([inside, inside, far, inside], level)
    assert localization_fraction(e, WindowSpec(B23, 2.0), 2.0) == 0.25
    # a huge window contains every finite point
    assert localization_fraction(e, WindowSpec(B23, 1e6), 2.0) == 0.0
    # nobody reaches the level when A is very negative
    assert localization_fraction(e, WindowSpec(B23, 2.0), -100.0) == 0.0


def test_localization_fraction_errors():
    t = 10.0
    level = centering(B23, t).value(t) - 2.0
    e = _synthetic([(5.0, 5.0)], level)
    with pytest.raises(EstimatorError):
        localization_fraction(e, WindowSpec(ApproxFamily(Params(1.5, 0.5), "B23_minus", H10), 2.0), 2.0)
    with pytest.raises(EstimatorError):
        localization_fraction(e, WindowSpec(B23, 2.0), 20.0)  # records cut above the level


# --- decoration ---------------------------------------------------------------------------


def test_relative_points():
    r = relative_points(np.array([3.0, 1.0, -10.0, 2.5]), a_keep=8.0)
    assert np.array_equal(r, [0.0, -0.5, -2.0])
    assert np.all(r <= 0) and r[0] == 0.0
    assert np.array_equal(relative_points(np.array([3.0, 1.0, 2.5]) + 7.25), r)


def test_gap_statistics():
    edges, hist, first = gap_statistics([np.array([0.0, -0.5, -2.0]), np.array([0.0])], a_keep=2.0, bins=4)
    assert np.array_equal(first, [0.5])
    assert hist.sum() == pytest.approx(1.0)
    assert hist[1] == 0.5 and hist[3] == 0.5


def test_decoration_small_run():
    d = decoration_gaps(STD, 4.0, SQRT2, 300, seed=1)
    assert 0 < d.n_accepted <= 300
    for p in d.samples:
        assert p[0] == 0.0 and np.all(p <= 0) and np.all(np.diff(p) <= 0)
    with pytest.raises(EstimatorError):
        decoration_gaps(STD, 4.0, 1.0, 10)


def test_first_moment_tail_ratio():
    assert first_moment_tail_ratio(6.0, 8.0) == pytest.approx(math.log(8) / math.log(6) * 0.75**1.5)
    assert first_moment_tail_ratio(5.0, 5.0) == 1.0


# --- Laplace ---------------------------------------------------------------------------------


def test_laplace_trivial_cases():
    xs = np.array([-1.0, 0.0, 1.0])
    z = laplace_shape(STD, 4.0, xs, -math.inf, 1.6, 10)
    assert np.all(z.phi == 0.0)
    t0 = laplace_shape(STD, 0.0, xs, 0.0, 1.6, 10)
    assert np.allclose(t0.phi, [0.0, 1 - math.exp(-1), 1 - math.exp(-1)])


def test_laplace_strip_check():
    with pytest.raises(EstimatorError):
        laplace_shape(STD, 4.0, [-10.0], 0.0, 1.6, 10)
    with pytest.raises(EstimatorError):
        laplace_shape(STD, 16.0, [0.0], 0.0, SQRT2, 10)  # critical tilt needs x <= -t^eps


def test_laplace_shape_factor():
    assert laplace_shape_factor([0.0], 4.0, 1.6)[0] == 1.0
    assert laplace_shape_factor([-2.0], 4.0, SQRT2)[0] == pytest.approx(2 * math.exp(-2 * SQRT2 - 0.5))


def test_laplace_tilted_matches_brute_force():
    xs = np.array([-1.0, 0.0, 1.0])
    est = laplace_shape(STD, 4.0, xs, 0.0, 1.6, 4000, seed=3)
    ref, rse = laplace_brute_force(STD, 4.0, xs, 0.0, 1.6, 20_000, seed=4)
    assert np.all(np.abs(est.phi - ref) < 4 * np.hypot(est.se, rse))


def test_depth_first_ensemble_matches_slice_ensemble():
    cfg = EngineConfig(make_approximation(B23, 3.0), 3.0, seed=9)
    level = 2.0
    a = build_ensemble(cfg, 6, B23, floor=level)
    b = build_ensemble(cfg, 6, B23, floor=level, depth_first=True)
    assert np.array_equal(a.maxima, b.maxima)
    for ra, rb in zip(a.records, b.records):
        assert rb.floor == level
        keep = ra.positions >= level
        assert np.array_equal(np.sort(ra.positions[keep]), np.sort(rb.positions))
    with pytest.raises(EstimatorError):
        build_ensemble(cfg, 2, B23, depth_first=True)
