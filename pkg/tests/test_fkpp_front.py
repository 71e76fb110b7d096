import math

import numpy as np
import pytest

from bbmlab.fkpp_front import (
    PdeConfig,
    PdeError,
    PdeState,
    crossing,
    front_position,
    front_speed,
    solve_coupled,
    speed_bound,
    traveling_wave_residual,
)
from bbmlab.phase_atlas import SQRT2, Params


def test_crossing_examples():
    x = np.array([0.0, 1.0, 2.0, 3.0])
    assert crossing(x, np.array([1.0, 1.0, 0.0, 0.0])) == pytest.approx(1.5)
    assert crossing(x, np.array([1.0, 0.75, 0.25, 0.0])) == pytest.approx(1.5)
    assert crossing(x, np.array([1.0, 0.0, 1.0, 0.0]), 0.5) == pytest.approx(2.5)
    assert math.isnan(crossing(x, np.zeros(4)))
    with pytest.raises(PdeError):
        front_position(PdeState(0.0, x, np.ones(4), np.ones(4)))
    with pytest.raises(ValueError):
        front_position(PdeState(0.0, x, np.ones(4), np.ones(4)), "w")


def test_config_validation():
    p = Params(2.0, 0.5)
    with pytest.raises(ValueError):
        PdeConfig(p, -30.0, 200.0, 0.1, 0.01, 10.0)  # dt above 0.4 dx^2
    with pytest.raises(ValueError):
        PdeConfig(p, -30.0, 20.0, 0.1, 0.004, 10.0)  # domain too short
    cfg = PdeConfig.default(p, 10.0)
    assert cfg.x_hi >= 1.2 * speed_bound(p) * 10 + 20
    assert cfg.dt == pytest.approx(0.4 * 0.01)
    with pytest.raises(ValueError):
        PdeConfig.default(p, 5.0, f=2.0)


@pytest.mark.parametrize("uv", [(0.0, 0.0), (1.0, 1.0), (0.0, 1.0)])
def test_constant_fixed_points(uv):
    cfg = PdeConfig.default(Params(2.0, 0.5), 2.0, f=uv[0], g=uv[1])
    s = solve_coupled(cfg, record_dt=0.5)
    assert np.all(s.final.u == uv[0]) and np.all(s.final.v == uv[1])


def test_v_alone_is_bit_identical():
    cfg = PdeConfig.default(Params(2.0, 0.5), 5.0)
    a = solve_coupled(cfg, record_dt=0.5)
    b = solve_coupled(cfg, record_dt=0.5, coupled=False)
    assert np.array_equal(a.final.v, b.final.v)
    assert np.array_equal(a.front_v, b.front_v)
    u0, _ = cfg.initial()
    assert np.array_equal(b.final.u, u0)


def test_comparison_principle():
    p = Params(2.0, 0.5)
    lo = PdeConfig.default(p, 8.0, ramp=2.0)
    hi = PdeConfig.default(p, 8.0, f=lambda y: np.clip((y + 4.0) / 4.0, 0, 1), g=lambda y: np.clip((y + 4.0) / 4.0, 0, 1))
    a, b = solve_coupled(lo, record_dt=1.0), solve_coupled(hi, record_dt=1.0)
    assert np.all(b.final.u >= a.final.u) and np.all(b.final.v >= a.final.v)


def test_fields_stay_in_unit_interval_and_fronts_advance():
    s = solve_coupled(PdeConfig.default(Params(2.0, 1.0), 10.0), record_dt=1.0)
    for f in (s.final.u, s.final.v):
        assert f.min() >= 0 and f.max() <= 1
    assert np.all(np.diff(s.front_u) > 0)


def test_speed_window_needs_samples():
    with pytest.raises(ValueError):
        front_speed(np.arange(5.0), np.arange(5.0), (0, 10))
    assert front_speed(np.arange(20.0), 1.5 * np.arange(20.0) + 3, (0, 20)) == pytest.approx(1.5)


@pytest.mark.slow
def test_v_front_speed_sqrt2():
    s = solve_coupled(PdeConfig.default(Params(0.5, 0.5), 40.0), coupled=False)
    assert front_speed(s.times, s.front_v, (20.0, 40.0)) == pytest.approx(SQRT2, rel=0.03)


@pytest.mark.slow
@pytest.mark.parametrize("params,speed", [((2.0, 0.5), 1.5), ((2.0, 1.0), 2.0), ((0.5, 0.5), SQRT2)])
def test_u_front_speeds(params, speed):
    s = solve_coupled(PdeConfig.default(Params(*params), 60.0))
    assert front_speed(s.times, s.front_u, (30.0, 60.0)) == pytest.approx(speed, rel=0.03)


@pytest.mark.slow
def test_wave_residual_within_budget():
    s = solve_coupled(PdeConfig.default(Params(2.0, 0.5), 60.0, dx=0.05), dump_every=10)
    w = traveling_wave_residual(s)
    assert w.l2 < w.budget
    assert w.align_gap < 0.05
    with pytest.raises(ValueError):
        traveling_wave_residual(solve_coupled(PdeConfig.default(Params(2.0, 0.5), 2.0)))
