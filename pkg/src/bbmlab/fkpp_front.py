"""Explicit finite differences for the coupled F-KPP pair

    u_s = (sigma2/2) u'' - beta u (1 - u) - u (1 - v)
    v_s = (1/2) v''      - v (1 - v)

with zero-flux boundaries and front tracking.

The grid coordinate is y = -x, so the stable state 0 invades to the
right and fronts move toward +y. Default initial data is the reflected
ramp: 0 for y <= -A, 1 for y >= A, linear in between. Front positions
are those of 1 - u (or 1 - v) at the chosen level.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numba import njit

from bbmlab.phase_atlas import SQRT2, Params, derived_constants

SAFETY = 0.4
OVERSHOOT_TOL = 1e-12


class PdeError(RuntimeError):
    pass


def speed_bound(p: Params) -> float:
    k = derived_constants(p)
    vmax = max(k.v, SQRT2)
    if k.has_star:
        vmax = max(vmax, k.v_star)
    return vmax


Initial = float | Callable[[np.ndarray], np.ndarray] | None


@dataclass(frozen=True)
class PdeConfig:
    params: Params
    x_lo: float
    x_hi: float
    dx: float
    dt: float
    horizon: float
    ramp: float = 2.0
    f: Initial = None  # u(0, .) in the grid coordinate; None = ramp
    g: Initial = None  # v(0, .)

    def __post_init__(self):
        if not (self.dx > 0 and self.dt > 0 and self.horizon >= 0):
            raise ValueError("dx, dt must be positive and horizon nonnegative")
        lim = SAFETY * self.dx**2 / max(self.params.sigma2, 1.0)
        if self.dt > lim * (1 + 1e-12):
            raise ValueError(f"dt = {self.dt} exceeds the stability limit {lim}")
        need = 1.2 * speed_bound(self.params) * self.horizon + 20.0
        if self.x_hi < need:
            raise ValueError(f"x_hi = {self.x_hi} too small; need >= {need:.6g}")
        if not self.x_lo < -self.ramp:
            raise ValueError("x_lo must lie left of the initial ramp")
        self.initial()  # rejects out-of-range initial data up front

    @classmethod
    def default(cls, params: Params, horizon: float, dx: float = 0.1, behind: float = 30.0, **kw):
        """Domain and time step from the stability and width rules."""
        dt = SAFETY * dx * dx / max(params.sigma2, 1.0)
        hi = 1.2 * speed_bound(params) * horizon + 20.0
        hi = dx * math.ceil(hi / dx)
        return cls(params, -behind, hi, dx, dt, horizon, **kw)

    def grid(self) -> np.ndarray:
        n = int(round((self.x_hi - self.x_lo) / self.dx)) + 1
        return self.x_lo + self.dx * np.arange(n)

    def initial(self) -> tuple[np.ndarray, np.ndarray]:
        y = self.grid()
        return _init(self.f, y, self.ramp), _init(self.g, y, self.ramp)


def _init(spec: Initial, y: np.ndarray, ramp: float) -> np.ndarray:
    if spec is None:
        return np.clip((y + ramp) / (2.0 * ramp), 0.0, 1.0)
    if callable(spec):
        out = np.asarray(spec(y), dtype=float)
    else:
        out = np.full_like(y, float(spec))
    if out.shape != y.shape or np.any((out < 0) | (out > 1)):
        raise ValueError("initial data must take values in [0, 1] on the grid")
    return out.copy()


@njit(cache=True)
def _advance(u, v, n_steps, du, dv, dt, beta, coupled):
    """n explicit steps; du, dv are D/dx^2. Returns max overshoot seen."""
    n = u.shape[0]
    un = np.empty_like(u)
    vn = np.empty_like(v)
    worst = 0.0
    for _ in range(n_steps):
        for i in range(n):
            l = i - 1 if i > 0 else 1
            r = i + 1 if i < n - 1 else n - 2
            vi = v[i]
            vn[i] = vi + dt * (dv * (v[l] - 2.0 * vi + v[r]) - vi * (1.0 - vi))
            if coupled:
                ui = u[i]
                un[i] = ui + dt * (du * (u[l] - 2.0 * ui + u[r]) - beta * ui * (1.0 - ui) - ui * (1.0 - vi))
        for i in range(n):
            x = vn[i]
            if x < 0.0:
                worst = max(worst, -x)
                x = 0.0
            elif x > 1.0:
                worst = max(worst, x - 1.0)
                x = 1.0
            v[i] = x
            if coupled:
                x = un[i]
                if x < 0.0:
                    worst = max(worst, -x)
                    x = 0.0
                elif x > 1.0:
                    worst = max(worst, x - 1.0)
                    x = 1.0
                u[i] = x
    return worst


@dataclass(frozen=True)
class PdeState:
    s: float
    x: np.ndarray
    u: np.ndarray
    v: np.ndarray


@dataclass
class PdeSeries:
    cfg: PdeConfig
    times: np.ndarray
    front_u: np.ndarray
    front_v: np.ndarray
    mass_u: np.ndarray  # integral of 1 - u over the grid
    mass_v: np.ndarray
    final: PdeState
    dumps: list = field(default_factory=list)

    def rows(self):
        for k in range(len(self.times)):
            yield (self.times[k], self.front_u[k], self.front_v[k], self.mass_u[k], self.mass_v[k])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s", "front_u", "front_v", "mass_u", "mass_v"])
            for r in self.rows():
                w.writerow([repr(float(z)) for z in r])


def _tv(a: np.ndarray) -> float:
    return float(np.abs(np.diff(a)).sum())


def crossing(x: np.ndarray, w: np.ndarray, level: float = 0.5) -> float:
    """Rightmost down-crossing of ``level`` by w, linearly interpolated; NaN if none."""
    hi = w[:-1] >= level
    lo = w[1:] < level
    idx = np.nonzero(hi & lo)[0]
    if idx.size == 0:
        return math.nan
    i = idx[-1]
    return float(x[i] + (w[i] - level) / (w[i] - w[i + 1]) * (x[i + 1] - x[i]))


def front_position(state: PdeState, fld: str = "u", level: float = 0.5) -> float:
    """Front of 1 - fld at ``level``."""
    if fld not in ("u", "v"):
        raise ValueError("field must be 'u' or 'v'")
    arr = state.u if fld == "u" else state.v
    pos = crossing(state.x, 1.0 - arr, level)
    if math.isnan(pos):
        raise PdeError(f"no crossing of level {level} in field {fld}")
    return pos


def solve_coupled(
    cfg: PdeConfig,
    record_dt: float = 0.1,
    level: float = 0.5,
    dump_every: int | None = None,
    coupled: bool = True,
) -> PdeSeries:
    """Integrate to cfg.horizon, recording fronts every ``record_dt``.

    ``coupled=False`` evolves v alone (u is left at its initial value).
    ``dump_every`` keeps a copy of the fields every that many records.
    """
    x = cfg.grid()
    u, v = cfg.initial()
    p = cfg.params
    du = p.sigma2 / 2.0 / cfg.dx**2
    dv = 0.5 / cfg.dx**2
    per = max(1, int(round(record_dt / cfg.dt)))
    total = int(math.ceil(cfg.horizon / cfg.dt - 1e-9))
    tv0 = max(_tv(u), _tv(v), 1.0)

    times, fu, fv, mu, mv, dumps = [], [], [], [], [], []

    def record(step):
        s = step * cfg.dt
        times.append(s)
        fu.append(crossing(x, 1.0 - u, level))
        fv.append(crossing(x, 1.0 - v, level))
        mu.append(float(np.sum(1.0 - u) * cfg.dx))
        mv.append(float(np.sum(1.0 - v) * cfg.dx))
        if dump_every and (len(times) - 1) % dump_every == 0:
            dumps.append(PdeState(s, x, u.copy(), v.copy()))

    record(0)
    done = 0
    while done < total:
        k = min(per, total - done)
        worst = _advance(u, v, k, du, dv, cfg.dt, p.beta, coupled)
        done += k
        if worst > OVERSHOOT_TOL:
            raise PdeError(f"overshoot {worst:.3g} beyond [0,1] at s = {done * cfg.dt:.6g}")
        if _tv(u) > 10.0 * tv0 or _tv(v) > 10.0 * tv0:
            raise PdeError(f"total variation blew up at s = {done * cfg.dt:.6g}; scheme unstable")
        record(done)
    final = PdeState(done * cfg.dt, x, u.copy(), v.copy())
    return PdeSeries(cfg, np.array(times), np.array(fu), np.array(fv), np.array(mu), np.array(mv), final, dumps)


def front_speed(times, positions, window: tuple[float, float]) -> float:
    t = np.asarray(times, dtype=float)
    y = np.asarray(positions, dtype=float)
    m = (t >= window[0]) & (t <= window[1]) & np.isfinite(y)
    if m.sum() < 10:
        raise ValueError("speed window holds fewer than 10 samples")
    return float(np.polyfit(t[m], y[m], 1)[0])


@dataclass(frozen=True)
class WaveResidual:
    c: float
    l2: float  # sqrt(dx * sum r^2) over the front zone
    budget: float  # 10 dx^2
    align_gap: float  # sup difference between aligned profiles at the window ends


def traveling_wave_residual(
    series: PdeSeries, window: tuple[float, float] = (40.0, 60.0), half_width: float = 15.0
) -> WaveResidual:
    """Residual of the u-component wave equation for the late profile.

    The profile is read in the original orientation w1(x) = u(-x), for
    which the wave equation reads (sigma2/2) w1'' - c w1' - beta w1(1-w1)
    - w1(1-w2) = 0 with w2 the simultaneous v profile.
    """
    cfg = series.cfg
    if not series.dumps:
        raise ValueError("series carries no field dumps; rerun with dump_every")
    c = front_speed(series.times, series.front_u, window)
    a = min(series.dumps, key=lambda st: abs(st.s - window[0]))
    b = min(series.dumps, key=lambda st: abs(st.s - window[1]))
    fa = front_position(a, "u")
    fb = front_position(b, "u")
    z = np.linspace(-half_width, half_width, 301)
    pa = np.interp(z + fa, a.x, a.u)
    pb = np.interp(z + fb, b.x, b.u)
    gap = float(np.max(np.abs(pa - pb)))

    p = cfg.params
    dx = cfg.dx
    w1 = b.u[::-1]
    w2 = b.v[::-1]
    xo = -b.x[::-1]
    d1 = (w1[2:] - w1[:-2]) / (2 * dx)
    d2 = (w1[2:] - 2 * w1[1:-1] + w1[:-2]) / dx**2
    m = w1[1:-1]
    r = p.sigma2 / 2 * d2 - c * d1 - p.beta * m * (1 - m) - m * (1 - w2[1:-1])
    zone = np.abs(xo[1:-1] + fb) <= half_width
    l2 = float(math.sqrt(dx * np.sum(r[zone] ** 2)))
    return WaveResidual(c, l2, 10 * dx * dx, gap)
