"""Exact event-driven simulation of single- and two-type BBM.

Each particle is expanded depth first: draw its next event time from its
own exponential clock, move it by an exact Gaussian increment, then
either split, emit a type-2 child, or stop at the end of the current
time slice. Positions are exact at event times and at the horizon.

Pruning, when enabled, splits the horizon into slices of length
``check_interval``; after each slice every particle more than ``depth``
below the current maximum is dropped together with its future subtree.
Without pruning the whole horizon is a single slice.
"""

from __future__ import annotations

import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numba import njit

from bbmlab.phase_atlas import Params
from bbmlab.rng import (
    SALT_LEFT,
    SALT_RIGHT,
    SALT_TYPE2,
    child_key,
    gauss,
    replication_key,
    uniform,
)

DEFAULT_MAX_EVENTS = 50_000_000
DEFAULT_CHECK_INTERVAL = 0.1

STATUS_OK = 0
STATUS_CAP = 1
STATUS_NONFINITE = 2


class EngineError(RuntimeError):
    pass


@dataclass(frozen=True)
class EngineConfig:
    params: Params
    horizon: float
    seed: int = 0
    two_type: bool = True
    prune_depth: float | None = None
    check_interval: float = DEFAULT_CHECK_INTERVAL
    max_population: int = DEFAULT_MAX_EVENTS
    # speed of the line X - env_speed*s whose running maximum is tracked
    env_speed: float | None = None
    # times in (0, horizon] at which the population maximum is also recorded
    record_times: tuple = ()

    def __post_init__(self):
        if not (self.horizon >= 0 and math.isfinite(self.horizon)):
            raise ValueError(f"horizon must be finite and >= 0, got {self.horizon!r}")
        if self.prune_depth is not None and not (self.prune_depth > 0):
            raise ValueError(f"pruning depth must be > 0, got {self.prune_depth!r}")
        if not (self.check_interval > 0):
            raise ValueError("check_interval must be > 0")
        if self.max_population < 1:
            raise ValueError("max_population must be >= 1")
        rt = tuple(float(x) for x in self.record_times)
        if any(not (0 <= x <= self.horizon) for x in rt) or list(rt) != sorted(rt):
            raise ValueError("record_times must be sorted and lie in [0, horizon]")
        object.__setattr__(self, "record_times", rt)


@dataclass(frozen=True)
class Snapshot:
    horizon: float
    params: Params
    positions: np.ndarray
    types: np.ndarray
    transform_time: np.ndarray  # NaN for type-1 particles
    transform_pos: np.ndarray
    env_max: np.ndarray | None = None
    n_pruned: int = 0
    n_transformed: int = 0  # type-2 children of type-1 parents born by the horizon
    n_events: int = 0
    valid: bool = True
    status: int = STATUS_OK
    record_times: tuple = ()
    record_max: np.ndarray | None = None  # population maximum at record_times

    def __post_init__(self):
        for arr in (self.positions, self.types, self.transform_time, self.transform_pos):
            arr.setflags(write=False)
        if self.env_max is not None:
            self.env_max.setflags(write=False)

    @property
    def size(self) -> int:
        return int(self.positions.shape[0])

    @property
    def maximum(self) -> float:
        return float(self.positions.max()) if self.size else -math.inf


# --- numba core -----------------------------------------------------------------


@njit(cache=True)
def _grow(a, n):
    b = np.empty(max(2 * a.shape[0], n), a.dtype)
    b[: a.shape[0]] = a
    return b


_NEED_OUT = -1
_NEED_STACK = -2


@njit(cache=True, nogil=True)
def _expand(t0, t1, cut, rate1, p_split1, sd1, two_type, track_env, env_speed, max_events,
            pos, typ, tu, xt, env, key, ctr, n, start,
            o_pos, o_typ, o_tu, o_xt, o_env, o_key, o_ctr, m,
            s_pos, s_time, s_typ, s_tu, s_xt, s_env, s_key, counters):
    """Expand particles start..n-1 over [t0, t1] into the output buffers.

    Returns (next particle, output count, code). A negative code means a
    buffer filled up: the interrupted particle's partial work is rolled
    back so the caller can grow the buffer and resume at that particle.
    A particle found below ``cut`` at an event is dropped with its subtree.
    counters holds [events, type-2 births, pruned] and is updated in place.
    """
    ocap = o_pos.shape[0]
    scap = s_pos.shape[0]
    one = np.uint64(1)
    for i in range(start, n):
        m_keep = m
        ev_keep = counters[0]
        b2_keep = counters[1]
        pr_keep = counters[2]
        x = pos[i]
        tt = t0
        ty = typ[i]
        T = tu[i]
        XT = xt[i]
        e = env[i] if track_env else 0.0
        k = key[i]
        c = ctr[i]
        sp = 0
        while True:
            rate = rate1 if ty == 1 else 1.0
            sd = sd1 if ty == 1 else 1.0
            E = -math.log(uniform(k, c)) / rate
            c += one
            remaining = t1 - tt
            stop = E >= remaining
            dt = remaining if stop else E
            g = gauss(k, c)
            c += one + one
            xn = x + sd * math.sqrt(dt) * g
            if track_env:
                # exact maximum of the Brownian bridge between the endpoints
                a0 = x - env_speed * tt
                b0 = xn - env_speed * (tt + dt)
                U = uniform(k, c)
                c += one
                d = a0 - b0
                mx = 0.5 * (a0 + b0 + math.sqrt(d * d - 2.0 * sd * sd * dt * math.log(U)))
                if mx > e:
                    e = mx
            x = xn
            tt = tt + dt
            if not math.isfinite(x):
                return i, m, STATUS_NONFINITE
            if stop:
                if m == ocap:
                    counters[0] = ev_keep
                    counters[1] = b2_keep
                    counters[2] = pr_keep
                    return i, m_keep, _NEED_OUT
                o_pos[m] = x
                o_typ[m] = ty
                o_tu[m] = T
                o_xt[m] = XT
                if track_env:
                    o_env[m] = e
                o_key[m] = k
                o_ctr[m] = c
                m += 1
                if sp == 0:
                    break
                # resume the most recent pending sibling
                sp -= 1
                x = s_pos[sp]
                tt = s_time[sp]
                ty = s_typ[sp]
                T = s_tu[sp]
                XT = s_xt[sp]
                e = s_env[sp]
                k = s_key[sp]
                c = np.uint64(0)
                continue

            counters[0] += 1
            if counters[0] > max_events:
                return i, m, STATUS_CAP
            if x < cut:
                counters[2] += 1
                if sp == 0:
                    break
                sp -= 1
                x = s_pos[sp]
                tt = s_time[sp]
                ty = s_typ[sp]
                T = s_tu[sp]
                XT = s_xt[sp]
                e = s_env[sp]
                k = s_key[sp]
                c = np.uint64(0)
                continue
            if sp == scap:
                counters[0] = ev_keep
                counters[1] = b2_keep
                counters[2] = pr_keep
                return i, m_keep, _NEED_STACK
            s_pos[sp] = x
            s_time[sp] = tt
            s_env[sp] = e
            split = True
            if ty == 1 and two_type:
                split = uniform(k, c) < p_split1
                c += one
            if split:
                s_typ[sp] = ty
                s_tu[sp] = T
                s_xt[sp] = XT
                s_key[sp] = child_key(k, c, SALT_RIGHT)
                k = child_key(k, c, SALT_LEFT)
                c = np.uint64(0)
            else:
                # the type-2 child records its transform point; the parent keeps its stream
                s_typ[sp] = 2
                s_tu[sp] = tt
                s_xt[sp] = x
                s_key[sp] = child_key(k, c, SALT_TYPE2)
                c += one
                counters[1] += 1
            sp += 1
    return n, m, STATUS_OK


@njit(cache=True, nogil=True)
def _simulate(beta, sigma2, two_type, horizon, root_key, prune_depth, check_interval,
              max_events, track_env, env_speed, record_times):
    pos = np.zeros(1)
    typ = np.ones(1, np.int8)
    tu = np.full(1, np.nan)
    xt = np.full(1, np.nan)
    env = np.zeros(1)
    key = np.full(1, root_key)
    ctr = np.zeros(1, np.uint64)
    n = 1

    rate1 = beta + 1.0 if two_type else beta
    p_split1 = beta / (beta + 1.0) if two_type else 1.0
    sd1 = math.sqrt(sigma2)
    counters = np.zeros(3, np.int64)
    n_pruned = 0
    top = 0.0  # population maximum at the start of the slice
    status = STATUS_OK

    scap = 256
    s_pos = np.empty(scap)
    s_time = np.empty(scap)
    s_typ = np.empty(scap, np.int8)
    s_tu = np.empty(scap)
    s_xt = np.empty(scap)
    s_env = np.empty(scap)
    s_key = np.empty(scap, np.uint64)

    n_rec = record_times.shape[0]
    rec_max = np.full(n_rec, np.nan)
    r = 0
    while r < n_rec and record_times[r] <= 0.0:
        rec_max[r] = 0.0
        r += 1
    growth = max(rate1, 1.0)
    ratio = 0.0
    last_dt = 1.0

    t0 = 0.0
    while t0 < horizon and status == STATUS_OK:
        t1 = horizon
        if prune_depth > 0.0:
            t1 = min(horizon, t0 + check_interval)
            if horizon - t1 < 1e-12 * horizon:
                t1 = horizon
        if r < n_rec and record_times[r] < t1:
            t1 = record_times[r]

        # sized from the last slice's growth so that resizes stay rare
        if ratio > 0.0:
            est = 1.25 * ratio * (t1 - t0) / last_dt * n + 64.0
        else:
            est = 2.0 * n * math.exp(growth * (t1 - t0)) + 64.0
        ocap = int(min(est, 268435456.0))
        o_pos = np.empty(ocap)
        o_typ = np.empty(ocap, np.int8)
        o_tu = np.empty(ocap)
        o_xt = np.empty(ocap)
        o_env = np.empty(ocap if track_env else 1)
        o_key = np.empty(ocap, np.uint64)
        o_ctr = np.empty(ocap, np.uint64)
        m = 0
        i = 0
        while True:
            cut = top - prune_depth if prune_depth > 0.0 else -np.inf
            i, m, code = _expand(t0, t1, cut, rate1, p_split1, sd1, two_type, track_env, env_speed,
                                 max_events, pos, typ, tu, xt, env, key, ctr, n, i,
                                 o_pos, o_typ, o_tu, o_xt, o_env, o_key, o_ctr, m,
                                 s_pos, s_time, s_typ, s_tu, s_xt, s_env, s_key, counters)
            if code == _NEED_OUT:
                o_pos = _grow(o_pos, m + 1)
                o_typ = _grow(o_typ, m + 1)
                o_tu = _grow(o_tu, m + 1)
                o_xt = _grow(o_xt, m + 1)
                if track_env:
                    o_env = _grow(o_env, m + 1)
                o_key = _grow(o_key, m + 1)
                o_ctr = _grow(o_ctr, m + 1)
            elif code == _NEED_STACK:
                s_pos = _grow(s_pos, 1)
                s_time = _grow(s_time, 1)
                s_typ = _grow(s_typ, 1)
                s_tu = _grow(s_tu, 1)
                s_xt = _grow(s_xt, 1)
                s_env = _grow(s_env, 1)
                s_key = _grow(s_key, 1)
            else:
                status = code
                break

        if n > 0 and t1 > t0:
            ratio = max(m / n, 1.0)
            last_dt = t1 - t0
        pos, typ, tu, xt, env, key, ctr, n = o_pos, o_typ, o_tu, o_xt, o_env, o_key, o_ctr, m
        while r < n_rec and record_times[r] <= t1 and status == STATUS_OK:
            top = -np.inf
            for j in range(n):
                if pos[j] > top:
                    top = pos[j]
            rec_max[r] = top
            r += 1
        if prune_depth > 0.0 and n > 0 and status == STATUS_OK:
            top = pos[0]
            for j in range(1, n):
                if pos[j] > top:
                    top = pos[j]
            cut = top - prune_depth
            w = 0
            for j in range(n):
                if pos[j] >= cut:
                    pos[w] = pos[j]
                    typ[w] = typ[j]
                    tu[w] = tu[j]
                    xt[w] = xt[j]
                    if track_env:
                        env[w] = env[j]
                    key[w] = key[j]
                    ctr[w] = ctr[j]
                    w += 1
            n_pruned += n - w
            n = w
        t0 = t1

    env_out = env[:n].copy() if track_env else np.zeros(0)
    return (pos[:n].copy(), typ[:n].copy(), tu[:n].copy(), xt[:n].copy(), env_out,
            n_pruned + counters[2], counters[1], counters[0], status, rec_max)


@njit(cache=True)
def _slice_bounds(horizon, prune_depth, check_interval):
    # same boundaries as _simulate without record times
    if prune_depth <= 0.0:
        return np.array([0.0, horizon])
    out = [0.0]
    t0 = 0.0
    while t0 < horizon:
        t1 = min(horizon, t0 + check_interval)
        if horizon - t1 < 1e-12 * horizon:
            t1 = horizon
        out.append(t1)
        t0 = t1
    return np.array(out)


@njit(cache=True, nogil=True)
def _explore(beta, sigma2, two_type, horizon, root_key, prune_depth, check_interval, max_events, floor,
             prof_init):
    """Depth-first version of _simulate that keeps only final particles >= floor.

    A lineage is followed through every slice before its pending siblings
    are resumed, so memory is the sibling stack plus the output. Pruning
    compares against prof[j], the running maximum at boundary j over the
    paths explored so far (seeded with prof_init when it has the right
    length); unpruned particles draw exactly what they draw in _simulate.
    """
    bounds = _slice_bounds(horizon, prune_depth, check_interval)
    nb = bounds.shape[0] - 1
    prof = np.full(nb + 1, -np.inf)
    if prof_init.shape[0] == nb + 1:
        prof[:] = prof_init
    prof[0] = 0.0
    prune = prune_depth > 0.0
    one = np.uint64(1)

    rate1 = beta + 1.0 if two_type else beta
    p_split1 = beta / (beta + 1.0) if two_type else 1.0
    sd1 = math.sqrt(sigma2)

    cap = 256
    o_pos = np.empty(cap)
    o_typ = np.empty(cap, np.int8)
    o_tu = np.empty(cap)
    o_xt = np.empty(cap)
    m = 0
    scap = 64
    s_pos = np.empty(scap)
    s_time = np.empty(scap)
    s_typ = np.empty(scap, np.int8)
    s_tu = np.empty(scap)
    s_xt = np.empty(scap)
    s_key = np.empty(scap, np.uint64)
    s_j = np.empty(scap, np.int64)
    sp = 0

    events = 0
    born2 = 0
    pruned = 0
    n_final = 0
    n2_final = 0
    top = -np.inf
    status = STATUS_OK

    x = 0.0
    tt = 0.0
    ty = 1
    T = np.nan
    XT = np.nan
    k = root_key
    c = np.uint64(0)
    j = 0
    alive = horizon > 0.0
    if not alive:
        n_final = 1
        top = 0.0
        if 0.0 >= floor:
            o_pos[0] = 0.0
            o_typ[0] = 1
            o_tu[0] = np.nan
            o_xt[0] = np.nan
            m = 1
    while alive:
        rate = rate1 if ty == 1 else 1.0
        sd = sd1 if ty == 1 else 1.0
        E = -math.log(uniform(k, c)) / rate
        c += one
        remaining = bounds[j + 1] - tt
        stop = E >= remaining
        dt = remaining if stop else E
        g = gauss(k, c)
        c += one + one
        x = x + sd * math.sqrt(dt) * g
        tt = tt + dt
        if not math.isfinite(x):
            status = STATUS_NONFINITE
            break
        drop = False
        if stop:
            j += 1
            tt = bounds[j]
            if j == nb:
                n_final += 1
                if ty == 2:
                    n2_final += 1
                if x > top:
                    top = x
                if x >= floor:
                    if m == o_pos.shape[0]:
                        o_pos = _grow(o_pos, m + 1)
                        o_typ = _grow(o_typ, m + 1)
                        o_tu = _grow(o_tu, m + 1)
                        o_xt = _grow(o_xt, m + 1)
                    o_pos[m] = x
                    o_typ[m] = ty
                    o_tu[m] = T
                    o_xt[m] = XT
                    m += 1
                drop = True
            else:
                if x > prof[j]:
                    prof[j] = x
                if prune and x < prof[j] - prune_depth:
                    pruned += 1
                    drop = True
                else:
                    continue
        else:
            events += 1
            if events > max_events:
                status = STATUS_CAP
                break
            if prune and x < prof[j] - prune_depth:
                pruned += 1
                drop = True
        if drop:
            if sp == 0:
                break
            sp -= 1
            x = s_pos[sp]
            tt = s_time[sp]
            ty = s_typ[sp]
            T = s_tu[sp]
            XT = s_xt[sp]
            k = s_key[sp]
            j = s_j[sp]
            c = np.uint64(0)
            continue
        if sp == s_pos.shape[0]:
            s_pos = _grow(s_pos, sp + 1)
            s_time = _grow(s_time, sp + 1)
            s_typ = _grow(s_typ, sp + 1)
            s_tu = _grow(s_tu, sp + 1)
            s_xt = _grow(s_xt, sp + 1)
            s_key = _grow(s_key, sp + 1)
            s_j = _grow(s_j, sp + 1)
        s_pos[sp] = x
        s_time[sp] = tt
        s_j[sp] = j
        split = True
        if ty == 1 and two_type:
            split = uniform(k, c) < p_split1
            c += one
        if split:
            s_typ[sp] = ty
            s_tu[sp] = T
            s_xt[sp] = XT
            s_key[sp] = child_key(k, c, SALT_RIGHT)
            k = child_key(k, c, SALT_LEFT)
            c = np.uint64(0)
        else:
            s_typ[sp] = 2
            s_tu[sp] = tt
            s_xt[sp] = x
            s_key[sp] = child_key(k, c, SALT_TYPE2)
            c += one
            born2 += 1
        sp += 1
    return (o_pos[:m].copy(), o_typ[:m].copy(), o_tu[:m].copy(), o_xt[:m].copy(), top,
            n_final, n2_final, pruned, born2, events, status, prof)


# --- public API -------------------------------------------------------------------


def _run(cfg: EngineConfig, two_type: bool, key: int | None = None) -> Snapshot:
    p = cfg.params
    track = cfg.env_speed is not None
    root = np.uint64(cfg.seed & 0xFFFFFFFFFFFFFFFF if key is None else key)
    out = _simulate(
        float(p.beta), float(p.sigma2), two_type, float(cfg.horizon), root,
        float(cfg.prune_depth or 0.0), float(cfg.check_interval), int(cfg.max_population),
        track, float(cfg.env_speed or 0.0), np.asarray(cfg.record_times, dtype=np.float64),
    )
    pos, typ, tu, xt, env, n_pruned, n_born2, n_events, status, rec = out
    if status == STATUS_NONFINITE:
        raise EngineError("non-finite position produced; parameters out of range")
    return Snapshot(
        horizon=float(cfg.horizon),
        params=p,
        positions=pos,
        types=typ,
        transform_time=tu,
        transform_pos=xt,
        env_max=env if track else None,
        n_pruned=int(n_pruned),
        n_transformed=int(n_born2),
        n_events=int(n_events),
        valid=status == STATUS_OK,
        status=int(status),
        record_times=cfg.record_times,
        record_max=rec,
    )


def simulate_two_type(cfg: EngineConfig) -> Snapshot:
    """One realization of the two-type reducible process up to cfg.horizon.

    The root key is cfg.seed itself; use :func:`run_replications` for
    hashed per-replication keys. If the event cap is hit the partial
    population is returned with ``valid=False``.
    """
    return _run(cfg, True)


def simulate_single_type(params: Params, horizon: float, seed: int = 0, **kw) -> Snapshot:
    cfg = EngineConfig(params, horizon, seed, two_type=False, **kw)
    return _run(cfg, False)


def snapshot_summary(s: Snapshot) -> dict:
    n2 = int(np.count_nonzero(s.types == 2))
    return {
        "max": s.maximum,
        "n_type1": s.size - n2,
        "n_type2": n2,
        "population": s.size,
        "pruned": s.n_pruned,
        "transformed": s.n_transformed,
        "events": s.n_events,
        "valid": s.valid,
    }


def merge_summaries(summaries: Sequence[dict]) -> dict:
    """Order-independent aggregate of per-replication summaries."""
    if not summaries:
        raise ValueError("nothing to merge")
    return {
        "replications": len(summaries),
        "max": max(s["max"] for s in summaries),
        "n_type1": sum(s["n_type1"] for s in summaries),
        "n_type2": sum(s["n_type2"] for s in summaries),
        "population": sum(s["population"] for s in summaries),
        "pruned": sum(s["pruned"] for s in summaries),
        "transformed": sum(s["transformed"] for s in summaries),
        "events": sum(s["events"] for s in summaries),
        "valid": all(s["valid"] for s in summaries),
    }


def default_threads() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def _fan_out(one: Callable[[int], object], idx, threads: int | None) -> list:
    threads = threads or default_threads()
    if threads <= 1:
        return [one(i) for i in idx]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(one, idx))


def run_replications(
    cfg: EngineConfig,
    n_reps: int,
    reduce: Callable[[Snapshot], object],
    threads: int | None = None,
    first_index: int = 0,
) -> list:
    """Simulate replications first_index.. and reduce each snapshot.

    Replication i uses root key replication_key(cfg.seed, i). Results
    come back in index order whatever the thread count.
    """
    two = cfg.two_type

    def one(i):
        return reduce(_run(cfg, two, replication_key(cfg.seed, i)))

    return _fan_out(one, range(first_index, first_index + n_reps), threads)


@dataclass(frozen=True)
class ExtremalRun:
    """Final particles at or above ``floor`` from a depth-first run."""

    horizon: float
    params: Params
    floor: float
    maximum: float
    positions: np.ndarray
    types: np.ndarray
    transform_time: np.ndarray
    transform_pos: np.ndarray
    population: int
    n_type2: int
    n_pruned: int
    n_transformed: int
    n_events: int
    valid: bool


def simulate_extremal(
    cfg: EngineConfig, floor: float, key: int | None = None, warm_depth: float | None = None
) -> ExtremalRun:
    """Depth-first run that stores only the top of the final population.

    Use when the pruned population is too large to hold. Without pruning
    the kept particles are exactly those of the slice engine. With pruning
    the reference maximum at each slice boundary is the running maximum
    over lineages explored so far, so the pruned set differs from the
    slice engine's; the realization is still a pure function of the key.

    ``warm_depth`` first runs a cheap pass pruned at that shallower depth
    and seeds the boundary maxima with its profile. Those maxima come from
    genuine particles of the same tree, so they are valid lower bounds on
    the true maximum and pruning starts near its nominal strength.
    """
    if cfg.record_times or cfg.env_speed is not None:
        raise ValueError("record_times and env_speed need the slice engine")
    p = cfg.params
    root = np.uint64(cfg.seed & 0xFFFFFFFFFFFFFFFF if key is None else key)
    depth = float(cfg.prune_depth or 0.0)
    args = (float(p.beta), float(p.sigma2), cfg.two_type, float(cfg.horizon), root)
    prof = np.zeros(0)
    if warm_depth is not None and depth > 0:
        if not 0 < warm_depth < depth:
            raise ValueError("warm_depth must lie in (0, prune_depth)")
        prof = _explore(*args, float(warm_depth), float(cfg.check_interval), int(cfg.max_population),
                        math.inf, prof)[-1]
    pos, typ, tu, xt, top, n, n2, pruned, born2, events, status, _ = _explore(
        *args, depth, float(cfg.check_interval), int(cfg.max_population), float(floor), prof,
    )
    if status == STATUS_NONFINITE:
        raise EngineError("non-finite position produced; parameters out of range")
    for a in (pos, typ, tu, xt):
        a.setflags(write=False)
    return ExtremalRun(float(cfg.horizon), p, float(floor), float(top), pos, typ, tu, xt, int(n), int(n2),
                       int(pruned), int(born2), int(events), status == STATUS_OK)


def run_extremal_replications(
    cfg: EngineConfig,
    n_reps: int,
    floor: float,
    reduce: Callable[[ExtremalRun], object],
    threads: int | None = None,
    first_index: int = 0,
    warm_depth: float | None = None,
) -> list:
    """Like run_replications, with simulate_extremal under the same keys."""

    def one(i):
        return reduce(simulate_extremal(cfg, floor, replication_key(cfg.seed, i), warm_depth))

    return _fan_out(one, range(first_index, first_index + n_reps), threads)


# --- serialization --------------------------------------------------------------

CSV_HEADER = "position,type,transform_time,transform_position"
BINARY_MAGIC = b"BBMLAB-SNAPSHOT1"  # 16 bytes
assert len(BINARY_MAGIC) == 16


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else format(x, ".17g")


def snapshot_to_csv(s: Snapshot, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for x, ty, T, XT in zip(s.positions, s.types, s.transform_time, s.transform_pos):
            fh.write(f"{_fmt(x)},{int(ty)},{_fmt(T)},{_fmt(XT)}\n")


def snapshot_from_csv(path, horizon: float, params: Params) -> Snapshot:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return Snapshot(horizon, params, data[:, 0].copy(), data[:, 1].astype(np.int8),
                    data[:, 2].copy(), data[:, 3].copy())


def snapshot_to_bytes(s: Snapshot) -> bytes:
    """Magic, then little-endian u64 count, f64 horizon, beta, sigma2,
    then four f64 columns: position, type, transform time, transform position."""
    head = BINARY_MAGIC + struct.pack("<Qddd", s.size, s.horizon, s.params.beta, s.params.sigma2)
    cols = np.concatenate([s.positions, s.types.astype("<f8"), s.transform_time, s.transform_pos])
    return head + cols.astype("<f8").tobytes()


def snapshot_from_bytes(buf: bytes) -> Snapshot:
    if buf[:16] != BINARY_MAGIC:
        raise ValueError("not a bbmlab snapshot (bad magic)")
    n, horizon, beta, sigma2 = struct.unpack_from("<Qddd", buf, 16)
    cols = np.frombuffer(buf, "<f8", count=4 * n, offset=16 + 32).reshape(4, n)
    return Snapshot(horizon, Params(beta, sigma2), cols[0].copy(), cols[1].astype(np.int8),
                    cols[2].copy(), cols[3].copy())
