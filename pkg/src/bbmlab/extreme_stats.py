"""Estimators over ensembles of snapshots.

Covers the law of the maximum and its log-corrected centering, the
localization windows for transform points, decoration gaps seen from the
maximum, and the x-shape of the Laplace functional Phi_rho(t, x).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from bbmlab import rng
from bbmlab.bbm_engine import EngineConfig, ExtremalRun, Snapshot, _run, run_extremal_replications, run_replications
from bbmlab.phase_atlas import SQRT2, ApproxFamily, Params, centering, derived_constants, make_approximation

A_KEEP = 8.0


class EstimatorError(ValueError):
    pass


# --- ensembles -----------------------------------------------------------------------


@dataclass(frozen=True)
class Record:
    """Particles of one replication at or above ``floor``."""

    floor: float
    positions: np.ndarray
    types: np.ndarray
    transform_time: np.ndarray
    transform_pos: np.ndarray


@dataclass(frozen=True)
class Ensemble:
    horizon: float
    params: Params
    maxima: np.ndarray
    family: ApproxFamily | None = None
    records: tuple = ()  # one Record per replication, or empty
    a_keep: float = A_KEEP
    summaries: tuple = field(default=(), repr=False)

    def __post_init__(self):
        if len(self.maxima) == 0:
            raise EstimatorError("empty ensemble")
        if self.records and len(self.records) != len(self.maxima):
            raise EstimatorError("records and maxima disagree in length")

    @property
    def size(self) -> int:
        return len(self.maxima)


def extract_record(s: Snapshot, a_keep: float = A_KEEP, floor: float | None = None) -> Record:
    lo = s.maximum - a_keep
    if floor is not None:
        lo = min(lo, floor)
    keep = s.positions >= lo
    return Record(
        lo,
        s.positions[keep].copy(),
        s.types[keep].copy(),
        s.transform_time[keep].copy(),
        s.transform_pos[keep].copy(),
    )


def build_ensemble(
    cfg: EngineConfig,
    n_reps: int,
    family: ApproxFamily | None = None,
    a_keep: float | None = A_KEEP,
    floor: float | None = None,
    threads: int | None = None,
    depth_first: bool = False,
    warm_depth: float | None = None,
) -> Ensemble:
    """Run ``n_reps`` replications and keep maxima plus extremal records.

    ``a_keep=None`` keeps maxima only. ``floor`` lowers the record cut
    below max - a_keep when an absolute threshold must be covered.

    ``depth_first`` runs the depth-first engine, which never holds the
    whole population; records then hold exactly the particles >= floor
    and ``a_keep`` is ignored.
    """
    if family is not None:
        want = make_approximation(family, cfg.horizon)
        if want != cfg.params:
            raise EstimatorError(f"engine params {cfg.params} differ from family params {want}")
    if depth_first:
        if floor is None:
            raise EstimatorError("the depth-first engine needs a floor")

        def keep(r: ExtremalRun):
            return r.maximum, Record(r.floor, r.positions, r.types, r.transform_time, r.transform_pos), r.valid

        out = run_extremal_replications(cfg, n_reps, floor, keep, threads, warm_depth=warm_depth)
        if not all(v for _, _, v in out):
            raise EstimatorError("a replication hit the event cap")
        return Ensemble(cfg.horizon, cfg.params, np.array([m for m, _, _ in out]), family,
                        tuple(r for _, r, _ in out), 0.0)

    def reduce(s: Snapshot):
        rec = None if a_keep is None else extract_record(s, a_keep, floor)
        return s.maximum, rec, s.valid

    out = run_replications(cfg, n_reps, reduce, threads)
    if not all(v for _, _, v in out):
        raise EstimatorError("a replication hit the event cap")
    maxima = np.array([m for m, _, _ in out])
    recs = tuple(r for _, r, _ in out) if a_keep is not None else ()
    return Ensemble(cfg.horizon, cfg.params, maxima, family, recs, a_keep if a_keep is not None else 0.0)


# --- maximum ---------------------------------------------------------------------------


def max_quantiles(e: Ensemble, qs) -> np.ndarray:
    qs = np.asarray(qs, dtype=float)
    if np.any((qs <= 0) | (qs >= 1)):
        raise EstimatorError("quantile levels must lie in (0, 1)")
    return np.quantile(e.maxima, qs)


@dataclass(frozen=True)
class LogFit:
    l: float
    s: float
    c: float
    residual: float  # root-mean-square residual
    pinned: bool


def fit_log_correction(points, l_pinned: float | None = None, rcond: float = 1e-10) -> LogFit:
    """Least squares for median ~ l*t - s*log(t) + c."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise EstimatorError("points must be (t, median) pairs")
    t, y = pts[:, 0], pts[:, 1]
    if len(np.unique(t)) < 3:
        raise EstimatorError("need at least 3 distinct t values")
    if np.any(t <= 0):
        raise EstimatorError("t must be positive")
    cols = [-np.log(t), np.ones_like(t)]
    if l_pinned is None:
        cols.insert(0, t)
        rhs = y
    else:
        rhs = y - l_pinned * t
    X = np.column_stack(cols)
    sv = np.linalg.svd(X, compute_uv=False)
    if sv[-1] <= rcond * sv[0]:
        raise EstimatorError("design matrix is rank deficient; t values too close")
    coef, *_ = np.linalg.lstsq(X, rhs, rcond=None)
    res = float(np.sqrt(np.mean((X @ coef - rhs) ** 2)))
    if l_pinned is None:
        return LogFit(float(coef[0]), float(coef[1]), float(coef[2]), res, False)
    return LogFit(float(l_pinned), float(coef[0]), float(coef[1]), res, True)


# --- localization windows ----------------------------------------------------------------


@dataclass(frozen=True)
class WindowSpec:
    family: ApproxFamily
    R: float

    def __post_init__(self):
        if not self.R > 1:
            raise EstimatorError(f"window scale R must exceed 1, got {self.R!r}")

    def contains(self, s, x, t: float) -> np.ndarray:
        """Membership of transform points (s, x) in the window at horizon t."""
        s = np.asarray(s, dtype=float)
        x = np.asarray(x, dtype=float)
        f, R = self.family, self.R
        q = make_approximation(f, t)
        k = derived_constants(q)
        h, hp = f.h, f.h_eff
        ts = t - s
        with np.errstate(invalid="ignore"):
            rts = np.sqrt(np.maximum(ts, 0.0))
            rs = np.sqrt(np.maximum(s, 0.0))
            fam = f.family
            if fam == "B13_minus":
                d = x - k.v * s + (k.theta - k.v) * ts
                return _between(ts, t**hp / R, R * t**hp, t) & _within(d, R * rts, t)
            if fam == "P11_f1":
                g = k.v * s - x
                if h < 1:
                    return _between(ts, t**h / R, R * t**h, t) & _between(g, rts / R, R * rts, t)
                return _between(ts, t / R, (1 - 1 / R) * t, t) & _between(g, math.sqrt(t) / R, R * math.sqrt(t), t)
            if fam == "P11_f2":
                g = SQRT2 * q.sigma2 * s - x
                if h < 1:
                    return _between(s, t**h / R, R * t**h, t) & _between(g, rs / R, R * rs, t)
                return _between(s, t / R, (1 - 1 / R) * t, t) & _between(g, rs / R, R * rs, t)
            if fam == "B23_minus":
                return _between(s, t**hp / R, R * t**hp, t) & _within(x - SQRT2 * q.sigma2 * s, R * rs, t)
            # the remaining families approach from inside the anomalous region
            a, p, b = k.a_star, k.p_star, k.b_star
            if fam == "B23_plus":
                near = _within(x - a * s, R * rs, t)
                if h < 0.5:
                    return _within(s - p * t, R * math.sqrt(t), t) & near
                return _between(s, math.sqrt(t) / R, R * math.sqrt(t), t) & near
            if fam == "P11_f3":
                if h < 1:
                    return _within(s - t / 2, R * t ** ((1 + h) / 2), t) & _within(x - a * s, R * rs, t)
                g = SQRT2 * s - x
                return _between(s, t / R, (1 - 1 / R) * t, t) & _between(g, math.sqrt(t) / R, R * math.sqrt(t), t)
            # B13_plus
            d = x - a * s + (b - a) * (p * t - s)
            if h < 0.5:
                return _within(s - p * t, R * math.sqrt(t), t) & _within(d, R * rts, t)
            return _between(ts, math.sqrt(t) / R, R * math.sqrt(t), t) & _within(d, R * rts, t)


# window edges are closed; the slack absorbs rounding in t - s and similar
EDGE_RTOL = 1e-10


def _slack(bound, t):
    return EDGE_RTOL * np.abs(bound) + 8 * np.finfo(float).eps * max(t, 1.0)


def _between(z, lo, hi, t):
    return (z >= lo - _slack(lo, t)) & (z <= hi + _slack(hi, t))


def _within(z, bound, t):
    return np.abs(z) <= bound + _slack(bound, t)


def localization_fraction(e: Ensemble, w: WindowSpec, A: float) -> float:
    """Share of replications with a type-2 particle above m(t) - A whose
    transform point lies outside the window."""
    if e.family is None or e.family != w.family:
        raise EstimatorError("window family does not match the ensemble's family")
    if not e.records:
        raise EstimatorError("ensemble carries no extremal records")
    level = centering(e.family, e.horizon).value(e.horizon) - A
    bad = 0
    for r in e.records:
        if r.floor > level:
            raise EstimatorError(
                f"records cut at {r.floor:.6g}, above the level {level:.6g}; rebuild with a lower floor"
            )
        sel = (r.positions >= level) & (r.types == 2)
        if not np.any(sel):
            continue
        inside = w.contains(r.transform_time[sel], r.transform_pos[sel], e.horizon)
        bad += int(not np.all(inside))
    return bad / e.size


# --- decoration ----------------------------------------------------------------------------


def relative_points(positions: np.ndarray, a_keep: float = A_KEEP) -> np.ndarray:
    """Positions minus the maximum, restricted to [-a_keep, 0], descending."""
    positions = np.asarray(positions, dtype=float)
    rel = positions - positions.max()
    rel = rel[rel >= -a_keep]
    return np.sort(rel)[::-1]


@dataclass(frozen=True)
class DecorationStats:
    n_reps: int
    n_accepted: int
    acceptance: float
    mean_points: float
    gap_edges: np.ndarray
    gap_hist: np.ndarray  # normalized histogram of consecutive gaps
    first_gaps: np.ndarray  # M_t minus the second-highest point
    low_confidence: bool
    samples: tuple = field(default=(), repr=False)


def gap_statistics(samples, a_keep: float = A_KEEP, bins: int = 16):
    edges = np.linspace(0.0, a_keep, bins + 1)
    gaps = [np.diff(-p) for p in samples]
    allg = np.concatenate(gaps) if gaps else np.zeros(0)
    hist, _ = np.histogram(allg, bins=edges)
    total = hist.sum()
    hist = hist / total if total else hist.astype(float)
    first = np.array([g[0] for g in gaps if len(g)])
    return edges, hist, first


def decoration_gaps(
    params: Params,
    horizon: float,
    rho: float,
    n_reps: int,
    seed: int = 0,
    a_keep: float = A_KEEP,
    bins: int = 16,
    threads: int | None = None,
) -> DecorationStats:
    """Rejection sampler for the population seen from the maximum given M_t >= rho*t."""
    if rho < SQRT2 - 1e-12:
        raise EstimatorError("rho must be at least sqrt(2)")
    cfg = EngineConfig(params, horizon, seed, two_type=False)
    level = rho * horizon

    def reduce(s: Snapshot):
        if s.maximum < level:
            return None
        return relative_points(s.positions, a_keep)

    out = run_replications(cfg, n_reps, reduce, threads)
    acc = tuple(p for p in out if p is not None)
    edges, hist, first = gap_statistics(acc, a_keep, bins)
    mean_pts = float(np.mean([len(p) for p in acc])) if acc else math.nan
    return DecorationStats(
        n_reps, len(acc), len(acc) / n_reps, mean_pts, edges, hist, first, len(acc) < 10, acc
    )


def first_moment_tail_ratio(t1: float, t2: float) -> float:
    """(log t2 / log t1) (t2/t1)^{-3/2}: predicted P(M_t2 >= sqrt2 t2)/P(M_t1 >= sqrt2 t1)."""
    return math.log(t2) / math.log(t1) * (t2 / t1) ** -1.5


# --- Laplace functional ----------------------------------------------------------------------


@dataclass(frozen=True)
class LaplaceTable:
    x: np.ndarray
    phi: np.ndarray  # estimate of Phi_rho(t, x)
    se: np.ndarray
    shape: np.ndarray
    ratio: np.ndarray
    n_reps: int

    @property
    def spread(self) -> float:
        return float(self.ratio.max() / self.ratio.min())


def laplace_shape_factor(x, t: float, rho: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    g = np.exp(rho * x - x * x / (2 * t))
    return -x * g if abs(rho - SQRT2) < 1e-12 else g


def _check_strip(x: np.ndarray, t: float, rho: float, eps: float):
    if abs(rho - SQRT2) < 1e-12:
        ok = (x >= -(t ** (1 - eps))) & (x <= -(t**eps))
    else:
        ok = np.abs(x) <= t ** (1 - eps)
    if not np.all(ok):
        raise EstimatorError(f"x grid leaves the validity strip at t={t}, rho={rho}, eps={eps}")


def _spine_population(params: Params, t: float, lam: float, key: int) -> np.ndarray:
    """Final positions under the measure tilted by W_t(lam).

    The spine is a Brownian motion with drift lam*sigma2 that branches at
    rate 2*beta; at each spine branching an ordinary subtree starts.
    """
    b, s2 = params.beta, params.sigma2
    cuts = []
    tt = 0.0
    ctr = 0
    while True:
        u = rng.uniforms(key, 1, ctr)[0]
        ctr += 1
        tt += -math.log(u) / (2.0 * b)
        if tt >= t:
            break
        cuts.append(tt)
    times = np.array(cuts + [t])
    dts = np.diff(np.concatenate([[0.0], times]))
    z = rng.normals(key, len(times), ctr)
    path = np.cumsum(lam * s2 * dts + math.sqrt(s2) * np.sqrt(dts) * z)
    parts = [path[-1:]]
    for j, s in enumerate(cuts):
        ck = rng.replication_key(key, j)
        sub = _run(EngineConfig(params, t - s, two_type=False), False, ck)
        parts.append(sub.positions + path[j])
    return np.concatenate(parts)


def laplace_shape(
    params: Params,
    t: float,
    xs,
    A: float,
    rho: float,
    n_reps: int,
    seed: int = 0,
    eps: float = 0.1,
    threads: int | None = None,
    max_rel_se: float = 0.5,
) -> LaplaceTable:
    """Estimate Phi_rho(t, x) = 1 - E exp(-N_x) with N_x the number of
    particles at or above rho*t - x - A (step test function, height 1).

    Sampling is under the spine measure with tilt rho, each replication
    weighted by 1/W_t(rho); the weighted mean is unbiased for Phi. The
    returned ratio divides by the x-dependent shape factor, which leaves
    the unknown constant as the common level.
    """
    xs = np.asarray(xs, dtype=float)
    if A == -math.inf:
        z = np.zeros_like(xs)
        return LaplaceTable(xs, z, z, laplace_shape_factor(xs, t, rho) if t > 0 else z, z, 0)
    if t == 0:
        phi = np.where(xs + A >= 0, 1.0 - math.exp(-1.0), 0.0)
        z = np.zeros_like(xs)
        return LaplaceTable(xs, phi, z, np.ones_like(xs), phi, 0)
    _check_strip(xs, t, rho, eps)
    b, s2 = params.beta, params.sigma2
    levels = rho * t - xs - A
    drift = b + rho * rho * s2 / 2.0

    def one(i):
        pos = _spine_population(params, t, rho, rng.replication_key(seed, i))
        w = float(np.sum(np.exp(rho * pos - drift * t)))
        srt = np.sort(pos)
        n = len(srt) - np.searchsorted(srt, levels, side="left")
        return -np.expm1(-n.astype(float)) / w

    if threads is None or threads <= 1:
        vals = np.array([one(i) for i in range(n_reps)])
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(threads) as ex:
            vals = np.array(list(ex.map(one, range(n_reps))))
    phi = vals.mean(axis=0)
    se = vals.std(axis=0, ddof=1) / math.sqrt(n_reps)
    if np.any(~(se <= max_rel_se * phi)):
        raise EstimatorError("Monte Carlo noise dominates the estimate; raise n_reps")
    shape = laplace_shape_factor(xs, t, rho)
    return LaplaceTable(xs, phi, se, shape, phi / shape, n_reps)


def laplace_brute_force(params: Params, t: float, xs, A: float, rho: float, n_reps: int, seed: int = 0):
    """Plain Monte Carlo Phi_rho(t, x) with standard errors; reference for the tilted sampler."""
    xs = np.asarray(xs, dtype=float)
    levels = rho * t - xs - A
    cfg = EngineConfig(params, t, seed, two_type=False)

    def reduce(s: Snapshot):
        srt = np.sort(s.positions)
        n = len(srt) - np.searchsorted(srt, levels, side="left")
        return -np.expm1(-n.astype(float))

    vals = np.array(run_replications(cfg, n_reps, reduce, threads=1))
    return vals.mean(axis=0), vals.std(axis=0, ddof=1) / math.sqrt(n_reps)
