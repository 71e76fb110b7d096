"""Additive and derivative martingales of single-type BBM, and the Gibbs
functionals that smear them with a profile F_t(z) = G((z - r_t)/h_t)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import ndtr

from bbmlab.bbm_engine import Snapshot
from bbmlab.phase_atlas import SQRT2, derived_constants

_SQRT2PI = math.sqrt(2.0 * math.pi)


def _single(s: Snapshot) -> np.ndarray:
    if s.size and np.any(s.types != 1):
        raise ValueError("martingale functionals need a single-type snapshot")
    return np.asarray(s.positions)


def _standard(s: Snapshot) -> np.ndarray:
    if s.params.beta != 1.0 or s.params.sigma2 != 1.0:
        raise ValueError("Gibbs functionals are defined for beta = sigma2 = 1")
    return _single(s)


def additive_W(s: Snapshot, lam: float) -> float:
    x = _single(s)
    b, s2, t = s.params.beta, s.params.sigma2, s.horizon
    return float(np.sum(np.exp(lam * x - (b + lam * lam * s2 / 2.0) * t)))


def derivative_Z(s: Snapshot) -> float:
    x = _single(s)
    k = derived_constants(s.params)
    t = s.horizon
    return float(np.sum((k.v * t - x) * np.exp(k.theta * x - 2.0 * s.params.beta * t)))


def derivative_Z_second_moment(params, t: float) -> float:
    """E[Z_t^2] from the many-to-two formula.

    Z_t has mean zero and a heavy right tail, so sample standard errors
    badly understate the noise of a Monte Carlo mean; use this instead.
    """
    b, s2 = params.beta, params.sigma2
    v2 = derived_constants(params).v ** 2
    e = math.exp(b * t)
    # closed forms of int_0^t s e^{bs} ds and int_0^t s^2 e^{bs} ds
    i1 = e * (t / b - 1 / b**2) + 1 / b**2
    i2 = e * (t * t / b - 2 * t / b**2 + 2 / b**3) - 2 / b**3
    return e * (v2 * t * t + s2 * t) + 2 * b * (v2 * i2 + s2 * i1)


# --- profiles ---------------------------------------------------------------------


@dataclass(frozen=True)
class PiecewiseLinear:
    """G on [z[0], z[-1]], linear between breakpoints, zero outside.

    Repeated breakpoints encode jumps.
    """

    z: tuple
    g: tuple

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        g = np.asarray(self.g, dtype=float)
        if z.ndim != 1 or len(z) < 2 or z.shape != g.shape:
            raise ValueError("need matching breakpoint and value lists of length >= 2")
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(g))):
            raise ValueError("profile must be bounded with compact support")
        if np.any(np.diff(z) < 0) or z[-1] <= z[0]:
            raise ValueError("breakpoints must be nondecreasing with positive span")
        object.__setattr__(self, "z", tuple(z))
        object.__setattr__(self, "g", tuple(g))

    @property
    def sup_norm(self) -> float:
        return max(abs(v) for v in self.g)

    def segments(self):
        """(z0, z1, slope, intercept) over segments of positive length."""
        for k in range(len(self.z) - 1):
            z0, z1 = self.z[k], self.z[k + 1]
            if z1 > z0:
                sl = (self.g[k + 1] - self.g[k]) / (z1 - z0)
                yield z0, z1, sl, self.g[k] - sl * z0

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        out = np.zeros_like(y)
        for z0, z1, sl, ic in self.segments():
            m = (y >= z0) & (y <= z1)
            out[m] = ic + sl * y[m]
        return out

    def scaled(self, c: float) -> "PiecewiseLinear":
        return PiecewiseLinear(self.z, tuple(c * v for v in self.g))


@dataclass(frozen=True)
class GibbsFunctionalSpec:
    """Profile G with shift r_t, scale h_t and tilt.

    Exactly one tilt source: ``alpha`` (lambda_t = sqrt2 (1 - 1/alpha_t)),
    a fixed ``lam``, or ``critical`` (lambda = sqrt2).
    """

    G: PiecewiseLinear
    r: Callable[[float], float]
    h: Callable[[float], float]
    alpha: Callable[[float], float] | None = None
    lam: float | None = None
    critical: bool = False

    def __post_init__(self):
        n = (self.alpha is not None) + (self.lam is not None) + bool(self.critical)
        if n != 1:
            raise ValueError("give exactly one of alpha, lam, critical")

    def lam_t(self, t: float) -> float:
        if self.critical:
            return SQRT2
        if self.lam is not None:
            return float(self.lam)
        return SQRT2 * (1.0 - 1.0 / self.alpha(t))

    def F(self, z, t: float) -> np.ndarray:
        ht = self.h(t)
        if ht == 0:
            raise ValueError("h_t must be nonzero")
        return self.G((np.asarray(z, dtype=float) - self.r(t)) / ht)

    def z_segments(self, t: float):
        """Segments of F_t in the z variable: (z0, z1, slope, intercept)."""
        ht, rt = self.h(t), self.r(t)
        if ht == 0:
            raise ValueError("h_t must be nonzero")
        for y0, y1, sl, ic in self.G.segments():
            a, b = rt + ht * y0, rt + ht * y1
            if a > b:
                a, b = b, a
            # G(y) = ic + sl*y with y = (z - rt)/ht
            yield a, b, sl / ht, ic - sl * rt / ht


def const(c: float) -> Callable[[float], float]:
    return lambda t: c


# --- functionals ----------------------------------------------------------------------


def gibbs_gaussian_functional(s: Snapshot, spec: GibbsFunctionalSpec, t: float | None = None) -> float:
    x = _standard(s)
    t = s.horizon if t is None else t
    lam = spec.lam_t(t)
    z = (lam * t - x) / math.sqrt(t)
    return float(np.sum(spec.F(z, t) * np.exp(lam * x - (lam * lam / 2.0 + 1.0) * t)))


def gibbs_mea_functional(s: Snapshot, spec: GibbsFunctionalSpec, t: float | None = None) -> float:
    x = _standard(s)
    t = s.horizon if t is None else t
    gap = SQRT2 * t - x
    return float(np.sum(spec.F(gap / math.sqrt(t), t) * np.exp(-SQRT2 * gap)))


def _phi(z):
    return math.exp(-z * z / 2.0) / _SQRT2PI


def mu_gau(spec: GibbsFunctionalSpec, t: float) -> float:
    """<F_t, standard normal>, integrated exactly segment by segment."""
    tot = 0.0
    for a, b, sl, ic in spec.z_segments(t):
        tot += ic * (ndtr(b) - ndtr(a)) + sl * (_phi(a) - _phi(b))
    return float(tot)


def mu_mea(spec: GibbsFunctionalSpec, t: float) -> float:
    """int_0^inf F_t(z) z e^{-z^2/2} dz, exact on each linear piece."""
    tot = 0.0
    for a, b, sl, ic in spec.z_segments(t):
        a, b = max(a, 0.0), max(b, 0.0)
        if b <= a:
            continue
        ea, eb = math.exp(-a * a / 2.0), math.exp(-b * b / 2.0)
        m1 = ea - eb
        m2 = a * ea - b * eb + _SQRT2PI * (ndtr(b) - ndtr(a))
        tot += ic * m1 + sl * m2
    return float(tot)
