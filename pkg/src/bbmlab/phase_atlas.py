"""Analytic layer for two-type reducible BBM.

Type-1 particles diffuse with variance sigma2 per unit time, split at
rate beta and emit type-2 children at rate 1. Type-2 particles are
standard BBM. Everything here is a pure function of (beta, sigma2):
the phase classification, the speed constants, the horizon-dependent
approximation families that approach a phase boundary at rate t^{-h},
their centerings l*t - s*log(t), and the limiting intensity constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from bbmlab.quadrature import quadrature

H_INF = math.inf
SQRT2 = math.sqrt(2.0)
BOUNDARY_TOL = 1e-12


class ParamError(ValueError):
    pass


@dataclass(frozen=True)
class Params:
    beta: float
    sigma2: float

    def __post_init__(self):
        for name in ("beta", "sigma2"):
            val = getattr(self, name)
            if not isinstance(val, (int, float)) or not math.isfinite(val) or val <= 0:
                raise ParamError(f"{name} must be finite and > 0, got {val!r}")


class Region(str, Enum):
    C_I = "C_I"
    C_II = "C_II"
    C_III = "C_III"
    B_I_II = "B_I_II"
    B_I_III = "B_I_III"
    B_II_III = "B_II_III"
    POINT_1_1 = "POINT_1_1"


def classify(p: Params, tol: float = BOUNDARY_TOL) -> Region:
    """Return the unique phase tag of p.

    Curve membership is decided on the defining equation's residual with
    absolute tolerance ``tol``.
    """
    b, s2 = p.beta, p.sigma2
    if abs(b - 1.0) <= tol and abs(s2 - 1.0) <= tol:
        return Region.POINT_1_1
    if b > 1.0:
        if abs(1.0 / b + 1.0 / s2 - 2.0) <= tol:
            return Region.B_I_III
        if abs(b + s2 - 2.0) <= tol:
            return Region.B_II_III
        if s2 > b / (2.0 * b - 1.0):
            return Region.C_I
        if s2 < 2.0 - b:
            return Region.C_II
        return Region.C_III
    if b < 1.0 and abs(s2 - 1.0 / b) <= tol:
        return Region.B_I_II
    return Region.C_I if s2 > 1.0 / b else Region.C_II


@dataclass(frozen=True)
class DerivedConstants:
    v: float
    theta: float
    b_star: float | None = None
    a_star: float | None = None
    p_star: float | None = None
    v_star: float | None = None

    @property
    def has_star(self) -> bool:
        return self.v_star is not None


def derived_constants(p: Params, require_star: bool = False) -> DerivedConstants:
    b, s2 = p.beta, p.sigma2
    v = math.sqrt(2.0 * b * s2)
    theta = math.sqrt(2.0 * b / s2)
    if b > 1.0 and s2 < 1.0:
        b_star = math.sqrt(2.0 * (b - 1.0) / (1.0 - s2))
        a_star = s2 * b_star
        p_star = (s2 + b - 2.0) / (2.0 * (b - 1.0) * (1.0 - s2))
        v_star = (b - s2) / math.sqrt(2.0 * (b - 1.0) * (1.0 - s2))
        return DerivedConstants(v, theta, b_star, a_star, p_star, v_star)
    if require_star:
        raise ParamError(f"starred constants need beta > 1 and sigma2 < 1, got {p}")
    return DerivedConstants(v, theta)


# --- approximation families -------------------------------------------------

FAMILIES = ("B13_plus", "B13_minus", "B23_plus", "B23_minus", "P11_f1", "P11_f2", "P11_f3")

_TARGET_REGION = {
    "B13_plus": Region.B_I_III,
    "B13_minus": Region.B_I_III,
    "B23_plus": Region.B_II_III,
    "B23_minus": Region.B_II_III,
    "P11_f1": Region.POINT_1_1,
    "P11_f2": Region.POINT_1_1,
    "P11_f3": Region.POINT_1_1,
}

# region the perturbed parameters must occupy for finite h
_APPROX_REGION = {
    "B13_plus": Region.C_III,
    "B13_minus": Region.C_I,
    "B23_plus": Region.C_III,
    "B23_minus": Region.C_II,
    "P11_f1": Region.C_I,
    "P11_f2": Region.C_II,
    "P11_f3": Region.C_III,
}


@dataclass(frozen=True)
class ApproxFamily:
    target: Params
    family: str
    h: float

    def __post_init__(self):
        if self.family not in _TARGET_REGION:
            raise ParamError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if not (self.h > 0):
            raise ParamError(f"h must lie in (0, inf], got {self.h!r}")
        want = _TARGET_REGION[self.family]
        got = classify(self.target)
        if got is not want:
            raise ParamError(f"{self.family} needs a target on {want.value}, {self.target} is {got.value}")

    @property
    def is_point_family(self) -> bool:
        return self.family.startswith("P11")

    @property
    def saturation(self) -> float:
        return 1.0 if self.is_point_family else 0.5

    @property
    def h_eff(self) -> float:
        return min(self.h, self.saturation)

    def perturbation(self, t: float) -> float:
        if math.isinf(self.h):
            return 0.0
        return float(t) ** (-self.h)


def defining_residuals(f: ApproxFamily, q: Params, t: float) -> tuple[float, ...]:
    """Residuals of the scalar constraints that define family f at horizon t."""
    e = f.perturbation(t)
    b, s2 = q.beta, q.sigma2
    fam = f.family
    if fam == "B13_plus":
        return (1 / b + 1 / s2 - (2 + e),)
    if fam == "B13_minus":
        return (1 / b + 1 / s2 - (2 - e),)
    if fam == "B23_plus":
        return (b + s2 - (2 + e),)
    if fam == "B23_minus":
        return (b + s2 - (2 - e),)
    if fam == "P11_f1":
        return (1 / b + 1 / s2 - (2 - e), b - s2)
    if fam == "P11_f2":
        return (b + s2 - (2 - e), b - s2)
    return (b + s2 - (2 + e), 1 / b + 1 / s2 - (2 + e))


def make_approximation(f: ApproxFamily, t: float, tol: float = BOUNDARY_TOL) -> Params:
    """Perturbed parameters (beta_t, sigma2_t) of family f at horizon t.

    B13 families keep beta and move sigma2; B23 families keep sigma2 and
    move beta; the (1,1) families move along the diagonal or, for f3,
    along the hyperbola beta*sigma2 = 1.
    """
    if not (t > 1):
        raise ParamError(f"horizon must exceed 1, got {t!r}")
    e = f.perturbation(t)
    if e == 0.0:
        return f.target
    b0, s0 = f.target.beta, f.target.sigma2
    fam = f.family
    try:
        if fam in ("B13_plus", "B13_minus"):
            sign = 1.0 if fam == "B13_plus" else -1.0
            q = Params(b0, 1.0 / (2.0 + sign * e - 1.0 / b0))
        elif fam in ("B23_plus", "B23_minus"):
            sign = 1.0 if fam == "B23_plus" else -1.0
            q = Params(b0 + sign * e, s0)
        elif fam == "P11_f1":
            x = 2.0 / (2.0 - e)
            q = Params(x, x)
        elif fam == "P11_f2":
            x = 1.0 - e / 2.0
            q = Params(x, x)
        else:
            # roots of x^2 - (2+e)x + 1; the small root via the product keeps
            # beta*sigma2 = 1 to rounding
            c = 2.0 + e
            big = (c + math.sqrt(e * (4.0 + e))) / 2.0
            q = Params(big, 1.0 / big)
    except ParamError as exc:
        raise ParamError(f"{fam} infeasible at t={t}: {exc}") from None
    got = classify(q, tol)
    want = _APPROX_REGION[fam]
    # a perturbation below the boundary tolerance is still on the curve
    if got is not want and got is not _TARGET_REGION[fam]:
        raise ParamError(f"{fam} at t={t} lands in {got.value}, expected {want.value}; t too small")
    return q


# --- centerings ----------------------------------------------------------------

@dataclass(frozen=True)
class Centering:
    leading: float
    log_coeff: float

    def value(self, t):
        return self.leading * t - self.log_coeff * math.log(t)


def table_centering(p: Params) -> Centering:
    """Unperturbed centering of the maximum for fixed parameters."""
    r = classify(p)
    k = derived_constants(p)
    if r is Region.C_I:
        return Centering(k.v, 3.0 / (2.0 * k.theta))
    if r in (Region.C_II, Region.B_I_II):
        return Centering(SQRT2, 3.0 / (2.0 * SQRT2))
    if r is Region.C_III:
        return Centering(k.v_star, 0.0)
    if r is Region.B_II_III:
        return Centering(SQRT2, 1.0 / (2.0 * SQRT2))
    return Centering(k.v, 1.0 / (2.0 * k.theta))


def centering(f: ApproxFamily, t: float) -> Centering:
    q = make_approximation(f, t)
    k = derived_constants(q)
    hp = f.h_eff
    fam = f.family
    # on the target curve itself v* collapses to v (B_I_III) or sqrt2
    # (B_II_III and (1,1)); use that value, not a rounded v*
    exact = f.perturbation(t) == 0.0
    if fam == "B13_plus":
        return Centering(k.v if exact else k.v_star, hp / k.theta)
    if fam == "B13_minus":
        return Centering(k.v, (3.0 - 4.0 * hp) / (2.0 * k.theta))
    if fam == "B23_plus":
        return Centering(SQRT2 if exact else k.v_star, hp / SQRT2)
    if fam == "B23_minus":
        return Centering(SQRT2, (3.0 - 4.0 * hp) / (2.0 * SQRT2))
    if fam == "P11_f1":
        return Centering(k.v, (3.0 - 2.0 * hp) / (2.0 * k.theta))
    if fam == "P11_f2":
        return Centering(SQRT2, (3.0 - 2.0 * hp) / (2.0 * SQRT2))
    return Centering(SQRT2 if exact else k.v_star, hp / (2.0 * SQRT2))


# --- limiting intensity constants -------------------------------------------


def c_constant(f: ApproxFamily, tol: float = 1e-10) -> float:
    """Constant multiplying the limiting intensity for family f.

    The decoration prefactors (C_star, C(rho), gamma_rho) are excluded.
    At the critical h the constant is an integral, evaluated adaptively.
    """
    fam = f.family
    b, s2 = f.target.beta, f.target.sigma2
    sig = math.sqrt(s2)
    k = derived_constants(f.target)
    gap = k.theta - k.v
    h = f.h
    crit = f.saturation

    if fam == "B13_minus":
        if h < crit:
            return 2.0 * gap / (b * b * sig**3)
        if h > crit:
            return 2.0 / (sig * gap)
        return 2.0 * quadrature(
            lambda lam: gap * lam / sig**3 * math.exp(-b * lam - gap * gap * lam * lam / (2 * s2)),
            0.0, math.inf, tol / 2,
        )
    if fam == "B13_plus":
        if h < crit:
            return math.sqrt(2 * math.pi) / (1.0 - s2) * k.v / gap
        tail = 2.0 / (sig * gap)
        if h > crit:
            return tail
        extra = quadrature(
            lambda xi: math.sqrt(2 * b) / (1.0 - s2) * math.exp(-gap * gap * xi * xi / (2 * s2)),
            0.0, math.inf, tol / 2,
        )
        return tail + extra
    if fam == "B23_plus":
        w = 1.0 - s2
        if h < crit:
            return math.sqrt(math.pi / 2) / (w * w)
        if h > crit:
            return 1.0 / (SQRT2 * w)
        lo = -1.0 / (2 * w * w)
        return quadrature(
            lambda xi: (1.0 / (SQRT2 * w) + SQRT2 * w * xi) * math.exp(-w * w * xi * xi),
            lo, math.inf, tol,
        )
    if fam == "B23_minus":
        w = 1.0 - s2
        if h < crit:
            return SQRT2 * w
        if h > crit:
            return 1.0 / (SQRT2 * w)
        return SQRT2 * quadrature(
            lambda xi: w * xi * math.exp(-xi - w * w * xi * xi), 0.0, math.inf, tol / 2
        )
    if fam in ("P11_f1", "P11_f2"):
        if h != crit:
            return 1.0
        # sqrt(2/pi) * int_0^inf z^2 e^{-z^2/2} dz = 1 leaves int_0^1 e^{-lam}
        return quadrature(lambda lam: math.exp(-lam), 0.0, 1.0, tol)
    # P11_f3
    if h < crit:
        return math.sqrt(math.pi / SQRT2)
    if h > crit:
        return 1.0
    return quadrature(_f3_inner, 0.0, 1.0, tol / 2)


def _f3_inner(xi: float) -> float:
    # sqrt(2/pi) int_0^inf z^2 exp(c z - z^2/2) dz, closed form in c
    c = math.sqrt(2.0 * xi * (1.0 - xi))
    phi_tail = 0.5 * math.erfc(-c / SQRT2)  # P(N <= c)
    g = math.exp(-c * c / 2) / math.sqrt(2 * math.pi)
    # int_{-c}^inf (w+c)^2 e^{-w^2/2} dw, times e^{c^2/2}
    moment = (1 + c * c) * phi_tail + c * g
    return math.sqrt(2.0 / math.pi) * math.exp(c * c / 2) * math.sqrt(2 * math.pi) * moment
