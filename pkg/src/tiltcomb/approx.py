"""Gaussian point-mass approximation and asymptotic enumeration.

``gaussian_point_mass`` evaluates (h/sigma) phi((m - mu)/sigma) in log space;
``asymptotic_count`` turns it into a count estimate through the identity
P(T = n) = r(n) x^n prod_i c_i(x).  ``closed_form_asym`` collects the
classical leading-order formulas (Hardy-Ramanujan, Hagis, Meinardus,
Romik, ...) and the quadrature-based multiset/selection calibrations.

Error budgets report the structural terms sigma_max/sigma and
sigma * lambda^|M| of the local limit theorem.  They are diagnostics only:
the constants in front of them are not known.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .ensemble import (
    DEFAULT_C2,
    DEFAULT_C3,
    EnsembleSpec,
    Family,
    MomentSummary,
    StabilizingSet,
    aggregate_moments,
    find_m_set,
    moment_profile,
    solve_tilt,
)
from .errors import (
    DomainError,
    EmptyStabilizingSet,
    UnsupportedTarget,
    ZeroVariance,
)
from .special import (
    PARTITION_C,
    bisect,
    dilog,
    integrate_half_line,
    log_std_normal_pdf,
    zeta,
)

DEFAULT_LAMBDA = math.exp(-1.0)
ZETA_PRIME_MINUS_ONE = -0.16542114370045092


@dataclass(frozen=True)
class PointMassEstimate:
    m: int
    log_value: float
    mu: float
    sigma: float
    h: int

    @property
    def value(self):
        return math.exp(self.log_value)


def gaussian_point_mass(moments: MomentSummary, m: int, h: Optional[int] = None) -> PointMassEstimate:
    """log of (h/sigma) phi((m - mu)/sigma) for T_B (T when B covers everything)."""
    if moments.var_B <= 0:
        raise ZeroVariance("point mass needs sigma > 0")
    if h is None:
        h = moments.span_B or 1
    sigma = math.sqrt(moments.var_B)
    z = (m - moments.mu_B) / sigma
    lv = math.log(h) - math.log(sigma) + log_std_normal_pdf(z)
    return PointMassEstimate(int(m), lv, moments.mu_B, sigma, int(h))


# ---------------------------------------------------------------------------
# error budget


@dataclass(frozen=True)
class ErrorBudget:
    """Structural error terms; never a certified bound."""

    term_ratio: float  # sigma_max / sigma
    term_gap: float  # sigma * lambda^|M|
    lam: float
    M_size: int
    C2: float
    C3: float
    # two-component terms, None when the complement is degenerate
    at_exp: Optional[float] = None  # exp(-(n - mu_B)/sigma_B)
    at_shift: Optional[float] = None  # sigma_B |mu_err| / sigma_Bc^2
    at_shift_sq: Optional[float] = None  # mu_err^2 / sigma_Bc^2
    at_ratio_c: Optional[float] = None  # sigma_Bc,max / sigma_Bc
    at_gap_c: Optional[float] = None  # sigma_Bc * lambda^|M_Bc|
    M_Bc_size: Optional[int] = None

    def to_dict(self):
        return asdict(self)


def budget_from(moments: MomentSummary, mset: StabilizingSet, n: int,
                lam: float = DEFAULT_LAMBDA) -> ErrorBudget:
    """Assemble an ErrorBudget from moments and the stabilizing set alone."""
    if not 0 < lam < 1:
        raise DomainError(f"lambda must lie in (0, 1), got {lam}")
    sigma = math.sqrt(moments.var)
    ratio = math.sqrt(moments.var_max) / sigma if sigma > 0 else math.inf
    gap = sigma * lam ** mset.size
    extra = {}
    if moments.var_Bc > 0:
        s_b = math.sqrt(moments.var_B)
        s_c = math.sqrt(moments.var_Bc)
        # empty-B conventions: the exponential and shift terms vanish
        extra["at_exp"] = math.exp(-(n - moments.mu_B) / s_b) if s_b > 0 else 0.0
        extra["at_shift"] = s_b * abs(moments.mu_err) / moments.var_Bc
        extra["at_shift_sq"] = moments.mu_err ** 2 / moments.var_Bc
        extra["at_ratio_c"] = math.sqrt(moments.var_Bc_max) / s_c
        extra["at_gap_c"] = s_c * lam ** mset.size_Bc
        extra["M_Bc_size"] = mset.size_Bc
    return ErrorBudget(ratio, gap, lam, mset.size, mset.C2, mset.C3, **extra)


def qlclt_error_budget(ens: EnsembleSpec, x: float, n: int, B=None, *, C2: float = DEFAULT_C2,
                       C3: float = DEFAULT_C3, lam: float = DEFAULT_LAMBDA) -> ErrorBudget:
    moments = aggregate_moments(ens, x, B, n)
    mset = find_m_set(ens, x, C2, C3, B, n)
    if mset.size == 0:
        warnings.warn(EmptyStabilizingSet(f"no index satisfies the M-set inequalities at n={n}"))
    return budget_from(moments, mset, n, lam)


# ---------------------------------------------------------------------------
# generic asymptotic count


@dataclass(frozen=True)
class CountEstimate:
    n: int
    x: float
    log_value: float
    log_point_mass: float
    sum_log_c: float
    sigma: float
    h: int
    M_size: int


def asymptotic_count(ens: EnsembleSpec, n: int, x: Optional[float] = None, *,
                     C2: float = DEFAULT_C2, C3: float = DEFAULT_C3) -> CountEstimate:
    """log of the local-limit count estimate at the calibrated tilt.

    log p = log P_hat(T = n) - n log x - sum_{i in U, i<=n} log c_i(x), plus
    log n! for assemblies (labelled counts).
    """
    n = int(n)
    full = ens.with_n_max(max(ens.n_max, n))
    if x is None:
        x = solve_tilt(full, n)
    moments = aggregate_moments(full, x, None, n)
    h = moments.span_B or 1
    if n % h:
        raise UnsupportedTarget(f"span {h} does not divide n = {n}")
    mset = find_m_set(full, x, C2, C3, None, n)
    if mset.size == 0:
        warnings.warn(EmptyStabilizingSet(f"no index satisfies the M-set inequalities at n={n}"))
    pm = gaussian_point_mass(moments, n, h)
    slc = math.fsum(moment_profile(full, x, n).logc)
    lv = pm.log_value - n * math.log(x) - slc
    if ens.family is Family.ASSEMBLY:
        lv += math.lgamma(n + 1)
    return CountEstimate(n, float(x), lv, pm.log_value, slc, pm.sigma, h, mset.size)


# ---------------------------------------------------------------------------
# closed forms


class ClosedFormKind(str, Enum):
    HARDY_RAMANUJAN = "hardy_ramanujan"
    NO_SMALL_PARTS = "no_small_parts"
    LEAST_GAP = "least_gap"
    NO_ONES = "no_ones"
    HAGIS = "hagis"
    MEINARDUS_PROGRESSION = "meinardus_progression"
    ROMIK_BOUNDED_PARTS = "romik_bounded_parts"
    MULTISET_POLYNOMIAL_COLORS = "multiset_polynomial_colors"
    SELECTION_POLYNOMIAL_COLORS = "selection_polynomial_colors"
    PLANE_PARTITION_CALIBRATION = "plane_partition_calibration"


@dataclass(frozen=True)
class ClosedFormResult:
    kind: ClosedFormKind
    n: int
    log_value: float
    constants: dict = field(default_factory=dict)


def hardy_ramanujan_log(n):
    return 2.0 * PARTITION_C * math.sqrt(n) - math.log(4.0 * math.sqrt(3.0) * n)


def _partition_bose_integral(lower):
    """int_lower^inf y^2 e^{-cy} / (1 - e^{-cy})^2 dy."""
    c = PARTITION_C

    def f(y):
        if y == 0.0:
            return 1.0 / c ** 2
        return y * y * math.exp(-c * y) / math.expm1(-c * y) ** 2

    return integrate_half_line(f, lower)


def tilt_constant_c_rbt(r: float, B: float, t=math.inf) -> float:
    """c_{r,B,t} for part sizes ~ B k^r and multiplicities at most t."""
    if r < 1 or B <= 0:
        raise DomainError(f"need r >= 1 and B > 0, got r={r}, B={B}")
    if t is None or math.isinf(t):
        factor = 1.0
    else:
        if t < 1 or int(t) != t:
            raise DomainError(f"t must be a positive integer or infinity, got {t}")
        factor = 1.0 - (1.0 + t) ** (-1.0 / r)
    inner = factor / (B ** (1.0 / r) * r) * math.gamma(1.0 / r + 1.0) * zeta(1.0 / r + 1.0)
    return inner ** (r / (r + 1.0))


def romik_alpha(t: float) -> float:
    """Root of alpha^2 = Li_2(1 - e^{-alpha t}) on [1e-8, 10]."""
    if t <= 0:
        raise DomainError(f"t must be positive, got {t}")
    return bisect(lambda a: a * a - dilog(-math.expm1(-a * t)), 1e-8, 10.0, max_iter=200)


def romik_constants(t: float):
    a = romik_alpha(t)
    e = math.exp(-a * t)
    G = a / (2.0 * math.pi * math.sqrt(2.0 - (t * t + 2.0) * e))
    H = 2.0 * a - t * math.log1p(-e)
    return a, G, H


def _poly_integrals(r, B, d, a_d, plus):
    """(first, second) calibration integrals for polynomial colour counts.

    first  = int a_d B^{d+1} y^{r(d+1)} e^{-u} / (1 -/+ e^{-u}) dy,
    second = int a_d B^{d+2} y^{r(d+2)} e^{-u} / (1 -/+ e^{-u})^2 dy,
    with u = B y^r (minus sign for multisets, plus for selections).
    """
    sgn = 1.0 if plus else -1.0

    def first(y):
        u = B * y ** r
        if u == 0.0:
            return a_d * B ** d if (d == 0 and not plus) else 0.0
        den = 1.0 + sgn * math.exp(-u)
        return a_d * B ** (d + 1) * y ** (r * (d + 1)) * math.exp(-u) / den

    def second(y):
        u = B * y ** r
        if u == 0.0:
            return a_d * B ** d if (d == 0 and not plus) else 0.0
        den = (1.0 + sgn * math.exp(-u)) ** 2
        return a_d * B ** (d + 2) * y ** (r * (d + 2)) * math.exp(-u) / den

    return first, second


def polynomial_color_constants(r: float, B: float, coeffs, plus: bool, rel_tol: float = 1e-10):
    """(c1, c2) or (d1, d2) by adaptive quadrature on the half line."""
    coeffs = tuple(coeffs)
    d = len(coeffs) - 1
    a_d = coeffs[-1]
    if a_d == 0:
        raise DomainError("leading colour coefficient must be non-zero")
    f1, f2 = _poly_integrals(r, B, d, a_d, plus)
    return integrate_half_line(f1, 0.0, rel_tol=rel_tol), integrate_half_line(f2, 0.0, rel_tol=rel_tol)


def _polynomial_estimate(n, r, B, coeffs, plus):
    coeffs = tuple(coeffs)
    d = len(coeffs) - 1
    k1, k2 = polynomial_color_constants(r, B, coeffs, plus)
    expo = r / (r * d + r + 1.0)
    alpha = (k1 / n) ** expo
    sigma2 = k2 * (n / k1) ** ((d + 2 + 1.0 / r) / (d + 1 + 1.0 / r))
    total = 0.0
    k = 1
    parts = []
    while True:
        u = B * k ** r
        if u > n:
            break
        parts.append(u)
        k += 1
    u = np.array(parts, dtype=float)
    m = np.zeros_like(u)
    for j, a in enumerate(coeffs):
        m += a * u ** j
    if plus:
        total = float(np.sum(m * np.log1p(np.exp(-alpha * u))))
    else:
        total = float(-np.sum(m * np.log(-np.expm1(-alpha * u))))
    lv = alpha * n + total - 0.5 * math.log(2.0 * math.pi * sigma2)
    names = ("d1", "d2") if plus else ("c1", "c2")
    return lv, {names[0]: k1, names[1]: k2, "alpha": alpha, "sigma2": sigma2}


def closed_form_asym(kind, n: int, **params) -> ClosedFormResult:
    """Leading-order log estimate for one of the catalogued formulas.

    Parameters by kind: no_small_parts(r), least_gap(r), hagis(t),
    meinardus_progression(a, k), romik_bounded_parts(t),
    multiset/selection_polynomial_colors(r, B, coeffs=(a_0..a_d)).
    Kinds expressed relative to p(n) accept ``log_pn`` to substitute an
    exact value for the Hardy-Ramanujan leading term.
    """
    kind = ClosedFormKind(kind)
    n = int(n)
    if n < 1:
        raise DomainError("n must be positive")
    c = PARTITION_C
    log_pn = params.get("log_pn")
    if log_pn is None:
        log_pn = hardy_ramanujan_log(n)
    sq = math.sqrt(n)

    if kind is ClosedFormKind.HARDY_RAMANUJAN:
        return ClosedFormResult(kind, n, hardy_ramanujan_log(n), {"c": c})

    if kind is ClosedFormKind.NO_ONES:
        return ClosedFormResult(kind, n, log_pn + math.log(c / sq), {"c": c})

    if kind is ClosedFormKind.NO_SMALL_PARTS:
        r = int(params.get("r", 2))
        if r < 1:
            raise DomainError("r must be >= 1")
        integral = _partition_bose_integral(r / sq)
        lv = (log_pn + (r - 1) * math.log(c / sq) + math.lgamma(r)
              + 0.5 * math.log((2.0 / c) / integral))
        return ClosedFormResult(kind, n, lv, {"c": c, "integral": integral})

    if kind is ClosedFormKind.LEAST_GAP:
        r = int(params.get("r", 1))
        if r < 1:
            raise DomainError("r must be >= 1")
        lv = log_pn - c * math.comb(r, 2) / sq + r * math.log(c / sq) + math.lgamma(r + 1)
        return ClosedFormResult(kind, n, lv, {"c": c})

    if kind is ClosedFormKind.HAGIS:
        t = int(params.get("t", 1))
        if t < 1:
            raise DomainError("t must be a positive integer")
        rr = t / 24.0
        E = 4.0 * math.pi * math.sqrt(n + rr)
        s = (t + 1.0) ** -0.5
        lv = (0.5 * math.log(12.0) + 1.5 * math.log(s) + 0.25 * math.log(t)
              - 0.75 * math.log(24.0 * n + t) + s * E / math.sqrt(24.0))
        return ClosedFormResult(kind, n, lv, {"r": rr, "E": E, "s": s})

    if kind is ClosedFormKind.MEINARDUS_PROGRESSION:
        a = int(params["a"])
        k = int(params["k"])
        if not (1 <= a < k) or math.gcd(a, k) != 1:
            raise DomainError(f"need 1 <= a < k with gcd(a, k) = 1, got a={a}, k={k}")
        q = a / k
        logC = (math.lgamma(q) + (q - 1.0) * math.log(math.pi) - (1.5 + q / 2.0) * math.log(2.0)
                - (q / 2.0) * math.log(3.0) + (-0.5 + q / 2.0) * math.log(k))
        kappa = -0.5 * (1.0 + q)
        lv = logC + kappa * math.log(n) + math.pi * math.sqrt(2.0 * n / (3.0 * k))
        return ClosedFormResult(kind, n, lv, {"C": math.exp(logC), "kappa": kappa})

    if kind is ClosedFormKind.ROMIK_BOUNDED_PARTS:
        t = float(params["t"])
        a, G, H = romik_constants(t)
        lv = math.log(G) - math.log(n) + H * sq
        return ClosedFormResult(kind, n, lv, {"alpha": a, "G": G, "H": H})

    if kind in (ClosedFormKind.MULTISET_POLYNOMIAL_COLORS, ClosedFormKind.SELECTION_POLYNOMIAL_COLORS):
        r = float(params.get("r", 1))
        B = float(params.get("B", 1))
        coeffs = params.get("coeffs", (1,))
        if r < 1 or B <= 0:
            raise DomainError("need r >= 1 and B > 0")
        lv, consts = _polynomial_estimate(n, r, B, coeffs,
                                          kind is ClosedFormKind.SELECTION_POLYNOMIAL_COLORS)
        return ClosedFormResult(kind, n, lv, consts)

    # plane partitions: geometric array with x = exp(-(2 zeta(3)/n)^{1/3})
    alpha = (2.0 * zeta(3.0) / n) ** (1.0 / 3.0)
    i = np.arange(1, n + 1, dtype=float)
    q = np.exp(-alpha * i)
    log_prod = float(-np.sum(i * np.log1p(-q)))
    var = float(np.sum(i ** 3 * q / (1.0 - q) ** 2))
    lv = alpha * n + log_prod - 0.5 * math.log(2.0 * math.pi * var)
    z3 = zeta(3.0)
    # Wright's leading term with constant zeta(3)^{7/36} 2^{-11/36} (3 pi)^{-1/2} e^{zeta'(-1)}
    wright = (7.0 / 36.0 * math.log(z3) - 11.0 / 36.0 * math.log(2.0) - 0.5 * math.log(3.0 * math.pi)
              + ZETA_PRIME_MINUS_ONE - 25.0 / 36.0 * math.log(n)
              + 3.0 * 2.0 ** (-2.0 / 3.0) * z3 ** (1.0 / 3.0) * n ** (2.0 / 3.0))
    return ClosedFormResult(kind, n, lv, {"alpha": alpha, "sigma2": var, "log_wright": wright})


# ---------------------------------------------------------------------------
# smallest gap moments


def gap_moment_prediction(n: float, s: float, r: float = 1.0, B: float = 1.0) -> float:
    """Leading-order E I^s for the smallest gap I of parts u_k ~ B k^r.

    Laplace-type evaluation of sum_k u_k^s (1 - x^{u_k}) x^{binom(u_k, 2)}
    with x = exp(-c/n^{r/(r+1)}), c = c_{r,B,inf}:

        E I^s ~ n^{(rs-r+1)/(2(r+1))} c B^{s+1} Gamma((rs+r+1)/(2r))
                / (2 r (c B^2 / 2)^{(rs+r+1)/(2r)}).

    For s = r = B = 1 this is (3n/2)^{1/4}.
    """
    if s < 1 or r < 1 or B <= 0 or n <= 0:
        raise DomainError(f"need n > 0, s >= 1, r >= 1, B > 0 (got n={n}, s={s}, r={r}, B={B})")
    c = tilt_constant_c_rbt(r, B, math.inf)
    p = (r * s + r + 1.0) / (2.0 * r)
    log_val = (((r * s - r + 1.0) / (2.0 * (r + 1.0))) * math.log(n) + math.log(c)
               + (s + 1.0) * math.log(B) + math.lgamma(p) - math.log(2.0 * r)
               - p * math.log(c * B * B / 2.0))
    return math.exp(log_val)


# ---------------------------------------------------------------------------
# local limit discrepancy against the exact oracle


@dataclass(frozen=True)
class LocalLimitCheck:
    n: int
    x: float
    log_exact_point_mass: float  # log P(T = n), exact
    log_gaussian: float  # log (h/sigma) phi((n - mu)/sigma)
    delta: float  # |(sigma/h) P(T = n) - phi((n - mu)/sigma)|
    sigma: float
    h: int


def qlclt_delta(ens: EnsembleSpec, n: int, x: Optional[float] = None, **kw) -> LocalLimitCheck:
    """Compare the exact P(T = n) with its Gaussian local approximation."""
    from .oracle import coeff_table

    n = int(n)
    full = ens.with_n_max(max(ens.n_max, n))
    if x is None:
        x = solve_tilt(full, n)
    moments = aggregate_moments(full, x, None, n)
    pm = gaussian_point_mass(moments, n)
    table = coeff_table(full, None, n, **kw)
    slc = math.fsum(moment_profile(full, x, n).logc)
    log_exact = table.log_coeff(n) + n * math.log(x) + slc
    scale = math.log(pm.sigma) - math.log(pm.h)
    delta = abs(math.exp(log_exact + scale) - math.exp(pm.log_value + scale))
    return LocalLimitCheck(n, float(x), log_exact, pm.log_value, delta, pm.sigma, pm.h)
