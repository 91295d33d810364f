"""Total variation between conditioned and independent components.

``normal_tv`` is the Gaussian limit d_TV(N(0, s^2), N(0, 1)); the term
sheet collects every structural term of the two-component bound, and
``principle_verdict`` turns them into a finite-n classification.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np

from .approx import DEFAULT_LAMBDA, ErrorBudget, budget_from
from .ensemble import (
    DEFAULT_C2,
    DEFAULT_C3,
    EnsembleSpec,
    aggregate_moments,
    find_m_set,
    solve_tilt,
)
from .errors import DegenerateComplement, DomainError, ResourceLimit
from .special import std_normal_cdf

# exact TV is attached automatically up to this size
EXACT_TV_LIMIT = 5000
TREND_SLOPE = -0.05


def normal_tv(sigma1: float) -> float:
    """d_TV(N(0, sigma1^2), N(0, 1)) from the density crossing points.

    The densities cross at +-x* with x*^2 = 2 sigma1^2 ln(sigma1)/(sigma1^2 - 1),
    and the distance is 2 (Phi(x*/sigma1) - Phi(x*)).
    """
    s = float(sigma1)
    if not (0.0 < s <= 1.0):
        raise DomainError(f"sigma1 must lie in (0, 1], got {sigma1}")
    if s == 1.0:
        return 0.0
    xs = math.sqrt(2.0 * s * s * math.log(s) / (s * s - 1.0))
    return 2.0 * (std_normal_cdf(xs / s) - std_normal_cdf(xs))


def lattice_normal_tv(sigma1: float, h: int = 1) -> float:
    """Gaussian TV limit when the complement sum lives on a lattice of span h.

    Conditioning puts the B-part on one residue class mod h, so mass
    (1 - 1/h) is misplaced outright; on the surviving class the density
    ratio is h * phi_{sigma1}/phi.  With crossing point
    w_h^2 = 2 sigma1^2 ln(h/sigma1)/(1 - sigma1^2):

        TV = (1 - 1/h)/2 + (4h Phi(w_h/sigma1) - 4 Phi(w_h) - 3(h - 1)) / (2h).

    h = 1 gives normal_tv.
    """
    s = float(sigma1)
    h = int(h)
    if not (0.0 < s <= 1.0) or h < 1:
        raise DomainError(f"need 0 < sigma1 <= 1 and h >= 1, got {sigma1}, {h}")
    if h == 1:
        return normal_tv(s)
    if s == 1.0:
        return 0.5 * (1.0 - 1.0 / h) + (h - 1.0) / (2.0 * h)
    w = math.sqrt(2.0 * s * s * math.log(h / s) / (1.0 - s * s))
    integral = 4.0 * h * std_normal_cdf(w / s) - 4.0 * std_normal_cdf(w) - 3.0 * (h - 1.0)
    return 0.5 * (1.0 - 1.0 / h) + integral / (2.0 * h)


# ---------------------------------------------------------------------------
# term sheet


@dataclass(frozen=True)
class TermSheet:
    n: int
    x: float
    budget: ErrorBudget
    sigma1_sq: float
    normal_tv: float
    lattice_tv: float
    complement_span: Optional[int]
    mu_err: float
    sigma_B: float
    sigma_Bc: float
    n_minus_mu_B: float

    def to_json(self) -> dict:
        """One key per named term."""
        b = self.budget
        return {
            "n": self.n,
            "x": self.x,
            "exp_term": b.at_exp,
            "mean_shift": b.at_shift,
            "mean_shift_sq": b.at_shift_sq,
            "sigma_max_over_sigma": b.term_ratio,
            "sigma_lambda_M": b.term_gap,
            "sigma_Bc_max_over_sigma_Bc": b.at_ratio_c,
            "sigma_Bc_lambda_M_Bc": b.at_gap_c,
            "M_size": b.M_size,
            "M_Bc_size": b.M_Bc_size,
            "lambda": b.lam,
            "sigma1_sq": self.sigma1_sq,
            "d_TV_normal": self.normal_tv,
            "d_TV_lattice_normal": self.lattice_tv,
            "complement_span": self.complement_span,
        }


def resolve_subset(B, n: int):
    """B may be None (all of [n]), an iterable, or a callable n -> iterable."""
    if callable(B):
        B = B(n)
    if B is None:
        return None
    return sorted(set(int(b) for b in B if 1 <= int(b) <= n))


def at_term_sheet(ens: EnsembleSpec, x: Optional[float], n: int, B, *, C2: float = DEFAULT_C2,
                  C3: float = DEFAULT_C3, lam: float = DEFAULT_LAMBDA) -> TermSheet:
    n = int(n)
    full = ens.with_n_max(max(ens.n_max, n))
    if x is None:
        x = solve_tilt(full, n)
    B = resolve_subset(B, n)
    moments = aggregate_moments(full, x, B, n)
    if moments.var_Bc <= 0:
        raise DegenerateComplement("complement of B carries no variance")
    mset = find_m_set(full, x, C2, C3, B, n)
    budget = budget_from(moments, mset, n, lam)
    s1 = math.sqrt(moments.sigma1_sq)
    comp = aggregate_moments(full, x, _complement(full, B, n), n)
    h_c = comp.span_B or 1
    return TermSheet(n, float(x), budget, moments.sigma1_sq, normal_tv(s1),
                     lattice_normal_tv(s1, h_c), comp.span_B, moments.mu_err,
                     math.sqrt(moments.var_B), math.sqrt(moments.var_Bc), n - moments.mu_B)


def _complement(ens, B, n):
    idx = ens.indices(n)
    if B is None:
        return []
    keep = set(B)
    return [int(i) for i in idx if int(i) not in keep]


# ---------------------------------------------------------------------------
# verdict


class Verdict(str, Enum):
    TENDS_TO_ZERO = "TendsToZero"
    NONTRIVIAL_LIMIT = "NontrivialLimit"
    GREEDY_FAILURE = "GreedyFailure"
    INCONCLUSIVE = "Inconclusive"


CONDITIONS = ("mu_err_over_sigma_Bc", "sigma_B_over_gap", "sigma_max_over_sigma", "sigma_lambda_M",
              "sigma_Bc_max_over_sigma_Bc", "sigma_Bc_lambda_M_Bc", "sigma_B_over_sigma_Bc",
              "one_minus_sigma1_sq")
# conditions that must vanish for either a zero or a Gaussian limit
_STRUCTURAL = CONDITIONS[:6]


@dataclass(frozen=True)
class TVReport:
    ensemble: str
    B: str
    n: int
    sigma1_sq: float
    normal_tv: float
    lattice_tv: float
    verdict: Verdict
    conditions: dict
    passed: dict
    budget: Optional[ErrorBudget] = None
    exact_tv: Optional[float] = None
    grid: tuple = ()
    notes: tuple = field(default_factory=tuple)

    def to_json(self) -> dict:
        out = asdict(self)
        out["verdict"] = self.verdict.value
        return out


def _conditions(sheet: TermSheet) -> dict:
    b = sheet.budget
    return {
        "mu_err_over_sigma_Bc": abs(sheet.mu_err) / sheet.sigma_Bc,
        "sigma_B_over_gap": sheet.sigma_B / sheet.n_minus_mu_B if sheet.n_minus_mu_B > 0 else math.inf,
        "sigma_max_over_sigma": b.term_ratio,
        "sigma_lambda_M": b.term_gap,
        "sigma_Bc_max_over_sigma_Bc": b.at_ratio_c,
        "sigma_Bc_lambda_M_Bc": b.at_gap_c,
        "sigma_B_over_sigma_Bc": sheet.sigma_B / sheet.sigma_Bc,
        "one_minus_sigma1_sq": 1.0 - sheet.sigma1_sq,
    }


def _trend_ok(ns, values) -> bool:
    vals = np.asarray(values, dtype=float)
    if len(vals) < 2 or np.any(~np.isfinite(vals)):
        return False
    if np.all(vals == 0):
        return True
    if np.any(vals <= 0) or np.any(np.diff(vals) > 0):
        return False
    slope = np.polyfit(np.log(ns), np.log(vals), 1)[0]
    return slope <= TREND_SLOPE


def principle_verdict(ens: EnsembleSpec, n: Union[int, Sequence[int]], B, thresholds: Optional[dict] = None,
                      *, exact: Optional[bool] = None, C2: float = DEFAULT_C2, C3: float = DEFAULT_C3,
                      lam: float = DEFAULT_LAMBDA, B_label: Optional[str] = None) -> TVReport:
    """Classify the two-component approximation for B at n (or along an n-grid).

    Each condition passes if it is below its threshold (default 0.05) at the
    largest n, or, given a grid, if it decreases along the grid with
    log-log slope <= -0.05.  All structural conditions passing plus
    sigma1^2 -> 1 gives TendsToZero; structural conditions passing with
    sigma1^2 bounded away from 0 and 1 gives NontrivialLimit; an empty
    complement or vanishing sigma1^2 is GreedyFailure.
    """
    grid = [int(n)] if np.isscalar(n) else [int(v) for v in n]
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise DomainError("n-grid must be strictly increasing")
    thr = {k: 0.05 for k in CONDITIONS}
    if thresholds:
        unknown = set(thresholds) - set(CONDITIONS)
        if unknown:
            raise DomainError(f"unknown thresholds {sorted(unknown)}")
        thr.update(thresholds)
    label = B_label if B_label is not None else ("all" if B is None else "custom")
    top = grid[-1]
    sheets = []
    try:
        for m in grid:
            sheets.append(at_term_sheet(ens, None, m, B, C2=C2, C3=C3, lam=lam))
    except DegenerateComplement:
        return TVReport(ens.key(), label, top, 0.0, 1.0, 1.0, Verdict.GREEDY_FAILURE,
                        {"one_minus_sigma1_sq": 1.0}, {"one_minus_sigma1_sq": False},
                        notes=("complement of B is empty or degenerate",))
    rows = [_conditions(s) for s in sheets]
    last = rows[-1]
    passed = {}
    for k in CONDITIONS:
        ok = last[k] <= thr[k]
        if not ok and len(grid) > 1:
            ok = _trend_ok(grid, [r[k] for r in rows])
        passed[k] = bool(ok)
    s1 = sheets[-1].sigma1_sq
    structural = all(passed[k] for k in _STRUCTURAL)
    if s1 <= thr["one_minus_sigma1_sq"]:
        verdict = Verdict.GREEDY_FAILURE
    elif structural and passed["one_minus_sigma1_sq"] and passed["sigma_B_over_sigma_Bc"]:
        verdict = Verdict.TENDS_TO_ZERO
    elif structural:
        stable = True
        if len(grid) > 1:
            s1s = [s.sigma1_sq for s in sheets]
            stable = max(s1s) - min(s1s) <= 0.1
        verdict = Verdict.NONTRIVIAL_LIMIT if stable else Verdict.INCONCLUSIVE
    else:
        verdict = Verdict.INCONCLUSIVE
    ex = None
    notes = []
    if exact or (exact is None and top <= EXACT_TV_LIMIT):
        from .oracle import exact_tv

        try:
            ex = exact_tv(ens, resolve_subset(B, top), sheets[-1].x, top)
        except ResourceLimit as err:
            notes.append(f"exact TV skipped: {err}")
    grid_rows = tuple({"n": m, "sigma1_sq": s.sigma1_sq, **r} for m, s, r in zip(grid, sheets, rows))
    return TVReport(ens.key(), label, top, s1, sheets[-1].normal_tv, sheets[-1].lattice_tv, verdict,
                    last, passed, sheets[-1].budget, ex, grid_rows, tuple(notes))
