"""Tilted independent-process ensembles for decomposable structures.

An ensemble fixes the weight family g_i(k), the allowed part sizes U, the
per-index multiplicity intervals R_i and the colour counts m_i.  At a tilt
x > 0 every index i carries an independent Z_i with

    P(Z_i = k) = c_i(x) g_i(k) x^(i k),   k in R_i,

and Z_i = 0 almost surely when i is not in U.  The weighted sum
T_B = sum_{i in B} i Z_i is what every downstream module studies.

All probability arithmetic is done in log space; per-index moments are
evaluated vectorised with numpy (closed forms where the family has one).
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy.special import gammaln

from .errors import (
    AllDegenerate,
    BracketFailure,
    Divergent,
    EmptySupport,
    InvalidColors,
    NonContiguousMultiplicity,
    ParseError,
    SupportMismatch,
)
from .special import PARTITION_C, lambert_w_expansion

TAIL_EPS = 1e-15
DEFAULT_C2 = 10.0
DEFAULT_C3 = 0.1
# bounded supports up to this width are summed directly, vectorised over i
_DIRECT_WIDTH = 256
_CHUNK = 20000


class Family(str, Enum):
    MULTISET = "multiset"
    SELECTION = "selection"
    ASSEMBLY = "assembly"


# ---------------------------------------------------------------------------
# part sizes, multiplicities, colours


@dataclass(frozen=True)
class PartSizeSet:
    """Allowed component sizes U.

    kinds: ``all``; ``list`` (explicit sizes); ``progression`` (a + l*k,
    l >= 0); ``polynomial`` (B * k^r, k >= 1); ``binomial`` (C(k+r-1, r),
    k >= 1); ``upto`` ({1..K}).
    """

    kind: str = "all"
    params: tuple = ()

    def members(self, n: int) -> np.ndarray:
        return _members(self, int(n))

    def __contains__(self, i: int) -> bool:
        i = int(i)
        if i < 1:
            return False
        if self.kind == "all":
            return True
        if self.kind == "upto":
            return i <= self.params[0]
        if self.kind == "progression":
            a, k = self.params
            return i >= a and (i - a) % k == 0
        members = self.members(i)
        return members.size > 0 and members[-1] == i

    def first(self) -> int:
        if self.kind == "list":
            return min(self.params)
        members = self.members(1 << 20)
        if members.size == 0:
            raise EmptySupport("part-size set is empty")
        return int(members[0])

    def describe(self) -> str:
        if self.kind in ("all",):
            return "all"
        return self.kind + ":" + ",".join(str(p) for p in self.params)


@lru_cache(maxsize=256)
def _members(pss: PartSizeSet, n: int) -> np.ndarray:
    kind, p = pss.kind, pss.params
    if kind == "all":
        out = np.arange(1, n + 1, dtype=np.int64)
    elif kind == "upto":
        out = np.arange(1, min(n, p[0]) + 1, dtype=np.int64)
    elif kind == "list":
        out = np.array(sorted(v for v in set(p) if 1 <= v <= n), dtype=np.int64)
    elif kind == "progression":
        a, k = p
        out = np.arange(a, n + 1, k, dtype=np.int64) if a <= n else np.zeros(0, np.int64)
    elif kind == "polynomial":
        b, r = p
        vals = []
        k = 1
        while b * k ** r <= n:
            vals.append(b * k ** r)
            k += 1
        out = np.array(vals, dtype=np.int64)
    elif kind == "binomial":
        (r,) = p
        vals = []
        k = 1
        while math.comb(k + r - 1, r) <= n:
            vals.append(math.comb(k + r - 1, r))
            k += 1
        out = np.array(sorted(set(vals)), dtype=np.int64)
    else:
        raise ValueError(f"unknown part-size kind {kind!r}")
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class MultiplicityRule:
    """Contiguous multiplicity interval {lo, ..., hi}; hi=None is unbounded.

    A rule whose smallest element is lo > 0 is the shifted form of the
    interval {0, ..., hi - lo}: the index then contributes a fixed offset
    i * lo to T, as in the "at least one part of size i" constructions.
    """

    lo: int = 0
    hi: Optional[int] = None

    def __post_init__(self):
        if self.lo < 0 or (self.hi is not None and self.hi < self.lo):
            raise ValueError(f"bad multiplicity interval [{self.lo}, {self.hi}]")

    @property
    def bounded(self) -> bool:
        return self.hi is not None

    def describe(self) -> str:
        if self.lo == 0 and self.hi is None:
            return "unbounded"
        if self.hi is None:
            return f"atleast:{self.lo}"
        if self.lo == 0:
            return f"bounded:{self.hi}"
        return f"range:{self.lo}-{self.hi}"

    @classmethod
    def from_values(cls, values: Iterable[int], unbounded_tail: bool = False) -> "MultiplicityRule":
        vals = sorted(set(int(v) for v in values))
        if not vals or vals[0] < 0:
            raise NonContiguousMultiplicity("multiplicity set must be non-empty and non-negative")
        for a, b in zip(vals, vals[1:]):
            if b != a + 1:
                raise NonContiguousMultiplicity(
                    f"multiplicity set {vals} has an interior gap between {a} and {b}; "
                    "its indicator weights are not log-concave"
                )
        return cls(vals[0], None if unbounded_tail else vals[-1])


@dataclass(frozen=True)
class ColorRule:
    """Colour counts m_i.

    kinds: ``const`` (value), ``poly`` (m_k = sum a_j k^j), ``factorial``
    (m_k = (k-1)!), ``list`` (explicit m_1, m_2, ...; Fractions allowed
    for assemblies; indices past the list get 0).
    """

    kind: str = "const"
    params: tuple = (1,)

    def exact(self, k: int):
        if self.kind == "const":
            return self.params[0]
        if self.kind == "poly":
            return sum(a * k ** j for j, a in enumerate(self.params))
        if self.kind == "factorial":
            return math.factorial(k - 1)
        if self.kind == "list":
            return self.params[k - 1] if k <= len(self.params) else 0
        raise ValueError(f"unknown colour kind {self.kind!r}")

    def log_values(self, ks: np.ndarray) -> np.ndarray:
        ks = np.asarray(ks, dtype=np.int64)
        if self.kind == "const":
            v = float(self.params[0])
            return np.full(ks.shape, math.log(v) if v > 0 else -np.inf)
        if self.kind == "factorial":
            return gammaln(ks.astype(float))
        vals = np.array([float(self.exact(int(k))) for k in ks], dtype=float)
        with np.errstate(divide="ignore"):
            return np.log(vals)

    def values(self, ks: np.ndarray) -> np.ndarray:
        if self.kind == "const":
            return np.full(np.shape(ks), float(self.params[0]))
        return np.exp(self.log_values(ks))

    @property
    def integral(self) -> bool:
        if self.kind == "list":
            return all(Fraction(v).denominator == 1 for v in self.params)
        return True

    def describe(self) -> str:
        if self.kind == "const":
            return str(self.params[0])
        if self.kind == "factorial":
            return "factorial"
        return self.kind + ":" + ",".join(str(p) for p in self.params)


# ---------------------------------------------------------------------------
# the ensemble


@dataclass(frozen=True)
class EnsembleSpec:
    family: Family
    part_sizes: PartSizeSet = PartSizeSet()
    multiplicity: MultiplicityRule = MultiplicityRule()
    colors: ColorRule = ColorRule()
    n_max: int = 100
    overrides: tuple = ()  # ((i, MultiplicityRule), ...) sorted by i

    def rule(self, i: int) -> MultiplicityRule:
        for j, r in self.overrides:
            if j == i:
                return r
        return self.multiplicity

    def indices(self, n: Optional[int] = None) -> np.ndarray:
        """U intersected with [1, n] (n defaults to n_max)."""
        return self.part_sizes.members(self.n_max if n is None else n)

    def effective_hi(self, i: int) -> Optional[int]:
        rule = self.rule(i)
        if self.family is Family.SELECTION:
            m = int(self.colors.exact(i))
            return m if rule.hi is None else min(rule.hi, m)
        return rule.hi

    def is_degenerate(self, i: int) -> bool:
        if i not in self.part_sizes:
            return True
        m = self.colors.exact(i)
        rule = self.rule(i)
        if m == 0:
            return True
        hi = self.effective_hi(i)
        if hi is not None and hi <= rule.lo:
            return True
        return False

    def to_config(self) -> dict:
        cfg = {
            "family": self.family.value,
            "U": self.part_sizes.describe(),
            "R": self.multiplicity.describe(),
            "m": self.colors.describe(),
            "n_max": str(self.n_max),
        }
        if self.overrides:
            cfg["overrides"] = ";".join(f"{i}={r.describe()}" for i, r in self.overrides)
        return cfg

    def key(self) -> str:
        blob = json.dumps(self.to_config(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_n_max(self, n_max: int) -> "EnsembleSpec":
        return EnsembleSpec(self.family, self.part_sizes, self.multiplicity, self.colors,
                            int(n_max), self.overrides)


def _parse_int_list(text: str) -> list:
    return [int(t) for t in text.replace(" ", "").split(",") if t]


def parse_part_sizes(text: str) -> PartSizeSet:
    t = str(text).strip().lower()
    if t in ("all", "n", "positive"):
        return PartSizeSet("all")
    if t == "odd":
        return PartSizeSet("progression", (1, 2))
    if t == "even":
        return PartSizeSet("progression", (2, 2))
    kind, _, rest = t.partition(":")
    vals = _parse_int_list(rest)
    if kind == "list" and vals:
        return PartSizeSet("list", tuple(sorted(set(vals))))
    if kind == "progression" and len(vals) == 2 and vals[0] >= 1 and vals[1] >= 1:
        return PartSizeSet("progression", tuple(vals))
    if kind == "atleast" and len(vals) == 1 and vals[0] >= 1:
        return PartSizeSet("progression", (vals[0], 1))
    if kind == "polynomial" and len(vals) == 2 and vals[0] >= 1 and vals[1] >= 1:
        return PartSizeSet("polynomial", tuple(vals))
    if kind == "binomial" and len(vals) == 1 and vals[0] >= 1:
        return PartSizeSet("binomial", tuple(vals))
    if kind == "upto" and len(vals) == 1 and vals[0] >= 1:
        return PartSizeSet("upto", tuple(vals))
    raise ParseError(f"cannot parse part-size rule {text!r}", field="U")


def parse_multiplicity(text: str) -> MultiplicityRule:
    t = str(text).strip().lower().replace(" ", "")
    if t in ("unbounded", "all"):
        return MultiplicityRule()
    kind, _, rest = t.partition(":")
    if kind == "bounded":
        return MultiplicityRule(0, int(rest))
    if kind == "atleast":
        return MultiplicityRule(int(rest), None)
    if kind == "range":
        a, _, b = rest.partition("-")
        return MultiplicityRule(int(a), int(b))
    if kind == "set" or t.startswith("{") or "," in t:
        body = rest if kind == "set" else t
        body = body.strip("{}")
        tail = body.endswith("...")
        body = body.rstrip(".").rstrip(",")
        return MultiplicityRule.from_values(_parse_int_list(body), unbounded_tail=tail)
    raise ParseError(f"cannot parse multiplicity rule {text!r}", field="R")


def parse_colors(text) -> ColorRule:
    t = str(text).strip().lower().replace(" ", "")
    if t.lstrip("-").isdigit():
        v = int(t)
        if v < 0:
            raise InvalidColors(f"colour count must be >= 0, got {v}")
        return ColorRule("const", (v,))
    if t == "factorial":
        return ColorRule("factorial", ())
    kind, _, rest = t.partition(":")
    if kind == "poly":
        return ColorRule("poly", tuple(_parse_int_list(rest)))
    if kind == "list":
        vals = tuple(Fraction(v) if "/" in v else int(v) for v in rest.split(",") if v)
        return ColorRule("list", vals)
    raise ParseError(f"cannot parse colour rule {text!r}", field="m")


def parse_overrides(text: str) -> tuple:
    out = []
    for item in str(text).split(";"):
        item = item.strip()
        if not item:
            continue
        i, _, rule = item.partition("=")
        out.append((int(i), parse_multiplicity(rule)))
    return tuple(sorted(out))


_CONFIG_KEYS = {"family", "U", "R", "m", "n_max", "overrides"}


def build_ensemble(config: Mapping) -> EnsembleSpec:
    """Validated EnsembleSpec from a flat key/value mapping.

    Keys: family (multiset|selection|assembly), U, R, m, n_max and the
    optional per-index ``overrides`` ("i=rule;i=rule").
    """
    unknown = set(config) - _CONFIG_KEYS
    if unknown:
        raise ParseError(f"unknown ensemble keys {sorted(unknown)}")
    try:
        family = Family(str(config.get("family", "multiset")).strip().lower())
    except ValueError:
        raise ParseError(f"unknown family {config.get('family')!r}", field="family") from None
    pss = parse_part_sizes(config.get("U", "all"))
    rule = parse_multiplicity(config.get("R", "unbounded"))
    colors = parse_colors(config.get("m", 1))
    n_max = int(config.get("n_max", 100))
    overrides = parse_overrides(config.get("overrides", ""))
    return make_ensemble(family, pss, rule, colors, n_max, overrides)


def make_ensemble(family, part_sizes=PartSizeSet(), multiplicity=MultiplicityRule(),
                  colors=ColorRule(), n_max=100, overrides=()) -> EnsembleSpec:
    family = Family(family)
    if n_max < 1:
        raise EmptySupport(f"n_max must be positive, got {n_max}")
    ens = EnsembleSpec(family, part_sizes, multiplicity, colors, int(n_max), tuple(sorted(overrides)))
    idx = ens.indices()
    if idx.size == 0:
        raise EmptySupport(f"no part size of {part_sizes.describe()} is <= {n_max}")
    for i in idx[: min(idx.size, 4096)]:
        m = colors.exact(int(i))
        if m < 0:
            raise InvalidColors(f"m_{i} = {m} < 0")
        if family is not Family.ASSEMBLY and Fraction(m).denominator != 1:
            raise InvalidColors(f"m_{i} = {m} must be an integer for {family.value}")
    if all(ens.is_degenerate(int(i)) for i in idx[: min(idx.size, 4096)]):
        raise AllDegenerate("every Z_i is a point mass")
    return ens


# common ensembles

def unrestricted_partitions(n_max=100):
    return make_ensemble(Family.MULTISET, n_max=n_max)


def distinct_parts(n_max=100):
    return make_ensemble(Family.SELECTION, n_max=n_max)


def odd_parts(n_max=100):
    return make_ensemble(Family.MULTISET, PartSizeSet("progression", (1, 2)), n_max=n_max)


def bounded_multiplicity(t, n_max=100):
    return make_ensemble(Family.MULTISET, multiplicity=MultiplicityRule(0, t), n_max=n_max)


def bounded_parts(k, n_max=100):
    return make_ensemble(Family.MULTISET, PartSizeSet("upto", (k,)), n_max=n_max)


def plane_partitions(n_max=100):
    return make_ensemble(Family.MULTISET, colors=ColorRule("poly", (0, 1)), n_max=n_max)


def set_partitions(n_max=100):
    return make_ensemble(Family.ASSEMBLY, n_max=n_max)


def permutations(n_max=100):
    return make_ensemble(Family.ASSEMBLY, colors=ColorRule("factorial", ()), n_max=n_max)


# ---------------------------------------------------------------------------
# per-index weights and moments


def log_weight(ens: EnsembleSpec, i: int, k):
    """log g_i(k) (k may be an array); -inf outside the family's support."""
    k = np.asarray(k, dtype=float)
    m = ens.colors.exact(i)
    if ens.family is Family.MULTISET:
        if m == 1:
            return np.zeros_like(k)
        m = float(m)
        return gammaln(m + k) - gammaln(k + 1) - gammaln(m)
    if ens.family is Family.SELECTION:
        m = float(m)
        with np.errstate(invalid="ignore"):
            out = gammaln(m + 1) - gammaln(k + 1) - gammaln(np.maximum(m - k, 0) + 1)
        return np.where(k <= m, out, -np.inf)
    logm = math.log(float(m)) - math.lgamma(i + 1)
    return k * logm - gammaln(k + 1)


def _summable(ens: EnsembleSpec, i: int, log_x: float) -> bool:
    if ens.family is Family.MULTISET and ens.effective_hi(i) is None:
        return i * log_x < 0
    return True


@dataclass(frozen=True)
class TiltedMarginal:
    """Law of one Z_i at tilt x."""

    index: int
    x: float
    family: Family
    log_normalizer: float  # log c_i(x) = -log sum_k g_i(k) x^(ik)
    mean: float
    variance: float
    span: int  # support gap d_i (0 for a point mass)
    lo: int
    hi: Optional[int]
    truncation: int  # last support point kept by pmf_array()
    _ens: EnsembleSpec = field(repr=False, compare=False, default=None)

    @property
    def degenerate(self) -> bool:
        return self.span == 0

    def logpmf(self, k):
        k = np.asarray(k)
        if self.degenerate:
            return np.where(k == self.lo, 0.0, -np.inf)
        lw = log_weight(self._ens, self.index, k)
        out = self.log_normalizer + lw + self.index * k * math.log(self.x)
        inside = (k >= self.lo) & ((k <= self.hi) if self.hi is not None else True)
        return np.where(inside, out, -np.inf)

    def pmf_array(self):
        ks = np.arange(self.lo, self.truncation + 1)
        return ks, self.logpmf(ks)


def _closed_group(family, lo, hi, logm, m, idx, log_x):
    """Vectorised (mean, var, logc) for the closed-form cases, or None."""
    logq = idx * log_x
    if family is Family.MULTISET and hi is None:
        if np.any(logq >= 0):
            raise Divergent("multiset with unbounded multiplicities needs x < 1")
        q = np.exp(logq)
        one_minus = -np.expm1(logq)
        if lo == 0:
            mean = m * q / one_minus
            var = m * q / one_minus ** 2
            return mean, var, m * np.log(one_minus)
        if np.all(m == 1):
            # geometric conditioned on >= lo is lo + geometric
            mean = lo + q / one_minus
            var = q / one_minus ** 2
            return mean, var, np.log(one_minus) - lo * logq
        return None
    if family is Family.SELECTION and lo == 0 and (hi is None or np.all(hi >= m)):
        # Binomial(m, q / (1 + q))
        log1pq = np.logaddexp(0.0, logq)
        p = np.exp(logq - log1pq)
        mean = m * p
        var = m * p * (1.0 - p)
        return mean, var, -m * log1pq
    if family is Family.ASSEMBLY and lo == 0 and hi is None:
        loglam = logm + logq - gammaln(idx + 1.0)
        lam = np.exp(loglam)
        return lam, lam.copy(), -lam
    return None


def _direct_group(ens, lo, his, idx, log_x):
    """Moments by direct summation over a bounded support, vectorised over i."""
    kmax = int(np.max(his))
    means = np.empty(idx.size)
    vars_ = np.empty(idx.size)
    logcs = np.empty(idx.size)
    for start in range(0, idx.size, _CHUNK):
        sl = slice(start, start + _CHUNK)
        ii = idx[sl]
        hh = his[sl]
        ks = np.arange(lo, kmax + 1, dtype=float)
        logm = ens.colors.log_values(ii)
        if ens.family is Family.MULTISET:
            m = np.exp(logm)[:, None]
            lw = np.where(m == 1, 0.0, gammaln(m + ks) - gammaln(ks + 1) - gammaln(m))
        elif ens.family is Family.SELECTION:
            m = np.exp(logm)[:, None]
            lw = gammaln(m + 1) - gammaln(ks + 1) - gammaln(np.maximum(m - ks, 0) + 1)
        else:
            lw = ks * (logm - gammaln(ii + 1.0))[:, None] - gammaln(ks + 1)
        lw = lw + ii[:, None] * ks[None, :] * log_x
        lw = np.where(ks[None, :] <= hh[:, None], lw, -np.inf)
        top = lw.max(axis=1, keepdims=True)
        w = np.exp(lw - top)
        z = w.sum(axis=1)
        p = w / z[:, None]
        mean = (p * ks).sum(axis=1)
        var = (p * (ks[None, :] - mean[:, None]) ** 2).sum(axis=1)
        means[sl] = mean
        vars_[sl] = var
        logcs[sl] = -(top[:, 0] + np.log(z))
    return means, vars_, logcs


def _numeric_single(ens, i, log_x, lo, hi):
    """Scalar fallback: truncated series with tail below TAIL_EPS."""
    if not _summable(ens, i, log_x):
        raise Divergent(f"Z_{i} is not summable at x = {math.exp(log_x)}")
    ks = []
    lws = []
    k = lo
    block = 256
    while True:
        kk = np.arange(k, k + block if hi is None else min(k + block, hi + 1))
        if kk.size == 0:
            break
        lw = log_weight(ens, i, kk) + i * kk * log_x
        ks.append(kk)
        lws.append(lw)
        k = int(kk[-1]) + 1
        if hi is not None and k > hi:
            break
        allw = np.concatenate(lws)
        top = allw.max()
        # geometric-type decay: stop once the newest block is negligible
        if lw[-1] < top + math.log(TAIL_EPS) - 40 and lw[-1] < lw[0]:
            break
        if k - lo > 10_000_000:
            raise Divergent(f"series for Z_{i} does not decay")
    ks = np.concatenate(ks).astype(float)
    lw = np.concatenate(lws)
    top = lw.max()
    w = np.exp(lw - top)
    z = w.sum()
    p = w / z
    mean = float((p * ks).sum())
    var = float((p * (ks - mean) ** 2).sum())
    return mean, var, -(top + math.log(z))


@dataclass(frozen=True)
class MomentProfile:
    """Per-index moments of Z_i for i in U, i <= n, at one tilt."""

    n: int
    x: float
    idx: np.ndarray  # part sizes
    mean: np.ndarray  # E Z_i
    var: np.ndarray  # Var Z_i
    logc: np.ndarray  # log c_i(x)

    @property
    def weighted_mean(self):
        return self.idx * self.mean

    @property
    def weighted_var(self):
        return self.idx.astype(float) ** 2 * self.var


def moment_profile(ens: EnsembleSpec, x: float, n: Optional[int] = None) -> MomentProfile:
    if not x > 0:
        raise Divergent(f"tilt must be positive, got {x}")
    n = ens.n_max if n is None else int(n)
    return _moment_profile(ens, float(x), n)


@lru_cache(maxsize=128)
def _moment_profile(ens, x, n):
    log_x = math.log(x)
    idx = ens.indices(n)
    mean = np.empty(idx.size)
    var = np.empty(idx.size)
    logc = np.empty(idx.size)
    override_ids = {i for i, _ in ens.overrides}
    groups = {}
    for pos, i in enumerate(idx.tolist()):
        rule = ens.rule(i) if i in override_ids else ens.multiplicity
        groups.setdefault(rule, []).append(pos)
    for rule, positions in groups.items():
        pos = np.array(positions, dtype=np.int64)
        ii = idx[pos]
        logm = ens.colors.log_values(ii)
        with np.errstate(over="ignore"):
            m = np.exp(logm)
        done = _closed_group(ens.family, rule.lo, rule.hi, logm, m, ii.astype(float), log_x)
        if done is None:
            if ens.family is Family.SELECTION:
                his = np.minimum(m, rule.hi if rule.hi is not None else np.inf)
            else:
                his = np.full(ii.size, np.inf if rule.hi is None else rule.hi)
            bounded = np.isfinite(his) & (his - rule.lo <= _DIRECT_WIDTH)
            mu = np.empty(ii.size)
            va = np.empty(ii.size)
            lc = np.empty(ii.size)
            if np.any(bounded):
                b = np.nonzero(bounded)[0]
                mu[b], va[b], lc[b] = _direct_group(ens, rule.lo, his[b].astype(np.int64),
                                                    ii[b].astype(float), log_x)
            for j in np.nonzero(~bounded)[0]:
                hi = None if not np.isfinite(his[j]) else int(his[j])
                mu[j], va[j], lc[j] = _numeric_single(ens, int(ii[j]), log_x, rule.lo, hi)
            done = (mu, va, lc)
        mean[pos], var[pos], logc[pos] = done
    # point masses: m_i = 0 or a one-point interval
    degenerate = np.isneginf(ens.colors.log_values(idx))
    if np.any(degenerate):
        for pos in np.nonzero(degenerate)[0]:
            mean[pos] = ens.rule(int(idx[pos])).lo
            var[pos] = 0.0
            logc[pos] = 0.0
    for arr in (idx, mean, var, logc):
        arr.setflags(write=False)
    return MomentProfile(n, x, idx, mean, var, logc)


def marginal(ens: EnsembleSpec, i: int, x: float) -> TiltedMarginal:
    """Law of Z_i at tilt x, with closed-form moments where available."""
    if not x > 0:
        raise Divergent(f"tilt must be positive, got {x}")
    i = int(i)
    rule = ens.rule(i)
    if ens.is_degenerate(i):
        return TiltedMarginal(i, x, ens.family, 0.0, float(rule.lo), 0.0, 0, rule.lo, rule.lo,
                              rule.lo, ens)
    log_x = math.log(x)
    if not _summable(ens, i, log_x):
        raise Divergent(f"Z_{i} is not summable at x = {x}")
    prof_ens = EnsembleSpec(ens.family, PartSizeSet("list", (i,)), rule, ens.colors, i, ())
    prof = _moment_profile(prof_ens, float(x), i)
    mean, var, logc = float(prof.mean[0]), float(prof.var[0]), float(prof.logc[0])
    hi = ens.effective_hi(i)
    trunc = hi if hi is not None else _truncation_point(ens, i, log_x, logc, rule.lo)
    return TiltedMarginal(i, x, ens.family, logc, mean, var, 1, rule.lo, hi, trunc, ens)


def _truncation_point(ens, i, log_x, logc, lo):
    """Smallest K with P(Z_i > K) < TAIL_EPS.

    The running sum can stall a few ulps below 1, so past the mode the
    geometric bound P(Z > K) <= p_K r / (1 - r), r = p_K / p_{K-1}, is
    used as well.
    """
    k = lo
    acc = 0.0
    prev = 0.0
    block = 512
    while True:
        ks = np.arange(k, k + block)
        p = np.exp(logc + log_weight(ens, i, ks) + i * ks * log_x)
        cum = acc + np.cumsum(p)
        before = np.concatenate(([prev], p[:-1]))
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(before > 0, p / before, 1.0)
            bound = np.where(r < 1, p * r / (1 - r), np.inf)
        hit = np.nonzero((cum >= 1.0 - TAIL_EPS) | ((bound < TAIL_EPS) & (cum > 0.5)))[0]
        if hit.size:
            return int(ks[hit[0]])
        acc = float(cum[-1])
        prev = float(p[-1])
        k += block
        if k - lo > 50_000_000:
            raise Divergent(f"tail of Z_{i} does not vanish")


# ---------------------------------------------------------------------------
# aggregate moments and the stabilizing set


def _as_index_array(B, n) -> Optional[np.ndarray]:
    if B is None:
        return None
    arr = np.array(sorted(set(int(b) for b in B)), dtype=np.int64)
    return arr[(arr >= 1) & (arr <= n)]


@dataclass(frozen=True)
class MomentSummary:
    n: int
    x: float
    B: tuple
    mu_B: float
    var_B: float
    var_B_max: float
    mu_Bc: float
    var_Bc: float
    var_Bc_max: float
    mu: float
    var: float
    var_max: float
    mu_err: float
    sigma1_sq: float
    span_B: Optional[int]

    @property
    def sigma(self):
        return math.sqrt(self.var)

    @property
    def sigma_B(self):
        return math.sqrt(self.var_B)

    @property
    def sigma_Bc(self):
        return math.sqrt(self.var_Bc)

    @property
    def sigma_max(self):
        return math.sqrt(self.var_max)


def aggregate_moments(ens: EnsembleSpec, x: float, B=None, n: Optional[int] = None) -> MomentSummary:
    """Mean/variance bookkeeping for T_B, T_{B^c} and T over indices <= n.

    B=None means every index (B = [n]).  The total variance is assembled as
    var_B + var_Bc so the additivity identity holds exactly.
    """
    n = ens.n_max if n is None else int(n)
    prof = moment_profile(ens, x, n)
    wm = prof.weighted_mean
    wv = prof.weighted_var
    if B is None:
        mask = np.ones(prof.idx.size, dtype=bool)
        b_tuple = tuple(range(1, n + 1))
    else:
        barr = _as_index_array(B, n)
        mask = np.isin(prof.idx, barr)
        b_tuple = tuple(barr.tolist())
    var_B = math.fsum(wv[mask])
    var_Bc = math.fsum(wv[~mask])
    mu_B = math.fsum(wm[mask])
    mu_Bc = math.fsum(wm[~mask])
    var = var_B + var_Bc
    mu = mu_B + mu_Bc
    var_B_max = float(wv[mask].max()) if mask.any() else 0.0
    var_Bc_max = float(wv[~mask].max()) if (~mask).any() else 0.0
    var_max = max(var_B_max, var_Bc_max)
    sigma1_sq = var_Bc / var if var > 0 else 1.0
    nondeg = prof.idx[mask & (prof.var > 0)]
    span = int(np.gcd.reduce(nondeg)) if nondeg.size else None
    return MomentSummary(n, float(x), b_tuple, mu_B, var_B, var_B_max, mu_Bc, var_Bc, var_Bc_max,
                         mu, var, var_max, n - mu, sigma1_sq, span)


@dataclass(frozen=True)
class StabilizingSet:
    C2: float
    C3: float
    members: tuple
    members_B: tuple
    members_Bc: tuple

    @property
    def size(self):
        return len(self.members)

    @property
    def size_B(self):
        return len(self.members_B)

    @property
    def size_Bc(self):
        return len(self.members_Bc)


def find_m_set(ens: EnsembleSpec, x: float, C2: float = DEFAULT_C2, C3: float = DEFAULT_C3,
               B=None, n: Optional[int] = None) -> StabilizingSet:
    """Indices k with 1/C2 <= Var[k Z_k]/sigma_max^2 <= C2 and Var[Z_k] >= C3."""
    n = ens.n_max if n is None else int(n)
    prof = moment_profile(ens, x, n)
    wv = prof.weighted_var
    vmax = float(wv.max()) if wv.size else 0.0
    if vmax <= 0:
        return StabilizingSet(C2, C3, (), (), ())
    ratio = wv / vmax
    keep = (ratio >= 1.0 / C2) & (ratio <= C2) & (prof.var >= C3)
    members = prof.idx[keep]
    if B is None:
        inB = np.ones(members.size, dtype=bool)
    else:
        inB = np.isin(members, _as_index_array(B, n))
    return StabilizingSet(C2, C3, tuple(members.tolist()), tuple(members[inB].tolist()),
                          tuple(members[~inB].tolist()))


# ---------------------------------------------------------------------------
# log-concavity


@dataclass(frozen=True)
class LogConcavityReport:
    is_log_concave: bool
    witness: Optional[int]
    C1_estimate: Optional[float]


def _first_violation(logp, offset, rtol):
    for k in range(1, len(logp) - 1):
        lhs = 2.0 * logp[k]
        rhs = logp[k + 1] + logp[k - 1]
        if lhs < rhs - rtol * max(1.0, abs(lhs), abs(rhs)):
            return offset + k
    return None


def check_perturbed_log_concave(logpmf: Sequence[float], envelope: Optional[Sequence[float]] = None,
                                offset: int = 0, rtol: float = 1e-12) -> LogConcavityReport:
    """Log-concavity test, and the perturbation constant C1 against an envelope.

    ``logpmf`` lists log P(X = offset + k) over a contiguous support.  With
    an envelope Y (same support), ``is_log_concave`` refers to Y and C1 is
    max over the support of max(P(X=l)/P(Y=l), P(Y=l)/P(X=l)).
    """
    logp = np.asarray(logpmf, dtype=float)
    if not np.all(np.isfinite(logp)):
        raise SupportMismatch("pmf support must be a contiguous interval of positive mass")
    if envelope is None:
        w = _first_violation(logp, offset, rtol)
        return LogConcavityReport(w is None, w, None)
    env = np.asarray(envelope, dtype=float)
    if env.shape != logp.shape or not np.all(np.isfinite(env)):
        raise SupportMismatch("envelope support differs from pmf support")
    w = _first_violation(env, offset, rtol)
    c1 = float(np.exp(np.max(np.abs(logp - env))))
    return LogConcavityReport(w is None, w, c1)


# ---------------------------------------------------------------------------
# tilt calibration and span


def expected_total(ens: EnsembleSpec, x: float, n: Optional[int] = None):
    """(E T, Var T) at tilt x over indices <= n."""
    s = aggregate_moments(ens, x, None, n)
    return s.mu, s.var


def _initial_log_tilt(ens: EnsembleSpec, n: int) -> float:
    unit = ens.colors.kind == "const" and ens.colors.params[0] == 1
    if ens.part_sizes.kind == "all" and unit and not ens.overrides and ens.multiplicity.lo == 0:
        if ens.family is Family.MULTISET and ens.multiplicity.hi is None:
            return -PARTITION_C / math.sqrt(n)
        if ens.family is Family.ASSEMBLY and ens.multiplicity.hi is None:
            return math.log(lambert_w_expansion(n))
    if ens.family is Family.ASSEMBLY:
        return 0.0
    return -1.0 / math.sqrt(n)


def _needs_x_below_one(ens, idx):
    if ens.family is not Family.MULTISET:
        return False
    return any(ens.effective_hi(int(i)) is None and not ens.is_degenerate(int(i))
               for i in idx[:64]) or (ens.multiplicity.hi is None and not ens.overrides)


def solve_tilt(ens: EnsembleSpec, n: int, tol: float = 1e-9) -> float:
    """Tilt x* with |E T(x*) - n| <= tol * max(1, sd T(x*)).

    Bisection on log x over a bracket grown geometrically (factor 2) from
    the family's strategic guess; E T is strictly increasing in x.
    """
    n = int(n)
    if n < 1:
        raise BracketFailure("target size must be >= 1")
    idx = ens.indices(n)
    if idx.size == 0:
        raise BracketFailure(f"no part sizes <= {n}")
    los = np.array([ens.rule(int(i)).lo for i in idx])
    offset = float(np.sum(idx * los))
    his = [ens.effective_hi(int(i)) for i in idx]
    if all(h is not None for h in his):
        top = float(sum(int(i) * h for i, h in zip(idx, his)))
        if top <= n:
            raise BracketFailure(f"largest attainable E T is below {n} (sup = {top:g})")
    if offset >= n:
        raise BracketFailure(f"offset {offset:g} already reaches the target {n}")

    def f(theta):
        mu, var = expected_total(ens, math.exp(theta), n)
        return mu - n, var

    below_one = _needs_x_below_one(ens, idx)
    theta0 = _initial_log_tilt(ens, n)
    if below_one:
        theta0 = min(theta0, -1e-12)
    g0, _ = f(theta0)
    if g0 < 0:
        lo, hi = theta0, None
        step = abs(theta0) if below_one else 1.0
        for _ in range(2000):
            cand = lo / 2.0 if below_one else lo + step
            if below_one and cand > -1e-300:
                break
            g, _ = f(cand)
            if g >= 0:
                hi = cand
                break
            lo = cand
            step *= 2.0
        if hi is None:
            raise BracketFailure(f"E T stays below {n}")
    else:
        lo, hi = None, theta0
        step = max(abs(theta0), 1.0)
        for _ in range(2000):
            cand = hi * 2.0 if below_one else hi - step
            if cand < -745.0 * 4:
                break
            g, _ = f(cand)
            if g < 0:
                lo = cand
                break
            hi = cand
            step *= 2.0
        if lo is None:
            raise BracketFailure(f"E T stays above {n}")
    best = None
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        g, var = f(mid)
        if best is None or abs(g) < abs(best[1]):
            best = (mid, g)
        if abs(g) <= tol * max(1.0, math.sqrt(var)):
            return math.exp(mid)
        if mid <= lo or mid >= hi:
            break
        if g < 0:
            lo = mid
        else:
            hi = mid
    return math.exp(best[0])


def sum_span(ens: EnsembleSpec, B=None, n: Optional[int] = None) -> int:
    """gcd over non-degenerate i in B of i * d_i (every d_i is 1 here)."""
    n = ens.n_max if n is None else int(n)
    idx = ens.indices(n)
    if B is not None:
        idx = idx[np.isin(idx, _as_index_array(B, n))]
    live = [int(i) for i in idx if not ens.is_degenerate(int(i))]
    if not live:
        raise AllDegenerate("every Z_i with i in B is a point mass")
    return math.gcd(*live) if len(live) > 1 else live[0]
