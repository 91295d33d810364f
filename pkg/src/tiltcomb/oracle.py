"""Exact enumeration oracle.

Coefficient tables r(k) = [y^k] prod_i G_i(y) in exact integer (or
rational) arithmetic, and everything that can be read off them exactly:
structure counts, the lattice law of T_B at a tilt, the conditional law of
T_B given T = n, and the total variation distance between the conditioned
and the independent component.

Assemblies are handled through the scaled table A(k) = k! r(k), which is an
integer when every m_i is.  Tables can be cached on disk, keyed by the
ensemble hash and the size.
"""
from __future__ import annotations

import csv
import json
import math
import os
import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .ensemble import (
    EnsembleSpec,
    Family,
    PartSizeSet,
    moment_profile,
    solve_tilt,
    sum_span,
)
from .errors import ResourceLimit, UnsupportedTarget, ZeroCount

CACHE_VERSION = 1
CACHE_ENV = "TILTCOMB_CACHE_DIR"
DEFAULT_MAX_N = 20000
_MAGIC = b"TILTCOMB-COEFF"


@dataclass(frozen=True)
class CoeffTable:
    """Exact coefficients for k = 0..n.

    ``values[k]`` is r(k) for multisets and selections and A(k) = k! r(k)
    for assemblies (``exponential`` is then True).
    """

    key: str
    n: int
    exponential: bool
    values: tuple

    def coeff(self, k: int):
        """r(k) exactly (a Fraction for assemblies unless it is integral)."""
        v = self.values[k]
        if not self.exponential:
            return v
        out = Fraction(v) / math.factorial(k)
        return out.numerator if out.denominator == 1 else out

    def count(self, k: int):
        """Number of structures of size k (A(k) for assemblies)."""
        return self.values[k]

    def log_coeff(self, k: int) -> float:
        """log r(k); -inf where r(k) = 0."""
        lv = _log_exact(self.values[k])
        if self.exponential:
            lv -= math.lgamma(k + 1)
        return lv

    def log_coeffs(self) -> np.ndarray:
        return np.array([self.log_coeff(k) for k in range(self.n + 1)])


def _log_exact(v) -> float:
    if v == 0:
        return -math.inf
    if isinstance(v, Fraction):
        return math.log(v.numerator) - math.log(v.denominator)
    return math.log(v)


def restrict(ens: EnsembleSpec, B) -> EnsembleSpec:
    """The same ensemble with part sizes cut down to U intersected with B."""
    members = ens.indices()
    if B is not None:
        keep = set(int(b) for b in B)
        members = [int(i) for i in members if int(i) in keep]
    else:
        members = [int(i) for i in members]
    return EnsembleSpec(ens.family, PartSizeSet("list", tuple(members)), ens.multiplicity,
                        ens.colors, ens.n_max, ens.overrides)


# ---------------------------------------------------------------------------
# table construction


def _exact_m(ens, i):
    m = ens.colors.exact(i)
    if isinstance(m, Fraction) and m.denominator == 1:
        return m.numerator
    return m


def _ordinary_table(ens: EnsembleSpec, n: int) -> list:
    idx = [int(i) for i in ens.indices(n)]
    override_ids = {i for i, _ in ens.overrides}
    simple = not (override_ids & set(idx))
    rule = ens.multiplicity
    unit = all(_exact_m(ens, i) == 1 for i in idx)
    # Euler transform: O(n^2) regardless of the colour counts
    if simple and rule.lo == 0 and rule.hi is None and not unit:
        return _euler_table(ens, idx, n, alternating=ens.family is Family.SELECTION)
    p = [0] * (n + 1)
    p[0] = 1
    for i in idx:
        r = ens.rule(i)
        m = _exact_m(ens, i)
        if m == 0:
            if r.lo > 0:
                return [0] * (n + 1)
            continue
        hi = ens.effective_hi(i)
        if m == 1 and r.lo == 0:
            if ens.family is Family.MULTISET:
                if hi is not None and i * (hi + 1) <= n:
                    step = i * (hi + 1)
                    for j in range(n, step - 1, -1):
                        p[j] -= p[j - step]
                for j in range(i, n + 1):
                    p[j] += p[j - i]
                continue
            # selection with a single colour: factor 1 + y^i
            for j in range(n, i - 1, -1):
                p[j] += p[j - i]
            continue
        p = _convolve_index(ens, p, i, r.lo, hi, m, n)
    return p


def _euler_table(ens, idx, n, alternating):
    b = [0] * (n + 1)
    for d in idx:
        w = d * _exact_m(ens, d)
        if w == 0:
            continue
        for q, j in enumerate(range(d, n + 1, d), start=1):
            b[j] += -w if (alternating and q % 2 == 0) else w
    p = [0] * (n + 1)
    p[0] = 1
    for k in range(1, n + 1):
        s = 0
        for j in range(1, k + 1):
            if b[j]:
                s += b[j] * p[k - j]
        q, rem = divmod(s, k)
        if rem:
            raise ArithmeticError(f"non-integral Euler transform at k={k}")
        p[k] = q
    return p


def _convolve_index(ens, p, i, lo, hi, m, n):
    kmax = n // i if hi is None else min(hi, n // i)
    weights = []
    for k in range(lo, kmax + 1):
        if ens.family is Family.MULTISET:
            weights.append((k, math.comb(m + k - 1, k)))
        else:
            weights.append((k, math.comb(m, k)))
    out = [0] * (n + 1)
    for k, w in weights:
        if w == 0:
            continue
        shift = i * k
        for j in range(shift, n + 1):
            if p[j - shift]:
                out[j] += w * p[j - shift]
    return out


def _exponential_table(ens: EnsembleSpec, n: int) -> list:
    """A(N) = N! [y^N] prod_i G_i(y) for assemblies."""
    idx = [int(i) for i in ens.indices(n)]
    rule = ens.multiplicity
    uniform = all(ens.rule(i) == rule for i in idx)
    if uniform and rule.lo == 0 and rule.hi is None:
        # exponential formula: A(N) = sum_k C(N-1, k-1) m_k A(N-k)
        ms = {i: _exact_m(ens, i) for i in idx}
        a = [0] * (n + 1)
        a[0] = 1
        for big in range(1, n + 1):
            s = 0
            for k, m in ms.items():
                if k > big:
                    break
                if m:
                    s += math.comb(big - 1, k - 1) * m * a[big - k]
            a[big] = s
        return a
    a = [0] * (n + 1)
    a[0] = 1
    for i in idx:
        r = ens.rule(i)
        m = _exact_m(ens, i)
        hi = r.hi
        kmax = n // i if hi is None else min(hi, n // i)
        fi = math.factorial(i)
        new = [0] * (n + 1)
        for k in range(r.lo, kmax + 1):
            if m == 0 and k > 0:
                break
            # ways to split k*i labels into k unordered blocks of size i,
            # each block carrying one of m colours
            block = Fraction(math.factorial(k * i), fi ** k * math.factorial(k)) * Fraction(m) ** k
            if block.denominator == 1:
                block = block.numerator
            shift = i * k
            for big in range(shift, n + 1):
                if a[big - shift]:
                    new[big] += math.comb(big, shift) * block * a[big - shift]
        a = new
    return a


def coeff_table(ens: EnsembleSpec, B=None, n_max: Optional[int] = None, *,
                cache_dir: Optional[str] = None, max_n: int = DEFAULT_MAX_N) -> CoeffTable:
    """Exact coefficients of prod_{i in B} G_i(y) up to degree n_max.

    B=None takes every index of U.  Tables are cached on disk when a cache
    directory is given (argument or the TILTCOMB_CACHE_DIR variable).
    """
    n = ens.n_max if n_max is None else int(n_max)
    if n < 0:
        raise ValueError("n_max must be >= 0")
    if n > max_n:
        raise ResourceLimit(f"exact table for n = {n} exceeds the limit {max_n}")
    work = ens.with_n_max(max(ens.n_max, n))
    if B is not None:
        work = restrict(work, B)
    cache_dir = cache_dir or os.environ.get(CACHE_ENV)
    key = work.key()
    if cache_dir:
        cached = _load_cached(Path(cache_dir), key, n)
        if cached is not None:
            return cached
    if ens.family is Family.ASSEMBLY:
        vals = _exponential_table(work, n)
        vals = [v.numerator if isinstance(v, Fraction) and v.denominator == 1 else v for v in vals]
        table = CoeffTable(key, n, True, tuple(vals))
    else:
        table = CoeffTable(key, n, False, tuple(_ordinary_table(work, n)))
    if cache_dir:
        _store_cached(Path(cache_dir), table)
    return table


def exact_count(ens: EnsembleSpec, n: int, **kw):
    """Number of decomposable structures of total size n."""
    return coeff_table(ens, None, n, **kw).count(n)


def write_csv(table: CoeffTable, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "count", "log_coeff"])
        for k in range(table.n + 1):
            w.writerow([k, str(table.count(k)), repr(table.log_coeff(k))])


# ---------------------------------------------------------------------------
# binary cache


def _cache_path(cache_dir: Path, key: str, n: int) -> Path:
    return cache_dir / f"coeff-v{CACHE_VERSION}-{key}-{n}.bin"


def _pack_int(v: int) -> bytes:
    raw = abs(v).to_bytes((abs(v).bit_length() + 7) // 8 or 1, "little")
    return struct.pack("<bI", -1 if v < 0 else 1, len(raw)) + raw


def _unpack_int(buf: bytes, pos: int):
    sign, length = struct.unpack_from("<bI", buf, pos)
    pos += 5
    v = int.from_bytes(buf[pos:pos + length], "little")
    return sign * v, pos + length


def _store_cached(cache_dir: Path, table: CoeffTable) -> None:
    cache_dir.mkdir(parents=True, exist_ok=True)
    header = json.dumps({"version": CACHE_VERSION, "key": table.key, "n": table.n,
                         "exponential": table.exponential}).encode()
    parts = [_MAGIC, struct.pack("<I", len(header)), header]
    for v in table.values:
        f = Fraction(v)
        parts.append(_pack_int(f.numerator))
        parts.append(_pack_int(f.denominator))
    tmp = _cache_path(cache_dir, table.key, table.n).with_suffix(".tmp")
    tmp.write_bytes(b"".join(parts))
    os.replace(tmp, _cache_path(cache_dir, table.key, table.n))


def _load_cached(cache_dir: Path, key: str, n: int) -> Optional[CoeffTable]:
    path = _cache_path(cache_dir, key, n)
    if not path.exists():
        return None
    buf = path.read_bytes()
    if not buf.startswith(_MAGIC):
        return None
    pos = len(_MAGIC)
    (hlen,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    meta = json.loads(buf[pos:pos + hlen])
    pos += hlen
    if meta.get("version") != CACHE_VERSION or meta.get("key") != key or meta.get("n") != n:
        return None
    vals = []
    for _ in range(n + 1):
        num, pos = _unpack_int(buf, pos)
        den, pos = _unpack_int(buf, pos)
        vals.append(num if den == 1 else Fraction(num, den))
    return CoeffTable(key, n, bool(meta["exponential"]), tuple(vals))


# ---------------------------------------------------------------------------
# laws read off the tables


@dataclass(frozen=True)
class LatticeDistribution:
    """log P(T_B = k) for k = 0..n_max and the mass beyond n_max."""

    B: tuple
    x: float
    span: Optional[int]
    logpmf: np.ndarray
    log_tail: float

    @property
    def n_max(self):
        return self.logpmf.size - 1

    @property
    def tail(self):
        return math.exp(self.log_tail)


def _split(ens, B, n):
    idx = [int(i) for i in ens.with_n_max(max(ens.n_max, n)).indices(n)]
    if B is None:
        return idx, []
    bset = set(int(b) for b in B)
    return [i for i in idx if i in bset], [i for i in idx if i not in bset]


def lattice_distribution(ens: EnsembleSpec, B, x: float, n_max: Optional[int] = None,
                         **kw) -> LatticeDistribution:
    """Law of T_B at tilt x on {0..n_max}, assembled from the exact table.

    log P(T_B = k) = log r_B(k) + k log x + sum_{i in B} log c_i(x); the
    tail is the complement of the interior mass, clamped at 0 when the
    interior overshoots 1 by rounding.  Indices above n_max are ignored.
    """
    n = ens.n_max if n_max is None else int(n_max)
    b_idx, _ = _split(ens, B, n)
    sub = restrict(ens.with_n_max(max(ens.n_max, n)), b_idx)
    table = coeff_table(sub, None, n, **kw)
    logc = math.fsum(moment_profile(sub, x, n).logc) if b_idx else 0.0
    ks = np.arange(n + 1)
    logp = table.log_coeffs() + ks * math.log(x) + logc
    interior = math.fsum(np.exp(logp))
    rest = 1.0 - interior
    if rest < 0 and rest > -1e-12:
        rest = 0.0
    log_tail = math.log(rest) if rest > 0 else -math.inf
    live = [i for i in b_idx if not sub.is_degenerate(i)]
    span = math.gcd(*live) if live else None
    logp.setflags(write=False)
    return LatticeDistribution(tuple(b_idx), float(x), span, logp, log_tail)


def conditional_sum_pmf(ens: EnsembleSpec, B, n: int, **kw) -> list:
    """Exact P(T_B = r | T = n) for r = 0..n as Fractions; free of the tilt."""
    n = int(n)
    b_idx, c_idx = _split(ens, B, n)
    tb = coeff_table(ens, b_idx, n, **kw)
    tc = coeff_table(ens, c_idx, n, **kw)
    terms = [Fraction(tb.coeff(r)) * Fraction(tc.coeff(n - r)) for r in range(n + 1)]
    total = sum(terms, Fraction(0))
    if total == 0:
        raise ZeroCount(f"no structure of size {n}")
    return [t / total for t in terms]


def conditional_component_pmf(ens: EnsembleSpec, i: int, n: int, **kw) -> list:
    """Exact P(C_i(n) = k | T = n) for k = 0..n//i as Fractions.

    P(C_i = k) = g_i(k) r_{-i}(n - i k) / r(n), with r_{-i} the table with
    index i removed (for assemblies g_i(k) = (m_i/i!)^k / k!).
    """
    n, i = int(n), int(i)
    full = ens.with_n_max(max(ens.n_max, n))
    total = Fraction(coeff_table(full, None, n, **kw).coeff(n))
    if total == 0:
        raise ZeroCount(f"no structure of size {n}")
    if i > n or i not in ens.part_sizes:
        return [Fraction(1)]
    others = [int(j) for j in full.indices(n) if int(j) != i]
    rest = coeff_table(full, others, n, **kw)
    rule = ens.rule(i)
    hi = ens.effective_hi(i)
    m = Fraction(ens.colors.exact(i))
    out = [Fraction(0)] * (n // i + 1)
    top = n // i if hi is None else min(hi, n // i)
    for k in range(rule.lo, top + 1):
        if ens.family is Family.MULTISET:
            g = Fraction(math.comb(int(m) + k - 1, k)) if m else Fraction(int(k == 0))
        elif ens.family is Family.SELECTION:
            g = Fraction(math.comb(int(m), k))
        else:
            g = (m / math.factorial(i)) ** k / math.factorial(k)
        out[k] = g * Fraction(rest.coeff(n - i * k)) / total
    return out


def exact_tv(ens: EnsembleSpec, B, x: Optional[float], n: int, **kw) -> float:
    """d_TV(L(T_B | T = n), L(T_B)) at tilt x (None: the calibrated tilt).

    TV = 1/2 P(T_B > n) + 1/2 sum_{r<=n} P(T_B = r) |P(T_Bc = n-r)/P(T = n) - 1|.
    Every r is kept: where T_Bc cannot reach n - r the whole mass P(T_B = r)
    counts toward the distance.
    """
    n = int(n)
    full = ens.with_n_max(max(ens.n_max, n))
    h = sum_span(full, None, n)
    if n % h:
        raise UnsupportedTarget(f"span {h} does not divide n = {n}")
    if x is None:
        x = solve_tilt(full, n)
    b_idx, c_idx = _split(full, B, n)
    lb = lattice_distribution(full, b_idx, x, n, **kw)
    lc = lattice_distribution(full, c_idx, x, n, **kw)
    pair = lb.logpmf + lc.logpmf[::-1]
    top = np.max(pair)
    if not np.isfinite(top):
        raise ZeroCount(f"no structure of size {n}")
    log_pn = top + math.log(np.sum(np.exp(pair - top)))
    pb = np.exp(lb.logpmf)
    ratio = np.exp(lc.logpmf[::-1] - log_pn)
    return 0.5 * lb.tail + 0.5 * math.fsum(pb * np.abs(ratio - 1.0))


# ---------------------------------------------------------------------------
# independent reference recurrences and brute force


def partition_numbers_pentagonal(n: int) -> list:
    """p(0..n) from Euler's pentagonal number recurrence."""
    p = [1] + [0] * n
    for k in range(1, n + 1):
        s = 0
        j = 1
        while True:
            g1 = j * (3 * j - 1) // 2
            if g1 > k:
                break
            sign = 1 if j % 2 else -1
            s += sign * p[k - g1]
            g2 = j * (3 * j + 1) // 2
            if g2 <= k:
                s += sign * p[k - g2]
            j += 1
        p[k] = s
    return p


def bell_recurrence(n: int) -> list:
    """Bell numbers B(0..n) from the Bell triangle."""
    out = [1]
    row = [1]
    for _ in range(n):
        new = [row[-1]]
        for v in row:
            new.append(new[-1] + v)
        row = new
        out.append(row[0])
    return out[: n + 1]


def enumerate_partitions(n: int, max_part: Optional[int] = None) -> Iterator[tuple]:
    """All partitions of n as non-increasing tuples."""
    if max_part is None:
        max_part = n
    if n == 0:
        yield ()
        return
    for first in range(min(n, max_part), 0, -1):
        for rest in enumerate_partitions(n - first, first):
            yield (first,) + rest


def enumerate_multiplicities(ens: EnsembleSpec, n: int) -> Iterator[tuple]:
    """Brute force: (multiplicity dict, exact weight) with sum i k_i = n.

    The weight is prod_i g_i(k_i), times n!/prod (i!^k_i) for assemblies,
    so the weights sum to the structure count.
    """
    idx = [int(i) for i in ens.with_n_max(max(n, 1)).indices(n)]

    def rec(pos, remaining):
        if pos == len(idx):
            if remaining == 0:
                yield {}
            return
        i = idx[pos]
        r = ens.rule(i)
        hi = ens.effective_hi(i)
        top = remaining // i if hi is None else min(hi, remaining // i)
        for k in range(r.lo, top + 1):
            for rest in rec(pos + 1, remaining - i * k):
                out = dict(rest)
                out[i] = k
                yield out

    for mult in rec(0, n):
        w = Fraction(1)
        for i, k in mult.items():
            m = ens.colors.exact(i)
            if ens.family is Family.MULTISET:
                w *= math.comb(m + k - 1, k) if m else (1 if k == 0 else 0)
            elif ens.family is Family.SELECTION:
                w *= math.comb(m, k)
            else:
                w *= Fraction(m) ** k / (Fraction(math.factorial(i)) ** k * math.factorial(k))
        if ens.family is Family.ASSEMBLY:
            w *= math.factorial(n)
        if w:
            yield mult, (w.numerator if w.denominator == 1 else w)
