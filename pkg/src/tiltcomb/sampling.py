"""Free and exact-size sampling, partition statistics, empirical TV.

The free process draws independent Z_i from the tilted marginals.  The
exact-size sampler draws free vectors at the solved tilt and keeps those
with sum i Z_i = n; since the tilt cancels on {T = n}, accepted vectors
follow the combinatorial law exactly.  Draw number d of a stream is a
pure function of (seed, d), so a rejection run can compute totals only
and regenerate the accepted vectors afterwards.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Optional

import numpy as np
from scipy import stats
from scipy.special import gammaln

from . import kernels
from .approx import gap_moment_prediction, gaussian_point_mass
from .ensemble import (
    EnsembleSpec,
    Family,
    aggregate_moments,
    marginal,
    moment_profile,
    solve_tilt,
)
from .errors import AttemptsExhausted, DomainError, InsufficientSamples, ParseError

__all__ = [
    "MultiplicityVector", "SamplerTables", "build_tables", "sample_free", "sample_free_batch",
    "sample_conditional", "sample_conditional_batch", "statistic", "free_smallest_gaps",
    "gap_moment_prediction", "EmpiricalTV", "empirical_tv", "SampleBatch", "write_ndjson",
    "read_ndjson", "MAX_SEED",
]

MAX_SEED = (1 << 64) - 1
# inversion tables keep everything up to a tail below this
TABLE_TAIL = 1e-17
# Poisson marginals with larger means are drawn by transformed rejection
PTRS_MIN_MEAN = 10.0
_CHUNK = 1 << 16


def _check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed <= MAX_SEED:
        raise DomainError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


# ---------------------------------------------------------------------------
# multiplicity vectors


@dataclass(frozen=True)
class MultiplicityVector:
    """Sparse multiplicities {i: k} with k > 0."""

    counts: Mapping[int, int] = field(default_factory=dict)

    def __post_init__(self):
        clean = {int(i): int(k) for i, k in dict(self.counts).items() if int(k) != 0}
        if any(k < 0 for k in clean.values()) or any(i < 1 for i in clean):
            raise DomainError("multiplicities must be non-negative on positive indices")
        object.__setattr__(self, "counts", dict(sorted(clean.items())))

    @classmethod
    def from_dense(cls, idx, row) -> "MultiplicityVector":
        row = np.asarray(row)
        nz = np.nonzero(row)[0]
        return cls({int(idx[p]): int(row[p]) for p in nz})

    @property
    def total(self) -> int:
        return sum(i * k for i, k in self.counts.items())

    @property
    def num_parts(self) -> int:
        return sum(self.counts.values())

    def __getitem__(self, i: int) -> int:
        return self.counts.get(int(i), 0)

    def respects(self, ens: EnsembleSpec) -> bool:
        """True if every multiplicity (including implicit zeros up to the total) obeys R_i."""
        top = max(self.counts, default=0)
        for i in ens.indices(max(top, 1)).tolist():
            k = self[i]
            rule = ens.rule(i)
            hi = ens.effective_hi(i)
            if k < rule.lo or (hi is not None and k > hi):
                return False
        return all(i in ens.part_sizes for i in self.counts)

    def to_shape(self):
        from .bijections import PartitionShape

        return PartitionShape.from_multiplicities(self)

    def to_json(self) -> dict:
        return {str(i): k for i, k in self.counts.items()}


# ---------------------------------------------------------------------------
# inversion tables


@dataclass(frozen=True)
class SamplerTables:
    """Per-index inversion tables for the free process at one tilt."""

    x: float
    idx: np.ndarray  # part sizes, ascending
    lo: np.ndarray  # offset added to each draw
    offsets: np.ndarray  # segment bounds into cdf, length len(idx) + 1
    cdf: np.ndarray  # concatenated CDFs; each segment ends at exactly 1.0
    lam: np.ndarray  # > 0 marks Poisson columns drawn by PTRS

    @property
    def args(self):
        return self.idx, self.lo, self.offsets, self.cdf, self.lam


def _closed_tops(family, idx, logm, log_x):
    """Vectorised tail points for the lo = 0 closed forms (NaN where unknown)."""
    logq = idx * log_x
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        m = np.exp(logm)
        if family is Family.MULTISET:
            # beyond the summability region only a bounded rule applies
            geo = np.where(logq < 0, np.ceil(math.log(TABLE_TAIL) / logq), np.nan)
            tops = np.where(m == 1, geo, stats.nbinom.isf(TABLE_TAIL, m, -np.expm1(logq)))
        elif family is Family.SELECTION:
            p = np.exp(logq - np.logaddexp(0.0, logq))
            tops = stats.binom.isf(TABLE_TAIL, np.round(m), p)
        else:
            tops = _poisson_tops(np.exp(logm + logq - gammaln(idx + 1.0)))
    return np.where(np.isfinite(tops), tops + 1, np.nan)


def _poisson_tops(lam):
    """Smallest k with the Chernoff bound e^-lam (e lam / k)^k below TABLE_TAIL."""
    target = math.log(TABLE_TAIL)
    lo = np.maximum(lam, 1e-300)
    hi = 2.0 * math.e * lam + 60.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        ok = -lam + mid - mid * np.log(mid / np.maximum(lam, 1e-300)) < target
        hi = np.where(ok, mid, hi)
        lo = np.where(ok, lo, mid)
    return np.ceil(hi)


def _upper(ens, i, x, lo, hi):
    """Largest support point kept for Z_i when no closed form applies."""
    if hi is not None:
        return hi
    if ens.family is Family.MULTISET and ens.colors.exact(i) == 1:
        # lo + geometric(x^i)
        return lo + int(math.ceil(math.log(TABLE_TAIL) / (i * math.log(x)))) + 1
    return marginal(ens, i, x).truncation


def _log_weights(ens, i, m_log, ks, log_x):
    if ens.family is Family.MULTISET:
        if m_log == 0.0:
            lw = np.zeros(ks.size)
        else:
            m = math.exp(m_log)
            lw = gammaln(m + ks) - gammaln(ks + 1.0) - gammaln(m)
    elif ens.family is Family.SELECTION:
        m = math.exp(m_log)
        lw = gammaln(m + 1.0) - gammaln(ks + 1.0) - gammaln(np.maximum(m - ks, 0.0) + 1.0)
    else:
        lw = ks * (m_log - math.lgamma(i + 1.0)) - gammaln(ks + 1.0)
    return lw + i * ks * log_x


def build_tables(ens: EnsembleSpec, x: float, n: Optional[int] = None) -> SamplerTables:
    """Inversion tables for Z_i, i in U, i <= n, at tilt x.

    Raises Divergent when x is outside the summability region.
    """
    n = ens.n_max if n is None else int(n)
    ens = ens.with_n_max(max(ens.n_max, n))
    prof = moment_profile(ens, x, n)  # validates summability
    idx = prof.idx
    log_x = math.log(x)
    logm = ens.colors.log_values(idx)
    los = np.zeros(idx.size, dtype=np.int64)
    lam = np.zeros(idx.size)
    closed = _closed_tops(ens.family, idx.astype(float), logm, log_x)
    segments = []
    for pos, i in enumerate(idx.tolist()):
        rule = ens.rule(i)
        lo = rule.lo
        los[pos] = lo
        hi = ens.effective_hi(i)
        if prof.var[pos] == 0.0:
            segments.append(np.ones(1))
            continue
        if ens.family is Family.ASSEMBLY and lo == 0 and hi is None:
            mean = math.exp(logm[pos] + i * log_x - math.lgamma(i + 1.0))
            if mean > PTRS_MIN_MEAN:
                lam[pos] = mean
                segments.append(np.ones(1))
                continue
        if lo == 0 and np.isfinite(closed[pos]):
            top = int(closed[pos]) if hi is None else min(int(closed[pos]), hi)
        else:
            top = _upper(ens, i, x, lo, hi)
        ks = np.arange(lo, max(top, lo) + 1, dtype=float)
        lw = _log_weights(ens, i, float(logm[pos]), ks, log_x)
        p = np.exp(lw - lw.max())
        c = np.cumsum(p)
        c /= c[-1]
        c[-1] = 1.0
        segments.append(c)
    offsets = np.zeros(idx.size + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([s.size for s in segments])
    cdf = np.concatenate(segments) if segments else np.ones(0)
    return SamplerTables(float(x), np.ascontiguousarray(idx, dtype=np.int64), los, offsets, cdf, lam)


# ---------------------------------------------------------------------------
# free process


@dataclass
class SampleBatch:
    """Dense multiplicity rows plus the provenance header."""

    ensemble: str
    x: float
    seed: int
    idx: np.ndarray
    draws: np.ndarray
    rows: np.ndarray
    meta: dict = field(default_factory=dict)

    def vectors(self):
        return [MultiplicityVector.from_dense(self.idx, r) for r in self.rows]

    def column(self, i: int) -> np.ndarray:
        pos = np.searchsorted(self.idx, i)
        if pos >= self.idx.size or self.idx[pos] != i:
            return np.zeros(self.rows.shape[0], dtype=np.int64)
        return self.rows[:, pos]

    def totals(self) -> np.ndarray:
        return self.rows @ self.idx


def sample_free(ens: EnsembleSpec, x: float, seed: int, draw: int = 0,
                n: Optional[int] = None) -> MultiplicityVector:
    """One draw of the free process (Z_i), i in U, i <= n (default n_max)."""
    tab = build_tables(ens, x, n)
    row = kernels.draw_matrix(_check_seed(seed), np.array([draw], dtype=np.int64), *tab.args)[0]
    return MultiplicityVector.from_dense(tab.idx, row)


def sample_free_batch(ens: EnsembleSpec, x: float, seed: int, count: int, n: Optional[int] = None,
                      start: int = 0, tables: Optional[SamplerTables] = None) -> SampleBatch:
    tab = tables or build_tables(ens, x, n)
    draws = np.arange(start, start + int(count), dtype=np.int64)
    rows = kernels.draw_matrix(_check_seed(seed), draws, *tab.args)
    return SampleBatch(ens.key(), float(x), int(seed), tab.idx, draws, rows, {"kind": "free"})


def _next_member(ens: EnsembleSpec, after: int) -> int:
    n = max(2 * after, 16)
    while True:
        mem = ens.part_sizes.members(n)
        later = mem[mem > after]
        if later.size:
            return int(later[0])
        if n > 1 << 40:
            raise DomainError("part-size set has no member beyond the table")
        n *= 2


def free_smallest_gaps(ens: EnsembleSpec, x: float, seed: int, count: int, n: Optional[int] = None,
                       start: int = 0, tables: Optional[SamplerTables] = None) -> np.ndarray:
    """Smallest gap min{i in U : Z_i = 0} for `count` free draws."""
    tab = tables or build_tables(ens, x, n)
    draws = np.arange(start, start + int(count), dtype=np.int64)
    fallback = _next_member(ens, int(tab.idx[-1]) if tab.idx.size else 0)
    out = np.empty(draws.size, dtype=np.int64)
    for s in range(0, draws.size, _CHUNK):
        out[s:s + _CHUNK] = kernels.smallest_gaps(_check_seed(seed), draws[s:s + _CHUNK], *tab.args,
                                                  fallback)
    return out


# ---------------------------------------------------------------------------
# exact size by rejection


def _prepare(ens: EnsembleSpec, n: int, x: Optional[float]):
    n = int(n)
    if n < 1:
        raise DomainError(f"n must be positive, got {n}")
    full = ens.with_n_max(max(ens.n_max, n))
    if x is None:
        x = solve_tilt(full, n)
    moments = aggregate_moments(full, x, None, n)
    return full, float(x), moments


@dataclass
class ConditionalBatch(SampleBatch):
    attempts: int = 0
    sigma: float = 0.0
    predicted_rate: float = 0.0

    @property
    def acceptance_rate(self) -> float:
        return self.rows.shape[0] / self.attempts if self.attempts else 0.0


def sample_conditional_batch(ens: EnsembleSpec, n: int, count: int, seed: int, *,
                             max_attempts: Optional[float] = None, x: Optional[float] = None,
                             jobs: int = 1, chunk: int = _CHUNK) -> ConditionalBatch:
    """`count` exact size-n structures by rejection on {T = n}.

    Accepted draws are the first `count` draw numbers whose total equals n,
    so the output depends on the seed only (not on jobs or chunk).
    max_attempts is per accepted sample and defaults to 1e4 * sigma.
    """
    seed = _check_seed(seed)
    full, x, moments = _prepare(ens, n, x)
    tab = build_tables(full, x, n)
    sigma = moments.sigma
    cap = int(max_attempts if max_attempts is not None else max(1e4 * sigma, 1e4)) * int(count)
    predicted = gaussian_point_mass(moments, n).value if moments.var > 0 else 1.0
    accepted = []
    attempts = 0
    pool = ThreadPoolExecutor(jobs) if jobs > 1 else None

    def totals(start):
        draws = np.arange(start, min(start + chunk, cap), dtype=np.int64)
        return draws, kernels.weighted_totals(seed, draws, *tab.args, n)

    try:
        start = 0
        while len(accepted) < count:
            if start >= cap:
                raise AttemptsExhausted(f"{len(accepted)} of {count} samples after {cap} attempts")
            starts = list(range(start, min(start + chunk * max(jobs, 1), cap), chunk))
            results = pool.map(totals, starts) if pool else map(totals, starts)
            for draws, tot in results:
                hits = draws[tot == n]
                need = count - len(accepted)
                if hits.size >= need:
                    accepted.extend(hits[:need].tolist())
                    attempts = int(hits[need - 1]) + 1
                    break
                accepted.extend(hits.tolist())
                attempts = int(draws[-1]) + 1
            start = starts[-1] + chunk
    finally:
        if pool:
            pool.shutdown()
    draws = np.array(accepted, dtype=np.int64)
    rows = kernels.draw_matrix(seed, draws, *tab.args)
    return ConditionalBatch(full.key(), x, seed, tab.idx, draws, rows, {"kind": "conditional", "n": int(n)},
                            attempts=attempts, sigma=sigma, predicted_rate=predicted)


def sample_conditional(ens: EnsembleSpec, n: int, seed: int, max_attempts: Optional[float] = None,
                       x: Optional[float] = None) -> MultiplicityVector:
    """One exact size-n structure (weighted-uniform for coloured families)."""
    return sample_conditional_batch(ens, n, 1, seed, max_attempts=max_attempts, x=x).vectors()[0]


# ---------------------------------------------------------------------------
# statistics

STATISTICS = ("smallest_gap", "largest_part", "num_parts")


def statistic(sample: MultiplicityVector, kind: str, ens: Optional[EnsembleSpec] = None) -> int:
    """smallest_gap scans U ascending (all positive integers when ens is None)."""
    if not isinstance(sample, MultiplicityVector):
        sample = MultiplicityVector(sample)
    if kind == "largest_part":
        return max(sample.counts, default=0)
    if kind == "num_parts":
        return sample.num_parts
    if kind != "smallest_gap":
        raise DomainError(f"unknown statistic {kind!r}; expected one of {STATISTICS}")
    if ens is None:
        i = 1
        while sample[i] > 0:
            i += 1
        return i
    top = max(sample.counts, default=0)
    for i in ens.part_sizes.members(max(top, 1)).tolist():
        if sample[i] == 0:
            return int(i)
    return _next_member(ens, top)


# ---------------------------------------------------------------------------
# empirical total variation


@dataclass(frozen=True)
class EmpiricalTV:
    estimate: float
    band: float  # 97.5% bootstrap quantile of the resampling noise floor
    std: float  # bootstrap standard deviation of the estimate
    n_samples: int

    def covers(self, value: float) -> bool:
        return abs(self.estimate - value) <= self.band


def _reference_map(reference) -> dict:
    from .oracle import LatticeDistribution

    if isinstance(reference, LatticeDistribution):
        p = np.exp(reference.logpmf)
        return {k: float(v) for k, v in enumerate(p) if v > 0}
    if isinstance(reference, Mapping):
        return {k: float(v) for k, v in reference.items() if v}
    return {k: float(v) for k, v in enumerate(reference) if v}


def _keys(samples):
    """Hashable keys: scalars stay scalars, rows and shapes become tuples."""
    if isinstance(samples, np.ndarray):
        return samples.tolist() if samples.ndim == 1 else [tuple(r) for r in samples.tolist()]
    out = []
    for s in samples:
        if isinstance(s, MultiplicityVector):
            out.append(tuple(sorted(s.counts.items())))
        elif isinstance(s, (list, tuple, np.ndarray)):
            out.append(tuple(np.asarray(s).tolist()))
        elif isinstance(s, np.generic):
            out.append(s.item())
        else:
            out.append(s)
    return out


def _tv_counts(counts, total, ref):
    seen = 0.0
    acc = 0.0
    for key, c in counts.items():
        p = ref.get(key, 0.0)
        seen += p
        acc += abs(c / total - p)
    return 0.5 * (acc + max(0.0, 1.0 - seen))


def empirical_tv(samples, reference, *, n_boot: int = 200, seed: int = 0,
                 min_samples: int = 1000) -> EmpiricalTV:
    """Plug-in TV between the sample law and a reference pmf.

    samples is a sequence of values (or rows, compared as tuples); the
    reference is a LatticeDistribution, a mapping value -> probability or a
    sequence indexed by value.  The band is the 97.5% quantile of the TV
    between bootstrap resamples and the sample itself, which tracks the
    plug-in bias and shrinks like N^(-1/2).
    """
    keys = _keys(samples)
    N = len(keys)
    if N < min_samples:
        raise InsufficientSamples(f"need at least {min_samples} samples, got {N}")
    ref = _reference_map(reference)
    uniq = {}
    codes = np.empty(N, dtype=np.int64)
    for t, k in enumerate(keys):
        codes[t] = uniq.setdefault(k, len(uniq))
    labels = list(uniq)
    base = np.bincount(codes, minlength=len(labels))
    est = _tv_counts(dict(zip(labels, base)), N, ref)
    rng = np.random.default_rng(seed)
    p_hat = base / N
    p_ref = np.array([ref.get(k, 0.0) for k in labels])
    unseen = max(0.0, 1.0 - p_ref.sum())
    boot = rng.multinomial(N, p_hat, size=n_boot) / N
    noise = 0.5 * np.abs(boot - p_hat).sum(axis=1)
    tvs = 0.5 * (np.abs(boot - p_ref).sum(axis=1) + unseen)
    return EmpiricalTV(float(est), float(np.quantile(noise, 0.975)), float(tvs.std()), N)


# ---------------------------------------------------------------------------
# NDJSON persistence


def write_ndjson(batch: SampleBatch, path) -> None:
    """Header line (ensemble hash, tilt, seed) then one multiplicity map per line."""
    header = {"type": "header", "ensemble": batch.ensemble, "x": batch.x, "seed": str(batch.seed),
              "count": int(batch.rows.shape[0]), **batch.meta}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for d, row in zip(batch.draws.tolist(), batch.rows):
            vec = MultiplicityVector.from_dense(batch.idx, row)
            fh.write(json.dumps({"draw": d, "m": vec.to_json()}, sort_keys=True) + "\n")


def read_ndjson(path):
    """Returns (header dict, list of (draw, MultiplicityVector))."""
    out = []
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty sample file", line=1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as err:
        raise ParseError(f"bad header: {err}", line=1) from err
    if header.get("type") != "header":
        raise ParseError("first record must be the header", line=1)
    for ln, text in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(text)
            out.append((int(rec["draw"]), MultiplicityVector({int(k): v for k, v in rec["m"].items()})))
        except (json.JSONDecodeError, KeyError, ValueError) as err:
            raise ParseError(f"bad sample record: {err}", line=ln) from err
    header["seed"] = int(header["seed"])
    return header, out


def fraction_map(pmf: Iterable) -> dict:
    """Fractions (or floats) indexed by value -> float mapping for empirical_tv."""
    return {k: float(Fraction(v)) for k, v in enumerate(pmf) if v}
