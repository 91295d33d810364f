"""Pure numpy sampling kernels (fallback for the compiled extension).

Every random number is a pure function of (seed, index i, draw number,
sub-draw j), so draws can be regenerated in any order and the two backends
produce identical streams.  Marginals are sampled by inversion on
precomputed CDF tables; Poisson marginals with large means use the PTRS
transformed-rejection method.
"""
import math

import numpy as np

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_KI = np.uint64(0xD1B54A32D192ED03)
_KD = np.uint64(0x8CB92BA72F3D8DD7)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0
_MASK = (1 << 64) - 1

LOG_FACT_SMALL = [0.0]
for _k in range(1, 17):
    LOG_FACT_SMALL.append(LOG_FACT_SMALL[-1] + math.log(_k))
_HALF_LOG_2PI = 0.9189385332046728


def _mix(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def _key(seed, i, draw, j):
    with np.errstate(over="ignore"):
        h = _mix(np.uint64(seed) + _GOLDEN)
        h = _mix(h ^ ((np.asarray(i).astype(np.uint64) + np.uint64(1)) * _KI))
        h = _mix(h ^ ((np.asarray(draw).astype(np.uint64) + np.uint64(1)) * _KD))
        h = _mix(h ^ ((np.asarray(j).astype(np.uint64) + np.uint64(1)) * _GOLDEN))
    return h


def uniforms(seed, i, draw, j):
    """Uniform(0, 1) variates keyed by (seed, i, draw, j); never 0 or 1."""
    h = _key(seed, i, draw, j)
    return ((h >> _S11).astype(np.float64) + 0.5) * _INV53


# scalar helpers mirrored exactly by the compiled kernel

def _mix_int(z):
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def uniform_scalar(seed, i, draw, j):
    h = _mix_int((seed + 0x9E3779B97F4A7C15) & _MASK)
    h = _mix_int(h ^ (((i + 1) * 0xD1B54A32D192ED03) & _MASK))
    h = _mix_int(h ^ (((draw + 1) * 0x8CB92BA72F3D8DD7) & _MASK))
    h = _mix_int(h ^ (((j + 1) * 0x9E3779B97F4A7C15) & _MASK))
    return ((h >> 11) + 0.5) * _INV53


def log_factorial(k):
    """log k!: exact table below 17, Stirling series above."""
    if k <= 16:
        return LOG_FACT_SMALL[k]
    z = k + 1.0
    iz = 1.0 / z
    iz2 = iz * iz
    return ((z - 0.5) * math.log(z) - z + _HALF_LOG_2PI
            + iz * (1.0 / 12.0 - iz2 * (1.0 / 360.0 - iz2 * (1.0 / 1260.0))))


def poisson_ptrs(seed, i, draw, lam):
    """Poisson(lam) by transformed rejection with squeeze (lam > 10)."""
    slam = math.sqrt(lam)
    loglam = math.log(lam)
    b = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * b
    invalpha = 1.1239 + 1.1328 / (b - 3.4)
    vr = 0.9277 - 3.6224 / (b - 2.0)
    j = 0
    while True:
        U = uniform_scalar(seed, i, draw, 2 * j) - 0.5
        V = uniform_scalar(seed, i, draw, 2 * j + 1)
        j += 1
        us = 0.5 - abs(U)
        k = math.floor((2.0 * a / us + b) * U + lam + 0.43)
        if us >= 0.07 and V <= vr:
            return int(k)
        if k < 0 or (us < 0.013 and V > us):
            continue
        if (math.log(V) + math.log(invalpha) - math.log(a / (us * us) + b)
                <= -lam + k * loglam - log_factorial(int(k))):
            return int(k)


def _column(seed, draws, col, idx, lo, offsets, cdf, lam):
    i = int(idx[col])
    if lam[col] > 0.0:
        vals = np.array([poisson_ptrs(seed, i, int(d), float(lam[col])) for d in draws], dtype=np.int64)
        return vals + lo[col]
    seg = cdf[offsets[col]:offsets[col + 1]]
    u = uniforms(seed, np.full(draws.shape, i, dtype=np.int64), draws, np.zeros_like(draws))
    pos = np.searchsorted(seg, u, side="left")
    np.minimum(pos, seg.size - 1, out=pos)
    return pos.astype(np.int64) + lo[col]


def draw_matrix(seed, draws, idx, lo, offsets, cdf, lam):
    """Multiplicities for each draw (rows) and index (columns)."""
    draws = np.asarray(draws, dtype=np.int64)
    out = np.empty((draws.size, len(idx)), dtype=np.int64)
    for col in range(len(idx)):
        out[:, col] = _column(seed, draws, col, idx, lo, offsets, cdf, lam)
    return out


def weighted_totals(seed, draws, idx, lo, offsets, cdf, lam, cap):
    """sum_i i Z_i per draw; anything above cap is reported as cap + 1."""
    draws = np.asarray(draws, dtype=np.int64)
    tot = np.zeros(draws.size, dtype=np.int64)
    for col in range(len(idx)):
        tot += int(idx[col]) * _column(seed, draws, col, idx, lo, offsets, cdf, lam)
    np.minimum(tot, cap + 1, out=tot)
    return tot


def smallest_gaps(seed, draws, idx, lo, offsets, cdf, lam, fallback):
    """First index (in table order) whose multiplicity is zero."""
    draws = np.asarray(draws, dtype=np.int64)
    out = np.full(draws.size, fallback, dtype=np.int64)
    live = np.arange(draws.size)
    for col in range(len(idx)):
        if live.size == 0:
            break
        z = _column(seed, draws[live], col, idx, lo, offsets, cdf, lam)
        hit = z == 0
        out[live[hit]] = idx[col]
        live = live[~hit]
    return out
