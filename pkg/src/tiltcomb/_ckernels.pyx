# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled sampling kernels; same API and streams as _kernels_py."""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor, log, sqrt, fabs
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()

cdef double INV53 = 1.0 / 9007199254740992.0
cdef double HALF_LOG_2PI = 0.9189385332046728
cdef double LOG_FACT[17]

cdef void _init_table():
    cdef int k
    LOG_FACT[0] = 0.0
    for k in range(1, 17):
        LOG_FACT[k] = LOG_FACT[k - 1] + log(<double>k)

_init_table()


cdef inline uint64_t _mix(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double _uniform(uint64_t seed, int64_t i, int64_t draw, int64_t j) noexcept nogil:
    cdef uint64_t h = _mix(seed + <uint64_t>0x9E3779B97F4A7C15ULL)
    h = _mix(h ^ ((<uint64_t>i + 1) * <uint64_t>0xD1B54A32D192ED03ULL))
    h = _mix(h ^ ((<uint64_t>draw + 1) * <uint64_t>0x8CB92BA72F3D8DD7ULL))
    h = _mix(h ^ ((<uint64_t>j + 1) * <uint64_t>0x9E3779B97F4A7C15ULL))
    return (<double>(h >> 11) + 0.5) * INV53


cdef inline double _log_factorial(int64_t k) noexcept nogil:
    cdef double z, iz, iz2
    if k <= 16:
        return LOG_FACT[k]
    z = k + 1.0
    iz = 1.0 / z
    iz2 = iz * iz
    return ((z - 0.5) * log(z) - z + HALF_LOG_2PI
            + iz * (1.0 / 12.0 - iz2 * (1.0 / 360.0 - iz2 * (1.0 / 1260.0))))


cdef int64_t _ptrs(uint64_t seed, int64_t i, int64_t draw, double lam) noexcept nogil:
    cdef double slam = sqrt(lam)
    cdef double loglam = log(lam)
    cdef double b = 0.931 + 2.53 * slam
    cdef double a = -0.059 + 0.02483 * b
    cdef double invalpha = 1.1239 + 1.1328 / (b - 3.4)
    cdef double vr = 0.9277 - 3.6224 / (b - 2.0)
    cdef double U, V, us, kf
    cdef int64_t j = 0, k
    while True:
        U = _uniform(seed, i, draw, 2 * j) - 0.5
        V = _uniform(seed, i, draw, 2 * j + 1)
        j += 1
        us = 0.5 - fabs(U)
        kf = floor((2.0 * a / us + b) * U + lam + 0.43)
        k = <int64_t>kf
        if us >= 0.07 and V <= vr:
            return k
        if k < 0 or (us < 0.013 and V > us):
            continue
        if (log(V) + log(invalpha) - log(a / (us * us) + b)
                <= -lam + k * loglam - _log_factorial(k)):
            return k


cdef inline int64_t _draw_one(uint64_t seed, int64_t draw, Py_ssize_t col, const int64_t* idx,
                              const int64_t* lo, const int64_t* offsets, const double* cdf,
                              const double* lam) noexcept nogil:
    cdef double u
    cdef Py_ssize_t left, right, mid
    if lam[col] > 0.0:
        return _ptrs(seed, idx[col], draw, lam[col]) + lo[col]
    u = _uniform(seed, idx[col], draw, 0)
    # first position with cdf >= u (searchsorted, side='left')
    left = offsets[col]
    right = offsets[col + 1]
    while left < right:
        mid = (left + right) >> 1
        if cdf[mid] < u:
            left = mid + 1
        else:
            right = mid
    if left >= offsets[col + 1]:
        left = offsets[col + 1] - 1
    return left - offsets[col] + lo[col]


def uniforms(seed, i, draw, j):
    ia, da, ja = np.broadcast_arrays(np.asarray(i, dtype=np.int64), np.asarray(draw, dtype=np.int64),
                                     np.asarray(j, dtype=np.int64))
    shape = da.shape
    cdef const int64_t[:] iv = np.ascontiguousarray(ia).ravel()
    cdef const int64_t[:] dv = np.ascontiguousarray(da).ravel()
    cdef const int64_t[:] jv = np.ascontiguousarray(ja).ravel()
    cdef uint64_t s = <uint64_t>int(seed)
    out = np.empty(dv.shape[0], dtype=np.float64)
    cdef double[:] o = out
    cdef Py_ssize_t t
    with nogil:
        for t in range(dv.shape[0]):
            o[t] = _uniform(s, iv[t], dv[t], jv[t])
    return out.reshape(shape)


def draw_matrix(seed, draws, idx, lo, offsets, cdf, lam):
    cdef const int64_t[:] dv = np.ascontiguousarray(draws, dtype=np.int64)
    cdef const int64_t[:] iv = np.ascontiguousarray(idx, dtype=np.int64)
    cdef const int64_t[:] lv = np.ascontiguousarray(lo, dtype=np.int64)
    cdef const int64_t[:] ov = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef const double[:] cv = np.ascontiguousarray(cdf, dtype=np.float64)
    cdef const double[:] av = np.ascontiguousarray(lam, dtype=np.float64)
    cdef uint64_t s = <uint64_t>int(seed)
    out = np.empty((dv.shape[0], iv.shape[0]), dtype=np.int64)
    cdef int64_t[:, :] o = out
    cdef Py_ssize_t r, c
    with nogil:
        for r in range(dv.shape[0]):
            for c in range(iv.shape[0]):
                o[r, c] = _draw_one(s, dv[r], c, &iv[0], &lv[0], &ov[0], &cv[0], &av[0])
    return out


def weighted_totals(seed, draws, idx, lo, offsets, cdf, lam, cap):
    cdef const int64_t[:] dv = np.ascontiguousarray(draws, dtype=np.int64)
    cdef const int64_t[:] iv = np.ascontiguousarray(idx, dtype=np.int64)
    cdef const int64_t[:] lv = np.ascontiguousarray(lo, dtype=np.int64)
    cdef const int64_t[:] ov = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef const double[:] cv = np.ascontiguousarray(cdf, dtype=np.float64)
    cdef const double[:] av = np.ascontiguousarray(lam, dtype=np.float64)
    cdef uint64_t s = <uint64_t>int(seed)
    cdef int64_t limit = cap
    out = np.empty(dv.shape[0], dtype=np.int64)
    cdef int64_t[:] o = out
    cdef Py_ssize_t r, c
    cdef int64_t tot
    with nogil:
        for r in range(dv.shape[0]):
            tot = 0
            for c in range(iv.shape[0]):
                tot += iv[c] * _draw_one(s, dv[r], c, &iv[0], &lv[0], &ov[0], &cv[0], &av[0])
                if tot > limit:
                    break
            o[r] = tot if tot <= limit else limit + 1
    return out


def smallest_gaps(seed, draws, idx, lo, offsets, cdf, lam, fallback):
    cdef const int64_t[:] dv = np.ascontiguousarray(draws, dtype=np.int64)
    cdef const int64_t[:] iv = np.ascontiguousarray(idx, dtype=np.int64)
    cdef const int64_t[:] lv = np.ascontiguousarray(lo, dtype=np.int64)
    cdef const int64_t[:] ov = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef const double[:] cv = np.ascontiguousarray(cdf, dtype=np.float64)
    cdef const double[:] av = np.ascontiguousarray(lam, dtype=np.float64)
    cdef uint64_t s = <uint64_t>int(seed)
    cdef int64_t fb = fallback
    out = np.empty(dv.shape[0], dtype=np.int64)
    cdef int64_t[:] o = out
    cdef Py_ssize_t r, c
    with nogil:
        for r in range(dv.shape[0]):
            o[r] = fb
            for c in range(iv.shape[0]):
                if _draw_one(s, dv[r], c, &iv[0], &lv[0], &ov[0], &cv[0], &av[0]) == 0:
                    o[r] = iv[c]
                    break
    return out
