"""Hot inner loops, each in a numba-compiled and a pure-numpy flavour.

Backend selection: ``EHOPT_NUMBA=0`` (or a missing numba install) routes
every kernel through the numpy path.  Both paths produce identical results,
including argmax tie-breaking (smallest index wins).
"""
from __future__ import annotations

import os

import numpy as np

try:  # pragma: no cover - exercised implicitly
    import numba
except ImportError:  # pragma: no cover
    numba = None

NUMBA_AVAILABLE = numba is not None
_FLAG = os.environ.get("EHOPT_NUMBA", "1").strip().lower()
USE_NUMBA = NUMBA_AVAILABLE and _FLAG not in ("0", "false", "off", "no")

NEG_INF = -np.inf


def _njit(fn):
    if not NUMBA_AVAILABLE:
        return None
    return numba.njit(cache=True, nogil=True)(fn)


def _resolve(backend: str | None) -> str:
    if backend is None:
        return "numba" if USE_NUMBA else "numpy"
    if backend == "numba" and not NUMBA_AVAILABLE:
        raise RuntimeError("numba backend requested but numba is not installed")
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    return backend


def backend_name() -> str:
    return _resolve(None)


# max-plus convolution ---------------------------------------------------------
#   out[j] = max_{i} a[i] + c[j - i],  0 <= i < len(a), 0 <= j - i < len(c)
# plus the maximizing i.  Used for Bellman sweeps (a = stage utility over
# actions, c = continuation over leftover battery) and for forward grid
# searches over cumulative consumption.


def _maxplus_loop(a, c, out_len):
    na = a.shape[0]
    nc = c.shape[0]
    out = np.full(out_len, -np.inf)
    arg = np.full(out_len, -1, dtype=np.int64)
    for j in range(out_len):
        lo = j - nc + 1
        if lo < 0:
            lo = 0
        hi = j if j < na - 1 else na - 1
        best = -np.inf
        besti = -1
        for i in range(lo, hi + 1):
            v = a[i] + c[j - i]
            if v > best:
                best = v
                besti = i
        out[j] = best
        arg[j] = besti
    return out, arg


_maxplus_numba = _njit(_maxplus_loop)


def _maxplus_numpy(a, c, out_len):
    na, nc = a.shape[0], c.shape[0]
    out = np.full(out_len, -np.inf)
    arg = np.full(out_len, -1, dtype=np.int64)
    c_rev = c[::-1]
    for j in range(out_len):
        lo = max(0, j - nc + 1)
        hi = min(j, na - 1)
        if hi < lo:
            continue
        # c[j - i] for i = lo..hi  ==  c_rev[nc - 1 - j + i]
        vals = a[lo:hi + 1] + c_rev[nc - 1 - j + lo: nc - j + hi]
        k = int(np.argmax(vals))
        if vals[k] > -np.inf:
            out[j] = vals[k]
            arg[j] = lo + k
    return out, arg


def maxplus_conv(a, c, out_len: int | None = None, backend: str | None = None):
    a = np.ascontiguousarray(a, dtype=np.float64)
    c = np.ascontiguousarray(c, dtype=np.float64)
    if out_len is None:
        out_len = a.shape[0] + c.shape[0] - 1
    if _resolve(backend) == "numba":
        return _maxplus_numba(a, c, int(out_len))
    return _maxplus_numpy(a, c, int(out_len))


# serve-set enumeration --------------------------------------------------------
# Largest subset S of blocks such that spending need[t] on every t in S keeps
# the cumulative consumption under cap.  Ties go to the lexicographically
# earliest set, i.e. the largest bit-reversed mask.


def _serve_loop(need, cap, tol):
    T = need.shape[0]
    best_mask = 0
    best_count = 0
    best_rev = 0
    for mask in range(1 << T):
        used = 0.0
        ok = True
        count = 0
        rev = 0
        for t in range(T):
            if (mask >> t) & 1:
                used += need[t]
                count += 1
                rev |= 1 << (T - 1 - t)
            if used > cap[t] + tol:
                ok = False
                break
        if not ok:
            continue
        if count > best_count or (count == best_count and rev > best_rev):
            best_count = count
            best_mask = mask
            best_rev = rev
    return best_mask, best_count


_serve_numba = _njit(_serve_loop)


def _serve_numpy(need, cap, tol, chunk=1 << 16):
    T = need.shape[0]
    shifts = np.arange(T, dtype=np.int64)
    weights = np.left_shift(np.int64(1), (T - 1 - shifts))
    best = (-1, -1, 0)  # (count, rev, mask)
    for start in range(0, 1 << T, chunk):
        masks = np.arange(start, min(start + chunk, 1 << T), dtype=np.int64)
        bits = (masks[:, None] >> shifts) & 1
        used = np.cumsum(np.where(bits == 1, need, 0.0), axis=1)
        ok = np.all(used <= cap + tol, axis=1)
        if not ok.any():
            continue
        bits, masks = bits[ok], masks[ok]
        counts = bits.sum(axis=1)
        revs = bits @ weights
        top = counts.max()
        sel = np.flatnonzero(counts == top)
        k = sel[np.argmax(revs[sel])]
        cand = (int(top), int(revs[k]), int(masks[k]))
        if cand[:2] > best[:2]:
            best = cand
    return best[2], max(best[0], 0)


def best_serve_set(need, cap, tol: float = 1e-9, backend: str | None = None):
    need = np.ascontiguousarray(need, dtype=np.float64)
    cap = np.ascontiguousarray(cap, dtype=np.float64)
    if _resolve(backend) == "numba":
        mask, count = _serve_numba(need, cap, float(tol))
    else:
        mask, count = _serve_numpy(need, cap, float(tol))
    return int(mask), int(count)
