"""Numba-accelerated inner loops with pure-numpy fallbacks.

Every kernel exists twice: a ``*_numpy`` reference implementation and a
numba ``@njit`` version compiled at import time.  The public names dispatch
to the numba build unless the environment variable ``HITOP_NO_NUMBA`` is
set to a truthy value (or numba is unavailable), in which case the numpy
path is used.  Both paths are bitwise-equivalent; ``benches/bench_kernels.py``
times them against each other.
"""

from __future__ import annotations

import os

import numpy as np

_FLAG = os.environ.get("HITOP_NO_NUMBA", "").strip().lower()
USE_NUMBA = _FLAG not in ("1", "true", "yes", "on")

if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a hard dependency
        USE_NUMBA = False

if not USE_NUMBA:  # identity decorator so the same source defines both paths
    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if len(args) == 1 and callable(args[0]):
            return args[0]
        return wrap


def backend() -> str:
    """Name of the active kernel backend ('numba' or 'numpy')."""
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# Guo-Hall thinning subiteration
# ---------------------------------------------------------------------------
# One synchronous deletion pass over a 0/1 uint8 image.  `phase` selects the
# first or second subiteration mask.  Returns the number of deleted pixels;
# deletions are applied to `out` (a copy of `img` prepared by the caller).


def _thin_pass_py(img, out, phase):
    nrows, ncols = img.shape
    deleted = 0
    for r in range(nrows):
        for c in range(ncols):
            if img[r, c] == 0:
                continue
            p2 = img[r - 1, c] if r > 0 else 0
            p3 = img[r - 1, c + 1] if (r > 0 and c < ncols - 1) else 0
            p4 = img[r, c + 1] if c < ncols - 1 else 0
            p5 = img[r + 1, c + 1] if (r < nrows - 1 and c < ncols - 1) else 0
            p6 = img[r + 1, c] if r < nrows - 1 else 0
            p7 = img[r + 1, c - 1] if (r < nrows - 1 and c > 0) else 0
            p8 = img[r, c - 1] if c > 0 else 0
            p9 = img[r - 1, c - 1] if (r > 0 and c > 0) else 0

            C = (
                ((1 - p2) & (p3 | p4))
                + ((1 - p4) & (p5 | p6))
                + ((1 - p6) & (p7 | p8))
                + ((1 - p8) & (p9 | p2))
            )
            n1 = (p9 | p2) + (p3 | p4) + (p5 | p6) + (p7 | p8)
            n2 = (p2 | p3) + (p4 | p5) + (p6 | p7) + (p8 | p9)
            n = n1 if n1 < n2 else n2
            if phase == 0:
                m = (p6 | p7 | (1 - p9)) & p8
            else:
                m = (p2 | p3 | (1 - p5)) & p4
            if C == 1 and 2 <= n <= 3 and m == 0:
                out[r, c] = 0
                deleted += 1
    return deleted


_thin_pass_numba = njit(cache=True)(_thin_pass_py) if USE_NUMBA else None


def thin_pass_numpy(img: np.ndarray, out: np.ndarray, phase: int) -> int:
    """Vectorized Guo-Hall subiteration, identical to the scalar kernel."""
    p = np.pad(img, 1)
    p2 = p[:-2, 1:-1]
    p3 = p[:-2, 2:]
    p4 = p[1:-1, 2:]
    p5 = p[2:, 2:]
    p6 = p[2:, 1:-1]
    p7 = p[2:, :-2]
    p8 = p[1:-1, :-2]
    p9 = p[:-2, :-2]

    C = (
        ((1 - p2) & (p3 | p4))
        + ((1 - p4) & (p5 | p6))
        + ((1 - p6) & (p7 | p8))
        + ((1 - p8) & (p9 | p2))
    )
    n1 = (p9 | p2) + (p3 | p4) + (p5 | p6) + (p7 | p8)
    n2 = (p2 | p3) + (p4 | p5) + (p6 | p7) + (p8 | p9)
    n = np.minimum(n1, n2)
    if phase == 0:
        m = (p6 | p7 | (1 - p9)) & p8
    else:
        m = (p2 | p3 | (1 - p5)) & p4
    kill = (img == 1) & (C == 1) & (n >= 2) & (n <= 3) & (m == 0)
    out[kill] = 0
    return int(kill.sum())


def thin_pass(img: np.ndarray, out: np.ndarray, phase: int) -> int:
    if USE_NUMBA:
        return _thin_pass_numba(img, out, phase)
    return thin_pass_numpy(img, out, phase)


def thin_pass_scalar(img: np.ndarray, out: np.ndarray, phase: int) -> int:
    """Scalar kernel (numba-compiled when available); exposed for benchmarks."""
    if USE_NUMBA:
        return _thin_pass_numba(img, out, phase)
    return _thin_pass_py(img, out, phase)


# ---------------------------------------------------------------------------
# Variable-radius filter neighborhoods
# ---------------------------------------------------------------------------
# Receiver-centered neighborhoods on a regular element grid: element e at
# (r, c) collects every element i with centroid distance <= rmin[e]; the
# weight is rmin[e] - dist (zero on the boundary of the ball).  Output is
# CSR with column indices sorted within each row.


def _filter_csr_counts_py(nely, nelx, rmin):
    counts = np.zeros(nely * nelx + 1, dtype=np.int64)
    for r in range(nely):
        for c in range(nelx):
            e = r * nelx + c
            re = rmin[e]
            R = int(np.floor(re))
            n = 0
            for dr in range(-R, R + 1):
                rr = r + dr
                if rr < 0 or rr >= nely:
                    continue
                for dc in range(-R, R + 1):
                    cc = c + dc
                    if cc < 0 or cc >= nelx:
                        continue
                    if np.sqrt(dr * dr + dc * dc) <= re:
                        n += 1
            counts[e + 1] = n
    return counts


def _filter_csr_fill_py(nely, nelx, rmin, indptr, indices, weights):
    for r in range(nely):
        for c in range(nelx):
            e = r * nelx + c
            re = rmin[e]
            R = int(np.floor(re))
            k = indptr[e]
            for dr in range(-R, R + 1):
                rr = r + dr
                if rr < 0 or rr >= nely:
                    continue
                for dc in range(-R, R + 1):
                    cc = c + dc
                    if cc < 0 or cc >= nelx:
                        continue
                    d = np.sqrt(dr * dr + dc * dc)
                    if d <= re:
                        indices[k] = rr * nelx + cc
                        weights[k] = re - d
                        k += 1


if USE_NUMBA:
    _filter_csr_counts_numba = njit(cache=True)(_filter_csr_counts_py)
    _filter_csr_fill_numba = njit(cache=True)(_filter_csr_fill_py)


def filter_csr_numpy(nely: int, nelx: int, rmin: np.ndarray):
    """Offset-vectorized neighborhood build; same CSR as the scalar kernel."""
    rmin2d = rmin.reshape(nely, nelx)
    rmax = int(np.floor(rmin2d.max()))
    rows_l, cols_l, w_l = [], [], []
    rr, cc = np.meshgrid(np.arange(nely), np.arange(nelx), indexing="ij")
    for dr in range(-rmax, rmax + 1):
        for dc in range(-rmax, rmax + 1):
            d = np.sqrt(float(dr * dr + dc * dc))
            nr, nc = rr + dr, cc + dc
            ok = (d <= rmin2d) & (nr >= 0) & (nr < nely) & (nc >= 0) & (nc < nelx)
            if not ok.any():
                continue
            rows_l.append((rr[ok] * nelx + cc[ok]).astype(np.int64))
            cols_l.append((nr[ok] * nelx + nc[ok]).astype(np.int64))
            w_l.append(rmin2d[ok] - d)
    rows = np.concatenate(rows_l)
    cols = np.concatenate(cols_l)
    w = np.concatenate(w_l)
    n = nely * nelx
    order = np.lexsort((cols, rows))
    rows, cols, w = rows[order], cols[order], w[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, rows + 1, 1)
    indptr = np.cumsum(indptr)
    return indptr, cols, w


def filter_csr(nely: int, nelx: int, rmin: np.ndarray):
    rmin = np.ascontiguousarray(rmin, dtype=np.float64).ravel()
    if USE_NUMBA:
        indptr = np.cumsum(_filter_csr_counts_numba(nely, nelx, rmin))
        indices = np.empty(indptr[-1], dtype=np.int64)
        weights = np.empty(indptr[-1], dtype=np.float64)
        _filter_csr_fill_numba(nely, nelx, rmin, indptr, indices, weights)
        return indptr, indices, weights
    return filter_csr_numpy(nely, nelx, rmin)


def filter_csr_scalar(nely: int, nelx: int, rmin: np.ndarray):
    """Scalar-kernel build (numba when available); exposed for benchmarks."""
    rmin = np.ascontiguousarray(rmin, dtype=np.float64).ravel()
    counts = (_filter_csr_counts_numba if USE_NUMBA else _filter_csr_counts_py)(
        nely, nelx, rmin
    )
    indptr = np.cumsum(counts)
    indices = np.empty(indptr[-1], dtype=np.int64)
    weights = np.empty(indptr[-1], dtype=np.float64)
    (_filter_csr_fill_numba if USE_NUMBA else _filter_csr_fill_py)(
        nely, nelx, rmin, indptr, indices, weights
    )
    return indptr, indices, weights


# ---------------------------------------------------------------------------
# Bresenham segment rasterization
# ---------------------------------------------------------------------------


def _line_pixels_py(r0, c0, r1, c1, out):
    dr = abs(r1 - r0)
    dc = abs(c1 - c0)
    sr = 1 if r0 < r1 else -1
    sc = 1 if c0 < c1 else -1
    err = dc - dr
    r, c = r0, c0
    k = 0
    while True:
        out[k, 0] = r
        out[k, 1] = c
        k += 1
        if r == r1 and c == c1:
            break
        e2 = 2 * err
        if e2 > -dr:
            err -= dr
            c += sc
        if e2 < dc:
            err += dc
            r += sr
    return k


_line_pixels_numba = njit(cache=True)(_line_pixels_py) if USE_NUMBA else None


def line_pixels(r0: int, c0: int, r1: int, c1: int) -> np.ndarray:
    """Integer pixels of the segment (r0,c0)->(r1,c1), endpoints inclusive."""
    n = max(abs(r1 - r0), abs(c1 - c0)) + 1
    out = np.empty((n, 2), dtype=np.int64)
    fn = _line_pixels_numba if USE_NUMBA else _line_pixels_py
    k = fn(int(r0), int(c0), int(r1), int(c1), out)
    return out[:k]
