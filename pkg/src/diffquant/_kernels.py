"""Compiled inner loops: nearest-entry search and the discrete Hölder seminorm."""

from __future__ import annotations

import numpy as np
from numba import njit

# Above this many (path, entry) pairs the L^2 search switches to a matrix-product
# prefilter followed by an exact recheck of the near-optimal candidates.
_GEMM_THRESHOLD = 200_000
_GEMM_CHUNK = 4_000_000


@njit(cache=True)
def _nearest_sup(entries, paths, order, start):
    n_paths, n, d = paths.shape
    n_entries = entries.shape[0]
    idx = np.empty(n_paths, np.int64)
    dist = np.empty(n_paths)
    for p in range(n_paths):
        # exact distance to the warm-start entry gives the initial bound
        k0 = start[p]
        best = 0.0
        for j in range(n):
            s = 0.0
            for c in range(d):
                diff = paths[p, j, c] - entries[k0, j, c]
                s += diff * diff
            if s > best:
                best = s
        best_k = k0
        for k in range(n_entries):
            if k == k0:
                continue
            cur = 0.0
            for jj in range(n):
                j = order[jj]
                s = 0.0
                for c in range(d):
                    diff = paths[p, j, c] - entries[k, j, c]
                    s += diff * diff
                if s > cur:
                    cur = s
                    if cur > best:
                        break
            if cur < best or (cur == best and k < best_k):
                best = cur
                best_k = k
        idx[p] = best_k
        dist[p] = np.sqrt(best)
    return idx, dist


def _visit_order(n: int, stride: int = 16) -> np.ndarray:
    return np.concatenate([np.arange(o, n, stride) for o in range(min(stride, n))]).astype(np.int64)


@njit(cache=True)
def _nearest_lq(entries, paths, weights, q):
    n_paths, n, d = paths.shape
    n_entries = entries.shape[0]
    idx = np.empty(n_paths, np.int64)
    dist = np.empty(n_paths)
    half_q = 0.5 * q
    for p in range(n_paths):
        best = np.inf
        best_k = 0
        for k in range(n_entries):
            acc = 0.0
            for j in range(n):
                wj = weights[j]
                if wj == 0.0:
                    continue
                s = 0.0
                for c in range(d):
                    diff = paths[p, j, c] - entries[k, j, c]
                    s += diff * diff
                if q == 2.0:
                    acc += wj * s
                else:
                    acc += wj * s**half_q
                if acc >= best:
                    break
            if acc < best:
                best = acc
                best_k = k
        idx[p] = best_k
        dist[p] = best ** (1.0 / q)
    return idx, dist


@njit(cache=True)
def _holder_seminorm(values, dt, alpha):
    n, d = values.shape
    lag_pow = np.empty(n)
    lag_pow[0] = 1.0
    for h in range(1, n):
        lag_pow[h] = (h * dt) ** alpha
    best = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            s = 0.0
            for c in range(d):
                diff = values[j, c] - values[i, c]
                s += diff * diff
            r = np.sqrt(s) / lag_pow[j - i]
            if r > best:
                best = r
    return best


def holder_seminorm_values(values: np.ndarray, dt: float, alpha: float) -> float:
    return float(_holder_seminorm(np.ascontiguousarray(values, dtype=float), float(dt), float(alpha)))


def nearest_batch(entries: np.ndarray, paths: np.ndarray, norm: str, q: float = 2.0,
                  weights: np.ndarray | None = None):
    """Nearest entry for each path under the sup or weighted L^q grid norm.

    Parameters
    ----------
    entries : ndarray, shape (K, n, d)
    paths : ndarray, shape (P, n, d)
    norm : {"sup", "lq"}
    q : float
        Exponent for ``norm="lq"``.
    weights : ndarray, shape (n,)
        Quadrature weights for ``norm="lq"``.

    Returns
    -------
    idx : ndarray of int64
        Smallest index attaining the minimum.
    dist : ndarray of float
    """
    entries = np.ascontiguousarray(entries, dtype=float)
    paths = np.ascontiguousarray(paths, dtype=float)
    if norm == "sup":
        n = paths.shape[1]
        if entries.shape[0] * paths.shape[0] > _GEMM_THRESHOLD // 10:
            start, _ = _nearest_l2_gemm(entries, paths, np.full(n, 1.0), exact=False)
        else:
            start = np.zeros(paths.shape[0], np.int64)
        return _nearest_sup(entries, paths, _visit_order(n), start)
    weights = np.ascontiguousarray(weights, dtype=float)
    if q == 2.0 and entries.shape[0] * paths.shape[0] > _GEMM_THRESHOLD:
        return _nearest_l2_gemm(entries, paths, weights)
    return _nearest_lq(entries, paths, weights, float(q))


def _nearest_l2_gemm(entries, paths, weights, exact=True):
    K = entries.shape[0]
    P = paths.shape[0]
    sw = np.sqrt(weights)[None, :, None]
    C = (entries * sw).reshape(K, -1)
    cn = np.einsum("ij,ij->i", C, C)
    idx = np.empty(P, np.int64)
    dist = np.empty(P)
    chunk = max(1, _GEMM_CHUNK // K)
    for start in range(0, P, chunk):
        stop = min(P, start + chunk)
        X = (paths[start:stop] * sw).reshape(stop - start, -1)
        xn = np.einsum("ij,ij->i", X, X)
        d2 = xn[:, None] - 2.0 * (X @ C.T) + cn[None, :]
        if not exact:
            idx[start:stop] = np.argmin(d2, axis=1)
            continue
        lo = d2.min(axis=1)
        tol = 1e-9 * (xn + cn.max()) + 1e-300
        near = d2 <= (lo + tol)[:, None]
        for row in range(stop - start):
            cand = np.flatnonzero(near[row])
            i, dd = _nearest_lq(entries[cand], paths[start + row:start + row + 1], weights, 2.0)
            idx[start + row] = cand[i[0]]
            dist[start + row] = dd[0]
    return idx, dist


@njit(cache=True)
def _chord_error(a, i0, i1):
    d = a.shape[1]
    worst = 0.0
    span = i1 - i0
    for j in range(i0 + 1, i1):
        lam = (j - i0) / span
        s = 0.0
        for c in range(d):
            lin = a[i0, c] + (a[i1, c] - a[i0, c]) * lam
            diff = a[j, c] - lin
            s += diff * diff
        if s > worst:
            worst = s
    return np.sqrt(worst)


@njit(cache=True)
def greedy_knots(paths, knot_idx, tol):
    """Greedy free-knot segmentation of each path.

    From the current knot, the segment is extended over the candidate knots
    ``knot_idx`` until the chord deviates from the path by more than ``tol``.
    Returns knot positions (indices into ``knot_idx``) padded with -1.
    """
    n_paths = paths.shape[0]
    G = knot_idx.shape[0] - 1
    out = np.full((n_paths, G + 1), -1, np.int64)
    for p in range(n_paths):
        a = paths[p]
        out[p, 0] = 0
        cnt = 1
        cur = 0
        while cur < G:
            best = cur + 1
            for nxt in range(cur + 2, G + 1):
                if _chord_error(a, knot_idx[cur], knot_idx[nxt]) <= tol:
                    best = nxt
                else:
                    break
            out[p, cnt] = best
            cnt += 1
            cur = best
    return out
