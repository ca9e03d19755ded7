"""Codebooks for Brownian motion on [0, 1] and finite-dimensional Gaussian quantizers.

The product codebooks quantize the Karhunen–Loève coordinates of the *discrete*
Brownian motion sampled on the grid ``k*dt`` independently, with a
reverse-waterfilling level allocation. The zero path is always entry 0.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.stats import norm as _gauss

from ._kernels import nearest_batch
from .paths import SampledPath, grid_length, grid_weights, interp_columns

MAX_CODEBOOK_ENTRIES = 1 << 16


class BudgetError(ValueError):
    """A requested codebook would exceed a configured size cap."""


def _norm_key(norm_tag: str, q: float | None):
    if norm_tag == "sup":
        return "sup", None
    if norm_tag == "lq":
        if q is None or q < 1:
            raise ValueError(f"L^q codebooks need q >= 1, got {q}")
        return "lq", float(q)
    raise ValueError(f"unknown norm tag {norm_tag!r}; expected 'sup' or 'lq'")


@dataclass(frozen=True)
class Codebook:
    """A finite set of sampled paths on a common grid of ``[0, T]``.

    ``entries`` has shape ``(K, n, d)``. When ``contains_zero`` is set, entry 0
    is the zero path. ``rate`` is the natural-log size budget the codebook was
    built for; it defaults to ``log K``.
    """

    entries: np.ndarray
    dt: float
    T: float
    norm_tag: str = "sup"
    q: float | None = None
    weights: np.ndarray | None = None
    contains_zero: bool = False
    rate: float | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        if e.ndim == 2:
            e = e[:, :, None]
        if e.ndim != 3 or e.shape[0] < 1:
            raise ValueError(f"entries must have shape (K, n, d) with K >= 1, got {e.shape}")
        object.__setattr__(self, "entries", e)
        tag, q = _norm_key(self.norm_tag, self.q)
        object.__setattr__(self, "norm_tag", tag)
        object.__setattr__(self, "q", q)
        if abs(self.dt * (e.shape[1] - 1) - self.T) > self.dt * (1 + 1e-9):
            raise ValueError("codebook grid does not cover [0, T]")
        if self.rate is None:
            object.__setattr__(self, "rate", float(np.log(e.shape[0])))
        if e.shape[0] > np.exp(self.rate) * (1 + 1e-9) + 1 + 1e-9:
            raise ValueError(f"{e.shape[0]} entries exceed exp(rate)+1 for rate={self.rate}")
        if self.contains_zero and np.any(e[0] != 0.0):
            raise ValueError("contains_zero is set but entry 0 is not the zero path")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (e.shape[0],) or np.any(w < 0) or abs(w.sum() - 1) > 1e-9:
                raise ValueError("weights must be a probability vector over the entries")
            object.__setattr__(self, "weights", w)

    def __len__(self):
        return self.entries.shape[0]

    @property
    def n(self) -> int:
        return self.entries.shape[1]

    @property
    def d(self) -> int:
        return self.entries.shape[2]

    @property
    def log_size(self) -> float:
        return float(np.log(len(self)))

    @property
    def grid(self) -> np.ndarray:
        return np.arange(self.n) * self.dt

    def entry(self, i: int) -> SampledPath:
        return SampledPath(self.entries[i], self.dt, self.T)

    def quad_weights(self) -> np.ndarray:
        return grid_weights(self.n, self.dt)

    def check_grid(self, values: np.ndarray, dt: float | None = None):
        if values.shape[-2:] != (self.n, self.d) or (
            dt is not None and abs(dt - self.dt) > 1e-12 * max(dt, self.dt)
        ):
            raise ValueError(
                f"grid mismatch: path shape {values.shape[-2:]} dt={dt}, "
                f"codebook shape {(self.n, self.d)} dt={self.dt}"
            )

    def nearest_many(self, values: np.ndarray, norm_tag: str | None = None, q: float | None = None,
                     weights: np.ndarray | None = None):
        """Nearest entries for a stack of paths ``(P, n, d)``; see :func:`nearest`."""
        values = np.asarray(values, dtype=float)
        if values.ndim == 2:
            values = values[:, :, None] if self.d == 1 and values.shape[1] == self.n else values[None]
        self.check_grid(values)
        tag, qq = _norm_key(norm_tag or self.norm_tag, q if q is not None else self.q)
        if tag == "sup":
            return nearest_batch(self.entries, values, "sup")
        if weights is None:
            weights = self.quad_weights()
        return nearest_batch(self.entries, values, "lq", qq, weights)


def nearest(cb: Codebook, path: SampledPath, norm: str | None = None, q: float | None = None):
    """Index and distance of the entry closest to ``path``.

    Parameters
    ----------
    cb : Codebook
    path : SampledPath
        Must live on the codebook grid.
    norm : {"sup", "lq"}, optional
        Defaults to the codebook's own norm tag.
    q : float, optional
        Exponent for ``"lq"``; defaults to the codebook's ``q``.

    Returns
    -------
    (int, float)
        Ties resolve to the smallest index.
    """
    cb.check_grid(path.values, path.dt)
    idx, dist = cb.nearest_many(path.values[None], norm, q)
    return int(idx[0]), float(dist[0])


@lru_cache(maxsize=32)
def _kl_cached(m: int, N: int):
    dt = 1.0 / N
    k = np.arange(1, m + 1)
    lam = dt**2 / (4.0 * np.sin((2 * k - 1) * np.pi / (2 * (2 * N + 1))) ** 2)
    j = np.arange(N + 1)
    basis = np.sin(np.outer(2 * k - 1, j) * np.pi / (2 * N + 1)) * (2.0 / np.sqrt(dt * (2 * N + 1)))
    basis.setflags(write=False)
    lam.setflags(write=False)
    return basis, lam


def kl_basis(m: int, dt: float):
    """First ``m`` Karhunen–Loève eigenpairs of Brownian motion on the grid ``k*dt`` of [0, 1].

    The discrete process ``(W_{k dt})_{k=0..N}`` with covariance ``dt*min(i, j)``
    has closed-form eigenpairs under the right-endpoint weighted inner product
    ``<f, g> = sum_{j>=1} dt f_j g_j``.

    Returns
    -------
    basis : ndarray, shape (m, N+1)
        Orthonormal in the weighted inner product; ``basis[:, 0] == 0``.
    eigenvalues : ndarray, shape (m,)
        Decreasing; ``eigenvalues[0] -> 4/pi^2`` as ``dt -> 0``.
    """
    N = grid_length(dt, 1.0) - 1
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if m > N:
        raise ValueError(f"m={m} exceeds the {N} nontrivial grid points")
    return _kl_cached(int(m), int(N))


@dataclass(frozen=True)
class ScalarQuantizer:
    """Sorted reproduction levels with midpoint cell boundaries."""

    levels: np.ndarray
    mse: float = float("nan")
    n_iter: int = 0

    @property
    def boundaries(self) -> np.ndarray:
        return 0.5 * (self.levels[1:] + self.levels[:-1])

    def __len__(self):
        return len(self.levels)

    def index(self, x) -> np.ndarray:
        return np.searchsorted(self.boundaries, np.asarray(x, dtype=float), side="left")

    def quantize(self, x) -> np.ndarray:
        return self.levels[self.index(x)]

    def scaled(self, c: float) -> "ScalarQuantizer":
        return ScalarQuantizer(np.sort(self.levels * c), self.mse * c * c, self.n_iter)


def _cell_stats(xs, cs1, cs2, levels):
    bnd = 0.5 * (levels[1:] + levels[:-1])
    cut = np.concatenate([[0], np.searchsorted(xs, bnd, side="right"), [len(xs)]])
    cnt = np.diff(cut)
    s1 = cs1[cut[1:]] - cs1[cut[:-1]]
    s2 = cs2[cut[1:]] - cs2[cut[:-1]]
    return cnt, s1, s2


def lloyd_scalar(samples, n_levels: int, tol: float = 1e-10, max_iter: int = 1000) -> ScalarQuantizer:
    """Lloyd–Max quantizer trained on ``samples``.

    Starts from quantile-spaced levels and iterates nearest-neighbour / centroid
    steps until the relative change of the mean-squared distortion drops below
    ``tol``. An empty cell is re-seeded at the sample farthest from its current
    codeword.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("lloyd_scalar needs at least one sample")
    if n_levels < 1:
        raise ValueError(f"n_levels must be >= 1, got {n_levels}")
    xs = np.sort(x)
    cs1 = np.concatenate([[0.0], np.cumsum(xs)])
    cs2 = np.concatenate([[0.0], np.cumsum(xs * xs)])
    levels = np.quantile(xs, (np.arange(n_levels) + 0.5) / n_levels)
    prev = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        cnt, s1, s2 = _cell_stats(xs, cs1, cs2, levels)
        empty = cnt == 0
        if np.any(empty):
            levels = _reseed_empty(xs, levels, empty)
            prev = np.inf
            continue
        levels = s1 / cnt
        cnt, s1, s2 = _cell_stats(xs, cs1, cs2, levels)
        dist = max(float(np.sum(s2 - 2 * levels * s1 + cnt * levels**2)) / xs.size, 0.0)
        if prev < np.inf and abs(prev - dist) <= tol * max(prev, 1e-300):
            break
        prev = dist
    levels = np.sort(levels)
    q = ScalarQuantizer(levels, 0.0, it)
    mse = float(np.mean((x - q.quantize(x)) ** 2))
    return ScalarQuantizer(levels, mse, it)


def _reseed_empty(xs, levels, empty):
    levels = levels.copy()
    for k in np.flatnonzero(empty):
        q = np.sort(levels)
        err = np.abs(xs - q[np.searchsorted(0.5 * (q[1:] + q[:-1]), xs)])
        levels[k] = xs[int(np.argmax(err))]
    return np.sort(levels)


@lru_cache(maxsize=None)
def gaussian_lloyd_mse(n_levels: int, n_iter: int = 4000) -> float:
    """Mean-squared error of the Lloyd–Max quantizer for N(0, 1), from the density."""
    x = _gauss.ppf((np.arange(n_levels) + 0.5) / n_levels)
    for _ in range(n_iter):
        b = np.concatenate([[-np.inf], 0.5 * (x[1:] + x[:-1]), [np.inf]])
        p = np.diff(_gauss.cdf(b))
        x_new = (_gauss.pdf(b[:-1]) - _gauss.pdf(b[1:])) / p
        if np.max(np.abs(x_new - x)) < 1e-13:
            x = x_new
            break
        x = x_new
    b = np.concatenate([[-np.inf], 0.5 * (x[1:] + x[:-1]), [np.inf]])
    p = np.diff(_gauss.cdf(b))
    return float(1.0 - np.sum(p * x * x))


def allocate_levels(rate: float, eigenvalues, max_levels: int = 256) -> np.ndarray:
    """Integer level counts with ``sum(log n_i) <= rate``.

    Reverse waterfilling ``n_i = max(1, floor(sqrt(lambda_i / theta)))`` with
    ``theta`` found by bisection, followed by a greedy pass spending leftover
    budget on the coordinate with the largest drop in expected distortion.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    budget = rate + 1e-12

    def counts(theta):
        return np.clip(np.floor(np.sqrt(lam / theta)), 1, max_levels).astype(np.int64)

    lo, hi = 1e-300, float(lam.max()) * 4
    for _ in range(200):
        mid = np.sqrt(lo * hi)
        if np.sum(np.log(counts(mid))) <= budget:
            hi = mid
        else:
            lo = mid
        if hi / lo < 1 + 1e-12:
            break
    n = counts(hi)
    used = float(np.sum(np.log(n)))
    while True:
        room = budget - used
        step = np.log1p(1.0 / n)
        ok = (step <= room) & (n < max_levels)
        if not np.any(ok):
            break
        gain = np.where(ok, lam * np.array([gaussian_lloyd_mse(k) - gaussian_lloyd_mse(k + 1)
                                            for k in n]), -np.inf)
        i = int(np.argmax(gain))
        n[i] += 1
        used = float(np.sum(np.log(n)))
    return n


def _product_entries(quantizers, basis):
    levels = [q.levels for q in quantizers]
    combos = np.array(list(itertools.product(*levels)), dtype=float)
    return combos @ basis


def product_codebook(rate: float, m: int | None = None, eigenvalues=None, samples_per_coord: int = 20_000,
                     seed: int = 0, dt: float = 2.0**-10, d: int = 1, norm_tag: str = "lq",
                     q: float | None = 2.0) -> Codebook:
    """KL product codebook for d-dimensional Brownian motion on [0, 1].

    Parameters
    ----------
    rate : float
        Natural-log budget for the product part; the zero path is added on top.
    m : int, optional
        KL truncation per component; defaults to ``ceil(rate) + 2``.
    eigenvalues : array_like, optional
        Overrides the discrete KL eigenvalues used for allocation and training.
    samples_per_coord : int
        Training sample size for each coordinate's Lloyd quantizer.
    seed : int
        Coordinate ``i`` trains on the substream ``(seed, i)``.

    Returns
    -------
    Codebook
        Entry 0 is the zero path; ``meta`` holds the allocation and quantizers.
    """
    if rate < 0:
        raise ValueError(f"rate must be >= 0, got {rate}")
    if m is None:
        m = int(np.ceil(rate)) + 2
    n_grid = grid_length(dt, 1.0)
    basis, lam = kl_basis(m, dt)
    if eigenvalues is not None:
        lam = np.asarray(eigenvalues, dtype=float)[:m]
    # coordinate list over (component c, KL index k), ordered by eigenvalue
    coords = sorted(((lam[k], c, k) for c in range(d) for k in range(m)), key=lambda z: (-z[0], z[1], z[2]))
    lam_all = np.array([z[0] for z in coords])
    n_levels = allocate_levels(rate, lam_all)
    if np.prod(n_levels.astype(float)) > MAX_CODEBOOK_ENTRIES:
        raise BudgetError(f"product codebook would have {np.prod(n_levels.astype(float)):.0f} "
                          f"entries, above the cap {MAX_CODEBOOK_ENTRIES}")
    zero = np.zeros((1, n_grid, d))
    active = [i for i, k in enumerate(n_levels) if k > 1]
    if not active:
        return Codebook(zero, dt, 1.0, norm_tag, q, contains_zero=True, rate=max(rate, 0.0),
                        meta={"levels": n_levels, "quantizers": []})
    quantizers = []
    for i in active:
        lam_i, c, k = coords[i]
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(i,))))
        xs = rng.standard_normal(samples_per_coord) * np.sqrt(lam_i)
        quantizers.append(lloyd_scalar(xs, int(n_levels[i])))
    combos = np.array(list(itertools.product(*[qq.levels for qq in quantizers])), dtype=float)
    entries = np.zeros((combos.shape[0], n_grid, d))
    for col, i in enumerate(active):
        _, c, k = coords[i]
        entries[:, :, c] += np.outer(combos[:, col], basis[k])
    entries = np.concatenate([zero, entries])
    return Codebook(entries, dt, 1.0, norm_tag, q, contains_zero=True, rate=rate,
                    meta={"levels": n_levels, "quantizers": quantizers,
                          "coords": [(c, k) for _, c, k in coords], "active": active})


def _rescale(cb: Codebook, T: float, dt: float | None, norm_tag: str, q):
    if T <= 0:
        raise ValueError(f"T must be positive, got {T}")
    new_dt = cb.dt * T if dt is None else float(dt)
    new_T = cb.T * T
    n_new = grid_length(new_dt, new_T)
    if dt is None or n_new == cb.n and abs(new_dt - cb.dt * T) < 1e-15 * new_T:
        entries = np.sqrt(T) * cb.entries
        new_dt = cb.dt * T
    else:
        src = cb.grid
        t = np.arange(n_new) * new_dt / T
        entries = np.sqrt(T) * np.stack([interp_columns(t, src, e) for e in cb.entries])
        if cb.contains_zero:
            entries[0] = 0.0
    return Codebook(entries, new_dt, new_T, norm_tag, q, cb.weights, cb.contains_zero, cb.rate,
                    dict(cb.meta, scale=cb.meta.get("scale", 1.0) * T))


def rescale_sup(cb: Codebook, T: float, dt: float | None = None) -> Codebook:
    """Map each entry ``f`` on ``[0, T0]`` to ``t -> sqrt(T) f(t/T)`` on ``[0, T*T0]``.

    With ``dt=None`` the grid is stretched along (no resampling), so sup-norm
    distortions scale by exactly ``sqrt(T)``.
    """
    return _rescale(cb, T, dt, "sup", None)


def rescale_lq(cb: Codebook, T: float, q: float, dt: float | None = None) -> Codebook:
    """As :func:`rescale_sup`; L^q distortions scale by ``T^(1/2 + 1/q)``."""
    if q < 1:
        raise ValueError(f"q must be >= 1, got {q}")
    return _rescale(cb, T, dt, "lq", q)


@dataclass(frozen=True)
class VectorCodebook:
    """Centers of a k-means quantizer in R^m with training diagnostics."""

    centers: np.ndarray
    weights: np.ndarray
    distortion: float
    p: float = 2.0

    @property
    def rate(self) -> float:
        return float(np.log(len(self.centers)))

    def __len__(self):
        return len(self.centers)

    def index(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return _assign(x, self.centers)[0]

    def quantize(self, x) -> np.ndarray:
        return self.centers[self.index(x)]


def _assign(x, centers, chunk: int = 8192):
    """Nearest center (smallest index on ties) and squared distance."""
    cn = np.einsum("ij,ij->i", centers, centers)
    idx = np.empty(len(x), np.int64)
    d2 = np.empty(len(x))
    for s in range(0, len(x), chunk):
        xx = x[s:s + chunk]
        dd = cn[None, :] - 2.0 * xx @ centers.T
        i = np.argmin(dd, axis=1)
        idx[s:s + chunk] = i
        d2[s:s + chunk] = np.sum((xx - centers[i]) ** 2, axis=1)
    return idx, d2


def kmeans(samples, k: int, seed: int = 0, tol: float = 1e-8, max_iter: int = 300):
    """Lloyd iteration in R^m from a seeded k-means++ start.

    Empty cells are re-seeded at the sample with the largest current error.
    Returns ``(centers, assignment, squared_errors)``.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    S = len(x)
    if S == 0:
        raise ValueError("kmeans needs at least one sample")
    k = int(max(1, min(k, S)))
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(S)]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        tot = d2.sum()
        pick = rng.integers(S) if tot <= 0 else rng.choice(S, p=d2 / tot)
        centers[j] = x[pick]
        d2 = np.minimum(d2, np.sum((x - centers[j]) ** 2, axis=1))
    prev = np.inf
    for _ in range(max_iter):
        idx, d2 = _assign(x, centers)
        cnt = np.bincount(idx, minlength=k)
        for j in np.flatnonzero(cnt == 0):
            far = int(np.argmax(d2))
            centers[j] = x[far]
            d2[far] = 0.0
        idx, d2 = _assign(x, centers)
        cnt = np.bincount(idx, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, idx, x)
        nz = cnt > 0
        centers[nz] = sums[nz] / cnt[nz, None]
        dist = d2.mean()
        if prev < np.inf and abs(prev - dist) <= tol * max(prev, 1e-300):
            break
        prev = dist
    idx, d2 = _assign(x, centers)
    return centers, idx, d2


def finite_dim_codebook(samples, rate: float, seed: int = 0, p: float = 2.0) -> VectorCodebook:
    """k-means codebook with ``floor(e^rate)`` centers trained on ``samples`` of shape (S, m).

    The reported distortion is the empirical ``E[|Z - Z_hat|^p]^(1/p)`` on the
    training set.
    """
    if rate < 0:
        raise ValueError(f"rate must be >= 0, got {rate}")
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    k = int(np.floor(np.exp(rate) + 1e-9))
    centers, idx, d2 = kmeans(x, k, seed=seed)
    cnt = np.bincount(idx, minlength=len(centers))
    dist = float(np.mean(d2 ** (p / 2)) ** (1 / p))
    return VectorCodebook(centers, cnt / cnt.sum(), dist, p)


def gaussian_training_set(n_paths: int, dt: float, seed: int, d: int = 1, T: float = 1.0) -> np.ndarray:
    """Brownian paths ``(n_paths, n, d)`` on the grid of [0, T] from the substream ``(seed, i)``."""
    n = grid_length(dt, T)
    out = np.zeros((n_paths, n, d))
    for i in range(n_paths):
        inc = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(i,))))
        np.cumsum(inc.standard_normal((n - 1, d)) * np.sqrt(dt), axis=0, out=out[i, 1:])
    return out
