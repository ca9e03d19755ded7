"""Two-stage coding of diffusion paths in sup-norm and in L^p.

Stage one codes the side information: the time change ``phi`` (layered
Hölder–Zygmund net) and the drift part ``A`` (layered Cameron–Martin net).
Stage two codes the Wiener process ``W = M o phi^{-1}`` conditionally on the
quantized time change ``phi_hat``:

* ``encode_sup`` rescales ``W`` on ``[0, tau]``, ``tau = phi_hat(1)``, to the unit
  interval and uses one unit-interval codebook.
* ``encode_lp`` splits ``[0, tau]`` into blocks ``[phi_hat((i-1)/n), phi_hat(i/n))``,
  codes the block anchors jointly and each block increment with a rotated,
  measure-adapted codebook whose rate follows ``allocate_rates``.

The reconstruction is ``X_hat = x0 + A_hat + W_hat(phi_hat(.))``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from ._kernels import greedy_knots
from .holder_codec import HolderNetCodebook, build_layered_codebook, encode_time_changes
from .paths import SampledPath, TimeChange, grid_length, grid_weights, pointwise_norm
from .sde_engine import Ensemble, PathBundle, wiener_at
from .wiener_quant import (
    BudgetError,
    Codebook,
    VectorCodebook,
    finite_dim_codebook,
    gaussian_training_set,
    product_codebook,
)

DEFAULT_KNOT_CELLS = 64
N_ROTATIONS = 32
RATE_GRID = 0.25


# ---------------------------------------------------------------------------
# generalized entropy


def generalized_entropy(weights, p: float = 1.0) -> float:
    """``sum_x w_x (log 1/w_x)^p`` with the convention ``0 * (.) = 0``."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValueError(f"weights must sum to 1, got {w.sum()}")
    pos = w[w > 0]
    return float(np.sum(pos * (-np.log(pos)) ** p))


def concavity_constant(p: float) -> float:
    """Smallest ``c`` making ``(log x)^p + c log x`` concave on ``[1, inf)``.

    ``0`` for ``p = 1`` and ``p (p-2)^(p-2)`` for ``p >= 2``. For ``1 < p < 2``
    no finite constant exists and ``inf`` is returned.
    """
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    if p == 1:
        return 0.0
    if p < 2:
        return math.inf
    return p * (p - 2) ** (p - 2)


def entropy_range_bound(k: int, p: float) -> float:
    """Upper bound on ``H^p`` for a variable with ``k`` atoms.

    Uses ``f(k) = (log k)^p + c log k`` with :func:`concavity_constant`; for
    ``1 < p < 2`` the concave majorant ``(log k)^2 + 3 log k`` of
    ``y^p <= y^2 + y`` is used instead.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    lk = math.log(k)
    c = concavity_constant(p)
    if math.isinf(c):
        return lk**2 + 3 * lk
    return lk**p + c * lk


# ---------------------------------------------------------------------------
# rate allocation


def allocate_rates(delta_tau, r: float, p: float) -> np.ndarray:
    """Block rates ``max(w_i r, sqrt(r))`` with ``w_i`` proportional to ``delta_tau_i^(p/(p+2))``."""
    dtau = np.asarray(delta_tau, dtype=float)
    if r <= 0:
        raise ValueError(f"r must be positive, got {r}")
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    if np.any(dtau < 0):
        raise ValueError("delta_tau must be nonnegative")
    floor = math.sqrt(r)
    g = dtau ** (p / (p + 2))
    tot = g.sum()
    if tot <= 0:
        return np.full(dtau.shape, floor)
    return np.maximum(g / tot * r, floor)


# ---------------------------------------------------------------------------
# drift nets


@dataclass(frozen=True)
class DriftShell:
    """Free-knot piecewise-linear functions with at most ``k_max`` segments."""

    radius: float
    eps: float
    delta: float
    J: int
    k_max: int
    cells: int
    d: int

    @property
    def values_per_knot(self) -> int:
        return (2 * self.J + 1) ** self.d

    def count(self, k: int) -> int:
        return math.comb(self.cells - 1, k - 1) * self.values_per_knot**k

    def log_count(self, k: int) -> float:
        G = self.cells
        lc = math.lgamma(G) - math.lgamma(k) - math.lgamma(G - k + 1)
        return lc + k * self.d * math.log(2 * self.J + 1)

    @property
    def size(self) -> int:
        return sum(self.count(k) for k in range(1, self.k_max + 1))

    @property
    def log_size(self) -> float:
        return float(np.logaddexp.reduce([self.log_count(k) for k in range(1, self.k_max + 1)]))

    def rank(self, knots: np.ndarray, kv: np.ndarray) -> int:
        """Position of (knot set, lattice values) inside the shell."""
        k = len(knots) - 1
        pos = sum(self.count(j) for j in range(1, k))
        interior = [int(c) - 1 for c in knots[1:-1]]
        comb = sum(math.comb(e, i + 1) for i, e in enumerate(interior))
        base = 2 * self.J + 1
        val = 0
        for digit in (kv[1:] + self.J).ravel()[::-1]:
            val = val * base + int(digit)
        return pos + comb * self.values_per_knot**k + val

    def unrank(self, pos: int):
        k = 1
        while pos >= self.count(k):
            pos -= self.count(k)
            k += 1
        comb, val = divmod(pos, self.values_per_knot**k)
        interior = []
        for i in range(k - 2, -1, -1):
            e = i
            while math.comb(e + 1, i + 1) <= comb:
                e += 1
            comb -= math.comb(e, i + 1)
            interior.append(e + 1)
        knots = np.array([0] + interior[::-1] + [self.cells], np.int64)
        base = 2 * self.J + 1
        digits = []
        for _ in range(k * self.d):
            val, dgt = divmod(val, base)
            digits.append(dgt)
        kv = np.zeros((k + 1, self.d), np.int64)
        kv[1:] = np.array(digits, np.int64).reshape(k, self.d) - self.J
        return knots, kv


def make_drift_shell(radius: float, eps: float, cells: int, d: int) -> DriftShell:
    delta = eps / 2.0
    J = math.ceil(radius / delta)
    k_max = int(min(cells, math.floor(4.0 * radius / eps) + 1))
    return DriftShell(radius, eps, delta, J, k_max, cells, d)


def plan_drift_shells(eps: float, eta: float, cells: int, d: int, xi: float = 1.0):
    shells = []
    i = 0
    while True:
        radius = math.exp(i)
        eps_i = eps * math.exp((1 + eta) * i)
        if eps_i >= xi * radius:
            break
        shells.append(make_drift_shell(radius, eps_i, cells, d))
        i += 1
    return tuple(shells)


def _shells_log_size(shells) -> float:
    return float(np.logaddexp.reduce([0.0] + [sh.log_size for sh in shells]))


@dataclass(frozen=True)
class DriftCode:
    index: np.ndarray
    values: np.ndarray
    error: np.ndarray


@dataclass(frozen=True)
class DriftCodebook:
    """Layered free-knot nets of Cameron–Martin balls on [0, 1], scaled to ``[0, T]``.

    Only the unit-horizon net is stored: a path ``a`` on ``[0, T]`` is mapped to
    ``a(T u) / sqrt(T)`` on the unit grid, coded, and mapped back, so sup-norm
    errors scale by ``sqrt(T)``.
    """

    shells: tuple
    eps: float
    eta: float
    dt: float
    T: float = 1.0
    d: int = 1
    cells: int = DEFAULT_KNOT_CELLS
    contains_zero: bool = True

    @property
    def n(self) -> int:
        return grid_length(self.dt, self.T)

    @property
    def log_size(self) -> float:
        return _shells_log_size(self.shells)

    @property
    def rate(self) -> float:
        return self.log_size

    def __len__(self):
        return 1 + sum(sh.size for sh in self.shells)

    def _knot_idx(self) -> np.ndarray:
        n = self.n
        return np.rint(np.linspace(0, n - 1, self.cells + 1)).astype(np.int64)

    def encode_many(self, values: np.ndarray, with_index: bool = True) -> DriftCode:
        """Code a stack ``(P, n, d)`` of drift paths on the codebook grid."""
        v = np.asarray(values, dtype=float)
        if v.ndim == 2:
            v = v[:, :, None]
        if v.shape[1:] != (self.n, self.d):
            raise ValueError(f"drift paths of shape {v.shape[1:]} do not match grid {(self.n, self.d)}")
        if not np.all(np.isfinite(v)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(v), axis=(1, 2)))[0])
            raise ValueError(f"drift path {bad} has non-finite values (infinite discrete H-norm)")
        scale = math.sqrt(self.T)
        u = np.ascontiguousarray(v / scale)
        grid = np.linspace(0.0, 1.0, self.n)
        kidx = self._knot_idx()
        best_err = pointwise_norm(u).max(axis=1)
        best_vals = np.zeros_like(u)
        best_code: list = [(-1, None, None)] * len(u)
        for s_i, sh in enumerate(self.shells):
            knots = greedy_knots(u, kidx, sh.eps / 2.0)
            for r in range(len(u)):
                kn = knots[r][knots[r] >= 0]
                if len(kn) - 1 > sh.k_max:
                    continue
                kv = np.rint(u[r, kidx[kn]] / sh.delta).astype(np.int64)
                kv[0] = 0
                if np.any(np.abs(kv) > sh.J):
                    continue
                t_k = grid[kidx[kn]]
                rep = np.stack([np.interp(grid, t_k, kv[:, c] * sh.delta) for c in range(self.d)], axis=1)
                err = float(pointwise_norm(rep - u[r]).max())
                if err < best_err[r]:
                    best_err[r] = err
                    best_vals[r] = rep
                    best_code[r] = (s_i, kn, kv)
        idx = np.zeros(len(u), dtype=object)
        if with_index:
            for r, (s_i, kn, kv) in enumerate(best_code):
                idx[r] = 0 if s_i < 0 else self._offset(s_i) + self.shells[s_i].rank(kn, kv)
        return DriftCode(idx, best_vals * scale, best_err * scale)

    def _offset(self, i: int) -> int:
        return 1 + sum(sh.size for sh in self.shells[:i])

    def decode(self, index: int) -> np.ndarray:
        grid = np.linspace(0.0, 1.0, self.n)
        if index == 0:
            return np.zeros((self.n, self.d))
        pos = index - 1
        kidx = self._knot_idx()
        for sh in self.shells:
            if pos < sh.size:
                kn, kv = sh.unrank(pos)
                t_k = grid[kidx[kn]]
                rep = np.stack([np.interp(grid, t_k, kv[:, c] * sh.delta) for c in range(self.d)], axis=1)
                return rep * math.sqrt(self.T)
            pos -= sh.size
        raise IndexError(f"index {index} outside a drift net of size {len(self)}")


def discrete_h_norm(path: SampledPath) -> float:
    """Cameron–Martin norm ``sqrt(sum |da|^2 / dt)`` on the grid."""
    inc = np.diff(path.values, axis=0)
    val = float(np.sqrt(np.sum(inc * inc) / path.dt))
    if not np.isfinite(val):
        raise ValueError("path has infinite discrete H-norm")
    return val


def drift_quantizer(a_paths, rate: float, T: float = 1.0, eta: float = 0.5,
                    cells: int = DEFAULT_KNOT_CELLS, dt: float | None = None,
                    max_log_size: float = 1e6) -> DriftCodebook:
    """Layered free-knot net for drift paths on ``[0, T]`` with log-size at most ``rate``.

    Parameters
    ----------
    a_paths : sequence of SampledPath
        Training drift paths; checked for a finite discrete H-norm and used for
        the grid and dimension.
    rate : float
        Natural-log size budget. The base resolution is found by bisection.
    T : float
        Horizon; only the unit-horizon net is built.
    cells : int
        Number of cells of the candidate knot grid.
    """
    a_paths = list(a_paths)
    if not a_paths:
        raise ValueError("no training drift paths")
    for i, a in enumerate(a_paths):
        try:
            discrete_h_norm(a)
        except ValueError as exc:
            raise ValueError(f"drift path {i}: {exc}") from None
    d = a_paths[0].d
    dt = (a_paths[0].dt if dt is None else dt) / T
    n = grid_length(dt, 1.0)
    cells = int(min(cells, n - 1))
    eps = _drift_eps_for_rate(rate, eta, cells, d)
    shells = plan_drift_shells(eps, eta, cells, d)
    if _shells_log_size(shells) > max_log_size:
        raise BudgetError(f"drift net log-size exceeds the cap max_log_size={max_log_size:g}")
    return DriftCodebook(shells, eps, eta, dt * T, T, d, cells)


def _drift_eps_for_rate(rate, eta, cells, d) -> float:
    hi = 2.0
    if rate <= 0 or _shells_log_size(plan_drift_shells(hi, eta, cells, d)) > rate:
        return hi
    lo = hi
    while _shells_log_size(plan_drift_shells(lo, eta, cells, d)) <= rate:
        lo /= 4.0
        if lo < 1e-300:
            return lo * 4
    for _ in range(80):
        mid = math.sqrt(lo * hi)
        if _shells_log_size(plan_drift_shells(mid, eta, cells, d)) <= rate:
            hi = mid
        else:
            lo = mid
        if hi / lo < 1 + 1e-6:
            break
    return hi


# ---------------------------------------------------------------------------
# budgets and codebook sets


def gamma_defaults(beta: float) -> tuple[float, float, float]:
    """Exponents ``(gamma1, gamma2, gamma3)`` used for the side-information rates."""
    alpha = beta / 4.0
    g1 = (1 + alpha / 2) / (1 + alpha)
    return g1, (3 + g1) / 4, 2.0 / 3.0


@dataclass(frozen=True)
class EncodingBudget:
    """Rate split in nats.

    ``r_wiener`` is the rate of the Wiener codebook (sup scheme) or the total
    block rate handed to :func:`allocate_rates` (L^p scheme). ``delta_r`` is the
    anchor rate and also the per-block offset rate of the L^p scheme.
    """

    r: float
    r_phi: float
    r_drift: float
    r_wiener: float
    delta_r: float = 0.0
    n_blocks: int = 1
    slack: float = 4.0

    def __post_init__(self):
        for name in ("r", "r_phi", "r_drift", "r_wiener", "delta_r", "slack"):
            if getattr(self, name) < 0:
                raise ValueError(f"budget component {name} must be nonnegative")
        if self.n_blocks < 1:
            raise ValueError("n_blocks must be >= 1")
        if self.nominal > self.r * (1 + self.slack) + 1e-9:
            raise ValueError(
                f"budget components sum to {self.nominal:.4g} > r(1+slack) = "
                f"{self.r * (1 + self.slack):.4g}; raise slack or lower a component"
            )

    @property
    def nominal(self) -> float:
        extra = self.delta_r * (self.n_blocks + 1) if self.n_blocks > 1 or self.delta_r else 0.0
        floors = self.n_blocks * math.sqrt(self.r_wiener) if self.n_blocks > 1 else 0.0
        return self.r_phi + self.r_drift + self.r_wiener + extra + floors

    @classmethod
    def for_sup(cls, r: float, beta: float = 1.0, r_phi: float | None = None,
                r_drift: float | None = None, gammas=None, slack: float = 4.0) -> "EncodingBudget":
        g1, _, g3 = gammas or gamma_defaults(beta)
        return cls(r, r ** g1 if r_phi is None else r_phi, r ** g3 if r_drift is None else r_drift,
                   r, 0.0, 1, slack)

    @classmethod
    def for_lp(cls, r: float, beta: float = 1.0, r_phi: float | None = None,
               r_drift: float | None = None, n_blocks: int | None = None,
               delta_r: float | None = None, gammas=None, slack: float = 4.0) -> "EncodingBudget":
        g1, _, g3 = gammas or gamma_defaults(beta)
        n = max(1, math.ceil(r ** (1 / 3))) if n_blocks is None else int(n_blocks)
        dr = math.sqrt(r) if delta_r is None else delta_r
        return cls(r, r ** g1 if r_phi is None else r_phi, r ** g3 if r_drift is None else r_drift,
                   r, dr, n, slack)


@dataclass
class CodebookSet:
    """Codebooks shared by all paths of an experiment.

    ``block_codebook(rate)`` and ``offset_codebook(j, rate)`` build and cache the
    unit-interval L^p codebooks and rotation-offset quantizers on demand.
    """

    phi: HolderNetCodebook
    drift: DriftCodebook
    wiener: Codebook
    d: int = 1
    p: float = 2.0
    seed: int = 0
    anchors: VectorCodebook | None = None
    samples_per_coord: int = 20_000
    dt_wiener: float = 2.0**-10
    profile_paths: int = 1000
    offset_samples: np.ndarray | None = None
    _blocks: dict = field(default_factory=dict, repr=False)
    _profiles: dict = field(default_factory=dict, repr=False)
    _offsets: dict = field(default_factory=dict, repr=False)

    def block_codebook(self, rate: float) -> Codebook:
        key = math.floor(rate / RATE_GRID + 1e-9) * RATE_GRID
        if key not in self._blocks:
            self._blocks[key] = product_codebook(key, dt=self.dt_wiener, d=self.d, norm_tag="lq",
                                                 q=self.p, seed=self.seed + 17,
                                                 samples_per_coord=self.samples_per_coord)
        return self._blocks[key]

    def error_profile(self, cb: Codebook) -> np.ndarray:
        key = (id(cb), cb.rate)
        if key not in self._profiles:
            self._profiles[key] = error_profile(cb, self.profile_paths, seed=self.seed + 29)
        return self._profiles[key]

    def offset_codebook(self, j: int, rate: float) -> "OffsetQuantizer":
        key = (j, round(rate, 12))
        if key not in self._offsets:
            if self.offset_samples is None:
                rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed + 31)))
                self.offset_samples = rng.standard_normal((4096, 2 * self.d))
            self._offsets[key] = OffsetQuantizer.train(self.offset_samples, j / N_ROTATIONS, rate,
                                                       self.d, self.p, seed=self.seed + 37 + j)
        return self._offsets[key]


def build_codebook_set(training: Ensemble, budget: EncodingBudget, scheme: str = "sup", p: float = 2.0,
                       beta: float = 1.0, smoothness: float | None = None, seed: int = 0,
                       eta: float = 0.5, cells: int = DEFAULT_KNOT_CELLS,
                       samples_per_coord: int = 20_000, dt_wiener: float | None = None) -> CodebookSet:
    """Build the phi net, drift net and Wiener codebook(s) for a budget.

    ``training`` supplies time changes (for the embedding-norm estimate) and the
    grid. The phi net uses smoothness ``1 + beta/4`` unless given.
    """
    if scheme not in ("sup", "lp"):
        raise ValueError(f"scheme must be 'sup' or 'lp', got {scheme!r}")
    dt = training.dt
    nu = training.n_unit
    phis = [TimeChange(training.phi[i, :nu], dt, 1.0, monotone=True) for i in range(len(training))]
    s = 1.0 + beta / 4.0 if smoothness is None else smoothness
    phi_cb = build_layered_codebook(phis, s=s, rate=budget.r_phi, eta=eta)
    drifts = [SampledPath(training.a[i, :nu], dt, 1.0) for i in range(len(training))]
    drift_cb = drift_quantizer(drifts, budget.r_drift, eta=eta, cells=cells)
    dtw = dt if dt_wiener is None else dt_wiener
    d = training.d
    if scheme == "sup":
        wiener = product_codebook(budget.r_wiener, dt=dtw, d=d, norm_tag="sup", q=None, seed=seed,
                                  samples_per_coord=samples_per_coord)
        return CodebookSet(phi_cb, drift_cb, wiener, d, p, seed, samples_per_coord=samples_per_coord,
                           dt_wiener=dtw)
    anchors = None
    if budget.n_blocks > 1:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed + 41)))
        anchors = finite_dim_codebook(rng.standard_normal((20_000, (budget.n_blocks - 1) * d)),
                                      budget.delta_r, seed=seed + 43, p=p)
    cbs = CodebookSet(phi_cb, drift_cb, None, d, p, seed, anchors, samples_per_coord, dtw)
    # blocks draw their codebooks on demand; the floor-rate one doubles as the reference
    cbs.wiener = cbs.block_codebook(math.sqrt(budget.r_wiener))
    return cbs


# ---------------------------------------------------------------------------
# measure-adapted codebooks


def error_profile(cb: Codebook, n_paths: int = 1000, seed: int = 0) -> np.ndarray:
    """Per-grid-point ``E|W_u - W_hat_u|^q`` of ``cb`` on Brownian training paths."""
    W = gaussian_training_set(n_paths, cb.dt, seed, d=cb.d, T=cb.T)
    idx, _ = cb.nearest_many(W)
    err = pointwise_norm(W - cb.entries[idx])
    return np.mean(err ** (cb.q or 2.0), axis=0)


@dataclass(frozen=True)
class OffsetQuantizer:
    """Quantizer for the rotation offsets ``(-W_t, W_T - W_t)`` at ``t = c T`` with ``T = 1``."""

    c: float
    vq: VectorCodebook
    branch_error: tuple

    @classmethod
    def train(cls, standard: np.ndarray, c: float, rate: float, d: int, p: float, seed: int = 0):
        z = np.concatenate([-math.sqrt(c) * standard[:, :d], math.sqrt(1 - c) * standard[:, d:2 * d]], axis=1)
        vq = finite_dim_codebook(z, rate, seed=seed, p=p)
        zh = vq.quantize(z)
        e1 = float(np.mean(pointwise_norm((z - zh)[:, :d]) ** p) ** (1 / p))
        e2 = float(np.mean(pointwise_norm((z - zh)[:, d:]) ** p) ** (1 / p))
        return cls(c, vq, (e1, e2))


@dataclass(frozen=True)
class AdaptedCode:
    index: int
    offset_index: int
    offsets: np.ndarray
    values: np.ndarray
    error: float


@dataclass(frozen=True)
class AdaptedCodebook:
    """Rotated base codebook plus quantized endpoint offsets, for the norm of ``L^q(nu)``.

    The base codebook lives on a grid of ``[0, T]`` whose ``n - 1`` cells are
    treated periodically; rotation by ``shift`` cells realises
    ``theta_t(s) = s + t mod T`` with ``t = shift * dt``.
    """

    base: Codebook
    nu: np.ndarray
    shift: int
    offsets: OffsetQuantizer | None
    scale: float
    rate: float

    @property
    def t_star(self) -> float:
        return self.shift * self.base.dt

    @property
    def q(self) -> float:
        return self.base.q or 2.0

    def rotated_weights(self) -> np.ndarray:
        n = self.base.n
        tgt, _ = _rotation_targets(n, self.shift)
        w = np.zeros(n)
        np.add.at(w, tgt, self.nu)
        return w

    def branch(self) -> np.ndarray:
        return _rotation_targets(self.base.n, self.shift)[1].astype(np.int64)

    def rotate(self, w_prime: np.ndarray) -> np.ndarray:
        """The Brownian path whose rotation, restarted at ``t``, is ``w_prime``."""
        m = self.base.n - 1
        J = self.shift
        if J == 0:
            return w_prime.copy()
        v = np.empty_like(w_prime)
        j = np.arange(self.base.n)
        hi = j >= J
        v[hi] = w_prime[j[hi] - J] + w_prime[m] - w_prime[m - J]
        v[~hi] = w_prime[j[~hi] + m - J] - w_prime[m - J]
        return v

    def encode(self, w_prime: np.ndarray) -> AdaptedCode:
        """Code ``w_prime`` (shape ``(n, d)`` on the base grid) in ``L^q(nu)``."""
        w_prime = np.asarray(w_prime, dtype=float)
        if w_prime.ndim == 1:
            w_prime = w_prime[:, None]
        rot = self.rotate(w_prime)
        idx, _ = self.base.nearest_many(rot[None], "lq", self.q, self.rotated_weights())
        i = int(idx[0])
        J = self.shift
        z = np.concatenate([-rot[J], rot[-1] - rot[J]])
        if self.offsets is None:
            oi, zh = 0, np.zeros_like(z)
        else:
            oi = int(self.offsets.vq.index(z / self.scale)[0])
            zh = self.offsets.vq.centers[oi] * self.scale
        vals = self.reconstruct(i, zh)
        err = float(np.sum(self.nu * pointwise_norm(w_prime - vals) ** self.q) ** (1 / self.q))
        return AdaptedCode(i, oi, zh, vals, err)

    def reconstruct(self, index: int, offsets: np.ndarray) -> np.ndarray:
        n = self.base.n
        d = self.base.d
        tgt, br = _rotation_targets(n, self.shift)
        vals = self.base.entries[index][tgt].copy()
        vals[br == 0] += offsets[:d]
        vals[br == 1] += offsets[d:]
        return vals

    def evaluate(self, index: int, offsets: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Reconstruction at arbitrary times ``u`` in ``[0, T]`` (interpolating the codeword)."""
        T = self.base.T
        c = self.t_star
        d = self.base.d
        shifted = u + c
        br = (shifted >= T - 1e-12 * T) & (self.shift > 0)
        theta = np.where(br, shifted - T, shifted)
        grid = self.base.grid
        e = self.base.entries[index]
        vals = np.stack([np.interp(theta, grid, e[:, j]) for j in range(d)], axis=1)
        vals[~br] += offsets[:d]
        vals[br] += offsets[d:]
        return vals


def _rotation_targets(n: int, shift: int):
    """Grid index of ``theta(u_k)`` and the branch flag ``u_k + t >= T``; identity for ``shift = 0``."""
    k = np.arange(n)
    if shift == 0:
        return k, np.zeros(n, dtype=bool)
    m = n - 1
    br = k + shift >= m
    return np.where(br, k + shift - m, k + shift), br


def choose_rotation(nu: np.ndarray, profile: np.ndarray, T: float, q: float, offset_for, n_grid: int,
                    n_candidates: int = N_ROTATIONS) -> int:
    """Grid shift minimising the predicted ``L^q(nu o theta_t)`` error plus the offset error."""
    m = n_grid - 1
    best, best_shift = math.inf, 0
    for j in range(n_candidates):
        J = int(round(j * m / n_candidates))
        tgt, br = _rotation_targets(n_grid, J)
        base = float(np.sum(nu * profile[tgt])) ** (1 / q)
        oq = offset_for(j)
        if oq is None:
            off = 0.0
        else:
            e1, e2 = oq.branch_error
            off = (float(nu[~br].sum()) * e1**q + float(nu[br].sum()) * e2**q) ** (1 / q) * math.sqrt(T)
        score = base + off
        if score < best - 1e-15:
            best, best_shift = score, J
    return best_shift


def adapt_codebook_to_measure(cb: Codebook, nu, delta_r: float, offset_samples=None, seed: int = 0,
                              profile: np.ndarray | None = None, n_candidates: int = N_ROTATIONS,
                              offset_cache=None) -> AdaptedCodebook:
    """Rotate ``cb`` (on ``[0, T]``) to suit the measure ``nu`` and add coded endpoint offsets.

    Parameters
    ----------
    cb : Codebook
        L^q codebook on a grid of ``[0, T]``; ``n - 1`` must be divisible by
        ``n_candidates`` for exact grid rotations.
    nu : array_like, shape (n,)
        Nonnegative point masses on the codebook grid.
    delta_r : float
        Rate of the offset quantizer; ``0`` quantizes the offsets to their
        mean, which is zero, and leaves the codebook unrotated.
    offset_samples : array_like, shape (S, 2d), optional
        Standard normal pairs ``(xi1, xi2)``; offsets at ``t`` are formed as
        ``(-sqrt(t) xi1, sqrt(T-t) xi2)``. Drawn from ``seed`` when omitted.
    profile : array_like, optional
        Per-point error profile of ``cb``; estimated when omitted.

    Returns
    -------
    AdaptedCodebook
        Size at most ``|cb| * e^delta_r``.
    """
    nu = np.asarray(nu, dtype=float)
    if nu.shape != (cb.n,):
        raise ValueError(f"nu must have one mass per grid point ({cb.n}), got {nu.shape}")
    if np.any(nu < 0) or not np.all(np.isfinite(nu)):
        raise ValueError("nu must be nonnegative and finite")
    if cb.norm_tag != "lq":
        raise ValueError("adapt_codebook_to_measure needs an L^q codebook")
    q = cb.q
    d = cb.d
    if nu.sum() <= 0:
        warnings.warn("measure has zero mass; returning the base codebook unrotated", RuntimeWarning,
                      stacklevel=2)
        return AdaptedCodebook(cb, nu, 0, None, math.sqrt(cb.T), cb.rate)
    if delta_r <= 0:
        return AdaptedCodebook(cb, nu, 0, None, math.sqrt(cb.T), cb.rate)
    # fold mass at 0 onto T; the grid is periodic in the rotation
    nu = nu.copy()
    nu[-1] += nu[0]
    nu[0] = 0.0
    if offset_samples is None:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed + 31)))
        offset_samples = rng.standard_normal((4096, 2 * d))
    offset_samples = np.asarray(offset_samples, dtype=float)
    cache = {} if offset_cache is None else offset_cache

    def offset_for(j):
        key = (j, round(delta_r, 12))
        if key not in cache:
            cache[key] = OffsetQuantizer.train(offset_samples, j / n_candidates, delta_r, d, q,
                                               seed=seed + 37 + j)
        return cache[key]

    if profile is None:
        profile = error_profile(cb, seed=seed + 29)
    shift = choose_rotation(nu, profile, cb.T, q, offset_for, cb.n, n_candidates)
    m = cb.n - 1
    j = int(round(shift * n_candidates / m)) if m else 0
    return AdaptedCodebook(cb, nu, shift, offset_for(j), math.sqrt(cb.T), cb.rate + delta_r)


# ---------------------------------------------------------------------------
# encoders


@dataclass(frozen=True)
class Reconstruction:
    """Decoded path with the selected codewords and the error breakdown."""

    x_hat: SampledPath
    phi_hat: TimeChange
    indices: tuple
    rate_used: float
    errors: dict
    blocks: tuple = ()


def _ensure_bundles(bundles):
    if isinstance(bundles, PathBundle):
        return [bundles]
    return list(bundles)


def _check_cbs(cbs: CodebookSet):
    if cbs is None or cbs.phi is None or cbs.drift is None or cbs.wiener is None:
        raise ValueError("codebook set needs a phi net, a drift net and a Wiener codebook")
    if not cbs.phi.contains_zero:
        raise ValueError("the phi codebook must contain the zero function")


def encode_sup(bundle, budget: EncodingBudget, cbs: CodebookSet, x0=None):
    """Sup-norm coding of one bundle or a sequence of bundles.

    Returns a :class:`Reconstruction` for a single bundle and a list otherwise.
    ``errors`` holds ``total``, ``drift``, ``cross`` and ``wiener``; the total is
    bounded by their sum on every path.
    """
    single = isinstance(bundle, PathBundle)
    bundles = _ensure_bundles(bundle)
    _check_cbs(cbs)
    _check_budget(budget, cbs)
    dt = cbs.phi.dt
    n = grid_length(dt, 1.0)
    X = np.stack([b.x.values[:n] for b in bundles])
    A = np.stack([b.a.values[:n] for b in bundles])
    PHI = np.stack([b.phi.values[:n, 0] for b in bundles])
    if x0 is None:
        x0 = np.stack([b.m.values[0] for b in bundles])
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (len(bundles), X.shape[2]))
    phi_codes = encode_time_changes(PHI, cbs.phi)
    drift = cbs.drift.encode_many(A)
    wcb = cbs.wiener
    u = wcb.grid
    out = []
    rate_used = cbs.phi.log_size + cbs.drift.log_size + wcb.log_size
    tau = np.array([pc.phi_hat.values[-1, 0] for pc in phi_codes])
    pos = np.flatnonzero(tau > 0)
    Wt = np.zeros((len(bundles), wcb.n, wcb.d))
    for r in pos:
        Wt[r] = wiener_at(bundles[r], tau[r] * u) / math.sqrt(tau[r])
    if len(pos) < len(bundles):
        bad = [bundles[r].index for r in np.flatnonzero(tau <= 0)]
        warnings.warn(f"quantized time change vanishes on {len(bad)} path(s) (first: {bad[0]}); "
                      "coding the drift only", RuntimeWarning, stacklevel=2)
    widx = np.zeros(len(bundles), np.int64)
    if len(pos):
        widx[pos], _ = wcb.nearest_many(Wt[pos], "sup")
    for r, b in enumerate(bundles):
        ph = phi_codes[r].phi_hat.values[:, 0]
        w_true_phi = wiener_at(b, PHI[r])
        if tau[r] > 0:
            st = math.sqrt(tau[r])
            code = wcb.entries[widx[r]]
            w_hat_phihat = st * np.stack([np.interp(ph / tau[r], u, code[:, c]) for c in range(wcb.d)], axis=1)
            w_true_phihat = wiener_at(b, ph)
            w_err = max(float(pointwise_norm(st * (Wt[r] - code)).max()),
                        float(pointwise_norm(w_true_phihat - w_hat_phihat).max()))
            cross = float(pointwise_norm(w_true_phi - w_true_phihat).max())
        else:
            w_hat_phihat = np.zeros((n, wcb.d))
            w_err = 0.0
            cross = float(pointwise_norm(w_true_phi - wiener_at(b, ph)).max())
        x_hat = x0[r] + drift.values[r] + w_hat_phihat
        total = float(pointwise_norm(X[r] - x_hat).max())
        errs = {"total": total, "drift": float(drift.error[r]), "cross": cross, "wiener": w_err,
                "phi": phi_codes[r].error}
        out.append(Reconstruction(SampledPath(x_hat, dt, 1.0), phi_codes[r].phi_hat,
                                  (phi_codes[r].index, drift.index[r], int(widx[r])), rate_used, errs))
    return out[0] if single else out


def _check_budget(budget: EncodingBudget, cbs: CodebookSet):
    for name, cb, lim in (("phi", cbs.phi, budget.r_phi), ("drift", cbs.drift, budget.r_drift)):
        if cb.log_size > lim + 1e-9:
            raise ValueError(f"{name} codebook log-size {cb.log_size:.4g} exceeds its budget {lim:.4g}")


def z_factor(phi_values: np.ndarray, p: float, n_blocks: int, dt: float):
    """``Z_n`` computed directly and through block-averaged ``sigma^2``.

    Returns ``(direct, via_sigma_bar)``; the two agree up to rounding.
    """
    phi = np.atleast_2d(phi_values)
    s = np.linspace(0.0, 1.0, n_blocks + 1)
    grid = np.arange(phi.shape[1]) * dt
    tau = np.stack([np.interp(s, grid, row) for row in phi])
    dtau = np.diff(tau, axis=1)
    e = p / (p + 2)
    direct = np.mean((np.sum(dtau**e, axis=1) ** ((p + 2) / 2)) / n_blocks) ** (1 / p)
    sbar2 = n_blocks * dtau
    integral = np.sum(sbar2**e, axis=1) / n_blocks
    via = np.mean(integral ** ((p + 2) / 2)) ** (1 / p)
    return float(direct), float(via)


def encode_lp(bundle, budget: EncodingBudget, p: float, cbs: CodebookSet, x0=None):
    """Block-wise L^p coding of one bundle or a sequence of bundles.

    Each reconstruction carries ``blocks``: one dict per block with ``dtau``,
    ``rate``, ``shift``, ``error`` (block contribution to the L^p error of the
    Wiener part) and the codeword indices.
    """
    if p < 1 or not np.isfinite(p):
        raise ValueError("encode_lp needs a finite p >= 1")
    single = isinstance(bundle, PathBundle)
    bundles = _ensure_bundles(bundle)
    _check_cbs(cbs)
    _check_budget(budget, cbs)
    n_blocks = budget.n_blocks
    dt = cbs.phi.dt
    n = grid_length(dt, 1.0)
    d = cbs.d
    s_grid = np.arange(n) * dt
    wts = grid_weights(n, dt)
    X = np.stack([b.x.values[:n] for b in bundles])
    A = np.stack([b.a.values[:n] for b in bundles])
    PHI = np.stack([b.phi.values[:n, 0] for b in bundles])
    if x0 is None:
        x0 = np.stack([b.m.values[0] for b in bundles])
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (len(bundles), d))
    phi_codes = encode_time_changes(PHI, cbs.phi)
    drift = cbs.drift.encode_many(A)
    # block membership of each path-grid point (right-closed blocks)
    blk = np.clip(np.ceil(s_grid * n_blocks - 1e-9).astype(int), 1, n_blocks) - 1
    out = []
    for r, b in enumerate(bundles):
        ph = phi_codes[r].phi_hat.values[:, 0]
        tau = np.interp(np.linspace(0, 1, n_blocks + 1), s_grid, ph)
        dtau = np.diff(tau)
        rates = allocate_rates(dtau, budget.r_wiener, p) if budget.r_wiener > 0 else np.zeros(n_blocks)
        # anchors: normalized block increments, coded jointly
        W_tau = wiener_at(b, tau)
        if n_blocks > 1:
            z = np.zeros((n_blocks - 1, d))
            ok = dtau[:-1] > 0
            z[ok] = (W_tau[1:-1][ok] - W_tau[:-2][ok]) / np.sqrt(dtau[:-1][ok])[:, None]
            a_idx = int(cbs.anchors.index(z.reshape(1, -1))[0])
            zh = cbs.anchors.centers[a_idx].reshape(n_blocks - 1, d)
            anchor_hat = np.vstack([np.zeros(d), np.cumsum(np.sqrt(dtau[:-1])[:, None] * zh, axis=0)])
            anchor_rate = cbs.anchors.rate
        else:
            a_idx = 0
            anchor_hat = np.zeros((1, d))
            anchor_rate = 0.0
        w_hat = np.zeros((n, d))
        ledger = []
        rate_used = cbs.phi.log_size + cbs.drift.log_size + anchor_rate
        for i in range(n_blocks):
            mask = blk == i
            mask[0] = False
            w_hat[mask] = anchor_hat[i]
            cb = cbs.block_codebook(rates[i])
            rate_used += cb.log_size
            if dtau[i] <= 0:
                ledger.append({"block": i, "dtau": 0.0, "rate": float(rates[i]), "shift": 0,
                               "index": 0, "offset_index": 0, "error": 0.0})
                continue
            u_pts = (ph[mask] - tau[i]) / dtau[i]
            nu = _bin_masses(u_pts, wts[mask], cb.n)
            st = math.sqrt(dtau[i])
            v = cb.grid
            wp = (wiener_at(b, tau[i] + dtau[i] * v) - W_tau[i]) / st
            prof = cbs.error_profile(cb)
            adapted = _adapt_cached(cbs, cb, nu, budget.delta_r, prof)
            code = adapted.encode(wp)
            rate_used += budget.delta_r if adapted.offsets is not None else 0.0
            w_hat[mask] += st * adapted.evaluate(code.index, code.offsets, u_pts)
            blk_err = float(np.sum(wts[mask] * pointwise_norm(
                wiener_at(b, ph[mask]) - W_tau[i] - st * adapted.evaluate(code.index, code.offsets, u_pts)
            ) ** p))
            ledger.append({"block": i, "dtau": float(dtau[i]), "rate": float(rates[i]),
                           "shift": adapted.shift, "index": code.index, "offset_index": code.offset_index,
                           "error": blk_err ** (1 / p)})
        x_hat = x0[r] + drift.values[r] + w_hat
        x_hat[0] = x0[r] + drift.values[r][0]
        diff = pointwise_norm(X[r] - x_hat)
        total = float(np.sum(wts * diff**p) ** (1 / p))
        w_err = float(sum(e["error"] ** p for e in ledger) ** (1 / p))
        anchor_err = float(np.sum(wts * pointwise_norm(W_tau[blk] - anchor_hat[blk]) ** p) ** (1 / p))
        cross = float(np.sum(wts * pointwise_norm(wiener_at(b, PHI[r]) - wiener_at(b, ph)) ** p) ** (1 / p))
        errs = {"total": total, "drift": float(drift.error[r]), "cross": cross, "wiener": w_err,
                "anchor": anchor_err, "phi": phi_codes[r].error}
        idx = (phi_codes[r].index, drift.index[r], a_idx) + tuple(
            (e["index"], e["offset_index"]) for e in ledger)
        out.append(Reconstruction(SampledPath(x_hat, dt, 1.0), phi_codes[r].phi_hat, idx, rate_used, errs,
                                  tuple(ledger)))
    return out[0] if single else out


def _bin_masses(u: np.ndarray, mass: np.ndarray, n: int) -> np.ndarray:
    """Linear binning of point masses at ``u`` in [0, 1] onto ``n`` grid points."""
    x = np.clip(u, 0.0, 1.0) * (n - 1)
    lo = np.minimum(np.floor(x).astype(int), n - 2)
    frac = x - lo
    w = np.zeros(n)
    np.add.at(w, lo, mass * (1 - frac))
    np.add.at(w, lo + 1, mass * frac)
    return w


def _adapt_cached(cbs: CodebookSet, cb: Codebook, nu, delta_r, profile) -> AdaptedCodebook:
    if nu.sum() <= 0 or delta_r <= 0:
        return AdaptedCodebook(cb, nu, 0, None, 1.0, cb.rate)
    nu = nu.copy()
    nu[-1] += nu[0]
    nu[0] = 0.0
    shift = choose_rotation(nu, profile, cb.T, cb.q, lambda j: cbs.offset_codebook(j, delta_r), cb.n)
    m = cb.n - 1
    j = int(round(shift * N_ROTATIONS / m))
    return AdaptedCodebook(cb, nu, shift, cbs.offset_codebook(j, delta_r), 1.0, cb.rate + delta_r)
