"""Euler–Maruyama simulation of scalar-noise diffusions with their drift/martingale split.

A path ``X = M + A`` is stored together with its driving Brownian motion and the
time change ``phi(t) = int_0^t sigma(X_s, s)^2 ds``. Coefficients are switched to
``b = 0, sigma = 1`` after ``t = 1`` so that ``phi`` grows without bound while ``X``
on the coding window ``[0, 1]`` is unaffected.
"""

from __future__ import annotations

from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._kernels import holder_seminorm_values
from .paths import SampledPath, TimeChange, grid_length, pointwise_norm

CODING_HORIZON = 1.0


class SimulationError(RuntimeError):
    """A coefficient evaluated to a non-finite value during simulation."""


def substream(seed: int, *key: int) -> np.random.Generator:
    """Generator for the counter-style substream ``(seed, *key)``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


@dataclass(frozen=True)
class DiffusionSpec:
    """Coefficients of ``dX = b(X, t) dt + sigma(X, t) dB`` with scalar ``sigma``.

    ``b(x, t)`` and ``sigma(x, t)`` are vectorised over paths: ``x`` has shape
    ``(P, d)``, ``b`` returns ``(P, d)`` and ``sigma`` returns ``(P,)`` (scalars
    broadcast). ``L`` and ``beta`` are the declared growth/Hölder constants.
    """

    b: Callable
    sigma: Callable
    L: float = 1.0
    beta: float = 1.0
    d: int = 1
    name: str = "custom"

    def __post_init__(self):
        if not (0 < self.beta <= 1):
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        if not (0 < self.L < np.inf):
            raise ValueError(f"L must be positive and finite, got {self.L}")
        if self.d < 1:
            raise ValueError(f"d must be >= 1, got {self.d}")

    def drift(self, x: np.ndarray, t: float) -> np.ndarray:
        if t > CODING_HORIZON:
            return np.zeros_like(x)
        return np.broadcast_to(np.asarray(self.b(x, t), dtype=float), x.shape)

    def diffusion(self, x: np.ndarray, t: float) -> np.ndarray:
        if t > CODING_HORIZON:
            return np.ones(x.shape[0])
        return np.broadcast_to(np.asarray(self.sigma(x, t), dtype=float), (x.shape[0],))

    @classmethod
    def constant(cls, sigma: float = 1.0, d: int = 1, name: str | None = None) -> "DiffusionSpec":
        """Zero drift and constant diffusion coefficient ``sigma``."""
        s = float(sigma)
        return cls(
            b=lambda x, t: np.zeros_like(x),
            sigma=lambda x, t: np.full(x.shape[0], s),
            L=max(abs(s), 1e-12),
            beta=1.0,
            d=d,
            name=name or f"const-sigma-{s:g}",
        )


def wiener_spec(d: int = 1) -> DiffusionSpec:
    return DiffusionSpec.constant(1.0, d=d, name="wiener")


def ou_spec(d: int = 1) -> DiffusionSpec:
    return DiffusionSpec(
        b=lambda x, t: -x, sigma=lambda x, t: np.ones(x.shape[0]), L=1.0, beta=1.0, d=d, name="ou"
    )


def sin_sigma_spec(d: int = 1) -> DiffusionSpec:
    """OU drift with ``sigma(x) = 1 + 0.5 sin(x_1)``."""
    return DiffusionSpec(
        b=lambda x, t: -x,
        sigma=lambda x, t: 1.0 + 0.5 * np.sin(x[:, 0]),
        L=1.5,
        beta=1.0,
        d=d,
        name="sin-sigma",
    )


def indicator_sigma_spec(eps: float, kappa: float, d: int = 1) -> DiffusionSpec:
    """``b = 0`` and ``sigma_t = eps^(-1/kappa) 1{t < eps}``; the concentrating family."""
    level = eps ** (-1.0 / kappa)
    return DiffusionSpec(
        b=lambda x, t: np.zeros_like(x),
        sigma=lambda x, t: np.full(x.shape[0], level if t < eps else 0.0),
        L=max(level, 1.0),
        beta=1.0,
        d=d,
        name=f"indicator-{eps:g}-{kappa:g}",
    )


@dataclass(frozen=True)
class PathBundle:
    """One simulated path: state ``x``, driver, martingale part, drift part, time change."""

    x: SampledPath
    w_driver: SampledPath
    m: SampledPath
    a: SampledPath
    phi: TimeChange
    index: int = 0
    seed: int = 0


class Ensemble(Sequence):
    """Stacked simulation output; indexing yields :class:`PathBundle` views.

    Attributes ``x``, ``w``, ``m``, ``a`` have shape ``(P, n, d)``; ``phi`` has
    shape ``(P, n)``.
    """

    def __init__(self, x, w, m, a, phi, dt, T, seed, first_index=0, spec_name=""):
        self.x, self.w, self.m, self.a, self.phi = x, w, m, a, phi
        self.dt = float(dt)
        self.T = float(T)
        self.seed = int(seed)
        self.first_index = int(first_index)
        self.spec_name = spec_name

    def __len__(self):
        return self.x.shape[0]

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[k] for k in range(*i.indices(len(self)))]
        if i < 0:
            i += len(self)
        if not 0 <= i < len(self):
            raise IndexError(i)
        mk = lambda v: SampledPath(v, self.dt, self.T)  # noqa: E731
        return PathBundle(
            x=mk(self.x[i]),
            w_driver=mk(self.w[i]),
            m=mk(self.m[i]),
            a=mk(self.a[i]),
            phi=TimeChange(self.phi[i], self.dt, self.T, monotone=True),
            index=self.first_index + i,
            seed=self.seed,
        )

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def d(self) -> int:
        return self.x.shape[2]

    @property
    def n_unit(self) -> int:
        """Grid points covering the coding window [0, 1]."""
        return grid_length(self.dt, CODING_HORIZON)

    @classmethod
    def concatenate(cls, parts: list["Ensemble"]) -> "Ensemble":
        p0 = parts[0]
        cat = lambda name: np.concatenate([getattr(p, name) for p in parts])  # noqa: E731
        return cls(cat("x"), cat("w"), cat("m"), cat("a"), cat("phi"), p0.dt, p0.T, p0.seed,
                   p0.first_index, p0.spec_name)


def euler_maruyama(spec: DiffusionSpec, x0, dW: np.ndarray, dt: float, first_index: int = 0):
    """Integrate the SDE for given Brownian increments ``dW`` of shape ``(P, n-1, d)``.

    Returns ``(x, m, a, phi)``. ``m`` and ``a`` are accumulated separately and
    ``x = m + a`` with ``m`` starting at ``x0``, so the split is exact.
    """
    P, steps, d = dW.shape
    if d != spec.d:
        raise ValueError(f"increments have d={d}, spec has d={spec.d}")
    n = steps + 1
    m = np.empty((P, n, d))
    a = np.empty((P, n, d))
    phi = np.empty((P, n))
    m[:, 0] = np.broadcast_to(np.asarray(x0, dtype=float), (P, d))
    a[:, 0] = 0.0
    phi[:, 0] = 0.0
    x = m[:, 0] + a[:, 0]
    for k in range(steps):
        t = k * dt
        bk = spec.drift(x, t)
        sk = spec.diffusion(x, t)
        if not (np.all(np.isfinite(bk)) and np.all(np.isfinite(sk))):
            bad = np.flatnonzero(~(np.isfinite(sk) & np.all(np.isfinite(bk), axis=1)))[0]
            raise SimulationError(
                f"non-finite coefficient for path {first_index + bad} at t={t:.6g}"
            )
        a[:, k + 1] = a[:, k] + bk * dt
        m[:, k + 1] = m[:, k] + sk[:, None] * dW[:, k]
        phi[:, k + 1] = phi[:, k] + sk * sk * dt
        x = m[:, k + 1] + a[:, k + 1]
    return m + a, m, a, phi


def brownian_increments(seed: int, index: int, steps: int, d: int, dt: float) -> np.ndarray:
    return substream(seed, index, 0).standard_normal((steps, d)) * np.sqrt(dt)


def simulate_ensemble(spec: DiffusionSpec, x0, dt: float, T: float, n_paths: int, seed: int,
                      first_index: int = 0, chunk: int = 4096, workers: int = 1) -> Ensemble:
    """Simulate ``n_paths`` independent bundles on the grid ``k*dt`` of ``[0, T]``.

    Path ``i`` draws its increments from the substream ``(seed, first_index + i)``,
    so output does not depend on ``chunk`` or ``workers``.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if dt >= T:
        raise ValueError(f"dt={dt} must be smaller than T={T}")
    if T < CODING_HORIZON:
        raise ValueError(f"T must be >= 1 so that [0, 1] is covered, got {T}")
    if n_paths < 1:
        raise ValueError(f"n_paths must be >= 1, got {n_paths}")
    n = grid_length(dt, T)
    d = spec.d

    def run(start: int, stop: int) -> Ensemble:
        dW = np.stack([brownian_increments(seed, first_index + i, n - 1, d, dt)
                       for i in range(start, stop)])
        x, m, a, phi = euler_maruyama(spec, x0, dW, dt, first_index=first_index + start)
        w = np.zeros((stop - start, n, d))
        np.cumsum(dW, axis=1, out=w[:, 1:])
        return Ensemble(x, w, m, a, phi, dt, T, seed, first_index + start, spec.name)

    bounds = [(s, min(n_paths, s + chunk)) for s in range(0, n_paths, chunk)]
    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(lambda b: run(*b), bounds))
    else:
        parts = [run(*b) for b in bounds]
    ens = parts[0] if len(parts) == 1 else Ensemble.concatenate(parts)
    ens.first_index = first_index
    return ens


def time_change_inverse(phi: TimeChange, t):
    """Generalised inverse ``inf{s : phi(s) >= t}``.

    Binary search over the grid with linear interpolation inside the crossing
    cell. Across a flat piece of ``phi`` the inverse jumps; at the level of the
    flat piece it returns the left end.
    """
    v = phi.values[:, 0]
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("time_change_inverse needs t >= 0")
    if np.any(t_arr > v[-1]):
        raise ValueError(f"t exceeds phi(T)={v[-1]:.6g}; simulate a longer horizon")
    if phi.monotone:
        run = v
    else:
        run = np.maximum.accumulate(v)
    j = np.searchsorted(run, t_arr, side="left")
    jm = np.maximum(j - 1, 0)
    lo, hi = run[jm], run[j]
    span = hi - lo
    frac = np.divide(t_arr - lo, span, out=np.ones_like(span, dtype=float), where=span > 0)
    s = np.where(j == 0, 0.0, (jm + frac) * phi.dt)
    return float(s) if np.ndim(s) == 0 else s


def wiener_at(bundle: PathBundle, times) -> np.ndarray:
    """Evaluate the time-changed Wiener process ``W = M o phi^{-1}`` at ``times``.

    ``W`` is known at the nodes ``(phi_j, M_j - M_0)``; between nodes it is the
    linearly interpolated driver. Beyond ``phi(T)`` the path is extended by
    fresh Brownian increments of step ``dt`` drawn from the substream
    ``(seed, index, 1)``, so repeated calls agree.

    Returns an array of shape ``(len(times), d)``.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    nodes_t, nodes_w = _wiener_nodes(bundle, float(times.max(initial=0.0)))
    return np.stack([np.interp(times, nodes_t, nodes_w[:, c]) for c in range(nodes_w.shape[1])],
                    axis=1)


def _wiener_nodes(bundle: PathBundle, t_max: float):
    phi = bundle.phi.values[:, 0]
    w = bundle.m.values - bundle.m.values[0]
    # drop repeated nodes on flat pieces; M is constant there
    keep = np.concatenate([[True], np.diff(phi) > 0])
    nodes_t, nodes_w = phi[keep], w[keep]
    if t_max > nodes_t[-1]:
        dt = bundle.phi.dt
        steps = int(np.ceil((t_max - nodes_t[-1]) / dt)) + 1
        inc = substream(bundle.seed, bundle.index, 1).standard_normal((steps, w.shape[1]))
        ext_w = nodes_w[-1] + np.cumsum(inc * np.sqrt(dt), axis=0)
        ext_t = nodes_t[-1] + dt * np.arange(1, steps + 1)
        nodes_t = np.concatenate([nodes_t, ext_t])
        nodes_w = np.concatenate([nodes_w, ext_w])
    return nodes_t, nodes_w


def holder_seminorm(path: SampledPath, alpha: float, stride: int = 1) -> float:
    """Exact discrete Hölder seminorm ``max_{s<t} |f(t)-f(s)| / (t-s)^alpha``.

    O(n^2) over all grid pairs. ``stride > 1`` evaluates on the coarse subgrid
    ``k*stride*dt`` instead, which underestimates the full-grid value. Constant
    leading and trailing stretches are trimmed first; this never changes the
    maximum.
    """
    if not (0 < alpha <= 1):
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if path.n < 2:
        raise ValueError("holder_seminorm needs at least two grid points")
    v = path.values[::stride]
    dt = path.dt * stride
    changed = np.flatnonzero(np.any(np.diff(v, axis=0) != 0, axis=1))
    if changed.size == 0:
        return 0.0
    v = v[changed[0]:changed[-1] + 2]
    return holder_seminorm_values(v, dt, alpha)


@dataclass(frozen=True)
class AssumptionReport:
    """Worst ratios found while probing the growth and Hölder conditions."""

    growth_ratio: float
    holder_ratio: float
    sigma_vanishes: bool
    worst_growth_point: np.ndarray
    worst_holder_pair: tuple

    @property
    def violated(self) -> bool:
        return self.growth_ratio > 1.0 or self.holder_ratio > 1.0

    def __str__(self):
        flag = "VIOLATED" if self.violated else "ok"
        return (f"growth={self.growth_ratio:.4g} holder={self.holder_ratio:.4g} "
                f"sigma_vanishes={self.sigma_vanishes} [{flag}]")


def check_assumption_C(spec: DiffusionSpec, n_probe: int = 10_000, box=(-10.0, 10.0),
                       seed: int = 0, t_range=(0.0, 1.0)) -> AssumptionReport:
    """Probe the growth bound ``|sigma|+|b| <= L(|z|+1)`` and the Hölder bound on ``sigma``.

    Half the pairs are independent uniform points in ``box``; the other half are
    small perturbations, which is where the ``|z-z'|^beta`` term bites.
    """
    if n_probe < 2:
        raise ValueError("n_probe must be >= 2")
    rng = substream(seed, 0)
    lo = np.broadcast_to(np.asarray(box[0], dtype=float), (spec.d,))
    hi = np.broadcast_to(np.asarray(box[1], dtype=float), (spec.d,))
    z = lo + (hi - lo) * rng.random((n_probe, spec.d))
    half = n_probe // 2
    z2 = lo + (hi - lo) * rng.random((n_probe, spec.d))
    scale = 10.0 ** rng.uniform(-8, 0, size=(half, 1))
    z2[:half] = np.clip(z[:half] + scale * (hi - lo) * rng.uniform(-1, 1, (half, spec.d)), lo, hi)
    t = rng.uniform(t_range[0], t_range[1])
    s1 = np.asarray(spec.sigma(z, t), dtype=float) * np.ones(n_probe)
    s2 = np.asarray(spec.sigma(z2, t), dtype=float) * np.ones(n_probe)
    bz = np.broadcast_to(np.asarray(spec.b(z, t), dtype=float), z.shape)
    growth = (np.abs(s1) + pointwise_norm(bz)) / (spec.L * (pointwise_norm(z) + 1.0))
    dz = pointwise_norm(z - z2)
    denom = spec.L * (dz**spec.beta + dz)
    holder = np.divide(np.abs(s1 - s2), denom, out=np.zeros(n_probe), where=denom > 0)
    ig, ih = int(np.argmax(growth)), int(np.argmax(holder))
    return AssumptionReport(
        growth_ratio=float(growth[ig]),
        holder_ratio=float(holder[ih]),
        sigma_vanishes=bool(np.all(s1 == 0) and np.all(s2 == 0)),
        worst_growth_point=z[ig].copy(),
        worst_holder_pair=(z[ih].copy(), z2[ih].copy()),
    )
