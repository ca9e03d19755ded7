"""Layered epsilon-nets for time changes and the modulus-of-continuity cross term.

A shell of radius ``R`` and resolution ``eps`` is the set of piecewise-linear
functions through nodes ``i*h`` whose values lie on the lattice ``delta*Z`` and
whose integer node sequence ``k`` obeys the difference bounds implied by a
Hölder–Zygmund norm bound ``||f||_s <= R``:

* ``s <= 1``: ``|k_0| <= J0`` and ``|k_i - k_{i-1}| <= J1``;
* ``1 < s <= 2``: additionally the first step obeys ``|k_1 - k_0| <= J1`` and
  every second difference ``|k_{i+1} - 2 k_i + k_{i-1}| <= J2``.

With ``h = (eps / (2R))^(1/s)`` and ``delta = eps`` every ``f`` in the ball is
within ``R h^s + delta/2 = eps`` of its rounded interpolant. Nets are never
enumerated: sizes are exact closed-form counts and quantization rounds node
values. Index 0 is always the zero function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import maximum_filter1d, minimum_filter1d

from .paths import SampledPath, TimeChange, grid_length, interp_columns, pointwise_norm
from .sde_engine import substream
from .wiener_quant import BudgetError

DEFAULT_ETA = 0.5
DEFAULT_MAX_LOG_SIZE = 1e6


@dataclass(frozen=True)
class Shell:
    """One layer of the net: a covering of the ball of radius ``radius``."""

    radius: float
    eps: float
    h: float
    n_nodes: int
    delta: float
    J0: int
    J1: int
    J2: int
    order: int

    @property
    def radices(self) -> tuple[int, int, int]:
        return 2 * self.J0 + 1, 2 * self.J1 + 1, 2 * self.J2 + 1

    @property
    def size(self) -> int:
        r0, r1, r2 = self.radices
        if self.order == 1:
            return r0 * r1 ** (self.n_nodes - 1)
        return r0 * r1 * r2 ** (self.n_nodes - 2)

    @property
    def log_size(self) -> float:
        r0, r1, r2 = self.radices
        if self.order == 1:
            return math.log(r0) + (self.n_nodes - 1) * math.log(r1)
        return math.log(r0) + math.log(r1) + (self.n_nodes - 2) * math.log(r2)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_nodes)

    def digits(self, k: np.ndarray) -> np.ndarray:
        """Mixed-radix digits of integer node sequences ``k`` (shape ``(P, N)``)."""
        out = np.empty_like(k)
        out[:, 0] = k[:, 0] + self.J0
        out[:, 1] = k[:, 1] - k[:, 0] + self.J1
        if self.order == 1:
            out[:, 2:] = np.diff(k[:, 1:], axis=1) + self.J1
        else:
            out[:, 2:] = k[:, 2:] - 2 * k[:, 1:-1] + k[:, :-2] + self.J2
        return out

    def members(self, k: np.ndarray) -> np.ndarray:
        dg = self.digits(k)
        r0, r1, r2 = self.radices
        ok = (dg[:, 0] >= 0) & (dg[:, 0] < r0) & (dg[:, 1] >= 0) & (dg[:, 1] < r1)
        rest = r1 if self.order == 1 else r2
        if dg.shape[1] > 2:
            ok &= np.all((dg[:, 2:] >= 0) & (dg[:, 2:] < rest), axis=1)
        return ok

    def rank(self, k_row: np.ndarray) -> int:
        """Position of one member inside the shell (little-endian mixed radix)."""
        dg = self.digits(k_row[None])[0]
        r0, r1, r2 = self.radices
        rest = r1 if self.order == 1 else r2
        tail = _digits_to_int(dg[:1:-1], rest)
        return int(dg[0]) + r0 * (int(dg[1]) + r1 * tail)

    def unrank(self, pos: int) -> np.ndarray:
        r0, r1, r2 = self.radices
        rest = r1 if self.order == 1 else r2
        dg = np.empty(self.n_nodes, np.int64)
        pos, dg[0] = divmod(pos, r0)
        pos, dg[1] = divmod(pos, r1)
        for i in range(2, self.n_nodes):
            pos, dg[i] = divmod(pos, rest)
        k = np.empty(self.n_nodes, np.int64)
        k[0] = dg[0] - self.J0
        k[1] = k[0] + dg[1] - self.J1
        for i in range(2, self.n_nodes):
            if self.order == 1:
                k[i] = k[i - 1] + dg[i] - self.J1
            else:
                k[i] = 2 * k[i - 1] - k[i - 2] + dg[i] - self.J2
        return k


def _digits_to_int(dg_big_endian: np.ndarray, base: int) -> int:
    if dg_big_endian.size == 0:
        return 0
    if base <= 36:
        alphabet = "0123456789abcdefghijklmnopqrstuvwxyz"
        return int("".join(alphabet[int(v)] for v in dg_big_endian), base)
    out = 0
    for v in dg_big_endian:
        out = out * base + int(v)
    return out


def make_shell(radius: float, eps: float, s: float, n_grid: int) -> Shell:
    """Shell parameters for the ball of radius ``radius`` at resolution ``eps``."""
    if not (0 < s <= 2):
        raise ValueError(f"smoothness s must lie in (0, 2], got {s}")
    h = (eps / (2.0 * radius)) ** (1.0 / s)
    n_nodes = int(min(max(math.ceil(1.0 / h), 1), n_grid - 1)) + 1
    h_eff = 1.0 / (n_nodes - 1)
    delta = eps
    J0 = math.ceil(radius / delta)
    if s <= 1:
        J1 = math.ceil(radius * h_eff**s / delta) + 1
        return Shell(radius, eps, h_eff, n_nodes, delta, J0, J1, 0, 1)
    J1 = math.ceil(radius * h_eff / delta) + 1
    J2 = math.ceil(2.0 * radius * h_eff**s / delta) + 2
    if n_nodes < 3:
        return Shell(radius, eps, h_eff, n_nodes, delta, J0, J1, 0, 1)
    return Shell(radius, eps, h_eff, n_nodes, delta, J0, J1, J2, 2)


@dataclass(frozen=True)
class LayeredNetPlan:
    """Shell radii ``e^i`` with resolutions ``eps * e^((1+eta) i)``."""

    alpha: float
    eta: float
    eps: float
    xi: float
    shells: tuple = ()

    @property
    def log_size(self) -> float:
        logs = [sh.log_size for sh in self.shells]
        return float(np.logaddexp.reduce([0.0] + logs))

    @property
    def size(self) -> int:
        return 1 + sum(sh.size for sh in self.shells)

    def to_lines(self) -> list[str]:
        lines = [f"alpha = {self.alpha!r}", f"eta = {self.eta!r}", f"eps = {self.eps!r}",
                 f"xi = {self.xi!r}", f"n_shells = {len(self.shells)}",
                 f"log_size = {self.log_size!r}"]
        for i, sh in enumerate(self.shells):
            lines.append(
                f"shell.{i} = radius={sh.radius!r} eps={sh.eps!r} h={sh.h!r} nodes={sh.n_nodes} "
                f"delta={sh.delta!r} J0={sh.J0} J1={sh.J1} J2={sh.J2} order={sh.order} "
                f"log_size={sh.log_size!r}"
            )
        return lines


def plan_shells(s: float, eps: float, eta: float, xi: float, n_grid: int) -> LayeredNetPlan:
    shells = []
    i = 0
    while True:
        radius = math.exp(i)
        eps_i = eps * math.exp((1 + eta) * i)
        if eps_i >= xi * radius:
            break
        shells.append(make_shell(radius, eps_i, s, n_grid))
        i += 1
    return LayeredNetPlan(s, eta, eps, xi, tuple(shells))


@dataclass(frozen=True)
class NetCode:
    """Quantization result for a stack of scalar paths."""

    shell: np.ndarray
    k: list
    values: np.ndarray
    error: np.ndarray


@dataclass(frozen=True)
class HolderNetCodebook:
    """Implicit layered net of piecewise-linear functions on the grid of [0, 1]."""

    plan: LayeredNetPlan
    dt: float
    T: float = 1.0
    norm_tag: str = "sup"
    contains_zero: bool = True
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def n(self) -> int:
        return grid_length(self.dt, self.T)

    @property
    def grid(self) -> np.ndarray:
        return np.arange(self.n) * self.dt

    @property
    def log_size(self) -> float:
        return self.plan.log_size

    @property
    def rate(self) -> float:
        return self.plan.log_size

    def __len__(self):
        return self.plan.size

    def _shell_offset(self, i: int) -> int:
        return 1 + sum(sh.size for sh in self.plan.shells[:i])

    def decode(self, index: int) -> np.ndarray:
        """Values on the grid of the codeword with the given index."""
        if index == 0:
            return np.zeros(self.n)
        pos = index - 1
        for sh in self.plan.shells:
            if pos < sh.size:
                k = sh.unrank(pos)
                return np.interp(self.grid, sh.nodes, k * sh.delta)
            pos -= sh.size
        raise IndexError(f"index {index} outside a net of size {len(self)}")

    def index_of(self, shell: int, k: np.ndarray) -> int:
        if shell < 0:
            return 0
        return self._shell_offset(shell) + self.plan.shells[shell].rank(np.asarray(k, np.int64))

    def quantize_many(self, values: np.ndarray) -> NetCode:
        """Best rounding representative over all shells (and zero) for each row."""
        v = np.atleast_2d(np.asarray(values, dtype=float))
        if v.shape[1] != self.n:
            raise ValueError(f"expected {self.n} grid values per path, got {v.shape[1]}")
        grid = self.grid
        best_err = np.max(np.abs(v), axis=1)
        best_shell = np.full(len(v), -1)
        best_vals = np.zeros_like(v)
        best_k: list = [None] * len(v)
        for i, sh in enumerate(self.plan.shells):
            node_vals = np.stack([np.interp(sh.nodes, grid, row) for row in v])
            k = np.rint(node_vals / sh.delta).astype(np.int64)
            ok = sh.members(k)
            if not np.any(ok):
                continue
            rows = np.flatnonzero(ok)
            rep = np.stack([np.interp(grid, sh.nodes, k[r] * sh.delta) for r in rows])
            err = np.max(np.abs(rep - v[rows]), axis=1)
            better = err < best_err[rows]
            for r, e, rv in zip(rows[better], err[better], rep[better]):
                best_err[r] = e
                best_shell[r] = i
                best_vals[r] = rv
            for r in rows[better]:
                best_k[r] = k[r]
        return NetCode(best_shell, best_k, best_vals, best_err)


def monotone_regularize(f: SampledPath) -> TimeChange:
    """Running maximum ``t -> max_{s<=t} f(s)``, flagged monotone."""
    if f.d != 1:
        raise ValueError("monotone_regularize needs a scalar path")
    return TimeChange(np.maximum.accumulate(f.values[:, 0]), f.dt, f.T, monotone=True)


def _unit_window(phi: SampledPath, dt: float) -> np.ndarray:
    n = grid_length(dt, 1.0)
    if abs(phi.dt - dt) > 1e-12 * dt:
        raise ValueError(f"time change grid dt={phi.dt} differs from codebook dt={dt}")
    if phi.n < n:
        raise ValueError("time change does not cover [0, 1]")
    return phi.values[:n, 0]


@dataclass(frozen=True)
class PhiCode:
    phi_hat: TimeChange
    index: int
    error: float
    fallback: bool


def encode_time_changes(phis: np.ndarray, cb: HolderNetCodebook, with_index: bool = True) -> list[PhiCode]:
    """Quantize rows of ``phis`` (values on the unit grid) with regularization and fallback."""
    phis = np.atleast_2d(np.asarray(phis, dtype=float))
    code = cb.quantize_many(phis)
    mono = np.maximum.accumulate(code.values, axis=1)
    own = np.max(np.abs(phis), axis=1)
    err = np.max(np.abs(mono - phis), axis=1)
    out = []
    for r in range(len(phis)):
        fallback = bool(err[r] > own[r])
        if fallback or code.shell[r] < 0:
            vals = np.zeros(cb.n)
            idx = 0
            e = float(own[r])
        else:
            vals = mono[r]
            idx = cb.index_of(int(code.shell[r]), code.k[r]) if with_index else -1
            e = float(err[r])
        out.append(PhiCode(TimeChange(vals, cb.dt, 1.0, monotone=True), idx, e, fallback))
    return out


def quantize_time_change(phi: TimeChange, cb: HolderNetCodebook) -> TimeChange:
    """Regular monotone reconstruction of ``phi`` on [0, 1] from the net ``cb``.

    The rounding representative is replaced by its running maximum; if that is
    farther from ``phi`` than ``||phi||`` the zero function is used instead.
    """
    if not cb.contains_zero:
        raise ValueError("the time-change codebook must contain the zero function")
    return encode_time_changes(_unit_window(phi, cb.dt)[None], cb, with_index=False)[0].phi_hat


def _xi_estimate(training) -> float:
    sup = max(float(np.max(np.abs(p.values))) for p in training)
    return max(2.0 * sup, 1e-12)


def build_layered_codebook(training, s: float, eps: float | None = None, eta: float = DEFAULT_ETA,
                           rate: float | None = None, xi: float | None = None,
                           max_log_size: float = DEFAULT_MAX_LOG_SIZE, dt: float | None = None):
    """Layered net for time changes on [0, 1].

    Parameters
    ----------
    training : sequence of TimeChange or SampledPath
        Used for the embedding-norm estimate ``xi`` and the grid.
    s : float
        Smoothness index of the Hölder–Zygmund scale, ``0 < s <= 2``.
    eps : float, optional
        Base resolution. Exactly one of ``eps`` and ``rate`` must be given.
    eta : float
        Shell growth exponent.
    rate : float, optional
        Target log-size; ``eps`` is then found by bisection.
    xi : float, optional
        Defaults to twice the largest sup norm in ``training``.
    max_log_size : float
        Hard cap on the log-size of the net.

    Returns
    -------
    HolderNetCodebook
        ``.plan`` carries the shells and ``.log_size`` the natural-log size.
    """
    training = list(training)
    if not training:
        raise ValueError("training set is empty")
    if s <= 0 or eta <= 0:
        raise ValueError("s and eta must be positive")
    if (eps is None) == (rate is None):
        raise ValueError("give exactly one of eps and rate")
    dt = training[0].dt if dt is None else dt
    n_grid = grid_length(dt, 1.0)
    xi = _xi_estimate(training) if xi is None else float(xi)
    if rate is not None:
        eps = _eps_for_rate(s, eta, xi, n_grid, rate)
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    plan = plan_shells(s, eps, eta, xi, n_grid)
    if plan.log_size > max_log_size:
        raise BudgetError(f"net log-size {plan.log_size:.4g} exceeds the cap max_log_size={max_log_size:g}")
    return HolderNetCodebook(plan, dt)


def _eps_for_rate(s, eta, xi, n_grid, rate) -> float:
    """Smallest base resolution (on a log scale) whose net fits in ``rate`` nats."""
    hi = xi * 2.0
    if rate <= 0 or plan_shells(s, hi, eta, xi, n_grid).log_size > rate:
        return hi
    lo = hi
    while plan_shells(s, lo, eta, xi, n_grid).log_size <= rate:
        lo /= 4.0
        if lo < 1e-300:
            return lo * 4.0
    for _ in range(80):
        mid = math.sqrt(lo * hi)
        if plan_shells(s, mid, eta, xi, n_grid).log_size <= rate:
            hi = mid
        else:
            lo = mid
        if hi / lo < 1 + 1e-6:
            break
    return hi


def cross_term(wb: SampledPath, phi: TimeChange, phi_hat: TimeChange) -> float:
    """``sup_{t in [0,1]} |W(phi(t)) - W(phi_hat(t))|`` with ``W`` interpolated linearly.

    ``wb`` is a Wiener path sampled on a grid of ``[0, tau_max]``.
    """
    n = grid_length(phi_hat.dt, 1.0)
    a = phi.values[:n, 0]
    b = phi_hat.values[:n, 0]
    top = max(float(a.max()), float(b.max()))
    if top > wb.T * (1 + 1e-12):
        raise ValueError(
            f"time change reaches {top:.6g} beyond the Wiener horizon {wb.T:.6g}; "
            "simulate the driver on a longer interval"
        )
    grid = wb.grid
    diff = interp_columns(a, grid, wb.values) - interp_columns(b, grid, wb.values)
    return float(pointwise_norm(diff).max())


@dataclass(frozen=True)
class ModulusReport:
    probability: float
    stderr: float
    bound: float
    n_windows: int
    n_mc: int

    @property
    def passed(self) -> bool:
        return self.probability >= self.bound - 3 * self.stderr


def modulus_tail_estimate(T: float, eps1: float, eps2: float, n_mc: int = 10_000, seed: int = 0,
                          d: int = 1, dt: float | None = None, chunk: int = 256) -> ModulusReport:
    """Monte Carlo check of the lower bound on ``P(w(eps1) <= 3 eps2)`` for Brownian motion.

    ``w(eps1)`` is the modulus ``sup_{|s-t| <= eps1, s,t <= T} |W_t - W_s|``,
    computed exactly on the grid by sliding max/min filters. For ``d > 1`` the
    event is required coordinatewise and the bound is raised to the power ``d``.
    """
    if eps1 <= 0 or T <= 0:
        raise ValueError("T and eps1 must be positive")
    if eps2 < math.sqrt(2 * eps1):
        raise ValueError(f"the modulus bound needs eps2 >= sqrt(2*eps1); got eps2={eps2}, eps1={eps1}")
    if dt is None:
        dt = eps1 / 32
    n = grid_length(dt, T)
    win = int(round(eps1 / dt)) + 1
    hits = 0
    for start in range(0, n_mc, chunk):
        m = min(chunk, n_mc - start)
        paths = np.zeros((m, d, n))
        for i in range(m):
            inc = substream(seed, start + i).standard_normal((d, n - 1)) * math.sqrt(dt)
            np.cumsum(inc, axis=1, out=paths[i, :, 1:])
        hi = maximum_filter1d(paths, win, axis=2, mode="nearest")
        lo = minimum_filter1d(paths, win, axis=2, mode="nearest")
        osc = (hi - lo).max(axis=2)
        hits += int(np.sum(np.all(osc <= 3 * eps2, axis=1)))
    prob = hits / n_mc
    se = math.sqrt(max(prob * (1 - prob), 0.0) / n_mc)
    n_win = math.ceil(T / eps1 - 1e-12)
    bound = max(1 - 2 * math.exp(-eps2**2 / (2 * eps1)), 0.0) ** (n_win * d)
    return ModulusReport(prob, se, bound, n_win, n_mc)
