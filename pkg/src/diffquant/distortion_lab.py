"""Monte Carlo measurement of quantization errors and rate–distortion trends."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .diffusion_codec import EncodingBudget, build_codebook_set, encode_lp, encode_sup
from .paths import SampledPath, grid_length, grid_weights, pointwise_norm
from .sde_engine import DiffusionSpec, Ensemble, holder_seminorm, simulate_ensemble
from .wiener_quant import gaussian_training_set, product_codebook


@dataclass(frozen=True)
class DistortionReport:
    """One point of a rate–distortion curve."""

    rate: float
    codebook_log_size: float
    p: float
    norm_tag: str
    distortion: float
    stderr: float
    sqrt_r_times_d: float
    n_paths: int
    seed: int = 0

    def __post_init__(self):
        if self.distortion < 0:
            raise ValueError("distortion must be nonnegative")
        if self.stderr < 0:
            raise ValueError("stderr must be nonnegative")

    @classmethod
    def from_errors(cls, errors, p: float, rate: float, log_size: float, norm_tag: str,
                    seed: int = 0) -> "DistortionReport":
        dist, se = empirical_distortion(errors, p)
        return cls(rate, log_size, p, norm_tag, dist, 0.0 if math.isnan(se) else se,
                   math.sqrt(rate) * dist, len(errors), seed)


@dataclass(frozen=True)
class CurveFit:
    """Fixed-slope fit ``log D = log c - log(r)/2`` plus a free-slope diagnostic."""

    points: list
    fitted_constant: float
    fit_residual: float
    slope: float = math.nan
    intercept: float = math.nan


def empirical_distortion(errors, p: float) -> tuple[float, float]:
    """``(mean e^p)^(1/p)`` and its delta-method standard error.

    The standard error is ``NaN`` for a single path.
    """
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    e = np.asarray(errors, dtype=float).ravel()
    if e.size == 0:
        raise ValueError("errors must be non-empty")
    if np.any(e < 0) or not np.all(np.isfinite(e)):
        raise ValueError("errors must be finite and nonnegative")
    # scale out the largest error so that the p-th powers cannot overflow
    s = e.max()
    if s == 0:
        return 0.0, 0.0
    ep = (e / s) ** p
    m = ep.mean()
    dist = s * m ** (1.0 / p)
    if e.size == 1:
        return float(dist), math.nan
    se = s * (1.0 / p) * m ** (1.0 / p - 1.0) * ep.std(ddof=1) / math.sqrt(e.size)
    return float(dist), float(se)


def _phi_array(bundles) -> tuple[np.ndarray, float]:
    if isinstance(bundles, Ensemble):
        return bundles.phi[:, : bundles.n_unit], bundles.dt
    bundles = list(bundles)
    dt = bundles[0].phi.dt
    n = grid_length(dt, 1.0)
    return np.stack([b.phi.values[:n, 0] for b in bundles]), dt


def sigma_norm_moment(bundles, p: float, rho: float) -> float:
    """``E[||sigma||_{L^rho[0,1]}^p]^(1/p)`` with ``sigma^2 = dphi/dt`` on each grid cell."""
    if p <= 0:
        raise ValueError("p must be positive")
    if not 0 < rho <= 2:
        raise ValueError(f"rho must lie in (0, 2], got {rho}")
    phi, dt = _phi_array(bundles)
    sig2 = np.maximum(np.diff(phi, axis=1) / dt, 0.0)
    norms = (dt * np.sum(sig2 ** (rho / 2.0), axis=1)) ** (1.0 / rho)
    return float(np.mean(norms**p) ** (1.0 / p))


def fit_sqrt_constant(curve, tail_fraction: float = 0.5) -> CurveFit:
    """Fit ``D = c / sqrt(r)`` on the top ``tail_fraction`` of the rates.

    Parameters
    ----------
    curve : list of DistortionReport
    tail_fraction : float
        Fraction of points (largest rates) used; at least three are required.

    Returns
    -------
    CurveFit
        ``fitted_constant`` is ``exp(mean(log D + log(r)/2))``; ``fit_residual``
        is the RMS residual in log space. ``slope`` and ``intercept`` come from
        an ordinary least-squares fit with a free slope.
    """
    pts = sorted(curve, key=lambda c: c.rate)
    k = max(3, int(math.ceil(tail_fraction * len(pts))))
    tail = pts[-k:]
    if len(pts) < 3 or len(tail) < 3:
        raise ValueError("need at least three points in the tail")
    r = np.array([c.rate for c in tail], dtype=float)
    d = np.array([c.distortion for c in tail], dtype=float)
    if np.any(d <= 0) or np.any(r <= 0):
        raise ValueError("fit needs positive rates and distortions")
    y = np.log(d) + 0.5 * np.log(r)
    logc = y.mean()
    resid = float(np.sqrt(np.mean((y - logc) ** 2)))
    slope, intercept = np.polyfit(np.log(r), np.log(d), 1)
    return CurveFit(tail, float(np.exp(logc)), resid, float(slope), float(intercept))


def fit_exponential_decay(rates, distortions) -> float:
    """Free slope of ``log D`` against ``r``."""
    r = np.asarray(rates, dtype=float)
    d = np.asarray(distortions, dtype=float)
    if np.any(d <= 0):
        raise ValueError("fit needs positive distortions")
    return float(np.polyfit(r, np.log(d), 1)[0])


@dataclass(frozen=True)
class HolderMomentReport:
    alpha: float
    kappa: float
    moment: float
    sigma_integral: float
    ratio: float
    admissible: bool
    stderr: float


def holder_moment_check(bundles, alpha: float, kappa: float) -> HolderMomentReport:
    """Ratio of ``E|M|_alpha^kappa`` to ``int_0^1 E|sigma_u|^kappa du`` on the unit window.

    ``admissible`` is ``kappa > 2 / (1 - 2 alpha)``, the range in which the
    ratio stays bounded over all coefficients. A zero martingale part gives a
    ratio of 0.
    """
    if not 0 < alpha < 0.5:
        raise ValueError(f"alpha must lie in (0, 1/2), got {alpha}")
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    if isinstance(bundles, Ensemble):
        n = bundles.n_unit
        ms = [bundles.m[i, :n] for i in range(len(bundles))]
        dt = bundles.dt
    else:
        bundles = list(bundles)
        dt = bundles[0].m.dt
        n = grid_length(dt, 1.0)
        ms = [b.m.values[:n] for b in bundles]
    sem = np.empty(len(ms))
    for i, m in enumerate(ms):
        if np.all(m == m[0]):
            sem[i] = 0.0
        else:
            sem[i] = holder_seminorm(SampledPath(m, dt, 1.0), alpha)
    vals = sem**kappa
    moment = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else math.nan
    phi, _ = _phi_array(bundles)
    sig2 = np.maximum(np.diff(phi, axis=1) / dt, 0.0)
    sig_int = float(np.mean(dt * np.sum(sig2 ** (kappa / 2.0), axis=1)))
    if sig_int == 0:
        ratio = 0.0 if moment == 0 else math.inf
    else:
        ratio = moment / sig_int
    return HolderMomentReport(alpha, kappa, moment, sig_int, ratio, kappa > 2.0 / (1.0 - 2.0 * alpha), se)


# ---------------------------------------------------------------------------
# rate-distortion curves

SCHEMES = ("sup", "lp", "wiener-sup", "wiener-lq")


@dataclass
class CurveConfig:
    """Knobs for :func:`rate_distortion_curve`.

    ``r_phi`` and ``r_drift`` are absolute side rates; when ``None`` they follow
    the default exponents of :class:`~diffquant.diffusion_codec.EncodingBudget`.
    """

    x0: float | np.ndarray = 0.0
    dt: float = 2.0**-10
    n_train: int = 200
    n_paths: int = 1000
    seed: int = 0
    p: float = 2.0
    beta: float | None = None
    r_phi: float | None = None
    r_drift: float | None = None
    n_blocks: int | None = None
    gammas: tuple | None = None
    slack: float = 4.0
    samples_per_coord: int = 20_000
    workers: int = 1
    mc_slack: float = 3.0
    extra: dict = field(default_factory=dict)


def rate_distortion_curve(spec: DiffusionSpec | None, scheme: str, rates, config: CurveConfig | None = None):
    """Empirical distortion at each rate.

    Parameters
    ----------
    spec : DiffusionSpec or None
        Process to code; ignored by the ``wiener-*`` schemes, which code
        Brownian paths with a single product codebook.
    scheme : {"sup", "lp", "wiener-sup", "wiener-lq"}
    rates : sequence of float
        Increasing nonnegative rates in nats.

    Returns
    -------
    list of DistortionReport
        A warning is issued when a distortion increases by more than
        ``mc_slack`` standard errors from one rate to the next.
    """
    cfg = config or CurveConfig()
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    rates = [float(r) for r in rates]
    if any(b <= a for a, b in zip(rates, rates[1:])):
        raise ValueError("rates must be strictly increasing")
    if any(r < 0 for r in rates):
        raise ValueError("rates must be nonnegative")
    if scheme.startswith("wiener"):
        out = _wiener_curve(scheme, rates, cfg)
    else:
        if spec is None:
            raise ValueError(f"scheme {scheme!r} needs a diffusion spec")
        out = _diffusion_curve(spec, scheme, rates, cfg)
    for a, b in zip(out, out[1:]):
        if b.distortion > a.distortion + cfg.mc_slack * (a.stderr + b.stderr):
            warnings.warn(f"distortion increases from rate {a.rate:g} to {b.rate:g} beyond MC slack",
                          RuntimeWarning, stacklevel=2)
    return out


def _wiener_curve(scheme, rates, cfg):
    W = gaussian_training_set(cfg.n_paths, cfg.dt, cfg.seed + 1_000_003)
    n = W.shape[1]
    out = []
    for r in rates:
        if scheme == "wiener-sup":
            cb = product_codebook(r, dt=cfg.dt, norm_tag="sup", q=None, seed=cfg.seed,
                                  samples_per_coord=cfg.samples_per_coord)
            _, err = cb.nearest_many(W, "sup")
            tag = "sup"
        else:
            cb = product_codebook(r, dt=cfg.dt, norm_tag="lq", q=cfg.p, seed=cfg.seed,
                                  samples_per_coord=cfg.samples_per_coord)
            _, err = cb.nearest_many(W, "lq", cfg.p, grid_weights(n, cfg.dt))
            tag = "lq"
        out.append(DistortionReport.from_errors(err, cfg.p, r, cb.log_size, tag, cfg.seed))
    return out


def _diffusion_curve(spec, scheme, rates, cfg):
    beta = spec.beta if cfg.beta is None else cfg.beta
    train = simulate_ensemble(spec, cfg.x0, cfg.dt, 1.0, cfg.n_train, seed=cfg.seed,
                              workers=cfg.workers)
    ev = simulate_ensemble(spec, cfg.x0, cfg.dt, 1.0, cfg.n_paths, seed=cfg.seed + 1,
                           workers=cfg.workers)
    bundles = ev[:]
    out = []
    for r in rates:
        if scheme == "sup":
            budget = EncodingBudget.for_sup(r, beta, cfg.r_phi, cfg.r_drift, cfg.gammas, cfg.slack)
        else:
            budget = EncodingBudget.for_lp(r, beta, cfg.r_phi, cfg.r_drift, cfg.n_blocks,
                                           gammas=cfg.gammas, slack=cfg.slack)
        cbs = build_codebook_set(train, budget, scheme, p=cfg.p, beta=beta, seed=cfg.seed,
                                 samples_per_coord=cfg.samples_per_coord)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            if scheme == "sup":
                recs = encode_sup(bundles, budget, cbs)
            else:
                recs = encode_lp(bundles, budget, cfg.p, cbs)
        err = np.array([rec.errors["total"] for rec in recs])
        out.append(DistortionReport.from_errors(err, cfg.p, r, recs[0].rate_used if recs else 0.0,
                                                "sup" if scheme == "sup" else "lq", cfg.seed))
    return out


def path_norms(values: np.ndarray, dt: float, norm_tag: str, p: float = 2.0) -> np.ndarray:
    """Per-path sup or L^p norms of a stack ``(P, n, d)``."""
    if norm_tag == "sup":
        return pointwise_norm(values).max(axis=1)
    w = grid_weights(values.shape[1], dt)
    return np.sum(w * pointwise_norm(values) ** p, axis=1) ** (1.0 / p)
