"""Self-contained verification suite behind ``diffquant verify``.

Each check returns a :class:`CheckResult`; sizes are kept small so the whole
suite runs in well under a minute on the default config.
"""

from __future__ import annotations

import math
import os
import tempfile
import time
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .diffusion_codec import (
    EncodingBudget,
    allocate_rates,
    build_codebook_set,
    encode_sup,
    generalized_entropy,
)
from .distortion_lab import CurveConfig, empirical_distortion, rate_distortion_curve
from .formats import read_codebook, write_codebook
from .holder_codec import build_layered_codebook, encode_time_changes, monotone_regularize
from .paths import SampledPath, TimeChange
from .sde_engine import simulate_ensemble
from .wiener_quant import (
    Codebook,
    gaussian_training_set,
    lloyd_scalar,
    product_codebook,
    rescale_lq,
    rescale_sup,
)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _rescale_roundtrip(cfg):
    cb = product_codebook(math.log(64), dt=2.0**-8, seed=cfg.seed, samples_per_coord=2000)
    back = rescale_sup(rescale_sup(cb, 3.0), 1 / 3.0)
    err = float(np.max(np.abs(back.entries - cb.entries)))
    lq = rescale_lq(rescale_lq(cb, 2.5, 2.0), 0.4, 2.0)
    err = max(err, float(np.max(np.abs(lq.entries - cb.entries))))
    return err <= 1e-10, f"max deviation {err:.2e}"


def _scale_equivariance(cfg):
    rng = np.random.default_rng(cfg.seed)
    e = rng.exponential(size=500)
    d1, s1 = empirical_distortion(e, cfg.p)
    d2, s2 = empirical_distortion(3.7 * e, cfg.p)
    dev = max(abs(d2 - 3.7 * d1), abs(s2 - 3.7 * s1))
    return dev <= 1e-10 * max(1.0, d2), f"deviation {dev:.2e}"


def _allocation(cfg):
    got = allocate_rates([1.0, 1.0, 1.0, 1.0], 16.0, 2.0)
    ok = np.allclose(got, 4.0, atol=1e-10)
    got2 = allocate_rates([1.0, 0.0], 100.0, 2.0)
    ok &= np.allclose(got2, [100.0, 10.0], atol=1e-10)
    return bool(ok), f"equal blocks {got.tolist()}, degenerate {got2.tolist()}"


def _entropy(cfg):
    devs = [abs(generalized_entropy(np.full(k, 1.0 / k), p) - math.log(k) ** p)
            for k in (2, 5, 64) for p in (1.0, 2.0, 3.5)]
    return max(devs) <= 1e-10, f"max deviation {max(devs):.2e}"


def _nearest_oracle(cfg):
    rng = np.random.default_rng(cfg.seed + 1)
    bad = 0
    for _ in range(100):
        K, n = int(rng.integers(2, 40)), int(rng.integers(3, 30))
        cb = Codebook(rng.standard_normal((K, n, 1)), 1.0 / (n - 1), 1.0)
        x = rng.standard_normal((1, n, 1))
        sup = np.max(np.abs(cb.entries - x), axis=(1, 2))
        i, dd = cb.nearest_many(x, "sup")
        bad += int(i[0] != int(np.argmin(sup)) or abs(dd[0] - sup.min()) > 1e-12)
        w = cb.quad_weights()
        l2 = np.sqrt(np.sum(w[None, :] * (cb.entries[:, :, 0] - x[0, :, 0]) ** 2, axis=1))
        i, dd = cb.nearest_many(x, "lq", 2.0)
        bad += int(i[0] != int(np.argmin(l2)) or abs(dd[0] - l2.min()) > 1e-12)
    return bad == 0, f"{bad} mismatches in 200 searches"


def _prefix_max(cfg):
    rng = np.random.default_rng(cfg.seed + 2)
    f = SampledPath(np.concatenate([[0.0], np.cumsum(rng.standard_normal(256)) * 0.1]), 1 / 256, 1.0)
    oracle = [max(f.values[: j + 1, 0]) for j in range(f.n)]
    dev = float(np.max(np.abs(monotone_regularize(f).values[:, 0] - oracle)))
    return dev == 0.0, f"deviation {dev:.2e}"


def _lloyd(cfg):
    sq = lloyd_scalar(norm.ppf((np.arange(200_000) + 0.5) / 200_000), 2)
    target = math.sqrt(2 / math.pi)
    lv = np.sort(np.abs(sq.levels))
    mse = 1 - 2 / math.pi
    ok = bool(np.all(np.abs(lv - target) <= 0.01 * target) and abs(sq.mse - mse) <= 0.01 * mse)
    return ok, f"levels {sq.levels.round(4).tolist()}, mse {sq.mse:.5f}"


def _codebook_file(cfg):
    cb = product_codebook(math.log(32), dt=2.0**-7, seed=cfg.seed, samples_per_coord=2000)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "cb.dqcb")
        write_codebook(path, cb)
        back = read_codebook(path)
    same = back.entries.tobytes() == cb.entries.tobytes() and back.dt == cb.dt and back.rate == cb.rate
    return bool(same), "bit-exact" if same else "mismatch"


def _decomposition(cfg, ens):
    dev = float(np.max(np.abs(ens.x - ens.m - ens.a)))
    return dev <= 1e-10, f"max |x - m - a| = {dev:.2e}"


def _regular(cfg, ens):
    n = ens.n_unit
    phis = [TimeChange(ens.phi[i, :n], ens.dt, 1.0, monotone=True) for i in range(len(ens))]
    cb = build_layered_codebook(phis, s=1.0 + ens_beta(cfg) / 4.0, rate=20.0)
    codes = encode_time_changes(ens.phi[:, :n], cb)
    bad = sum(1 for c, row in zip(codes, ens.phi[:, :n])
              if c.error > np.max(np.abs(row)) + 1e-12 or np.any(np.diff(c.phi_hat.values[:, 0]) < 0))
    return bad == 0, f"{bad} of {len(codes)} paths irregular or non-monotone"


def ens_beta(cfg):
    return cfg.diffusion_spec().beta


def _zero_rate(cfg, ens):
    bundles = ens[:]
    budget = EncodingBudget.for_sup(0.0, ens_beta(cfg))
    cbs = build_codebook_set(ens, budget, "sup", seed=cfg.seed, samples_per_coord=200)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        recs = encode_sup(bundles, budget, cbs)
    idx_ok = all(r.indices[0] == 0 and r.indices[1] == 0 and r.indices[2] == 0 for r in recs)
    x = ens.x[:, : ens.n_unit] - ens.x[:, :1]
    base = np.max(np.sqrt(np.sum(x * x, axis=2)), axis=1)
    err = np.array([r.errors["total"] for r in recs])
    dev = float(np.max(np.abs(err - base)))
    return idx_ok and dev <= 1e-10, f"indices zero: {idx_ok}, deviation from ||X - x0||: {dev:.2e}"


def _curve(cfg):
    ccfg = CurveConfig(x0=cfg.x0, dt=cfg.dt, n_train=min(cfg.n_train, 100), n_paths=min(cfg.n_paths, 200),
                       seed=cfg.seed, p=cfg.p, r_phi=cfg.r_phi, r_drift=cfg.r_drift, slack=cfg.slack,
                       samples_per_coord=min(cfg.samples_per_coord, 2000), gammas=cfg.gammas)
    rates = [r for r in cfg.rates if r <= 10.0][:3] or [2.0]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        curve = rate_distortion_curve(cfg.diffusion_spec(), "sup", rates, ccfg)
    ok = all(b.distortion <= a.distortion + 3 * (a.stderr + b.stderr) for a, b in zip(curve, curve[1:]))
    return ok, ", ".join(f"D({c.rate:.3g})={c.distortion:.4f}" for c in curve)


def _brownian_sanity(cfg):
    W = gaussian_training_set(4000, 2.0**-6, cfg.seed + 5)
    v = float(np.var(W[:, -1, 0]))
    return abs(v - 1.0) < 0.1, f"Var W_1 = {v:.4f}"


def run_checks(cfg) -> list[CheckResult]:
    """Run the suite for an :class:`~diffquant.config.ExperimentConfig`."""
    ens = simulate_ensemble(cfg.diffusion_spec(), cfg.x0, cfg.dt, cfg.T, min(cfg.n_paths, 200),
                            seed=cfg.seed, workers=cfg.workers)
    suite = [
        ("rescale round-trip", lambda: _rescale_roundtrip(cfg)),
        ("distortion scale equivariance", lambda: _scale_equivariance(cfg)),
        ("allocate_rates hand cases", lambda: _allocation(cfg)),
        ("generalized entropy, uniform", lambda: _entropy(cfg)),
        ("nearest vs exhaustive oracle", lambda: _nearest_oracle(cfg)),
        ("monotone regularization vs prefix max", lambda: _prefix_max(cfg)),
        ("Lloyd 2-level Gaussian", lambda: _lloyd(cfg)),
        ("codebook file round-trip", lambda: _codebook_file(cfg)),
        ("Brownian training paths", lambda: _brownian_sanity(cfg)),
        ("Doob-Meyer split exact", lambda: _decomposition(cfg, ens)),
        ("regular monotone time-change reconstruction", lambda: _regular(cfg, ens)),
        ("zero-rate baseline", lambda: _zero_rate(cfg, ens)),
        ("curve nonincreasing within MC slack", lambda: _curve(cfg)),
    ]
    out = []
    for name, fn in suite:
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing check is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append(CheckResult(name, bool(ok), detail, time.perf_counter() - t0))
    return out


def format_table(results) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  result  detail"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.detail}")
    n_fail = sum(not r.passed for r in results)
    lines.append(f"{len(results) - n_fail}/{len(results)} checks passed")
    return "\n".join(lines)
