"""Command-line front end.

Usage::

    diffquant SUBCOMMAND [CONFIG] [--no-timestamp] [--key value ...]

Subcommands: ``simulate``, ``build-codebooks``, ``encode``, ``curve``,
``verify``, ``inspect``. Exit codes: 0 success, 1 verification failure,
2 usage or config error, 3 I/O error. The codebook cache lives in
``$DIFFQUANT_CACHE`` when set, else in ``<output>/cache``.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import math
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import formats
from .checks import format_table, run_checks
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .diffusion_codec import (
    CodebookSet,
    DriftCodebook,
    EncodingBudget,
    build_codebook_set,
    encode_lp,
    encode_sup,
    plan_drift_shells,
)
from .distortion_lab import CurveConfig, rate_distortion_curve
from .holder_codec import HolderNetCodebook
from .sde_engine import simulate_ensemble
from .wiener_quant import VectorCodebook

CACHE_ENV = "DIFFQUANT_CACHE"
EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3
SUBCOMMANDS = ("simulate", "build-codebooks", "encode", "curve", "verify", "inspect")


class CacheMissing(FileNotFoundError):
    pass


def _parse_overrides(extra: list[str]) -> dict:
    out = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}; overrides take the form --key value")
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ConfigError(f"override --{key} needs a value")
            val = extra[i + 1]
            i += 2
        out[key] = val
    return out


def _load(args, extra) -> ExperimentConfig:
    overrides = _parse_overrides(extra)
    if args.config:
        return load_config(args.config, overrides)
    return parse_config("", overrides)


def _stamp(args) -> str | None:
    if args.no_timestamp:
        return None
    return f"generated {_dt.datetime.now(_dt.timezone.utc).isoformat(timespec='seconds')}"


def _outdir(cfg) -> Path:
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cache_dir(cfg) -> Path:
    base = Path(os.environ.get(CACHE_ENV) or Path(cfg.output) / "cache")
    keys = {k: v for k, v in cfg.as_dict().items() if k not in ("output", "n_paths", "workers", "rates")}
    digest = hashlib.sha256(json.dumps(keys, sort_keys=True, default=str).encode()).hexdigest()[:16]
    return base / digest


def _training(cfg):
    return simulate_ensemble(cfg.diffusion_spec(), cfg.x0, cfg.dt, cfg.T, cfg.n_train, seed=cfg.seed,
                             workers=cfg.workers)


def _budget(cfg, r: float) -> EncodingBudget:
    beta = cfg.beta_effective
    if cfg.scheme == "sup":
        return EncodingBudget.for_sup(r, beta, cfg.r_phi, cfg.r_drift, cfg.gammas, cfg.slack)
    return EncodingBudget.for_lp(r, beta, cfg.r_phi, cfg.r_drift, cfg.n_blocks, gammas=cfg.gammas,
                                 slack=cfg.slack)


def _rate_dir(cache: Path, r: float) -> Path:
    return cache / f"rate_{r!r}"


def cmd_simulate(cfg, args) -> int:
    out = _outdir(cfg)
    spec = cfg.diffusion_spec()
    train = _training(cfg)
    ev = simulate_ensemble(spec, cfg.x0, cfg.dt, cfg.T, cfg.n_paths, seed=cfg.seed + 1, workers=cfg.workers)
    formats.write_ensemble(out / "training.dqpath", train)
    formats.write_ensemble(out / "ensemble.dqpath", ev)
    formats.path_csv(out / "path_0.csv", ev.x[0], ev.dt)
    print(f"wrote {len(ev)} paths to {out / 'ensemble.dqpath'} and {len(train)} training paths")
    return EXIT_OK


def cmd_build(cfg, args) -> int:
    out = _outdir(cfg)
    tpath = out / "training.dqpath"
    train = formats.read_ensemble(tpath) if tpath.exists() else _training(cfg)
    cache = _cache_dir(cfg)
    for r in cfg.rates:
        budget = _budget(cfg, r)
        cbs = build_codebook_set(train, budget, cfg.scheme, p=cfg.p, beta=cfg.beta_effective, seed=cfg.seed,
                                 samples_per_coord=cfg.samples_per_coord)
        rd = _rate_dir(cache, r)
        rd.mkdir(parents=True, exist_ok=True)
        formats.write_codebook(rd / "wiener.dqcb", cbs.wiener)
        formats.write_plan(rd / "phi.plan", cbs.phi.plan, {"n_grid": cbs.phi.n, "dt": cbs.phi.dt})
        dr = cbs.drift
        (rd / "drift.plan").write_text(
            f"eps = {dr.eps!r}\neta = {dr.eta!r}\ndt = {dr.dt!r}\nd = {dr.d}\ncells = {dr.cells}\n"
            f"log_size = {dr.log_size!r}\n")
        if cbs.anchors is not None:
            np.save(rd / "anchors.npy", cbs.anchors.centers)
        print(f"rate {r:g}: phi {cbs.phi.log_size:.3f}, drift {dr.log_size:.3f}, "
              f"wiener {cbs.wiener.log_size:.3f} nats -> {rd}")
    return EXIT_OK


def _load_codebooks(cfg, r: float) -> CodebookSet:
    rd = _rate_dir(_cache_dir(cfg), r)
    if not (rd / "wiener.dqcb").exists():
        raise CacheMissing(f"no cached codebooks for rate {r:g} in {rd}; run `diffquant build-codebooks` "
                           "with the same config first")
    wiener = formats.read_codebook(rd / "wiener.dqcb")
    plan, extra = formats.read_plan(rd / "phi.plan")
    phi = HolderNetCodebook(plan, float(extra["dt"]))
    kv = formats.parse_key_values((rd / "drift.plan").read_text())
    eps, eta, d, cells = float(kv["eps"]), float(kv["eta"]), int(kv["d"]), int(kv["cells"])
    drift = DriftCodebook(plan_drift_shells(eps, eta, cells, d), eps, eta, float(kv["dt"]), 1.0, d, cells)
    anchors = None
    if (rd / "anchors.npy").exists():
        centers = np.load(rd / "anchors.npy")
        anchors = VectorCodebook(centers, np.full(len(centers), 1.0 / len(centers)), math.nan, cfg.p)
    cbs = CodebookSet(phi, drift, wiener, cfg.d, cfg.p, cfg.seed, anchors, cfg.samples_per_coord, wiener.dt)
    return cbs


def cmd_encode(cfg, args) -> int:
    out = _outdir(cfg)
    epath = out / "ensemble.dqpath"
    if not epath.exists():
        raise CacheMissing(f"{epath} not found; run `diffquant simulate` with the same config first")
    bundles = formats.read_ensemble(epath)[:]
    rows = []
    for r in cfg.rates:
        budget = _budget(cfg, r)
        cbs = _load_codebooks(cfg, r)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            if cfg.scheme == "sup":
                recs = encode_sup(bundles, budget, cbs)
            else:
                recs = encode_lp(bundles, budget, cfg.p, cbs)
        for b, rec in zip(bundles, recs):
            phi_i, drift_i, w_i = rec.indices[:3]
            blocks = ";".join(f"{i}:{j}" for i, j in rec.indices[3:])
            e = rec.errors
            rows.append([repr(float(r)), str(b.index), str(phi_i), str(drift_i), str(w_i), blocks,
                         repr(e["total"]), repr(e["drift"]), repr(e["cross"]), repr(e["wiener"]),
                         repr(e["phi"])])
    header = ["rate", "path_id", "phi_index", "drift_index", "wiener_index", "block_indices", "err_total",
              "err_drift", "err_cross", "err_wiener", "err_phi"]
    formats.write_csv(out / "encode.csv", header, rows, _stamp(args))
    print(f"wrote {len(rows)} records to {out / 'encode.csv'}")
    return EXIT_OK


def cmd_curve(cfg, args) -> int:
    out = _outdir(cfg)
    ccfg = CurveConfig(x0=cfg.x0, dt=cfg.dt, n_train=cfg.n_train, n_paths=cfg.n_paths, seed=cfg.seed, p=cfg.p,
                       r_phi=cfg.r_phi, r_drift=cfg.r_drift, n_blocks=cfg.n_blocks, gammas=cfg.gammas,
                       slack=cfg.slack, samples_per_coord=cfg.samples_per_coord, workers=cfg.workers)
    curve = rate_distortion_curve(cfg.diffusion_spec(), cfg.scheme, cfg.rates, ccfg)
    formats.write_curve(out / "curve.csv", curve, _stamp(args))
    formats.write_curve_long(out / "curve_long.dat", curve)
    for c in curve:
        print(f"r={c.rate:.4f}  D={c.distortion:.5f} +- {c.stderr:.5f}  sqrt(r)D={c.sqrt_r_times_d:.4f}")
    return EXIT_OK


def cmd_verify(cfg, args) -> int:
    results = run_checks(cfg)
    print(format_table(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


def cmd_inspect(target: str) -> int:
    p = Path(target)
    with open(p, "rb") as fh:
        head = fh.read(8)
    if head == formats.PATH_MAGIC:
        info = formats.read_ensemble_header(p)
    elif head == formats.CB_MAGIC:
        info = formats.read_codebook_header(p)
    else:
        info = formats.parse_key_values(p.read_text())
    for k, v in info.items():
        print(f"{k} = {v}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "build-codebooks": cmd_build,
    "encode": cmd_encode,
    "curve": cmd_curve,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="diffquant", description="Functional quantization of diffusion paths.",
                                 epilog="Any config key can be overridden with --key value.")
    ap.add_argument("command", choices=SUBCOMMANDS)
    ap.add_argument("config", nargs="?", help="experiment config file (inspect: the file to inspect)")
    ap.add_argument("--no-timestamp", action="store_true", help="omit the timestamp line in CSV output")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args, extra = ap.parse_known_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        if args.command == "inspect":
            if not args.config:
                raise ConfigError("inspect needs a file argument")
            return cmd_inspect(args.config)
        cfg = _load(args, extra)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, formats.FormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
