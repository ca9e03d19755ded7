"""Binary and text file formats for ensembles, codebooks, net plans and CSV outputs.

All binary headers are little-endian. Payloads are row-major float64.

``DQPATH1``::

    magic[8]  d:u32  n:u64  dt:f64  T:f64  n_paths:u64  seed:i64  first_index:u64
    x, w, m, a  (n_paths, n, d) each, then phi (n_paths, n)

``DQCB1``::

    magic[8]  norm:u8 (0 sup, 1 lq)  q:f64 (NaN for sup)  d:u32  n:u64  dt:f64
    K:u64  contains_zero:u8  T:f64  rate:f64  has_weights:u8
    entries (K, n, d), then weights (K,) if present
"""

from __future__ import annotations

import csv
import io
import math
import struct
from pathlib import Path

import numpy as np

from .holder_codec import LayeredNetPlan, plan_shells
from .sde_engine import Ensemble
from .wiener_quant import Codebook

PATH_MAGIC = b"DQPATH1\x00"
CB_MAGIC = b"DQCB1\x00\x00\x00"
_PATH_HDR = struct.Struct("<8sIQddQqQ")
_CB_HDR = struct.Struct("<8sBdIQdQBddB")


class FormatError(ValueError):
    """A file does not follow the expected layout."""


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file: expected {n} bytes, got {len(buf)}")
    return buf


def _read_floats(fh, count: int) -> np.ndarray:
    return np.frombuffer(_read_exact(fh, 8 * count), dtype="<f8").astype(float)


def write_ensemble(path, ens: Ensemble) -> None:
    P, n, d = ens.x.shape
    with open(path, "wb") as fh:
        fh.write(_PATH_HDR.pack(PATH_MAGIC, d, n, ens.dt, ens.T, P, ens.seed, ens.first_index))
        for arr in (ens.x, ens.w, ens.m, ens.a, ens.phi):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_ensemble(path, spec_name: str = "") -> Ensemble:
    with open(path, "rb") as fh:
        magic, d, n, dt, T, P, seed, first = _PATH_HDR.unpack(_read_exact(fh, _PATH_HDR.size))
        if magic != PATH_MAGIC:
            raise FormatError(f"{path}: not an ensemble file (magic {magic!r})")
        arrs = [_read_floats(fh, P * n * d).reshape(P, n, d) for _ in range(4)]
        phi = _read_floats(fh, P * n).reshape(P, n)
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after ensemble payload")
    return Ensemble(*arrs, phi, dt, T, seed, first, spec_name)


def read_ensemble_header(path) -> dict:
    with open(path, "rb") as fh:
        magic, d, n, dt, T, P, seed, first = _PATH_HDR.unpack(_read_exact(fh, _PATH_HDR.size))
    if magic != PATH_MAGIC:
        raise FormatError(f"{path}: not an ensemble file (magic {magic!r})")
    return {"format": "DQPATH1", "d": d, "n": n, "dt": dt, "T": T, "n_paths": P, "seed": seed,
            "first_index": first}


def write_codebook(path, cb: Codebook) -> None:
    tag = 0 if cb.norm_tag == "sup" else 1
    q = math.nan if cb.q is None else cb.q
    has_w = cb.weights is not None
    with open(path, "wb") as fh:
        fh.write(_CB_HDR.pack(CB_MAGIC, tag, q, cb.d, cb.n, cb.dt, len(cb), int(cb.contains_zero),
                              cb.T, cb.rate, int(has_w)))
        fh.write(np.ascontiguousarray(cb.entries, dtype="<f8").tobytes())
        if has_w:
            fh.write(np.ascontiguousarray(cb.weights, dtype="<f8").tobytes())


def _unpack_cb_header(path, buf) -> dict:
    magic, tag, q, d, n, dt, K, cz, T, rate, has_w = _CB_HDR.unpack(buf)
    if magic != CB_MAGIC:
        raise FormatError(f"{path}: not a codebook file (magic {magic!r})")
    if tag not in (0, 1):
        raise FormatError(f"{path}: unknown norm tag {tag}")
    return {"format": "DQCB1", "norm": "sup" if tag == 0 else "lq", "q": None if tag == 0 else q,
            "d": d, "n": n, "dt": dt, "entries": K, "contains_zero": bool(cz), "T": T, "rate": rate,
            "has_weights": bool(has_w)}


def read_codebook_header(path) -> dict:
    with open(path, "rb") as fh:
        return _unpack_cb_header(path, _read_exact(fh, _CB_HDR.size))


def read_codebook(path) -> Codebook:
    with open(path, "rb") as fh:
        h = _unpack_cb_header(path, _read_exact(fh, _CB_HDR.size))
        K, n, d = h["entries"], h["n"], h["d"]
        entries = _read_floats(fh, K * n * d).reshape(K, n, d)
        weights = _read_floats(fh, K) if h["has_weights"] else None
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after codebook payload")
    return Codebook(entries, h["dt"], h["T"], h["norm"], h["q"], weights, h["contains_zero"], h["rate"])


def write_plan(path, plan: LayeredNetPlan, extra: dict | None = None) -> None:
    lines = plan.to_lines()
    for k, v in (extra or {}).items():
        lines.append(f"{k} = {v!r}" if isinstance(v, float) else f"{k} = {v}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_plan(path) -> tuple[LayeredNetPlan, dict]:
    """Rebuild a net plan from its key=value lines.

    The file must carry ``n_grid`` (written by :func:`write_plan` via ``extra``);
    the rebuilt shells are checked against the stored count and log-size.
    Keys that do not belong to the plan are returned separately.
    """
    kv = parse_key_values(Path(path).read_text())
    try:
        alpha = float(kv.pop("alpha"))
        eta = float(kv.pop("eta"))
        eps = float(kv.pop("eps"))
        xi = float(kv.pop("xi"))
        n_shells = int(kv.pop("n_shells"))
        log_size = float(kv.pop("log_size"))
        n_grid = int(kv["n_grid"])
    except KeyError as exc:
        raise FormatError(f"{path}: missing plan key {exc.args[0]}") from None
    for i in range(n_shells):
        kv.pop(f"shell.{i}", None)
    plan = plan_shells(alpha, eps, eta, xi, n_grid)
    if len(plan.shells) != n_shells or not math.isclose(plan.log_size, log_size, rel_tol=1e-12):
        raise FormatError(f"{path}: stored plan does not match its rebuilt shells")
    return plan, kv


def parse_key_values(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"line {lineno}: expected 'key = value', got {raw!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def path_csv(path, values: np.ndarray, dt: float) -> str:
    """CSV text with columns ``t, x_1..x_d`` for a single path; written when ``path`` is given."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"x_{i + 1}" for i in range(values.shape[1])])
    for j, row in enumerate(values):
        w.writerow([repr(j * dt)] + [repr(float(v)) for v in row])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


CURVE_COLUMNS = ("rate", "log_codebook_size", "p", "norm", "distortion", "stderr", "sqrt_r_times_d",
                 "n_paths", "seed")


def curve_rows(reports) -> list[list]:
    return [[repr(r.rate), repr(r.codebook_log_size), repr(r.p), r.norm_tag, repr(r.distortion),
             repr(r.stderr), repr(r.sqrt_r_times_d), str(r.n_paths), str(r.seed)] for r in reports]


def write_csv(path, header, rows, comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_curve(path, reports, comment: str | None = None) -> None:
    write_csv(path, CURVE_COLUMNS, curve_rows(reports), comment)


def write_curve_long(path, reports) -> None:
    """Long format, one ``rate<TAB>quantity<TAB>value`` record per line, for gnuplot."""
    with open(path, "w") as fh:
        fh.write("# rate\tquantity\tvalue\n")
        for r in reports:
            for name in ("distortion", "stderr", "sqrt_r_times_d"):
                fh.write(f"{r.rate!r}\t{name}\t{getattr(r, name)!r}\n")


def read_csv_rows(path) -> tuple[list, list]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    if not rows:
        raise FormatError(f"{path}: empty CSV")
    return rows[0], rows[1:]
