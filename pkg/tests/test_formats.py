import math

import numpy as np
import pytest

from diffquant import formats
from diffquant.distortion_lab import DistortionReport
from diffquant.holder_codec import plan_shells
from diffquant.wiener_quant import Codebook, product_codebook


def test_ensemble_roundtrip_bit_exact(tmp_path, sin_ens):
    f = tmp_path / "e.dqpath"
    formats.write_ensemble(f, sin_ens)
    back = formats.read_ensemble(f)
    for name in ("x", "w", "m", "a", "phi"):
        assert getattr(back, name).tobytes() == getattr(sin_ens, name).tobytes()
    hdr = formats.read_ensemble_header(f)
    assert hdr["n_paths"] == len(sin_ens) and hdr["seed"] == sin_ens.seed


def test_codebook_roundtrip_with_weights(tmp_path):
    cb = product_codebook(math.log(8), dt=2.0**-5, samples_per_coord=500)
    w = np.full(len(cb), 1.0 / len(cb))
    cb = Codebook(cb.entries, cb.dt, cb.T, "lq", 3.0, w, True, cb.rate)
    f = tmp_path / "c.dqcb"
    formats.write_codebook(f, cb)
    back = formats.read_codebook(f)
    assert back.entries.tobytes() == cb.entries.tobytes()
    assert back.q == 3.0 and back.norm_tag == "lq" and back.contains_zero
    np.testing.assert_array_equal(back.weights, w)


def test_truncated_and_foreign_files(tmp_path):
    cb = product_codebook(math.log(4), dt=2.0**-4, norm_tag="sup", q=None, samples_per_coord=200)
    f = tmp_path / "c.dqcb"
    formats.write_codebook(f, cb)
    data = f.read_bytes()
    f.write_bytes(data[:-8])
    with pytest.raises(formats.FormatError):
        formats.read_codebook(f)
    f.write_bytes(data + b"x")
    with pytest.raises(formats.FormatError):
        formats.read_codebook(f)
    g = tmp_path / "bogus"
    g.write_bytes(b"NOTMAGIC" + bytes(100))
    with pytest.raises(formats.FormatError):
        formats.read_ensemble(g)


def test_plan_roundtrip(tmp_path):
    plan = plan_shells(1.25, 0.02, 0.5, 2.0, 129)
    f = tmp_path / "phi.plan"
    formats.write_plan(f, plan, {"n_grid": 129, "dt": 2.0**-7})
    back, extra = formats.read_plan(f)
    assert back == plan
    assert float(extra["dt"]) == 2.0**-7


def test_plan_tamper_detected(tmp_path):
    plan = plan_shells(1.25, 0.02, 0.5, 2.0, 129)
    f = tmp_path / "phi.plan"
    formats.write_plan(f, plan, {"n_grid": 129})
    f.write_text(f.read_text().replace(f"n_shells = {len(plan.shells)}", "n_shells = 99"))
    with pytest.raises(formats.FormatError):
        formats.read_plan(f)


def test_key_values_error_names_line():
    assert formats.parse_key_values("a = 1  # note\n\nb=2") == {"a": "1", "b": "2"}
    with pytest.raises(formats.FormatError, match="line 2"):
        formats.parse_key_values("a = 1\nbroken")


def test_path_csv_text():
    text = formats.path_csv(None, np.array([0.0, 0.5]), 0.5)
    assert text == "t,x_1\n0.0,0.0\n0.5,0.5\n"


def test_curve_csv_roundtrip(tmp_path):
    rep = DistortionReport(2.0, 1.9, 2.0, "sup", 0.3, 0.01, math.sqrt(2) * 0.3, 10, 7)
    f = tmp_path / "curve.csv"
    formats.write_curve(f, [rep], "generated now")
    header, rows = formats.read_csv_rows(f)
    assert tuple(header) == formats.CURVE_COLUMNS
    assert float(rows[0][4]) == 0.3 and rows[0][3] == "sup"
    g = tmp_path / "curve.dat"
    formats.write_curve_long(g, [rep])
    assert len(g.read_text().splitlines()) == 4
