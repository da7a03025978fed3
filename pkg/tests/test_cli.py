import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from robinmass.cli import build_config, config_hash, run
from robinmass.errors import SchemaError
from robinmass.green import robin_theta_table


def write_cfg(tmp_path, name, cfg):
    p = tmp_path / f"{name}.json"
    p.write_text(json.dumps(cfg))
    return str(p)


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def manifest(prefix):
    with open(f"{prefix}_manifest.json") as fh:
        return json.load(fh)


def test_spectrum(tmp_path):
    out = str(tmp_path / "s")
    cfg = write_cfg(tmp_path, "c", {"numeric": {"cutoff": 500.0}})
    assert run(["spectrum", "--config", cfg, "--out", out]) == 0
    rows = read_csv(out + "_spectrum.csv")
    assert list(rows[0]) == ["index", "lambda", "p", "q", "method", "max_grid_residual"]
    lam = np.array([float(r["lambda"]) for r in rows])
    assert lam[0] == pytest.approx(8 * np.pi**2 / 4 * 1.0, rel=1e-14)  # (2 pi)^2 (1/4 + 1/4)
    assert np.all(np.diff(lam) >= 0)
    m = manifest(out)
    assert m["exit_code"] == 0 and m["outputs"] == [out + "_spectrum.csv"]
    assert m["config_hash"] == config_hash(m["config"])


def test_robin_all_methods_agree(tmp_path):
    out = str(tmp_path / "r")
    assert run(["robin", "--out", out, "--method", "all"]) == 0
    rows = read_csv(out + "_robin.csv")
    assert [r["method"] for r in rows] == ["ThetaTable", "NearDiagonalFit", "RegularizedIntegral", "SpectralFit"]
    ref = robin_theta_table((-1, -1), 1j).value
    for r in rows:
        assert float(r["robin_mass"]) == pytest.approx(ref, abs=1e-6)


def test_robin_single_method(tmp_path):
    out = str(tmp_path / "r1")
    assert run(["robin", "--out", out, "--method", "ThetaTable"]) == 0
    assert len(read_csv(out + "_robin.csv")) == 1


def test_robin_perturbed_bundle(tmp_path):
    out = str(tmp_path / "rp")
    cfg = {
        "bundle": {"kind": "TorusSpin", "spin": [-1, -1], "log_h_perturbation": [[1, 0, 0.1, 0.0]]},
        "numeric": {"galerkin_modes": 12},
    }
    assert run(["robin", "--config", write_cfg(tmp_path, "c", cfg), "--out", out]) == 0
    methods = {r["method"] for r in read_csv(out + "_robin.csv")}
    assert methods == {"ConformalShift", "SpectralFit"}


def test_scattering(tmp_path):
    out = str(tmp_path / "sc")
    cfg = {"numeric": {"count": 20, "alpha": 0.7853981633974483, "n_pseudo": 10}}
    assert run(["scattering", "--config", write_cfg(tmp_path, "c", cfg), "--out", out]) == 0
    curve = read_csv(out + "_scattering.csv")
    assert len(curve) == 20 and list(curve[0]) == ["lambda", "T", "dT", "error_estimate", "method"]
    assert max(float(r["error_estimate"]) for r in curve) < 1e-10
    fay = {r["quantity"]: float(r["value"]) for r in read_csv(out + "_fay.csv")}
    assert set(fay) == {"m", "a0", "a_minus_1", "fit_residual"}
    assert fay["m"] == pytest.approx(robin_theta_table((-1, -1), 1j).value, abs=1e-3)
    ps = read_csv(out + "_pseudo_spectrum.csv")
    assert len(ps) == 10 and float(ps[0]["mu"]) > 0


def test_det_ratio(tmp_path):
    out = str(tmp_path / "d")
    assert run(["det-ratio", "--out", out]) == 0
    rows = read_csv(out + "_det_ratio.csv")
    assert len(rows) == 4
    for r in rows:
        assert float(r["abs_gap"]) < 1e-6
        assert float(r["closed_form"]) == pytest.approx(np.log(4 * np.pi) + 0.5772156649015329)


def test_det_ratio_positive_alpha_fails_cleanly(tmp_path):
    out = str(tmp_path / "dp")
    cfg = write_cfg(tmp_path, "c", {"numeric": {"alpha": 0.5}})
    assert run(["det-ratio", "--config", cfg, "--out", out]) == 2
    assert "error" in manifest(out)


@pytest.mark.parametrize("surface", [None, {"kind": "ConformalSphere", "log_rho_perturbation": []}])
def test_zeta1(tmp_path, surface):
    out = str(tmp_path / "z")
    raw = {"numeric": {"nlat": 16}} if surface is None else {"surface": surface, "bundle": {"kind": "Trivial"}, "numeric": {"nlat": 16}}
    assert run(["zeta1", "--config", write_cfg(tmp_path, "c", raw), "--out", out]) == 0
    vals = [float(r["zeta1"]) for r in read_csv(out + "_zeta1.csv")]
    assert len(vals) == 2 and vals[0] == pytest.approx(vals[1], abs=1e-5)


def test_ricci_flow_short(tmp_path):
    out = str(tmp_path / "f")
    cfg = write_cfg(tmp_path, "c", {"numeric": {"t_end": 0.01, "nlat": 16, "record_every": 1}})
    assert run(["ricci-flow", "--config", cfg, "--out", out]) == 0
    rows = read_csv(out + "_ricci_flow.csv")
    assert list(rows[0]) == ["t", "mean_m", "zeta1", "max_abs_K_minus_Kinf", "area", "dt_used", "drift"]
    m = np.array([float(r["mean_m"]) for r in rows])
    assert np.all(np.diff(m) <= 1e-12)


def test_verify_subset(tmp_path, capsys):
    out = str(tmp_path / "v")
    cfg = write_cfg(tmp_path, "c", {"numeric": {"groups": ["robin-table", "sphere"]}})
    assert run(["verify", "--config", cfg, "--out", out]) == 0
    printed = capsys.readouterr().out
    assert printed.count("PASS") == 3 and "FAIL" not in printed
    rows = read_csv(out + "_verify.csv")
    assert {r["passed"] for r in rows} == {"True"}


def test_deterministic_rerun(tmp_path):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    for out in (a, b):
        assert run(["robin", "--out", out, "--method", "ThetaTable"]) == 0
    assert open(a + "_robin.csv").read() == open(b + "_robin.csv").read()
    assert manifest(a)["config_hash"] == manifest(b)["config_hash"]


def test_bad_tau_exit_2(tmp_path):
    out = str(tmp_path / "bad")
    cfg = write_cfg(tmp_path, "c", {"surface": {"kind": "FlatTorus", "tau": [0.0, -1.0]}})
    assert run(["spectrum", "--config", cfg, "--out", out]) == 2
    assert manifest(out)["exit_code"] == 2


def test_unknown_fields_exit_2(tmp_path):
    out = str(tmp_path / "u")
    cfg = write_cfg(tmp_path, "c", {"numeric": {"cutof": 10.0}})
    assert run(["spectrum", "--config", cfg, "--out", out]) == 2
    with pytest.raises(SchemaError):
        build_config("spectrum", {"colour": 1})
    with pytest.raises(SchemaError):
        build_config("spectrum", {"subcommand": "robin"})


def test_missing_config_and_bad_json(tmp_path):
    assert run(["spectrum", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "m")]) == 2
    p = tmp_path / "broken.json"
    p.write_text("{")
    assert run(["spectrum", "--config", str(p), "--out", str(tmp_path / "b")]) == 2


def test_truncation_exit_3(tmp_path):
    out = str(tmp_path / "t")
    cfg = write_cfg(tmp_path, "c", {"numeric": {"cutoff": 1e3}})
    assert run(["det-ratio", "--config", cfg, "--out", out]) == 3


def test_tolerance_scale_validation(tmp_path):
    assert run(["spectrum", "--out", str(tmp_path / "x"), "--tolerance-scale", "0"]) == 2


def test_config_hash_canonical():
    a = build_config("spectrum", {"numeric": {"cutoff": 100.0, "validate": False}})
    b = build_config("spectrum", {"numeric": {"validate": False, "cutoff": 100.0}})
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(build_config("spectrum", None))


def test_console_entry_point(tmp_path):
    out = str(tmp_path / "e")
    proc = subprocess.run([sys.executable, "-m", "robinmass.cli", "robin", "--method", "ThetaTable", "--out", out, "--threads", "1"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert manifest(out)["threads"] == 1
