import json
import math

import numpy as np
import pytest

from superbunch import cli
from superbunch.formats import read_csv, read_json, read_stream, write_csv, write_stream
from superbunch.model import PhotonStream, SourceConfig

from conftest import BW, TAU_C_PS, poisson_stream

FAST = ["--duration", "1.0", "--stages", "1"]


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_theory_outputs(tmp_path, capsys):
    assert run("theory", "--out", tmp_path, "--stages", 2, "--grid", 41) == 0
    out = capsys.readouterr().out
    assert "36" in out and "216" in out
    header, data = read_csv(tmp_path / "theory_surface.csv")
    assert data.shape == (41 * 41, 4)
    assert data[:, 2].max() == pytest.approx(36.0)
    m = read_json(tmp_path / "manifest.json")
    assert tmp_path.joinpath("theory_slice_t1_eq_t3.csv").read_text().startswith(
        f"# manifest {m['manifest_hash']}")
    assert read_json(tmp_path / "theory.json")["zero_delay"]["3"] == 216


def test_theory_without_stages_is_flat(tmp_path):
    assert run("theory", "--out", tmp_path, "--stages", 0, "--grid", 11) == 0
    _, data = read_csv(tmp_path / "theory_surface.csv")
    assert np.all(data[:, 2] == 1.0)


def test_theory_rejects_even_grid(tmp_path):
    assert run("theory", "--out", tmp_path, "--grid", 40) == cli.EXIT_VALIDATION


def test_simulate_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("simulate", *FAST, "--seed", 5, "--out", a) == 0
    assert run("simulate", *FAST, "--seed", 5, "--out", b) == 0
    for k in (1, 2, 3):
        assert (a / f"ch{k}.pstr").read_bytes() == (b / f"ch{k}.pstr").read_bytes()
    ma, mb = read_json(a / "manifest.json"), read_json(b / "manifest.json")
    assert ma["manifest_hash"] == mb["manifest_hash"]
    assert ma["outputs"] == mb["outputs"]


def test_simulate_channel_counts(tmp_path):
    assert run("simulate", "--stages", 0, "--duration", 3, "--out", tmp_path) == 0
    cfg = SourceConfig.load(tmp_path / "config.json")
    expected = cfg.mean_rate_per_detector * cfg.duration
    for k in (1, 2, 3):
        s = read_stream(tmp_path / f"ch{k}.pstr")
        assert s.channel == k
        assert abs(len(s) - expected) < 3 * math.sqrt(expected)


def test_seed_environment_and_flag_precedence(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.SEED_ENV, "77")
    assert run("simulate", *FAST, "--out", tmp_path / "env") == 0
    assert SourceConfig.load(tmp_path / "env" / "config.json").seed == 77
    assert run("simulate", *FAST, "--seed", 3, "--out", tmp_path / "flag") == 0
    assert SourceConfig.load(tmp_path / "flag" / "config.json").seed == 3


def test_config_file_then_flags(tmp_path):
    SourceConfig(n_stages=1, bandwidths=(BW,), duration=2.0, seed=4).dump(tmp_path / "c.json")
    assert run("simulate", "--config", tmp_path / "c.json", "--duration", 1.0,
               "--out", tmp_path / "o") == 0
    cfg = SourceConfig.load(tmp_path / "o" / "config.json")
    assert (cfg.duration, cfg.seed) == (1.0, 4)


@pytest.mark.parametrize("flags", [["--stages", "2", "--bandwidth", "1", "2", "3"],
                                   ["--rate", "-5"], ["--duration", "0"]])
def test_validation_exit_code(tmp_path, flags, capsys):
    assert run("simulate", *flags, "--out", tmp_path) == cli.EXIT_VALIDATION
    assert "invalid configuration" in capsys.readouterr().err


def test_unknown_config_key(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"n_stages": 1, "colour": "red"}))
    assert run("simulate", "--config", tmp_path / "c.json", "--out", tmp_path) == 2


def test_analyze_uncorrelated_streams(tmp_path):
    rng = np.random.default_rng(21)
    T = 20 * 10**12
    rate = 6e-9  # 6000 /s
    for k in (1, 2, 3):
        write_stream(tmp_path / f"ch{k}.pstr", PhotonStream(k, poisson_stream(rng, rate, T)))
    out = tmp_path / "an"
    assert run("analyze", "--in", tmp_path, "--duration-s", 20, "--bandwidth", BW,
               "--out", out) == 0
    s = read_json(out / "summary.json")
    assert s["background"] == pytest.approx(1.0, abs=0.05)
    assert s["center"] == pytest.approx(1.0, abs=5 * s["errors"]["center"])
    assert s["grid_side"] == 201
    assert s["bin_width_ps"] == round(TAU_C_PS / 20)


def test_analyze_missing_files(tmp_path):
    assert run("analyze", "--in", tmp_path, "--bandwidth", BW, "--out", tmp_path / "o") == 3
    assert run("analyze", "--out", tmp_path / "o") == 2


def test_fit_theory_slice(tmp_path):
    assert run("theory", "--out", tmp_path, "--grid", 201) == 0
    assert run("fit", "--slice", tmp_path / "theory_slice_t1t2_eq_t2t3.csv", "--model", "eq5",
               "--out", tmp_path / "fit.json") == 0
    doc = read_json(tmp_path / "fit.json")
    assert doc["g3_zero"] == pytest.approx(36.0, rel=1e-3)
    assert doc["bandwidth"] == pytest.approx(BW, rel=1e-3)
    assert read_json(tmp_path / "fit.manifest.json")["manifest_hash"] == doc["manifest_hash"]


def test_fit_degenerate_slice(tmp_path, capsys):
    tau = np.linspace(-1e9, 1e9, 101)
    write_csv(tmp_path / "flat.csv", ["tau_ps", "value", "sigma"],
              zip(tau, np.ones_like(tau), np.ones_like(tau)))
    assert run("fit", "--slice", tmp_path / "flat.csv", "--out", tmp_path / "f.json") == 3
    assert "degenerate" in capsys.readouterr().err


def test_pipeline_and_rerun(tmp_path):
    a = tmp_path / "a"
    assert run("pipeline", *FAST, "--seed", 8, "--segments", 4, "--out", a) in (0, 4)
    assert (a / "analysis" / "summary.json").exists()
    fit = read_json(a / "fit_eq5.json")
    if fit["converged"]:
        assert fit["g3_zero_err_jackknife"] > 0
    b = tmp_path / "b"
    run("rerun", a / "manifest.json", "--out", b)
    for k in (1, 2, 3):
        assert (a / "streams" / f"ch{k}.pstr").read_bytes() == (b / "streams" / f"ch{k}.pstr").read_bytes()
    sa, sb = read_json(a / "analysis/summary.json"), read_json(b / "analysis/summary.json")
    assert sa == sb


def test_rerun_analyze(tmp_path):
    assert run("simulate", *FAST, "--seed", 2, "--out", tmp_path / "s") == 0
    assert run("analyze", "--in", tmp_path / "s", "--segments", 4, "--out", tmp_path / "a") == 0
    assert run("rerun", tmp_path / "a" / "manifest.json", "--input", tmp_path / "s",
               "--out", tmp_path / "b") == 0
    assert (tmp_path / "a/surface.csv").read_bytes() == (tmp_path / "b/surface.csv").read_bytes()
