import json
import os

import numpy as np
import pandas as pd
import pytest

from braidmc.cli import EXIT_CONFIG, EXIT_OK, EXIT_TOO_LARGE, main, replica_estimate
from braidmc.presets import preset_path
from braidmc.worldlines import CycleVector

RUN_FILES = {"manifest.json", "samples.csv", "samples.bin", "spectrum.csv", "spectrum.json", "run.log"}

BIG_TOML = """
[model]
kind = "nn_square"
V = 20.0
mu = 40.0

[lattice]
L = 8
"""


def _read(path):
    with open(path, "rb") as f:
        return f.read()


def test_strtree(tmp_path, capsys):
    assert main(["strtree", "6", "-o", str(tmp_path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "expected_measurements = 8/3" in out
    assert "info = log2(6)" in out
    with open(os.path.join(tmp_path, "tree_str_L6.json")) as f:
        assert json.load(f)["expected_measurements"] == "8/3"


def test_strtree_checkerboard(tmp_path, capsys):
    assert main(["strtree", "4", "--phase", "cb", "-o", str(tmp_path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "expected_measurements = 1" in out
    assert "info = 1 " in out


def test_strtree_rejects_L(tmp_path, capsys):
    assert main(["strtree", "5", "-o", str(tmp_path)]) == EXIT_CONFIG
    assert "divisible by 3" in capsys.readouterr().err


def test_usage_errors(capsys):
    assert main([]) == EXIT_CONFIG
    assert main(["--version"]) == EXIT_OK


def test_presets(tmp_path, capsys):
    assert main(["presets", "list"]) == EXIT_OK
    names = capsys.readouterr().out.split()
    assert "str_L12" in names
    assert "oracle_dimer" in names
    assert main(["presets", "copy", "str_L6", "-o", str(tmp_path)]) == EXIT_OK
    assert os.path.exists(os.path.join(tmp_path, "str_L6.toml"))
    assert main(["presets", "copy", "nothing", "-o", str(tmp_path)]) == EXIT_CONFIG


def test_unknown_key_exits_with_config_error(tmp_path, capsys):
    path = tmp_path / "typo.toml"
    path.write_text('[model]\nkind = "nn_square"\ntt = 1.0\n\n[lattice]\nL = 4\n')
    assert main(["run", str(path), "-o", str(tmp_path / "out")]) == EXIT_CONFIG
    assert "'tt'" in capsys.readouterr().err
    assert not os.path.exists(tmp_path / "out")


def test_missing_config(tmp_path):
    assert main(["run", str(tmp_path / "absent.toml")]) == EXIT_CONFIG


def test_run_writes_artifacts(tmp_path, dimer_toml, capsys):
    out = str(tmp_path / "a")
    assert main(["run", dimer_toml, "-o", out]) == EXIT_OK
    assert "N = 1" in capsys.readouterr().out
    assert RUN_FILES <= set(os.listdir(out))

    with open(os.path.join(out, "manifest.json")) as f:
        manifest = json.load(f)
    assert manifest["N"] == 1
    assert manifest["seed"] == 3
    assert manifest["summary"]["samples"] == 200
    assert manifest["summary"]["top_invariant"] == "1"
    assert RUN_FILES <= set(manifest["files"])

    samples = pd.read_csv(os.path.join(out, "samples.csv"), dtype={"fock0": str})
    assert len(samples) == 200
    assert set(samples["fock0"]) <= {"10", "01"}
    assert (samples["f_pc"] == 0).all()
    assert _read(os.path.join(out, "spectrum.csv")).startswith(b"q,avg_lambda,prob,err,count,p1\n")


def test_run_is_reproducible(tmp_path, dimer_toml):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["run", dimer_toml, "-o", a]) == EXIT_OK
    assert main(["run", dimer_toml, "-o", b]) == EXIT_OK
    for name in ("samples.csv", "spectrum.csv", "spectrum.json"):
        assert _read(os.path.join(a, name)) == _read(os.path.join(b, name))


def test_analyze_reproduces_spectrum(tmp_path, dimer_toml, capsys):
    out = str(tmp_path / "a")
    assert main(["run", dimer_toml, "-o", out]) == EXIT_OK
    before = _read(os.path.join(out, "spectrum.csv"))
    os.remove(os.path.join(out, "spectrum.csv"))
    assert main(["analyze", out]) == EXIT_OK
    assert _read(os.path.join(out, "spectrum.csv")) == before
    assert "f_pc = 0" in capsys.readouterr().out


def test_resume(tmp_path, dimer_toml):
    first = str(tmp_path / "first")
    assert main(["run", dimer_toml, "-o", first]) == EXIT_OK
    second = str(tmp_path / "second")
    checkpoint = os.path.join(first, "samples.bin")
    assert main(["run", dimer_toml, "-o", second, "--resume", checkpoint]) == EXIT_OK
    with open(os.path.join(second, "manifest.json")) as f:
        manifest = json.load(f)
    assert manifest["resumed_from"] == checkpoint
    samples = pd.read_csv(os.path.join(second, "samples.csv"))
    first_samples = pd.read_csv(os.path.join(first, "samples.csv"))
    assert samples["sweep"].min() > first_samples["sweep"].max()


def test_oracle_compare_too_large(tmp_path, capsys):
    path = tmp_path / "big.toml"
    path.write_text(BIG_TOML)
    assert main(["oracle-compare", str(path), "-o", str(tmp_path / "out")]) == EXIT_TOO_LARGE
    assert "too large" in capsys.readouterr().err
    assert not os.path.exists(tmp_path / "out" / "samples.csv")


def test_scan_command(tmp_path, dimer_toml, capsys):
    out = str(tmp_path / "scan")
    assert main(["scan", dimer_toml, "--param", "beta=1,2", "-o", out]) == EXIT_OK
    index = pd.read_csv(os.path.join(out, "meta_data.csv"))
    assert index["beta"].tolist() == [1.0, 2.0]
    assert all(os.path.isdir(os.path.join(out, d)) for d in index["directory"])
    assert main(["analyze", out]) == EXIT_OK
    assert main(["scan", dimer_toml, "--param", "beta", "-o", out]) == EXIT_CONFIG


def test_replica_estimate_merges_replicas():
    df = pd.DataFrame({"replica": [0] * 32 + [1] * 32 + [2] * 4})
    values = [1.0] * 32 + [0.0] * 32 + [5.0] * 4
    est = replica_estimate(df, values)
    assert est.mean == pytest.approx(0.5)
    assert est.n == 64
    assert replica_estimate(df.iloc[:8], values[:8]) is None


@pytest.mark.slow
@pytest.mark.parametrize("name", ["oracle_dimer", "oracle_ring3", "oracle_square2x4"])
def test_oracle_presets_pass(tmp_path, name):
    out = str(tmp_path / name)
    assert main(["oracle-compare", preset_path(name), "-o", out]) == EXIT_OK
    with open(os.path.join(out, "report.json")) as f:
        report = json.load(f)
    assert report["passed"]
    assert report["max_abs_z"] <= 4.0
    assert report["diagonal"]["states"]
    energy = report["energy"]
    assert abs(energy["pimc"] - energy["ed"]) <= 4 * energy["pimc_err"]
    if name == "oracle_dimer":
        assert report["cycles"]["skipped"]
        return
    classes = {c["q"]: c for c in report["cycles"]["classes"]}
    assert report["cycles"]["skipped"] is None
    if name == "oracle_ring3":
        exchange = classes["0-1"]
        assert exchange["trotter"] > 0.1
        assert exchange["pimc"] > 0.1
    else:
        assert energy["pimc_err"] <= 5e-3
        assert sum(c["pimc"] for c in classes.values()) == pytest.approx(1.0)


def _run_preset(directory, path):
    assert main(["run", path, "-o", directory]) == EXIT_OK
    return pd.read_csv(os.path.join(directory, "samples.csv"), dtype={"fock0": str})


@pytest.fixture(scope="module")
def cb_L4_samples(tmp_path_factory):
    return _run_preset(str(tmp_path_factory.mktemp("cb") / "cb_L4"), preset_path("cb_L4"))


@pytest.mark.slow
def test_deep_checkerboard_is_trivial_and_flat_in_L(tmp_path, cb_L4_samples):
    with open(preset_path("cb_L4")) as f:
        text = f.read().replace("L = 4", "L = 6").replace("target_samples = 20000", "target_samples = 10000")
    path = tmp_path / "cb_L6.toml"
    path.write_text(text)
    cb_L6_samples = _run_preset(str(tmp_path / "cb_L6"), str(path))

    estimates = []
    for df in (cb_L4_samples, cb_L6_samples):
        N = int(df["N"].iloc[0])
        assert df["q"].value_counts().idxmax() == str(CycleVector.trivial(N))
        est = replica_estimate(df, df["f_pc"])
        assert est is not None
        estimates.append(est)
    small, large = estimates
    assert abs(small.mean - large.mean) <= 3 * np.hypot(small.stderr, large.stderr) + 1e-12


@pytest.mark.slow
def test_long_cycles_separate_z2_from_checkerboard(tmp_path, cb_L4_samples):
    z2_samples = _run_preset(str(tmp_path / "z2"), preset_path("z2_half_kagome_L4"))

    def long_classes(df):
        freq = df["q"].value_counts(normalize=True)
        return [q for q, p in freq.items() if p > 0.01 and CycleVector.from_string(q).longest >= 4]

    assert long_classes(z2_samples)
    assert not long_classes(cb_L4_samples)
