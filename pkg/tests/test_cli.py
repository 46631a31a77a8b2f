import csv
import hashlib
import json
import math
import os

import numpy as np
import pytest

from fock_sampling import experiment
from fock_sampling.cli import EXIT_CONFIG, EXIT_GUARD, EXIT_OK, EXIT_PARTIAL, main
from fock_sampling.experiment import SWEEP_COLUMNS, ExperimentConfig, cell_seed, load_config, read_sweep_csv
from fock_sampling.oracle import ideal_fluctuation_curve, ideal_peak

SMALL = """
dim = 3
atom_counts = [20]
couplings = [{g}]
temperatures = [1.2, 1.5, 1.8]
ensembles = {ensembles}
steps = {steps}
replicas = {replicas}
seed = 7
"""


def write_config(tmp_path, name="cfg.toml", g=0.0, ensembles='["canonical"]', steps=300_000, replicas=1, extra=""):
    path = tmp_path / name
    path.write_text(SMALL.format(g=g, ensembles=ensembles, steps=steps, replicas=replicas) + extra)
    return str(path)


def body(path):
    with open(path) as fh:
        return [ln for ln in fh if not ln.startswith("#")]


def test_minimal_sweep_rows_and_resume(tmp_path, capsys):
    cfg = write_config(tmp_path)
    out = tmp_path / "out"
    assert main(["sweep", cfg, "-o", str(out)]) == EXIT_OK
    rows = read_sweep_csv(out / "sweep.csv")
    assert len(rows) == 3
    assert [r["T"] for r in rows] == [1.2, 1.5, 1.8]
    assert {r["config_hash"] for r in rows} == {load_config(cfg).config_hash()}
    header = (out / "sweep.csv").read_text().splitlines()
    assert header[0].startswith("# config_hash") and header[1].startswith("#")
    assert header[2].split(",") == list(SWEEP_COLUMNS)
    first = body(out / "sweep.csv")
    stamp = {p: os.path.getmtime(p) for p in (out / "cells").iterdir()}
    capsys.readouterr()
    assert main(["sweep", cfg, "-o", str(out)]) == EXIT_OK
    assert "ran 0 cells, skipped 3" in capsys.readouterr().out
    assert body(out / "sweep.csv") == first
    assert stamp == {p: os.path.getmtime(p) for p in (out / "cells").iterdir()}


def test_both_ensembles_emit_rows(tmp_path):
    cfg = write_config(tmp_path, ensembles='["canonical", "microcanonical"]')
    out = tmp_path / "out"
    assert main(["sweep", cfg, "-o", str(out)]) == EXIT_OK
    rows = read_sweep_csv(out / "sweep.csv")
    assert sorted(r["ensemble"] for r in rows) == ["canonical"] * 3 + ["microcanonical"] * 3


def test_output_directory_refuses_other_config(tmp_path):
    out = tmp_path / "out"
    cfg = write_config(tmp_path)
    assert main(["sweep", cfg, "-o", str(out)]) == EXIT_OK
    cfg2 = write_config(tmp_path, "cfg2.toml", steps=200_000)
    assert main(["sweep", cfg2, "-o", str(out)]) == EXIT_CONFIG
    assert {r["config_hash"] for r in read_sweep_csv(out / "sweep.csv")} == {load_config(cfg).config_hash()}


def test_doubling_replicas_shrinks_errors(tmp_path):
    se = []
    for k in (1, 2):
        cfg = write_config(tmp_path, f"r{k}.toml", steps=1_500_000, replicas=k)
        out = tmp_path / f"r{k}"
        assert main(["sweep", cfg, "-o", str(out)]) == EXIT_OK
        rows = read_sweep_csv(out / "sweep.csv")
        assert {r["replicas"] for r in rows} == {k}
        se.append(np.array([r["se_mean"] for r in rows]))
    ratio = float(np.exp(np.mean(np.log(se[0] / se[1]))))
    assert ratio == pytest.approx(math.sqrt(2), rel=0.3)


def test_environment_overrides(tmp_path, monkeypatch):
    cfg = write_config(tmp_path)
    monkeypatch.setenv("FSS_OUTPUT_DIR", str(tmp_path / "env-out"))
    monkeypatch.setenv("FSS_WORKERS", "2")
    loaded = load_config(cfg)
    assert loaded.output_dir == str(tmp_path / "env-out") and loaded.workers == 2
    assert main(["sweep", cfg]) == EXIT_OK
    assert len(read_sweep_csv(tmp_path / "env-out" / "sweep.csv")) == 3


def test_parallel_and_serial_agree(tmp_path, monkeypatch):
    cfg = write_config(tmp_path)
    assert main(["sweep", cfg, "-o", str(tmp_path / "serial")]) == EXIT_OK
    monkeypatch.setenv("FSS_WORKERS", "3")
    assert main(["sweep", cfg, "-o", str(tmp_path / "parallel")]) == EXIT_OK
    assert body(tmp_path / "serial" / "sweep.csv") == body(tmp_path / "parallel" / "sweep.csv")


@pytest.mark.parametrize("extra", ["dim = 4\n", "bogus = 1\n", "replicas = 0\n"])
def test_config_errors(tmp_path, extra):
    text = SMALL.format(g=0.0, ensembles='["canonical"]', steps=1000, replicas=1)
    path = tmp_path / "bad.toml"
    path.write_text("\n".join(ln for ln in text.splitlines() if not ln.startswith(extra.split(" ")[0] + " ")) + "\n" + extra)
    assert main(["sweep", str(path), "-o", str(tmp_path / "o")]) == EXIT_CONFIG


def test_missing_config_file(tmp_path):
    assert main(["sweep", str(tmp_path / "nope.toml")]) == EXIT_CONFIG


def test_partial_failure(tmp_path, monkeypatch):
    real = experiment._run_cell

    def flaky(cfg, cell, path, cutoff_scale=1.0):
        if cell.temperature == 1.5:
            raise RuntimeError("injected")
        return real(cfg, cell, path, cutoff_scale)

    monkeypatch.setattr(experiment, "_run_cell", flaky)
    out = tmp_path / "out"
    assert main(["sweep", write_config(tmp_path), "-o", str(out)]) == EXIT_PARTIAL
    failures = json.loads((out / "failures.json").read_text())
    assert len(failures) == 1 and "injected" in failures[0]["error"]
    assert len(read_sweep_csv(out / "sweep.csv")) == 2
    monkeypatch.setattr(experiment, "_run_cell", real)
    assert main(["sweep", write_config(tmp_path), "-o", str(out)]) == EXIT_OK
    assert len(read_sweep_csv(out / "sweep.csv")) == 3


def test_cell_seeds_are_stable_and_distinct():
    assert cell_seed(7, 300, 0.004755, 7.4, 0) == cell_seed(7, 300, 0.004755, 7.4, 0)
    seeds = {cell_seed(7, n, g, t, r) for n in (100, 300) for g in (0.0, 0.01) for t in (1.0, 2.0) for r in (0, 1)}
    assert len(seeds) == 16
    # documented derivation: first 8 bytes (little endian) of a SHA-256 over the cell label
    digest = hashlib.sha256(b"fss-cell:0:1:0:1:0").digest()
    assert cell_seed(0, 1, 0.0, 1.0, 0) == int.from_bytes(digest[:8], "little") == 12616342474365005903


def test_exact_ideal_single_atom(tmp_path):
    path = tmp_path / "one.toml"
    path.write_text("atom_counts = [1]\ncouplings = [0.0]\ntemperatures = [0.5, 1.0, 2.0]\n")
    assert main(["exact-ideal", str(path), "-o", str(tmp_path / "o")]) == EXIT_OK
    rows = read_sweep_csv(tmp_path / "o" / "exact_ideal.csv")
    from fock_sampling.modes import build_mode_set
    from fock_sampling.oracle import single_particle_z

    for r in rows:
        p = 1.0 / single_particle_z(1.0 / r["T"], build_mode_set(3, None, 16 * r["T"]), tail_tol=None)
        assert r["mean_n0"] == pytest.approx(p, rel=1e-12)
        assert r["std_n0"] == pytest.approx(math.sqrt(p * (1 - p)), rel=1e-10)
        assert r["method_tag"] == "recurrence"


def test_enumerate_two_atoms(tmp_path, capsys):
    assert main(["enumerate", "--atoms", "2", "--e-cut", "1", "--beta", str(math.log(2))]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["n_states"] == 6
    assert out["canonical"]["mean_n0"] == pytest.approx(3 / 2.75, rel=1e-12)


def test_enumerate_reference_numbers(tmp_path):
    cfg = tmp_path / "enum.toml"
    cfg.write_text("[enumerate]\natoms = 5\ndim = 1\ne_cut = 9\ncoupling = 0.2\nbeta = 0.5\n")
    out = tmp_path / "enum.json"
    assert main(["enumerate", "--config", str(cfg), "-o", str(out)]) == EXIT_OK
    data = json.loads(out.read_text())
    assert data["canonical"]["mean_n0"] == pytest.approx(2.9553394435148, rel=1e-12)
    assert data["canonical"]["var_n0"] == pytest.approx(2.7579503034472523, rel=1e-12)
    assert data["modal_shell"]["energy"] == pytest.approx(1.5)


def test_enumerate_guard(capsys):
    code = main(["enumerate", "--atoms", "30", "--dim", "3", "--e-cut", "4", "--beta", "1", "--max-states", "1000"])
    assert code == EXIT_GUARD
    assert "exceed" in capsys.readouterr().err


def test_enumerate_needs_parameters():
    assert main(["enumerate", "--atoms", "3"]) == EXIT_CONFIG


def synthetic_sweep(path, points, c=2.0, config_hash="synthetic"):
    """A sweep CSV whose canonical curves are the exact ideal ones stretched by ``1 + c x``."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash {config_hash}\n# synthetic\n")
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        w.writeheader()
        for n, x in points:
            t0, _ = ideal_peak(n)
            s = 1 + c * x
            g = 2 / math.pi * x * n ** (-1 / 3)
            temps = t0 * s * np.linspace(0.8, 1.2, 11)
            stds = 1.1 * ideal_fluctuation_curve(n, temps / s).std_n0
            for t, std in zip(temps, stds):
                w.writerow({"N": n, "dim": 3, "g": g, "T": t, "ensemble": "canonical", "mean_n0": 1.0,
                            "std_n0": std, "se_mean": 0.1, "se_std": 0.01,
                            "n_samples": 1e4, "gas_param": x, "replicas": 1, "t_norm": "", "std_norm": "",
                            "config_hash": config_hash})


def test_fit_round_trip(tmp_path, capsys):
    path = tmp_path / "sweep.csv"
    synthetic_sweep(path, [(n, x) for n in (100, 200) for x in (0.01, 0.015, 0.02)])
    out = tmp_path / "fit.json"
    assert main(["fit", str(path), "--kind", "linear-3d", "-o", str(out)]) == EXIT_OK
    fit = json.loads(out.read_text())
    assert fit["kind"] == "linear-3d" and fit["n_points"] == 6
    assert fit["coefficients"]["c"] == pytest.approx(2.0, rel=1e-6)
    capsys.readouterr()
    assert main(["peak", str(path)]) == EXIT_OK
    peaks = json.loads(capsys.readouterr().out)["peaks"]
    assert all(p["reference"] == "exact" for p in peaks)


def test_fit_rejects_single_gas_parameter(tmp_path):
    path = tmp_path / "sweep.csv"
    synthetic_sweep(path, [(100, 0.02), (200, 0.02)])
    assert main(["fit", str(path), "--kind", "linear-3d"]) == EXIT_CONFIG


def test_fit_refuses_mixed_configs(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    synthetic_sweep(a, [(100, 0.01), (100, 0.015)], config_hash="aaa")
    synthetic_sweep(b, [(100, 0.02)], config_hash="bbb")
    assert main(["fit", str(a), str(b), "--kind", "linear-3d"]) == EXIT_CONFIG
    assert main(["fit", str(a), str(b), "--kind", "linear-3d", "--allow-mixed"]) == EXIT_OK


def test_config_temperature_tables():
    base = {"atom_counts": [10], "couplings": [0.0]}
    cfg = ExperimentConfig.from_dict({**base, "temperatures": {"start": 1.0, "stop": 2.0, "num": 3}}, env={})
    assert cfg.temperatures == (1.0, 1.5, 2.0)
    cfg = ExperimentConfig.from_dict({**base, "temperatures": {"auto": True}}, env={})
    assert cfg.auto_grid and cfg.grid_points == 15 and cfg.refine_passes == 0
    with pytest.raises(experiment.ConfigError):
        ExperimentConfig.from_dict({**base, "gas_params": [0.01]}, env={})
