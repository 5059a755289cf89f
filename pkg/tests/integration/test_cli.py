"""End-to-end tests: run the command-line tool as a subprocess."""
from __future__ import annotations

import json
from pathlib import Path

import pandas as pd

# Small grids keep the solver-backed commands under the timeout.
SMALL_GRIDS = (
    "--set", "numerics.n_radial=200",
    "--set", "numerics.n_energy=40",
    "--set", "numerics.king_tol=1.0e-6",
)


def test_params_prints_derived_scales(invoke_cli) -> None:
    proc = invoke_cli("params")

    assert proc.returncode == 0, proc.stderr
    payload = json.loads(proc.stdout)
    assert payload["N_star"] > 0
    assert payload["t_CE"] > 0


def test_seed_and_override_reach_the_config(invoke_cli, tmp_path: Path) -> None:
    proc = invoke_cli("--seed", "5", "--set", "plasma.sigma_m=3.0e-4", "--out", str(tmp_path / "p"), "params")

    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "p" / "params.json").is_file()


def test_unknown_figure_exits_2(invoke_cli) -> None:
    proc = invoke_cli("reproduce", "fig9")

    assert proc.returncode == 2
    assert "Unknown figure" in proc.stderr


def test_invalid_config_exits_2(invoke_cli, tmp_path: Path) -> None:
    bad = tmp_path / "bad.yaml"
    bad.write_text("plasma:\n  N_i: -5\n", encoding="utf-8")

    proc = invoke_cli("--config", str(bad), "params")

    assert proc.returncode == 2
    assert "Schema validation failed" in proc.stderr


def test_argparse_rejects_unknown_command(invoke_cli) -> None:
    assert invoke_cli("launch").returncode != 0


def test_evolve_streams_snapshots(invoke_cli, scenario_file: Path, tmp_path: Path) -> None:
    out = tmp_path / "run"

    proc = invoke_cli(*SMALL_GRIDS, "--config", str(scenario_file), "-v", "evolve", "--out", str(out))

    assert proc.returncode == 0, proc.stderr
    snapshots = pd.read_csv(out / "snapshots.csv")
    assert len(snapshots) == 3
    assert (out / "profile_0002.csv").is_file()
    summary = json.loads((out / "run.json").read_text())
    assert summary["config"]["scenario"]["duration_s"] == 2.0e-8
    assert "snapshot" in proc.stderr


def test_reproduce_writes_datasets(invoke_cli, tmp_path: Path) -> None:
    out = tmp_path / "fig"

    proc = invoke_cli("--format", "json", "--out", str(out), "reproduce", "nb_ion")

    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.strip() == str(out / "nb_ion.json")
    assert len(json.loads((out / "nb_ion.json").read_text())) == 60


def test_sweep_runs_every_variant(invoke_cli, tmp_path: Path) -> None:
    out = tmp_path / "sweep"

    proc = invoke_cli(
        *SMALL_GRIDS,
        "--out", str(out),
        "sweep",
        "--variant", "scenario.eta0=6.0",
        "--variant", "scenario.eta0=8.0;seed=2",
    )

    assert proc.returncode == 0, proc.stderr
    index = pd.read_csv(out / "sweep.csv")
    assert len(index) == 2
    assert index["error"].isna().all()
