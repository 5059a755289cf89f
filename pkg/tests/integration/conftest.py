"""Integration-test harness: invoke the command-line tool as a real subprocess.

Each test spawns ``python plugins/modules/ucnp_kinetics.py <args>`` from a
fresh interpreter, which exercises argument parsing, the checkout-layout
import fallback, logging setup and exit codes end to end.
"""
from __future__ import annotations

import os
import subprocess
import sys
from pathlib import Path
from typing import Callable

import pytest

REPO_ROOT = Path(__file__).resolve().parents[2]
MODULE_PATH = REPO_ROOT / "plugins" / "modules" / "ucnp_kinetics.py"


@pytest.fixture(scope="session")
def module_path() -> Path:
    """Absolute path to the command-line module under test."""
    assert MODULE_PATH.is_file(), f"module not found at {MODULE_PATH}"
    return MODULE_PATH


@pytest.fixture(scope="session")
def python_executable() -> str:
    """Interpreter that has the numerical stack installed (this pytest's interpreter)."""
    return sys.executable


@pytest.fixture
def invoke_cli(tmp_path: Path, python_executable: str, module_path: Path) -> Callable[..., subprocess.CompletedProcess]:
    """Return a callable running the tool with the given arguments in ``tmp_path``."""

    def _invoke(*args: str, timeout: float = 120) -> subprocess.CompletedProcess:
        env = {k: v for k, v in os.environ.items() if k != "PYTHONPATH"}
        return subprocess.run(
            [python_executable, str(module_path), *args],
            capture_output=True,
            text=True,
            cwd=tmp_path,
            env=env,
            timeout=timeout,
            check=False,
        )

    return _invoke


@pytest.fixture
def scenario_file(tmp_path: Path) -> Path:
    """A short relaxation-only scenario written as YAML."""
    path = tmp_path / "short.yaml"
    path.write_text(
        "scenario:\n"
        "  duration_s: 2.0e-8\n"
        "  snapshot_interval_s: 1.0e-8\n"
        "  physics:\n"
        "    tbr_heating: false\n"
        "    evaporation: true\n"
        "    expansion: false\n"
        "    master_equation: false\n",
        encoding="utf-8",
    )
    return path


def pytest_collection_modifyitems(config: pytest.Config, items: list[pytest.Item]) -> None:
    """Auto-apply the integration marker to everything under tests/integration."""
    for item in items:
        if "tests/integration" in str(item.fspath).replace(os.sep, "/"):
            item.add_marker(pytest.mark.integration)
