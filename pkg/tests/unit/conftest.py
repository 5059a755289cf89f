"""Shared pytest fixtures: import paths, the reference plasma and small scenarios."""
from __future__ import annotations

import copy
import sys
from pathlib import Path
from typing import Any, Callable

import pytest

# Ensure the CLI module and the core package are importable without packaging.
_PLUGINS = Path(__file__).resolve().parents[2] / "plugins"
for _path in (_PLUGINS / "modules", _PLUGINS / "module_utils"):
    if str(_path) not in sys.path:
        sys.path.insert(0, str(_path))

from ucnp_core.config import DEFAULTS, Scenario, deep_merge  # noqa: E402
from ucnp_core.king_equilibrium import KingEquilibrium, solve_selfconsistent  # noqa: E402
from ucnp_core.orbit_space import PhaseGeometry, PotentialProfile, build_geometry  # noqa: E402
from ucnp_core.plasma_params import PlasmaSpec  # noqa: E402

# Small grids keep the solver-backed tests fast.
SMALL_NUMERICS: dict[str, Any] = {
    "n_energy": 40,
    "n_radial": 200,
    "n_shells": 60,
    "n_bound": 30,
    "king_tol": 1e-6,
    "recouple_tol": 1e-4,
}


@pytest.fixture
def spec() -> PlasmaSpec:
    """Cesium cloud with 250000 ions and 230000 electrons at sigma = 250 um."""
    return PlasmaSpec.reference_regime()


@pytest.fixture(scope="session")
def king_eq() -> KingEquilibrium:
    """The reference King equilibrium at eta = 7, solved once per session."""
    return solve_selfconsistent(PlasmaSpec.reference_regime(), 7.0, n_grid=400, tol=1e-6)


@pytest.fixture(scope="session")
def square_geometry() -> PhaseGeometry:
    """Square well of unit radius and unit depth on 201 energy nodes."""
    return build_geometry(PotentialProfile.square_well(1.0, 1.0), 201)


@pytest.fixture
def base_config() -> dict[str, Any]:
    """Default configuration with the small numerical grids."""
    return deep_merge(copy.deepcopy(DEFAULTS), {"numerics": SMALL_NUMERICS})


@pytest.fixture
def make_scenario(base_config: dict[str, Any]) -> Callable[..., Scenario]:
    """Return a callable building a scenario from the small config plus an override."""

    def _make(override: dict[str, Any] | None = None) -> Scenario:
        return Scenario.from_config(deep_merge(base_config, override or {}))

    return _make
