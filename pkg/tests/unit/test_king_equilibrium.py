"""Unit tests for the self-consistent King equilibrium."""
from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import integrate

from ucnp_core.errors import InvalidInputError
from ucnp_core.king_equilibrium import (
    KingEquilibrium,
    KingParams,
    density_ratio,
    king_F,
    king_f_of_E,
    maxwellian_comparison,
    mean_temperature,
    solve_selfconsistent,
    temp_from_counts,
    temperature_ratio,
)
from ucnp_core.plasma_params import K_B, M_E, PlasmaSpec


def test_king_F_closed_form() -> None:
    x = 2.0
    expected = math.exp(x) * math.erf(math.sqrt(x)) - math.sqrt(4.0 * x / math.pi) * (1.0 + 2.0 * x / 3.0)

    assert king_F(x) == pytest.approx(expected, rel=1e-10)
    assert king_F(0.0) == 0.0


def test_king_F_rejects_negative_depth() -> None:
    with pytest.raises(InvalidInputError):
        king_F(-0.1)


def test_density_ratio_is_one_at_the_centre() -> None:
    assert float(density_ratio(7.0, 7.0)) == pytest.approx(1.0)
    assert float(density_ratio(-1.0, 7.0)) == 0.0


def test_king_distribution_vanishes_at_the_tidal_energy() -> None:
    params = KingParams(eta=7.0, T_K=50.0, n_e0=1e15, E_t=0.0, r_t=1e-2, E0=-7.0 * K_B * 50.0 / M_E, electron_mass=M_E)

    assert king_f_of_E(params, params.E_t) == 0.0
    assert king_f_of_E(params, 1.0) == 0.0
    assert king_f_of_E(params, params.E0) > 0


def test_amplitude_reproduces_the_central_density() -> None:
    params = KingParams(eta=7.0, T_K=50.0, n_e0=1e15, E_t=0.0, r_t=1e-2, E0=-7.0 * K_B * 50.0 / M_E, electron_mass=M_E)
    v_max = math.sqrt(2.0 * (params.E_t - params.E0))

    density = integrate.quad(
        lambda v: 4.0 * math.pi * v**2 * king_f_of_E(params, params.E0 + 0.5 * v**2), 0.0, v_max
    )[0]

    assert density == pytest.approx(params.n_e0, rel=1e-6)


def test_king_params_validation() -> None:
    with pytest.raises(InvalidInputError, match="KingParams need"):
        KingParams(eta=0.0, T_K=50.0, n_e0=1e15, E_t=0.0, r_t=1e-2, E0=-1.0, electron_mass=M_E)


def test_temperature_ratio_deep_in_the_well() -> None:
    # deep in the well the distribution is Maxwellian at T_K
    assert float(temperature_ratio(30.0)) == pytest.approx(1.0, rel=1e-2)
    assert float(temperature_ratio(1.0)) < 1.0


def test_temp_from_counts_reference_value() -> None:
    assert temp_from_counts(250_000, 230_000, 250e-6, 7.0) == pytest.approx(112.25, rel=1e-3)


@pytest.mark.parametrize("eta", [2.0, 1.0])
def test_temp_from_counts_needs_deep_well(eta: float) -> None:
    with pytest.raises(InvalidInputError, match="eta > 2"):
        temp_from_counts(250_000, 230_000, 250e-6, eta)


def test_equilibrium_holds_the_electrons(king_eq: KingEquilibrium) -> None:
    assert king_eq.N_e_computed == pytest.approx(230_000, rel=1e-3)
    assert king_eq.eta_t_profile[0] == pytest.approx(7.0, abs=1e-4)
    assert king_eq.eta_t_profile[-1] == pytest.approx(0.0, abs=1e-4)
    assert king_eq.params.n_e0 < king_eq.spec.central_ion_density


def test_equilibrium_potential_is_confining(king_eq: KingEquilibrium) -> None:
    assert np.all(np.diff(king_eq.potential) >= 0)
    assert king_eq.potential[-1] == pytest.approx(king_eq.params.E_t)


def test_equilibrium_temperature_near_closed_form(king_eq: KingEquilibrium) -> None:
    estimate = temp_from_counts(250_000, 230_000, 250e-6, 7.0)

    assert king_eq.params.T_K == pytest.approx(estimate, rel=0.2)
    assert 0 < mean_temperature(king_eq) < king_eq.params.T_K


def test_equilibrium_profiles_and_summary(king_eq: KingEquilibrium) -> None:
    frame = king_eq.profiles()
    summary = king_eq.summary()

    assert list(frame.columns) == ["r", "eta_t", "n_e", "n_i", "T_e"]
    assert summary["eta"] == 7.0
    assert summary["r_t"] == pytest.approx(12.0 * 250e-6)


def test_speed_distribution_is_normalized(king_eq: KingEquilibrium) -> None:
    frame = maxwellian_comparison(king_eq)
    numeric = frame.select_dtypes("number")

    assert frame["king"].iloc[-1] == pytest.approx(1.0)
    assert frame["maxwellian"].iloc[-1] > 1.0
    assert np.all(np.isfinite(numeric.to_numpy()))


def test_neutral_cloud_has_no_equilibrium() -> None:
    neutral = PlasmaSpec(N_i=1e5, N_e=1e5, sigma=1e-4, T_e=50.0, T_e_gamma=50.0)

    with pytest.raises(InvalidInputError, match="N_i > N_e"):
        solve_selfconsistent(neutral)


@pytest.mark.parametrize("eta", [0.5, 30.0])
def test_trap_depth_range(spec: PlasmaSpec, eta: float) -> None:
    with pytest.raises(InvalidInputError, match="eta must lie"):
        solve_selfconsistent(spec, eta)
