"""Unit tests for three-body recombination rates, heating and the bound-state master equation."""
from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import integrate

from ucnp_core.errors import DivergenceError, FitError, InvalidInputError, StepSizeError
from ucnp_core.fp_solver import EnergyDistribution
from ucnp_core.king_equilibrium import KingEquilibrium
from ucnp_core.orbit_space import PhaseGeometry
from ucnp_core.plasma_params import K_B, M_E
from ucnp_core.tbr import (
    BOTTLENECK_FACTOR,
    BoundState,
    bottleneck_energy,
    cluster_heating_rate,
    fit_rydberg_distribution,
    fp_source_term,
    free_electron_state,
    heating_prefactor_ratio,
    heating_rate,
    ionization_rate,
    kernel_drift,
    master_equation_step,
    mk_kernel,
    radial_heating,
    rate_prefactor,
    rate_table,
    sample_rydberg,
    tbr_rate,
    tbr_state,
    transition_totals,
)


def test_rate_prefactor_reference_value() -> None:
    assert rate_prefactor(50.0) == pytest.approx(3.38e-8, rel=1e-2)


def test_tbr_rate_temperature_scaling() -> None:
    ratio = tbr_rate(1e15, 1e15, 25.0) / tbr_rate(1e15, 1e15, 50.0)

    assert ratio == pytest.approx(2.0**4.5)


def test_tbr_rate_diverges_at_zero_temperature() -> None:
    with pytest.raises(DivergenceError, match="diverges"):
        tbr_rate(1e15, 1e15, 0.0)


def test_tbr_rate_rejects_negative_density() -> None:
    with pytest.raises(InvalidInputError):
        tbr_rate(-1.0, 1e15, 50.0)


def test_kernel_satisfies_detailed_balance() -> None:
    def weight(b: float) -> float:
        return b**-2.5 * math.exp(b)

    down = mk_kernel(-2.0, -4.0, 50.0)
    up = mk_kernel(-4.0, -2.0, 50.0)

    assert down * weight(2.0) == pytest.approx(up * weight(4.0), rel=1e-12)


def test_kernel_is_continuous_on_the_diagonal() -> None:
    b = 3.0
    below = mk_kernel(-b, -b * (1.0 - 1e-9), 50.0)
    above = mk_kernel(-b, -b * (1.0 + 1e-9), 50.0)

    assert below == pytest.approx(above, rel=1e-6)
    assert mk_kernel(-b, -b, 50.0) == pytest.approx(above, rel=1e-6)


def test_kernel_rejects_free_states() -> None:
    with pytest.raises(InvalidInputError, match="negative"):
        mk_kernel(1.0, -2.0, 50.0)


def test_transition_totals_closed_form() -> None:
    b = 3.83
    down, up = transition_totals(-b)

    assert down == pytest.approx(b**-1.33 / 3.83, rel=1e-6)
    assert up == pytest.approx(b**-2.33, rel=1e-6)
    assert down == pytest.approx(up, rel=1e-6)


def test_drift_changes_sign_near_the_bottleneck() -> None:
    assert kernel_drift(-3.0) < 0 < kernel_drift(-5.0)
    assert kernel_drift(-2.0) == pytest.approx(0.09226 * 2.0**-0.33 - 2.0**-2.33, rel=1e-3)


def test_bottleneck_energy() -> None:
    assert bottleneck_energy(50.0) == pytest.approx(BOTTLENECK_FACTOR * K_B * 50.0)


def test_heating_rate_at_reference_conditions() -> None:
    assert heating_rate(1e15, 3e-6, 2.0, 50.0) == pytest.approx(5.4 * 2.0 * K_B * 50.0)
    assert heating_rate(1e15, 3e-6, 0.0, 50.0) == 0.0


def test_tbr_state_collects_the_rates() -> None:
    state = tbr_state(1e15, 1e15, 50.0, 3e-6)

    assert state.rate == pytest.approx(tbr_rate(1e15, 1e15, 50.0))
    assert state.heating == pytest.approx(5.4 * state.rate * K_B * 50.0)
    assert state.epsilon_star > 0


def test_rate_table_columns() -> None:
    table = rate_table([10.0, 50.0], 1e15, 1e15, 3e-6)

    assert list(table.columns) == ["T_e", "rate", "heating", "bottleneck_energy", "epsilon_star"]
    assert table["rate"].iloc[0] > table["rate"].iloc[1]


@pytest.mark.parametrize("weighting", ["density", "uniform"])
def test_radial_heating_keeps_the_mean(weighting: str) -> None:
    r = np.linspace(0.0, 1e-3, 300)
    n_e = 1e15 * np.exp(-0.5 * (r / 2.5e-4) ** 2)
    n_i = 1.1 * n_e

    _, edot = radial_heating(1e-24, r, n_e, n_i, weighting)

    mean = integrate.trapezoid(n_e * edot * r**2, r) / integrate.trapezoid(n_e * r**2, r)
    assert mean == pytest.approx(1e-24 / M_E, rel=1e-12)


def test_radial_heating_rejects_unknown_weighting() -> None:
    r = np.linspace(0.0, 1.0, 5)

    with pytest.raises(InvalidInputError, match="Unknown heating weighting"):
        radial_heating(1.0, r, r, r, "bogus")


def test_constant_heating_source(square_geometry: PhaseGeometry) -> None:
    source = fp_source_term(square_geometry, 2.0)

    assert source[0] == 0.0
    np.testing.assert_allclose(source[1:], 2.0 * square_geometry.dtau_dE[1:], rtol=1e-7)


def test_zero_heating_source(square_geometry: PhaseGeometry) -> None:
    dist = EnergyDistribution.from_function(square_geometry, lambda E: np.ones_like(E))

    assert not np.any(fp_source_term(dist, 0.0))


def test_master_equation_conserves_probability() -> None:
    b = BoundState.grid(50)
    population = np.where(np.arange(b.size) == 20, 1.0, 0.0)
    state = BoundState(b=b, population=population)

    evolved = master_equation_step(state, 1e15, 1e-8, 50.0)

    assert evolved.total + evolved.ionized == pytest.approx(1.0, rel=1e-12)
    assert np.all(evolved.population >= 0)
    assert evolved.t == pytest.approx(1e-8)
    assert evolved.mean_binding != pytest.approx(b[20])


def test_master_equation_step_limit() -> None:
    b = BoundState.grid(20)
    state = BoundState(b=b, population=np.ones_like(b))

    with pytest.raises(StepSizeError, match="sub-steps"):
        master_equation_step(state, 1e15, 1e-6, 50.0, max_substeps=1)


def test_master_equation_zero_step() -> None:
    state = BoundState(b=BoundState.grid(10), population=np.ones(10))

    assert master_equation_step(state, 1e15, 0.0, 50.0) is state


def test_master_equation_takes_the_free_distribution(king_eq: KingEquilibrium) -> None:
    free = EnergyDistribution.from_king(king_eq, 80)
    state = BoundState(b=BoundState.grid(30), population=np.ones(30))
    n_e, T_e = free_electron_state(free)

    evolved = master_equation_step(state, free, 1e-9)

    assert n_e == pytest.approx(king_eq.params.n_e0, rel=5e-2)
    np.testing.assert_allclose(evolved.population, master_equation_step(state, n_e, 1e-9, T_e).population, rtol=1e-12)


def test_master_equation_needs_a_temperature_for_a_density() -> None:
    state = BoundState(b=BoundState.grid(10), population=np.ones(10))

    with pytest.raises(InvalidInputError, match="T_e is required"):
        master_equation_step(state, 1e15, 1e-9)


def test_rydberg_fit_recovers_parameters() -> None:
    rng = np.random.default_rng(7)
    samples = sample_rydberg(1.5, 40.0, 200_000, rng)

    fit = fit_rydberg_distribution(samples)

    assert fit.alpha == pytest.approx(1.5, abs=0.15)
    assert fit.T_Ryd == pytest.approx(40.0, rel=0.15)


def test_rydberg_fit_needs_samples() -> None:
    with pytest.raises(FitError, match="at least 50"):
        fit_rydberg_distribution(np.ones(10))


def test_ionization_is_the_continuum_share_of_excitation() -> None:
    b = 2.0
    _, up_all = transition_totals(-b)
    _, up_bound = transition_totals(-b, include_continuum=False)

    expected = (up_all - up_bound) * 1e15 * rate_prefactor(50.0)
    assert ionization_rate(-b, 50.0, n_e=1e15) == pytest.approx(expected, rel=1e-6)


def test_plasma_heating_is_weaker_than_the_cluster_analog() -> None:
    assert heating_prefactor_ratio() == pytest.approx(0.054)
    assert cluster_heating_rate(2.0, 3.0, 5.0) == pytest.approx(100.0 * 2.0 * 3.0 * 25.0)
