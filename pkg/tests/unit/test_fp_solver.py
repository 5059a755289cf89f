"""Unit tests for the orbit-averaged Fokker-Planck solver."""
from __future__ import annotations

import math

import numpy as np
import pytest

from ucnp_core.errors import ContractViolationError, InvalidInputError
from ucnp_core.fp_solver import (
    FOUR_PI,
    EnergyDistribution,
    VelocityDistribution,
    collision_step,
    ejection_rate,
    energy_moment,
    escape_density_profile,
    evaporation_rate,
    flux,
    h_functional,
    kramers_limit_check,
    maxwellian,
    mean_temperature,
    poisson_recouple,
    stationary_solve,
    total_number,
    velocity_space_step,
)
from ucnp_core.ion_cloud import GaussianCloud
from ucnp_core.king_equilibrium import KingEquilibrium, KingParams, king_f_of_E
from ucnp_core.orbit_space import PhaseGeometry, PotentialProfile, build_geometry
from ucnp_core.plasma_params import K_B, M_E, derive_params

# beta (E_t - E0) = 40 for the unit square well
DEEP_T = M_E / (40.0 * K_B)


@pytest.fixture
def deep_maxwellian(square_geometry: PhaseGeometry) -> EnergyDistribution:
    return maxwellian(square_geometry, DEEP_T, 1.0)


@pytest.fixture
def bump(square_geometry: PhaseGeometry) -> EnergyDistribution:
    """A non-equilibrium distribution that vanishes at E_t."""
    return EnergyDistribution.from_function(square_geometry, lambda E: np.clip(1.0 - E, 0.0, None) ** 2 * (1.0 + 4.0 * E))


def test_maxwellian_holds_its_electrons(deep_maxwellian: EnergyDistribution) -> None:
    assert total_number(deep_maxwellian) == pytest.approx(1.0)
    assert mean_temperature(deep_maxwellian) == pytest.approx(DEEP_T, rel=5e-2)


def test_maxwellian_carries_no_interior_flux(deep_maxwellian: EnergyDistribution) -> None:
    fp = flux(deep_maxwellian)

    # each of the two flux terms is O(10) here
    assert fp.Pi[0] == 0.0
    assert np.max(np.abs(fp.Pi[1:-1])) < 1e-10
    interior = np.isfinite(fp.T_G)
    np.testing.assert_allclose(fp.T_G[interior][:50], DEEP_T, rtol=1e-10)


def test_maxwellian_is_a_fixed_point(deep_maxwellian: EnergyDistribution) -> None:
    dist = deep_maxwellian
    for _ in range(20):
        dist = collision_step(dist, 1e-5, 1.0)

    drift = np.max(np.abs(dist.f - deep_maxwellian.f)) / np.max(deep_maxwellian.f)
    assert drift < 1e-8
    assert dist.t == pytest.approx(20 * 1e-5)


def test_collision_step_conserves_number_with_losses(bump: EnergyDistribution) -> None:
    dist = bump
    for _ in range(5):
        dist = collision_step(dist, 1e-6, 1.0)

    assert dist.evaporated > 0
    assert total_number(dist) + dist.evaporated == pytest.approx(total_number(bump), rel=1e-10)
    assert np.all(dist.f >= 0)


def test_heating_source_without_relaxation_is_lossless(bump: EnergyDistribution) -> None:
    source = np.full(bump.E.size, 1e3)

    heated = collision_step(bump, 1e-6, 0.0, source=source)

    assert heated.evaporated == 0.0
    assert total_number(heated) == pytest.approx(total_number(bump), rel=1e-10)
    assert mean_temperature(heated) > mean_temperature(bump)


def test_zero_step_returns_the_input(bump: EnergyDistribution) -> None:
    assert collision_step(bump, 0.0, 1.0) is bump


def test_negative_step_rejected(bump: EnergyDistribution) -> None:
    with pytest.raises(InvalidInputError, match="dt must be nonnegative"):
        collision_step(bump, -1.0, 1.0)


def test_source_on_the_wrong_grid_rejected(bump: EnergyDistribution) -> None:
    with pytest.raises(InvalidInputError, match="every energy node"):
        collision_step(bump, 1e-6, 1.0, source=np.ones(3))


def test_evaporation_rate_equals_the_boundary_flux(bump: EnergyDistribution) -> None:
    rate = evaporation_rate(bump, 2.0)

    assert rate < 0
    assert rate == pytest.approx(flux(bump, 2.0).Pi[-1], rel=1e-12)
    assert evaporation_rate(bump, 2.0, prefactor=FOUR_PI) == pytest.approx(
        flux(bump, 2.0, prefactor=FOUR_PI).Pi[-1], rel=1e-12
    )


def test_evaporation_rate_matches_the_step_losses(bump: EnergyDistribution) -> None:
    dt = 1e-9

    stepped = collision_step(bump, dt, 2.0)

    assert stepped.evaporated == pytest.approx(-evaporation_rate(bump, 2.0) * dt, rel=1e-4)


def test_evaporation_rate_scales_with_gamma(bump: EnergyDistribution) -> None:
    assert evaporation_rate(bump, 4.0) == pytest.approx(2.0 * evaporation_rate(bump, 2.0), rel=1e-12)


def test_evaporation_needs_an_empty_boundary(square_geometry: PhaseGeometry) -> None:
    dist = EnergyDistribution.from_function(square_geometry, lambda E: np.exp(-E))

    with pytest.raises(ContractViolationError, match="f\\(E_t\\) = 0"):
        evaporation_rate(dist, 1.0)


def test_empty_distribution_ejects_nothing(square_geometry: PhaseGeometry) -> None:
    empty = EnergyDistribution.from_function(square_geometry, np.zeros_like)

    assert ejection_rate(empty) == 0.0


def test_ejection_is_quadratic_in_f(bump: EnergyDistribution) -> None:
    rate = ejection_rate(bump)

    assert rate < 0
    assert ejection_rate(bump.with_f(2.0 * bump.f)) == pytest.approx(4.0 * rate, rel=1e-9)


def _king_rates(king_eq: KingEquilibrium) -> tuple[EnergyDistribution, float, float]:
    dist = EnergyDistribution.from_king(king_eq, 120)
    cloud = GaussianCloud.from_spec(king_eq.spec)
    derived = derive_params(king_eq.spec, king_eq.params.n_e0, density_n_i0=cloud.central_density())
    return dist, evaporation_rate(dist, derived.gamma_coeff), derived.t_e


def test_king_state_loses_less_by_ejection_than_by_evaporation(king_eq: KingEquilibrium) -> None:
    dist, evaporation, _ = _king_rates(king_eq)

    assert abs(ejection_rate(dist, king_eq.spec.electron)) < 0.5 * abs(evaporation)


def test_king_state_evaporates_about_one_percent_per_relaxation_time(king_eq: KingEquilibrium) -> None:
    dist, evaporation, t_e = _king_rates(king_eq)

    fraction = abs(evaporation) / total_number(dist)
    assert 1.0 / 3.0 < fraction * 100.0 * t_e < 3.0


def test_negative_distribution_rejected(square_geometry: PhaseGeometry) -> None:
    with pytest.raises(InvalidInputError, match="nonnegative"):
        EnergyDistribution(geometry=square_geometry, f=-np.ones(square_geometry.E.size - 1))


def test_king_state_passes_the_kramers_check() -> None:
    s2 = K_B * 50.0 / M_E
    params = KingParams(eta=7.0, T_K=50.0, n_e0=1e15, E_t=0.0, r_t=1e-2, E0=-7.0 * s2, electron_mass=M_E)
    E = np.linspace(params.E0, params.E_t, 200)

    assert kramers_limit_check(E, king_f_of_E(params, E), 50.0) < 1e-10


def test_kramers_check_flags_a_power_law() -> None:
    s2 = K_B * 50.0 / M_E
    E = np.linspace(0.0, 10.0 * s2, 200)
    f = (1.0 + (E / s2)) ** -3

    assert kramers_limit_check(E, f, 50.0) > 1e-3


def test_homogeneous_stationary_solution_is_maxwellian(square_geometry: PhaseGeometry) -> None:
    seed = lambda E: np.exp(-10.0 * E)  # noqa: E731

    sol = stationary_solve(square_geometry, 0.0, seed)

    E = square_geometry.E
    ratio = sol.f_nodes / np.exp(-10.0 * E)
    inside = E <= 0.8
    assert np.max(ratio[inside]) / np.min(ratio[inside]) - 1.0 < 1e-2
    expected = float(np.sum(np.diff(square_geometry.tau) * 0.5 * (seed(E)[1:] + seed(E)[:-1])))
    assert total_number(sol.dist) == pytest.approx(expected, rel=1e-12)
    assert sol.divergent is False


def test_outward_flux_without_source_diverges(square_geometry: PhaseGeometry) -> None:
    sol = stationary_solve(square_geometry, 1.0, lambda E: np.exp(-10.0 * E))

    assert sol.divergent is True
    assert sol.f_nodes[-1] == 0.0
    assert np.all(sol.f_nodes >= 0)


def test_negative_flux_rejected(square_geometry: PhaseGeometry) -> None:
    with pytest.raises(InvalidInputError, match="magnitude"):
        stationary_solve(square_geometry, -1.0, lambda E: np.exp(-E))


def test_velocity_and_energy_moments_agree(square_geometry: PhaseGeometry) -> None:
    s = 0.15
    dist = EnergyDistribution.from_function(square_geometry, lambda E: np.exp(-E / s**2))
    edges = np.linspace(0.0, math.sqrt(2.0), 301)
    centers = 0.5 * (edges[1:] + edges[:-1])
    vd = VelocityDistribution(v_edges=edges, f=np.exp(-(centers**2) / (2.0 * s**2)), volume=4.0 * math.pi / 3.0)

    for k in (0, 1, 2):
        assert vd.moment(k) == pytest.approx(energy_moment(dist, k), rel=1e-2)


def test_escape_density_falls_off_as_inverse_square() -> None:
    n = escape_density_profile(-1e6, np.array([1e-3, 2e-3]), np.array([1e4, 1e4]))

    assert n[0] == pytest.approx(4.0 * n[1])
    with pytest.raises(InvalidInputError):
        escape_density_profile(1.0, np.array([0.0]), np.array([1.0]))


def test_recouple_keeps_the_king_state(king_eq: KingEquilibrium) -> None:
    dist = EnergyDistribution.from_king(king_eq, 80)
    cloud = GaussianCloud.from_spec(king_eq.spec)
    profile = dist.geometry.profile

    new_profile, remapped = poisson_recouple(dist, cloud, tol=1e-4, max_iter=50)

    depth = profile.E_t - profile.E0
    assert np.max(np.abs(new_profile.phi - profile.phi)) / depth < 0.05
    assert total_number(remapped) + remapped.evaporated == pytest.approx(total_number(dist), rel=1e-9)


def test_h_functional_of_a_constant(square_geometry: PhaseGeometry) -> None:
    dist = EnergyDistribution.from_function(square_geometry, lambda E: np.full_like(E, math.e))

    assert h_functional(dist) == pytest.approx(math.e * square_geometry.tau[-1])


def test_bath_on_another_grid_rejected(bump: EnergyDistribution) -> None:
    other = build_geometry(PotentialProfile.square_well(1.0, 1.0), 11)

    with pytest.raises(InvalidInputError, match="bath must share"):
        collision_step(bump, 1e-6, 1.0, bath=maxwellian(other, DEEP_T, 1.0))


def test_bath_holds_its_own_maxwellian(deep_maxwellian: EnergyDistribution) -> None:
    relaxed = collision_step(deep_maxwellian, 1e-4, 1.0, bath=deep_maxwellian)

    np.testing.assert_allclose(relaxed.f, deep_maxwellian.f, rtol=1e-8, atol=1e-12 * np.max(deep_maxwellian.f))


def test_velocity_space_step_keeps_a_maxwellian() -> None:
    s = 0.15
    edges = np.linspace(0.0, 1.0, 81)
    centers = 0.5 * (edges[1:] + edges[:-1])
    vd = VelocityDistribution(v_edges=edges, f=np.exp(-(centers**2) / (2.0 * s**2)), volume=1.0)

    relaxed = velocity_space_step(vd, 2.0, 1.0)

    assert relaxed.t == pytest.approx(2.0)
    assert np.all(relaxed.f >= 0)
    assert relaxed.moment(0) <= vd.moment(0) * (1.0 + 1e-12)
    assert relaxed.moment(0) == pytest.approx(vd.moment(0), rel=1e-3)
    temperature = relaxed.moment(1) / relaxed.moment(0)
    assert temperature == pytest.approx(vd.moment(1) / vd.moment(0), rel=5e-2)
