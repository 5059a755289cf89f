"""Unit tests for potential profiles, phase volumes and the Abel/Eddington pair."""
from __future__ import annotations

import math

import numpy as np
import pytest

from ucnp_core.errors import InvalidInputError, NonConfiningError
from ucnp_core.ion_cloud import GaussianCloud
from ucnp_core.king_equilibrium import KingEquilibrium, king_f_of_E
from ucnp_core.orbit_space import (
    PhaseGeometry,
    PotentialProfile,
    build_geometry,
    density_from_distribution,
    eddington_invert,
    fit_q_gauss_scale,
    phase_volume,
    q_gauss_approx,
    q_gauss_deviation,
    total_potential,
)


@pytest.fixture(scope="module")
def harmonic() -> PotentialProfile:
    """Phi = r^2 / 2 out to r = 1."""
    return PotentialProfile.from_function(lambda r: 0.5 * r**2, r_t=1.0, n=2000)


@pytest.mark.parametrize("E", [0.05, 0.2, 0.45])
def test_harmonic_phase_volume(harmonic: PotentialProfile, E: float) -> None:
    q, dq = phase_volume(harmonic, E)

    assert q == pytest.approx(math.pi * E**3 / 12.0, rel=1e-4)
    assert dq == pytest.approx(math.pi * E**2 / 4.0, rel=1e-4)


@pytest.mark.parametrize("E", [0.1, 0.5, 1.0])
def test_square_well_phase_volume(E: float) -> None:
    well = PotentialProfile.square_well(r_t=2.0, E_t=1.0)

    q, dq = phase_volume(well, E)

    assert q == pytest.approx((2.0 * E) ** 1.5 * 8.0 / 9.0, rel=1e-8)
    assert dq == pytest.approx((2.0 * E) ** 0.5 * 8.0 / 3.0, rel=1e-8)


def test_phase_volume_vanishes_at_the_floor(harmonic: PotentialProfile) -> None:
    assert phase_volume(harmonic, 0.0) == (0.0, 0.0)


def test_phase_volume_outside_the_well_rejected(harmonic: PotentialProfile) -> None:
    with pytest.raises(InvalidInputError, match="E must lie"):
        phase_volume(harmonic, 0.6)


def test_geometry_is_monotone(square_geometry: PhaseGeometry) -> None:
    assert square_geometry.tau[0] == 0.0
    assert np.all(np.diff(square_geometry.tau) > 0)
    np.testing.assert_allclose(square_geometry.tau, 16.0 * math.pi**2 * square_geometry.q)


def test_non_monotone_potential_rejected() -> None:
    r = np.linspace(0.0, 1.0, 5)

    with pytest.raises(InvalidInputError, match="confining"):
        PotentialProfile(r=r, phi=np.array([0.0, 1.0, 0.5, 2.0, 3.0]))


def test_tidal_energy_below_the_rim_rejected() -> None:
    with pytest.raises(InvalidInputError, match="lies below"):
        PotentialProfile(r=np.array([0.0, 1.0]), phi=np.array([0.0, 1.0]), E_t=0.5)


def test_turning_radius_inverts_the_potential(harmonic: PotentialProfile) -> None:
    assert float(harmonic.radius_at(0.125)) == pytest.approx(0.5, rel=1e-6)
    assert float(harmonic.radius_at(2.0)) == harmonic.r_t


def test_maxwellian_density_from_distribution() -> None:
    s2 = 1.0
    phi = np.array([0.0, 1.0, 2.0])

    n = density_from_distribution(phi, lambda E: np.exp(-E / s2), E_t=40.0)

    np.testing.assert_allclose(n, (2.0 * math.pi * s2) ** 1.5 * np.exp(-phi / s2), rtol=1e-6)


def test_density_vanishes_at_the_rim() -> None:
    n = density_from_distribution(np.array([1.0]), lambda E: np.ones_like(E), E_t=1.0)

    assert n[0] == 0.0


def test_eddington_recovers_an_exponential() -> None:
    phi = np.linspace(0.0, 25.0, 1000)
    rho = (2.0 * math.pi) ** 1.5 * np.exp(-phi)
    E = np.linspace(0.5, 5.0, 400)

    _, f = eddington_invert(phi, rho, E)

    np.testing.assert_allclose(f, np.exp(-E), rtol=2e-2)


def test_eddington_rejects_rising_density() -> None:
    phi = np.linspace(0.0, 1.0, 10)

    with pytest.raises(InvalidInputError, match="non-monotone"):
        eddington_invert(phi, phi.copy())


def test_king_distribution_reproduces_its_density(king_eq: KingEquilibrium) -> None:
    params = king_eq.params

    n = density_from_distribution(king_eq.potential, lambda E: king_f_of_E(params, E), params.E_t)

    np.testing.assert_allclose(n, king_eq.n_e_profile, rtol=1e-6, atol=1e-9 * params.n_e0)


def test_total_potential_detects_runaway_electrons() -> None:
    cloud = GaussianCloud(N_i=1000.0, N_e=0.0, sigma0=1e-4)
    r = np.linspace(0.0, 1e-3, 200)

    with pytest.raises(NonConfiningError):
        total_potential(cloud, r, np.full_like(r, 1e20))


def test_total_potential_of_bare_ions_is_confining() -> None:
    cloud = GaussianCloud(N_i=1000.0, N_e=0.0, sigma0=1e-4)
    r = np.linspace(0.0, 1e-3, 200)

    profile = total_potential(cloud, r, np.zeros_like(r))

    assert np.all(np.diff(profile.phi) > 0)
    assert profile.E_t == profile.phi[-1]


def test_quartic_approximation_is_calibrated_at_mid_energy(king_eq: KingEquilibrium) -> None:
    profile = PotentialProfile.from_king(king_eq)
    mid = 0.5 * (profile.E0 + profile.E_t)

    scale = fit_q_gauss_scale(profile)

    assert q_gauss_approx(mid, profile.E0, profile.E_t, scale) == pytest.approx(phase_volume(profile, mid)[0])


def test_quartic_deviation_is_reported(king_eq: KingEquilibrium) -> None:
    deviation = q_gauss_deviation(PotentialProfile.from_king(king_eq))

    # the quartic vanishes at E_t, the phase volume does not
    assert deviation == pytest.approx(0.95, abs=0.05)


def test_build_geometry_needs_nodes(harmonic: PotentialProfile) -> None:
    with pytest.raises(InvalidInputError, match="at least 3"):
        build_geometry(harmonic, 2)
