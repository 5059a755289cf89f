"""Datasets behind the standard comparison figures, one factory per figure.

Every factory takes a :class:`~ucnp_core.config.Scenario` and returns named
data frames; :func:`ucnp_core.runner.reproduce_figure` writes them out.
"""
from __future__ import annotations

import logging

import numpy as np
import pandas as pd

from .config import Scenario
from .errors import ConvergenceError
from .extraction import (
    density_from_threshold,
    fit_sigma_expansion,
    locate_threshold,
    population_laws,
    sigma_from_threshold,
    synthetic_scan,
    threshold_field,
)
from .ion_cloud import GaussianCloud, coulomb_explosion_time, evolve_shells, initialize_shells
from .king_equilibrium import KingEquilibrium, maxwellian_comparison, solve_selfconsistent, temp_from_counts
from .plasma_params import PlasmaSpec
from .tbr import BoundState, kernel_drift, master_equation_step, rate_prefactor, transition_totals

logger = logging.getLogger(__name__)

Datasets = dict[str, pd.DataFrame]

SPIKE_TIMES = (0.0, 0.5, 1.0, 2.0)
SIMP_KING_ETAS = (3.0, 5.0, 7.0, 10.0, 15.0)
SIMP_KING_EXCESS = (0.5, 1.0, 2.0)
THR_TEST_TIMES_S = (0.0, 4e-6, 8e-6, 12e-6, 16e-6, 20e-6)


def nb_ion(scenario: Scenario) -> Datasets:
    """Ion excess N_i - N_e against N_i from the population law."""
    spec = scenario.spec
    rows = []
    for N_i in np.geomspace(1e4, 1e7, 60):
        trap, excess = population_laws(float(N_i), spec.sigma, spec.T_e_gamma, scenario.constants)
        rows.append({"N_i": N_i, "N_star": trap, "delta_N": excess, "ratio": excess / N_i})
    return {"nb_ion": pd.DataFrame(rows)}


def spike(scenario: Scenario) -> Datasets:
    """Ion density profiles of the Coulomb explosion at fixed multiples of t_CE."""
    cloud = GaussianCloud.from_spec(scenario.spec)
    t_ce = coulomb_explosion_time(cloud)
    ensemble = initialize_shells(cloud, scenario.numerics.n_shells)
    frames = []
    for multiple in SPIKE_TIMES:
        moved = evolve_shells(ensemble, multiple * t_ce)
        frames.append(moved.profile().assign(t_over_tCE=multiple, spike=moved.spike_detected))
    return {"spike": pd.concat(frames, ignore_index=True)}


def king_vs_mc(scenario: Scenario) -> Datasets:
    """Solved King profiles and the speed distribution against a Maxwellian."""
    eq = _equilibrium(scenario, scenario.spec, scenario.eta0)
    return {
        "king_vs_mc_profiles": eq.profiles(),
        "king_vs_mc_speeds": maxwellian_comparison(eq),
    }


def simp_king(scenario: Scenario) -> Datasets:
    """Numerical T_K against the closed-form estimate over trap depth and ion excess."""
    base = scenario.spec
    rows = []
    for eta in SIMP_KING_ETAS:
        for share in SIMP_KING_EXCESS:
            spec = PlasmaSpec(
                N_i=base.N_e + share * base.delta_N,
                N_e=base.N_e,
                sigma=base.sigma,
                T_e=base.T_e,
                T_e_gamma=base.T_e_gamma,
                ion=base.ion,
            )
            try:
                eq = _equilibrium(scenario, spec, eta, r_t=15.0 * spec.sigma)
            except ConvergenceError as exc:
                logger.warning("simp_king: skipped eta=%s, delta_N=%.4g: %s", eta, spec.delta_N, exc)
                continue
            rows.append(
                {
                    "eta": eta,
                    "N_e": spec.N_e,
                    "delta_N": spec.delta_N,
                    "T_K_numeric": eq.params.T_K,
                    "T_K_simple": temp_from_counts(spec.N_i, spec.N_e, spec.sigma, eta),
                }
            )
    return {"simp_king": pd.DataFrame(rows)}


def thr_test(scenario: Scenario) -> Datasets:
    """Threshold voltages of synthetic scans along the expansion and the sigma they imply."""
    spec = scenario.spec
    cloud = GaussianCloud.from_spec(spec)
    gap = scenario.gap
    rows = []
    reference: tuple[float, float] | None = None
    for t in THR_TEST_TIMES_S:
        sigma = float(cloud.sigma_at(t))
        spec_t = spec.with_sigma(sigma)
        expected = threshold_field(spec_t.central_ion_density, sigma, spec.ion) * gap
        scan = synthetic_scan(spec_t, gap, np.linspace(0.0, 2.0 * expected, 401))
        V_th, _ = locate_threshold(scan)
        if reference is None:
            reference = (V_th, sigma)
        inferred = sigma_from_threshold(
            spec.N_i, V_th, spec.N_i, reference[0], reference[1], v0=cloud.v0, delay=t
        )
        rows.append(
            {
                "t": t,
                "sigma_true": sigma,
                "V_th": V_th,
                "sigma_inferred": inferred.sigma,
                "sigma_check": inferred.check,
                "n_i0_true": spec_t.central_ion_density,
                "n_i0_inferred": density_from_threshold(V_th / gap, sigma, spec.ion),
            }
        )
    frame = pd.DataFrame(rows)
    fit = fit_sigma_expansion(frame["t"], frame["sigma_inferred"])
    frame["sigma_fit"] = np.sqrt(fit.sigma0**2 + fit.slope * frame["t"] ** 2)
    return {"thr_test": frame}


def mk_test(scenario: Scenario) -> Datasets:
    """Binding-energy drift of the collision kernel and a relaxed bound population."""
    eps = -np.linspace(0.5, 10.0, 40)
    totals = [transition_totals(float(e)) for e in eps]
    drift = pd.DataFrame(
        {
            "eps": eps,
            "drift": kernel_drift(eps),
            "down": [d for d, _ in totals],
            "up": [u for _, u in totals],
        }
    )
    spec = scenario.spec
    b = BoundState.grid(scenario.numerics.n_bound)
    population = np.where(np.abs(b - 1.0) == np.min(np.abs(b - 1.0)), 1.0, 0.0)
    state = BoundState(b=b, population=population)
    n_e = spec.central_electron_density
    horizon = 5.0 / (n_e * rate_prefactor(spec.T_e))
    relaxed = master_equation_step(state, n_e, horizon, spec.T_e)
    return {
        "mk_test_drift": drift,
        "mk_test_population": relaxed.frame().assign(t=relaxed.t, ionized=relaxed.ionized),
    }


def _equilibrium(scenario: Scenario, spec: PlasmaSpec, eta: float, r_t: float | None = None) -> KingEquilibrium:
    return solve_selfconsistent(
        spec,
        eta,
        r_t,
        n_grid=scenario.numerics.n_radial,
        tol=scenario.numerics.king_tol,
    )
