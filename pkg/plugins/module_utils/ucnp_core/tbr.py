"""Three-body recombination: rates, the bound-state energy-transfer kernel and heating.

Bound energies are written as binding energies b = -eps/(k_B T_e) > 0 inside
the module; the public kernel takes the signed eps < 0.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, Callable, Union

import numpy as np
import pandas as pd
from scipy import integrate

from .errors import DivergenceError, FitError, InvalidInputError, StepSizeError
from .fp_solver import EnergyDistribution, mean_temperature
from .orbit_space import PhaseGeometry, density_from_distribution
from .plasma_params import COULOMB_K, DEFAULT_CONSTANTS, K_B, Constants, Species, g_prime

logger = logging.getLogger(__name__)

BOTTLENECK_FACTOR = 3.82
DOWN_EXPONENT = 4.83
UP_EXPONENT = 2.33
INITIAL_EXPONENT = 2.5
# Reference point of the heating and bottleneck scalings
_REF_DENSITY = 1.0e15
_REF_EXPANSION_TIME = 3.0e-6
_PLASMA_HEATING_PREFACTOR = 5.4
_CLUSTER_HEATING_PREFACTOR = 100.0
_EPSILON_STAR_K = 500.0

Heating = Union[float, Callable[[np.ndarray], Any], tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class TbrState:
    rate: float
    heating: float
    bottleneck_energy: float
    epsilon_star: float


@dataclass(frozen=True)
class RydbergDistribution:
    alpha: float
    T_Ryd: float
    normalization: float
    alpha_stderr: float = math.nan
    T_Ryd_stderr: float = math.nan
    n_bins: int = 0


def tbr_rate(n_e: float, n_i: float, T_e: float, constants: Constants = DEFAULT_CONSTANTS, electron: Species | None = None) -> float:
    """Free-electron loss rate C n_e n_i |G' m_e|^5 / (k_B T_e/m_e)^(9/2), in 1/s.

    :raises DivergenceError: at T_e = 0.
    """
    if T_e == 0:
        raise DivergenceError("the recombination rate diverges at T_e = 0")
    if T_e < 0 or n_e < 0 or n_i < 0:
        raise InvalidInputError("tbr_rate needs nonnegative densities and T_e > 0")
    electron = electron or Species.electron()
    coupling = abs(g_prime(electron)) * electron.mass
    return constants.C_tbr * n_e * n_i * coupling**5 / (K_B * T_e / electron.mass) ** 4.5


def rate_prefactor(T_e: float, electron: Species | None = None) -> float:
    """k0 = 11 (q^2/(4 pi eps0 k_B T_e))^2 (k_B T_e/m_e)^(1/2), in m^3/s."""
    if not T_e > 0:
        raise InvalidInputError(f"T_e must be positive, got {T_e!r}")
    electron = electron or Species.electron()
    landau = COULOMB_K * electron.charge**2 / (K_B * T_e)
    return 11.0 * landau**2 * math.sqrt(K_B * T_e / electron.mass)


def _shape(b_i: Any, b_f: Any) -> Any:
    """Dimensionless kernel per unit final binding energy; b_f <= 0 is the continuum."""
    b_i = np.asarray(b_i, dtype=float)
    b_f = np.asarray(b_f, dtype=float)
    deeper = b_f >= b_i
    safe_f = np.where(deeper, b_f, 1.0)
    down = safe_f ** (-DOWN_EXPONENT) * b_i**INITIAL_EXPONENT
    up = b_i ** (-UP_EXPONENT) * np.exp(-(b_i - b_f))
    return np.where(deeper, down, up)


def mk_kernel(eps_i: Any, eps_f: Any, T_e: float, electron: Species | None = None) -> Any:
    """Transition rate coefficient per unit eps_f between bound states, in m^3/s.

    Energies are in units of k_B T_e and negative. Deexcitation (eps_f <
    eps_i) follows k0 (-eps_f)^-4.83 (-eps_i)^2.5, excitation follows
    k0 (-eps_i)^-2.33 exp(-(b_i - b_f)) with b = -eps, which satisfies
    detailed balance against b^-5/2 exp(b). The diagonal belongs to the
    deexcitation branch.
    """
    eps_i = np.asarray(eps_i, dtype=float)
    eps_f = np.asarray(eps_f, dtype=float)
    if np.any(eps_i >= 0) or np.any(eps_f >= 0):
        raise InvalidInputError("bound energies must be negative")
    out = rate_prefactor(T_e, electron) * _shape(-eps_i, -eps_f)
    return float(out) if np.ndim(out) == 0 else out


def ionization_rate(eps_i: Any, T_e: float, n_e: float = 1.0, electron: Species | None = None) -> Any:
    """Rate of excitation into the continuum, n_e k0 b^-2.33 exp(-b), in 1/s."""
    b = -np.asarray(eps_i, dtype=float)
    if np.any(b <= 0):
        raise InvalidInputError("bound energies must be negative")
    out = n_e * rate_prefactor(T_e, electron) * b ** (-UP_EXPONENT) * np.exp(-b)
    return float(out) if np.ndim(out) == 0 else out


def transition_totals(eps_i: float, include_continuum: bool = True) -> tuple[float, float]:
    """Total (downward, upward) dimensionless rates out of one state by quadrature."""
    b = -eps_i
    if not b > 0:
        raise InvalidInputError("bound energies must be negative")
    down = integrate.quad(lambda bf: float(_shape(b, bf)), b, np.inf)[0]
    lower = -np.inf if include_continuum else 0.0
    up = integrate.quad(lambda bf: float(_shape(b, bf)), lower, b)[0]
    return down, up


def kernel_drift(eps: Any, T_e: float | None = None) -> Any:
    """Mean rate of change of the binding energy, in k_B T_e per (n_e k0) unit time.

    Final states include the continuum. Positive values mean hardening.
    """
    values = np.atleast_1d(-np.asarray(eps, dtype=float))
    if np.any(values <= 0):
        raise InvalidInputError("bound energies must be negative")
    out = np.empty_like(values)
    for i, b in enumerate(values):
        down = integrate.quad(lambda bf: (bf - b) * float(_shape(b, bf)), b, np.inf)[0]
        up = integrate.quad(lambda bf: (bf - b) * float(_shape(b, bf)), -np.inf, b)[0]
        out[i] = down + up
    if T_e is not None:
        out = out * rate_prefactor(T_e)
    return float(out[0]) if np.ndim(eps) == 0 else out


def bottleneck_energy(T_e: float) -> float:
    """3.82 k_B T_e, where excitation and deexcitation out of a state balance."""
    return BOTTLENECK_FACTOR * K_B * T_e


def heating_rate(n_e0: float, t_PE: float, gamma_tbr: float, T_e: float) -> float:
    """Heating per free electron 5.4 (n_e0/1e15 m^-3 * t_PE/3 us)^(-2/9) Gamma_TBR k_B T_e, in W."""
    if gamma_tbr == 0:
        return 0.0
    if not (n_e0 > 0 and t_PE > 0 and T_e > 0 and gamma_tbr > 0):
        raise InvalidInputError("heating_rate inputs must be positive")
    scale = (n_e0 / _REF_DENSITY * t_PE / _REF_EXPANSION_TIME) ** (-2.0 / 9.0)
    return _PLASMA_HEATING_PREFACTOR * scale * gamma_tbr * K_B * T_e


def cluster_heating_rate(gamma_tbr: float, mass: float, sigma_v: float) -> float:
    """Binary-star analog: about 100 Gamma m sigma_v^2 liberated per formed binary."""
    return _CLUSTER_HEATING_PREFACTOR * gamma_tbr * mass * sigma_v**2


def heating_prefactor_ratio() -> float:
    return _PLASMA_HEATING_PREFACTOR / _CLUSTER_HEATING_PREFACTOR


def epsilon_star(T_e: float, n_e: float) -> float:
    """Binding energy above which captured electrons are no longer reionized, in J."""
    if not (T_e > 0 and n_e > 0):
        raise InvalidInputError("epsilon_star needs T_e > 0 and n_e > 0")
    return K_B * _EPSILON_STAR_K * T_e ** (-2.0 / 9.0) * (n_e / _REF_DENSITY) ** (1.0 / 9.0)


def tbr_state(
    n_e: float,
    n_i: float,
    T_e: float,
    t_PE: float,
    constants: Constants = DEFAULT_CONSTANTS,
) -> TbrState:
    rate = tbr_rate(n_e, n_i, T_e, constants)
    return TbrState(
        rate=rate,
        heating=heating_rate(n_e, t_PE, rate, T_e),
        bottleneck_energy=bottleneck_energy(T_e),
        epsilon_star=epsilon_star(T_e, n_e),
    )


def radial_heating(
    heating: float,
    r: np.ndarray,
    n_e: np.ndarray,
    n_i: np.ndarray,
    weighting: str = DEFAULT_CONSTANTS.heating_weighting,
    electron_mass: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-mass heating E_dot(r) whose electron-weighted mean is ``heating``.

    ``density`` weighting follows the local recombination rate n_e n_i,
    ``uniform`` spreads it evenly.
    """
    mass = electron_mass or Species.electron().mass
    r = np.asarray(r, dtype=float)
    if weighting == "uniform":
        shape = np.ones_like(r)
    elif weighting == "density":
        shape = np.asarray(n_e, dtype=float) * np.asarray(n_i, dtype=float)
    else:
        raise InvalidInputError(f"Unknown heating weighting: {weighting}")
    electrons = integrate.trapezoid(n_e * r**2, r)
    weighted = integrate.trapezoid(n_e * shape * r**2, r)
    if weighted <= 0:
        return r, np.zeros_like(r)
    return r, heating / mass * shape * electrons / weighted


def _heating_at(edot: Heating, r: np.ndarray) -> np.ndarray:
    if callable(edot):
        return np.asarray(edot(r), dtype=float)
    if isinstance(edot, tuple):
        grid, values = edot
        return np.interp(r, grid, values)
    return np.full_like(r, float(edot))


def fp_source_term(target: EnergyDistribution | PhaseGeometry, edot: Heating, epsrel: float = 1e-10) -> np.ndarray:
    """N~(E) = 16 pi^2 int E_dot(r) (2 (E - Phi))^(1/2) r^2 dr at every energy node.

    ``edot`` is a per-mass heating rate: a constant, a callable of r, or an
    ``(r, values)`` table. A constant gives E_dot dtau/dE.
    """
    geometry = target.geometry if isinstance(target, EnergyDistribution) else target
    profile = geometry.profile
    out = np.zeros(geometry.E.size)
    if not callable(edot) and not isinstance(edot, tuple) and float(edot) == 0.0:
        return out
    for i, e in enumerate(geometry.E):
        if e <= profile.E0:
            continue
        r_E = float(profile.radius_at(e))

        def integrand(w: float, e: float = e, r_E: float = r_E) -> float:
            r = r_E * (1.0 - w * w)
            kinetic = max(2.0 * (e - float(profile(r))), 0.0)
            return float(_heating_at(edot, np.array([r]))[0]) * math.sqrt(kinetic) * r * r * 2.0 * r_E * w

        out[i] = 16.0 * math.pi**2 * integrate.quad(integrand, 0.0, 1.0, epsrel=epsrel, limit=200)[0]
    return out


@dataclass(frozen=True, eq=False)
class BoundState:
    """Occupation of bound levels on a logarithmic grid of binding energies (units of k_B T_e)."""

    b: np.ndarray
    population: np.ndarray
    ionized: float = 0.0
    t: float = 0.0

    @classmethod
    def grid(cls, n_bound: int = 200, b_min: float = 0.1, b_max: float = 20.0) -> np.ndarray:
        return np.geomspace(b_min, b_max, n_bound)

    @property
    def total(self) -> float:
        return float(np.sum(self.population))

    @property
    def mean_binding(self) -> float:
        total = self.total
        return float(np.sum(self.b * self.population) / total) if total > 0 else math.nan

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame({"eps": -self.b, "f_bound": self.population})


def _widths(b: np.ndarray) -> np.ndarray:
    edges = np.concatenate([[b[0] ** 1.5 / b[1] ** 0.5], np.sqrt(b[1:] * b[:-1]), [b[-1] ** 1.5 / b[-2] ** 0.5]])
    return np.diff(edges)


def transition_matrix(b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Dimensionless rates R[k, j] from level j to level k and the rate out of the grid top.

    Transitions deeper than the last level land in it; transitions to b
    below the first cell edge count as ionization.
    """
    widths = _widths(b)
    rates = _shape(b[None, :], b[:, None]) * widths[:, None]
    np.fill_diagonal(rates, 0.0)
    lower_edge = b[0] - 0.5 * widths[0]
    upper_edge = b[-1] + 0.5 * widths[-1]
    escape = b ** (-UP_EXPONENT) * np.exp(-(b - lower_edge))
    below_top = b**INITIAL_EXPONENT * upper_edge ** (1.0 - DOWN_EXPONENT) / (DOWN_EXPONENT - 1.0)
    rates[-1, :] += below_top
    rates[-1, -1] = 0.0
    return rates, escape


def free_electron_state(f_free: EnergyDistribution) -> tuple[float, float]:
    """Central density and mean temperature of a free distribution."""
    profile = f_free.geometry.profile
    n_e = density_from_distribution(profile.phi[:1], (f_free.centers, f_free.f), profile.E_t)
    return float(n_e[0]), mean_temperature(f_free)


def master_equation_step(
    state: BoundState,
    n_e: float | EnergyDistribution,
    dt: float,
    T_e: float | None = None,
    *,
    safety: float = 0.5,
    max_substeps: int = 1_000_000,
) -> BoundState:
    """Advance bound populations by explicit Euler steps under the collision kernel.

    The rate scale is n_e k0. Probability leaving through the top of the
    grid is accumulated in ``ionized``, so bound + ionized is conserved.
    ``n_e`` may be the free distribution itself; its central density is used
    and, when ``T_e`` is omitted, its mean temperature.

    :raises StepSizeError: if ``dt`` needs more than ``max_substeps`` sub-steps.
    """
    if dt < 0:
        raise InvalidInputError("dt must be nonnegative")
    if dt == 0:
        return state
    if isinstance(n_e, EnergyDistribution):
        density, mean_T = free_electron_state(n_e)
        n_e, T_e = density, mean_T if T_e is None else T_e
    if T_e is None:
        raise InvalidInputError("T_e is required when n_e is a number")
    rates, escape = transition_matrix(state.b)
    scale = n_e * rate_prefactor(T_e)
    out_rate = (rates.sum(axis=0) + escape) * scale
    h_max = safety / float(np.max(out_rate)) if np.max(out_rate) > 0 else dt
    n_sub = max(1, math.ceil(dt / h_max))
    if n_sub > max_substeps:
        raise StepSizeError(
            f"master equation needs {n_sub} sub-steps for dt={dt:g} s",
            {"dt": dt, "substeps": n_sub},
        )
    h = dt / n_sub
    gain = rates * scale
    p = state.population.copy()
    ionized = state.ionized
    for _ in range(n_sub):
        flow = gain @ p - out_rate * p
        ionized += h * float(escape @ p) * scale
        p = p + h * flow
    logger.debug("master equation: %d sub-steps of %.3g s", n_sub, h)
    return BoundState(b=state.b, population=p, ionized=ionized, t=state.t + dt)


def sample_rydberg(alpha: float, T_Ryd: float, size: int, rng: np.random.Generator, x_range: tuple[float, float] = (0.1, 20.0)) -> np.ndarray:
    """Binding energies (J) drawn from exp(-x) x^-alpha with x = E/(k_B T_Ryd) in ``x_range``."""
    x = np.geomspace(*x_range, 4000)
    cdf = integrate.cumulative_trapezoid(np.exp(-x) * x ** (-alpha), x, initial=0.0)
    u = rng.random(size) * cdf[-1]
    return np.interp(u, cdf, x) * K_B * T_Ryd


def fit_rydberg_distribution(samples: Any, n_bins: int = 30, min_count: int = 5) -> RydbergDistribution:
    """Weighted least-squares fit of exp(-E/k_B T) (E/k_B T)^-alpha to a log-binned histogram.

    :raises FitError: for fewer than 50 samples, nonpositive energies or a
        histogram without an exponential cutoff.
    """
    energies = np.asarray(samples, dtype=float)
    if energies.size < 50:
        raise FitError(f"need at least 50 samples, got {energies.size}")
    if np.any(energies <= 0) or not np.all(np.isfinite(energies)):
        raise FitError("binding energies must be positive and finite")
    lo, hi = float(energies.min()), float(energies.max())
    if hi / lo < 1.5:
        raise FitError("samples span too narrow a range to fit")
    edges = np.geomspace(lo, hi * (1.0 + 1e-12), n_bins + 1)
    counts, _ = np.histogram(energies, bins=edges)
    centers = np.sqrt(edges[1:] * edges[:-1])
    keep = counts >= min_count
    if keep.sum() < 4:
        raise FitError("too few populated bins for a three-parameter fit")
    scale = float(np.median(energies))
    x = centers[keep] / scale
    y = np.log(counts[keep] / np.diff(edges)[keep] * scale)
    weights = np.sqrt(counts[keep])
    design = np.column_stack([np.ones_like(x), np.log(x), x])
    coef, *_ = np.linalg.lstsq(design * weights[:, None], y * weights, rcond=None)
    c0, c_log, c_lin = coef
    if c_lin >= 0:
        raise FitError("histogram shows no exponential cutoff")
    residual = y - design @ coef
    dof = max(int(keep.sum()) - 3, 1)
    s2 = float(np.sum(weights**2 * residual**2)) / dof
    cov = s2 * np.linalg.inv((design * weights[:, None]).T @ (design * weights[:, None]))
    alpha = -float(c_log)
    kT = -scale / float(c_lin)
    T = kT / K_B
    T_err = T * math.sqrt(cov[2, 2]) / abs(c_lin)
    if alpha >= INITIAL_EXPONENT:
        logger.warning("fitted alpha=%.3f reaches the equilibrium bound 5/2", alpha)
    return RydbergDistribution(
        alpha=alpha,
        T_Ryd=T,
        normalization=float(math.exp(c0)) * energies.size,
        alpha_stderr=float(math.sqrt(cov[1, 1])),
        T_Ryd_stderr=float(T_err),
        n_bins=int(keep.sum()),
    )


def rate_table(T_values: Any, n_e: float, n_i: float, t_PE: float, constants: Constants = DEFAULT_CONSTANTS) -> pd.DataFrame:
    """Recombination rate, heating and bottleneck energies over a T_e sweep."""
    rows = []
    for T in np.atleast_1d(np.asarray(T_values, dtype=float)):
        state = tbr_state(n_e, n_i, float(T), t_PE, constants)
        rows.append(
            {
                "T_e": float(T),
                "rate": state.rate,
                "heating": state.heating,
                "bottleneck_energy": state.bottleneck_energy,
                "epsilon_star": state.epsilon_star,
            }
        )
    return pd.DataFrame(rows)
