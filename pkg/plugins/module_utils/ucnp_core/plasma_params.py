"""Physical constants, derived plasma parameters and plasma/cluster unit scaling."""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np
from scipy import constants as sc

from .errors import InvalidInputError

logger = logging.getLogger(__name__)

Q_E = sc.e
EPS0 = sc.epsilon_0
K_B = sc.k
M_E = sc.m_e
AMU = sc.m_u
COULOMB_K = 1.0 / (4.0 * math.pi * EPS0)

M_SUN = 1.98892e30
PARSEC = sc.parsec
MYR = 1.0e6 * sc.year

# Reference density used by the empirical TBR and epsilon* scalings (10^9 cm^-3).
REFERENCE_DENSITY = 1.0e15

CESIUM_MASS_U = 132.905451933


@dataclass(frozen=True)
class Species:
    """A charged particle species. ``charge`` carries its sign."""

    mass: float
    charge: float
    name: str = ""

    def __post_init__(self) -> None:
        if not self.mass > 0:
            raise InvalidInputError(f"Species mass must be positive, got {self.mass!r}")

    @classmethod
    def electron(cls) -> Species:
        return cls(mass=M_E, charge=-Q_E, name="e-")

    @classmethod
    def ion(cls, mass_u: float = CESIUM_MASS_U, charge_number: int = 1, name: str = "Cs+") -> Species:
        return cls(mass=mass_u * AMU, charge=charge_number * Q_E, name=name)

    @property
    def charge_number(self) -> float:
        return self.charge / Q_E


@dataclass(frozen=True)
class Constants:
    """Tunable constants the source formulas leave open.

    Every field can be overridden from the ``constants:`` block of a scenario.
    """

    C_tbr: float = 1.0
    loss_prefactor: float = 12.0 * math.pi
    n_star_prefactor: float = math.sqrt(math.pi / 2.0)
    n_star_energy_factor: float = 1.5
    virial_coefficient: float = 0.44
    conductivity_C: float = 1.0
    heating_weighting: str = "density"

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any] | None) -> Constants:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data or {}) - known)
        if unknown:
            raise InvalidInputError(f"Unknown constants: {', '.join(unknown)}")
        return cls(**dict(data or {}))


DEFAULT_CONSTANTS = Constants()


@dataclass(frozen=True)
class PlasmaSpec:
    """Physical inputs of one plasma realization (SI units, temperatures in K)."""

    N_i: float
    N_e: float
    sigma: float
    T_e: float
    T_e_gamma: float
    electron: Species = field(default_factory=Species.electron)
    ion: Species = field(default_factory=Species.ion)

    def __post_init__(self) -> None:
        if self.N_e < 0 or self.N_i < self.N_e:
            raise InvalidInputError(
                f"Need N_i >= N_e >= 0, got N_i={self.N_i!r}, N_e={self.N_e!r}"
            )
        if not self.sigma > 0:
            raise InvalidInputError(f"sigma must be positive, got {self.sigma!r}")
        if self.T_e < 0 or self.T_e_gamma < 0:
            raise InvalidInputError("Temperatures must be nonnegative")

    @classmethod
    def reference_regime(cls) -> PlasmaSpec:
        """Cesium plasma with 250000 ions, 20000 excess charges, sigma = 250 um."""
        return cls(N_i=250_000.0, N_e=230_000.0, sigma=250e-6, T_e=50.0, T_e_gamma=53.3)

    @property
    def delta_N(self) -> float:
        return self.N_i - self.N_e

    @property
    def central_ion_density(self) -> float:
        return self.N_i / (2.0 * math.pi * self.sigma**2) ** 1.5

    @property
    def central_electron_density(self) -> float:
        return self.N_e / (2.0 * math.pi * self.sigma**2) ** 1.5

    def with_sigma(self, sigma: float) -> PlasmaSpec:
        return dataclasses.replace(self, sigma=sigma)


@dataclass(frozen=True)
class DerivedParams:
    G_prime: float
    gamma_coeff: float
    lambda_D: float
    a_WS: float
    r_L: float
    ln_Lambda: float
    omega_L: float
    omega_E: float
    omega_pl: float
    t_e: float
    sigma_v: float
    N_star: float
    t_PE: float
    v0: float
    n_e0: float
    n_i0: float
    t_cross: float
    kinetic_regime: bool

    @property
    def sigma_v1(self) -> float:
        """One-dimensional velocity dispersion sqrt(k_B T_e / m_e)."""
        return self.sigma_v / math.sqrt(3.0)

    def as_dict(self) -> dict[str, Any]:
        data = dataclasses.asdict(self)
        data["sigma_v1"] = self.sigma_v1
        return data


def g_prime(electron: Species) -> float:
    """Effective (negative) gravitational constant -q^2/(4 pi eps0 m^2)."""
    if not electron.mass > 0:
        raise InvalidInputError(f"Species mass must be positive, got {electron.mass!r}")
    return -COULOMB_K * electron.charge**2 / electron.mass**2


def gamma_coefficient(electron: Species, ln_lambda: float) -> float:
    """Collision coefficient 4 pi G'^2 m_e^2 ln(Lambda)."""
    return 4.0 * math.pi * g_prime(electron) ** 2 * electron.mass**2 * ln_lambda


def relaxation_time(sigma_v: float, density: float, ln_lambda: float, electron: Species) -> float:
    """Electron-electron relaxation time 9 v^3/(16 sqrt(pi) G'^2 m^2 n lnL)."""
    gp = g_prime(electron)
    return 9.0 * sigma_v**3 / (16.0 * math.sqrt(math.pi) * gp**2 * electron.mass**2 * density * ln_lambda)


def n_star(
    sigma: float,
    T_e_gamma: float,
    constants: Constants = DEFAULT_CONSTANTS,
    electron: Species | None = None,
) -> float:
    """Ion excess needed to trap electrons of photoionization energy k_e^gamma."""
    electron = electron or Species.electron()
    k_gamma = constants.n_star_energy_factor * K_B * T_e_gamma
    return k_gamma * sigma / (COULOMB_K * electron.charge**2) * constants.n_star_prefactor


def derive_params(
    spec: PlasmaSpec,
    density_n_e0: float,
    *,
    density_n_i0: float | None = None,
    constants: Constants = DEFAULT_CONSTANTS,
) -> DerivedParams:
    """Derive length, time and frequency scales for a local electron density.

    :raises InvalidInputError: if the density or ``spec.T_e`` is not positive.
    """
    if not density_n_e0 > 0:
        raise InvalidInputError(f"density must be positive, got {density_n_e0!r}")
    if not spec.T_e > 0:
        raise InvalidInputError(f"T_e must be positive, got {spec.T_e!r}")
    n_i0 = density_n_e0 if density_n_i0 is None else density_n_i0
    if not n_i0 > 0:
        raise InvalidInputError(f"ion density must be positive, got {n_i0!r}")

    e, m_e = spec.electron.charge, spec.electron.mass
    kT = K_B * spec.T_e
    lambda_D = math.sqrt(EPS0 * kT / (e**2 * density_n_e0))
    a_WS = (4.0 * math.pi * n_i0 / 3.0) ** (-1.0 / 3.0)
    r_L = COULOMB_K * e**2 / kT
    ln_lambda = math.log(2.0 * lambda_D / r_L)
    sigma_v = math.sqrt(3.0 * kT / m_e)
    t_e = relaxation_time(sigma_v, density_n_e0, ln_lambda, spec.electron)
    v0 = math.sqrt(K_B * spec.T_e_gamma / spec.ion.mass)

    return DerivedParams(
        G_prime=g_prime(spec.electron),
        gamma_coeff=gamma_coefficient(spec.electron, ln_lambda),
        lambda_D=lambda_D,
        a_WS=a_WS,
        r_L=r_L,
        ln_Lambda=ln_lambda,
        omega_L=math.sqrt(4.0 * math.pi * e**2 * density_n_e0 / (EPS0 * m_e)),
        omega_E=math.sqrt(4.0 * math.pi * spec.ion.charge**2 * n_i0 / (EPS0 * spec.ion.mass)),
        omega_pl=math.sqrt(e**2 * density_n_e0 / (EPS0 * m_e)),
        t_e=t_e,
        sigma_v=sigma_v,
        N_star=n_star(spec.sigma, spec.T_e_gamma, constants, spec.electron),
        t_PE=spec.sigma / v0 if v0 > 0 else math.inf,
        v0=v0,
        n_e0=density_n_e0,
        n_i0=n_i0,
        t_cross=spec.sigma / sigma_v,
        kinetic_regime=r_L < a_WS < lambda_D,
    )


# Unit systems: (mass, length, time) in SI.
_UNIT_SYSTEMS: dict[str, tuple[float, float, float]] = {
    "plasma": (M_E, 200e-6, 100e-9),
    "cluster": (M_SUN, PARSEC, 10.0 * MYR),
}

# Exponents of (mass, length, time) per dimension.
_DIMENSIONS: dict[str, tuple[int, int, int]] = {
    "mass": (1, 0, 0),
    "length": (0, 1, 0),
    "time": (0, 0, 1),
    "velocity": (0, 1, -1),
    "acceleration": (0, 1, -2),
    "energy": (1, 2, -2),
    "potential": (0, 2, -2),
    "number_density": (0, -3, 0),
}

_DIRECTIONS = {"plasma_to_cluster": ("plasma", "cluster"), "cluster_to_plasma": ("cluster", "plasma")}


def _unit(dimension: str, system: str) -> float:
    if dimension not in _DIMENSIONS:
        known = ", ".join(sorted(_DIMENSIONS))
        raise InvalidInputError(f"Unknown dimension: {dimension!r}. Known dimensions: {known}.")
    mass, length, time = _UNIT_SYSTEMS[system]
    a, b, c = _DIMENSIONS[dimension]
    return mass**a * length**b * time**c


def to_dimensionless(value: Any, dimension: str, system: str) -> Any:
    """Express an SI value in the natural units of ``system``."""
    return np.asarray(value, dtype=float) / _unit(dimension, system)


def from_dimensionless(value: Any, dimension: str, system: str) -> Any:
    return np.asarray(value, dtype=float) * _unit(dimension, system)


def scale_units(value: Any, dimension: str, direction: str) -> Any:
    """Map an SI quantity of one system onto the equivalent SI quantity of the other.

    ``direction`` is ``plasma_to_cluster`` or ``cluster_to_plasma``; both
    systems share the same dimensionless value.
    """
    if direction not in _DIRECTIONS:
        raise InvalidInputError(
            f"Unknown direction: {direction!r}. Known directions: {', '.join(sorted(_DIRECTIONS))}."
        )
    source, target = _DIRECTIONS[direction]
    return from_dimensionless(to_dimensionless(value, dimension, source), dimension, target)


def coupling_constants() -> dict[str, float]:
    """Dimensionless gravitational couplings of both unit systems (order unity)."""
    m_p, r_p, t_p = _UNIT_SYSTEMS["plasma"]
    m_c, r_c, t_c = _UNIT_SYSTEMS["cluster"]
    electron = Species.electron()
    plasma = abs(g_prime(electron)) * electron.mass**2 * t_p**2 / (m_p * r_p**3)
    cluster = sc.G * M_SUN**2 * t_c**2 / (m_c * r_c**3)
    return {"plasma": plasma, "cluster": cluster}


def virial_temperature(spec: PlasmaSpec, coefficient: float | None = None) -> float:
    """Mean electron temperature from the virial balance of the ion excess.

    ``coefficient`` scales the potential energy of the Gaussian charge with
    half-mass radius 1.54 sigma; defaults to ``Constants.virial_coefficient``.
    """
    c = DEFAULT_CONSTANTS.virial_coefficient if coefficient is None else coefficient
    r_h = 1.54 * spec.sigma
    return c * COULOMB_K * spec.electron.charge**2 * spec.delta_N / (3.0 * K_B * r_h)


@dataclass(frozen=True)
class VirialEnergy:
    W: float
    K: float
    r_h: float


def virial_energy(spec: PlasmaSpec, coefficient: float = 0.4) -> VirialEnergy:
    """Potential energy -0.4 G M^2 / r_h of the ion excess and its virial kinetic energy."""
    r_h = 1.54 * spec.sigma
    m = spec.electron.mass
    W = coefficient * g_prime(spec.electron) * m**2 * spec.delta_N**2 / r_h
    return VirialEnergy(W=W, K=-0.5 * W, r_h=r_h)


@dataclass(frozen=True)
class CoulombLog:
    Lambda: float
    ln_Lambda: float
    strongly_coupled: bool


def coulomb_log_global(spec: PlasmaSpec) -> CoulombLog:
    """Global Coulomb logarithm 0.1 dN sqrt(dN/N_e) of the whole cloud.

    ``ln_Lambda`` is NaN when the cloud is strongly coupled (Lambda < 1).
    """
    if spec.N_e <= 0:
        raise InvalidInputError("coulomb_log_global needs N_e > 0")
    if spec.N_i <= spec.N_e:
        raise InvalidInputError("coulomb_log_global needs N_i > N_e")
    dn = spec.delta_N
    lam = 0.1 * dn * math.sqrt(dn / spec.N_e)
    if lam < 1.0:
        logger.warning("Coulomb logarithm not applicable: Lambda=%.3g < 1 (strongly coupled)", lam)
        return CoulombLog(Lambda=lam, ln_Lambda=math.nan, strongly_coupled=True)
    return CoulombLog(Lambda=lam, ln_Lambda=math.log(lam), strongly_coupled=False)


def coulomb_log_cluster(n_bodies: float) -> CoulombLog:
    """Stellar-dynamics limit Lambda = 0.4 N."""
    if not n_bodies > 0:
        raise InvalidInputError(f"n_bodies must be positive, got {n_bodies!r}")
    lam = 0.4 * n_bodies
    strong = lam < 1.0
    return CoulombLog(Lambda=lam, ln_Lambda=math.nan if strong else math.log(lam), strongly_coupled=strong)
