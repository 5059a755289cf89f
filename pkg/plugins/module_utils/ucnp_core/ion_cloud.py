"""Gaussian ion cloud: enclosed counts, ionic potential, expansion and Coulomb explosion."""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import pandas as pd
from scipy import optimize, special

from .errors import InvalidInputError
from .plasma_params import (
    COULOMB_K,
    DEFAULT_CONSTANTS,
    K_B,
    Constants,
    PlasmaSpec,
    Species,
    g_prime,
    relaxation_time,
)

logger = logging.getLogger(__name__)

_SQRT2 = math.sqrt(2.0)
_TWO_OVER_SQRT_PI = 2.0 / math.sqrt(math.pi)


@dataclass(frozen=True)
class GaussianCloud:
    """Spherical Gaussian ion cloud expanding as sigma(t)^2 = sigma0^2 + v0^2 t^2."""

    N_i: float
    N_e: float
    sigma0: float
    v0: float = 0.0
    t: float = 0.0
    ion: Species = field(default_factory=Species.ion)
    electron: Species = field(default_factory=Species.electron)

    def __post_init__(self) -> None:
        if self.N_e < 0 or self.N_i < self.N_e:
            raise InvalidInputError(f"Need N_i >= N_e >= 0, got N_i={self.N_i!r}, N_e={self.N_e!r}")
        if not self.sigma0 > 0:
            raise InvalidInputError(f"sigma0 must be positive, got {self.sigma0!r}")
        if self.v0 < 0 or self.t < 0:
            raise InvalidInputError("v0 and t must be nonnegative")

    @classmethod
    def from_spec(cls, spec: PlasmaSpec, v0: float | None = None) -> GaussianCloud:
        """Cloud with the expansion velocity v0^2 = k_B T_e^gamma / m_i unless given."""
        if v0 is None:
            v0 = math.sqrt(K_B * spec.T_e_gamma / spec.ion.mass)
        return cls(
            N_i=spec.N_i, N_e=spec.N_e, sigma0=spec.sigma, v0=v0, ion=spec.ion, electron=spec.electron
        )

    def at(self, t: float) -> GaussianCloud:
        return dataclasses.replace(self, t=t)

    def sigma_at(self, t: Any = None) -> Any:
        t = self.t if t is None else np.asarray(t, dtype=float)
        return np.sqrt(self.sigma0**2 + (self.v0 * t) ** 2)

    @property
    def sigma(self) -> float:
        return float(self.sigma_at())

    @property
    def sigma_dot(self) -> float:
        return self.v0**2 * self.t / self.sigma

    @property
    def delta_N(self) -> float:
        return self.N_i - self.N_e

    @property
    def charge_ratio(self) -> float:
        """Ion charge in units of the electron charge magnitude."""
        return self.ion.charge / abs(self.electron.charge)

    @property
    def t_PE(self) -> float:
        return self.sigma0 / self.v0 if self.v0 > 0 else math.inf

    def central_density(self, t: Any = None) -> Any:
        return self.N_i / (2.0 * math.pi * self.sigma_at(t) ** 2) ** 1.5

    def density(self, r: Any, t: Any = None) -> Any:
        s = self.sigma_at(t)
        r = np.asarray(r, dtype=float)
        return self.central_density(t) * np.exp(-0.5 * (r / s) ** 2)


def _radius(r: Any) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise InvalidInputError("radius must be nonnegative")
    return r


def enclosed_ions(cloud: GaussianCloud, r: Any) -> Any:
    """Number of ions inside radius ``r``.

    :raises InvalidInputError: for negative radii.
    """
    x = _radius(r) / (_SQRT2 * cloud.sigma)
    return cloud.N_i * (special.erf(x) - _TWO_OVER_SQRT_PI * x * np.exp(-(x**2)))


def enclosed_complement(cloud: GaussianCloud, r: Any) -> Any:
    """Number of ions outside radius ``r``; evaluated without cancellation."""
    x = _radius(r) / (_SQRT2 * cloud.sigma)
    return cloud.N_i * (special.erfc(x) + _TWO_OVER_SQRT_PI * x * np.exp(-(x**2)))


def ionic_potential(cloud: GaussianCloud, r: Any) -> Any:
    """Per-mass potential of the ions felt by an electron (negative, J/kg)."""
    r = _radius(r)
    s = cloud.sigma
    scale = g_prime(cloud.electron) * cloud.electron.mass * cloud.charge_ratio * cloud.N_i
    x = r / (_SQRT2 * s)
    small = x < 1e-6
    safe_r = np.where(small, 1.0, r)
    # erf(x)/r -> sqrt(2/pi)/sigma (1 - x^2/3) near the origin
    core = math.sqrt(2.0 / math.pi) / s * (1.0 - x**2 / 3.0)
    return scale * np.where(small, core, special.erf(x) / safe_r)


def ionic_potential_gradient(cloud: GaussianCloud, r: Any) -> Any:
    """d(Phi_i)/dr = -G' m_e N_i(r) / r^2; positive for r > 0."""
    r = _radius(r)
    scale = -g_prime(cloud.electron) * cloud.electron.mass * cloud.charge_ratio
    safe_r = np.where(r > 0, r, 1.0)
    return np.where(r > 0, scale * enclosed_ions(cloud, r) / safe_r**2, 0.0)


def self_similar_velocity(cloud: GaussianCloud, r: Any, t: Any) -> Any:
    """Ion transport velocity u = r t (v0/sigma0)^2 / (1 + (v0/sigma0)^2 t^2)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise InvalidInputError("t must be nonnegative")
    rate = (cloud.v0 / cloud.sigma0) ** 2
    return np.asarray(r, dtype=float) * t * rate / (1.0 + rate * t**2)


def continuity_residual(cloud: GaussianCloud, r: Any, t: float, step: float = 1e-3) -> np.ndarray:
    """Residual of dn/dt + div(n u) for the self-similar solution.

    Derivatives use five-point stencils in sigma and t_PE units; the result is
    scaled by n0(t)/t_PE.
    """
    if not cloud.v0 > 0:
        raise InvalidInputError("continuity_residual needs an expanding cloud (v0 > 0)")
    r = _radius(r)
    tau = cloud.t_PE
    hr = step * cloud.sigma_at(t)
    ht = step * tau
    weights = np.array([1.0, -8.0, 8.0, -1.0]) / 12.0
    offsets = np.array([-2.0, -1.0, 1.0, 2.0])

    def flux(rr: np.ndarray) -> np.ndarray:
        return rr**2 * cloud.density(rr, t) * self_similar_velocity(cloud, rr, t)

    dndt = sum(w * cloud.density(r, max(t + o * ht, 0.0)) for w, o in zip(weights, offsets)) / ht
    safe_r = np.where(r > 0, r, hr)
    dflux = sum(w * flux(safe_r + o * hr) for w, o in zip(weights, offsets)) / hr
    residual = dndt + dflux / safe_r**2
    return residual * tau / cloud.central_density(t)


@dataclass(frozen=True)
class CoolingResult:
    T_e: Any
    exhausted: bool


def adiabatic_cooling(spec: PlasmaSpec, t: Any, T0: float | None = None) -> CoolingResult:
    """Mean electron temperature after the electrons gave their energy to the ions.

    ``T0`` defaults to ``spec.T_e_gamma``; the result is clamped at zero and
    ``exhausted`` reports whether the clamp was needed.
    """
    cloud = GaussianCloud.from_spec(spec)
    T0 = spec.T_e_gamma if T0 is None else T0
    t = np.asarray(t, dtype=float)
    frac = (t * cloud.v0 / cloud.sigma_at(t)) ** 2
    raw = T0 - spec.ion.mass * cloud.v0**2 * frac / K_B
    exhausted = bool(np.any(raw < -1e-12 * max(T0, 1.0)))
    T = np.maximum(raw, 0.0)
    return CoolingResult(T_e=float(T) if T.ndim == 0 else T, exhausted=exhausted)


def coulomb_explosion_time(cloud: GaussianCloud) -> float:
    """t_CE = sqrt(4 pi eps0 m_i / (q^2 (n_i0 - n_e0))) at the cloud's current size."""
    dn = cloud.delta_N / (2.0 * math.pi * cloud.sigma**2) ** 1.5
    if not dn > 0:
        return math.inf
    return math.sqrt(cloud.ion.mass / (COULOMB_K * cloud.ion.charge**2 * dn))


def expl_coul_coefficient(constants: Constants = DEFAULT_CONSTANTS) -> float:
    """Early-time growth coefficient c of r/sigma0 - 1 = c (N_i/N*)^0.5 (t v0/sigma0)^2.

    Evaluated for the shell starting at r = sigma0 of a cloud obeying the
    population law N_i - N_e = sqrt(N_i N*).
    """
    x = 1.0 / _SQRT2
    enclosed_fraction = special.erf(x) - _TWO_OVER_SQRT_PI * x * math.exp(-(x**2))
    return 0.5 * constants.n_star_energy_factor * constants.n_star_prefactor * enclosed_fraction


@dataclass(frozen=True)
class Shell:
    r_init: float
    r_now: float
    Ni_enclosed: float
    Ne_enclosed: float
    velocity: float = 0.0
    frozen: bool = False


def _shell_rate(shell: Shell, ion: Species) -> float:
    dN = shell.Ni_enclosed - shell.Ne_enclosed
    return math.sqrt(2.0 * COULOMB_K * ion.charge**2 * dN / (ion.mass * shell.r_init**3))


def _solve_stretch(s: float) -> float:
    """Return w with w sqrt(1+w^2) + asinh(w) = s, where r/r_i = 1 + w^2."""
    if s <= 0:
        return 0.0

    def g(w: float) -> float:
        return w * math.sqrt(1.0 + w * w) + math.asinh(w) - s

    if s < 1e-3:
        # g(s/2) is lost in rounding here; Newton from the series root instead
        w = 0.5 * s
        for _ in range(3):
            w -= g(w) / (2.0 * math.sqrt(1.0 + w * w))
        return w
    w = optimize.brentq(g, 0.0, 0.5 * s, xtol=1e-300, rtol=4.0 * np.finfo(float).eps, maxiter=200)
    # Newton polish; g'(w) = 2 sqrt(1+w^2)
    return w - g(w) / (2.0 * math.sqrt(1.0 + w * w))


def shell_position(shell: Shell, t: float, ion: Species | None = None) -> float:
    """Radius at time ``t`` of a shell pushed out by its enclosed ion excess.

    Shells with no net positive charge stay at ``r_init``.
    """
    if t < 0:
        raise InvalidInputError("t must be nonnegative")
    ion = ion or Species.ion()
    if shell.Ni_enclosed <= shell.Ne_enclosed:
        logger.warning("Shell at r=%.3g m has no net charge; frozen", shell.r_init)
        return shell.r_init
    w = _solve_stretch(t * _shell_rate(shell, ion))
    return shell.r_init * (1.0 + w * w)


def shell_velocity(shell: Shell, t: float, ion: Species | None = None) -> float:
    """Radial velocity r_i omega sqrt(y/(1+y)) of the shell at time ``t``."""
    ion = ion or Species.ion()
    if shell.Ni_enclosed <= shell.Ne_enclosed:
        return 0.0
    omega = _shell_rate(shell, ion)
    w = _solve_stretch(t * omega)
    return shell.r_init * omega * w / math.sqrt(1.0 + w * w)


@dataclass(frozen=True, eq=False)
class ShellEnsemble:
    """Snapshot of the Lagrangian shells; ``n_i`` is NaN beyond a shell crossing."""

    shells: tuple[Shell, ...]
    t: float
    spike_detected: bool
    r: np.ndarray
    n_i: np.ndarray
    ion: Species
    n_i_peak0: float
    sigma0: float
    spike_r_init: float = math.nan

    @property
    def r_init(self) -> np.ndarray:
        return np.array([s.r_init for s in self.shells])

    @property
    def r_now(self) -> np.ndarray:
        return np.array([s.r_now for s in self.shells])

    @property
    def velocities(self) -> np.ndarray:
        return np.array([s.velocity for s in self.shells])

    def profile(self) -> pd.DataFrame:
        return pd.DataFrame({"t": self.t, "r": self.r, "n_i": self.n_i, "u_i": self.velocities})


def initialize_shells(
    cloud: GaussianCloud, n_shells: int = 400, r_min: float = 0.05, r_max: float = 8.0
) -> ShellEnsemble:
    """Log-spaced shells on [r_min, r_max] sigma with N_e(r) = (N_e/N_i) N_i(r)."""
    if n_shells < 3:
        raise InvalidInputError("need at least 3 shells")
    r = np.geomspace(r_min * cloud.sigma, r_max * cloud.sigma, n_shells)
    Ni = enclosed_ions(cloud, r)
    Ne = Ni * (cloud.N_e / cloud.N_i)
    shells = tuple(
        Shell(r_init=float(ri), r_now=float(ri), Ni_enclosed=float(ni), Ne_enclosed=float(ne))
        for ri, ni, ne in zip(r, Ni, Ne)
    )
    return ShellEnsemble(
        shells=shells,
        t=0.0,
        spike_detected=False,
        r=r.copy(),
        n_i=cloud.density(r),
        ion=cloud.ion,
        n_i_peak0=float(cloud.central_density()),
        sigma0=cloud.sigma,
    )


def evolve_shells(ensemble: ShellEnsemble, t: float) -> ShellEnsemble:
    """Move every shell to time ``t`` and rebuild the ion density on the moved grid."""
    moved = tuple(
        dataclasses.replace(
            s,
            r_now=shell_position(s, t, ensemble.ion),
            velocity=shell_velocity(s, t, ensemble.ion),
            frozen=s.Ni_enclosed <= s.Ne_enclosed,
        )
        for s in ensemble.shells
    )
    r_init = np.array([s.r_init for s in moved])
    r_now = np.array([s.r_now for s in moved])
    n0 = ensemble.n_i_peak0 * np.exp(-0.5 * (r_init / ensemble.sigma0) ** 2)

    crossed = np.flatnonzero(np.diff(r_now) <= 0)
    spike = crossed.size > 0
    n_i = np.full_like(r_now, np.nan)
    last = crossed[0] + 1 if spike else r_now.size
    if last >= 2:
        dri_dr = np.gradient(r_init[:last], r_now[:last])
        n_i[:last] = n0[:last] * dri_dr * (r_init[:last] / r_now[:last]) ** 2
    if np.nanmax(n_i, initial=0.0) > 5.0 * ensemble.n_i_peak0:
        spike = True
    spike_r = float(r_init[crossed[0]]) if crossed.size else math.nan
    if spike:
        logger.info("Ion spike at t=%.3g s (r_init=%.3g m)", t, spike_r)
    return ShellEnsemble(
        shells=moved,
        t=t,
        spike_detected=spike,
        r=r_now,
        n_i=n_i,
        ion=ensemble.ion,
        n_i_peak0=ensemble.n_i_peak0,
        sigma0=ensemble.sigma0,
        spike_r_init=spike_r,
    )


@dataclass(frozen=True)
class ConductivityResult:
    coefficient: float
    mean_free_path: float
    t_e: float
    collisionless: bool


def conductivity_coefficient(
    rho: float,
    sigma_v: float,
    ln_Lambda: float,
    *,
    sigma: float,
    electron: Species | None = None,
    C: float = DEFAULT_CONSTANTS.conductivity_C,
) -> ConductivityResult:
    """Thermal-conductivity closure coefficient and mean free path l = 3 t_e sigma_v.

    ``rho`` is the electron mass density; ``collisionless`` flags l > sigma.
    """
    if rho < 0 or not sigma_v > 0:
        raise InvalidInputError("need rho >= 0 and sigma_v > 0")
    electron = electron or Species.electron()
    gp = abs(g_prime(electron))
    coefficient = C * (4.0 / (9.0 * math.sqrt(math.pi))) * 3.0 * gp * electron.mass * rho * ln_Lambda / sigma_v
    if rho == 0:
        return ConductivityResult(coefficient=0.0, mean_free_path=math.inf, t_e=math.inf, collisionless=True)
    t_e = relaxation_time(sigma_v, rho / electron.mass, ln_Lambda, electron)
    l = 3.0 * t_e * sigma_v
    return ConductivityResult(coefficient=coefficient, mean_free_path=l, t_e=t_e, collisionless=l > sigma)
