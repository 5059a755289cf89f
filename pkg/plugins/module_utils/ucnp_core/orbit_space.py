"""Total potential, orbit-averaged phase-space geometry and Eddington inversion."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import TYPE_CHECKING, Any, Callable, Union

import numpy as np
import pandas as pd
from scipy import integrate, interpolate

from .errors import InvalidInputError, NonConfiningError
from .ion_cloud import GaussianCloud, enclosed_ions, ionic_potential
from .plasma_params import g_prime

if TYPE_CHECKING:
    from .king_equilibrium import KingEquilibrium

logger = logging.getLogger(__name__)

SIXTEEN_PI2 = 16.0 * math.pi**2
_EDDINGTON_PREFACTOR = 1.0 / (math.sqrt(8.0) * math.pi**2)
_ABEL_PREFACTOR = 4.0 * math.sqrt(2.0) * math.pi

Distribution = Union[Callable[[np.ndarray], np.ndarray], tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True, eq=False)
class PotentialProfile:
    """Tabulated per-mass potential Phi(r) with monotone cubic interpolation.

    ``E_t`` defaults to Phi(r_t). A larger ``E_t`` models a reflecting wall at
    r_t (square-well limit).
    """

    r: np.ndarray
    phi: np.ndarray
    E_t: float | None = None

    def __post_init__(self) -> None:
        r = np.asarray(self.r, dtype=float)
        phi = np.asarray(self.phi, dtype=float)
        if r.ndim != 1 or r.shape != phi.shape or r.size < 2:
            raise InvalidInputError("r and phi must be 1-D arrays of equal length >= 2")
        if r[0] < 0 or np.any(np.diff(r) <= 0):
            raise InvalidInputError("radial grid must be nonnegative and strictly increasing")
        if np.ptp(phi) > 0 and np.any(np.diff(phi) <= 0):
            raise InvalidInputError("potential must increase strictly with r (confining well)")
        E_t = phi[-1] if self.E_t is None else float(self.E_t)
        if E_t < phi[-1]:
            raise InvalidInputError(f"E_t={E_t!r} lies below Phi(r_t)={phi[-1]!r}")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "E_t", float(E_t))

    @classmethod
    def from_king(cls, eq: KingEquilibrium) -> PotentialProfile:
        return cls(r=eq.r, phi=eq.potential, E_t=eq.params.E_t)

    @classmethod
    def from_function(cls, func: Callable[[np.ndarray], np.ndarray], r_t: float, n: int = 800, E_t: float | None = None) -> PotentialProfile:
        r = np.linspace(0.0, r_t, n)
        return cls(r=r, phi=func(r), E_t=E_t)

    @classmethod
    def square_well(cls, r_t: float, E_t: float, n: int = 2) -> PotentialProfile:
        r = np.linspace(0.0, r_t, max(n, 2))
        return cls(r=r, phi=np.zeros_like(r), E_t=E_t)

    @property
    def E0(self) -> float:
        return float(self.phi[0])

    @property
    def r_t(self) -> float:
        return float(self.r[-1])

    @property
    def is_flat(self) -> bool:
        return bool(np.ptp(self.phi) == 0)

    @cached_property
    def _forward(self) -> interpolate.PchipInterpolator:
        return interpolate.PchipInterpolator(self.r, self.phi)

    @cached_property
    def _inverse(self) -> interpolate.PchipInterpolator | None:
        if self.is_flat:
            return None
        return interpolate.PchipInterpolator(self.phi, self.r)

    def __call__(self, r: Any) -> Any:
        r = np.clip(np.asarray(r, dtype=float), self.r[0], self.r[-1])
        return self._forward(r)

    def radius_at(self, E: Any) -> Any:
        """Turning radius Phi^-1(E); r_t above the top of the well, r[0] below its floor."""
        E = np.asarray(E, dtype=float)
        if self._inverse is None:
            return np.where(E > self.phi[0], self.r[-1], self.r[0])
        inner = self._inverse(np.clip(E, self.phi[0], self.phi[-1]))
        return np.where(E >= self.phi[-1], self.r[-1], np.where(E <= self.phi[0], self.r[0], inner))

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame({"r": self.r, "phi": self.phi})


@dataclass(frozen=True, eq=False)
class PhaseGeometry:
    E: np.ndarray
    q: np.ndarray
    dq_dE: np.ndarray
    profile: PotentialProfile

    @property
    def tau(self) -> np.ndarray:
        return SIXTEEN_PI2 * self.q

    @property
    def dtau_dE(self) -> np.ndarray:
        return SIXTEEN_PI2 * self.dq_dE

    @property
    def E0(self) -> float:
        return self.profile.E0

    @property
    def E_t(self) -> float:
        return self.profile.E_t

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame({"E": self.E, "q": self.q, "dq_dE": self.dq_dE, "tau": self.tau})


def electron_potential(r: np.ndarray, n_e: np.ndarray, electron_mass: float, G_prime: float) -> np.ndarray:
    """Per-mass potential of a tabulated electron density, zero at infinity."""
    inner = integrate.cumulative_trapezoid(n_e * r**2, r, initial=0.0)
    outer_c = integrate.cumulative_trapezoid(n_e * r, r, initial=0.0)
    outer = outer_c[-1] - outer_c
    safe_r = np.where(r > 0, r, 1.0)
    shell_term = np.where(r > 0, inner / safe_r, 0.0)
    return -4.0 * math.pi * G_prime * electron_mass * (shell_term + outer)


def total_potential(cloud: GaussianCloud, r: Any, n_e: Any, E_t: float | None = None) -> PotentialProfile:
    """Ions in closed form plus the tabulated electrons, both vanishing at infinity.

    :raises NonConfiningError: if the electrons outnumber the enclosed ions at every radius.
    :raises InvalidInputError: for mismatched or negative densities.
    """
    r = np.asarray(r, dtype=float)
    n_e = np.asarray(n_e, dtype=float)
    if r.shape != n_e.shape:
        raise InvalidInputError("r and n_e must share one grid")
    if np.any(n_e < 0):
        raise InvalidInputError("electron density must be nonnegative")
    electron = cloud.electron
    N_e_r = 4.0 * math.pi * integrate.cumulative_trapezoid(n_e * r**2, r, initial=0.0)
    N_i_r = cloud.charge_ratio * enclosed_ions(cloud, r)
    inside = r > 0
    if np.any(inside) and np.all(N_e_r[inside] > N_i_r[inside]):
        raise NonConfiningError("electrons exceed the enclosed ion charge at every radius")
    phi = ionic_potential(cloud, r) + electron_potential(r, n_e, electron.mass, g_prime(electron))
    return PotentialProfile(r=r, phi=phi, E_t=E_t)


def _as_array(E: Any) -> tuple[np.ndarray, bool]:
    arr = np.asarray(E, dtype=float)
    return np.atleast_1d(arr), arr.ndim == 0


def phase_volume(profile: PotentialProfile, E: Any, epsrel: float = 1e-10) -> tuple[Any, Any]:
    """q(E) = (1/3) int (2(E - Phi))^(3/2) r^2 dr and dq/dE = int (2(E - Phi))^(1/2) r^2 dr.

    The substitution r = r_E (1 - w^2) removes the turning-point singularity.

    :raises InvalidInputError: if any E lies outside [E0, E_t].
    """
    energies, scalar = _as_array(E)
    span = profile.E_t - profile.E0
    tol = 1e-12 * max(abs(span), abs(profile.E_t), 1e-300)
    if np.any(energies < profile.E0 - tol) or np.any(energies > profile.E_t + tol):
        raise InvalidInputError(f"E must lie in [{profile.E0!r}, {profile.E_t!r}]")
    q = np.zeros_like(energies)
    dq = np.zeros_like(energies)
    for i, e in enumerate(np.clip(energies, profile.E0, profile.E_t)):
        if e <= profile.E0:
            continue
        r_E = float(profile.radius_at(e))

        def kinetic(w: float, e: float = e, r_E: float = r_E) -> tuple[float, float]:
            r = r_E * (1.0 - w * w)
            return r, max(2.0 * (e - float(profile(r))), 0.0)

        def q_integrand(w: float) -> float:
            r, k = kinetic(w)
            return k**1.5 * r * r * 2.0 * r_E * w / 3.0

        def dq_integrand(w: float) -> float:
            r, k = kinetic(w)
            return math.sqrt(k) * r * r * 2.0 * r_E * w

        q[i] = integrate.quad(q_integrand, 0.0, 1.0, epsrel=epsrel, limit=200)[0]
        dq[i] = integrate.quad(dq_integrand, 0.0, 1.0, epsrel=epsrel, limit=200)[0]
    if scalar:
        return float(q[0]), float(dq[0])
    return q, dq


def build_geometry(profile: PotentialProfile, n_energy: int = 300, E: Any = None) -> PhaseGeometry:
    """Phase geometry on ``n_energy`` nodes uniform in [E0, E_t] unless ``E`` is given."""
    if E is None:
        if n_energy < 3:
            raise InvalidInputError("need at least 3 energy nodes")
        E = np.linspace(profile.E0, profile.E_t, n_energy)
    E = np.asarray(E, dtype=float)
    q, dq = phase_volume(profile, E)
    return PhaseGeometry(E=E, q=np.asarray(q), dq_dE=np.asarray(dq), profile=profile)


def q_gauss_approx(E: Any, E0: float, E_t: float, scale: float = 1.0) -> Any:
    """Quartic shape (E_t - E)(E - E0)^3 for the Gaussian-cloud phase volume.

    Only a rough guide: the shape vanishes at E_t where the true q is largest,
    so a scale calibrated at mid energy is off by order one near both ends.
    On the eta = 7 King potential :func:`q_gauss_deviation` is about 0.95.
    """
    E = np.asarray(E, dtype=float)
    out = scale * (E_t - E) * (E - E0) ** 3
    return float(out) if out.ndim == 0 else out


def fit_q_gauss_scale(profile: PotentialProfile) -> float:
    """Calibrate the quartic at the middle of the energy range."""
    mid = 0.5 * (profile.E0 + profile.E_t)
    q_mid, _ = phase_volume(profile, mid)
    return q_mid / q_gauss_approx(mid, profile.E0, profile.E_t)


def q_gauss_deviation(profile: PotentialProfile, n: int = 41) -> float:
    """Max relative deviation of the calibrated quartic over the central 90% of [E0, E_t]."""
    span = profile.E_t - profile.E0
    E = np.linspace(profile.E0 + 0.05 * span, profile.E_t - 0.05 * span, n)
    q, _ = phase_volume(profile, E)
    approx = q_gauss_approx(E, profile.E0, profile.E_t, fit_q_gauss_scale(profile))
    return float(np.max(np.abs(approx - q) / q))


def _evaluate(f: Distribution, E: np.ndarray) -> np.ndarray:
    if callable(f):
        return np.asarray(f(E), dtype=float)
    grid, values = f
    return np.interp(E, grid, values, left=values[0], right=0.0)


def density_from_distribution(phi: Any, f: Distribution, E_t: float, n_nodes: int = 96) -> np.ndarray:
    """Forward Abel transform n(Phi) = 4 sqrt(2) pi int f(E) sqrt(E - Phi) dE up to E_t.

    ``f`` is a callable of E or an ``(E_grid, f_values)`` pair, zero above E_t.
    """
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    nodes, weights = np.polynomial.legendre.leggauss(n_nodes)
    x = 0.5 * (nodes + 1.0)
    w = 0.5 * weights
    depth = np.sqrt(np.clip(E_t - phi, 0.0, None))
    out = np.empty_like(phi)
    for i, (p, d) in enumerate(zip(phi, depth)):
        if d == 0:
            out[i] = 0.0
            continue
        v = d * x
        out[i] = d * np.sum(w * _evaluate(f, p + v * v) * 2.0 * v * v)
    return _ABEL_PREFACTOR * out


def eddington_invert(phi: Any, rho: Any, E: Any = None, n_nodes: int = 128) -> tuple[np.ndarray, np.ndarray]:
    """Isotropic f(E) reproducing the density ``rho`` tabulated against ``phi``.

    f(E) = (1/(sqrt(8) pi^2)) d/dE int_E^{Phi_max} (d rho/d Phi) / sqrt(Phi - E) dPhi.

    :raises InvalidInputError: if rho increases with phi or the tables are malformed.
    """
    phi = np.asarray(phi, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if phi.shape != rho.shape or phi.ndim != 1 or phi.size < 4:
        raise InvalidInputError("phi and rho must be 1-D tables of equal length >= 4")
    if np.any(np.diff(phi) <= 0):
        raise InvalidInputError("phi must increase strictly along the table")
    scale = max(float(np.max(np.abs(rho))), 1e-300)
    if np.any(np.diff(rho) > 1e-12 * scale):
        raise InvalidInputError("rho must not increase with phi (non-monotone density)")
    E = phi.copy() if E is None else np.asarray(E, dtype=float)
    if not np.any(rho):
        return E, np.zeros_like(E)
    slope = interpolate.PchipInterpolator(phi, rho).derivative()
    phi_max = phi[-1]
    nodes, weights = np.polynomial.legendre.leggauss(n_nodes)
    x = 0.5 * (nodes + 1.0)
    wts = 0.5 * weights
    reach = np.sqrt(np.clip(phi_max - E, 0.0, None))
    abel = np.array([2.0 * d * np.sum(wts * slope(np.minimum(e + (d * x) ** 2, phi_max))) for e, d in zip(E, reach)])
    f = _EDDINGTON_PREFACTOR * np.gradient(abel, E)
    return E, f
