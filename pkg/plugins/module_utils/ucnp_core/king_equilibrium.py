"""Self-consistent Kramers-Michie-King equilibrium of the electrons in a Gaussian ion cloud.

The solve works in ``u = r / sigma`` with the trap depth ``eta_t(u)``, the
enclosed electron fraction ``N_e(<u)/N_i`` and two unknown parameters:
``lam = z e^2 sigma^2 n_i0 / (eps0 k T_K)`` and ``nu = n_e0 / n_i0``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import pandas as pd
from scipy import integrate, special

from .errors import ConvergenceError, InvalidInputError
from .ion_cloud import GaussianCloud, ionic_potential
from .plasma_params import COULOMB_K, EPS0, K_B, Q_E, PlasmaSpec, g_prime

logger = logging.getLogger(__name__)

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_SQRT_PI_OVER_2 = math.sqrt(math.pi / 2.0)

# Loose tolerance for the continuation path; only the last solve uses the caller's.
_CONTINUATION_TOL = 1e-5
_START_FRACTION = 0.2
_MAX_HALVINGS = 4


@dataclass(frozen=True)
class KingParams:
    eta: float
    T_K: float
    n_e0: float
    E_t: float
    r_t: float
    E0: float
    electron_mass: float

    def __post_init__(self) -> None:
        if not (self.eta > 0 and self.T_K > 0 and self.n_e0 > 0):
            raise InvalidInputError(
                f"KingParams need eta, T_K, n_e0 > 0, got {self.eta!r}, {self.T_K!r}, {self.n_e0!r}"
            )

    @property
    def s2(self) -> float:
        """Velocity scale squared k_B T_K / m_e (J/kg)."""
        return K_B * self.T_K / self.electron_mass

    @property
    def amplitude(self) -> float:
        """Prefactor A of f(E) = A (exp((E_t - E)/s2) - 1), fixed by n_e0 at the center."""
        return self.n_e0 / ((2.0 * math.pi * self.s2) ** 1.5 * king_F(self.eta))


@dataclass(frozen=True, eq=False)
class KingEquilibrium:
    params: KingParams
    spec: PlasmaSpec
    r: np.ndarray
    eta_t_profile: np.ndarray
    n_e_profile: np.ndarray
    n_i_profile: np.ndarray
    T_e_profile: np.ndarray
    N_e_computed: float
    crossing_radius: float
    residual: float
    lam: float
    nu: float
    diagnostics: dict[str, Any] = field(default_factory=dict)

    @property
    def potential(self) -> np.ndarray:
        """Total per-mass potential Phi(r) = E_t - s2 eta_t(r)."""
        return self.params.E_t - self.params.s2 * self.eta_t_profile

    def eta_t(self, r: Any) -> Any:
        """Trap depth at ``r``; zero at and beyond r_t."""
        return np.interp(np.asarray(r, dtype=float), self.r, self.eta_t_profile, right=0.0)

    def profiles(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "r": self.r,
                "eta_t": self.eta_t_profile,
                "n_e": self.n_e_profile,
                "n_i": self.n_i_profile,
                "T_e": self.T_e_profile,
            }
        )

    def summary(self) -> dict[str, float]:
        return {
            "eta": self.params.eta,
            "T_K": self.params.T_K,
            "n_e0": self.params.n_e0,
            "E_t": self.params.E_t,
            "r_t": self.params.r_t,
            "N_e": self.N_e_computed,
            "crossing_radius": self.crossing_radius,
            "tail_exponent": tail_exponent(self),
            "T_mean": mean_temperature(self),
            "T_harmonic": harmonic_temperature(self),
            "residual": self.residual,
        }


def king_F(eta_t: Any) -> Any:
    """F(x) = e^x erf(sqrt x) - sqrt(4x/pi)(1 + 2x/3), evaluated as e^x P(5/2, x).

    :raises InvalidInputError: for negative arguments.
    """
    x = np.asarray(eta_t, dtype=float)
    if np.any(x < 0):
        raise InvalidInputError("king_F needs eta_t >= 0")
    out = np.exp(x) * special.gammainc(2.5, x)
    return float(out) if out.ndim == 0 else out


def density_ratio(eta_t: Any, eta: float) -> Any:
    """F(eta_t)/F(eta) without overflow; eta_t is clipped at zero."""
    x = np.clip(np.asarray(eta_t, dtype=float), 0.0, None)
    return np.exp(x - eta) * special.gammainc(2.5, x) / special.gammainc(2.5, eta)


def king_f_of_E(params: KingParams, E: Any) -> Any:
    """Phase-space density of the King distribution; zero at and above E_t."""
    E = np.asarray(E, dtype=float)
    depth = (params.E_t - E) / params.s2
    f = params.amplitude * np.expm1(np.clip(depth, 0.0, None))
    return float(f) if f.ndim == 0 else f


def temperature_ratio(eta_t: Any) -> Any:
    """T_e/T_K = 1 - (8/(15 sqrt(pi))) eta_t^(5/2) / F(eta_t) = P(7/2, x)/P(5/2, x)."""
    x = np.clip(np.asarray(eta_t, dtype=float), 0.0, None)
    num = special.gammainc(3.5, x)
    den = special.gammainc(2.5, x)
    safe = np.where(den > 0, den, 1.0)
    return np.where(den > 0, num / safe, 0.0)


def temperature_ratio_approx(eta_t: Any) -> Any:
    """Closed-form fit T_e/T_K ~ erf(0.22 eta_t)."""
    return special.erf(0.22 * np.asarray(eta_t, dtype=float))


def temperature_profile(eq: KingEquilibrium, r: Any) -> Any:
    return eq.params.T_K * temperature_ratio(eq.eta_t(r))


def mean_temperature(eq: KingEquilibrium) -> float:
    """Density-weighted T_e over the equilibrium."""
    w = eq.r**2 * eq.n_e_profile
    return float(integrate.trapezoid(w * eq.T_e_profile, eq.r) / integrate.trapezoid(w, eq.r))


def harmonic_temperature(eq: KingEquilibrium) -> float:
    """k T ~ q^2 sigma^2 (n_i0 - n_e0) / (3 eps0), the harmonic-core estimate."""
    spec = eq.spec
    dn = spec.ion.charge_number * spec.central_ion_density - eq.params.n_e0
    return spec.electron.charge**2 * spec.sigma**2 * dn / (3.0 * EPS0 * K_B)


def tail_exponent(eq: KingEquilibrium, r_min: float | None = None, r_max: float | None = None) -> float:
    """Log-log slope of n_e over [r_min, r_max] (default 6 to 12 sigma, capped at 0.9 r_t)."""
    sigma = eq.spec.sigma
    r_min = 6.0 * sigma if r_min is None else r_min
    r_max = min(12.0 * sigma, 0.9 * eq.params.r_t) if r_max is None else r_max
    mask = (eq.r >= r_min) & (eq.r <= r_max) & (eq.n_e_profile > 0)
    if mask.sum() < 3:
        return math.nan
    slope, _ = np.polyfit(np.log(eq.r[mask]), np.log(eq.n_e_profile[mask]), 1)
    return float(slope)


def temp_from_counts(N_i: float, N_e: float, sigma: float, eta: float) -> float:
    """T_K from 1.9 (eta - 2) k T_K = sqrt(2/pi) q^2 (N_i - N_e) / (4 pi eps0 sigma).

    :raises InvalidInputError: if ``eta <= 2`` or the counts are inconsistent.
    """
    if not eta > 2:
        raise InvalidInputError(f"temp_from_counts is valid for eta > 2, got {eta!r}")
    if N_e < 0 or N_i < N_e or not sigma > 0:
        raise InvalidInputError("need N_i >= N_e >= 0 and sigma > 0")
    energy = _SQRT_2_OVER_PI * COULOMB_K * Q_E**2 * (N_i - N_e) / sigma
    return energy / (1.9 * (eta - 2.0) * K_B)


def _psi(u: np.ndarray) -> np.ndarray:
    # Normalized Gaussian-cloud potential, psi(0) = 1
    safe = np.where(u > 0, u, 1.0)
    return np.where(u > 0, _SQRT_PI_OVER_2 * special.erf(safe / math.sqrt(2.0)) / safe, 1.0)


def _psi_prime(u: np.ndarray) -> np.ndarray:
    safe = np.where(u > 0, u, 1.0)
    mass = _SQRT_PI_OVER_2 * special.erf(safe / math.sqrt(2.0)) - safe * np.exp(-0.5 * safe**2)
    return np.where(u > 0, -mass / safe**2, 0.0)


def _initial_guess(u: np.ndarray, eta: float, fraction: float) -> tuple[np.ndarray, np.ndarray]:
    psi_t = _psi(u[-1:])[0]
    lam = eta / (1.0 - psi_t)
    eta_t = lam * (_psi(u) - psi_t)
    deta = lam * _psi_prime(u)
    cumulative = integrate.cumulative_trapezoid(_SQRT_2_OVER_PI * u**2 * density_ratio(eta_t, eta), u, initial=0.0)
    nu = fraction / cumulative[-1]
    return np.vstack([eta_t, deta, nu * cumulative]), np.array([lam, nu])


def _solve_fraction(
    u: np.ndarray,
    y: np.ndarray,
    p: np.ndarray,
    eta: float,
    z: float,
    fraction: float,
    tol: float,
    max_nodes: int,
) -> Any:
    singular = np.array([[0.0, 0.0, 0.0], [0.0, -2.0, 0.0], [0.0, 0.0, 0.0]])

    def fun(x: np.ndarray, yy: np.ndarray, pp: np.ndarray) -> np.ndarray:
        lam, nu = pp
        ratio = density_ratio(yy[0], eta)
        return np.vstack(
            [
                yy[1],
                -lam * (np.exp(-0.5 * x**2) - (nu / z) * ratio),
                _SQRT_2_OVER_PI * x**2 * nu * ratio,
            ]
        )

    def bc(ya: np.ndarray, yb: np.ndarray, pp: np.ndarray) -> np.ndarray:
        return np.array([ya[0] - eta, ya[1], ya[2], yb[0], yb[2] - fraction])

    return integrate.solve_bvp(fun, bc, u, y, p=p, S=singular, tol=tol, max_nodes=max_nodes)


def solve_selfconsistent(
    spec: PlasmaSpec,
    eta: float = 7.0,
    r_t: float | None = None,
    *,
    n_grid: int = 800,
    tol: float = 1e-8,
    max_nodes: int = 100_000,
) -> KingEquilibrium:
    """Solve the Poisson equation with a King electron density for (T_K, n_e0).

    ``r_t`` defaults to 12 sigma. The enclosed-electron fraction is walked up
    from a nearly unscreened cloud to N_e/N_i, each step seeded by the last.

    :raises InvalidInputError: if N_i <= N_e, eta is outside (0.5, 30) or r_t <= 0.
    :raises ConvergenceError: if a continuation step fails after repeated halving.
    """
    if spec.N_i <= spec.N_e:
        raise InvalidInputError("solve_selfconsistent needs N_i > N_e")
    if not 0.5 < eta < 30.0:
        raise InvalidInputError(f"eta must lie in (0.5, 30), got {eta!r}")
    r_t = 12.0 * spec.sigma if r_t is None else r_t
    if not r_t > 0:
        raise InvalidInputError(f"r_t must be positive, got {r_t!r}")

    z = spec.ion.charge_number
    target = spec.N_e / spec.N_i
    u = np.linspace(0.0, r_t / spec.sigma, n_grid)
    start = min(_START_FRACTION, target)
    y, p = _initial_guess(u, eta, max(start, 1e-12))
    mesh = u

    current = 0.0
    fraction = start
    ratio = ((1.0 - target) / (1.0 - start)) ** 0.125 if target > start else 1.0
    continuation_steps = 0
    sol = None
    while True:
        for attempt in range(_MAX_HALVINGS + 1):
            sol = _solve_fraction(mesh, y, p, eta, z, fraction, _CONTINUATION_TOL, max_nodes)
            if sol.success:
                break
            if current == 0.0 or attempt == _MAX_HALVINGS:
                raise ConvergenceError(
                    f"King solve failed at N_e/N_i={fraction:.6g} (eta={eta}): {sol.message}",
                    {"fraction": fraction, "target": target, "eta": eta, "p": sol.p, "status": sol.status},
                )
            ratio = math.sqrt(ratio)
            fraction = 1.0 - (1.0 - current) * ratio
            logger.debug("King continuation halved; retrying N_e/N_i=%.6g", fraction)
        continuation_steps += 1
        mesh, y, p = sol.x, sol.y, sol.p
        current = fraction
        logger.debug("King continuation N_e/N_i=%.6g lam=%.6g nu=%.6g", fraction, p[0], p[1])
        if current >= target:
            break
        fraction = min(1.0 - (1.0 - current) * ratio, target)
        if target - fraction < 1e-12:
            fraction = target

    sol = _solve_fraction(mesh, y, p, eta, z, target, tol, max_nodes)
    if not sol.success:
        raise ConvergenceError(
            f"King solve failed at final tolerance {tol:g} (eta={eta}): {sol.message}",
            {"target": target, "eta": eta, "p": sol.p, "status": sol.status},
        )
    lam, nu = (float(v) for v in sol.p)
    logger.debug("King solve done after %d continuation steps", continuation_steps)
    return _assemble(spec, eta, r_t, u, sol, lam, nu, continuation_steps)


def _assemble(
    spec: PlasmaSpec,
    eta: float,
    r_t: float,
    u: np.ndarray,
    sol: Any,
    lam: float,
    nu: float,
    steps: int,
) -> KingEquilibrium:
    z = spec.ion.charge_number
    n_i0 = spec.central_ion_density
    q = spec.electron.charge
    T_K = z * q**2 * spec.sigma**2 * n_i0 / (EPS0 * K_B * lam)
    n_e0 = nu * n_i0

    cloud = GaussianCloud(N_i=spec.N_i, N_e=spec.N_e, sigma0=spec.sigma, ion=spec.ion, electron=spec.electron)
    m_e = spec.electron.mass
    E_t = float(ionic_potential(cloud, r_t)) - g_prime(spec.electron) * m_e * spec.N_e / r_t
    E0 = E_t - K_B * T_K / m_e * eta
    params = KingParams(eta=eta, T_K=T_K, n_e0=n_e0, E_t=E_t, r_t=r_t, E0=E0, electron_mass=m_e)

    y = sol.sol(u)
    eta_t = np.clip(y[0], 0.0, None)
    eta_t[-1] = 0.0
    r = u * spec.sigma
    n_e = n_e0 * density_ratio(eta_t, eta)
    n_i = n_i0 * np.exp(-0.5 * u**2)
    charge = z * n_i - n_e
    crossing = _first_sign_change(r, charge)
    return KingEquilibrium(
        params=params,
        spec=spec,
        r=r,
        eta_t_profile=eta_t,
        n_e_profile=n_e,
        n_i_profile=n_i,
        T_e_profile=T_K * temperature_ratio(eta_t),
        N_e_computed=float(spec.N_i * y[2, -1]),
        crossing_radius=crossing,
        residual=float(np.max(sol.rms_residuals)),
        lam=lam,
        nu=nu,
        diagnostics={"continuation_steps": steps, "mesh_nodes": int(sol.x.size)},
    )


def _first_sign_change(r: np.ndarray, values: np.ndarray) -> float:
    idx = np.flatnonzero((values[:-1] > 0) & (values[1:] <= 0))
    if idx.size == 0:
        return math.nan
    i = idx[0]
    return float(r[i] + (r[i + 1] - r[i]) * values[i] / (values[i] - values[i + 1]))


def maxwellian_comparison(eq: KingEquilibrium, shell_quartile: float = 0.25, n_v: int = 200) -> pd.DataFrame:
    """Cumulative speed distributions at the shell enclosing ``shell_quartile`` of the electrons.

    Both curves are normalized to the King total; the Maxwellian at T_K keeps
    rising beyond the King escape speed.
    """
    if not 0.0 < shell_quartile < 1.0:
        raise InvalidInputError("shell_quartile must lie in (0, 1)")
    enclosed = integrate.cumulative_trapezoid(eq.r**2 * eq.n_e_profile, eq.r, initial=0.0)
    r_q = float(np.interp(shell_quartile * enclosed[-1], enclosed, eq.r))
    eta_q = float(eq.eta_t(r_q))
    s = math.sqrt(eq.params.s2)
    x_max = math.sqrt(2.0 * eta_q)
    x = np.linspace(0.0, 1.5 * x_max, n_v)
    xc = np.minimum(x, x_max)

    def gaussian_moment(w: np.ndarray) -> np.ndarray:
        # integral of w'^2 exp(-w'^2/2) from 0 to w
        return _SQRT_PI_OVER_2 * special.erf(w / math.sqrt(2.0)) - w * np.exp(-0.5 * w**2)

    king = math.exp(eta_q) * gaussian_moment(xc) - xc**3 / 3.0
    maxwell = math.exp(eta_q) * gaussian_moment(x)
    total = king[-1]
    return pd.DataFrame({"v": x * s, "king": king / total, "maxwellian": maxwell / total}).assign(r=r_q)
