"""Orbit-averaged Fokker-Planck evolution of the electron energy distribution.

The distribution lives on cells between the energy nodes of a
:class:`PhaseGeometry`; the cell above E_t is a ghost with f = 0. The flux
through an interior node e is

    Pi_e = P Gamma [A_e g_e - L_e B_e]

with g the discrete slope, L the logarithmic mean of the neighbouring cells,
A_e = sum_k Delta_k min(tau_e, tau_k) L_k and B_e the same sum over g_k. The
form is antisymmetric in (e, k), so a Maxwellian carries zero flux exactly and
particle number and energy change only through the node at E_t.

P is the normalization of the operator, ``Constants.loss_prefactor``. The same
value scales the evaporation law, so the loss rate and the boundary flux
agree.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Callable

import numpy as np
import pandas as pd
from scipy import integrate, linalg

from .errors import ContractViolationError, ConvergenceError, InvalidInputError, StepSizeError
from .ion_cloud import GaussianCloud, ionic_potential
from .orbit_space import (
    PhaseGeometry,
    PotentialProfile,
    build_geometry,
    density_from_distribution,
    electron_potential,
)
from .plasma_params import DEFAULT_CONSTANTS, K_B, M_E, Species, g_prime

if TYPE_CHECKING:
    from .king_equilibrium import KingEquilibrium

logger = logging.getLogger(__name__)

FOUR_PI = 4.0 * math.pi


@dataclass(frozen=True, eq=False)
class EnergyDistribution:
    """Cell-averaged f(E) on a phase geometry.

    ``evaporated`` accumulates the electrons lost through E_t (and spilled by
    potential changes); ``f_boundary`` is the value of f at E_t, zero for
    every distribution the solver produces.
    """

    geometry: PhaseGeometry
    f: np.ndarray
    t: float = 0.0
    evaporated: float = 0.0
    f_boundary: float = 0.0

    def __post_init__(self) -> None:
        f = np.asarray(self.f, dtype=float)
        if f.shape != (self.geometry.E.size - 1,):
            raise InvalidInputError(f"expected {self.geometry.E.size - 1} cell values, got shape {f.shape}")
        if np.any(f < 0) or not np.all(np.isfinite(f)):
            raise InvalidInputError("f must be finite and nonnegative")
        object.__setattr__(self, "f", f)

    @classmethod
    def from_function(cls, geometry: PhaseGeometry, func: Callable[[np.ndarray], Any], t: float = 0.0) -> EnergyDistribution:
        centers = 0.5 * (geometry.E[1:] + geometry.E[:-1])
        boundary = float(np.asarray(func(np.array([geometry.E_t])), dtype=float)[0])
        return cls(geometry=geometry, f=np.asarray(func(centers), dtype=float), t=t, f_boundary=boundary)

    @classmethod
    def from_king(cls, eq: KingEquilibrium, n_energy: int = 300) -> EnergyDistribution:
        from .king_equilibrium import king_f_of_E

        geometry = build_geometry(PotentialProfile.from_king(eq), n_energy)
        return cls.from_function(geometry, lambda E: king_f_of_E(eq.params, E))

    @property
    def E(self) -> np.ndarray:
        return self.geometry.E

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.E[1:] + self.E[:-1])

    @property
    def volumes(self) -> np.ndarray:
        return np.diff(self.geometry.tau)

    def with_f(self, f: np.ndarray, **changes: Any) -> EnergyDistribution:
        return dataclasses.replace(self, f=f, f_boundary=0.0, **changes)

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame({"E": self.centers, "f": self.f, "volume": self.volumes})


@dataclass(frozen=True, eq=False)
class FluxProfile:
    """Flux Pi at every energy node (Pi[0] = 0 at the floor) and T_G at interior nodes."""

    E: np.ndarray
    Pi: np.ndarray
    T_G: np.ndarray

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame({"E": self.E, "Pi": self.Pi, "T_G": self.T_G})


def total_number(dist: EnergyDistribution) -> float:
    return float(np.sum(dist.volumes * dist.f))


def mean_temperature(dist: EnergyDistribution, electron_mass: float = M_E) -> float:
    """T = m_e int f tau dE / (k_B N); the kinetic energy per electron is (3/2) k_B T."""
    n = total_number(dist)
    if n <= 0:
        return 0.0
    tau_c = 0.5 * (dist.geometry.tau[1:] + dist.geometry.tau[:-1])
    return float(electron_mass * np.sum(dist.f * tau_c * np.diff(dist.E)) / (K_B * n))


def h_functional(dist: EnergyDistribution) -> float:
    f = dist.f
    pos = f > 0
    return float(np.sum(dist.volumes[pos] * f[pos] * np.log(f[pos])))


def maxwellian(geometry: PhaseGeometry, T: float, N: float, electron_mass: float = M_E) -> EnergyDistribution:
    """Truncated Maxwellian exp(-m_e (E - E0)/(k_B T)) holding N electrons."""
    if not (T > 0 and N >= 0):
        raise InvalidInputError("need T > 0 and N >= 0")
    beta = electron_mass / (K_B * T)
    centers = 0.5 * (geometry.E[1:] + geometry.E[:-1])
    shape = np.exp(-beta * (centers - geometry.E0))
    norm = np.sum(np.diff(geometry.tau) * shape)
    return EnergyDistribution(geometry=geometry, f=N * shape / norm)


def _logmean(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.zeros(np.broadcast(a, b).shape)
    pos = (a > 0) & (b > 0)
    ratio = np.where(pos, a / np.where(pos, b, 1.0), 1.0)
    close = pos & (np.abs(ratio - 1.0) < 1e-6)
    far = pos & ~close
    out[close] = 0.5 * (a[close] + b[close])
    out[far] = (a[far] - b[far]) / np.log(ratio[far])
    return out


@dataclass(frozen=True)
class _Edges:
    """Node quantities for nodes 1..M (node M sits at E_t)."""

    delta: np.ndarray
    tau: np.ndarray
    L: np.ndarray
    g: np.ndarray


def _edges(f: np.ndarray, geometry: PhaseGeometry) -> _Edges:
    E = geometry.E
    centers = 0.5 * (E[1:] + E[:-1])
    delta = np.empty(f.size)
    delta[:-1] = np.diff(centers)
    delta[-1] = E[-1] - centers[-1]
    L = np.empty(f.size)
    L[:-1] = _logmean(f[:-1], f[1:])
    L[-1] = 0.0
    g = np.empty(f.size)
    g[:-1] = np.diff(f) / delta[:-1]
    g[-1] = -f[-1] / delta[-1]
    return _Edges(delta=delta, tau=geometry.tau[1:], L=L, g=g)


def _field_sums(field: _Edges) -> tuple[np.ndarray, np.ndarray]:
    """A_e and B_e at nodes 1..M from the field-particle edges."""

    def min_weighted(values: np.ndarray) -> np.ndarray:
        weighted = field.delta * values
        below = np.cumsum(field.tau * weighted)
        above = np.sum(weighted) - np.cumsum(weighted)
        return below + field.tau * above

    return min_weighted(field.L), min_weighted(field.g)


def flux(
    dist: EnergyDistribution,
    gamma: float = 1.0,
    electron_mass: float = M_E,
    prefactor: float = DEFAULT_CONSTANTS.loss_prefactor,
) -> FluxProfile:
    """Flux through phase space and the generalized temperature -m_e/(k_B dlnf/dE).

    T_G is NaN where f vanishes on either side of a node.
    """
    edges = _edges(dist.f, dist.geometry)
    A, B = _field_sums(edges)
    Pi = np.concatenate([[0.0], prefactor * gamma * (A * edges.g - edges.L * B)])
    slope = np.full(edges.L.size, np.nan)
    ok = edges.L > 0
    slope[ok] = edges.g[ok] / edges.L[ok]
    with np.errstate(divide="ignore", invalid="ignore"):
        T_G = np.where(ok & (slope != 0), -electron_mass / (K_B * slope), np.nan)
    return FluxProfile(E=dist.E, Pi=Pi, T_G=np.concatenate([[np.nan], T_G]))


def _weights(f: np.ndarray, L: np.ndarray) -> np.ndarray:
    """Interpolation weights with L_e = delta_e f_{e-1} + (1 - delta_e) f_e."""
    lo, hi = f[:-1], f[1:]
    diff = lo - hi
    scale = np.maximum(np.abs(lo), np.abs(hi))
    even = np.abs(diff) <= 1e-12 * np.where(scale > 0, scale, 1.0)
    safe = np.where(even, 1.0, diff)
    return np.clip(np.where(even, 0.5, (L[:-1] - hi) / safe), 0.0, 1.0)


def _assemble(
    f_iter: np.ndarray,
    field: _Edges,
    geometry: PhaseGeometry,
    gamma: float,
    source: np.ndarray | None,
    prefactor: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Node coefficients with Pi_e = a_e f_e + b_e f_{e-1}, for nodes 1..M."""
    own = _edges(f_iter, geometry)
    A, B = _field_sums(field)
    P = prefactor * gamma
    B_eff = P * B
    if source is not None:
        B_eff = B_eff + source[1:]
    delta = _weights(f_iter, own.L)
    inner_A = P * A[:-1] / own.delta[:-1]
    inner_B = B_eff[:-1]
    # keep a >= 0 and b <= 0 so the implicit matrix stays an M-matrix
    with np.errstate(divide="ignore", invalid="ignore"):
        hi = np.where(inner_B < 0, inner_A / -inner_B, np.inf)
        lo = np.where(inner_B > 0, 1.0 - inner_A / inner_B, -np.inf)
    delta = np.clip(delta, np.maximum(lo, 0.0), np.minimum(hi, 1.0))
    a = np.zeros(f_iter.size)
    b = np.zeros(f_iter.size)
    a[:-1] = inner_A - inner_B * (1.0 - delta)
    b[:-1] = -inner_A - inner_B * delta
    b[-1] = -P * A[-1] / own.delta[-1]
    volumes = np.diff(geometry.tau)
    return a, b, volumes


def collision_step(
    dist: EnergyDistribution,
    dt: float,
    gamma: float,
    *,
    bath: EnergyDistribution | None = None,
    source: np.ndarray | None = None,
    picard_tol: float = 1e-10,
    picard_max_iter: int = 30,
    prefactor: float = DEFAULT_CONSTANTS.loss_prefactor,
) -> EnergyDistribution:
    """Advance f by one backward-Euler step of the orbit-averaged operator.

    ``bath`` replaces the self-consistent field particles by a fixed
    distribution on the same geometry. ``source`` is the heating term N~ at the
    energy nodes; it enters the flux as Pi - N~ f.

    :raises StepSizeError: if the Picard iteration does not settle.
    """
    if dt < 0:
        raise InvalidInputError("dt must be nonnegative")
    if dt == 0:
        return dist
    geometry = dist.geometry
    if bath is not None and bath.f.size != dist.f.size:
        raise InvalidInputError("bath must share the distribution's energy grid")
    if source is not None:
        source = np.asarray(source, dtype=float)
        if source.shape != geometry.E.shape:
            raise InvalidInputError("source must be given at every energy node")
    field_fixed = _edges(bath.f, geometry) if bath is not None else None

    f_old = dist.f
    f_iter = f_old
    change = math.inf
    for iteration in range(1, picard_max_iter + 1):
        field = field_fixed or _edges(f_iter, geometry)
        a, b, volumes = _assemble(f_iter, field, geometry, gamma, source, prefactor)
        diag = volumes / dt - b
        diag[1:] += a[:-1]
        banded = np.zeros((3, f_old.size))
        banded[0, 1:] = -a[:-1]
        banded[1] = diag
        banded[2, :-1] = b[:-1]
        f_new = np.maximum(linalg.solve_banded((1, 1), banded, volumes * f_old / dt), 0.0)
        scale = max(float(np.max(f_new)), 1e-300)
        change = float(np.max(np.abs(f_new - f_iter))) / scale
        f_iter = f_new
        if change <= picard_tol:
            break
    else:
        raise StepSizeError(
            f"collision step dt={dt:g} s did not converge in {picard_max_iter} iterations",
            {"dt": dt, "change": change, "t": dist.t},
        )
    logger.debug("collision step t=%.4g dt=%.3g converged in %d iterations", dist.t, dt, iteration)
    lost = -b[-1] * f_iter[-1] * dt
    return dist.with_f(f_iter, t=dist.t + dt, evaporated=dist.evaporated + lost)


def evaporation_rate(
    dist: EnergyDistribution,
    gamma: float,
    prefactor: float = DEFAULT_CONSTANTS.loss_prefactor,
) -> float:
    """dN/dt = prefactor Gamma (df/dE)(E_t) int f tau dE; negative for a loss.

    With the same ``prefactor`` as the operator the value equals the flux at
    E_t, and the electrons :func:`collision_step` removes per unit time.

    :raises ContractViolationError: if f does not vanish at E_t.
    """
    if dist.f_boundary != 0:
        raise ContractViolationError(f"evaporation needs f(E_t) = 0, got {dist.f_boundary!r}")
    edges = _edges(dist.f, dist.geometry)
    A, _ = _field_sums(edges)
    return float(prefactor * gamma * edges.g[-1] * A[-1])


def ejection_profile(dist: EnergyDistribution, electron: Species | None = None, *, epsrel: float = 1e-6) -> np.ndarray:
    """Loss per energy cell through single strong encounters, negative for a loss.

    The electron at E is ejected when a partner at E' in the same shell hands
    it E_t - E; both must be above Phi(r). With f counted per unit phase
    volume the coefficient is (2/3) (16 pi^2 G' m_e)^2, the mass-density form
    (16 pi^2 G' m_e^2)^2 divided by m_e^2.

    The E' integral of (E + E' - Phi - E_t)^(3/2) is exact over each cell of
    the piecewise-constant f and the radial integral is adaptive. E sits at
    the cell midpoints: with f vanishing linearly at E_t the E integrand goes
    as 1/(E_t - E), so the total grows with the log of the grid resolution.
    """
    electron = electron or Species.electron()
    profile = dist.geometry.profile
    E_t = profile.E_t
    if not np.any(dist.f):
        return np.zeros_like(dist.f)
    centers = dist.centers
    lower, upper = dist.E[:-1], dist.E[1:]
    outer = dist.f * np.diff(dist.E) / (E_t - centers) ** 2

    def shell(r: float) -> np.ndarray:
        p = float(profile(r))
        out = np.zeros_like(centers)
        ok = centers > p
        if not np.any(ok):
            return out
        base = centers[ok, None] - p - E_t
        x_lo = np.clip(base + np.maximum(lower, p)[None, :], 0.0, None)
        x_hi = np.clip(base + np.maximum(upper, p)[None, :], 0.0, None)
        out[ok] = r * r * outer[ok] * ((0.4 * (x_hi**2.5 - x_lo**2.5)) @ dist.f)
        return out

    total, _ = integrate.quad_vec(shell, float(profile.r[0]), float(profile.r_t), epsrel=epsrel, norm="max")
    coefficient = (2.0 / 3.0) * (16.0 * math.pi**2 * g_prime(electron) * electron.mass) ** 2
    return -coefficient * np.asarray(total)


def ejection_rate(dist: EnergyDistribution, electron: Species | None = None, *, epsrel: float = 1e-6) -> float:
    """Total of :func:`ejection_profile`; zero for f = 0 and quadratic in f."""
    return float(np.sum(ejection_profile(dist, electron, epsrel=epsrel)))


def escape_density_profile(rate: float, r: Any, v: Any) -> np.ndarray:
    """Density of escaping electrons n(r) = |dN/dt| / (4 pi r^2 v)."""
    r = np.asarray(r, dtype=float)
    v = np.asarray(v, dtype=float)
    if np.any(r <= 0) or np.any(v <= 0):
        raise InvalidInputError("escape density needs r > 0 and v > 0")
    return abs(rate) / (FOUR_PI * r**2 * v)


@dataclass(frozen=True, eq=False)
class StationarySolution:
    dist: EnergyDistribution
    Pi0: float
    divergent: bool
    cutoff_energy: float
    f_nodes: np.ndarray


def stationary_coefficients(seed_nodes: np.ndarray, geometry: PhaseGeometry) -> tuple[np.ndarray, np.ndarray]:
    """A(E) = int f' min(tau, tau') dE' and B(E) the same over df'/dE', at every node."""
    E = geometry.E
    tau = geometry.tau
    slope = np.gradient(seed_nodes, E)

    def min_weighted(values: np.ndarray) -> np.ndarray:
        below = integrate.cumulative_trapezoid(values * tau, E, initial=0.0)
        cum = integrate.cumulative_trapezoid(values, E, initial=0.0)
        return below + tau * (cum[-1] - cum)

    return min_weighted(seed_nodes), min_weighted(slope)


def _phi1(x: np.ndarray) -> np.ndarray:
    small = np.abs(x) < 1e-8
    safe = np.where(small, 1.0, x)
    return np.where(small, 1.0 - 0.5 * x, -np.expm1(-safe) / safe)


@dataclass(frozen=True)
class StationaryApproximation:
    """Least-squares scales of the closed-form H and int N/H shapes."""

    c_H: float
    c_N: float
    max_deviation_H: float


def approximation_shapes(x: np.ndarray, eta: float) -> tuple[np.ndarray, np.ndarray]:
    """Shapes of H and of int_{E0}^{E} N/H in x = (E - E0)/(E_t - E0)."""
    H = x**3 * np.exp((11.0 * (1.0 - x) + 2.0 * eta) / 3.0) * eta ** (1.0 / 3.0)
    NH = eta * x / (1.0 - math.exp(-eta / 2.0))
    return H, NH


def calibrate_approximation(geometry: PhaseGeometry, seed_nodes: np.ndarray, eta: float) -> StationaryApproximation:
    A, B = stationary_coefficients(seed_nodes, geometry)
    x = (geometry.E - geometry.E0) / (geometry.E_t - geometry.E0)
    shape_H, shape_NH = approximation_shapes(x, eta)
    interior = slice(1, -1)
    c_H = float(np.linalg.lstsq(shape_H[interior, None], A[interior], rcond=None)[0][0])
    ratio = np.zeros_like(A)
    ratio[interior] = -B[interior] / A[interior]
    integral = integrate.cumulative_trapezoid(ratio, geometry.E, initial=0.0)
    c_N = float(np.linalg.lstsq(shape_NH[interior, None], integral[interior], rcond=None)[0][0])
    deviation = float(np.max(np.abs(c_H * shape_H[interior] - A[interior]) / A[interior]))
    return StationaryApproximation(c_H=c_H, c_N=c_N, max_deviation_H=deviation)


def stationary_solve(
    geometry: PhaseGeometry,
    Pi0: float,
    seed: EnergyDistribution | Callable[[np.ndarray], Any],
    source: np.ndarray | None = None,
    *,
    gamma: float = 1.0,
    approximation: StationaryApproximation | None = None,
    eta: float | None = None,
    prefactor: float = DEFAULT_CONSTANTS.loss_prefactor,
) -> StationarySolution:
    """Steady f for an outward flux of magnitude ``Pi0`` with f(E_t) = 0.

    Solves P Gamma (A f' - B f) - N~ f = -Pi0 downward from E_t, with A and
    B from the seed, by exact exponential integration over each interval.
    ``Pi0 = 0`` returns the homogeneous solution normalized to the seed. A
    positive flux with no positive source at E0 diverges at the centre; the
    result is then capped below the energy where f first reaches the seed's
    central value and ``divergent`` is set.
    """
    if Pi0 < 0:
        raise InvalidInputError("Pi0 is the magnitude of the outward flux and must be >= 0")
    E = geometry.E
    if isinstance(seed, EnergyDistribution):
        seed_nodes = np.interp(E, seed.centers, seed.f, right=0.0)
        seed_number = total_number(seed)
    else:
        seed_nodes = np.asarray(seed(E), dtype=float)
        seed_number = float(np.sum(np.diff(geometry.tau) * 0.5 * (seed_nodes[1:] + seed_nodes[:-1])))
    P = prefactor * gamma
    if approximation is not None:
        if eta is None:
            raise InvalidInputError("the closed-form approximation needs eta")
        x = (E - geometry.E0) / (geometry.E_t - geometry.E0)
        shape_H, _ = approximation_shapes(x, eta)
        A = approximation.c_H * shape_H
        slope = -approximation.c_N * eta / ((1.0 - math.exp(-eta / 2.0)) * (geometry.E_t - geometry.E0))
        B = slope * A
    else:
        A, B = stationary_coefficients(seed_nodes, geometry)
    B_eff = P * B
    if source is not None:
        source = np.asarray(source, dtype=float)
        if source.shape != E.shape:
            raise InvalidInputError("source must be given at every energy node")
        B_eff = B_eff + source

    A_mid = 0.5 * (A[1:] + A[:-1])
    p = 0.5 * (B_eff[1:] + B_eff[:-1]) / (P * A_mid)
    width = np.diff(E)
    f = np.zeros(E.size)
    if Pi0 == 0:
        growth = np.concatenate([[0.0], np.cumsum(p * width)])
        f = np.exp(growth - growth.max())
        cells = 0.5 * (f[1:] + f[:-1])
        f *= seed_number / np.sum(np.diff(geometry.tau) * cells)
        dist = EnergyDistribution(geometry=geometry, f=np.maximum(0.5 * (f[1:] + f[:-1]), 0.0))
        return StationarySolution(dist=dist, Pi0=0.0, divergent=False, cutoff_energy=geometry.E0, f_nodes=f)

    s = Pi0 / (P * A_mid)
    for j in range(E.size - 2, -1, -1):
        x = p[j] * width[j]
        f[j] = f[j + 1] * math.exp(-x) + s[j] * width[j] * float(_phi1(np.array(x)))
    divergent = source is None or not source[0] > 0
    cutoff = geometry.E0
    if divergent:
        cap = float(seed_nodes[0])
        above = np.flatnonzero(f >= cap)
        if above.size:
            k = above[-1]
            cutoff = float(E[k])
            f[:k] = f[k]
        logger.warning("Stationary solution diverges at the centre; capped below E=%.4g", cutoff)
    dist = EnergyDistribution(geometry=geometry, f=0.5 * (f[1:] + f[:-1]))
    return StationarySolution(dist=dist, Pi0=Pi0, divergent=divergent, cutoff_energy=cutoff, f_nodes=f)


def kramers_limit_check(
    E: Any,
    f: Any,
    T_e: float,
    electron_mass: float = M_E,
    window_kT: float = 3.0,
) -> float:
    """Max |d/dx [f + df/dx]| / max f over x = m_e (E - E_0)/(k_B T_e) > window_kT.

    The bracket is formed at midpoints with exponential-fitting weights, so
    any f = a exp(-x) + c gives zero up to rounding.
    """
    E = np.asarray(E, dtype=float)
    f = np.asarray(f, dtype=float)
    x = electron_mass * (E - E[0]) / (K_B * T_e)
    keep = (x > window_kT) & (f > 0)
    x, f = x[keep], f[keep]
    if x.size < 3:
        return 0.0
    h = np.diff(x)
    weight = 1.0 / h - 1.0 / np.expm1(h)
    bracket = weight * f[:-1] + (1.0 - weight) * f[1:] + np.diff(f) / h
    mid = 0.5 * (x[1:] + x[:-1])
    return float(np.max(np.abs(np.diff(bracket) / np.diff(mid))) / np.max(f))


@dataclass(frozen=True, eq=False)
class VelocityDistribution:
    """Isotropic f(v) on uniform cells of [0, v_max] in a square well of volume ``volume``."""

    v_edges: np.ndarray
    f: np.ndarray
    volume: float = 1.0
    t: float = 0.0

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.v_edges[1:] + self.v_edges[:-1])

    @property
    def shell_volumes(self) -> np.ndarray:
        return np.diff(self.v_edges**3) / 3.0

    def moment(self, k: int) -> float:
        """int v^(2k) f d^3x d^3v."""
        return float(FOUR_PI * self.volume * np.sum(self.f * self.centers ** (2 * k) * self.shell_volumes))


def energy_moment(dist: EnergyDistribution, k: int) -> float:
    """int (2E)^k f dtau, the counterpart of :meth:`VelocityDistribution.moment`."""
    return float(np.sum(dist.f * (2.0 * (dist.centers - dist.geometry.E0)) ** k * dist.volumes))


def velocity_space_step(
    vd: VelocityDistribution,
    dt: float,
    gamma: float,
    cfl: float = 0.2,
    prefactor: float = DEFAULT_CONSTANTS.loss_prefactor,
) -> VelocityDistribution:
    """Explicit conservative step of the isotropic velocity-space equation.

    J = P Gamma [f A(v) + (v/3) df/dv B(v)] with A = int_0^v f v'^2 dv' and
    B = v^-2 int_0^v f v'^4 dv' + v int_v^vmax f v' dv'; f = 0 at v_max.
    """
    edges = vd.v_edges
    centers = vd.centers
    shells = vd.shell_volumes
    m2 = shells
    m4 = np.diff(edges**5) / 5.0
    m1 = np.diff(edges**2) / 2.0
    faces = edges[1:]
    spacing = np.append(np.diff(centers), edges[-1] - centers[-1])
    f = vd.f.copy()
    t_left = dt
    while t_left > 0:
        A = np.cumsum(f * m2)
        B = np.cumsum(f * m4) / faces**2 + faces * (np.sum(f * m1) - np.cumsum(f * m1))
        f_face = np.empty_like(f)
        f_face[:-1] = 0.5 * (f[:-1] + f[1:])
        f_face[-1] = 0.0
        dfdv = np.empty_like(f)
        dfdv[:-1] = np.diff(f) / np.diff(centers)
        dfdv[-1] = -f[-1] / (edges[-1] - centers[-1])
        # explicit stability: each cell couples to both faces
        conductance = prefactor * gamma * faces * np.abs(B) / 3.0 / spacing
        rate = (conductance + np.concatenate([[0.0], conductance[:-1]]) + prefactor * gamma * A) / shells
        step = min(t_left, cfl / max(float(np.max(rate)), 1e-300))
        J = prefactor * gamma * (f_face * A + faces / 3.0 * dfdv * B)
        net = J.copy()
        net[1:] -= J[:-1]
        f = np.maximum(f + step * net / shells, 0.0)
        t_left -= step
    return dataclasses.replace(vd, f=f, t=vd.t + dt)


def poisson_recouple(
    dist: EnergyDistribution,
    cloud: GaussianCloud,
    *,
    tol: float = 1e-6,
    max_iter: int = 50,
    n_nodes: int = 64,
) -> tuple[PotentialProfile, EnergyDistribution]:
    """Re-solve Poisson for new ions while holding f fixed as a function of tau.

    Each iteration remaps f onto the geometry of the current potential
    through the cumulative number N(tau), rebuilds n_e(r), and corrects the
    potential with a screened (Helmholtz) Newton step. Electrons whose phase
    volume no longer fits below E_t are added to ``evaporated``.

    :raises ConvergenceError: if the potential change stays above
        ``tol`` times the well depth after ``max_iter`` iterations.
    """
    profile = dist.geometry.profile
    r = profile.r
    wall = profile.E_t - profile.phi[-1]
    n_energy = dist.E.size
    tau_old = dist.geometry.tau
    cumulative = np.concatenate([[0.0], np.cumsum(dist.volumes * dist.f)])
    total = cumulative[-1]
    electron = cloud.electron
    gp = g_prime(electron)
    phi = profile.phi.copy()
    history: list[float] = []
    for iteration in range(1, max_iter + 1):
        current = PotentialProfile(r=r, phi=phi, E_t=phi[-1] + wall)
        geometry = build_geometry(current, n_energy)
        counts = np.interp(geometry.tau, tau_old, cumulative, right=total)
        volumes = np.diff(geometry.tau)
        f_new = np.where(volumes > 0, np.diff(counts) / np.where(volumes > 0, volumes, 1.0), 0.0)
        remapped = EnergyDistribution(geometry=geometry, f=np.maximum(f_new, 0.0), t=dist.t)
        cells = (remapped.centers, remapped.f)
        n_e = density_from_distribution(phi, cells, current.E_t, n_nodes)
        target = np.asarray(ionic_potential(cloud, r)) + electron_potential(r, n_e, electron.mass, gp)
        kappa2 = FOUR_PI * abs(gp) * electron.mass * np.abs(_density_slope(phi, cells, current.E_t, n_nodes))
        correction = target - phi
        step = correction + _helmholtz(r, kappa2, kappa2 * correction)
        depth = current.E_t - phi[0]
        change = float(np.max(np.abs(step))) / depth
        history.append(change)
        logger.debug("recouple iteration %d: relative change %.3g", iteration, change)
        if change <= tol:
            spilled = total - counts[-1]
            return current, dataclasses.replace(remapped, evaporated=dist.evaporated + spilled)
        phi = phi + step
        if np.any(np.diff(phi) <= 0):
            raise ConvergenceError(
                "Poisson recouple produced a non-confining potential",
                {"iteration": iteration, "history": history},
            )
    raise ConvergenceError(
        f"Poisson recouple did not converge in {max_iter} iterations (last change {history[-1]:.3g})",
        {"iterations": max_iter, "history": history},
    )


def _density_slope(phi: np.ndarray, cells: tuple[np.ndarray, np.ndarray], E_t: float, n_nodes: int) -> np.ndarray:
    """dn/dPhi at fixed f(E): -2 sqrt(2) pi * 2 int_0^sqrt(E_t - Phi) f(Phi + w^2) dw."""
    nodes, weights = np.polynomial.legendre.leggauss(n_nodes)
    x = 0.5 * (nodes + 1.0)
    w = 0.5 * weights
    grid, values = cells
    out = np.empty_like(phi)
    for i, p in enumerate(phi):
        d = math.sqrt(max(E_t - p, 0.0))
        v = d * x
        out[i] = d * np.sum(w * np.interp(p + v * v, grid, values, left=values[0], right=0.0))
    return -4.0 * math.sqrt(2.0) * math.pi * out


def _helmholtz(r: np.ndarray, kappa2: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve (1/r^2)(r^2 u')' - kappa^2 u = rhs with u'(0) = 0 and u' = -u/r at the outer edge."""
    faces = np.concatenate([[r[0]], 0.5 * (r[1:] + r[:-1]), [r[-1]]])
    vol = np.diff(faces**3) / 3.0
    h = np.diff(r)
    conduct = faces[1:-1] ** 2 / h
    diag = -kappa2 * vol
    upper = np.zeros_like(r)
    lower = np.zeros_like(r)
    diag[:-1] -= conduct
    diag[1:] -= conduct
    upper[1:] = conduct
    lower[:-1] = conduct
    diag[-1] -= r[-1]
    banded = np.vstack([upper, diag, lower])
    return linalg.solve_banded((1, 1), banded, rhs * vol)
