"""External-field truncation, threshold fields and temperature inference from extraction scans."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
import pandas as pd
from scipy import optimize

from .errors import InferenceError, InvalidInputError
from .ion_cloud import GaussianCloud, enclosed_ions
from .king_equilibrium import KingEquilibrium, temp_from_counts
from .plasma_params import COULOMB_K, DEFAULT_CONSTANTS, K_B, Q_E, Constants, PlasmaSpec, Species, n_star

logger = logging.getLogger(__name__)

THRESHOLD_COEFFICIENT = 2.38
_TWO_PI_32 = (2.0 * math.pi) ** 1.5


@dataclass(frozen=True)
class ExtractionScan:
    """Ejected-electron counts against extraction voltage."""

    voltages: np.ndarray
    ejected_counts: np.ndarray
    gap: float
    expansion_time: float = 0.0
    free_electrons: float | None = None

    def __post_init__(self) -> None:
        v = np.asarray(self.voltages, dtype=float)
        c = np.asarray(self.ejected_counts, dtype=float)
        if v.ndim != 1 or v.shape != c.shape or v.size < 3:
            raise InvalidInputError("a scan needs matching voltage and count columns with >= 3 rows")
        if np.any(np.diff(v) <= 0):
            raise InvalidInputError("scan voltages must increase strictly")
        if np.any(np.diff(c) < 0):
            raise InvalidInputError("ejected counts must not decrease with voltage")
        if not self.gap > 0:
            raise InvalidInputError(f"electrode gap must be positive, got {self.gap!r}")
        object.__setattr__(self, "voltages", v)
        object.__setattr__(self, "ejected_counts", c)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, gap: float, **kwargs: Any) -> ExtractionScan:
        columns = list(frame.columns)
        if len(columns) < 2:
            raise InvalidInputError("scan CSV needs two numeric columns (voltage, count)")
        return cls(
            voltages=frame[columns[0]].to_numpy(dtype=float),
            ejected_counts=frame[columns[1]].to_numpy(dtype=float),
            gap=gap,
            **kwargs,
        )

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame({"voltage": self.voltages, "count": self.ejected_counts})


@dataclass(frozen=True)
class InferenceResult:
    n_i0: float
    sigma: float
    T_K: float
    eta_assumed: float
    r_t: float
    V_th: float = math.nan
    N_i: float = math.nan
    N_e: float = math.nan
    diagnostics: dict[str, float] = field(default_factory=dict)

    def as_dict(self) -> dict[str, Any]:
        return {
            "n_i0": self.n_i0,
            "sigma": self.sigma,
            "T_K": self.T_K,
            "eta_assumed": self.eta_assumed,
            "r_t": self.r_t,
            "V_th": self.V_th,
            "N_i": self.N_i,
            "N_e": self.N_e,
            **self.diagnostics,
        }


def truncation_radius(spec: PlasmaSpec, F: float, *, full: bool = False) -> float:
    """Saddle-point radius where the cloud's net charge balances the field ``F`` (V/m).

    The far-field form treats the ion excess as a point charge; ``full=True``
    uses the enclosed Gaussian ion count instead. ``F = 0`` returns infinity.
    """
    if F < 0:
        raise InvalidInputError(f"field must be nonnegative, got {F!r}")
    if spec.N_i <= spec.N_e:
        raise InvalidInputError("truncation needs an ion excess N_i > N_e")
    if F == 0:
        return math.inf
    charge = spec.ion.charge
    far = math.sqrt(COULOMB_K * charge * spec.delta_N / F)
    if not full:
        return far
    cloud = GaussianCloud.from_spec(spec)

    def balance(r: Any) -> Any:
        net = cloud.charge_ratio * enclosed_ions(cloud, r) - spec.N_e
        return COULOMB_K * Q_E * net / np.asarray(r) ** 2 - F

    hi = 4.0 * max(far, 5.0 * spec.sigma)
    r = np.linspace(1e-3 * spec.sigma, hi, 4000)
    values = balance(r)
    peak = int(np.argmax(values))
    if values[peak] < 0:
        logger.warning("field %.4g V/m exceeds the net field of the cloud; no saddle exists", F)
        return float(r[peak])
    while balance(hi) > 0:
        hi *= 2.0
    return float(optimize.brentq(balance, r[peak], hi))


def equivalent_field(spec: PlasmaSpec, r_t: float) -> float:
    """Field whose far-field truncation radius is ``r_t``."""
    if not r_t > 0:
        raise InvalidInputError(f"r_t must be positive, got {r_t!r}")
    return COULOMB_K * spec.ion.charge * spec.delta_N / r_t**2


def threshold_field(n_i0: float, sigma: float, ion: Species | None = None) -> float:
    """Field above which the bare ion cloud holds no electron: 2.38 q_i n_i0 sqrt(2 sigma^2)/(4 pi eps0)."""
    if n_i0 < 0 or not sigma > 0:
        raise InvalidInputError("threshold_field needs n_i0 >= 0 and sigma > 0")
    charge = (ion or Species.ion()).charge
    return THRESHOLD_COEFFICIENT * COULOMB_K * charge * n_i0 * math.sqrt(2.0) * sigma


def density_from_threshold(F_th: float, sigma: float, ion: Species | None = None) -> float:
    """Inverse of :func:`threshold_field` for n_i0."""
    if F_th < 0 or not sigma > 0:
        raise InvalidInputError("density_from_threshold needs F_th >= 0 and sigma > 0")
    charge = (ion or Species.ion()).charge
    return F_th / (THRESHOLD_COEFFICIENT * COULOMB_K * charge * math.sqrt(2.0) * sigma)


def threshold_coefficient_numeric() -> float:
    """Re-derive the 2.38 coefficient by maximizing the Gaussian cloud's field."""

    def negative_field(x: float) -> float:
        enclosed = math.erf(x) - 2.0 / math.sqrt(math.pi) * x * math.exp(-x * x)
        return -enclosed / x**2

    best = optimize.minimize_scalar(negative_field, bounds=(0.1, 5.0), method="bounded", options={"xatol": 1e-10})
    return float(-best.fun * _TWO_PI_32 / (2.0 * math.sqrt(2.0)))


def sigma_from_counts_and_threshold(N_i: float, F_th: float, ion: Species | None = None) -> float:
    """Cloud size implied by the threshold field of N_i ions: F_th is proportional to N_i/sigma^2."""
    if not (N_i > 0 and F_th > 0):
        raise InvalidInputError("need N_i > 0 and F_th > 0")
    charge = (ion or Species.ion()).charge
    return math.sqrt(THRESHOLD_COEFFICIENT * COULOMB_K * charge * N_i * math.sqrt(2.0) / (_TWO_PI_32 * F_th))


@dataclass(frozen=True)
class ThresholdSigma:
    """Inferred size and how far sigma^2 sits from sigma0^2 + (v0 t)^2."""

    sigma: float
    sigma_sq_model: float

    @property
    def check(self) -> float:
        return self.sigma**2 / self.sigma_sq_model - 1.0


def sigma_from_threshold(
    N_i: float,
    V_th: float,
    N_i0: float,
    V_th0: float,
    sigma0: float,
    *,
    v0: float = 0.0,
    delay: float = 0.0,
) -> ThresholdSigma:
    """Cloud size relative to a reference scan taken at the ionization threshold.

    With n_i0 = N_i/(2 pi sigma^2)^(3/2) the threshold field scales as
    N_i/sigma^2, so sigma = sigma0 sqrt((N_i/N_i0)(V_th0/V_th)). The result
    also carries the expansion model sigma0^2 + (v0 delay)^2 for comparison.
    """
    if not (N_i0 > 0 and V_th0 > 0 and sigma0 > 0):
        raise InvalidInputError("the reference scan must have positive N_i0, V_th0 and sigma0")
    if not (N_i > 0 and V_th > 0):
        raise InvalidInputError("need N_i > 0 and V_th > 0")
    if v0 < 0 or delay < 0:
        raise InvalidInputError("v0 and delay must be nonnegative")
    sigma = sigma0 * math.sqrt((N_i / N_i0) * (V_th0 / V_th))
    return ThresholdSigma(sigma=sigma, sigma_sq_model=sigma0**2 + (v0 * delay) ** 2)


@dataclass(frozen=True)
class SigmaFit:
    sigma0: float
    slope: float
    residual: float

    @property
    def velocity(self) -> float:
        return math.sqrt(max(self.slope, 0.0))


def fit_sigma_expansion(times: Sequence[float], sigmas: Sequence[float]) -> SigmaFit:
    """Linear least squares of sigma^2 = sigma0^2 + c t^2."""
    t = np.asarray(times, dtype=float)
    s = np.asarray(sigmas, dtype=float)
    if t.shape != s.shape or t.size < 2:
        raise InvalidInputError("need at least two (time, sigma) pairs")
    design = np.column_stack([np.ones_like(t), t**2])
    coef, residual, *_ = np.linalg.lstsq(design, s**2, rcond=None)
    if coef[0] <= 0:
        raise InvalidInputError("fitted sigma0^2 is not positive")
    return SigmaFit(sigma0=math.sqrt(coef[0]), slope=float(coef[1]), residual=float(residual[0]) if residual.size else 0.0)


def population_laws(
    N_i: float,
    sigma: float,
    T_e_gamma: float,
    constants: Constants = DEFAULT_CONSTANTS,
) -> tuple[float, float]:
    """(N*, N_i - N_e) with N_i - N_e = N* (N_i/N*)^(1/2), clamped to N_i."""
    if not (N_i > 0 and sigma > 0 and T_e_gamma > 0):
        raise InvalidInputError("population_laws inputs must be positive")
    trap = n_star(sigma, T_e_gamma, constants)
    excess = trap * math.sqrt(N_i / trap)
    if excess > N_i:
        logger.warning("N_i=%.4g is below N*=%.4g; the ion excess is clamped to N_i", N_i, trap)
        excess = N_i
    return trap, excess


def temperature_from_population(N_i: float, delta_N: float, sigma: float, constants: Constants = DEFAULT_CONSTANTS) -> float:
    """Photoelectron temperature implied by an observed ion excess (about 8.9 K um / sigma * dN^2/N_i)."""
    if not (N_i > 0 and sigma > 0):
        raise InvalidInputError("need N_i > 0 and sigma > 0")
    energy = COULOMB_K * Q_E**2 * delta_N**2 / (N_i * sigma * constants.n_star_prefactor)
    return energy / (constants.n_star_energy_factor * K_B)


def retained_electrons(cloud: GaussianCloud, F: float, n_probe: int = 2000) -> float:
    """Largest electron count the ion cloud holds against a uniform field ``F``.

    A saddle at radius r holds N_i(<r) - F r^2/(q_i k) electrons; the best r wins.
    """
    if F <= 0:
        return cloud.N_i * cloud.charge_ratio
    reach = COULOMB_K * Q_E

    def held(r: Any) -> Any:
        return cloud.charge_ratio * enclosed_ions(cloud, r) - F * np.asarray(r) ** 2 / reach

    r = np.linspace(0.0, 12.0 * cloud.sigma, n_probe)
    values = held(r)
    k = int(np.argmax(values))
    if values[k] <= 0:
        return 0.0
    lo, hi = r[max(k - 1, 0)], r[min(k + 1, r.size - 1)]
    best = optimize.minimize_scalar(lambda x: -float(held(x)), bounds=(lo, hi), method="bounded")
    return max(float(-best.fun), float(values[k]), 0.0)


def synthetic_scan(eq: KingEquilibrium | PlasmaSpec, gap: float, voltages: Sequence[float]) -> ExtractionScan:
    """Forward model: electrons beyond what the ion cloud can hold at V/gap are ejected."""
    spec = eq.spec if isinstance(eq, KingEquilibrium) else eq
    cloud = GaussianCloud.from_spec(spec)
    v = np.asarray(voltages, dtype=float)
    counts = np.array([spec.N_e - min(spec.N_e, retained_electrons(cloud, volt / gap)) for volt in v])
    counts = np.maximum.accumulate(counts)
    return ExtractionScan(voltages=v, ejected_counts=counts, gap=gap, free_electrons=spec.delta_N)


def locate_threshold(scan: ExtractionScan, fraction: float = 0.99, plateau: float = 0.1, flatness: float = 0.02) -> tuple[float, float]:
    """(V_th, saturated count): first voltage reaching ``fraction`` of the plateau.

    :raises InferenceError: if the last ``plateau`` share of the scan is not flat.
    """
    counts = scan.ejected_counts
    tail = max(2, int(math.ceil(plateau * counts.size)))
    top = counts[-tail:]
    saturated = float(np.mean(top))
    if saturated <= 0 or (float(np.max(top)) - float(np.min(top))) > flatness * saturated:
        raise InferenceError("scan shows no saturation plateau")
    index = int(np.argmax(counts >= fraction * saturated))
    if index >= counts.size - tail:
        raise InferenceError("threshold lies inside the plateau window; extend the scan")
    return float(scan.voltages[index]), saturated


def infer_temperature(
    scan: ExtractionScan,
    eta: float = 7.0,
    *,
    T_e_gamma: float | None = None,
    constants: Constants = DEFAULT_CONSTANTS,
    ion: Species | None = None,
) -> InferenceResult:
    """Infer n_i0, sigma and T_K from a scan with an assumed trap depth ``eta``.

    The saturated count is the trapped electron number. The ion excess comes
    from ``scan.free_electrons`` when measured, otherwise from the population
    law with ``T_e_gamma``.

    :raises InferenceError: if the scan does not saturate or the ion excess
        cannot be determined.
    """
    if not eta > 2:
        raise InvalidInputError(f"eta must exceed 2, got {eta!r}")
    ion = ion or Species.ion()
    V_th, N_e = locate_threshold(scan)
    F_th = V_th / scan.gap
    if scan.free_electrons is not None:
        delta = float(scan.free_electrons)
        N_i = N_e + delta
        sigma = sigma_from_counts_and_threshold(N_i, F_th, ion)
    elif T_e_gamma is not None:
        N_i = N_e
        sigma = sigma_from_counts_and_threshold(N_i, F_th, ion)
        for _ in range(50):
            trap = n_star(sigma, T_e_gamma, constants)
            delta = 0.5 * (trap + math.sqrt(trap * trap + 4.0 * trap * N_e))
            N_i = N_e + delta
            updated = sigma_from_counts_and_threshold(N_i, F_th, ion)
            if abs(updated - sigma) <= 1e-12 * sigma:
                break
            sigma = updated
    else:
        raise InferenceError("need a measured free-electron count or T_e_gamma for the ion excess")
    n_i0 = density_from_threshold(F_th, sigma, ion)
    T_K = temp_from_counts(N_i, N_e, sigma, eta)
    spec = PlasmaSpec(N_i=N_i, N_e=N_e, sigma=sigma, T_e=T_K, T_e_gamma=T_e_gamma or 0.0, ion=ion)
    r_t = truncation_radius(spec, F_th) if N_i > N_e else math.inf
    logger.info("inferred T_K=%.4g K, n_i0=%.4g m^-3 at V_th=%.4g V", T_K, n_i0, V_th)
    return InferenceResult(
        n_i0=n_i0,
        sigma=sigma,
        T_K=T_K,
        eta_assumed=eta,
        r_t=r_t,
        V_th=V_th,
        N_i=N_i,
        N_e=N_e,
        diagnostics={"F_th": F_th, "delta_N": N_i - N_e},
    )
