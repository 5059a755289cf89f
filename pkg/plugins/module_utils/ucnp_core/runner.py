"""Run scenarios: King initial state, expansion, Fokker-Planck evolution, snapshots."""
from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Iterable, Mapping

import numpy as np
import pandas as pd
from scipy import integrate

from .config import Scenario, config_hash, deep_merge, validate_against_schema
from .errors import ConvergenceError, InvalidInputError, UcnpError
from .extraction import truncation_radius
from .fp_solver import (
    EnergyDistribution,
    collision_step,
    ejection_profile,
    ejection_rate,
    evaporation_rate,
    flux,
    mean_temperature,
    poisson_recouple,
    total_number,
)
from .ion_cloud import GaussianCloud
from .king_equilibrium import solve_selfconsistent
from .orbit_space import density_from_distribution
from .plasma_params import K_B, derive_params
from .registry import get_figure
from .tbr import (
    BOTTLENECK_FACTOR,
    INITIAL_EXPONENT,
    BoundState,
    fp_source_term,
    master_equation_step,
    radial_heating,
    tbr_rate,
    tbr_state,
)

logger = logging.getLogger(__name__)

ISOLATED_SIGMA_MULTIPLE = 50.0
SNAPSHOT_FILE = "snapshots.csv"
SUMMARY_FILE = "run.json"
_CORE_SHARE = 0.2
_TIME_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class RunRecord:
    """Outcome of :func:`run`; ``snapshots`` has one row per recorded time."""

    scenario_hash: str
    snapshots: pd.DataFrame
    profile_files: tuple[str, ...] = ()
    bound: BoundState | None = None
    output_dir: str | None = None

    def summary(self) -> dict[str, Any]:
        last = self.snapshots.iloc[-1].to_dict() if len(self.snapshots) else {}
        first = self.snapshots.iloc[0].to_dict() if len(self.snapshots) else {}
        return {
            "scenario_hash": self.scenario_hash,
            "n_snapshots": int(len(self.snapshots)),
            "initial": {k: float(v) for k, v in first.items()},
            "final": {k: float(v) for k, v in last.items()},
        }


@dataclass
class _Tally:
    spilled: float = 0.0
    captured: float = 0.0
    ejected: float = 0.0


@dataclass(frozen=True, eq=False)
class _Local:
    """Radial profiles and central values of the current state."""

    r: np.ndarray
    phi: np.ndarray
    n_e: np.ndarray
    n_i: np.ndarray
    n_e0: float
    n_i0: float
    N: float
    T_mean: float


class _SnapshotWriter:
    """Append snapshot rows to a CSV as they are produced, with per-snapshot profiles."""

    def __init__(self, out_dir: str | None) -> None:
        self.out_dir = out_dir
        self.files: list[str] = []
        self._rows = 0
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
            path = os.path.join(out_dir, SNAPSHOT_FILE)
            if os.path.exists(path):
                os.remove(path)

    def write(self, row: Mapping[str, float], local: _Local, dist: EnergyDistribution) -> None:
        if not self.out_dir:
            return
        path = os.path.join(self.out_dir, SNAPSHOT_FILE)
        pd.DataFrame([row]).to_csv(path, mode="a", header=self._rows == 0, index=False)
        profile = os.path.join(self.out_dir, f"profile_{self._rows:04d}.csv")
        pd.DataFrame({"r": local.r, "phi": local.phi, "n_e": local.n_e, "n_i": local.n_i}).to_csv(profile, index=False)
        distribution = os.path.join(self.out_dir, f"distribution_{self._rows:04d}.csv")
        dist.frame().to_csv(distribution, index=False)
        self.files.extend([profile, distribution])
        self._rows += 1
        logger.info("snapshot %d written at t=%.4g s", self._rows - 1, row["t"])


def resolve_truncation(scenario: Scenario) -> float:
    """Truncation radius for the scenario's mode (``isolated`` uses 50 sigma)."""
    spec = scenario.spec
    if scenario.r_t_mode == "field":
        return truncation_radius(spec, scenario.r_t_value, full=True)
    if scenario.r_t_mode == "sigma_multiple":
        return scenario.r_t_value * spec.sigma
    return ISOLATED_SIGMA_MULTIPLE * spec.sigma


def snapshot_times(duration: float, interval: float) -> np.ndarray:
    count = int(math.floor(duration / interval * (1.0 + _TIME_EPS)))
    times = interval * np.arange(count + 1)
    if duration - times[-1] > _TIME_EPS * max(duration, interval):
        times = np.append(times, duration)
    return times


def _local_state(dist: EnergyDistribution, cloud: GaussianCloud, electron_mass: float) -> _Local:
    profile = dist.geometry.profile
    cells = (dist.centers, dist.f)
    n_e = np.maximum(density_from_distribution(profile.phi, cells, profile.E_t), 0.0)
    n_i = np.asarray(cloud.density(profile.r), dtype=float)
    return _Local(
        r=profile.r,
        phi=profile.phi,
        n_e=n_e,
        n_i=n_i,
        n_e0=float(n_e[0]),
        n_i0=float(cloud.central_density()),
        N=total_number(dist),
        T_mean=mean_temperature(dist, electron_mass),
    )


def core_temperature(dist: EnergyDistribution, electron_mass: float) -> float:
    """Median generalized temperature over the deepest fifth of the well."""
    fp = flux(dist, electron_mass=electron_mass)
    E = fp.E
    depth = dist.geometry.E_t - dist.geometry.E0
    core = (E <= dist.geometry.E0 + _CORE_SHARE * depth) & np.isfinite(fp.T_G) & (fp.T_G > 0)
    if not np.any(core):
        return mean_temperature(dist, electron_mass)
    return float(np.median(fp.T_G[core]))


def _collision_gamma(scenario: Scenario, cloud: GaussianCloud, local: _Local) -> tuple[float, float]:
    """(Gamma, t_e) at the current central density and mean temperature."""
    if not (local.n_e0 > 0 and local.T_mean > 0 and local.N > 0):
        return 0.0, math.inf
    spec = dataclasses.replace(
        scenario.spec,
        N_e=min(local.N, scenario.spec.N_i),
        sigma=cloud.sigma,
        T_e=local.T_mean,
    )
    derived = derive_params(spec, local.n_e0, density_n_i0=local.n_i0, constants=scenario.constants)
    return derived.gamma_coeff, derived.t_e


def _ejects(scenario: Scenario) -> bool:
    """Strong-encounter ejection applies to relaxing isolated clouds only."""
    return scenario.r_t_mode == "isolated" and scenario.physics.evaporation


def _capture_count(scenario: Scenario, local: _Local, dt: float) -> float:
    """Electrons recombined during ``dt``: the local rate integrated over the cloud."""
    if local.T_mean <= 0 or local.N <= 0:
        return 0.0
    per_density = tbr_rate(1.0, 1.0, local.T_mean, scenario.constants, scenario.spec.electron)
    integrand = 4.0 * math.pi * local.r**2 * local.n_e**2 * local.n_i
    return min(dt * per_density * float(integrate.trapezoid(integrand, local.r)), local.N)


def capture_weights(b: np.ndarray) -> np.ndarray:
    """Initial binding of recombined electrons, b^-5/2 e^b up to the bottleneck."""
    w = np.where(b <= BOTTLENECK_FACTOR, b ** (-INITIAL_EXPONENT) * np.exp(b), 0.0)
    total = float(np.sum(w))
    return w / total if total > 0 else w


def _macro_step(
    scenario: Scenario,
    cloud0: GaussianCloud,
    dist: EnergyDistribution,
    bound: BoundState | None,
    tally: _Tally,
    target: float,
    rng: np.random.Generator,
) -> tuple[EnergyDistribution, BoundState | None]:
    physics = scenario.physics
    numerics = scenario.numerics
    mass = scenario.spec.electron.mass
    t = dist.t
    cloud = cloud0.at(t)
    local = _local_state(dist, cloud, mass)
    gamma, t_e = _collision_gamma(scenario, cloud, local)

    collide = physics.evaporation or physics.tbr_heating
    capture = physics.tbr_heating or physics.master_equation
    dt = target - t
    if collide and math.isfinite(t_e):
        dt = min(dt, numerics.dt_relaxation_fraction * t_e)
    if physics.expansion and cloud.sigma_dot > 0:
        dt = min(dt, numerics.dt_expansion_fraction * cloud.sigma / cloud.sigma_dot)
    t_new = target if target - (t + dt) <= _TIME_EPS * target else t + dt

    if physics.expansion:
        before = dist.evaporated
        _, dist = poisson_recouple(
            dist,
            cloud0.at(t_new),
            tol=numerics.recouple_tol,
            max_iter=numerics.recouple_max_iter,
        )
        tally.spilled += dist.evaporated - before
        local = _local_state(dist, cloud0.at(t_new), mass)

    step = t_new - t
    captured = _capture_count(scenario, local, step) if capture else 0.0
    if captured > 0:
        dist = dist.with_f(dist.f * (1.0 - captured / local.N))
        tally.captured += captured

    source = None
    if physics.tbr_heating and local.T_mean > 0 and local.n_e0 > 0:
        state = tbr_state(local.n_e0, local.n_i0, local.T_mean, cloud0.t_PE, scenario.constants)
        heating = radial_heating(
            state.heating, local.r, local.n_e, local.n_i, scenario.constants.heating_weighting, mass
        )
        source = fp_source_term(dist, heating)

    if collide:
        dist = collision_step(
            dist,
            step,
            gamma if physics.evaporation else 0.0,
            source=source,
            picard_tol=numerics.picard_tol,
            picard_max_iter=numerics.picard_max_iter,
            prefactor=scenario.constants.loss_prefactor,
        )
    else:
        dist = dataclasses.replace(dist, t=t_new)

    if _ejects(scenario) and step > 0:
        removed = np.minimum(-step * ejection_profile(dist, scenario.spec.electron), dist.f * dist.volumes)
        dist = dist.with_f(np.maximum(dist.f - removed / dist.volumes, 0.0))
        tally.ejected += float(np.sum(removed))

    if bound is not None:
        if captured > 0:
            seeded = rng.poisson(captured * capture_weights(bound.b)).astype(float)
            bound = dataclasses.replace(bound, population=bound.population + seeded)
        if local.T_mean > 0 and local.n_e0 > 0:
            bound = master_equation_step(bound, local.n_e0, step, local.T_mean)
        else:
            bound = dataclasses.replace(bound, t=t_new)
    logger.debug("macro step t=%.4g -> %.4g s, N=%.6g", t, t_new, total_number(dist))
    return dist, bound


def _snapshot_row(
    scenario: Scenario,
    cloud0: GaussianCloud,
    dist: EnergyDistribution,
    bound: BoundState | None,
    tally: _Tally,
    local: _Local,
) -> dict[str, float]:
    mass = scenario.spec.electron.mass
    T_K = core_temperature(dist, mass)
    depth = dist.geometry.E_t - dist.geometry.E0
    gamma, _ = _collision_gamma(scenario, cloud0.at(dist.t), local)
    evap = evaporation_rate(dist, gamma, scenario.constants.loss_prefactor) if gamma > 0 else 0.0
    rate = tbr_rate(local.n_e0, local.n_i0, local.T_mean, scenario.constants) if local.T_mean > 0 else 0.0
    return {
        "t": dist.t,
        "sigma": float(cloud0.sigma_at(dist.t)),
        "N_e": local.N,
        "T_mean": local.T_mean,
        "T_K": T_K,
        "eta": mass * depth / (K_B * T_K) if T_K > 0 else math.inf,
        "evaporation_rate": evap,
        "ejection_rate": ejection_rate(dist, scenario.spec.electron) if _ejects(scenario) else 0.0,
        "tbr_rate": rate,
        "evaporated": dist.evaporated - tally.spilled,
        "spilled": tally.spilled,
        "captured": tally.captured,
        "ejected": tally.ejected,
        "bound": bound.total if bound is not None else 0.0,
        "ionized": bound.ionized if bound is not None else 0.0,
    }


def _with_context(exc: UcnpError, step: int, t: float) -> UcnpError:
    message = f"step {step} (t={t:.3g} s): {exc}"
    if isinstance(exc, ConvergenceError):
        return type(exc)(message, exc.diagnostics)
    return type(exc)(message)


def run(scenario: Scenario, out_dir: str | None = None) -> RunRecord:
    """Evolve the scenario and record snapshots, streaming them to ``out_dir`` when given.

    Errors from any stage are re-raised with the step index and time.
    """
    spec = scenario.spec
    numerics = scenario.numerics
    scenario_hash = scenario.hash
    logger.info("run %s: duration %.4g s, toggles %s", scenario_hash[:12], scenario.duration, scenario.physics)

    r_t = resolve_truncation(scenario)
    eq = solve_selfconsistent(spec, scenario.eta0, r_t, n_grid=numerics.n_radial, tol=numerics.king_tol)
    dist = EnergyDistribution.from_king(eq, numerics.n_energy)
    cloud0 = GaussianCloud.from_spec(spec)
    rng = np.random.default_rng(scenario.seed)
    bound = None
    if scenario.physics.master_equation:
        b = BoundState.grid(numerics.n_bound)
        bound = BoundState(b=b, population=np.zeros_like(b))

    writer = _SnapshotWriter(out_dir)
    tally = _Tally()
    rows: list[dict[str, float]] = []

    def record() -> None:
        local = _local_state(dist, cloud0.at(dist.t), spec.electron.mass)
        row = _snapshot_row(scenario, cloud0, dist, bound, tally, local)
        rows.append(row)
        writer.write(row, local, dist)

    record()
    step = 0
    for target in snapshot_times(scenario.duration, scenario.snapshot_interval)[1:]:
        while dist.t < target * (1.0 - _TIME_EPS):
            step += 1
            try:
                dist, bound = _macro_step(scenario, cloud0, dist, bound, tally, float(target), rng)
            except UcnpError as exc:
                raise _with_context(exc, step, dist.t) from exc
        record()

    outcome = RunRecord(
        scenario_hash=scenario_hash,
        snapshots=pd.DataFrame(rows),
        profile_files=tuple(writer.files),
        bound=bound,
        output_dir=out_dir,
    )
    if out_dir:
        with open(os.path.join(out_dir, SUMMARY_FILE), "w", encoding="utf-8") as f:
            json.dump({**outcome.summary(), "config": scenario.config}, f, indent=2, sort_keys=True, default=float)
    logger.info("run %s finished after %d steps", scenario_hash[:12], step)
    return outcome


def write_datasets(datasets: Mapping[str, pd.DataFrame], out_dir: str, fmt: str = "csv") -> list[str]:
    """Write each named frame as ``<name>.csv`` or ``<name>.json`` (records)."""
    if fmt not in {"csv", "json"}:
        raise InvalidInputError(f"Unsupported format: {fmt}")
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for name, frame in datasets.items():
        path = os.path.join(out_dir, f"{name}.{fmt}")
        if fmt == "csv":
            frame.to_csv(path, index=False)
        else:
            frame.to_json(path, orient="records", indent=2)
        paths.append(path)
    return paths


def reproduce_figure(name: str, scenario: Scenario, out_dir: str, fmt: str = "csv") -> list[str]:
    """Compute the datasets of a registered figure and write them to ``out_dir``.

    :raises ConfigError: for an unknown figure name.
    """
    factory = get_figure(name)
    logger.info("reproducing figure %s", name)
    return write_datasets(factory(scenario), out_dir, fmt)


@dataclass(frozen=True)
class SweepResult:
    scenario_hash: str
    output_dir: str
    record: RunRecord | None = None
    error: str | None = None


def sweep(
    scenarios: Iterable[Scenario],
    out_dir: str,
    max_workers: int | None = None,
) -> list[SweepResult]:
    """Run scenarios on a thread pool, each into ``out_dir/<hash prefix>``.

    A failing scenario is reported in its result instead of stopping the sweep.
    """
    scenarios = list(scenarios)
    os.makedirs(out_dir, exist_ok=True)

    def one(scenario: Scenario) -> SweepResult:
        target = os.path.join(out_dir, scenario.hash[:12])
        try:
            return SweepResult(scenario.hash, target, record=run(scenario, target))
        except UcnpError as exc:
            logger.warning("sweep scenario %s failed: %s", scenario.hash[:12], exc)
            return SweepResult(scenario.hash, target, error=str(exc))

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        results = list(pool.map(one, scenarios))
    index = pd.DataFrame(
        [{"scenario_hash": r.scenario_hash, "output_dir": r.output_dir, "error": r.error or ""} for r in results]
    )
    index.to_csv(os.path.join(out_dir, "sweep.csv"), index=False)
    return results


def scenario_variants(base: Mapping[str, Any], overrides: Iterable[Mapping[str, Any]]) -> list[Scenario]:
    """Scenarios built from ``base`` with each override merged in and validated."""
    out = []
    for override in overrides:
        merged = deep_merge(base, override)
        validate_against_schema(merged)
        out.append(Scenario.from_config(merged))
    logger.debug("built %d sweep scenarios from base %s", len(out), config_hash(base)[:12])
    return out
