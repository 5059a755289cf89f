#!/usr/bin/python
# -*- coding: utf-8 -*-
from __future__ import annotations

DOCUMENTATION = r'''
---
module: ucnp_kinetics
short_description: Electron kinetics of ultracold neutral plasmas with globular-cluster methods.
description:
  - Solves the self-consistent King equilibrium of electrons trapped by a Gaussian
    ion cloud, evolves the orbit-averaged Fokker-Planck equation through the
    expansion, and infers electron temperatures from extraction scans.
  - Scenario files are YAML or JSON. Several C(--config) files are merged in
    order over built-in defaults, then C(--set key.path=value) overrides apply.
    The merged tree is validated against the bundled JSON schema.
commands:
  params: Derived length, time and frequency scales and the population laws.
  king: Solved King profiles (CSV) and the equilibrium summary.
  geometry: Phase volume q(E), tau(E) of the King potential.
  evolve: Full scenario run with incremental snapshots.
  explode: Lagrangian-shell Coulomb explosion profiles.
  tbr: Recombination rate and heating table over electron temperature.
  infer: Temperature inference from a two-column (voltage, count) scan CSV.
  reproduce: Datasets of a named comparison figure.
  sweep: A set of scenario variants run on a thread pool.
options:
  --config: Scenario file, repeatable; later files win.
  --set: Override C(key.path=value), value parsed as YAML; repeatable.
  --out: Output directory; without it results go to stdout.
  --seed: Random seed for master-equation sampling.
  --format: csv or json.
  -v: Increase verbosity (INFO, then DEBUG).
exit_codes:
  0: success
  1: other solver error
  2: configuration or invalid input
  3: convergence failure
'''

EXAMPLES = r'''
ucnp-kinetics params
ucnp-kinetics --config scenarios/reference.yaml --out results/king king
ucnp-kinetics --config scenarios/reference.yaml --set scenario.duration_s=2e-6 --out results/run evolve
ucnp-kinetics infer --scan scan.csv --eta 7 --free-electrons 20000
ucnp-kinetics --out results/fig reproduce spike
ucnp-kinetics --out results/sweep sweep --variant "scenario.eta0=5" --variant "scenario.eta0=9"
'''

import argparse
import json
import logging
import math
import os
import sys
from typing import Any, Mapping, Sequence

import numpy as np
import pandas as pd

# Dual-path imports: prefer the installed package; fall back to the checkout
# layout so direct ``python plugins/modules/ucnp_kinetics.py`` runs and the
# subprocess integration tests work from a fresh clone.
try:
    from ucnp_core import config as scenario_config
except ImportError:
    _HERE = os.path.dirname(os.path.abspath(__file__))
    _MODULE_UTILS = os.path.normpath(os.path.join(_HERE, "..", "module_utils"))
    if _MODULE_UTILS not in sys.path:
        sys.path.insert(0, _MODULE_UTILS)
    from ucnp_core import config as scenario_config

from ucnp_core.errors import ConfigError, ConvergenceError, InvalidInputError, UcnpError
from ucnp_core.extraction import ExtractionScan, infer_temperature, population_laws
from ucnp_core.ion_cloud import GaussianCloud, coulomb_explosion_time, evolve_shells, initialize_shells
from ucnp_core.king_equilibrium import KingEquilibrium, solve_selfconsistent
from ucnp_core.orbit_space import PotentialProfile, build_geometry, q_gauss_deviation
from ucnp_core.plasma_params import derive_params, n_star
from ucnp_core.registry import available_figures
from ucnp_core.runner import SUMMARY_FILE, reproduce_figure, resolve_truncation, run, scenario_variants, sweep
from ucnp_core.tbr import rate_table

logger = logging.getLogger("ucnp_kinetics")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
EXPLODE_MULTIPLES = (0.0, 0.5, 1.0, 1.5, 2.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ucnp-kinetics", description="Electron kinetics of ultracold neutral plasmas.")
    parser.add_argument("--config", action="append", default=[], metavar="FILE", help="scenario file (repeatable)")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", dest="overrides", help="override a config key")
    parser.add_argument("--out", metavar="DIR", help="output directory (default: stdout)")
    parser.add_argument("--seed", type=int, help="random seed")
    parser.add_argument("--format", choices=["csv", "json"], default="csv", dest="fmt")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("params", help="derived scales and population laws")
    sub.add_parser("king", help="self-consistent King equilibrium")
    sub.add_parser("geometry", help="phase-space geometry of the King potential")
    sub.add_parser("evolve", help="run the scenario")
    sub.add_parser("explode", help="Coulomb explosion shell profiles")

    tbr = sub.add_parser("tbr", help="recombination rate table")
    tbr.add_argument("--t-min", type=float, default=1.0, help="lowest T_e in K")
    tbr.add_argument("--t-max", type=float, default=200.0, help="highest T_e in K")
    tbr.add_argument("--points", type=int, default=40)

    infer = sub.add_parser("infer", help="infer T_K from an extraction scan")
    infer.add_argument("--scan", required=True, metavar="CSV", help="two columns: voltage, ejected count")
    infer.add_argument("--eta", type=float, default=7.0)
    infer.add_argument("--free-electrons", type=float, help="measured ion excess N_i - N_e")
    infer.add_argument("--T-e-gamma", type=float, dest="T_e_gamma", help="photoelectron temperature in K")
    infer.add_argument("--expansion-time", type=float, default=0.0)

    reproduce = sub.add_parser("reproduce", help="datasets of a comparison figure")
    reproduce.add_argument("name", help=f"one of: {', '.join(available_figures())}")

    sweep_parser = sub.add_parser("sweep", help="run scenario variants in parallel")
    sweep_parser.add_argument("--variant", action="append", default=[], metavar="K=V[;K=V]", help="one scenario variant (repeatable)")
    sweep_parser.add_argument("--workers", type=int, default=None)
    return parser


def configure_logging(verbosity: int) -> None:
    level = logging.WARNING if verbosity <= 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr)


def load_merged(args: argparse.Namespace) -> dict[str, Any]:
    overrides = [scenario_config.parse_override(text) for text in args.overrides]
    if args.seed is not None:
        overrides.append({"seed": args.seed})
    return scenario_config.load_config(args.config, overrides)


def emit(name: str, data: pd.DataFrame | Mapping[str, Any], args: argparse.Namespace) -> str | None:
    """Write one result to ``--out`` or print it to stdout."""
    if isinstance(data, pd.DataFrame):
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            path = os.path.join(args.out, f"{name}.{args.fmt}")
            if args.fmt == "csv":
                data.to_csv(path, index=False)
            else:
                data.to_json(path, orient="records", indent=2)
            return path
        sys.stdout.write(data.to_csv(index=False) if args.fmt == "csv" else data.to_json(orient="records", indent=2) + "\n")
        return None
    text = json.dumps(_plain(data), indent=2, sort_keys=True)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, f"{name}.json")
        with open(path, "w", encoding="utf-8") as f:
            f.write(text + "\n")
        return path
    sys.stdout.write(text + "\n")
    return None


def _plain(value: Any) -> Any:
    if isinstance(value, Mapping):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if math.isfinite(v) else str(v)
    if isinstance(value, (np.integer, np.bool_)):
        return value.item()
    return value


def cmd_params(scenario: scenario_config.Scenario, args: argparse.Namespace) -> None:
    spec = scenario.spec
    derived = derive_params(
        spec,
        spec.central_electron_density,
        density_n_i0=spec.central_ion_density,
        constants=scenario.constants,
    )
    trap, excess = population_laws(spec.N_i, spec.sigma, spec.T_e_gamma, scenario.constants)
    emit(
        "params",
        {
            **derived.as_dict(),
            "N_star": n_star(spec.sigma, spec.T_e_gamma, scenario.constants, spec.electron),
            "population_delta_N": excess,
            "population_N_star": trap,
            "t_CE": coulomb_explosion_time(GaussianCloud.from_spec(spec)),
        },
        args,
    )


def _equilibrium(scenario: scenario_config.Scenario) -> KingEquilibrium:
    return solve_selfconsistent(
        scenario.spec,
        scenario.eta0,
        resolve_truncation(scenario),
        n_grid=scenario.numerics.n_radial,
        tol=scenario.numerics.king_tol,
    )


def cmd_king(scenario: scenario_config.Scenario, args: argparse.Namespace) -> None:
    eq = _equilibrium(scenario)
    emit("king_profiles", eq.profiles(), args)
    emit("king_summary", eq.summary(), args)


def cmd_geometry(scenario: scenario_config.Scenario, args: argparse.Namespace) -> None:
    profile = PotentialProfile.from_king(_equilibrium(scenario))
    geometry = build_geometry(profile, scenario.numerics.n_energy)
    emit("geometry", geometry.frame(), args)
    emit("geometry_summary", {"E0": geometry.E0, "E_t": geometry.E_t, "q_gauss_deviation": q_gauss_deviation(profile)}, args)


def cmd_evolve(scenario: scenario_config.Scenario, args: argparse.Namespace) -> None:
    record = run(scenario, args.out)
    if args.out:
        logger.info("run summary in %s", os.path.join(args.out, SUMMARY_FILE))
        if args.fmt == "json":
            emit("snapshots", record.snapshots, args)
    else:
        emit("snapshots", record.snapshots, args)


def cmd_explode(scenario: scenario_config.Scenario, args: argparse.Namespace) -> None:
    cloud = GaussianCloud.from_spec(scenario.spec)
    t_ce = coulomb_explosion_time(cloud)
    ensemble = initialize_shells(cloud, scenario.numerics.n_shells)
    frames = [evolve_shells(ensemble, m * t_ce).profile().assign(t_over_tCE=m) for m in EXPLODE_MULTIPLES]
    emit("explosion", pd.concat(frames, ignore_index=True), args)


def cmd_tbr(scenario: scenario_config.Scenario, args: argparse.Namespace) -> None:
    if not 0 < args.t_min < args.t_max or args.points < 2:
        raise InvalidInputError("need 0 < --t-min < --t-max and at least 2 points")
    spec = scenario.spec
    cloud = GaussianCloud.from_spec(spec)
    table = rate_table(
        np.geomspace(args.t_min, args.t_max, args.points),
        spec.central_electron_density,
        spec.central_ion_density,
        cloud.t_PE,
        scenario.constants,
    )
    emit("tbr", table, args)


def cmd_infer(scenario: scenario_config.Scenario, args: argparse.Namespace) -> None:
    try:
        frame = pd.read_csv(args.scan)
    except Exception as exc:
        raise ConfigError(f"Error reading {args.scan}: {exc}") from exc
    scan = ExtractionScan.from_frame(
        frame,
        scenario.gap,
        expansion_time=args.expansion_time,
        free_electrons=args.free_electrons,
    )
    result = infer_temperature(
        scan,
        args.eta,
        T_e_gamma=args.T_e_gamma,
        constants=scenario.constants,
        ion=scenario.spec.ion,
    )
    emit("inference", result.as_dict(), args)


def cmd_reproduce(scenario: scenario_config.Scenario, args: argparse.Namespace) -> None:
    out = args.out or os.path.join(os.getcwd(), args.name)
    for path in reproduce_figure(args.name, scenario, out, args.fmt):
        sys.stdout.write(path + "\n")


def cmd_sweep(merged: Mapping[str, Any], args: argparse.Namespace) -> None:
    if not args.variant:
        raise ConfigError("sweep needs at least one --variant")
    overrides = []
    for variant in args.variant:
        override: dict[str, Any] = {}
        for part in filter(None, (p.strip() for p in variant.split(";"))):
            override = scenario_config.deep_merge(override, scenario_config.parse_override(part))
        overrides.append(override)
    out = args.out or os.path.join(os.getcwd(), "sweep")
    results = sweep(scenario_variants(merged, overrides), out, args.workers)
    failed = [r for r in results if r.error]
    for r in results:
        sys.stdout.write(f"{r.scenario_hash[:12]} {r.output_dir} {'FAILED: ' + r.error if r.error else 'ok'}\n")
    if failed:
        raise UcnpError(f"{len(failed)} of {len(results)} scenarios failed")


COMMANDS = {
    "params": cmd_params,
    "king": cmd_king,
    "geometry": cmd_geometry,
    "evolve": cmd_evolve,
    "explode": cmd_explode,
    "tbr": cmd_tbr,
    "infer": cmd_infer,
    "reproduce": cmd_reproduce,
}


def exit_code(exc: UcnpError) -> int:
    if isinstance(exc, (ConfigError, InvalidInputError)):
        return 2
    if isinstance(exc, ConvergenceError):
        return 3
    return 1


def run_module(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    try:
        merged = load_merged(args)
        if args.command == "sweep":
            cmd_sweep(merged, args)
        else:
            COMMANDS[args.command](scenario_config.Scenario.from_config(merged), args)
    except UcnpError as exc:
        sys.stderr.write(f"{args.command}: {exc}\n")
        return exit_code(exc)
    return 0


def main() -> None:
    sys.exit(run_module())


if __name__ == "__main__":
    main()
