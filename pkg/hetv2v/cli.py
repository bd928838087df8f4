#!/usr/bin/env python3
import argparse
import hashlib
import json
import logging
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd
import yaml
from tqdm import tqdm

from hetv2v.config import RunManifest, SimConfig, config_to_dict, load_manifest
from hetv2v.core.capacity import capacity_table
from hetv2v.core.cost_model import cost_sweep
from hetv2v.core.link_curves import LinkCurves, PdrCurveFamily, calibrate_pdr, read_family_csv, write_family_csv
from hetv2v.core.radio_model import RatProfile, catalog_to_dict, derive_psr_set, pathloss_to_dict
from hetv2v.csvio import write_csv
from hetv2v.errors import ConfigurationError, DecodeError, HetV2VError
from hetv2v.protocol.baselines import CARHET
from hetv2v.sim.metrics import write_report
from hetv2v.sim.simulator import run_simulation

logger = logging.getLogger("hetv2v")

DEFAULT_MANIFEST = "config.yaml"
CACHE_ENV = "HETV2V_CACHE_DIR"

EXIT_RUNTIME = 1
EXIT_VALIDATION = 2


def cache_dir() -> Path:
    override = os.environ.get(CACHE_ENV)
    return Path(override) if override else Path.home() / ".cache" / "hetv2v"


def _canonical_key(payload: dict) -> str:
    source = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(source.encode("utf-8")).hexdigest()


def _calibrate_one(profile: RatProfile, manifest: RunManifest, seed: int) -> PdrCurveFamily:
    grid = manifest.calibration
    return calibrate_pdr(profile, manifest.load_pathloss(), grid.cbr_levels, grid.distances(),
                         grid.trials, seed, grid.scene)


def _simulate_cell(config: SimConfig, curves: Optional[LinkCurves], run_dir: Path, provenance: dict) -> dict:
    report = run_simulation(config, curves)
    write_report(report, run_dir, provenance)
    with open(run_dir / "config.yaml", "w") as f:
        yaml.safe_dump(config_to_dict(config), f, sort_keys=False)
    row = report.summary()
    row["run_dir"] = run_dir.name
    return row


def _run_dir_name(config: SimConfig) -> str:
    label = re.sub(r"[^A-Za-z0-9_.-]+", "_", config.scheme.label()).strip("_")
    return f"{label}_d{config.density:g}_s{config.seed}"


class HetV2VCLI:
    """Command-line interface for the multi-RAT V2V toolkit."""

    def __init__(self, manifest: Optional[str] = None, scenario: Optional[str] = None,
                 out: Optional[str] = None, seed: Optional[int] = None, jobs: int = 1):
        self.manifest = self._load_manifest(manifest, scenario)
        self.seed = self.manifest.seed if seed is None else seed
        self.out_dir = Path(out or self.manifest.output_dir)
        if jobs < 1:
            raise ConfigurationError("--jobs must be >= 1")
        self.jobs = jobs
        self.catalog = self.manifest.load_catalog()
        self.params = self.manifest.load_pathloss()

    def _load_manifest(self, path: Optional[str], scenario: Optional[str]) -> RunManifest:
        """Load the run manifest; ``config.yaml`` in the working directory is the default."""
        if path is None and Path(DEFAULT_MANIFEST).exists():
            path = DEFAULT_MANIFEST
        return load_manifest(path, scenario)

    @property
    def provenance(self) -> dict:
        return self.manifest.provenance(self.seed)

    def capacity(self) -> Path:
        sweep = self.manifest.capacity
        psr_set = derive_psr_set(self.catalog, self.params)
        table = capacity_table(self.catalog, psr_set, sweep.sweep, sweep.payload, sweep.cbr_max)
        path = write_csv(table, self.out_dir / "capacity.csv", self.provenance)
        print(f"Wrote {len(table)} rows to {path}")
        return path

    def cost(self, t_meas: Optional[Sequence[float]] = None) -> Path:
        sweep = self.manifest.cost
        periods = tuple(t_meas) if t_meas else sweep.t_meas
        if any(t <= 0 for t in periods):
            raise ConfigurationError("--t-meas values must be > 0")
        table = cost_sweep(range(sweep.neighbors_max + 1), sweep.cpu_ghz, sweep.n_rat,
                           periods, sweep.t_update)
        path = write_csv(table, self.out_dir / "cost.csv", self.provenance)
        print(f"Wrote {len(table)} rows to {path}")
        return path

    # -- calibration cache --------------------------------------------------

    def cache_key(self, profile: RatProfile) -> str:
        grid = self.manifest.calibration
        return _canonical_key({
            "rat": catalog_to_dict([profile])[0],
            "pathloss": pathloss_to_dict(self.params),
            "grid": {
                "cbr_levels": list(grid.cbr_levels),
                "distances": grid.distances().tolist(),
                "trials": grid.trials,
            },
            "scene": asdict(grid.scene),
            "seed": self.seed,
        })

    def cache_path(self, profile: RatProfile) -> Path:
        return cache_dir() / f"pdr_{profile.id}_{self.cache_key(profile)[:16]}.csv"

    def _read_cached(self, profile: RatProfile) -> Optional[PdrCurveFamily]:
        path = self.cache_path(profile)
        if not path.exists():
            return None
        try:
            family = read_family_csv(path)
        except DecodeError as e:
            logger.warning("corrupted cache file %s (%s), recalibrating", path, e)
            return None
        if family.rat_id != profile.id or len(family.cbr_levels) != len(self.manifest.calibration.cbr_levels):
            logger.warning("cache file %s does not match RAT %s, recalibrating", path, profile.name)
            return None
        logger.debug("cache hit for RAT %s: %s", profile.name, path)
        return family

    def calibrate(self) -> Tuple[LinkCurves, int]:
        """PDR families for every RAT in the catalog; returns (curves, number recalibrated)."""
        families: Dict[int, PdrCurveFamily] = {}
        missing: List[RatProfile] = []
        for profile in self.catalog:
            family = self._read_cached(profile)
            if family is None:
                missing.append(profile)
            else:
                families[profile.id] = family

        if missing:
            provenance = dict(self.provenance)
            if self.jobs > 1 and len(missing) > 1:
                with ProcessPoolExecutor(max_workers=min(self.jobs, len(missing))) as pool:
                    futures = {pool.submit(_calibrate_one, p, self.manifest, self.seed): p for p in missing}
                    for future in tqdm(as_completed(futures), total=len(futures), desc="calibrate"):
                        families[futures[future].id] = future.result()
            else:
                for profile in tqdm(missing, desc="calibrate"):
                    families[profile.id] = _calibrate_one(profile, self.manifest, self.seed)
            for profile in missing:
                header = dict(provenance, cache_key=self.cache_key(profile))
                write_family_csv(families[profile.id], self.cache_path(profile), header)

        curves = LinkCurves.from_families([families[p.id] for p in self.catalog])
        return curves, len(missing)

    def calibrate_command(self) -> LinkCurves:
        curves, computed = self.calibrate()
        cached = len(self.catalog) - computed
        print(f"Calibrated {computed} RAT(s), {cached} from cache in {cache_dir()}")
        return curves

    # -- simulation grid ----------------------------------------------------

    def simulate(self) -> Path:
        grid = self.manifest.simulation
        configs = grid.configs(self.seed)
        curves = None
        if any(c.scheme.kind == CARHET for c in configs):
            curves, _ = self.calibrate()
        base_dir = self.out_dir / "simulate"
        provenance = self.provenance

        rows = []
        if self.jobs > 1 and len(configs) > 1:
            with ProcessPoolExecutor(max_workers=self.jobs) as pool:
                futures = [
                    pool.submit(_simulate_cell, c, curves if c.scheme.kind == CARHET else None,
                                base_dir / _run_dir_name(c), dict(provenance, seed=c.seed))
                    for c in configs
                ]
                for future in tqdm(as_completed(futures), total=len(futures), desc="simulate"):
                    rows.append(future.result())
        else:
            for c in tqdm(configs, desc="simulate"):
                rows.append(_simulate_cell(c, curves if c.scheme.kind == CARHET else None,
                                           base_dir / _run_dir_name(c), dict(provenance, seed=c.seed)))

        summary = pd.DataFrame(rows)
        if not summary.empty:
            summary = summary.sort_values(["scheme", "density", "seed"], kind="stable").reset_index(drop=True)
        path = write_csv(summary, self.out_dir / "simulate_summary.csv", provenance)
        print(f"Wrote {len(rows)} run(s) to {base_dir} and the grid summary to {path}")
        return path


def main(argv: Optional[List[str]] = None):
    """Main CLI entry point."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--manifest", help="Run manifest (YAML or JSON); defaults to ./config.yaml")
    common.add_argument("--out", help="Output directory (overrides the manifest)")
    common.add_argument("--seed", type=int, help="Master seed (overrides the manifest)")
    common.add_argument("--jobs", type=int, default=1, help="Parallel worker processes")
    common.add_argument("--scenario", choices=["uniform", "mixed"], help="Application requirement preset")
    common.add_argument("--verbose", "-v", action="store_true", help="Debug logging")

    parser = argparse.ArgumentParser(description="Heterogeneous multi-RAT V2V toolkit")
    subparsers = parser.add_subparsers(dest="command")
    subparsers.add_parser("capacity", parents=[common], help="Upper bound of the supported traffic density")
    subparsers.add_parser("calibrate", parents=[common], help="Calibrate and cache PDR curve families")
    subparsers.add_parser("simulate", parents=[common], help="Run the scheme x density simulation grid")
    cost_parser = subparsers.add_parser("cost", parents=[common], help="Processing and signalling cost sweep")
    cost_parser.add_argument("--t-meas", type=float, nargs="+", help="Measurement periods to sweep (seconds)")

    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        cli = HetV2VCLI(args.manifest, args.scenario, args.out, args.seed, args.jobs)
        if args.command == "capacity":
            cli.capacity()
        elif args.command == "calibrate":
            cli.calibrate_command()
        elif args.command == "simulate":
            cli.simulate()
        elif args.command == "cost":
            cli.cost(args.t_meas)
    except ConfigurationError as e:
        print(f"Error: {e}", file=sys.stderr)
        sys.exit(EXIT_VALIDATION)
    except HetV2VError as e:
        print(f"Error: {e}", file=sys.stderr)
        sys.exit(EXIT_RUNTIME)
    except Exception as e:
        logger.debug("unexpected failure", exc_info=True)
        print(f"Error: {e}", file=sys.stderr)
        sys.exit(EXIT_RUNTIME)


if __name__ == '__main__':
    main()
