"""
Run manifests and simulation configuration.

Manifests are YAML (JSON is accepted through the same loader).  Missing
keys fall back to the defaults below; every value is validated when the
manifest is loaded and errors name the offending field.
"""
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import yaml

from hetv2v.core.radio_model import (
    MCS_MODES,
    PathlossParams,
    RatProfile,
    default_catalog,
    load_catalog,
    load_pathloss,
)
from hetv2v.errors import ConfigurationError
from hetv2v.protocol.baselines import CARHET, RANDOM, Scheme, parse_scheme
from hetv2v.protocol.carhet import ProtocolTimers
from hetv2v.sim.calibration import CalibrationScene

SCENARIOS = ("uniform", "mixed")


@dataclass(frozen=True)
class AppProfile:
    fraction: float
    rate_bps: float
    target_distance: float
    reliability: float = 0.9

    def __post_init__(self):
        if not 0 <= self.fraction <= 1:
            raise ConfigurationError(f"app profile fraction must be in [0, 1], got {self.fraction}")
        if self.rate_bps <= 0 or self.target_distance <= 0:
            raise ConfigurationError("app profile rate_bps and target_distance must be > 0")
        if not 0 <= self.reliability <= 1:
            raise ConfigurationError("app profile reliability must be in [0, 1]")


UNIFORM_APPS = (AppProfile(1.0, 1.0e6, 40.0, 0.9),)
MIXED_APPS = (
    AppProfile(0.5, 1.5e6, 40.0, 0.9),
    AppProfile(0.25, 1.0e6, 80.0, 0.9),
    AppProfile(0.25, 0.5e6, 120.0, 0.9),
)


def scenario_apps(name: str) -> Tuple[AppProfile, ...]:
    if name == "uniform":
        return UNIFORM_APPS
    if name == "mixed":
        return MIXED_APPS
    raise ConfigurationError(f"unknown scenario {name!r}; valid scenarios: {', '.join(SCENARIOS)}")


@dataclass(frozen=True)
class SimConfig:
    road_length: float = 3000.0
    lanes: int = 4
    density: float = 40.0
    max_speed: float = 100.0  # km/h
    sim_time: float = 250.0
    warmup: float = 20.0
    seed: int = 0
    scheme: Union[str, Scheme] = CARHET
    app_profiles: Tuple[AppProfile, ...] = UNIFORM_APPS
    payload: int = 1024
    timers: ProtocolTimers = field(default_factory=ProtocolTimers)
    mcs_mode: str = "highest"
    queue_limit: int = 2
    capture_margin: Optional[float] = None
    metrics_window: float = 1.0
    backoff_slots: int = 16
    slot_time: float = 50e-6
    catalog: Optional[Tuple[RatProfile, ...]] = None
    pathloss: Optional[PathlossParams] = None
    record_tx_log: bool = False

    def __post_init__(self):
        if self.catalog is None:
            object.__setattr__(self, "catalog", tuple(default_catalog()))
        else:
            object.__setattr__(self, "catalog", tuple(self.catalog))
        if self.pathloss is None:
            object.__setattr__(self, "pathloss", PathlossParams())
        object.__setattr__(self, "app_profiles", tuple(self.app_profiles))
        object.__setattr__(self, "scheme", parse_scheme(self.scheme, self.catalog))

        if self.road_length <= 0 or self.lanes < 1 or self.max_speed <= 0:
            raise ConfigurationError("road_length, lanes and max_speed must be positive")
        if self.density < 0:
            raise ConfigurationError("density must be >= 0")
        if self.sim_time <= 0 or not 0 <= self.warmup < self.sim_time:
            raise ConfigurationError("need sim_time > 0 and 0 <= warmup < sim_time")
        if self.payload <= 0 or self.queue_limit < 1 or self.metrics_window <= 0:
            raise ConfigurationError("payload, queue_limit and metrics_window must be positive")
        if self.mcs_mode not in MCS_MODES:
            raise ConfigurationError(f"mcs_mode must be one of {MCS_MODES}")
        if not self.app_profiles:
            raise ConfigurationError("at least one app profile is required")
        if not math.isclose(sum(a.fraction for a in self.app_profiles), 1.0, abs_tol=1e-9):
            raise ConfigurationError("app profile fractions must sum to 1")

    def with_overrides(self, **changes) -> "SimConfig":
        return replace(self, **changes)


def assign_profiles(config: SimConfig, n_vehicles: int, rng: np.random.Generator) -> np.ndarray:
    """Profile index per vehicle; shares follow the fractions (largest remainder), order is random."""
    fractions = np.array([a.fraction for a in config.app_profiles])
    counts = np.floor(fractions * n_vehicles).astype(int)
    remainders = fractions * n_vehicles - counts
    for k in np.argsort(-remainders, kind="stable")[: n_vehicles - counts.sum()]:
        counts[k] += 1
    labels = np.repeat(np.arange(len(fractions)), counts)
    return labels[rng.permutation(n_vehicles)]


@dataclass(frozen=True)
class CapacitySweep:
    sweep: Tuple[Tuple[float, str], ...] = ((0.5, "highest"), (1.0, "highest"), (1.5, "highest"))
    payload: int = 1024
    cbr_max: float = 0.6


@dataclass(frozen=True)
class CalibrationGrid:
    cbr_levels: Tuple[float, ...] = tuple(float(v) for v in np.round(np.arange(10) * 0.1, 6))
    distance_max: float = 500.0
    distance_step: float = 10.0
    trials: int = 2000
    scene: CalibrationScene = field(default_factory=CalibrationScene)

    def distances(self) -> np.ndarray:
        n = int(math.floor(self.distance_max / self.distance_step + 1e-9)) + 1
        return self.distance_step * np.arange(n)


@dataclass(frozen=True)
class SimulationGrid:
    schemes: Tuple[str, ...] = ("single_rat(1)", RANDOM, CARHET)
    densities: Tuple[float, ...] = (40.0, 80.0, 120.0)
    repetitions: int = 1
    scenario: str = "uniform"
    base: SimConfig = field(default_factory=SimConfig)

    def configs(self, seed: int) -> List[SimConfig]:
        runs = []
        for scheme in self.schemes:
            for density in self.densities:
                for rep in range(self.repetitions):
                    runs.append(replace(self.base, scheme=scheme, density=density, seed=seed + rep))
        return runs


@dataclass(frozen=True)
class CostSweep:
    neighbors_max: int = 100
    cpu_ghz: Tuple[float, ...] = (0.5, 1.0, 2.0, 3.0)
    n_rat: int = 5
    t_meas: Tuple[float, ...] = (0.2,)
    t_update: float = 1.0


@dataclass
class RunManifest:
    catalog: str = "default"
    pathloss: str = "default"
    output_dir: str = "results"
    seed: int = 1
    capacity: CapacitySweep = field(default_factory=CapacitySweep)
    calibration: CalibrationGrid = field(default_factory=CalibrationGrid)
    simulation: SimulationGrid = field(default_factory=SimulationGrid)
    cost: CostSweep = field(default_factory=CostSweep)
    source: Optional[str] = None
    digest: str = ""

    def load_catalog(self) -> List[RatProfile]:
        return load_catalog(self._resolve(self.catalog))

    def load_pathloss(self) -> PathlossParams:
        return load_pathloss(self._resolve(self.pathloss))

    def _resolve(self, value: str) -> str:
        if value == "default" or self.source is None:
            return value
        path = Path(value)
        if not path.is_absolute() and not path.exists():
            path = Path(self.source).parent / path
        return str(path)

    def provenance(self, seed: Optional[int] = None) -> Dict[str, object]:
        from hetv2v import __version__

        return {
            "tool": f"hetv2v {__version__}",
            "manifest_sha256": self.digest,
            "seed": self.seed if seed is None else seed,
        }


def _section(data: Dict[str, Any], key: str) -> Dict[str, Any]:
    value = data.get(key) or {}
    if not isinstance(value, dict):
        raise ConfigurationError(f"manifest field '{key}' must be a mapping")
    return value


def _build(cls, values: Dict[str, Any], where: str):
    try:
        return cls(**values)
    except TypeError as e:
        raise ConfigurationError(f"manifest field '{where}': {e}") from e
    except ConfigurationError as e:
        raise ConfigurationError(f"manifest field '{where}': {e}") from e


def _parse_capacity(data: Dict[str, Any]) -> CapacitySweep:
    section = dict(_section(data, "capacity"))
    if "sweep" in section:
        sweep = []
        for i, item in enumerate(section["sweep"] or []):
            try:
                rate, mode = float(item["rate_mbps"]), item.get("mcs_mode", "highest")
            except (TypeError, KeyError, ValueError) as e:
                raise ConfigurationError(f"manifest field 'capacity.sweep[{i}]': needs rate_mbps") from e
            if mode not in MCS_MODES:
                raise ConfigurationError(f"manifest field 'capacity.sweep[{i}].mcs_mode': unknown mode {mode!r}")
            if rate <= 0:
                raise ConfigurationError(f"manifest field 'capacity.sweep[{i}].rate_mbps' must be > 0")
            sweep.append((rate, mode))
        section["sweep"] = tuple(sweep)
    return _build(CapacitySweep, section, "capacity")


def _parse_calibration(data: Dict[str, Any]) -> CalibrationGrid:
    section = dict(_section(data, "calibration"))
    if "scene" in section:
        section["scene"] = _build(CalibrationScene, dict(section["scene"] or {}), "calibration.scene")
    if "cbr_levels" in section:
        levels = tuple(float(v) for v in section["cbr_levels"] or ())
        if any(not 0 <= v < 1 for v in levels):
            raise ConfigurationError("manifest field 'calibration.cbr_levels' must lie in [0, 1)")
        section["cbr_levels"] = levels
    grid = _build(CalibrationGrid, section, "calibration")
    if grid.trials < 1:
        raise ConfigurationError("manifest field 'calibration.trials' must be >= 1")
    if grid.distance_step <= 0 or grid.distance_max < 0:
        raise ConfigurationError("manifest field 'calibration.distance_step' must be > 0")
    return grid


def _parse_simulation(data: Dict[str, Any], scenario: Optional[str] = None) -> SimulationGrid:
    section = dict(_section(data, "simulation"))
    grid_keys = {"schemes", "densities", "repetitions", "scenario"}
    grid_values = {k: section.pop(k) for k in list(section) if k in grid_keys}
    if scenario is not None:
        grid_values["scenario"] = scenario
    scenario_name = grid_values.get("scenario", "uniform")
    if "timers" in section:
        section["timers"] = _build(ProtocolTimers, dict(section["timers"] or {}), "simulation.timers")
    if "app_profiles" in section and scenario is None:
        section["app_profiles"] = tuple(
            _build(AppProfile, dict(a), f"simulation.app_profiles[{i}]")
            for i, a in enumerate(section["app_profiles"] or [])
        )
    else:
        section.pop("app_profiles", None)
        section["app_profiles"] = scenario_apps(scenario_name)
    base = _build(SimConfig, section, "simulation")
    schemes = tuple(str(s) for s in grid_values.get("schemes", SimulationGrid.schemes))
    for s in schemes:
        try:
            parse_scheme(s, base.catalog)
        except ConfigurationError as e:
            raise ConfigurationError(f"manifest field 'simulation.schemes': {e}") from e
    densities = tuple(float(d) for d in grid_values.get("densities", SimulationGrid.densities))
    if any(d < 0 for d in densities):
        raise ConfigurationError("manifest field 'simulation.densities' must be >= 0")
    repetitions = int(grid_values.get("repetitions", 1))
    if repetitions < 1:
        raise ConfigurationError("manifest field 'simulation.repetitions' must be >= 1")
    return SimulationGrid(schemes, densities, repetitions, scenario_name, base)


def _parse_cost(data: Dict[str, Any]) -> CostSweep:
    section = dict(_section(data, "cost"))
    if "cpu_ghz" in section:
        section["cpu_ghz"] = tuple(section["cpu_ghz"] or ())
    if "t_meas" in section:
        periods = section["t_meas"]
        section["t_meas"] = tuple(periods) if isinstance(periods, (list, tuple)) else (periods,)
    sweep = _build(CostSweep, section, "cost")
    if sweep.neighbors_max < 0 or sweep.n_rat < 0 or any(g <= 0 for g in sweep.cpu_ghz):
        raise ConfigurationError("manifest field 'cost': counts must be >= 0 and cpu_ghz > 0")
    if not sweep.t_meas or any(t <= 0 for t in sweep.t_meas) or sweep.t_update <= 0:
        raise ConfigurationError("manifest field 'cost': timers must be > 0")
    return sweep


def manifest_from_dict(data: Optional[Dict[str, Any]], source: Optional[str] = None,
                       scenario: Optional[str] = None, digest: Optional[str] = None) -> RunManifest:
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigurationError("a manifest must be a mapping at the top level")
    if scenario is not None and scenario not in SCENARIOS:
        raise ConfigurationError(f"unknown scenario {scenario!r}; valid scenarios: {', '.join(SCENARIOS)}")
    manifest = RunManifest(
        catalog=str(data.get("catalog", "default")),
        pathloss=str(data.get("pathloss", "default")),
        output_dir=str(data.get("output_dir", "results")),
        seed=int(data.get("seed", 1)),
        source=source,
    )
    for name in ("catalog", "pathloss"):
        value = getattr(manifest, name)
        if value != "default" and not Path(manifest._resolve(value)).exists():
            raise ConfigurationError(f"manifest field '{name}': file not found: {value}")
    manifest.capacity = _parse_capacity(data)
    manifest.calibration = _parse_calibration(data)
    manifest.simulation = _parse_simulation(data, scenario)
    if "catalog" in data and data["catalog"] != "default":
        catalog = tuple(manifest.load_catalog())
        manifest.simulation = replace(manifest.simulation, base=replace(manifest.simulation.base, catalog=catalog))
    if "pathloss" in data and data["pathloss"] != "default":
        params = manifest.load_pathloss()
        manifest.simulation = replace(manifest.simulation, base=replace(manifest.simulation.base, pathloss=params))
    manifest.cost = _parse_cost(data)
    manifest.digest = digest or hashlib.sha256(json.dumps(data, sort_keys=True, default=str).encode()).hexdigest()
    return manifest


def load_manifest(path=None, scenario: Optional[str] = None) -> RunManifest:
    """Load a manifest file; ``None`` gives the built-in defaults."""
    if path is None:
        return manifest_from_dict({}, scenario=scenario)
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"manifest not found: {path}")
    raw = path.read_bytes()
    try:
        data = yaml.safe_load(raw)
    except yaml.YAMLError as e:
        raise ConfigurationError(f"manifest {path} is not valid YAML/JSON: {e}") from e
    return manifest_from_dict(data, source=str(path), scenario=scenario,
                              digest=hashlib.sha256(raw).hexdigest())


def config_to_dict(config: SimConfig) -> Dict[str, Any]:
    """Plain YAML-safe view of a config (tuples become lists), stored with each run."""
    data = asdict(config)
    data["scheme"] = config.scheme.label()
    return json.loads(json.dumps(data))
