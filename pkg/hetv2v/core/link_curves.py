"""
PDR-versus-distance curve families, one curve per channel-load level.

Families are calibrated in the simulator (see ``hetv2v.sim.calibration``),
smoothed so that delivery never improves with distance or load, and
persisted as versioned CSV files.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from sklearn.isotonic import IsotonicRegression

from hetv2v.core.radio_model import PathlossParams, RatProfile, sensing_probability
from hetv2v.csvio import read_csv, write_csv
from hetv2v.errors import ConfigurationError, DecodeError, UsageError

logger = logging.getLogger(__name__)

FAMILY_FORMAT = "hetv2v-pdr-family"
FAMILY_VERSION = 1
FAMILY_COLUMNS = ["rat_id", "cbr", "distance_m", "pdr", "samples"]


def default_cbr_levels() -> np.ndarray:
    return np.round(np.arange(10) * 0.1, 6)


def default_distances() -> np.ndarray:
    return np.arange(0.0, 501.0, 10.0)


@dataclass(frozen=True, eq=False)
class PdrCurveFamily:
    """Delivery probability indexed by (CBR level, distance bin)."""
    rat_id: int
    cbr_levels: np.ndarray
    distance_step: float
    values: np.ndarray
    sample_counts: np.ndarray
    distance_start: float = 0.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "cbr_levels", np.asarray(self.cbr_levels, dtype=float))
        object.__setattr__(self, "sample_counts", np.asarray(self.sample_counts, dtype=np.int64))
        if values.ndim != 2 or values.shape[0] != len(self.cbr_levels):
            raise ConfigurationError(
                f"PDR values must be shaped (n_cbr, n_distance), got {values.shape} "
                f"for {len(self.cbr_levels)} CBR levels"
            )
        if np.asarray(self.sample_counts).shape != values.shape:
            raise ConfigurationError("sample_counts must match the shape of values")
        if values.size and (np.any(values < 0) or np.any(values > 1)):
            raise ConfigurationError("PDR values must lie in [0, 1]")
        if self.distance_step <= 0:
            raise ConfigurationError("distance_step must be > 0")

    @classmethod
    def from_arrays(cls, rat_id: int, cbr_levels, distances, values, sample_counts=None) -> "PdrCurveFamily":
        distances = np.asarray(distances, dtype=float)
        if len(distances) > 1:
            steps = np.diff(distances)
            if not np.allclose(steps, steps[0]):
                raise ConfigurationError("distances must be evenly spaced")
            step = float(steps[0])
        else:
            step = 1.0
        values = np.asarray(values, dtype=float)
        if sample_counts is None:
            sample_counts = np.zeros(values.shape, dtype=np.int64)
        return cls(
            rat_id=rat_id,
            cbr_levels=np.asarray(cbr_levels, dtype=float),
            distance_step=step,
            values=values,
            sample_counts=np.asarray(sample_counts, dtype=np.int64),
            distance_start=float(distances[0]) if len(distances) else 0.0,
        )

    @property
    def distances(self) -> np.ndarray:
        return self.distance_start + self.distance_step * np.arange(self.values.shape[1])

    @property
    def is_empty(self) -> bool:
        return self.values.size == 0


def _axis_weights(grid: np.ndarray, x: float):
    """Bracketing indices and weight of ``x`` on ``grid``, clamped to the edges."""
    if len(grid) == 1 or x <= grid[0]:
        return 0, 0, 0.0
    if x >= grid[-1]:
        last = len(grid) - 1
        return last, last, 0.0
    i0 = int(np.searchsorted(grid, x, side="right")) - 1
    i1 = i0 + 1
    return i0, i1, float((x - grid[i0]) / (grid[i1] - grid[i0]))


def pdr_lookup(family: PdrCurveFamily, cbr: float, distance: float) -> float:
    """Bilinear interpolation over (cbr, distance) with edge clamping."""
    if family.is_empty:
        raise UsageError(f"PDR family for RAT {family.rat_id} is empty")
    c0, c1, wc = _axis_weights(family.cbr_levels, cbr)
    d0, d1, wd = _axis_weights(family.distances, distance)
    v = family.values
    low = (1.0 - wd) * v[c0, d0] + wd * v[c0, d1]
    high = (1.0 - wd) * v[c1, d0] + wd * v[c1, d1]
    return float(min(max((1.0 - wc) * low + wc * high, 0.0), 1.0))


def _isotonic_rows(values: np.ndarray, weights: np.ndarray, x: np.ndarray) -> np.ndarray:
    out = np.empty_like(values)
    for i in range(values.shape[0]):
        model = IsotonicRegression(increasing=False, y_min=0.0, y_max=1.0)
        out[i] = model.fit_transform(x, values[i], sample_weight=weights[i])
    return out


def smooth_family(family: PdrCurveFamily) -> PdrCurveFamily:
    """
    Make PDR non-increasing in distance and in CBR, weighting each cell by its
    sample count.  The final running minimum keeps the distance order exact
    after the CBR pass.
    """
    if family.is_empty:
        return family
    weights = np.maximum(family.sample_counts.astype(float), 1.0)
    values = _isotonic_rows(family.values, weights, family.distances)
    values = _isotonic_rows(values.T, weights.T, family.cbr_levels).T
    values = np.minimum.accumulate(np.clip(values, 0.0, 1.0), axis=1)
    return PdrCurveFamily(
        rat_id=family.rat_id,
        cbr_levels=family.cbr_levels.copy(),
        distance_step=family.distance_step,
        values=values,
        sample_counts=family.sample_counts.copy(),
        distance_start=family.distance_start,
    )


def reception_floor(profile: RatProfile, params: PathlossParams, distances) -> np.ndarray:
    """Zero-interference delivery probability: P(shadowed power >= rx_threshold)."""
    return np.asarray(sensing_probability(profile, params, distances, threshold=profile.rx_threshold))


def calibrate_pdr(profile: RatProfile, params: PathlossParams,
                  cbr_levels: Optional[Sequence[float]] = None,
                  distances: Optional[Sequence[float]] = None,
                  trials: int = 2000, seed: int = 0, scene=None,
                  smooth: bool = True) -> PdrCurveFamily:
    """
    Measure the PDR family of ``profile`` in the calibration scene.

    Every CBR level is calibrated independently from a seed derived from
    (seed, rat id, level index), so levels can be recomputed in isolation.
    """
    from hetv2v.sim.calibration import CalibrationScene, measure_level

    cbr_levels = default_cbr_levels() if cbr_levels is None else np.asarray(cbr_levels, dtype=float)
    distances = default_distances() if distances is None else np.asarray(distances, dtype=float)
    if trials < 1:
        raise ConfigurationError("trials must be >= 1")
    if np.any(cbr_levels < 0) or np.any(cbr_levels >= 1):
        raise ConfigurationError("CBR levels must lie in [0, 1)")
    scene = scene or CalibrationScene()

    values = np.zeros((len(cbr_levels), len(distances)))
    counts = np.zeros((len(cbr_levels), len(distances)), dtype=np.int64)
    for i, level in enumerate(cbr_levels):
        cell_seed = np.random.SeedSequence([seed, profile.id, i])
        delivered, samples = measure_level(profile, params, float(level), distances, trials, cell_seed, scene)
        counts[i] = samples
        values[i] = np.divide(delivered, samples, out=np.zeros(len(distances)), where=samples > 0)
        logger.info("RAT %s: CBR level %.2f calibrated (%d samples)", profile.name, level, int(samples.sum()))

    family = PdrCurveFamily.from_arrays(profile.id, cbr_levels, distances, values, counts)
    return smooth_family(family) if smooth else family


def write_family_csv(family: PdrCurveFamily, path, provenance: Optional[dict] = None) -> Path:
    cbr_grid, dist_grid = np.meshgrid(family.cbr_levels, family.distances, indexing="ij")
    frame = pd.DataFrame({
        "rat_id": family.rat_id,
        "cbr": cbr_grid.ravel(),
        "distance_m": dist_grid.ravel(),
        "pdr": family.values.ravel(),
        "samples": family.sample_counts.ravel(),
    }, columns=FAMILY_COLUMNS)
    header = {"format": FAMILY_FORMAT, "version": FAMILY_VERSION}
    header.update(provenance or {})
    return write_csv(frame, path, header)


def read_family_csv(path) -> PdrCurveFamily:
    """Reload a family written by :func:`write_family_csv`; malformed files raise DecodeError."""
    try:
        frame, header = read_csv(path)
    except (OSError, ValueError, pd.errors.ParserError) as e:
        raise DecodeError(f"{path}: unreadable PDR family ({e})") from e
    if header.get("format") != FAMILY_FORMAT or header.get("version") != str(FAMILY_VERSION):
        raise DecodeError(f"{path}: not a version {FAMILY_VERSION} PDR family file")
    if list(frame.columns) != FAMILY_COLUMNS or frame.empty or frame.isnull().values.any():
        raise DecodeError(f"{path}: unexpected PDR family columns or missing values")
    rat_ids = frame["rat_id"].unique()
    if len(rat_ids) != 1:
        raise DecodeError(f"{path}: expected a single rat_id, found {list(rat_ids)}")
    cbr_levels = np.sort(frame["cbr"].unique())
    distances = np.sort(frame["distance_m"].unique())
    if len(frame) != len(cbr_levels) * len(distances):
        raise DecodeError(f"{path}: incomplete (cbr, distance) grid")
    frame = frame.sort_values(["cbr", "distance_m"])
    shape = (len(cbr_levels), len(distances))
    try:
        return PdrCurveFamily.from_arrays(
            int(rat_ids[0]), cbr_levels, distances,
            frame["pdr"].to_numpy(dtype=float).reshape(shape),
            frame["samples"].to_numpy(dtype=np.int64).reshape(shape),
        )
    except ConfigurationError as e:
        raise DecodeError(f"{path}: {e}") from e


@dataclass
class LinkCurves:
    """PDR families of a catalog, keyed by RAT id."""
    families: Dict[int, PdrCurveFamily] = field(default_factory=dict)

    @classmethod
    def from_families(cls, families: Sequence[PdrCurveFamily]) -> "LinkCurves":
        return cls({f.rat_id: f for f in families})

    def __getitem__(self, rat_id: int) -> PdrCurveFamily:
        try:
            return self.families[rat_id]
        except KeyError:
            raise UsageError(f"no PDR family for RAT {rat_id}") from None

    def __contains__(self, rat_id: int) -> bool:
        return rat_id in self.families

    def __len__(self) -> int:
        return len(self.families)

    def __iter__(self) -> Iterator[int]:
        return iter(sorted(self.families))

    def lookup(self, rat_id: int, cbr: float, distance: float) -> float:
        return pdr_lookup(self[rat_id], cbr, distance)

    def covers(self, rat_ids: Sequence[int]) -> bool:
        return all(r in self.families for r in rat_ids)


def as_link_curves(curves) -> LinkCurves:
    if isinstance(curves, LinkCurves):
        return curves
    if isinstance(curves, Mapping):
        return LinkCurves(dict(curves))
    return LinkCurves.from_families(list(curves))
