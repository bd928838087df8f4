"""
RAT catalog, log-distance pathloss with log-normal shadowing, and the
packet sensing ratio (PSR) curves derived from them.
"""
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
import yaml
from scipy.stats import norm

from hetv2v.csvio import write_csv
from hetv2v.errors import ConfigurationError

ArrayLike = Union[float, Sequence[float], np.ndarray]

MCS_HIGHEST = "highest"
MCS_QPSK_HALF = "qpsk_half"
MCS_MODES = (MCS_HIGHEST, MCS_QPSK_HALF)

# ETSI default rate for 802.11p in a 10 MHz channel
QPSK_HALF_RATE_10MHZ = 6.0


@dataclass(frozen=True)
class RatProfile:
    """Physical parameters of one radio access technology."""
    id: int
    name: str
    carrier_freq: float         # GHz
    bandwidth: float            # MHz
    tx_power: float             # dBm
    noise_floor: float          # dBm
    rx_threshold: float         # dBm
    cs_threshold: float         # dBm
    data_rate: float            # Mbps
    per_packet_overhead: float = 0.0   # s
    qpsk_half_rate: Optional[float] = None  # Mbps

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ConfigurationError(f"RAT {self.name!r}: bandwidth must be > 0")
        if self.data_rate <= 0:
            raise ConfigurationError(f"RAT {self.name!r}: data_rate must be > 0")
        if self.per_packet_overhead < 0:
            raise ConfigurationError(f"RAT {self.name!r}: per_packet_overhead must be >= 0")

    def rate_for(self, mcs_mode: str) -> float:
        """Data rate in Mbps for an MCS mode (``highest`` or ``qpsk_half``)."""
        if mcs_mode == MCS_HIGHEST:
            return self.data_rate
        if mcs_mode == MCS_QPSK_HALF:
            if self.qpsk_half_rate is not None:
                return self.qpsk_half_rate
            return QPSK_HALF_RATE_10MHZ * self.bandwidth / 10.0
        raise ConfigurationError(f"unknown MCS mode {mcs_mode!r}; expected one of {MCS_MODES}")


@dataclass(frozen=True)
class PathlossParams:
    """
    Piecewise log-distance pathloss (Winner+ B1, LOS branch).

    ``breakpoint_distance`` is given at ``ref_freq``.  When
    ``breakpoint_scales_with_freq`` is set it grows linearly with the carrier
    frequency, which turns the 20 dB/decade frequency term before the
    breakpoint into the 2.7 dB/decade term after it.
    """
    slope_A: float = 22.7
    intercept_B: float = 41.0
    freq_scaling_C: float = 20.0
    ref_freq: float = 5.0
    breakpoint_distance: float = 66.67
    slope_A_after_breakpoint: float = 40.0
    shadowing_sigma: float = 3.0
    min_distance: float = 1.0
    breakpoint_scales_with_freq: bool = True

    def __post_init__(self):
        if self.shadowing_sigma < 0:
            raise ConfigurationError("shadowing_sigma must be >= 0")
        if self.min_distance <= 0:
            raise ConfigurationError("min_distance must be > 0")
        if self.breakpoint_distance <= 0:
            raise ConfigurationError("breakpoint_distance must be > 0")
        if self.slope_A < 0 or self.slope_A_after_breakpoint < 0:
            raise ConfigurationError("pathloss slopes must be >= 0")
        if self.ref_freq <= 0:
            raise ConfigurationError("ref_freq must be > 0")

    def breakpoint_at(self, freq: float) -> float:
        if self.breakpoint_scales_with_freq:
            return self.breakpoint_distance * freq / self.ref_freq
        return self.breakpoint_distance


@dataclass(frozen=True, eq=False)
class PsrCurve:
    """Probability that a packet is sensed, tabulated over distance."""
    rat_id: int
    step: float
    values: np.ndarray
    start: float = 1.0

    @property
    def distances(self) -> np.ndarray:
        return self.start + self.step * np.arange(len(self.values))

    @property
    def max_distance(self) -> float:
        return self.start + self.step * (len(self.values) - 1)

    def at(self, distance: ArrayLike):
        """Linear interpolation; clamps to the first/last tabulated value."""
        result = np.interp(distance, self.distances, self.values)
        if np.ndim(result) == 0:
            return float(result)
        return result


def default_catalog() -> List[RatProfile]:
    """The five RATs every vehicle carries (reception threshold = noise + 3 dB)."""
    return [
        RatProfile(0, "DSRC 0.7", 0.7, 10.0, 10.0, -97.0, -94.0, -94.0, 18.0),
        RatProfile(1, "DSRC 5.9", 5.9, 10.0, 23.0, -97.0, -94.0, -94.0, 27.0,
                   qpsk_half_rate=QPSK_HALF_RATE_10MHZ),
        RatProfile(2, "WiFi 2.4", 2.4, 20.0, 20.0, -94.0, -91.0, -91.0, 54.0),
        RatProfile(3, "WiFi 5.6", 5.6, 20.0, 17.0, -94.0, -91.0, -91.0, 54.0),
        RatProfile(4, "TVWS", 0.46, 6.0, 20.0, -99.0, -96.0, -96.0, 7.2),
    ]


def find_rat(catalog: Sequence[RatProfile], key: Union[int, str]) -> RatProfile:
    """Look a RAT up by id or by name (case and separator insensitive)."""
    def _norm(text):
        return "".join(ch for ch in str(text).lower() if ch.isalnum())

    for profile in catalog:
        if isinstance(key, int) and profile.id == key:
            return profile
        if isinstance(key, str) and (_norm(profile.name) == _norm(key) or str(profile.id) == key.strip()):
            return profile
    raise ConfigurationError(f"unknown RAT {key!r}; catalog has {[p.name for p in catalog]}")


def packet_airtime(profile: RatProfile, payload: float, rate_override: Optional[float] = None) -> float:
    """Seconds on air for ``payload`` bytes: overhead + 8 * payload / rate."""
    if payload < 0:
        raise ConfigurationError("payload must be >= 0")
    rate = profile.data_rate if rate_override is None else rate_override
    if rate <= 0:
        raise ConfigurationError(f"RAT {profile.name!r}: rate must be > 0, got {rate}")
    return profile.per_packet_overhead + 8.0 * payload / (rate * 1e6)


def mean_pathloss_db(params: PathlossParams, freq: float, distance: ArrayLike):
    """Mean pathloss in dB; distances below ``min_distance`` are clamped."""
    d = np.maximum(np.asarray(distance, dtype=float), params.min_distance)
    bp = params.breakpoint_at(freq)
    near = params.intercept_B + params.slope_A * np.log10(np.minimum(d, bp))
    far = params.slope_A_after_breakpoint * np.log10(np.maximum(d, bp) / bp)
    loss = near + far + params.freq_scaling_C * np.log10(freq / params.ref_freq)
    if np.ndim(loss) == 0:
        return float(loss)
    return loss


def received_power_dbm(profile: RatProfile, params: PathlossParams, distance: ArrayLike,
                       shadowing_db: ArrayLike = 0.0):
    return profile.tx_power - mean_pathloss_db(params, profile.carrier_freq, distance) - shadowing_db


def sensing_probability(profile: RatProfile, params: PathlossParams, distance: ArrayLike,
                        threshold: Optional[float] = None):
    """Probability that the shadowed received power reaches ``threshold``."""
    threshold = profile.cs_threshold if threshold is None else threshold
    mean_rx = np.asarray(received_power_dbm(profile, params, distance), dtype=float)
    if params.shadowing_sigma == 0:
        return (mean_rx >= threshold).astype(float)
    return norm.sf((threshold - mean_rx) / params.shadowing_sigma)


def derive_psr(profile: RatProfile, params: PathlossParams, max_distance: float = 3000.0,
               step: float = 1.0) -> PsrCurve:
    if max_distance <= 0 or step <= 0:
        raise ConfigurationError("max_distance and step must be > 0")
    n_bins = int(np.floor((max_distance - params.min_distance) / step + 1e-9)) + 1
    distances = params.min_distance + step * np.arange(max(n_bins, 1))
    values = np.clip(sensing_probability(profile, params, distances), 0.0, 1.0)
    # enforce monotonicity against float noise in the far tail
    values = np.minimum.accumulate(values)
    return PsrCurve(rat_id=profile.id, step=step, values=values, start=params.min_distance)


def derive_psr_set(catalog: Sequence[RatProfile], params: PathlossParams,
                   max_distance: float = 3000.0, step: float = 1.0) -> Dict[int, PsrCurve]:
    return {p.id: derive_psr(p, params, max_distance, step) for p in catalog}


def catalog_to_dict(catalog: Sequence[RatProfile]) -> List[dict]:
    return [asdict(p) for p in catalog]


def pathloss_to_dict(params: PathlossParams) -> dict:
    return asdict(params)


def catalog_digest_source(catalog: Sequence[RatProfile], params: PathlossParams) -> str:
    """Canonical JSON text used for cache keys."""
    return json.dumps({"catalog": catalog_to_dict(catalog), "pathloss": pathloss_to_dict(params)},
                      sort_keys=True)


def load_catalog(source: Union[str, Path, None]) -> List[RatProfile]:
    """Load a catalog from a JSON/YAML file, or return the default one."""
    if source is None or str(source) == "default":
        return default_catalog()
    path = Path(source)
    if not path.exists():
        raise ConfigurationError(f"catalog file not found: {path}")
    with open(path, "r") as f:
        data = yaml.safe_load(f)
    if isinstance(data, dict):
        data = data.get("rats", [])
    if not data:
        raise ConfigurationError(f"catalog {path} defines no RATs")
    profiles = []
    for i, entry in enumerate(data):
        entry = dict(entry)
        entry.setdefault("id", i)
        entry.setdefault("cs_threshold", entry.get("rx_threshold"))
        try:
            profiles.append(RatProfile(**entry))
        except TypeError as e:
            raise ConfigurationError(f"catalog {path}, entry {i}: {e}") from e
    ids = [p.id for p in profiles]
    if sorted(ids) != list(range(len(ids))):
        raise ConfigurationError(f"catalog {path}: RAT ids must be 0..{len(ids) - 1}, got {ids}")
    return sorted(profiles, key=lambda p: p.id)


def load_pathloss(source: Union[str, Path, None]) -> PathlossParams:
    if source is None or str(source) == "default":
        return PathlossParams()
    path = Path(source)
    if not path.exists():
        raise ConfigurationError(f"pathloss file not found: {path}")
    with open(path, "r") as f:
        data = yaml.safe_load(f) or {}
    try:
        return PathlossParams(**data)
    except TypeError as e:
        raise ConfigurationError(f"pathloss {path}: {e}") from e


def write_psr_csv(curve: PsrCurve, path, provenance: Optional[dict] = None):
    frame = pd.DataFrame({"distance_m": curve.distances, "psr": curve.values})
    return write_csv(frame, path, provenance)
