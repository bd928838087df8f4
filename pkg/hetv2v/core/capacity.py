"""
Analytic channel load and capacity bounds for uniformly spaced traffic.

The load a RAT carries at a point is the sum, over every transmitter, of its
offered airtime share weighted by the probability of sensing it there.  On a
uniform road that sum becomes ``n * t * beta * footprint(PSR)`` where the
footprint counts 1 m bins on both sides of the receiver.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from hetv2v.core.radio_model import (
    MCS_HIGHEST,
    PsrCurve,
    RatProfile,
    packet_airtime,
)
from hetv2v.errors import ConfigurationError, DomainError, UsageError

logger = logging.getLogger(__name__)

HETERO_LABEL = "hetero"
CAPACITY_COLUMNS = ["rate_mbps", "mcs_mode", "rat_or_hetero", "max_density_veh_per_km"]


@dataclass(frozen=True)
class TrafficAssumption:
    """
    Per-vehicle traffic on a uniform road.

    ``packet_airtime`` applies to every RAT unless ``airtimes`` holds a
    per-RAT value, which is how one assumption covers a whole catalog.
    """
    packets_per_second: float
    packet_airtime: float = 0.0
    density: float = 0.0  # vehicles per meter
    cbr_max: float = 0.6
    airtimes: Optional[Dict[int, float]] = field(default=None, compare=False)

    def __post_init__(self):
        if self.packets_per_second < 0 or self.packet_airtime < 0 or self.density < 0:
            raise ConfigurationError("traffic rates, airtimes and density must be >= 0")
        if not 0.0 <= self.cbr_max <= 1.0:
            raise ConfigurationError(f"cbr_max must be in [0, 1], got {self.cbr_max}")
        if self.airtimes and any(t < 0 for t in self.airtimes.values()):
            raise ConfigurationError("per-RAT airtimes must be >= 0")

    @classmethod
    def for_application(cls, catalog: Sequence[RatProfile], rate_bps: float, payload: int,
                        cbr_max: float = 0.6, mcs_mode: str = MCS_HIGHEST,
                        density: float = 0.0) -> "TrafficAssumption":
        """Application rate R split into ``payload``-byte packets, n = R / (8 * payload)."""
        if payload <= 0:
            raise ConfigurationError("payload must be > 0")
        airtimes = {
            p.id: packet_airtime(p, payload, rate_override=p.rate_for(mcs_mode)) for p in catalog
        }
        return cls(
            packets_per_second=rate_bps / (8.0 * payload),
            density=density,
            cbr_max=cbr_max,
            airtimes=airtimes,
        )

    def airtime_for(self, rat_id: int) -> float:
        if self.airtimes is not None and rat_id in self.airtimes:
            return self.airtimes[rat_id]
        return self.packet_airtime

    def offered_load(self, rat_id: int) -> float:
        """n * t, the fraction of time one vehicle occupies the channel."""
        return self.packets_per_second * self.airtime_for(rat_id)

    def with_density(self, density: float) -> "TrafficAssumption":
        return replace(self, density=density)


def cbr_at_point(transmitters: Iterable[Tuple[float, float, float]], x: float, psr: PsrCurve) -> float:
    """Load sensed at ``x`` from ``(position, n_i, t_i)`` transmitters, clamped to [0, 1]."""
    rows = np.asarray(list(transmitters), dtype=float).reshape(-1, 3)
    if rows.size == 0:
        return 0.0
    if np.any(rows[:, 1:] < 0):
        raise ConfigurationError("packet rates and airtimes must be >= 0")
    sensed = psr.at(np.abs(rows[:, 0] - x))
    total = float(np.sum(rows[:, 1] * rows[:, 2] * sensed))
    return min(max(total, 0.0), 1.0)


def psr_footprint(psr: PsrCurve) -> float:
    """2 * sum_{i>=1} PSR(i m): expected number of sensed 1 m slots on both sides."""
    n_bins = int(np.floor(psr.max_distance))
    if n_bins < 1:
        return 0.0
    return 2.0 * float(np.sum(psr.at(np.arange(1, n_bins + 1, dtype=float))))


def cbr_uniform(assumption: TrafficAssumption, psr: PsrCurve, clamp: bool = True) -> float:
    load = assumption.offered_load(psr.rat_id) * assumption.density * psr_footprint(psr)
    if clamp:
        return min(max(load, 0.0), 1.0)
    return load


def max_density_single(profile: RatProfile, psr: PsrCurve, assumption: TrafficAssumption) -> float:
    """Highest density (veh/km) keeping the uniform-road CBR at ``cbr_max``."""
    if assumption.cbr_max == 0:
        return 0.0
    denominator = assumption.offered_load(profile.id) * psr_footprint(psr)
    if denominator <= 0:
        raise DomainError(f"RAT {profile.name!r}: offered load or PSR footprint is zero")
    return assumption.cbr_max / denominator * 1000.0


def max_density_hetero(catalog: Sequence[RatProfile], psr_set: Mapping[int, PsrCurve],
                       assumption: TrafficAssumption) -> float:
    if not catalog:
        raise UsageError("max_density_hetero needs a non-empty catalog")
    return sum(max_density_single(p, psr_set[p.id], assumption) for p in catalog)


def capacity_table(catalog: Sequence[RatProfile], psr_set: Mapping[int, PsrCurve],
                   sweep: Sequence[Tuple[float, str]], payload: int = 1024,
                   cbr_max: float = 0.6) -> pd.DataFrame:
    """
    One row per (R, MCS mode, RAT) plus a heterogeneous row per (R, MCS mode).

    ``sweep`` holds ``(rate_mbps, mcs_mode)`` pairs.
    """
    rows: List[dict] = []
    for rate_mbps, mcs_mode in sweep:
        assumption = TrafficAssumption.for_application(
            catalog, rate_mbps * 1e6, payload, cbr_max=cbr_max, mcs_mode=mcs_mode
        )
        for profile in catalog:
            rows.append({
                "rate_mbps": rate_mbps,
                "mcs_mode": mcs_mode,
                "rat_or_hetero": profile.name,
                "max_density_veh_per_km": max_density_single(profile, psr_set[profile.id], assumption),
            })
        hetero = max_density_hetero(catalog, psr_set, assumption)
        rows.append({
            "rate_mbps": rate_mbps,
            "mcs_mode": mcs_mode,
            "rat_or_hetero": HETERO_LABEL,
            "max_density_veh_per_km": hetero,
        })
        logger.debug("R=%.3f Mbps %s: heterogeneous bound %.1f veh/km", rate_mbps, mcs_mode, hetero)
    return pd.DataFrame(rows, columns=CAPACITY_COLUMNS)
