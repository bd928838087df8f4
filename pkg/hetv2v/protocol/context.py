"""Per-vehicle context table of 1-hop and 2-hop neighbors."""
import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

from hetv2v.errors import ConfigurationError, DecodeError

logger = logging.getLogger(__name__)

Position = Tuple[float, float]


def quantize_time(t: float) -> float:
    """Round a time in seconds to the millisecond grid used on the wire."""
    return int(t * 1000.0 + 0.5) / 1000.0


@dataclass
class NeighborEntry:
    vehicle_id: int
    hop_depth: int
    update_time: float
    position: Position
    cbr_per_rat: Tuple[float, ...]
    reception_time: Optional[float] = None

    def __post_init__(self):
        if self.hop_depth not in (1, 2):
            raise ConfigurationError(f"hop_depth must be 1 or 2, got {self.hop_depth}")
        if self.hop_depth == 1 and self.reception_time != self.update_time:
            raise ConfigurationError("1-hop entries must have reception_time == update_time")
        if self.hop_depth == 2 and self.reception_time is not None:
            raise ConfigurationError("2-hop entries carry no reception_time")
        if any(c < 0 or c > 1 for c in self.cbr_per_rat):
            raise ConfigurationError("CBR values must lie in [0, 1]")


@dataclass
class ContextTable:
    owner_id: int
    n_rat: int
    entries: Dict[int, NeighborEntry] = field(default_factory=dict)
    own_cbr: Tuple[float, ...] = ()
    own_position: Position = (0.0, 0.0)

    def __len__(self):
        return len(self.entries)

    def __contains__(self, vehicle_id):
        return vehicle_id in self.entries

    def hop_counts(self) -> Tuple[int, int]:
        n1 = sum(1 for e in self.entries.values() if e.hop_depth == 1)
        return n1, len(self.entries) - n1

    def one_hop(self):
        return [e for e in self.entries.values() if e.hop_depth == 1]


def ingest_cis(table: ContextTable, packet, now: float, geo=None) -> ContextTable:
    """
    Merge a received CIS packet into ``table`` (in place).

    The sender becomes a 1-hop neighbor with RT = UT = now.  Any other row
    replaces the stored one only when its UT is strictly newer and is then
    held at hop depth 2.
    """
    from hetv2v.protocol.cis import DEFAULT_GEO, row_cbr, row_time

    geo = geo or DEFAULT_GEO
    if packet.sender_id == table.owner_id:
        return table
    for row in packet.rows:
        if len(row.cbr) != table.n_rat:
            raise DecodeError(
                f"CIS from {packet.sender_id} carries {len(row.cbr)} CBR values, expected {table.n_rat}"
            )

    now = quantize_time(now)
    for row in packet.rows:
        if row.vehicle_id == table.owner_id:
            continue
        position = geo.to_planar(row.lat_e7, row.lon_e7)
        if row.vehicle_id == packet.sender_id:
            table.entries[row.vehicle_id] = NeighborEntry(
                row.vehicle_id, 1, now, position, row_cbr(row), reception_time=now
            )
            continue
        ut = row_time(row)
        stored = table.entries.get(row.vehicle_id)
        if stored is not None and ut <= stored.update_time:
            continue
        table.entries[row.vehicle_id] = NeighborEntry(row.vehicle_id, 2, ut, position, row_cbr(row))
    return table


def prune_stale(table: ContextTable, now: float, t_neigh: float) -> ContextTable:
    if t_neigh <= 0:
        raise ConfigurationError("T_neigh must be > 0")
    horizon = now - t_neigh
    stale = [vid for vid, e in table.entries.items() if e.update_time < horizon]
    for vid in stale:
        del table.entries[vid]
    return table
