"""
Context Information Sharing (CIS) packets and their wire codec.

Payload layout (big endian)::

    header   1 byte   [2 bits flag_hops_remaining | 6 bits row count]
    per row  u32      update time, milliseconds
             s32 s32  latitude, longitude in 1e-7 degrees
             N_RAT x u8  CBR, 0..255 -> 0.0..1.0

Vehicle identifiers are not part of the payload.  They travel in the
link-layer address block that frames it: the sender id followed by one id
per row, each u32.  :func:`encode_cis` emits payload + address block.
"""
import logging
import math
import struct
from dataclasses import dataclass
from typing import List, Sequence, Tuple

from hetv2v.errors import DecodeError, UsageError
from hetv2v.protocol.context import ContextTable, NeighborEntry, Position

logger = logging.getLogger(__name__)

MAX_ROWS = 63
MAX_FLAG = 2
METERS_PER_DEGREE = 111320.0

_HEADER = struct.Struct(">B")
_ROW_FIXED = struct.Struct(">Iii")
_ID = struct.Struct(">I")

U32_MAX = 2 ** 32 - 1


@dataclass(frozen=True)
class GeoFrame:
    """Local equirectangular projection between road metres and degrees."""
    origin_lat: float = 0.0
    origin_lon: float = 0.0

    @property
    def _lon_scale(self) -> float:
        return METERS_PER_DEGREE * math.cos(math.radians(self.origin_lat))

    def to_e7(self, position: Position) -> Tuple[int, int]:
        x, y = position
        lat = self.origin_lat + y / METERS_PER_DEGREE
        lon = self.origin_lon + x / self._lon_scale
        return int(round(lat * 1e7)), int(round(lon * 1e7))

    def to_planar(self, lat_e7: int, lon_e7: int) -> Position:
        y = (lat_e7 / 1e7 - self.origin_lat) * METERS_PER_DEGREE
        x = (lon_e7 / 1e7 - self.origin_lon) * self._lon_scale
        return x, y


DEFAULT_GEO = GeoFrame()


@dataclass(frozen=True)
class CisRow:
    """One vehicle's row as carried on the wire (quantized fields)."""
    vehicle_id: int
    ut_ms: int
    lat_e7: int
    lon_e7: int
    cbr: Tuple[int, ...]


@dataclass(frozen=True)
class CisPacket:
    sender_id: int
    flag_hops_remaining: int
    rows: Tuple[CisRow, ...]

    @property
    def n_rows(self) -> int:
        return len(self.rows)


def quantize_cbr(value: float) -> int:
    """Linear 0.0..1.0 -> 0..255 with half-up rounding."""
    return min(max(int(math.floor(value * 255.0 + 0.5)), 0), 255)


def row_cbr(row: CisRow) -> Tuple[float, ...]:
    return tuple(b / 255.0 for b in row.cbr)


def row_time(row: CisRow) -> float:
    return row.ut_ms / 1000.0


def make_row(vehicle_id: int, update_time: float, position: Position,
             cbr_per_rat: Sequence[float], geo: GeoFrame = DEFAULT_GEO) -> CisRow:
    lat_e7, lon_e7 = geo.to_e7(position)
    return CisRow(
        vehicle_id=vehicle_id,
        ut_ms=int(update_time * 1000.0 + 0.5),
        lat_e7=lat_e7,
        lon_e7=lon_e7,
        cbr=tuple(quantize_cbr(c) for c in cbr_per_rat),
    )


def entry_to_row(entry: NeighborEntry, geo: GeoFrame = DEFAULT_GEO) -> CisRow:
    return make_row(entry.vehicle_id, entry.update_time, entry.position, entry.cbr_per_rat, geo)


def build_cis(table: ContextTable, self_id: int, own_row: CisRow, flag_hops: int,
              now: float, geo: GeoFrame = DEFAULT_GEO) -> CisPacket:
    """Own row plus the most recently updated 1-hop rows; 2-hop rows never travel."""
    if len(own_row.cbr) != table.n_rat:
        raise UsageError(f"own row carries {len(own_row.cbr)} CBR values, expected {table.n_rat}")
    if not 0 <= flag_hops <= MAX_FLAG:
        raise UsageError(f"flag_hops must be in 0..{MAX_FLAG}, got {flag_hops}")
    one_hop = sorted(table.one_hop(), key=lambda e: (-e.update_time, e.vehicle_id))
    if len(one_hop) > MAX_ROWS - 1:
        logger.debug("vehicle %d at t=%.3f: CIS truncated from %d to %d neighbor rows",
                     self_id, now, len(one_hop), MAX_ROWS - 1)
        one_hop = one_hop[:MAX_ROWS - 1]
    rows = (own_row,) + tuple(entry_to_row(e, geo) for e in one_hop)
    return CisPacket(sender_id=self_id, flag_hops_remaining=flag_hops, rows=rows)


def payload_size_bytes(n_rows: int, n_rat: int) -> int:
    return _HEADER.size + n_rows * (_ROW_FIXED.size + n_rat)


def payload_bits(packet: CisPacket) -> int:
    n_rat = len(packet.rows[0].cbr) if packet.rows else 0
    return 8 * payload_size_bytes(packet.n_rows, n_rat)


def encode_payload(packet: CisPacket) -> bytes:
    if not 1 <= packet.n_rows <= MAX_ROWS:
        raise UsageError(f"a CIS packet carries 1..{MAX_ROWS} rows, got {packet.n_rows}")
    if not 0 <= packet.flag_hops_remaining <= MAX_FLAG:
        raise UsageError(f"flag_hops_remaining must be in 0..{MAX_FLAG}")
    n_rat = len(packet.rows[0].cbr)
    parts = [_HEADER.pack((packet.flag_hops_remaining << 6) | packet.n_rows)]
    for row in packet.rows:
        if len(row.cbr) != n_rat:
            raise UsageError("every row must carry the same number of CBR values")
        if not 0 <= row.ut_ms <= U32_MAX:
            raise UsageError(f"update time {row.ut_ms} ms does not fit in 32 bits")
        try:
            parts.append(_ROW_FIXED.pack(row.ut_ms, row.lat_e7, row.lon_e7))
            parts.append(bytes(row.cbr))
        except (struct.error, ValueError) as e:
            raise UsageError(f"row for vehicle {row.vehicle_id} out of range: {e}") from e
    return b"".join(parts)


def decode_payload(data: bytes, n_rat: int) -> Tuple[int, List[Tuple[int, int, int, Tuple[int, ...]]]]:
    """Return (flag, rows) where each row is (ut_ms, lat_e7, lon_e7, cbr bytes)."""
    if len(data) < _HEADER.size:
        raise DecodeError("empty CIS payload")
    (header,) = _HEADER.unpack_from(data, 0)
    flag, count = header >> 6, header & 0x3F
    if flag > MAX_FLAG:
        raise DecodeError(f"invalid flag_hops_remaining {flag}")
    if count == 0:
        raise DecodeError("CIS payload without rows")
    expected = payload_size_bytes(count, n_rat)
    if len(data) != expected:
        raise DecodeError(f"CIS payload is {len(data)} bytes, expected {expected} for {count} rows")
    rows = []
    offset = _HEADER.size
    for _ in range(count):
        ut_ms, lat_e7, lon_e7 = _ROW_FIXED.unpack_from(data, offset)
        offset += _ROW_FIXED.size
        rows.append((ut_ms, lat_e7, lon_e7, tuple(data[offset:offset + n_rat])))
        offset += n_rat
    return flag, rows


def encode_cis(packet: CisPacket) -> bytes:
    ids = [packet.sender_id] + [row.vehicle_id for row in packet.rows]
    if any(not 0 <= i <= U32_MAX for i in ids):
        raise UsageError("vehicle ids must fit in 32 bits")
    return encode_payload(packet) + b"".join(_ID.pack(i) for i in ids)


def decode_cis(data: bytes, n_rat: int) -> CisPacket:
    if len(data) < _HEADER.size:
        raise DecodeError("empty CIS frame")
    count = data[0] & 0x3F
    payload_len = payload_size_bytes(count, n_rat)
    if len(data) != payload_len + _ID.size * (count + 1):
        raise DecodeError(f"CIS frame is {len(data)} bytes, inconsistent with {count} rows of {n_rat} RATs")
    flag, raw_rows = decode_payload(data[:payload_len], n_rat)
    ids = [_ID.unpack_from(data, payload_len + _ID.size * k)[0] for k in range(count + 1)]
    rows = tuple(
        CisRow(vehicle_id=vid, ut_ms=ut, lat_e7=lat, lon_e7=lon, cbr=cbr)
        for vid, (ut, lat, lon, cbr) in zip(ids[1:], raw_rows)
    )
    return CisPacket(sender_id=ids[0], flag_hops_remaining=flag, rows=rows)

