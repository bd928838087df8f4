"""
Computational and communication cost of running the selection protocol on
one vehicle.  Everything is evaluated with exact rationals so that results
can be compared against hand derivations with zero tolerance.
"""
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple, Union

import pandas as pd

from hetv2v.errors import ConfigurationError

Number = Union[int, float, Fraction, str]

MODULES = ("context_acquisition", "context_sharing", "rat_preselection", "cost_estimation", "rat_selection")

COST_COLUMNS = [
    "n_neighbors", "cpu_ghz", "n_rat", "t_meas_s", "t_update_s",
    "cycles_per_s", "cpu_usage", "s_cis_bits", "overhead_bps", "overhead_bps_per_hz",
]


def _exact(value: Number) -> Fraction:
    # str() keeps 0.2 as 1/5 instead of its binary expansion
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    return Fraction(str(value))


@dataclass(frozen=True)
class CostInputs:
    n_rat: int = 5
    n1: int = 0
    n2: int = 0
    t_meas: Number = Fraction(1, 5)
    t_update: Number = 1
    cpu_hz: Number = 10 ** 9
    s_t: int = 32
    s_lat: int = 32
    s_lon: int = 32
    s_cbr: int = 8
    total_bandwidth: Number = 66 * 10 ** 6
    n_neighbors: Optional[int] = None

    def __post_init__(self):
        if min(self.n_rat, self.n1, self.n2) < 0:
            raise ConfigurationError("neighbor and RAT counts must be >= 0")
        if self.n_neighbors is not None and self.n_neighbors < 0:
            raise ConfigurationError("n_neighbors must be >= 0")
        if min(self.s_t, self.s_lat, self.s_lon, self.s_cbr) <= 0:
            raise ConfigurationError("field sizes must be > 0")
        for name in ("t_meas", "t_update", "cpu_hz", "total_bandwidth"):
            if _exact(getattr(self, name)) <= 0:
                raise ConfigurationError(f"{name} must be > 0")

    @property
    def neighbors(self) -> int:
        """The single N used by the overhead bound."""
        return self.n1 + self.n2 if self.n_neighbors is None else self.n_neighbors


def cycles_per_module(inputs: CostInputs) -> Dict[str, Tuple[int, Fraction]]:
    """Per module: (CPU cycles per execution, executions per second), upper bounds."""
    n1, n2, r = inputs.n1, inputs.n2, inputs.n_rat
    t_meas, t_update = _exact(inputs.t_meas), _exact(inputs.t_update)
    return {
        "context_acquisition": (2 * n1 + n1 + n1 + 2 * n1 + 2 * n1 * r + n1 * r, n1 / t_meas),
        "context_sharing": (2 * n1 + n1 + 2 * n1 + 2 * n1 * r + n1 * r, 1 / t_meas),
        "rat_preselection": (2 * r + 2 * r + r, 1 / t_update),
        "cost_estimation": (
            2 * r + r + r
            + 2 * r * (n1 + n2) + 11 * r * (n1 + n2) + r * (n1 + n2)
            + 3 * r * (n1 + n2) + r * (n1 + n2) + r * (n1 + n2),
            1 / t_update,
        ),
        "rat_selection": (1 + 2 * r + r + r + r, 1 / t_update),
    }


def cycles_per_second(inputs: CostInputs) -> Fraction:
    return sum((cycles * freq for cycles, freq in cycles_per_module(inputs).values()), Fraction(0))


def cpu_usage(inputs: CostInputs) -> Fraction:
    return cycles_per_second(inputs) / _exact(inputs.cpu_hz)


def cis_size_bits(inputs: CostInputs, rows: Optional[int] = None) -> int:
    """(s_T + s_Lat + s_Lon + N_RAT * s_CBR) * (rows + 1)."""
    rows = inputs.neighbors if rows is None else rows
    return (inputs.s_t + inputs.s_lat + inputs.s_lon + inputs.n_rat * inputs.s_cbr) * (rows + 1)


def overhead_bps(inputs: CostInputs) -> Tuple[Fraction, Fraction]:
    """(O_v in b/s, O_v normalized by the total bandwidth in b/s/Hz)."""
    n = inputs.neighbors
    received_per_second = n / _exact(inputs.t_meas)
    o_v = received_per_second * cis_size_bits(inputs, n)
    return o_v, o_v / _exact(inputs.total_bandwidth)


def cost_sweep(neighbors: Sequence[int] = tuple(range(101)),
               cpu_ghz: Sequence[Number] = (Fraction(1, 2), 1, 2, 3),
               n_rat: int = 5, t_meas: Union[Number, Sequence[Number]] = (Fraction(1, 5),),
               t_update: Number = 1, total_bandwidth: Number = 66 * 10 ** 6) -> pd.DataFrame:
    """
    CPU usage and overhead for N1 = N2 = N, one row per (T_meas, N, CPU speed).

    ``t_meas`` is a single period or a sequence of periods to sweep.
    """
    periods = (t_meas,) if isinstance(t_meas, (int, float, Fraction, str)) else tuple(t_meas)
    if not periods:
        raise ConfigurationError("cost sweep needs at least one t_meas")
    rows: List[dict] = []
    for period in periods:
        for n in neighbors:
            for ghz in cpu_ghz:
                inputs = CostInputs(
                    n_rat=n_rat, n1=n, n2=n, t_meas=period, t_update=t_update,
                    cpu_hz=_exact(ghz) * 10 ** 9, total_bandwidth=total_bandwidth, n_neighbors=n,
                )
                cps = cycles_per_second(inputs)
                o_v, normalized = overhead_bps(inputs)
                rows.append({
                    "n_neighbors": n,
                    "cpu_ghz": float(_exact(ghz)),
                    "n_rat": n_rat,
                    "t_meas_s": float(_exact(period)),
                    "t_update_s": float(_exact(t_update)),
                    "cycles_per_s": float(cps),
                    "cpu_usage": float(cps / inputs.cpu_hz),
                    "s_cis_bits": cis_size_bits(inputs),
                    "overhead_bps": float(o_v),
                    "overhead_bps_per_hz": float(normalized),
                })
    return pd.DataFrame(rows, columns=COST_COLUMNS)
