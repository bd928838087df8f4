"""
Per-run metrics: channel load, delivered throughput within the target
distance, satisfaction, and the time between RAT changes.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import sparse

from hetv2v.csvio import write_csv
from hetv2v.errors import ConfigurationError

logger = logging.getLogger(__name__)

QUANTILES = (5, 25, 50, 75, 95)

METRICS_COLUMNS = ["vehicle_id", "window_start_s", "rat_id", "cbr", "throughput_bps", "satisfied"]
CHANGES_COLUMNS = ["vehicle_id", "time_s", "from_rat", "to_rat"]


def measure_cbr(intervals: Iterable[Tuple[float, float]], window: float, start: float = 0.0) -> float:
    """Length of the union of busy ``(begin, end)`` intervals inside the window, divided by it."""
    if window <= 0:
        raise ConfigurationError("window must be > 0")
    end = start + window
    clipped = sorted((max(b, start), min(e, end)) for b, e in intervals if e > start and b < end)
    busy = 0.0
    cur_b = cur_e = None
    for b, e in clipped:
        if cur_e is None or b > cur_e:
            if cur_e is not None:
                busy += cur_e - cur_b
            cur_b, cur_e = b, e
        else:
            cur_e = max(cur_e, e)
    if cur_e is not None:
        busy += cur_e - cur_b
    return min(max(busy / window, 0.0), 1.0)


class DeliveryLog:
    """
    Data packets offered to and delivered at each receiver, per window.

    A receiver is offered a packet when it was within the sender's target
    distance at transmit time; the matrices are (sender, receiver) counts.
    Packets are logged when their fate is settled: at the end of their
    transmission, or when the MAC queue drops them.
    """

    def __init__(self, n_vehicles: int):
        self.n_vehicles = n_vehicles
        self.offered: List[sparse.csr_matrix] = []
        self.delivered: List[sparse.csr_matrix] = []
        self._pending = {"offered": ([], []), "delivered": ([], [])}

    def record(self, sender: int, in_range: np.ndarray, delivered: np.ndarray) -> None:
        for name, receivers in (("offered", in_range), ("delivered", delivered)):
            if len(receivers):
                rows, cols = self._pending[name]
                rows.append(np.full(len(receivers), sender, dtype=np.int64))
                cols.append(np.asarray(receivers, dtype=np.int64))

    def _flush(self, name: str) -> sparse.csr_matrix:
        rows, cols = self._pending[name]
        shape = (self.n_vehicles, self.n_vehicles)
        if rows:
            r, c = np.concatenate(rows), np.concatenate(cols)
            matrix = sparse.coo_matrix((np.ones(len(r), dtype=np.int64), (r, c)), shape=shape).tocsr()
        else:
            matrix = sparse.csr_matrix(shape, dtype=np.int64)
        self._pending[name] = ([], [])
        return matrix

    def close_window(self) -> Tuple[sparse.csr_matrix, sparse.csr_matrix]:
        offered, delivered = self._flush("offered"), self._flush("delivered")
        self.offered.append(offered)
        self.delivered.append(delivered)
        return offered, delivered

    def discard_pending(self) -> None:
        self._pending = {"offered": ([], []), "delivered": ([], [])}

    def totals(self) -> Tuple[sparse.csr_matrix, sparse.csr_matrix]:
        shape = (self.n_vehicles, self.n_vehicles)
        offered = sum(self.offered, sparse.csr_matrix(shape, dtype=np.int64))
        delivered = sum(self.delivered, sparse.csr_matrix(shape, dtype=np.int64))
        return sparse.csr_matrix(offered), sparse.csr_matrix(delivered)


def delivery_ratios(offered: sparse.csr_matrix, delivered: sparse.csr_matrix, vehicle: int) -> np.ndarray:
    """Per-receiver delivered/offered for one sender, over receivers that were offered anything."""
    row = offered.getrow(vehicle)
    receivers = row.indices
    if len(receivers) == 0:
        return np.zeros(0)
    got = np.asarray(delivered[vehicle, receivers].todense()).ravel()
    return got / row.data


def compute_satisfaction(offered: sparse.csr_matrix, delivered: sparse.csr_matrix, vehicle: int,
                         reliability: float) -> Optional[bool]:
    """
    True when the mean per-receiver delivery ratio reaches ``reliability``;
    None when nobody was ever within the target distance.

    Only settled packets count.  Frames still queued or on air when the run
    ends are neither offered nor dropped; the simulator reports them in the
    ``queued_at_end`` and ``on_air_at_end`` counters.
    """
    ratios = delivery_ratios(offered, delivered, vehicle)
    if len(ratios) == 0:
        return None
    return bool(ratios.mean() >= reliability)


def receiver_throughput(offered: sparse.csr_matrix, delivered: sparse.csr_matrix, vehicle: int,
                        payload: int, window: float) -> float:
    """Mean over in-range receivers of the application bits delivered per second."""
    row = offered.getrow(vehicle)
    if row.nnz == 0:
        return 0.0
    got = np.asarray(delivered[vehicle, row.indices].todense()).ravel()
    return float(got.mean() * 8.0 * payload / window)


def rat_change_intervals(changes: Iterable[Tuple]) -> Dict[int, np.ndarray]:
    """Successive differences of each vehicle's change times; rows are (vehicle, time, ...)."""
    times: Dict[int, List[float]] = {}
    for change in changes:
        times.setdefault(int(change[0]), []).append(float(change[1]))
    return {v: np.diff(np.asarray(ts)) for v, ts in times.items()}


@dataclass
class MetricsReport:
    scheme: str
    density: float
    seed: int
    n_vehicles: int
    n_rat: int
    window: float = 1.0
    payload: int = 1024
    window_starts: np.ndarray = field(default_factory=lambda: np.zeros(0))
    cbr: np.ndarray = field(default_factory=lambda: np.zeros((0, 0, 0)))
    throughput: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    window_satisfied: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    satisfied: np.ndarray = field(default_factory=lambda: np.zeros(0))
    app_rate: np.ndarray = field(default_factory=lambda: np.zeros(0))
    changes: List[Tuple[int, float, int, int]] = field(default_factory=list)
    no_feasible: int = 0
    preselection_violations: int = 0
    counters: Dict[str, int] = field(default_factory=dict)
    mean_n1: float = 0.0
    mean_n2: float = 0.0
    cis_rx_bps: float = 0.0
    tx_log: Optional[List[Tuple]] = None

    def percent_satisfied(self) -> float:
        """Share of vehicles satisfied, over vehicles that had a receiver in range."""
        counted = self.satisfied[~np.isnan(self.satisfied)]
        if counted.size == 0:
            return 0.0
        return float(100.0 * counted.mean())

    def vehicle_cbr(self) -> np.ndarray:
        """Time-averaged CBR per (vehicle, RAT)."""
        if self.cbr.shape[0] == 0:
            return np.zeros((self.n_vehicles, self.n_rat))
        return self.cbr.mean(axis=0)

    def vehicle_throughput(self) -> np.ndarray:
        if self.throughput.shape[0] == 0:
            return np.zeros(self.n_vehicles)
        return self.throughput.mean(axis=0)

    def normalized_throughput(self) -> np.ndarray:
        """Per-vehicle mean throughput divided by the vehicle's own application rate."""
        rates = np.where(self.app_rate > 0, self.app_rate, np.nan)
        return self.vehicle_throughput() / rates

    def cbr_quantiles(self) -> np.ndarray:
        """(n_rat, len(QUANTILES)) quantiles of per-vehicle CBR."""
        per_vehicle = self.vehicle_cbr()
        if per_vehicle.size == 0:
            return np.zeros((self.n_rat, len(QUANTILES)))
        return np.percentile(per_vehicle, QUANTILES, axis=0).T

    def tau(self) -> np.ndarray:
        intervals = rat_change_intervals(self.changes)
        if not intervals:
            return np.zeros(0)
        return np.concatenate(list(intervals.values()))

    def mean_tau(self) -> float:
        tau = self.tau()
        return float(tau.mean()) if tau.size else float("nan")

    def summary(self) -> Dict[str, object]:
        row: Dict[str, object] = {
            "scheme": self.scheme,
            "density": self.density,
            "seed": self.seed,
            "n_vehicles": self.n_vehicles,
            "percent_satisfied": self.percent_satisfied(),
        }
        quantiles = self.cbr_quantiles()
        for rat in range(self.n_rat):
            for k, q in enumerate(QUANTILES):
                row[f"cbr_r{rat}_p{q}"] = float(quantiles[rat, k])
        row["mean_tau_s"] = self.mean_tau()
        row["rat_changes"] = len(self.changes)
        row["no_feasible"] = self.no_feasible
        row["preselection_violations"] = self.preselection_violations
        row["mean_n1"] = self.mean_n1
        row["mean_n2"] = self.mean_n2
        row["cis_rx_bps"] = self.cis_rx_bps
        return row

    def metrics_frame(self) -> pd.DataFrame:
        n_windows = len(self.window_starts)
        if n_windows == 0 or self.n_vehicles == 0:
            return pd.DataFrame(columns=METRICS_COLUMNS)
        w, v, r = np.meshgrid(np.arange(n_windows), np.arange(self.n_vehicles), np.arange(self.n_rat),
                              indexing="ij")
        w, v, r = w.ravel(), v.ravel(), r.ravel()
        satisfied = self.window_satisfied[w, v]
        return pd.DataFrame({
            "vehicle_id": v,
            "window_start_s": self.window_starts[w],
            "rat_id": r,
            "cbr": self.cbr[w, v, r],
            "throughput_bps": self.throughput[w, v],
            "satisfied": pd.array(np.where(np.isnan(satisfied), pd.NA, satisfied == 1.0), dtype="boolean"),
        }, columns=METRICS_COLUMNS)

    def changes_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.changes, columns=CHANGES_COLUMNS)

    def summary_frame(self) -> pd.DataFrame:
        return pd.DataFrame([self.summary()])


def write_report(report: MetricsReport, out_dir, provenance: Optional[dict] = None) -> List[Path]:
    out_dir = Path(out_dir)
    return [
        write_csv(report.metrics_frame(), out_dir / "metrics.csv", provenance),
        write_csv(report.changes_frame(), out_dir / "changes.csv", provenance),
        write_csv(report.summary_frame(), out_dir / "summary.csv", provenance),
    ]
