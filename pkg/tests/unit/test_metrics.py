import sys
import os
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '../..')))

import math

import pytest
import numpy as np

from hetv2v.csvio import read_csv
from hetv2v.errors import ConfigurationError
from hetv2v.sim.metrics import (
    CHANGES_COLUMNS,
    METRICS_COLUMNS,
    QUANTILES,
    DeliveryLog,
    MetricsReport,
    compute_satisfaction,
    delivery_ratios,
    measure_cbr,
    rat_change_intervals,
    receiver_throughput,
    write_report,
)


class TestMeasureCbr:
    def test_union_of_overlaps(self):
        assert measure_cbr([(0.1, 0.3), (0.2, 0.4), (0.6, 0.7)], 1.0) == pytest.approx(0.4)

    def test_clipped_to_window(self):
        assert measure_cbr([(-0.5, 0.25), (0.75, 2.0)], 1.0) == pytest.approx(0.5)
        assert measure_cbr([(2.0, 2.5)], 1.0, start=2.0) == pytest.approx(0.5)

    def test_empty_and_full(self):
        assert measure_cbr([], 1.0) == 0.0
        assert measure_cbr([(0.0, 1.0), (0.5, 1.5)], 1.0) == 1.0

    def test_invalid_window(self):
        with pytest.raises(ConfigurationError):
            measure_cbr([], 0.0)


class TestDeliveryLog:
    def test_windows(self):
        log = DeliveryLog(4)
        log.record(0, np.array([1, 2, 3]), np.array([1, 3]))
        log.record(0, np.array([1, 2]), np.array([1]))
        offered, delivered = log.close_window()
        assert offered[0, 1] == 2 and offered[0, 3] == 1
        assert delivered[0, 1] == 2 and delivered[0, 2] == 0
        log.record(1, np.array([0]), np.array([], dtype=np.int64))
        log.close_window()
        total_offered, total_delivered = log.totals()
        assert total_offered.sum() == 6
        assert total_delivered.sum() == 3
        assert len(log.offered) == 2

    def test_discard_pending(self):
        log = DeliveryLog(2)
        log.record(0, np.array([1]), np.array([1]))
        log.discard_pending()
        offered, _ = log.close_window()
        assert offered.nnz == 0


class TestSatisfaction:
    def make(self):
        log = DeliveryLog(3)
        # receiver 1 gets 9 of 10, receiver 2 gets 8 of 10
        for k in range(10):
            delivered = [r for r, keep in ((1, k < 9), (2, k < 8)) if keep]
            log.record(0, np.array([1, 2]), np.array(delivered, dtype=np.int64))
        return log.close_window()

    def test_ratios(self):
        offered, delivered = self.make()
        assert list(delivery_ratios(offered, delivered, 0)) == pytest.approx([0.9, 0.8])
        assert delivery_ratios(offered, delivered, 1).size == 0

    def test_mean_ratio_against_reliability(self):
        offered, delivered = self.make()
        assert compute_satisfaction(offered, delivered, 0, 0.85) is True
        assert compute_satisfaction(offered, delivered, 0, 0.9) is False
        assert compute_satisfaction(offered, delivered, 2, 0.5) is None

    def test_receiver_throughput(self):
        offered, delivered = self.make()
        assert receiver_throughput(offered, delivered, 0, 1024, 1.0) == pytest.approx(8.5 * 8 * 1024)
        assert receiver_throughput(offered, delivered, 1, 1024, 1.0) == 0.0


class TestReport:
    def make_report(self):
        cbr = np.zeros((2, 3, 2))
        cbr[:, :, 0] = [[0.1, 0.2, 0.3], [0.3, 0.4, 0.5]]
        return MetricsReport(
            scheme="random", density=10.0, seed=1, n_vehicles=3, n_rat=2,
            window_starts=np.array([1.0, 2.0]),
            cbr=cbr,
            throughput=np.array([[100.0, 0.0, 50.0], [300.0, 0.0, 50.0]]),
            window_satisfied=np.array([[1.0, np.nan, 0.0], [1.0, np.nan, 1.0]]),
            satisfied=np.array([1.0, np.nan, 0.0]),
            app_rate=np.array([400.0, 100.0, 0.0]),
            changes=[(0, 1.0, 0, 1), (0, 3.0, 1, 0), (1, 2.0, 1, 0), (1, 2.5, 0, 1), (2, 4.0, 0, 1)],
        )

    def test_percent_satisfied_ignores_vehicles_without_receivers(self):
        assert self.make_report().percent_satisfied() == pytest.approx(50.0)
        empty = MetricsReport(scheme="random", density=0.0, seed=1, n_vehicles=0, n_rat=2)
        assert empty.percent_satisfied() == 0.0

    def test_vehicle_averages(self):
        report = self.make_report()
        assert report.vehicle_cbr()[:, 0] == pytest.approx([0.2, 0.3, 0.4])
        assert list(report.vehicle_throughput()) == [200.0, 0.0, 50.0]
        normalized = report.normalized_throughput()
        assert normalized[0] == pytest.approx(0.5) and normalized[1] == 0.0
        assert math.isnan(normalized[2])

    def test_quantiles(self):
        quantiles = self.make_report().cbr_quantiles()
        assert quantiles.shape == (2, len(QUANTILES))
        assert quantiles[0, QUANTILES.index(50)] == pytest.approx(0.3)
        assert np.all(quantiles[1] == 0.0)
        assert np.all(np.diff(quantiles[0]) >= 0)

    def test_tau(self):
        intervals = rat_change_intervals([(0, 1.0), (0, 3.0), (1, 2.0), (1, 2.5), (2, 4.0)])
        assert list(intervals[0]) == [2.0] and list(intervals[1]) == [0.5]
        assert intervals[2].size == 0
        report = self.make_report()
        assert sorted(report.tau()) == [0.5, 2.0]
        assert report.mean_tau() == pytest.approx(1.25)
        assert math.isnan(MetricsReport(scheme="random", density=0.0, seed=1, n_vehicles=0, n_rat=2).mean_tau())

    def test_summary(self):
        summary = self.make_report().summary()
        assert summary["scheme"] == "random"
        assert summary["rat_changes"] == 5
        assert summary["cbr_r0_p50"] == pytest.approx(0.3)
        assert "cbr_r1_p95" in summary

    def test_frames(self):
        report = self.make_report()
        metrics = report.metrics_frame()
        assert list(metrics.columns) == METRICS_COLUMNS
        assert len(metrics) == 2 * 3 * 2
        first = metrics[(metrics.vehicle_id == 2) & (metrics.window_start_s == 1.0) & (metrics.rat_id == 0)]
        assert first.cbr.iloc[0] == pytest.approx(0.3)
        assert not bool(first.satisfied.iloc[0])
        assert metrics[metrics.vehicle_id == 1].satisfied.isna().all()
        assert list(report.changes_frame().columns) == CHANGES_COLUMNS

    def test_empty_frames(self):
        report = MetricsReport(scheme="random", density=0.0, seed=1, n_vehicles=0, n_rat=5)
        assert report.metrics_frame().empty
        assert list(report.metrics_frame().columns) == METRICS_COLUMNS

    def test_write_report(self, temp_dir):
        paths = write_report(self.make_report(), temp_dir / "run", {"seed": 1})
        assert [p.name for p in paths] == ["metrics.csv", "changes.csv", "summary.csv"]
        summary, provenance = read_csv(temp_dir / "run" / "summary.csv")
        assert provenance == {"seed": "1"}
        assert summary.percent_satisfied.iloc[0] == pytest.approx(50.0)
        changes, _ = read_csv(temp_dir / "run" / "changes.csv")
        assert len(changes) == 5
