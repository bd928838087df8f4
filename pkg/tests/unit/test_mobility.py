import sys
import os
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '../..')))

import pytest
import numpy as np

from hetv2v.config import SimConfig
from hetv2v.sim.mobility import LANE_WIDTH, generate_mobility, ring_distance, vehicle_count


class TestMobility:
    def test_vehicle_count(self):
        assert vehicle_count(40, 3000) == 120
        assert vehicle_count(0, 3000) == 0

    def test_generate(self):
        config = SimConfig(scheme="random", density=40.0)
        traj = generate_mobility(config, seed=5)
        assert len(traj) == 120
        assert np.all(np.bincount(traj.lane) == 30)
        assert set(traj.direction[traj.lane < 2]) == {1}
        assert set(traj.direction[traj.lane >= 2]) == {-1}
        assert np.all((traj.start >= 0.0) & (traj.start < 3000.0))
        assert np.all(traj.speed >= 0.8 * 100 / 3.6 - 1e-9)
        assert np.all(traj.speed <= 100 / 3.6 + 1e-9)
        assert np.array_equal(traj.y, traj.lane * LANE_WIDTH)

    def test_even_spacing_per_lane(self):
        traj = generate_mobility(SimConfig(scheme="random", density=40.0), seed=6)
        for lane in range(4):
            x = np.sort(traj.start[traj.lane == lane])
            gaps = np.diff(np.append(x, x[0] + 3000.0))
            # 30 vehicles per lane, 100 m apart give or take a quarter gap each
            assert gaps.sum() == pytest.approx(3000.0)
            assert np.all((gaps >= 50.0 - 1e-9) & (gaps <= 150.0 + 1e-9))

    def test_deterministic(self):
        config = SimConfig(scheme="random", density=80.0)
        a, b = generate_mobility(config, 3), generate_mobility(config, 3)
        assert np.array_equal(a.start, b.start) and np.array_equal(a.speed, b.speed)
        assert not np.array_equal(a.start, generate_mobility(config, 4).start)

    def test_motion_wraps_around_the_ring(self):
        config = SimConfig(scheme="random", density=40.0)
        traj = generate_mobility(config, 1)
        x0, _ = traj.positions(0.0)
        x1, _ = traj.positions(200.0)
        expected = np.mod(x0 + traj.direction * traj.speed * 200.0, 3000.0)
        assert np.allclose(x1, expected)
        assert np.all((x1 >= 0.0) & (x1 < 3000.0))
        x, lane, direction = traj(7, 200.0)
        assert x == pytest.approx(x1[7])
        assert lane == traj.lane[7] and direction == traj.direction[7]

    def test_ring_distance(self):
        d = ring_distance(10.0, 0.0, np.array([2990.0, 40.0, 1510.0]), np.array([0.0, 4.0, 0.0]), 3000.0)
        assert d[0] == pytest.approx(20.0)
        assert d[1] == pytest.approx(np.hypot(30.0, 4.0))
        assert d[2] == pytest.approx(1500.0)

    def test_distances_from(self):
        traj = generate_mobility(SimConfig(scheme="random", density=40.0), 2)
        d = traj.distances_from(3, 12.0)
        assert d[3] == 0.0
        assert np.all(d <= np.hypot(1500.0, 12.0) + 1e-9)

    def test_empty_road(self):
        traj = generate_mobility(SimConfig(scheme="random", density=0.0), 0)
        assert len(traj) == 0
