"""
Constant-speed multi-lane ring road.

Vehicles keep their lane and speed; positions wrap modulo the road length so
the density never changes during a run.
"""
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from hetv2v.errors import ConfigurationError

LANE_WIDTH = 4.0  # m
KMH = 1.0 / 3.6
SPACING_JITTER = 0.25  # fraction of the gap


def ring_distance(x_from: float, y_from: float, xs: np.ndarray, ys: np.ndarray, road_length: float) -> np.ndarray:
    """Shortest distance around the ring, with the lateral lane offset."""
    dx = np.abs(np.asarray(xs) - x_from) % road_length
    dx = np.minimum(dx, road_length - dx)
    return np.hypot(dx, np.asarray(ys) - y_from)


@dataclass(frozen=True, eq=False)
class Trajectories:
    road_length: float
    start: np.ndarray      # m
    lane: np.ndarray
    direction: np.ndarray  # +1 / -1
    speed: np.ndarray      # m/s

    def __len__(self):
        return len(self.start)

    @property
    def y(self) -> np.ndarray:
        return self.lane * LANE_WIDTH

    def positions(self, t: float) -> Tuple[np.ndarray, np.ndarray]:
        x = np.mod(self.start + self.direction * self.speed * t, self.road_length)
        return x, self.y.astype(float)

    def __call__(self, vehicle: int, t: float) -> Tuple[float, int, int]:
        x = float(np.mod(self.start[vehicle] + self.direction[vehicle] * self.speed[vehicle] * t,
                         self.road_length))
        return x, int(self.lane[vehicle]), int(self.direction[vehicle])

    def distances_from(self, vehicle: int, t: float) -> np.ndarray:
        x, y = self.positions(t)
        return ring_distance(x[vehicle], y[vehicle], x, y, self.road_length)


def vehicle_count(density: float, road_length: float) -> int:
    return int(round(density * road_length / 1000.0))


def generate_mobility(config, seed: int) -> Trajectories:
    """
    Place ``density * road_length`` vehicles, assigned to lanes round robin.

    Each lane is filled at an even gap from a random offset, and every vehicle
    is shifted by up to ``SPACING_JITTER`` of that gap.  The first half of the
    lanes drive in +x, the rest in -x; speeds are drawn from
    U[0.8, 1.0] * max_speed.
    """
    if config.density < 0:
        raise ConfigurationError("density must be >= 0")
    if config.lanes < 1 or config.road_length <= 0 or config.max_speed <= 0:
        raise ConfigurationError("lanes, road_length and max_speed must be positive")
    rng = np.random.default_rng([seed, 1])
    n = vehicle_count(config.density, config.road_length)
    lane = np.arange(n) % config.lanes
    forward_lanes = max(config.lanes // 2, 1) if config.lanes > 1 else 1
    direction = np.where(lane < forward_lanes, 1, -1)
    counts = np.bincount(lane, minlength=config.lanes)
    gap = config.road_length / np.maximum(counts, 1)[lane]
    offset = rng.uniform(0.0, 1.0, size=config.lanes)[lane] * gap
    jitter = rng.uniform(-SPACING_JITTER, SPACING_JITTER, size=n) * gap
    start = np.mod(offset + (np.arange(n) // config.lanes) * gap + jitter, config.road_length)
    speed = rng.uniform(0.8, 1.0, size=n) * config.max_speed * KMH
    return Trajectories(config.road_length, start, lane, direction, speed)
