import sys
import os

# Add the project root to Python path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

# Add any global test fixtures here
import pytest
import tempfile
import numpy as np
from pathlib import Path

from hetv2v.core.link_curves import LinkCurves, PdrCurveFamily, default_cbr_levels, default_distances, reception_floor
from hetv2v.core.radio_model import PathlossParams, default_catalog, derive_psr_set


@pytest.fixture
def temp_dir():
    """Create a temporary directory for tests"""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield Path(tmpdir)


@pytest.fixture
def catalog():
    return default_catalog()


@pytest.fixture
def pathloss():
    return PathlossParams()


@pytest.fixture
def psr_set(catalog, pathloss):
    return derive_psr_set(catalog, pathloss, max_distance=1500.0)


def build_families(catalog, pathloss):
    """Analytic stand-in for calibrated families: reception floor scaled by (1 - CBR)."""
    levels = default_cbr_levels()
    distances = default_distances()
    families = []
    for profile in catalog:
        floor = reception_floor(profile, pathloss, distances)
        values = np.outer(1.0 - levels, floor)
        counts = np.full(values.shape, 100, dtype=np.int64)
        families.append(PdrCurveFamily.from_arrays(profile.id, levels, distances, values, counts))
    return families


@pytest.fixture
def link_curves(catalog, pathloss):
    return LinkCurves.from_families(build_families(catalog, pathloss))


@pytest.fixture
def sample_manifest():
    """Provide a small run manifest for tests"""
    return {
        "seed": 3,
        "capacity": {
            "payload": 1024,
            "cbr_max": 0.6,
            "sweep": [{"rate_mbps": 0.5, "mcs_mode": "highest"}],
        },
        "calibration": {
            "cbr_levels": [0.0, 0.3],
            "distance_max": 100,
            "distance_step": 50,
            "trials": 5,
            "scene": {"density": 20, "ring_length": 600, "step_time": 0.2, "max_measure_time": 2.0,
                      "tolerance": 0.05},
        },
        "simulation": {
            "schemes": ["single_rat(1)", "random"],
            "densities": [20],
            "road_length": 500,
            "sim_time": 3.0,
            "warmup": 1.0,
        },
        "cost": {"neighbors_max": 10, "cpu_ghz": [1, 2]},
    }
