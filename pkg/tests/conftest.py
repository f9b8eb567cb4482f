import numpy as np
import pytest

from dynpact.geometry import standard_geometry
from dynpact.phantoms import make_rank4_phantom, simulate_measurements


@pytest.fixture(scope="session")
def tiny_problem():
    """Small 4-view problem shared by solver and metrics tests.

    8x8x2 grid, 12 frames, 2 arcs of 6 elements. Cheap enough to run a
    forward pass in milliseconds but structured like the real thing.
    """
    truth = make_rank4_phantom((8, 8, 2), 12)
    geometry = standard_geometry(
        2,
        frame_count=12,
        angular_step=np.radians(30.0),
        elements_per_arc=6,
        radius=0.010,
        sample_count=256,
        sample_interval=4e-8,
    )
    data = simulate_measurements(truth, geometry)
    return truth, geometry, data
