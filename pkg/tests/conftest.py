import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from viscoslab import grid as sg
from viscoslab import kinematics as km

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def grid3():
    return sg.build_grid(-1.0, 1.0, 2 * np.pi, 2 * np.pi, 16, 16, 16, 16, "3D")


@pytest.fixture
def grid2():
    return sg.build_grid(-1.0, 1.0, 2 * np.pi, 2 * np.pi, 16, 1, 16, 16, "2D")


@pytest.fixture
def params():
    return km.MaterialParams.default(100.0)


def smooth_vector(grid, amp=0.05, seed=0):
    """Smooth continuous vector field vanishing on both walls."""
    rng = np.random.default_rng(seed)
    c = rng.uniform(-1, 1, size=(3, 3))

    def fn(y1, y2, y3, side):
        vert = np.sin(np.pi * (y3 + 1) / 2)
        out = np.stack([amp * vert * (c[i, 0] * np.cos(y1) + c[i, 1] * np.sin(2 * y1 + y2)
                                      + c[i, 2] * np.cos(y2)) for i in range(3)])
        if grid.dim_mode == "2D":
            out[1] = 0.0
        return out

    f = sg.Field.from_function(grid, fn, continuous=True, dirichlet=True)
    f.minus[:, 0] = 0.0
    f.plus[:, -1] = 0.0
    return f
