import numpy as np
import pytest

from facefit.model import make_synthetic_model
from facefit.pose import PoseTransform, rotation_matrix
from facefit.render import camera_points, triangle_normals


@pytest.fixture(scope="session")
def small_model():
    """642-vertex model used by most unit tests."""
    return make_synthetic_model(n_subdiv=3, k_id=16, k_exp=8, seed=0)


@pytest.fixture(scope="session")
def fit_model():
    """Model used by the fitting tests and the acceptance suite."""
    return make_synthetic_model(n_subdiv=4, k_id=16, k_exp=8, seed=0)


def random_similarity(rng, f_range=(0.5, 2.0)):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    R = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])
    return rng.uniform(*f_range), R, rng.normal(scale=10.0, size=3)


def face_pose(canvas=128, yaw=0.0, pitch=0.0, scale=0.55):
    t = np.array([canvas / 2, canvas / 2, 0.0])
    return PoseTransform.compose(scale * canvas / 128, rotation_matrix(yaw, pitch, 0.0), t)


def confident_vertices(shape, tris, T, thresh=0.05):
    """Vertices whose incident triangles all have unit-normal |n_z| > thresh."""
    cam = camera_points(shape, T)
    n = triangle_normals(cam, tris)
    nz = np.abs(n[:, 2]) / np.linalg.norm(n, axis=1)
    ok = np.ones(len(cam), dtype=bool)
    np.logical_and.at(ok, tris.ravel(), np.repeat(nz > thresh, 3))
    return ok


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Append one summary line per acceptance criterion."""
    return ACCEPTANCE_LINES.append


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
