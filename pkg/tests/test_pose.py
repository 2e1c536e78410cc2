import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_similarity
from facefit.errors import DegenerateLandmarks, SingularTransform
from facefit.pose import (
    FULL3D,
    XY_ONLY,
    LandmarkObservation,
    PoseTransform,
    decompose,
    homogeneous_design,
    project,
    read_landmarks,
    read_pose,
    rodrigues,
    rotation_matrix,
    solve_pose,
    umeyama_similarity,
    write_landmarks,
    write_pose,
    yaw_of,
)


def residual(T, X, Y):
    return float(np.linalg.norm(homogeneous_design(X) @ T.T.T - Y))


def cloud(rng, n=68):
    return rng.normal(scale=50.0, size=(n, 3))


# -- project -----------------------------------------------------------------

def test_project_identity():
    assert np.allclose(project(PoseTransform.identity(), [[1.0, 2.0, 3.0]]), [[1.0, 2.0]])


def test_project_scale_and_translation():
    T = PoseTransform.compose(2.0, np.eye(3), [1.0, 0.0, 0.0])
    assert np.allclose(project(T, [[1.0, 2.0, 3.0]]), [[3.0, 4.0]])


def test_project_matches_matrix_multiply():
    rng = np.random.default_rng(0)
    M = rng.normal(size=(3, 4))
    P = rng.normal(size=(50, 3))
    expect = np.array([(M @ np.append(p, 1.0))[:2] for p in P])
    assert np.max(np.abs(project(PoseTransform(M), P) - expect)) < 1e-12


# -- solve_pose --------------------------------------------------------------

def test_solve_pose_exact_similarity():
    rng = np.random.default_rng(1)
    X = cloud(rng)
    f, R, t = random_similarity(rng)
    Y = PoseTransform.compose(f, R, t).apply(X)
    T = solve_pose(X, LandmarkObservation(Y))
    assert residual(T, X, Y) < 1e-9


def test_solve_pose_identity_correspondence():
    X = cloud(np.random.default_rng(2))
    T = solve_pose(X, LandmarkObservation(X))
    assert np.max(np.abs(T.T - PoseTransform.identity().T)) < 1e-9


def test_solve_pose_coplanar_is_degenerate():
    X = cloud(np.random.default_rng(3))
    X[:, 2] = 5.0
    with pytest.raises(DegenerateLandmarks):
        solve_pose(X, LandmarkObservation(X))


def test_solve_pose_needs_four_landmarks():
    X = cloud(np.random.default_rng(3), n=3)
    with pytest.raises(DegenerateLandmarks):
        solve_pose(X, LandmarkObservation(X))


def test_solve_pose_count_mismatch():
    X = cloud(np.random.default_rng(3))
    with pytest.raises(DegenerateLandmarks):
        solve_pose(X, LandmarkObservation(X[:10]))


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_noise_free_similarity_residual(seed):
    rng = np.random.default_rng(seed)
    X = cloud(rng)
    Y = PoseTransform.compose(*random_similarity(rng)).apply(X)
    assert residual(solve_pose(X, LandmarkObservation(Y)), X, Y) < 1e-9


def test_solve_pose_is_least_squares_minimiser():
    rng = np.random.default_rng(4)
    X = cloud(rng)
    Y = PoseTransform.compose(*random_similarity(rng)).apply(X) + rng.normal(size=X.shape)
    T = solve_pose(X, LandmarkObservation(Y))
    best = residual(T, X, Y)
    for _ in range(1000):
        P = PoseTransform(T.T + rng.normal(scale=1e-3, size=(3, 4)))
        assert best <= residual(P, X, Y)


def test_xy_only_matches_full3d_rows():
    rng = np.random.default_rng(5)
    X = cloud(rng)
    Y = PoseTransform.compose(*random_similarity(rng)).apply(X) + rng.normal(size=X.shape)
    full = solve_pose(X, LandmarkObservation(Y, FULL3D))
    xy = solve_pose(X, LandmarkObservation(Y[:, :2], XY_ONLY))
    assert np.max(np.abs(full.T[:2] - xy.T[:2])) < 1e-9


def test_xy_only_third_row_completion():
    rng = np.random.default_rng(6)
    X = cloud(rng)
    f, R, t = random_similarity(rng)
    Y = PoseTransform.compose(f, R, t).apply(X)
    T = solve_pose(X, LandmarkObservation(Y[:, :2], XY_ONLY)).T
    r1, r2, r3 = T[0, :3], T[1, :3], T[2, :3]
    n = np.cross(r1, r2)
    expect = n / np.linalg.norm(n) * 0.5 * (np.linalg.norm(r1) + np.linalg.norm(r2))
    assert np.allclose(r3, expect, atol=1e-12)
    assert T[2, 3] == 0.0
    # on similarity data the completed row is the true one up to t_z
    assert np.allclose(r3, f * R[2], atol=1e-8)


def test_xy_only_ignores_z_channel():
    rng = np.random.default_rng(7)
    X = cloud(rng)
    Y = PoseTransform.compose(*random_similarity(rng)).apply(X)
    a = solve_pose(X, LandmarkObservation(Y, XY_ONLY))
    Y[:, 2] = rng.normal(scale=1e6, size=len(Y))
    b = solve_pose(X, LandmarkObservation(Y, XY_ONLY))
    assert np.array_equal(a.T, b.T)
    assert np.all(np.isnan(LandmarkObservation(Y, XY_ONLY).coords[:, 2]))


def test_landmark_mode_validation():
    with pytest.raises(ValueError):
        LandmarkObservation(np.zeros((5, 3)), "bogus")
    with pytest.raises(ValueError):
        LandmarkObservation(np.zeros((5, 2)), FULL3D)


# -- decompose ---------------------------------------------------------------

def test_decompose_round_trip():
    rng = np.random.default_rng(8)
    for _ in range(50):
        f, R, t = random_similarity(rng)
        d = decompose(PoseTransform.compose(f, R, t))
        assert abs(d.f - f) < 1e-8
        assert np.max(np.abs(d.R - R)) < 1e-8
        assert np.max(np.abs(d.t - t)) < 1e-8
        assert np.linalg.norm(d.R.T @ d.R - np.eye(3)) < 1e-8


def test_decompose_identity():
    d = decompose(PoseTransform.identity())
    assert d.f == pytest.approx(1.0)
    assert np.allclose(d.R, np.eye(3))
    assert np.allclose(d.t, 0.0)
    assert d.residual < 1e-12


def test_decompose_reflection():
    M = np.diag([1.0, 1.0, -1.0])
    d = decompose(np.hstack([2.0 * M, np.zeros((3, 1))]))
    assert np.linalg.det(d.R) == pytest.approx(1.0)
    # polar oracle: nearest rotation to a z mirror flips the smallest axis
    assert np.allclose(d.R, np.diag([1.0, -1.0, -1.0])) or np.allclose(d.R, np.diag([-1.0, 1.0, -1.0])) \
        or np.allclose(d.R, np.eye(3))
    assert d.residual == pytest.approx(np.linalg.norm(M - d.R))
    assert d.residual > 1.0


def test_decompose_singular():
    with pytest.raises(SingularTransform):
        decompose(np.zeros((3, 4)))


def test_compose_decompose_identity_property():
    rng = np.random.default_rng(9)
    for _ in range(100):
        f, R, t = random_similarity(rng)
        back = decompose(PoseTransform.compose(f, R, t)).to_pose()
        assert np.max(np.abs(back.T - PoseTransform.compose(f, R, t).T)) < 1e-8


# -- umeyama -----------------------------------------------------------------

def test_umeyama_agrees_with_solve_pose():
    rng = np.random.default_rng(10)
    X = cloud(rng)
    Y = PoseTransform.compose(*random_similarity(rng)).apply(X)
    U = umeyama_similarity(X, Y)
    T = solve_pose(X, LandmarkObservation(Y))
    assert np.max(np.abs(U.T - T.T)) < 1e-8


def test_umeyama_identity():
    X = cloud(np.random.default_rng(11))
    assert np.allclose(umeyama_similarity(X, X).T, PoseTransform.identity().T, atol=1e-12)


def test_umeyama_residual_not_below_affine():
    rng = np.random.default_rng(12)
    for _ in range(20):
        X = cloud(rng)
        Y = PoseTransform.compose(*random_similarity(rng)).apply(X) + rng.normal(scale=2.0, size=X.shape)
        ru = residual(umeyama_similarity(X, Y), X, Y)
        ra = residual(solve_pose(X, LandmarkObservation(Y)), X, Y)
        assert ru >= ra - 1e-9


def test_umeyama_degenerate():
    X = np.zeros((5, 3))
    with pytest.raises(DegenerateLandmarks):
        umeyama_similarity(X, X)


def test_rigid_umeyama_has_unit_scale():
    rng = np.random.default_rng(13)
    X = cloud(rng)
    Y = PoseTransform.compose(1.7, random_similarity(rng)[1], [1, 2, 3]).apply(X)
    assert decompose(umeyama_similarity(X, Y, with_scale=False)).f == pytest.approx(1.0)


# -- rotations and files -----------------------------------------------------

def test_rotation_helpers():
    R = rotation_matrix(30.0, 0.0, 0.0)
    assert yaw_of(R) == pytest.approx(30.0)
    assert np.allclose(rodrigues([0.0, np.radians(30.0), 0.0]), R)
    assert np.allclose(rodrigues([0.0, 0.0, 0.0]), np.eye(3))


def test_landmark_csv_round_trip(tmp_path):
    rng = np.random.default_rng(14)
    Y = rng.normal(size=(68, 3))
    for mode in (FULL3D, XY_ONLY):
        p = tmp_path / f"lm_{mode}.csv"
        write_landmarks(p, LandmarkObservation(Y, mode))
        assert p.read_text().splitlines()[0] == "idx,x,y,z,mode"
        back = read_landmarks(p)
        assert back.mode == mode
        assert np.array_equal(back.observed, LandmarkObservation(Y, mode).observed)


def test_landmark_csv_bad_header(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("i,x,y\n0,1,2\n")
    with pytest.raises(ValueError):
        read_landmarks(p)


def test_pose_file_round_trip(tmp_path):
    T = PoseTransform(np.random.default_rng(15).normal(size=(3, 4)))
    write_pose(tmp_path / "p.txt", T)
    assert np.array_equal(read_pose(tmp_path / "p.txt").T, T.T)
