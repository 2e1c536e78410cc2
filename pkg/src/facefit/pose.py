"""Scaled-orthographic projection and closed-form pose from landmarks.

A pose is the 3x4 matrix ``T = [f R | t]`` mapping model points to camera
space; image coordinates are the first two camera coordinates (x = column,
y = row, in pixels) and larger z is nearer the viewer.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from facefit.errors import DegenerateLandmarks, SingularTransform

FULL3D = "full3d"
XY_ONLY = "xy_only"
_MODE_ALIASES = {"full3d": FULL3D, "3d": FULL3D, "xyz": FULL3D,
                 "xy_only": XY_ONLY, "xy": XY_ONLY, "2d": XY_ONLY}

DEGENERACY_RTOL = 1e-9


@dataclass(frozen=True, eq=False)
class PoseTransform:
    T: np.ndarray

    def __post_init__(self):
        T = np.array(self.T, dtype=np.float64)
        if T.shape != (3, 4):
            raise ValueError(f"pose matrix must be 3x4, got {T.shape}")
        if not np.all(np.isfinite(T)):
            raise ValueError("pose matrix must be finite")
        T.setflags(write=False)
        object.__setattr__(self, "T", T)

    @classmethod
    def identity(cls) -> "PoseTransform":
        return cls(np.hstack([np.eye(3), np.zeros((3, 1))]))

    @classmethod
    def compose(cls, f, R, t) -> "PoseTransform":
        R = np.asarray(R, dtype=np.float64)
        t = np.asarray(t, dtype=np.float64).reshape(3, 1)
        return cls(np.hstack([f * R, t]))

    @property
    def linear(self) -> np.ndarray:
        return self.T[:, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.T[:, 3]

    def apply(self, points) -> np.ndarray:
        """Camera-space coordinates ``T [p; 1]`` of (M, 3) points."""
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return p @ self.T[:, :3].T + self.T[:, 3]


@dataclass(frozen=True, eq=False)
class LandmarkObservation:
    """Target landmark positions in camera space.

    In ``xy_only`` mode the z column is replaced by NaN so that nothing can
    read it by accident; use :attr:`observed` for the valid channels.
    """

    coords: np.ndarray
    mode: str = FULL3D

    def __post_init__(self):
        mode = _MODE_ALIASES.get(self.mode)
        if mode is None:
            raise ValueError(f"unknown landmark mode {self.mode!r}")
        c = np.array(self.coords, dtype=np.float64)
        if c.ndim != 2 or c.shape[1] not in (2, 3):
            raise ValueError(f"landmark coords must be (L, 2) or (L, 3), got {c.shape}")
        if c.shape[1] == 2:
            if mode == FULL3D:
                raise ValueError("full3d landmarks need a z column")
            c = np.hstack([c, np.zeros((c.shape[0], 1))])
        if mode == XY_ONLY:
            c[:, 2] = np.nan
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)
        object.__setattr__(self, "mode", mode)

    @property
    def channels(self) -> int:
        return 3 if self.mode == FULL3D else 2

    @property
    def observed(self) -> np.ndarray:
        return self.coords[:, :self.channels]

    def __len__(self):
        return self.coords.shape[0]


def project(T, points) -> np.ndarray:
    """Image-plane projection: drop z from ``f R s + t``."""
    T = T.T if isinstance(T, PoseTransform) else np.asarray(T, dtype=np.float64)
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return p @ T[:2, :3].T + T[:2, 3]


def homogeneous_design(X) -> np.ndarray:
    """Rows ``[x, y, z, 1]`` for each landmark, i.e. ``[X; 1]`` transposed."""
    X = np.asarray(X, dtype=np.float64).reshape(-1, 3)
    return np.hstack([X, np.ones((X.shape[0], 1))])


def _check_design(A):
    if A.shape[0] < 4:
        raise DegenerateLandmarks(f"need at least 4 landmarks, got {A.shape[0]}")
    if not np.all(np.isfinite(A)):
        raise DegenerateLandmarks("landmarks contain non-finite values")
    s = np.linalg.svd(A, compute_uv=False)
    if s[-1] < DEGENERACY_RTOL * s[0]:
        raise DegenerateLandmarks(
            f"landmarks do not span 3D (singular value ratio {s[-1] / s[0]:.3e})")


def complete_third_row(rows2: np.ndarray) -> np.ndarray:
    """Append a row ``r1 x r2`` (scaled to the mean of |r1|, |r2|) and t_z = 0."""
    r1, r2 = rows2[0, :3], rows2[1, :3]
    n = np.cross(r1, r2)
    norm = np.linalg.norm(n)
    if norm == 0:
        raise DegenerateLandmarks("first two pose rows are parallel")
    scale = 0.5 * (np.linalg.norm(r1) + np.linalg.norm(r2))
    r3 = np.append(n / norm * scale, 0.0)
    return np.vstack([rows2, r3])


def solve_rows(X, targets) -> np.ndarray:
    """Least-squares rows ``T_c`` minimising ``|T_c [X; 1] - targets^T|``.

    ``targets`` is (L, c); returns a (c, 4) matrix.
    """
    A = homogeneous_design(X)
    _check_design(A)
    sol, *_ = np.linalg.lstsq(A, np.asarray(targets, dtype=np.float64), rcond=None)
    return sol.T


def solve_pose(X, obs: LandmarkObservation) -> PoseTransform:
    """Closed-form affine transform taking model landmarks X onto ``obs``.

    For ``full3d`` observations this is the unconstrained minimiser of
    ``|T [X; 1] - X_uv|``. For ``xy_only`` only the two image rows are
    solved and the depth row is completed from their cross product.
    """
    X = np.asarray(X, dtype=np.float64).reshape(-1, 3)
    if len(obs) != X.shape[0]:
        raise DegenerateLandmarks(
            f"{X.shape[0]} model landmarks but {len(obs)} observations")
    rows = solve_rows(X, obs.observed)
    if obs.mode == XY_ONLY:
        rows = complete_third_row(rows)
    return PoseTransform(rows)


@dataclass(frozen=True)
class Similarity:
    f: float
    R: np.ndarray
    t: np.ndarray
    residual: float = 0.0

    def to_pose(self) -> PoseTransform:
        return PoseTransform.compose(self.f, self.R, self.t)


def nearest_rotation(M) -> np.ndarray:
    U, _, Vt = np.linalg.svd(M)
    d = np.sign(np.linalg.det(U @ Vt))
    return U @ np.diag([1.0, 1.0, d if d != 0 else 1.0]) @ Vt


def decompose(T) -> Similarity:
    """Split an affine pose into scale, nearest rotation and translation.

    ``f`` is the mean row norm of the linear block and ``R`` its orthogonal
    polar factor with determinant forced to +1. ``residual`` is the Frobenius
    distance between ``M / f`` and ``R``.
    """
    T = T.T if isinstance(T, PoseTransform) else np.asarray(T, dtype=np.float64)
    M = T[:, :3]
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0 or s[-1] < 1e-12 * s[0]:
        raise SingularTransform("linear block of the pose is singular")
    f = float(np.mean(np.linalg.norm(M, axis=1)))
    R = nearest_rotation(M)
    residual = float(np.linalg.norm(M / f - R))
    return Similarity(f, R, T[:, 3].copy(), residual)


def umeyama_similarity(X, Y, with_scale: bool = True) -> PoseTransform:
    """Least-squares similarity (or rigid, ``with_scale=False``) map X -> Y."""
    X = np.asarray(X, dtype=np.float64).reshape(-1, 3)
    Y = np.asarray(Y, dtype=np.float64).reshape(-1, 3)
    if X.shape != Y.shape:
        raise DegenerateLandmarks("point sets differ in size")
    if X.shape[0] < 3:
        raise DegenerateLandmarks("need at least 3 point pairs")
    mx, my = X.mean(axis=0), Y.mean(axis=0)
    xc, yc = X - mx, Y - my
    var_x = np.mean(np.sum(xc ** 2, axis=1))
    cov = yc.T @ xc / X.shape[0]
    U, D, Vt = np.linalg.svd(cov)
    if var_x == 0 or D[1] < 1e-12 * max(D[0], 1e-300):
        raise DegenerateLandmarks("point configuration is degenerate")
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    c = np.trace(np.diag(D) @ S) / var_x if with_scale else 1.0
    t = my - c * R @ mx
    return PoseTransform.compose(c, R, t)


def rotation_matrix(yaw=0.0, pitch=0.0, roll=0.0, degrees=True) -> np.ndarray:
    """``Rz(roll) @ Rx(pitch) @ Ry(yaw)``; yaw turns the face about the y axis."""
    if degrees:
        yaw, pitch, roll = np.radians([yaw, pitch, roll])
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cr, sr = np.cos(roll), np.sin(roll)
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rx = np.array([[1, 0, 0], [0, cp, -sp], [0, sp, cp]])
    Rz = np.array([[cr, -sr, 0], [sr, cr, 0], [0, 0, 1]])
    return Rz @ Rx @ Ry


def yaw_of(R) -> float:
    """Yaw in degrees: heading of the face's forward (+z) axis about the y axis."""
    fwd = np.asarray(R)[:, 2]
    return float(np.degrees(np.arctan2(fwd[0], fwd[2])))


def rodrigues(rvec) -> np.ndarray:
    rvec = np.asarray(rvec, dtype=np.float64)
    theta = np.linalg.norm(rvec)
    if theta < 1e-12:
        K = np.array([[0, -rvec[2], rvec[1]], [rvec[2], 0, -rvec[0]], [-rvec[1], rvec[0], 0]])
        return np.eye(3) + K
    k = rvec / theta
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(theta) * K + (1 - np.cos(theta)) * K @ K


# -- landmark CSV ----------------------------------------------------------

def write_landmarks(path, obs: LandmarkObservation) -> None:
    tag = "full3d" if obs.mode == FULL3D else "xy"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["idx", "x", "y", "z", "mode"])
        for i, (x, y, z) in enumerate(obs.coords):
            zs = repr(float(z)) if obs.mode == FULL3D else ""
            w.writerow([i, repr(float(x)), repr(float(y)), zs, tag])


def read_landmarks(path) -> LandmarkObservation:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no landmarks")
    if set(rows[0]) != {"idx", "x", "y", "z", "mode"}:
        raise ValueError(f"{path}: expected header idx,x,y,z,mode")
    modes = {_MODE_ALIASES.get(r["mode"].strip()) for r in rows}
    if len(modes) != 1 or None in modes:
        raise ValueError(f"{path}: inconsistent or unknown landmark modes")
    mode = modes.pop()
    rows.sort(key=lambda r: int(r["idx"]))
    coords = np.array([[float(r["x"]), float(r["y"]),
                        float(r["z"]) if mode == FULL3D else 0.0] for r in rows])
    return LandmarkObservation(coords, mode)


def write_pose(path, T) -> None:
    M = T.T if isinstance(T, PoseTransform) else np.asarray(T, dtype=np.float64)
    with open(path, "w") as fh:
        for row in M:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_pose(path) -> PoseTransform:
    with open(path) as fh:
        rows = [[float(t) for t in line.split()] for line in fh if line.strip()]
    return PoseTransform(np.array(rows))
