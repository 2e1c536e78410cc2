"""Linear morphable face model: synthesis, procedural models and file I/O.

Shapes are stored interleaved (x0, y0, z0, x1, ...) in millimetres. The
synthetic faces look toward +z with +y pointing at the chin, so a frontal pose
maps model y to image rows directly.
"""
from __future__ import annotations

import io
import os
from dataclasses import dataclass, field

import numpy as np

from facefit.errors import (
    DimensionMismatch,
    InconsistentDimensions,
    MalformedHeader,
    TruncatedPayload,
)

REGION_NAMES = ("other", "eye", "nose", "mouth")
OTHER, EYE, NOSE, MOUTH = range(4)

# basis sizes of the full-scale face models; the synthetic models default far smaller
FULL_SCALE_DIMS = {"k_id": 199, "k_exp": 29}
MAGIC = "FMDL1"
BLOCK_ORDER = (
    "mean_shape",
    "id_basis",
    "exp_basis",
    "sigma_id",
    "sigma_exp",
    "uv_coords",
    "triangles",
    "landmark_indices",
    "region_labels",
)

# Landmark positions on the frontal face plane (x, y) in mm, following the
# usual 68-point layout: jaw 0-16, brows 17-26, nose 27-35, eyes 36-47 and
# mouth 48-67. Outer eye corners are 36 and 45.
_theta = np.linspace(0.0, np.pi, 17)
_JAW = np.stack([-66.0 * np.cos(_theta), 5.0 + 62.0 * np.sin(_theta)], axis=1)
_BROW_L = [(-50, -36), (-42, -41), (-33, -43), (-24, -42), (-14, -39)]
_BROW_R = [(-x, y) for x, y in reversed(_BROW_L)]
_NOSE = [(0, -25), (0, -15), (0, -5), (0, 6), (-14, 18), (-7, 20), (0, 21), (7, 20),
         (14, 18)]
_EYE_L = [(-44, -22), (-36, -27), (-27, -27), (-20, -22), (-27, -18), (-36, -18)]
_EYE_R = [(20, -22), (27, -27), (36, -27), (44, -22), (36, -18), (27, -18)]
_MOUTH = [(-25, 45), (-16, 39), (-6, 37), (0, 38), (6, 37), (16, 39), (25, 45),
          (16, 51), (6, 54), (0, 54), (-6, 54), (-16, 51),
          (-19, 45), (-7, 42), (0, 42), (7, 42), (19, 45), (7, 48), (0, 48), (-7, 48)]
LANDMARK_TEMPLATE = np.concatenate(
    [_JAW, _BROW_L, _BROW_R, _NOSE, _EYE_L, _EYE_R, _MOUTH]
).astype(np.float64)
OUTER_EYE_CORNERS = (36, 45)

HEAD_RADII = np.array([75.0, 100.0, 85.0])


def _readonly(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FaceModel:
    """Mean shape plus identity/expression bases over a fixed triangle mesh.

    Arrays are copied and made read-only on construction.
    """

    mean_shape: np.ndarray
    id_basis: np.ndarray
    exp_basis: np.ndarray
    sigma_id: np.ndarray
    sigma_exp: np.ndarray
    triangles: np.ndarray
    landmark_indices: np.ndarray
    region_labels: np.ndarray
    uv_coords: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        conv = {
            "mean_shape": np.float64,
            "id_basis": np.float64,
            "exp_basis": np.float64,
            "sigma_id": np.float64,
            "sigma_exp": np.float64,
            "triangles": np.int64,
            "landmark_indices": np.int64,
            "region_labels": np.int8,
            "uv_coords": np.float64,
        }
        for name, dtype in conv.items():
            object.__setattr__(self, name, _readonly(getattr(self, name), dtype))
        self.validate()

    @property
    def n_vertices(self) -> int:
        return self.mean_shape.shape[0] // 3

    @property
    def k_id(self) -> int:
        return self.id_basis.shape[1]

    @property
    def k_exp(self) -> int:
        return self.exp_basis.shape[1]

    @property
    def n_landmarks(self) -> int:
        return self.landmark_indices.shape[0]

    def validate(self):
        n3 = self.mean_shape.shape[0]
        if self.mean_shape.ndim != 1 or n3 % 3:
            raise DimensionMismatch("mean_shape must be a flat vector of length 3N")
        n = n3 // 3
        for name in ("id_basis", "exp_basis"):
            b = getattr(self, name)
            if b.ndim != 2 or b.shape[0] != n3:
                raise DimensionMismatch(f"{name} must have 3N = {n3} rows, got {b.shape}")
        if self.sigma_id.shape != (self.id_basis.shape[1],):
            raise DimensionMismatch("sigma_id length must match id_basis columns")
        if self.sigma_exp.shape != (self.exp_basis.shape[1],):
            raise DimensionMismatch("sigma_exp length must match exp_basis columns")
        if np.any(self.sigma_id <= 0) or np.any(self.sigma_exp <= 0):
            raise DimensionMismatch("sigma vectors must be strictly positive")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise DimensionMismatch("triangles must be an (M, 3) array")
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= n):
            raise DimensionMismatch("triangle index out of range")
        lm = self.landmark_indices
        if lm.size and (lm.min() < 0 or lm.max() >= n):
            raise DimensionMismatch("landmark index out of range")
        if np.unique(lm).size != lm.size:
            raise DimensionMismatch("landmark indices must be distinct")
        if self.region_labels.shape != (n,):
            raise DimensionMismatch("need one region label per vertex")
        if self.uv_coords.shape != (n, 2):
            raise DimensionMismatch("need one (u, v) pair per vertex")

    def params(self, alpha_id=None, alpha_exp=None) -> "FaceParams":
        return FaceParams(
            np.zeros(self.k_id) if alpha_id is None else alpha_id,
            np.zeros(self.k_exp) if alpha_exp is None else alpha_exp,
        )


@dataclass(frozen=True)
class FaceParams:
    alpha_id: np.ndarray
    alpha_exp: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alpha_id, dtype=np.float64).ravel()
        b = np.asarray(self.alpha_exp, dtype=np.float64).ravel()
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("parameters must be finite")
        object.__setattr__(self, "alpha_id", a)
        object.__setattr__(self, "alpha_exp", b)

    def scaled(self, c: float) -> "FaceParams":
        return FaceParams(c * self.alpha_id, c * self.alpha_exp)


def synthesize_shape(model: FaceModel, params: FaceParams) -> np.ndarray:
    """Return ``mean + B_id @ alpha_id + B_exp @ alpha_exp`` as an (N, 3) array."""
    if params.alpha_id.shape != (model.k_id,):
        raise DimensionMismatch(
            f"alpha_id has length {params.alpha_id.size}, model expects {model.k_id}")
    if params.alpha_exp.shape != (model.k_exp,):
        raise DimensionMismatch(
            f"alpha_exp has length {params.alpha_exp.size}, model expects {model.k_exp}")
    s = model.mean_shape + model.id_basis @ params.alpha_id + model.exp_basis @ params.alpha_exp
    return s.reshape(-1, 3)


def as_points(shape) -> np.ndarray:
    s = np.asarray(shape, dtype=np.float64)
    if s.ndim == 1:
        if s.size % 3:
            raise DimensionMismatch("flat shape length must be a multiple of 3")
        s = s.reshape(-1, 3)
    if s.ndim != 2 or s.shape[1] != 3:
        raise DimensionMismatch(f"expected (N, 3) points, got {s.shape}")
    return s


def landmarks_of(model: FaceModel, shape) -> np.ndarray:
    pts = as_points(shape)
    if pts.shape[0] != model.n_vertices:
        raise DimensionMismatch(
            f"shape has {pts.shape[0]} vertices, model has {model.n_vertices}")
    return pts[model.landmark_indices]


def landmark_rows(model: FaceModel) -> np.ndarray:
    """Row indices of the flat 3N layout belonging to the landmarks, (L, 3)."""
    return 3 * model.landmark_indices[:, None] + np.arange(3)[None, :]


# -- procedural mesh -------------------------------------------------------

_PHI = (1.0 + 5.0 ** 0.5) / 2.0
_ICO_V = np.array([
    (-1, _PHI, 0), (1, _PHI, 0), (-1, -_PHI, 0), (1, -_PHI, 0),
    (0, -1, _PHI), (0, 1, _PHI), (0, -1, -_PHI), (0, 1, -_PHI),
    (_PHI, 0, -1), (_PHI, 0, 1), (-_PHI, 0, -1), (-_PHI, 0, 1),
], dtype=np.float64)
_ICO_F = np.array([
    (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
    (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
    (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
    (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
], dtype=np.int64)


def icosphere(n_subdiv: int):
    """Unit icosphere with outward, counter-clockwise triangles.

    Has ``10 * 4**n_subdiv + 2`` vertices and is symmetric under flipping any
    coordinate sign.
    """
    verts = [v / np.linalg.norm(v) for v in _ICO_V]
    faces = [tuple(f) for f in _ICO_F]
    for _ in range(n_subdiv):
        cache = {}

        def midpoint(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    v = np.array(verts)
    f = np.array(faces, dtype=np.int64)
    n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    inward = np.einsum("ij,ij->i", n, v[f].mean(axis=1)) < 0
    f[inward] = f[inward][:, ::-1]
    return v, f


def check_edge_manifold(triangles: np.ndarray) -> bool:
    """True when every directed edge occurs once and its reverse exists."""
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    directed = {tuple(x) for x in e.tolist()}
    if len(directed) != len(e):
        return False
    return all((b, a) in directed for a, b in directed)


def _gauss2(x, y, cx, cy, sx, sy):
    return np.exp(-((x - cx) ** 2 / (2 * sx ** 2) + (y - cy) ** 2 / (2 * sy ** 2)))


def _face_relief(p):
    """Frontal relief (mm along +z) added to the head ellipsoid."""
    x = p[:, 0] * HEAD_RADII[0]
    y = p[:, 1] * HEAD_RADII[1]
    front = np.clip(p[:, 2], 0.0, 1.0) ** 2
    relief = (
        28.0 * _gauss2(x, y, 0, 6, 10, 17)
        - 8.0 * (_gauss2(x, y, -32, -22, 12, 10) + _gauss2(x, y, 32, -22, 12, 10))
        + 6.0 * _gauss2(x, y, 0, -38, 40, 7)
        + 5.0 * _gauss2(x, y, 0, 46, 20, 6)
    )
    return front * relief


def _region_labels(p):
    x = p[:, 0] * HEAD_RADII[0]
    y = p[:, 1] * HEAD_RADII[1]
    labels = np.full(p.shape[0], OTHER, dtype=np.int8)
    front = p[:, 2] > 0.2
    eye = (((np.abs(x) - 32) / 16) ** 2 + ((y + 22) / 10) ** 2) < 1
    nose = ((x / 15) ** 2 + ((y - 2) / 24) ** 2) < 1
    mouth = ((x / 28) ** 2 + ((y - 45) / 12) ** 2) < 1
    labels[front & mouth] = MOUTH
    labels[front & nose] = NOSE
    labels[front & eye] = EYE
    return labels


def _pick_landmarks(p):
    xy = p[:, :2] * HEAD_RADII[:2]
    candidates = np.flatnonzero(p[:, 2] > 0.05)
    used = set()
    out = []
    for target in LANDMARK_TEMPLATE:
        d = np.linalg.norm(xy[candidates] - target, axis=1)
        for k in np.argsort(d, kind="stable"):
            idx = int(candidates[k])
            if idx not in used:
                used.add(idx)
                out.append(idx)
                break
    return np.array(out, dtype=np.int64)


def _smooth_fields(rng, p, k, n_centers=8, width=0.7):
    """k random low-frequency displacement fields on the unit sphere, (3N, k)."""
    out = np.empty((p.shape[0] * 3, k))
    for i in range(k):
        c = rng.normal(size=(n_centers, 3))
        c /= np.linalg.norm(c, axis=1, keepdims=True)
        w = rng.normal(size=(n_centers, 3))
        d2 = ((p[:, None, :] - c[None, :, :]) ** 2).sum(-1)
        field_ = np.exp(-d2 / (2 * width ** 2)) @ w
        out[:, i] = field_.ravel()
    return out


def _column_rms(b):
    return np.sqrt(np.mean(b ** 2, axis=0))


def make_synthetic_model(n_subdiv: int = 3, k_id: int = 16, k_exp: int = 8,
                         seed: int = 0) -> FaceModel:
    """Procedural face-like head model.

    The base mesh is an icosphere stretched to a 150 x 200 x 170 mm ellipsoid
    with a nose, brow, eye sockets and lips pressed into the front. Identity
    columns are global smooth random fields; expression columns are the same
    kind of field windowed to the mouth or eye area. ``sigma`` is the RMS of
    each basis column.
    """
    if k_id < 1 or k_exp < 1:
        raise ValueError("k_id and k_exp must be >= 1")
    rng = np.random.default_rng(seed)
    p, tris = icosphere(n_subdiv)
    if not check_edge_manifold(tris):
        raise RuntimeError("generated mesh is not edge-manifold")

    pts = p * HEAD_RADII
    pts[:, 2] += _face_relief(p)
    mean = pts.ravel()

    def target_rms(k, top):
        return top / np.sqrt(1.0 + 0.5 * np.arange(k))

    id_basis = _smooth_fields(rng, p, k_id)
    id_basis *= target_rms(k_id, 3.0) / _column_rms(id_basis)

    exp_basis = _smooth_fields(rng, p, k_exp, n_centers=6, width=0.5)
    x = p[:, 0] * HEAD_RADII[0]
    y = p[:, 1] * HEAD_RADII[1]
    front = np.clip(p[:, 2], 0.0, 1.0)
    mouth_w = front * _gauss2(x, y, 0, 45, 35, 25)
    eye_w = front * (_gauss2(x, y, -32, -25, 22, 16) + _gauss2(x, y, 32, -25, 22, 16))
    for i in range(k_exp):
        w = mouth_w if i % 2 == 0 else eye_w
        exp_basis[:, i] *= np.repeat(w, 3)
    exp_basis *= target_rms(k_exp, 2.5) / _column_rms(exp_basis)

    theta = np.arctan2(p[:, 0], p[:, 2])
    uv = np.stack([(theta / (2 * np.pi)) + 0.5, (p[:, 1] + 1.0) / 2.0], axis=1)
    uv = np.clip(uv, 0.0, 1.0)

    return FaceModel(
        mean_shape=mean,
        id_basis=id_basis,
        exp_basis=exp_basis,
        sigma_id=_column_rms(id_basis),
        sigma_exp=_column_rms(exp_basis),
        triangles=tris,
        landmark_indices=_pick_landmarks(p),
        region_labels=_region_labels(p),
        uv_coords=uv,
        meta={"n_subdiv": n_subdiv, "seed": seed},
    )


# -- file I/O --------------------------------------------------------------

def _block_shapes(n, k_id, k_exp, n_lm, n_tri):
    return {
        "mean_shape": (3 * n,),
        "id_basis": (3 * n, k_id),
        "exp_basis": (3 * n, k_exp),
        "sigma_id": (k_id,),
        "sigma_exp": (k_exp,),
        "uv_coords": (n, 2),
        "triangles": (n_tri, 3),
        "landmark_indices": (n_lm,),
        "region_labels": (n,),
    }


def model_to_bytes(model: FaceModel) -> bytes:
    buf = io.BytesIO()
    header = (
        f"{MAGIC}\n"
        f"N {model.n_vertices}\n"
        f"K_id {model.k_id}\n"
        f"K_exp {model.k_exp}\n"
        f"L {model.n_landmarks}\n"
        f"T {model.triangles.shape[0]}\n"
        f"blocks {' '.join(BLOCK_ORDER)}\n"
        "end\n"
    )
    buf.write(header.encode("ascii"))
    for name in BLOCK_ORDER:
        buf.write(np.asarray(getattr(model, name)).astype("<f4").tobytes(order="C"))
    return buf.getvalue()


def save_model(model: FaceModel, path) -> None:
    """Write a model file: ASCII header then little-endian float32 blocks."""
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(model))


def _parse_header(data: bytes):
    end = data.find(b"end\n")
    if not data.startswith(MAGIC.encode() + b"\n") or end < 0:
        raise MalformedHeader("missing FMDL1 magic or header terminator")
    try:
        lines = data[:end].decode("ascii").splitlines()[1:]
    except UnicodeDecodeError as exc:
        raise MalformedHeader("header is not ASCII") from exc
    fields = {}
    for line in lines:
        key, _, value = line.partition(" ")
        fields[key] = value.strip()
    try:
        dims = {k: int(fields[k]) for k in ("N", "K_id", "K_exp", "L", "T")}
        blocks = tuple(fields["blocks"].split())
    except (KeyError, ValueError) as exc:
        raise MalformedHeader(f"bad or missing header field: {exc}") from exc
    if blocks != BLOCK_ORDER:
        raise MalformedHeader(f"unexpected block list {blocks}")
    if any(v < 0 for v in dims.values()):
        raise MalformedHeader("negative dimension in header")
    return dims, end + len(b"end\n")


def model_from_bytes(data: bytes) -> FaceModel:
    dims, offset = _parse_header(data)
    shapes = _block_shapes(dims["N"], dims["K_id"], dims["K_exp"], dims["L"], dims["T"])
    need = sum(int(np.prod(s)) for s in shapes.values()) * 4
    payload = data[offset:]
    if len(payload) < need:
        raise TruncatedPayload(f"payload has {len(payload)} bytes, header declares {need}")
    if len(payload) > need:
        raise InconsistentDimensions(
            f"payload has {len(payload) - need} bytes beyond the declared blocks")
    arrays = {}
    pos = 0
    for name in BLOCK_ORDER:
        count = int(np.prod(shapes[name]))
        arrays[name] = np.frombuffer(payload, dtype="<f4", count=count, offset=pos
                                     ).astype(np.float64).reshape(shapes[name])
        pos += 4 * count
    for name in ("triangles", "landmark_indices", "region_labels"):
        a = arrays[name]
        if not np.all(a == np.round(a)):
            raise InconsistentDimensions(f"{name} holds non-integer values")
        arrays[name] = a.astype(np.int64)
    n = dims["N"]
    if arrays["triangles"].size and (arrays["triangles"].min() < 0
                                     or arrays["triangles"].max() >= n):
        raise InconsistentDimensions("triangle index exceeds vertex count")
    lm = arrays["landmark_indices"]
    if lm.size and (lm.min() < 0 or lm.max() >= n or np.unique(lm).size != lm.size):
        raise InconsistentDimensions("landmark indices out of range or repeated")
    if np.any(arrays["sigma_id"] <= 0) or np.any(arrays["sigma_exp"] <= 0):
        raise InconsistentDimensions("sigma entries must be positive")
    return FaceModel(**arrays)


def load_model(path) -> FaceModel:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())


def export_obj(path, vertices, triangles, uv=None) -> None:
    """Write a Wavefront OBJ with optional per-vertex texture coordinates."""
    v = as_points(vertices)
    lines = [f"v {x:.6f} {y:.6f} {z:.6f}" for x, y, z in v]
    if uv is not None:
        lines += [f"vt {a:.6f} {b:.6f}" for a, b in np.asarray(uv)]
        lines += [f"f {a}/{a} {b}/{b} {c}/{c}" for a, b, c in np.asarray(triangles) + 1]
    else:
        lines += [f"f {a} {b} {c}" for a, b, c in np.asarray(triangles) + 1]
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_obj_vertices(path) -> np.ndarray:
    verts = []
    with open(path) as fh:
        for line in fh:
            if line.startswith("v "):
                verts.append([float(t) for t in line.split()[1:4]])
    return np.array(verts, dtype=np.float64).reshape(-1, 3)


def load_obj(path):
    """Return (vertices, triangles) from an OBJ written by :func:`export_obj`."""
    verts, faces = [], []
    with open(path) as fh:
        for line in fh:
            if line.startswith("v "):
                verts.append([float(t) for t in line.split()[1:4]])
            elif line.startswith("f "):
                faces.append([int(t.split("/")[0]) - 1 for t in line.split()[1:4]])
    return (np.array(verts, dtype=np.float64).reshape(-1, 3),
            np.array(faces, dtype=np.int64).reshape(-1, 3))
