"""Software rasterizer, vertex visibility and texture sampling/swapping.

Visibility maps are boolean arrays with one flag per vertex. Mesh arguments
accept a :class:`~facefit.model.FaceModel` or anything with a ``triangles``
attribute (``region_labels`` optional); a bare (M, 3) index array also works
where region weights are not needed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from facefit import kernels
from facefit.errors import DimensionMismatch
from facefit.images import bilinear
from facefit.model import EYE, MOUTH, NOSE, as_points
from facefit.pose import PoseTransform

REGION_WEIGHT = 5.0
BASE_WEIGHT = 1.0


@dataclass(frozen=True)
class Mesh:
    triangles: np.ndarray
    region_labels: np.ndarray | None = None


def _triangles(mesh) -> np.ndarray:
    tris = getattr(mesh, "triangles", mesh)
    return np.asarray(tris, dtype=np.int64).reshape(-1, 3)


def _labels(mesh, n):
    labels = getattr(mesh, "region_labels", None)
    if labels is None:
        return np.zeros(n, dtype=np.int8)
    return np.asarray(labels)


def _pose_matrix(T):
    return T.T if isinstance(T, PoseTransform) else np.asarray(T, dtype=np.float64)


def camera_points(shape, T) -> np.ndarray:
    M = _pose_matrix(T)
    return as_points(shape) @ M[:, :3].T + M[:, 3]


def _canvas(canvas_size):
    if np.isscalar(canvas_size):
        return int(canvas_size), int(canvas_size)
    w, h = canvas_size
    return int(w), int(h)


@dataclass(frozen=True)
class TextureMap:
    colors: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.colors, dtype=np.float64)
        v = np.asarray(self.valid, dtype=bool)
        if c.ndim != 2 or c.shape[1] != 3 or v.shape != (c.shape[0],):
            raise DimensionMismatch("texture needs (N, 3) colors and N validity flags")
        object.__setattr__(self, "colors", c)
        object.__setattr__(self, "valid", v)

    @classmethod
    def uniform(cls, n, color=(0.5, 0.5, 0.5)):
        return cls(np.tile(np.asarray(color, dtype=np.float64), (n, 1)), np.ones(n, bool))


@dataclass(frozen=True)
class Raster:
    tri_id: np.ndarray
    bary: np.ndarray
    depth: np.ndarray

    @property
    def covered(self) -> np.ndarray:
        return self.tri_id >= 0


@dataclass(frozen=True)
class RenderOutput:
    image: np.ndarray
    mask2d: np.ndarray
    weight: np.ndarray
    tri_id: np.ndarray
    bary: np.ndarray
    depth: np.ndarray

    @property
    def raster(self) -> Raster:
        return Raster(self.tri_id, self.bary, self.depth)


def triangle_normals(cam, triangles) -> np.ndarray:
    v0 = cam[triangles[:, 0]]
    return np.cross(cam[triangles[:, 1]] - v0, cam[triangles[:, 2]] - v0)


def vertex_visibility(mesh, shape, T) -> np.ndarray:
    """Mark the vertices of every triangle whose camera-space normal has n_z > 0.

    A vertex shared by front- and back-facing triangles counts as visible.
    Self-occlusion (e.g. the nose hiding a cheek) is not detected.
    """
    tris = _triangles(mesh)
    cam = camera_points(shape, T)
    front = triangle_normals(cam, tris)[:, 2] > 0
    vis = np.zeros(cam.shape[0], dtype=bool)
    vis[tris[front].ravel()] = True
    return vis


def common_visibility(m1, m2) -> np.ndarray:
    m1 = np.asarray(m1, dtype=bool)
    m2 = np.asarray(m2, dtype=bool)
    if m1.shape != m2.shape:
        raise DimensionMismatch(f"visibility maps differ in length: {m1.shape} vs {m2.shape}")
    return m1 & m2


def sample_texture(image, mesh, shape, T, vis) -> TextureMap:
    """Bilinearly sample ``image`` at the projection of each visible vertex.

    ``valid`` is ``vis`` restricted to vertices projecting inside the image.
    Invalid vertices get color 0.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    h, w = img.shape[:2]
    cam = camera_points(shape, T)
    vis = np.asarray(vis, dtype=bool)
    if vis.shape != (cam.shape[0],):
        raise DimensionMismatch("visibility map length does not match the shape")
    x, y = cam[:, 0], cam[:, 1]
    inside = (x >= 0) & (x < w) & (y >= 0) & (y < h)
    valid = vis & inside
    colors = np.zeros((cam.shape[0], 3))
    if valid.any():
        colors[valid] = bilinear(img, x[valid], y[valid])
    return TextureMap(colors, valid)


def swap_texture(c1: TextureMap, c2: TextureMap, m12) -> TextureMap:
    """``C1 * M12 + C2 * (1 - M12)``; validity follows ``c2``."""
    m12 = np.asarray(m12, dtype=bool)
    if c1.colors.shape != c2.colors.shape or m12.shape != (c1.colors.shape[0],):
        raise DimensionMismatch("texture maps and visibility map must agree in size")
    m = m12[:, None].astype(np.float64)
    return TextureMap(c1.colors * m + c2.colors * (1.0 - m), c2.valid.copy())


def rasterize_mesh(mesh, shape, T, canvas_size) -> Raster:
    w, h = _canvas(canvas_size)
    tris = _triangles(mesh)
    cam = camera_points(shape, T) if len(tris) else np.zeros((0, 3))
    if len(tris) == 0:
        return Raster(np.full((h, w), -1, np.int32), np.zeros((h, w, 3)),
                      np.full((h, w), -np.inf))
    tri_id, bary, depth = kernels.rasterize(cam[:, :2], cam[:, 2], tris, h, w)
    return Raster(tri_id, bary, depth)


def triangle_weights(mesh) -> np.ndarray:
    """Per-triangle weight: 5 when at least two corners lie in eye, nose or
    mouth regions, else 1."""
    tris = _triangles(mesh)
    n = int(tris.max()) + 1 if tris.size else 0
    labels = _labels(mesh, n)
    emph = np.isin(labels, (EYE, NOSE, MOUTH))
    return np.where(emph[tris].sum(axis=1) >= 2, REGION_WEIGHT, BASE_WEIGHT)


def shade(raster: Raster, mesh, tex: TextureMap, tri_weight=None) -> RenderOutput:
    """Gouraud-interpolate vertex colors over a raster.

    A pixel is in ``mask2d`` when its front-most triangle has all three
    vertices valid in ``tex``; pixels outside the mask are black with weight 0.
    """
    tris = _triangles(mesh)
    h, w = raster.tri_id.shape
    image = np.zeros((h, w, 3))
    mask = np.zeros((h, w), dtype=bool)
    weight = np.zeros((h, w))
    cov = raster.covered
    if cov.any():
        tid = raster.tri_id[cov]
        corners = tris[tid]
        ok = tex.valid[corners].all(axis=1)
        b = raster.bary[cov]
        col = np.einsum("pk,pkc->pc", b, tex.colors[corners])
        pix = np.argwhere(cov)[ok]
        image[pix[:, 0], pix[:, 1]] = col[ok]
        mask[pix[:, 0], pix[:, 1]] = True
        if tri_weight is None:
            tri_weight = triangle_weights(mesh)
        weight[pix[:, 0], pix[:, 1]] = tri_weight[tid[ok]]
    return RenderOutput(image, mask, weight, raster.tri_id, raster.bary, raster.depth)


def render(mesh, shape, T, tex: TextureMap, canvas_size, tri_weight=None) -> RenderOutput:
    """Z-buffered rasterization of the posed, textured mesh."""
    return shade(rasterize_mesh(mesh, shape, T, canvas_size), mesh, tex, tri_weight)


def zbuffer_vertex_visibility_oracle(mesh, shape, T, resolution=512) -> np.ndarray:
    """Occlusion-aware visibility from a z-buffer.

    The projected mesh is rasterized on a ``resolution``-wide grid fitted to
    its bounding box. A vertex is visible when the front-most triangle at its
    pixel is incident to it, or when that triangle's plane, evaluated at the
    vertex's exact image position, is not in front of the vertex by more
    than ``1e-3`` of the bounding-box diagonal.
    """
    tris = _triangles(mesh)
    cam = camera_points(shape, T)
    lo = cam[:, :2].min(axis=0)
    hi = cam[:, :2].max(axis=0)
    span = max(float((hi - lo).max()), 1e-12)
    scale = (resolution - 2) / span
    xy = (cam[:, :2] - lo) * scale + 1.0
    tri_id, _, depth = kernels.rasterize(xy, cam[:, 2], tris, resolution, resolution)
    tol = 1e-3 * float(np.linalg.norm(cam.max(axis=0) - cam.min(axis=0)))

    col = np.clip(np.floor(xy[:, 0]).astype(int), 0, resolution - 1)
    row = np.clip(np.floor(xy[:, 1]).astype(int), 0, resolution - 1)
    winner = tri_id[row, col]
    vis = winner < 0
    hit = np.flatnonzero(winner >= 0)
    wt = tris[winner[hit]]
    vis[hit] |= (wt == hit[:, None]).any(axis=1)

    # plane depth of the winning triangle at the vertex position
    p0, p1, p2 = (np.column_stack([xy[wt[:, k]], cam[wt[:, k], 2]]) for k in range(3))
    n = np.cross(p1 - p0, p2 - p0)
    q = np.column_stack([xy[hit], cam[hit, 2]])
    with np.errstate(divide="ignore", invalid="ignore"):
        zplane = p0[:, 2] - (n[:, 0] * (q[:, 0] - p0[:, 0]) + n[:, 1] * (q[:, 1] - p0[:, 1])) / n[:, 2]
    zplane = np.where(np.isfinite(zplane), zplane, depth[row[hit], col[hit]])
    vis[hit] |= zplane <= q[:, 2] + tol
    return vis
