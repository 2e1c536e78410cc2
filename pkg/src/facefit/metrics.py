"""Reconstruction error metrics and yaw-bucketed reporting."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from facefit.errors import DimensionMismatch
from facefit.model import OUTER_EYE_CORNERS, as_points
from facefit.pose import umeyama_similarity

YAW_BUCKETS = ((0.0, 30.0), (30.0, 60.0), (60.0, 90.0))
BUCKET_LABELS = ("[0,30)", "[30,60)", "[60,90]")


def _same_shape(a, b, what="point sets"):
    if a.shape != b.shape:
        raise DimensionMismatch(f"{what} differ in shape: {a.shape} vs {b.shape}")


def bbox_diagonal(points) -> float:
    p = np.asarray(points, dtype=np.float64)
    return float(np.linalg.norm(p.max(axis=0) - p.min(axis=0)))


def nme_2d(pred, gt, norm=None) -> float:
    """Mean landmark distance over ``norm`` in percent.

    ``norm`` defaults to the diagonal of the ground-truth landmark bounding box.
    """
    pred = np.asarray(pred, dtype=np.float64)[:, :2]
    gt = np.asarray(gt, dtype=np.float64)[:, :2]
    _same_shape(pred, gt, "landmark sets")
    if norm is None:
        norm = bbox_diagonal(gt)
    if norm <= 0:
        raise ValueError("normalizer must be positive")
    return float(np.linalg.norm(pred - gt, axis=1).mean() / norm * 100.0)


def outer_interocular(landmarks3d) -> float:
    lm = np.asarray(landmarks3d, dtype=np.float64)
    a, b = OUTER_EYE_CORNERS
    return float(np.linalg.norm(lm[a] - lm[b]))


def nme_3d(pred_shape, gt_shape, norm, vertices=None) -> float:
    """Mean index-wise vertex distance over ``vertices`` (all by default) / ``norm``.

    Returned as a fraction; ``norm`` is normally the outer interocular distance.
    """
    p, g = as_points(pred_shape), as_points(gt_shape)
    _same_shape(p, g, "shapes")
    if norm <= 0:
        raise ValueError("normalizer must be positive")
    if vertices is not None:
        p, g = p[vertices], g[vertices]
    return float(np.linalg.norm(p - g, axis=1).mean() / norm)


def align(pred_shape, gt_shape, on=None, with_scale=False) -> np.ndarray:
    """Map ``pred_shape`` onto ``gt_shape`` by a rigid (or similarity) fit.

    The fit uses the vertex indices ``on`` (all vertices by default).
    """
    p, g = as_points(pred_shape), as_points(gt_shape)
    idx = slice(None) if on is None else np.asarray(on)
    T = umeyama_similarity(p[idx], g[idx], with_scale=with_scale)
    return T.apply(p)


def per_vertex_error(pred_shape, gt_shape, on=None, with_scale=False, vertices=None,
                     aligned=True) -> float:
    """Mean index-wise distance (mm) after alignment on ``on``.

    ``aligned=False`` skips the rigid fit and compares the shapes as given.
    """
    p, g = as_points(pred_shape), as_points(gt_shape)
    _same_shape(p, g, "shapes")
    q = align(p, g, on, with_scale) if aligned else p
    d = np.linalg.norm(q - g, axis=1)
    return float(d.mean() if vertices is None else d[vertices].mean())


def closest_point_on_triangles(p, a, b, c) -> np.ndarray:
    """Closest point to each ``p`` on triangle (a, b, c), all (M, 3) arrays.

    Region test on the barycentric Voronoi cells (vertex, edge, face).
    """
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        den = va + vb + vc
        v = np.where(den != 0, vb / den, 0.0)
        w = np.where(den != 0, vc / den, 0.0)
        out = a + ab * v[:, None] + ac * w[:, None]

        # edge regions
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        on_bc = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
        out = np.where(on_bc[:, None], b + (c - b) * t_bc[:, None], out)
        t_ac = d2 / (d2 - d6)
        on_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        out = np.where(on_ac[:, None], a + ac * t_ac[:, None], out)
        t_ab = d1 / (d1 - d3)
        on_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        out = np.where(on_ab[:, None], a + ab * t_ab[:, None], out)

    # vertex regions
    out = np.where(((d6 >= 0) & (d5 <= d6))[:, None], c, out)
    out = np.where(((d3 >= 0) & (d4 <= d3))[:, None], b, out)
    out = np.where(((d1 <= 0) & (d2 <= 0))[:, None], a, out)
    return out


def point_to_mesh_distance(points, vertices, triangles, chunk=32) -> np.ndarray:
    """Distance from each point to the nearest triangle of the mesh."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    V = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    tris = np.asarray(triangles, dtype=np.int64)
    a, b, c = V[tris[:, 0]], V[tris[:, 1]], V[tris[:, 2]]
    m = len(tris)
    out = np.empty(len(pts))
    for s in range(0, len(pts), chunk):
        p = pts[s:s + chunk]
        k = len(p)
        P = np.repeat(p, m, axis=0)
        q = closest_point_on_triangles(P, np.tile(a, (k, 1)), np.tile(b, (k, 1)), np.tile(c, (k, 1)))
        out[s:s + k] = np.linalg.norm(P - q, axis=1).reshape(k, m).min(axis=1)
    return out


def point_to_plane(pred_shape, gt_shape, triangles, on=None, with_scale=False,
                   vertices=None, aligned=True) -> dict:
    """Point-to-triangle distance of the aligned prediction to the ground-truth mesh.

    Alignment is a rigid fit on the vertex indices ``on`` (normally the
    landmark vertices); ``aligned=False`` skips it. Returns ``{"mean", "std"}``
    over ``vertices``.
    """
    p, g = as_points(pred_shape), as_points(gt_shape)
    _same_shape(p, g, "shapes")
    q = align(p, g, on, with_scale) if aligned else p
    if vertices is not None:
        q = q[vertices]
    d = point_to_mesh_distance(q, g, triangles)
    return {"mean": float(d.mean()), "std": float(d.std())}


def face_vertices(model) -> np.ndarray:
    """Indices of the front (face-side) half of the model, z > 0 on the mean shape."""
    return np.flatnonzero(as_points(model.mean_shape)[:, 2] > 0)


# -- reporting -------------------------------------------------------------

def yaw_bucket(yaw_deg) -> int:
    a = abs(float(yaw_deg))
    if a > 90.0:
        raise ValueError(f"|yaw| = {a} is outside [0, 90]")
    for k, (lo, hi) in enumerate(YAW_BUCKETS):
        if lo <= a < hi:
            return k
    return len(YAW_BUCKETS) - 1


@dataclass
class ErrorReport:
    errors: list
    yaws: list | None = None
    name: str = "error"
    labels: list = field(default_factory=list)

    def __post_init__(self):
        self.errors = [float(e) for e in self.errors]
        if self.yaws is not None:
            self.yaws = [float(y) for y in self.yaws]
            if len(self.yaws) != len(self.errors):
                raise DimensionMismatch("one yaw per error item is required")

    @property
    def mean(self) -> float:
        return float(np.mean(self.errors)) if self.errors else float("nan")

    @property
    def std(self) -> float:
        return float(np.std(self.errors)) if self.errors else float("nan")

    def buckets(self) -> dict:
        """``{label: (mean, count)}`` over the three |yaw| buckets."""
        if self.yaws is None:
            raise ValueError("report has no yaw angles")
        groups = [[] for _ in YAW_BUCKETS]
        for e, y in zip(self.errors, self.yaws):
            groups[yaw_bucket(y)].append(e)
        return {lab: (float(np.mean(g)) if g else float("nan"), len(g))
                for lab, g in zip(BUCKET_LABELS, groups)}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["item", "yaw", self.name])
            for k, e in enumerate(self.errors):
                label = self.labels[k] if k < len(self.labels) else str(k)
                yaw = "" if self.yaws is None else repr(self.yaws[k])
                w.writerow([label, yaw, repr(e)])

    def row(self) -> str:
        if self.yaws is None:
            cells = "".join(f"{'-':>12}" for _ in BUCKET_LABELS)
        else:
            cells = "".join(f"{m:>12.4f}" for m, _ in self.buckets().values())
        return f"{self.name:<16}" + cells + f"{self.mean:>12.4f}"

    def table(self) -> str:
        return report_table([self])


def report_table(reports) -> str:
    """Aligned text table, one row per report, columns = yaw buckets + mean."""
    head = f"{'metric':<16}" + "".join(f"{b:>12}" for b in BUCKET_LABELS) + f"{'mean':>12}"
    return "\n".join([head] + [r.row() for r in reports])
