"""Self-consistency loss terms and their building blocks.

All terms take their weight ``lam`` explicitly; :class:`LossWeights` holds
the defaults used by the fitter.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, fields

import numpy as np

from facefit import kernels
from facefit.errors import DimensionMismatch
from facefit.images import to_gray
from facefit.pose import XY_ONLY, LandmarkObservation, PoseTransform, homogeneous_design, solve_pose

CENSUS_BITS = 48
KINK_RTOL = 1e-12
TRACE_COLUMNS = ("iteration", "L_l", "L_p", "L_f", "L_s", "L_r", "total")


@dataclass(frozen=True)
class LossWeights:
    lambda_l: float = 1.0
    lambda_p: float = 0.2
    lambda_f: float = 0.2
    lambda_s: float = 10.0
    lambda_r: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be non-negative")

    @property
    def image_terms_active(self) -> bool:
        return self.lambda_p > 0 or self.lambda_f > 0 or self.lambda_s > 0


@dataclass(frozen=True)
class LossBreakdown:
    L_l: float = 0.0
    L_p: float = 0.0
    L_f: float = 0.0
    L_s: float = 0.0
    L_r: float = 0.0

    @property
    def total(self) -> float:
        return self.L_l + self.L_p + self.L_f + self.L_s + self.L_r

    def __add__(self, other: "LossBreakdown") -> "LossBreakdown":
        return LossBreakdown(*(a + b for a, b in zip(self.astuple(), other.astuple())))

    def astuple(self):
        return (self.L_l, self.L_p, self.L_f, self.L_s, self.L_r)

    def asdict(self):
        d = asdict(self)
        d["total"] = self.total
        return d


def total_loss(L_l=0.0, L_p=0.0, L_f=0.0, L_s=0.0, L_r=0.0):
    """Sum the five terms; returns ``(total, breakdown)``."""
    b = LossBreakdown(float(L_l), float(L_p), float(L_f), float(L_s), float(L_r))
    return b.total, b


# -- census / photometric ----------------------------------------------------

def census_transform(img) -> np.ndarray:
    """48-bit 7x7 census descriptors (uint64) of the image luminance."""
    return kernels.census(np.ascontiguousarray(to_gray(img)))


def hamming_map(ca, cb) -> np.ndarray:
    if ca.shape != cb.shape:
        raise DimensionMismatch(f"census images differ in size: {ca.shape} vs {cb.shape}")
    return kernels.hamming(ca, cb)


def _masked_mean(values, mask2d, weight):
    w = np.asarray(weight, dtype=np.float64) * np.asarray(mask2d, dtype=bool)
    den = w.sum()
    if den <= 0:
        return 0.0
    return float((values * w).sum() / den)


def photometric_loss(target, rendered, mask2d, weight, lam=0.2,
                     target_census=None, rendered_census=None) -> float:
    """Weighted mean census Hamming distance over the render mask, times ``lam``.

    Returns 0 for an empty mask. Precomputed census images may be passed in.
    """
    if np.shape(target)[:2] != np.shape(rendered)[:2]:
        raise DimensionMismatch("target and rendered images differ in size")
    ct = census_transform(target) if target_census is None else target_census
    cr = census_transform(rendered) if rendered_census is None else rendered_census
    return lam * _masked_mean(hamming_map(ct, cr), mask2d, weight)


# -- landmarks -------------------------------------------------------------

def landmark_loss(T, X, obs: LandmarkObservation, lam=1.0) -> float:
    """``lam * sum |T [X; 1] - X_uv|`` over the observed channels."""
    M = T.T if isinstance(T, PoseTransform) else np.asarray(T, dtype=np.float64)
    c = obs.channels
    pred = homogeneous_design(X) @ M[:c].T
    return lam * float(np.abs(pred - obs.observed).sum())


def landmark_loss_grad(X, obs: LandmarkObservation, lam=1.0, smooth=0.0):
    """Landmark loss with the pose re-solved in closed form, and its gradient.

    Returns ``(loss, dloss/dX, T)``. The derivative accounts for the pose
    depending on X through the least-squares solve; at residual kinks the
    subgradient uses sign(0) = 0, where residuals within 1e-12 of the
    coordinate scale count as zero. With ``smooth > 0`` the derivative is the
    one of a Huber surrogate with that width (the returned loss is unchanged).
    """
    X = np.asarray(X, dtype=np.float64).reshape(-1, 3)
    T = solve_pose(X, obs)
    Y = obs.observed
    c = obs.channels
    A = homogeneous_design(X)
    G = np.linalg.inv(A.T @ A)
    Tc = T.T[:c]
    E = A @ Tc.T - Y
    loss = lam * float(np.abs(E).sum())
    S = lam * (np.clip(E / smooth, -1.0, 1.0) if smooth > 0 else np.sign(E))
    S[np.abs(E) <= KINK_RTOL * max(1.0, float(np.abs(Y).max()))] = 0.0
    AG = A @ G
    HS = AG @ (A.T @ S)
    grad_A = (S - HS) @ Tc - E @ (S.T @ AG)
    return loss, grad_A[:, :3], T


# -- flow ------------------------------------------------------------------

def block_matching_flow(a, b, block=8, radius=4) -> np.ndarray:
    """Per-block integer flow from ``a`` to ``b`` on census descriptors.

    Each ``block`` x ``block`` tile of ``a`` gets the displacement within
    ``radius`` minimising the summed Hamming cost against ``b``; ties go to
    the displacement nearest zero. Returns an (H, W, 2) float array (dx, dy).
    """
    if np.shape(a)[:2] != np.shape(b)[:2]:
        raise DimensionMismatch("flow inputs differ in size")
    ca = census_transform(a)
    cb = census_transform(b)
    blocks = kernels.block_match(ca, cb, int(block), int(radius))
    h, w = ca.shape
    full = np.repeat(np.repeat(blocks, block, axis=0), block, axis=1)[:h, :w]
    return full.astype(np.float64)


def flow_loss(flow, weight, mask2d, lam=0.2) -> float:
    """``lam`` times the weighted mean L1 flow magnitude over the mask."""
    flow = np.asarray(flow, dtype=np.float64)
    mag = np.abs(flow[..., 0]) + np.abs(flow[..., 1])
    mask = np.asarray(mask2d, dtype=bool) & np.isfinite(mag)
    return lam * _masked_mean(np.nan_to_num(mag), mask, weight)


# -- semantic --------------------------------------------------------------

def semantic_loss(fa, fb, lam=10.0) -> float:
    fa = np.asarray(fa, dtype=np.float64).ravel()
    fb = np.asarray(fb, dtype=np.float64).ravel()
    if fa.shape != fb.shape:
        raise DimensionMismatch("feature vectors differ in length")
    na, nb = np.linalg.norm(fa), np.linalg.norm(fb)
    if na == 0 or nb == 0:
        raise ValueError("semantic loss is undefined for a zero feature vector")
    cos = float(np.clip(fa @ fb / (na * nb), -1.0, 1.0))
    return lam * (1.0 - cos)


def _pool2(g):
    h, w = (g.shape[0] // 2) * 2, (g.shape[1] // 2) * 2
    g = g[:h, :w]
    return 0.25 * (g[0::2, 0::2] + g[1::2, 0::2] + g[0::2, 1::2] + g[1::2, 1::2])


def _cell_index(n, cells):
    """Cell id per row/column, splitting like ``np.array_split``."""
    sizes = np.full(cells, n // cells)
    sizes[: n % cells] += 1
    return np.repeat(np.arange(cells), sizes)


def pyramid_descriptor(img, levels=3, cells=4, bins=8) -> np.ndarray:
    """Hand-made image embedding.

    For each pyramid level and each cell of a ``cells`` x ``cells`` grid:
    mean, variance and a magnitude-weighted gradient orientation histogram
    (normalised by the cell's pixel count).
    """
    g = to_gray(img)
    out = []
    ncell = cells * cells
    for level in range(levels):
        if level:
            g = _pool2(g)
        gy, gx = np.gradient(g)
        mag = np.hypot(gx, gy)
        ang = np.mod(np.arctan2(gy, gx), 2 * np.pi)
        idx = np.minimum((ang / (2 * np.pi) * bins).astype(int), bins - 1)
        cell = (_cell_index(g.shape[0], cells)[:, None] * cells
                + _cell_index(g.shape[1], cells)[None, :]).ravel()
        v = g.ravel()
        count = np.bincount(cell, minlength=ncell).astype(np.float64)
        den = np.maximum(count, 1.0)
        mean = np.bincount(cell, v, minlength=ncell) / den
        var = np.bincount(cell, (v - mean[cell]) ** 2, minlength=ncell) / den
        hist = np.bincount(cell * bins + idx.ravel(), mag.ravel(),
                           minlength=ncell * bins).reshape(ncell, bins) / den[:, None]
        out.append(np.column_stack([mean, var, hist]).ravel())
    return np.concatenate(out)


# -- regularizer -----------------------------------------------------------

def regularizer(params, model, lam=1.0) -> float:
    """``lam * sum|a_id / s_id| + lam / 2 * sum|a_exp / s_exp|``."""
    return lam * float(np.abs(params.alpha_id / model.sigma_id).sum()) + \
        0.5 * lam * float(np.abs(params.alpha_exp / model.sigma_exp).sum())


def regularizer_grad(params, model, lam=1.0):
    """Gradient of :func:`regularizer` w.r.t. (alpha_id, alpha_exp)."""
    gid = lam * np.sign(params.alpha_id) / model.sigma_id
    gexp = 0.5 * lam * np.sign(params.alpha_exp) / model.sigma_exp
    return gid, gexp


# -- trace output ----------------------------------------------------------

def write_trace_csv(path, rows) -> None:
    """Write loss-trace rows (mappings with TRACE_COLUMNS keys)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for r in rows:
            w.writerow([r["iteration"]] + [repr(float(r[k])) for k in TRACE_COLUMNS[1:]])


def read_trace_csv(path):
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "iteration" else float(v)) for k, v in r.items()}
                for r in csv.DictReader(fh)]


__all__ = [
    "CENSUS_BITS", "LossWeights", "LossBreakdown", "XY_ONLY", "block_matching_flow",
    "census_transform", "flow_loss", "hamming_map", "landmark_loss", "landmark_loss_grad",
    "photometric_loss", "pyramid_descriptor", "regularizer", "regularizer_grad",
    "semantic_loss", "total_loss", "write_trace_csv", "read_trace_csv",
]
