"""Pure numpy implementations of the hot kernels.

These mirror ``_ckernels.pyx`` operation for operation so that both back ends
return identical results; see ``facefit.kernels`` for selection.
"""
import math

import numpy as np

CENSUS_RADIUS = 3


def rasterize(xy, z, triangles, height, width):
    """Z-buffered rasterization of screen-space triangles.

    Pixel ``(r, c)`` is sampled at its center ``(c + 0.5, r + 0.5)``. Larger
    depth is nearer the viewer; ties keep the earlier triangle.

    Returns
    -------
    tri_id : (H, W) int32, -1 where nothing is drawn
    bary : (H, W, 3) float64
    depth : (H, W) float64, -inf where nothing is drawn
    """
    xy = np.ascontiguousarray(xy, dtype=np.float64)
    z = np.ascontiguousarray(z, dtype=np.float64)
    triangles = np.ascontiguousarray(triangles, dtype=np.int64)
    tri_id = np.full((height, width), -1, dtype=np.int32)
    bary = np.zeros((height, width, 3), dtype=np.float64)
    depth = np.full((height, width), -np.inf, dtype=np.float64)

    for t in range(triangles.shape[0]):
        i0, i1, i2 = triangles[t]
        x0, y0 = xy[i0]
        x1, y1 = xy[i1]
        x2, y2 = xy[i2]
        area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        if not math.isfinite(area) or abs(area) < 1e-12:
            continue
        cmin = max(0, math.ceil(min(x0, x1, x2) - 0.5))
        cmax = min(width - 1, math.floor(max(x0, x1, x2) - 0.5))
        rmin = max(0, math.ceil(min(y0, y1, y2) - 0.5))
        rmax = min(height - 1, math.floor(max(y0, y1, y2) - 0.5))
        if cmin > cmax or rmin > rmax:
            continue
        px = np.arange(cmin, cmax + 1, dtype=np.float64)[None, :] + 0.5
        py = np.arange(rmin, rmax + 1, dtype=np.float64)[:, None] + 0.5
        w0 = ((x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)) / area
        w1 = ((x0 - x2) * (py - y2) - (y0 - y2) * (px - x2)) / area
        w2 = ((x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)) / area
        d = w0 * z[i0] + w1 * z[i1] + w2 * z[i2]
        zb = depth[rmin:rmax + 1, cmin:cmax + 1]
        win = (w0 >= 0) & (w1 >= 0) & (w2 >= 0) & (d > zb)
        if not win.any():
            continue
        zb[win] = d[win]
        tri_id[rmin:rmax + 1, cmin:cmax + 1][win] = t
        b = bary[rmin:rmax + 1, cmin:cmax + 1]
        b[..., 0][win] = w0[win]
        b[..., 1][win] = w1[win]
        b[..., 2][win] = w2[win]
    return tri_id, bary, depth


def census(gray):
    """7x7 census transform, clamp-to-edge, strict ``>`` against the center.

    Bit ``b`` enumerates the 48 neighbours row-major with the center skipped.
    """
    gray = np.ascontiguousarray(gray, dtype=np.float64)
    r = CENSUS_RADIUS
    h, w = gray.shape
    padded = np.pad(gray, r, mode="edge")
    out = np.zeros((h, w), dtype=np.uint64)
    bit = 0
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if dy == 0 and dx == 0:
                continue
            nb = padded[r + dy:r + dy + h, r + dx:r + dx + w]
            out |= (nb > gray).astype(np.uint64) << np.uint64(bit)
            bit += 1
    return out


def hamming(a, b):
    return np.bitwise_count(np.bitwise_xor(a, b)).astype(np.int32)


def displacement_order(radius):
    """Candidate displacements, nearest-to-zero first (tie-break order)."""
    cands = [(dx, dy) for dy in range(-radius, radius + 1)
             for dx in range(-radius, radius + 1)]
    cands.sort(key=lambda d: (abs(d[0]) + abs(d[1]), d[1], d[0]))
    return cands


def block_match(ca, cb, block, radius, active=None):
    """Per-block integer displacement d minimising sum popcount(ca[p] ^ cb[p+d]).

    Returns an ``(ceil(H/block), ceil(W/block), 2)`` int32 array of (dx, dy).
    Blocks where the optional boolean ``active`` mask is False get (0, 0).
    """
    ca = np.ascontiguousarray(ca, dtype=np.uint64)
    cb = np.ascontiguousarray(cb, dtype=np.uint64)
    h, w = ca.shape
    nby = -(-h // block)
    nbx = -(-w // block)
    rows = np.arange(h)
    cols = np.arange(w)
    best = np.full((nby, nbx), np.iinfo(np.int64).max, dtype=np.int64)
    flow = np.zeros((nby, nbx, 2), dtype=np.int32)
    pad_h = nby * block - h
    pad_w = nbx * block - w
    for dx, dy in displacement_order(radius):
        rr = np.clip(rows + dy, 0, h - 1)
        cc = np.clip(cols + dx, 0, w - 1)
        cost = np.bitwise_count(ca ^ cb[rr[:, None], cc[None, :]]).astype(np.int64)
        cost = np.pad(cost, ((0, pad_h), (0, pad_w)))
        cost = cost.reshape(nby, block, nbx, block).sum(axis=(1, 3))
        better = cost < best
        best[better] = cost[better]
        flow[better] = (dx, dy)
    if active is not None:
        active = np.asarray(active, dtype=bool)
        if active.shape != (nby, nbx):
            raise ValueError("active block mask has the wrong shape")
        flow[~active] = 0
    return flow
