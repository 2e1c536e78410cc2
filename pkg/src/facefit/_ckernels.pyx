# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels. Semantics match ``facefit._pykernels`` exactly."""
import numpy as np
cimport numpy as cnp
from libc.math cimport ceil, floor, fabs, isfinite, INFINITY

cnp.import_array()

DEF CENSUS_RADIUS = 3


def rasterize(xy, z, triangles, int height, int width):
    cdef const double[:, ::1] v = np.ascontiguousarray(xy, dtype=np.float64)
    cdef const double[::1] zz = np.ascontiguousarray(z, dtype=np.float64)
    cdef const long long[:, ::1] tris = np.ascontiguousarray(triangles, dtype=np.int64)
    tri_id_a = np.full((height, width), -1, dtype=np.int32)
    bary_a = np.zeros((height, width, 3), dtype=np.float64)
    depth_a = np.full((height, width), -np.inf, dtype=np.float64)
    cdef int[:, ::1] tri_id = tri_id_a
    cdef double[:, :, ::1] bary = bary_a
    cdef double[:, ::1] depth = depth_a
    cdef Py_ssize_t t, ntri = tris.shape[0]
    cdef long long i0, i1, i2
    cdef double x0, y0, x1, y1, x2, y2, area, px, py, w0, w1, w2, d
    cdef int r, c, rmin, rmax, cmin, cmax
    with nogil:
        for t in range(ntri):
            i0 = tris[t, 0]
            i1 = tris[t, 1]
            i2 = tris[t, 2]
            x0 = v[i0, 0]
            y0 = v[i0, 1]
            x1 = v[i1, 0]
            y1 = v[i1, 1]
            x2 = v[i2, 0]
            y2 = v[i2, 1]
            area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
            if not isfinite(area) or fabs(area) < 1e-12:
                continue
            cmin = <int>max(0.0, ceil(min(x0, x1, x2) - 0.5))
            cmax = <int>min(width - 1.0, floor(max(x0, x1, x2) - 0.5))
            rmin = <int>max(0.0, ceil(min(y0, y1, y2) - 0.5))
            rmax = <int>min(height - 1.0, floor(max(y0, y1, y2) - 0.5))
            for r in range(rmin, rmax + 1):
                py = r + 0.5
                for c in range(cmin, cmax + 1):
                    px = c + 0.5
                    w0 = ((x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)) / area
                    if w0 < 0:
                        continue
                    w1 = ((x0 - x2) * (py - y2) - (y0 - y2) * (px - x2)) / area
                    if w1 < 0:
                        continue
                    w2 = ((x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)) / area
                    if w2 < 0:
                        continue
                    d = w0 * zz[i0] + w1 * zz[i1] + w2 * zz[i2]
                    if d > depth[r, c]:
                        depth[r, c] = d
                        tri_id[r, c] = <int>t
                        bary[r, c, 0] = w0
                        bary[r, c, 1] = w1
                        bary[r, c, 2] = w2
    return tri_id_a, bary_a, depth_a


def census(gray):
    g0 = np.ascontiguousarray(gray, dtype=np.float64)
    cdef Py_ssize_t h = g0.shape[0], w = g0.shape[1]
    out_a = np.zeros((h, w), dtype=np.uint64)
    if h == 0 or w == 0:
        return out_a
    # edge padding replaces per-sample clamping
    cdef const double[:, ::1] g = np.pad(g0, CENSUS_RADIUS, mode="edge")
    cdef cnp.uint64_t[:, ::1] out = out_a
    cdef Py_ssize_t r, c
    cdef int dy, dx, bit
    cdef double center
    cdef cnp.uint64_t desc
    with nogil:
        for r in range(h):
            for c in range(w):
                center = g[r + CENSUS_RADIUS, c + CENSUS_RADIUS]
                desc = 0
                bit = 0
                for dy in range(2 * CENSUS_RADIUS + 1):
                    for dx in range(2 * CENSUS_RADIUS + 1):
                        if dy == CENSUS_RADIUS and dx == CENSUS_RADIUS:
                            continue
                        desc |= (<cnp.uint64_t>(g[r + dy, c + dx] > center)) << bit
                        bit += 1
                out[r, c] = desc
    return out_a


def hamming(a, b):
    cdef const cnp.uint64_t[:, ::1] aa = np.ascontiguousarray(a, dtype=np.uint64)
    cdef const cnp.uint64_t[:, ::1] bb = np.ascontiguousarray(b, dtype=np.uint64)
    cdef Py_ssize_t h = aa.shape[0], w = aa.shape[1], r, c
    out_a = np.empty((h, w), dtype=np.int32)
    cdef int[:, ::1] out = out_a
    with nogil:
        for r in range(h):
            for c in range(w):
                out[r, c] = __builtin_popcountll(aa[r, c] ^ bb[r, c])
    return out_a


cdef extern from *:
    int __builtin_popcountll(unsigned long long) nogil


def block_match(ca, cb, int block, int radius, active=None):
    """``active`` optionally masks the (by, bx) blocks to evaluate; others get 0."""
    from facefit._pykernels import displacement_order
    cdef const cnp.uint64_t[:, ::1] a = np.ascontiguousarray(ca, dtype=np.uint64)
    cdef int h = a.shape[0], w = a.shape[1]
    cdef int nby = (h + block - 1) // block
    cdef int nbx = (w + block - 1) // block
    flow_a = np.zeros((nby, nbx, 2), dtype=np.int32)
    if h == 0 or w == 0:
        return flow_a
    cdef const cnp.uint64_t[:, ::1] b = np.pad(np.ascontiguousarray(cb, dtype=np.uint64),
                                             radius, mode="edge")
    if active is None:
        act_a = np.ones((nby, nbx), dtype=np.uint8)
    else:
        act_a = np.ascontiguousarray(active, dtype=np.uint8)
        if act_a.shape != (nby, nbx):
            raise ValueError("active block mask has the wrong shape")
    cdef const cnp.uint8_t[:, ::1] act = act_a
    cands = np.asarray(displacement_order(radius), dtype=np.int32)
    cdef const int[:, ::1] cand = np.ascontiguousarray(cands)
    cdef int ncand = cand.shape[0]
    cdef int[:, :, ::1] flow = flow_a
    cdef int by, bx, k, r, c, dx, dy, r1, c1
    cdef long long cost, best
    with nogil:
        for by in range(nby):
            for bx in range(nbx):
                if not act[by, bx]:
                    continue
                best = -1
                r1 = min(h, (by + 1) * block)
                c1 = min(w, (bx + 1) * block)
                for k in range(ncand):
                    dx = cand[k, 0]
                    dy = cand[k, 1]
                    cost = 0
                    for r in range(by * block, r1):
                        for c in range(bx * block, c1):
                            cost += __builtin_popcountll(a[r, c] ^ b[r + dy + radius, c + dx + radius])
                    if best < 0 or cost < best:
                        best = cost
                        flow[by, bx, 0] = dx
                        flow[by, bx, 1] = dy
    return flow_a
