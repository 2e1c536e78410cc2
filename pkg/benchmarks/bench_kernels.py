"""Compare the compiled kernels with the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--canvas PX]

Each kernel runs on the inputs the fitter feeds it (a posed synthetic face
at the chosen canvas size) and the best of ``--repeat`` timings is reported.
"""
import argparse
import timeit

import numpy as np

from facefit import _pykernels
from facefit.losses import census_transform
from facefit.model import make_synthetic_model, synthesize_shape
from facefit.pose import PoseTransform, rotation_matrix
from facefit.render import camera_points, render
from facefit.synthetic import procedural_texture

try:
    from facefit import _ckernels
except ImportError:
    _ckernels = None


def workloads(canvas):
    model = make_synthetic_model(n_subdiv=4, k_id=16, k_exp=8, seed=0)
    s = synthesize_shape(model, model.params())
    T = PoseTransform.compose(0.55 * canvas / 128, rotation_matrix(25.0, 5.0, 0.0),
                              [canvas / 2, canvas / 2, 0.0])
    cam = camera_points(s, T)
    xy, z = np.ascontiguousarray(cam[:, :2]), np.ascontiguousarray(cam[:, 2])
    tris = np.ascontiguousarray(model.triangles)
    img = render(model, s, T, procedural_texture(model, 1), canvas).image
    gray = img @ np.array([0.299, 0.587, 0.114])
    shifted = np.roll(gray, 2, axis=1)
    ca, cb = census_transform(gray), census_transform(shifted)
    return {
        "rasterize": lambda k: k.rasterize(xy, z, tris, canvas, canvas),
        "census": lambda k: k.census(gray),
        "hamming": lambda k: k.hamming(ca, cb),
        "block_match": lambda k: k.block_match(ca, cb, 8, 4, None),
    }


def best_time(fn, repeat):
    n, _ = timeit.Timer(fn).autorange()
    return min(timeit.Timer(fn).repeat(repeat, n)) / n


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--canvas", type=int, default=128)
    args = p.parse_args(argv)
    if _ckernels is None:
        print("compiled kernels are not built; only the fallback is timed")
    print(f"canvas {args.canvas} px, best of {args.repeat}")
    print(f"{'kernel':<12}{'python ms':>12}{'cython ms':>12}{'speedup':>10}")
    for name, run in workloads(args.canvas).items():
        py = best_time(lambda: run(_pykernels), args.repeat)
        if _ckernels is None:
            print(f"{name:<12}{1e3 * py:>12.3f}{'-':>12}{'-':>10}")
            continue
        c = best_time(lambda: run(_ckernels), args.repeat)
        print(f"{name:<12}{1e3 * py:>12.3f}{1e3 * c:>12.3f}{py / c:>9.1f}x")


if __name__ == "__main__":
    main()
