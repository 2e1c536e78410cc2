"""Procedural ground-truth scenes: posed renders, landmarks and flow."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from facefit.images import bilinear, write_pgm, write_ppm
from facefit.model import EYE, MOUTH, NOSE, FaceModel, FaceParams, export_obj, landmarks_of, save_model, synthesize_shape
from facefit.pose import (
    FULL3D,
    LandmarkObservation,
    PoseTransform,
    project,
    rotation_matrix,
    write_landmarks,
    write_pose,
)
from facefit.render import RenderOutput, TextureMap, render

SKIN_TINT = np.array([1.0, 0.80, 0.66])


def _check_range(name, r, positive=False):
    lo, hi = r
    if lo > hi:
        raise ValueError(f"{name} must be ordered (low <= high), got {r}")
    if positive and lo <= 0:
        raise ValueError(f"{name} must be positive")
    return (float(lo), float(hi))


@dataclass(frozen=True)
class Illumination:
    gamma_range: tuple = (1.0, 1.0)
    gain_range: tuple = (1.0, 1.0)
    bias_range: tuple = (0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "gamma_range", _check_range("gamma_range", self.gamma_range, True))
        object.__setattr__(self, "gain_range", _check_range("gain_range", self.gain_range, True))
        object.__setattr__(self, "bias_range", _check_range("bias_range", self.bias_range))


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    n_frames: int = 4
    param_scale: float = 1.0
    yaw_range: tuple = (-45.0, 45.0)
    pitch_range: tuple = (-10.0, 10.0)
    illum: Illumination = field(default_factory=Illumination)
    landmark_noise_px: float = 0.0
    landmark_mode: object = FULL3D
    canvas: int = 128

    def __post_init__(self):
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")
        if self.landmark_noise_px < 0:
            raise ValueError("landmark_noise_px must be non-negative")
        object.__setattr__(self, "yaw_range", _check_range("yaw_range", self.yaw_range))
        object.__setattr__(self, "pitch_range", _check_range("pitch_range", self.pitch_range))
        if isinstance(self.illum, dict):
            object.__setattr__(self, "illum", Illumination(**self.illum))

    def mode_of(self, k) -> str:
        if isinstance(self.landmark_mode, str):
            return self.landmark_mode
        return self.landmark_mode[k]

    @classmethod
    def from_dict(cls, d) -> "SceneSpec":
        d = dict(d)
        if "illum" in d:
            d["illum"] = Illumination(**{k: tuple(v) for k, v in d["illum"].items()})
        for k in ("yaw_range", "pitch_range"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        if not isinstance(self.landmark_mode, str):
            d["landmark_mode"] = list(self.landmark_mode)
        return d


@dataclass(frozen=True)
class FrameIllum:
    gamma: float
    gain: float
    bias: float

    def apply(self, img):
        return np.clip(self.gain * np.power(img, self.gamma) + self.bias, 0.0, 1.0)


@dataclass
class Scene:
    model: FaceModel
    spec: SceneSpec
    alpha_id: np.ndarray
    alpha_exp: list
    poses: list
    yaws: list
    illum: list
    texture: TextureMap
    shapes: list
    clean_renders: list
    images: list
    clean_landmarks: list
    landmarks: list

    @property
    def n_frames(self) -> int:
        return len(self.poses)

    def params(self, k) -> FaceParams:
        return FaceParams(self.alpha_id, self.alpha_exp[k])


def procedural_texture(model: FaceModel, seed=0) -> TextureMap:
    """Skin-toned per-vertex colors with region shading and fine mottling.

    Every color is a scalar multiple of one tint, so a per-channel gamma/gain
    change maps luminance through a strictly monotone function.
    """
    rng = np.random.default_rng(seed)
    n = model.n_vertices
    p = model.mean_shape.reshape(-1, 3)
    u = p / np.linalg.norm(p, axis=1, keepdims=True)
    s = np.full(n, 0.46)
    s[model.region_labels == EYE] = 0.26
    s[model.region_labels == MOUTH] = 0.34
    s[model.region_labels == NOSE] = 0.52
    centers = rng.normal(size=(12, 3))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    blotch = np.exp(-((u[:, None, :] - centers[None]) ** 2).sum(-1) / 0.08) @ rng.uniform(-1, 1, 12)
    s += 0.08 * blotch / max(np.abs(blotch).max(), 1e-12)
    s += rng.uniform(-0.045, 0.045, n)
    s = np.clip(s, 0.18, 0.65)
    return TextureMap(s[:, None] * SKIN_TINT[None, :], np.ones(n, dtype=bool))


def default_scale(canvas: int) -> float:
    """Pixels per mm so the 200 mm head spans about 110 px on a 128 canvas."""
    return 0.55 * canvas / 128.0


def generate_scene(model: FaceModel, spec: SceneSpec, texture: TextureMap | None = None) -> Scene:
    rng = np.random.default_rng(spec.seed)
    sc = spec.param_scale
    alpha_id = rng.uniform(-sc, sc, model.k_id) * model.sigma_id
    tex = texture if texture is not None else procedural_texture(model, seed=spec.seed)
    c = spec.canvas
    out = dict(alpha_exp=[], poses=[], yaws=[], illum=[], shapes=[], clean_renders=[],
               images=[], clean_landmarks=[], landmarks=[])
    il = spec.illum
    for k in range(spec.n_frames):
        alpha_exp = rng.uniform(-sc, sc, model.k_exp) * model.sigma_exp
        yaw = rng.uniform(*spec.yaw_range)
        pitch = rng.uniform(*spec.pitch_range)
        t = np.array([c / 2, c / 2, 0.0]) + np.append(rng.uniform(-2, 2, 2), 0.0)
        pose = PoseTransform.compose(default_scale(c), rotation_matrix(yaw, pitch, 0.0), t)
        fi = FrameIllum(rng.uniform(*il.gamma_range), rng.uniform(*il.gain_range),
                        rng.uniform(*il.bias_range))
        shape = synthesize_shape(model, FaceParams(alpha_id, alpha_exp))
        clean = render(model, shape, pose, tex, c)
        image = clean.image if (fi.gamma, fi.gain, fi.bias) == (1.0, 1.0, 0.0) else fi.apply(clean.image)
        lm = pose.apply(landmarks_of(model, shape))
        mode = spec.mode_of(k)
        noisy = lm + rng.normal(0.0, 1.0, lm.shape) * spec.landmark_noise_px
        out["alpha_exp"].append(alpha_exp)
        out["poses"].append(pose)
        out["yaws"].append(float(yaw))
        out["illum"].append(fi)
        out["shapes"].append(shape)
        out["clean_renders"].append(clean)
        out["images"].append(image)
        out["clean_landmarks"].append(LandmarkObservation(lm, mode))
        out["landmarks"].append(LandmarkObservation(noisy, mode))
    return Scene(model=model, spec=spec, alpha_id=alpha_id, texture=tex, **out)


def correspondence_flow(render_j: RenderOutput, triangles, screen_i) -> np.ndarray:
    """Flow from each covered pixel of ``render_j`` to the image position of
    the same surface point (triangle + barycentrics) given vertex positions
    ``screen_i`` (N, 2). Undefined pixels are NaN."""
    h, w = render_j.mask2d.shape
    flow = np.full((h, w, 2), np.nan)
    pix = np.argwhere(render_j.mask2d)
    if len(pix):
        tid = render_j.tri_id[pix[:, 0], pix[:, 1]]
        b = render_j.bary[pix[:, 0], pix[:, 1]]
        q = np.einsum("pk,pkc->pc", b, screen_i[triangles[tid]])
        p = pix[:, ::-1] + 0.5
        flow[pix[:, 0], pix[:, 1]] = q - p
    return flow


def ground_truth_flow(scene: Scene, i: int, j: int) -> np.ndarray:
    """Flow defined on frame ``j`` pointing at the same surface point in frame ``i``."""
    screen_i = project(scene.poses[i], scene.shapes[i])
    return correspondence_flow(scene.clean_renders[j], scene.model.triangles, screen_i)


class CorrespondenceFlow:
    """Flow provider built from a scene's ground-truth geometry.

    For a pair i -> j, each rendered pixel shows colors sampled at the
    estimated vertex projections (in frame i on commonly visible vertices,
    in frame j elsewhere). The true surface point under each such sample is
    located through the clean raster of its source frame and projected with
    the true pose and shape of frame j; the flow is that location minus the
    pixel center. Pixels whose samples miss the true face are NaN.
    """

    def __init__(self, scene: Scene):
        self.screens = [project(scene.poses[k], scene.shapes[k]) for k in range(scene.n_frames)]
        self.rasters = [r.raster for r in scene.clean_renders]
        self.triangles = np.asarray(scene.model.triangles, dtype=np.int64)

    def true_location(self, s, q, j) -> np.ndarray:
        """Position in frame ``j`` of the true surface point seen at ``q`` in frame ``s``."""
        tri_id = self.rasters[s].tri_id
        h, w = tri_id.shape
        out = np.full((len(q), 2), np.nan)
        c = np.floor(q[:, 0]).astype(np.int64)
        r = np.floor(q[:, 1]).astype(np.int64)
        inside = np.isfinite(q).all(axis=1) & (c >= 0) & (c < w) & (r >= 0) & (r < h)
        idx = np.flatnonzero(inside)
        tid = tri_id[r[idx], c[idx]]
        hit = tid >= 0
        idx, tid = idx[hit], tid[hit]
        tri = self.triangles[tid]
        a, b, cc = (self.screens[s][tri[:, k]] for k in range(3))
        # barycentrics of q in the true projected triangle
        v0, v1, v2 = b - a, cc - a, q[idx] - a
        den = v0[:, 0] * v1[:, 1] - v1[:, 0] * v0[:, 1]
        ok = np.abs(den) > 1e-12
        l1 = np.where(ok, (v2[:, 0] * v1[:, 1] - v1[:, 0] * v2[:, 1]) / np.where(ok, den, 1), 1 / 3)
        l2 = np.where(ok, (v0[:, 0] * v2[:, 1] - v2[:, 0] * v0[:, 1]) / np.where(ok, den, 1), 1 / 3)
        bary = np.column_stack([1 - l1 - l2, l1, l2])
        out[idx] = np.einsum("pk,pkc->pc", bary, self.screens[j][tri])
        return out

    def __call__(self, ctx) -> np.ndarray:
        src = np.where(ctx.m12[:, None],
                       self.true_location(ctx.i, ctx.screen_i, ctx.j),
                       self.true_location(ctx.j, ctx.screen_j, ctx.j))
        h, w = ctx.mask.shape
        flow = np.full((h, w, 2), np.nan)
        pix = np.argwhere(ctx.mask)
        if len(pix):
            tid = ctx.raster.tri_id[pix[:, 0], pix[:, 1]]
            b = ctx.raster.bary[pix[:, 0], pix[:, 1]]
            loc = np.einsum("pk,pkc->pc", b, src[self.triangles[tid]])
            flow[pix[:, 0], pix[:, 1]] = loc - (pix[:, ::-1] + 0.5)
        return flow


def warp(image, flow) -> np.ndarray:
    """Backward-warp ``image`` by ``flow``; undefined flow pixels keep zeros."""
    h, w = flow.shape[:2]
    img = np.asarray(image, dtype=np.float64)
    out = np.zeros_like(img)
    ok = np.isfinite(flow).all(axis=2)
    rr, cc = np.nonzero(ok)
    x = cc + 0.5 + flow[rr, cc, 0]
    y = rr + 0.5 + flow[rr, cc, 1]
    out[rr, cc] = bilinear(img, x, y)
    return out


# -- serialization ---------------------------------------------------------

def frame_name(k: int) -> str:
    return f"frame_{k:02d}"


def save_scene(scene: Scene, out_dir) -> dict:
    """Write a scene directory and return its fit manifest.

    Layout: ``model.fmdl``, per-frame ``frame_XX.ppm`` (image),
    ``frame_XX_mask.pgm``, ``frame_XX_landmarks.csv``, ``frame_XX_pose.txt``
    and ``frame_XX.obj`` (ground-truth camera-space mesh), plus
    ``truth.json``, ``scene.json`` and ``fit.json``.
    """
    os.makedirs(out_dir, exist_ok=True)
    save_model(scene.model, os.path.join(out_dir, "model.fmdl"))
    frames = []
    for k in range(scene.n_frames):
        name = frame_name(k)
        write_ppm(os.path.join(out_dir, f"{name}.ppm"), scene.images[k])
        write_pgm(os.path.join(out_dir, f"{name}_mask.pgm"), scene.clean_renders[k].mask2d)
        write_landmarks(os.path.join(out_dir, f"{name}_landmarks.csv"), scene.landmarks[k])
        write_pose(os.path.join(out_dir, f"{name}_pose.txt"), scene.poses[k])
        export_obj(os.path.join(out_dir, f"{name}.obj"),
                   scene.poses[k].apply(scene.shapes[k]), scene.model.triangles)
        frames.append({"image": f"{name}.ppm", "landmarks": f"{name}_landmarks.csv"})
    truth = {
        "alpha_id": scene.alpha_id.tolist(),
        "alpha_exp": [a.tolist() for a in scene.alpha_exp],
        "yaw": scene.yaws,
        "illum": [asdict(fi) for fi in scene.illum],
    }
    with open(os.path.join(out_dir, "truth.json"), "w") as fh:
        json.dump(truth, fh, indent=2)
    with open(os.path.join(out_dir, "scene.json"), "w") as fh:
        json.dump({"spec": scene.spec.to_dict(), "n_frames": scene.n_frames}, fh, indent=2)
    fit_manifest = {
        "seed": scene.spec.seed,
        "model": "model.fmdl",
        "frames": frames,
        "canvas": scene.spec.canvas,
    }
    with open(os.path.join(out_dir, "fit.json"), "w") as fh:
        json.dump(fit_manifest, fh, indent=2)
    return fit_manifest
