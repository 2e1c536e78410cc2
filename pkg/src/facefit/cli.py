"""``facefit <synth|fit|eval|study|render> --manifest PATH [--threads N] [--out DIR]``.

Every command is driven by a JSON manifest. Unknown keys are rejected and
relative paths resolve against the manifest's directory. On failure a single
line ``error: <category>: <message>`` goes to stderr and the exit code is 1.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields

import numpy as np

from facefit.errors import FaceFitError, ManifestError
from facefit.fitter import (
    FitProblem,
    Frame,
    StageConfig,
    StudyConfig,
    StudyTable,
    fit,
    substitute_study,
)
from facefit.images import read_pnm, write_ppm
from facefit.losses import LossWeights, write_trace_csv
from facefit.metrics import (
    ErrorReport,
    bbox_diagonal,
    nme_2d,
    nme_3d,
    outer_interocular,
    per_vertex_error,
    point_to_plane,
    report_table,
)
from facefit.model import (
    FaceParams,
    export_obj,
    load_model,
    load_obj,
    make_synthetic_model,
    model_from_bytes,
    model_to_bytes,
    save_model,
    synthesize_shape,
)
from facefit.pose import PoseTransform, read_landmarks, read_pose, write_pose
from facefit.render import TextureMap, render
from facefit.synthetic import (
    CorrespondenceFlow,
    SceneSpec,
    frame_name,
    generate_scene,
    procedural_texture,
    save_scene,
)

log = logging.getLogger("facefit")

LOG_LEVELS = {"quiet": logging.ERROR, "info": logging.INFO, "trace": logging.DEBUG}
MODEL_KEYS = {"n_subdiv", "k_id", "k_exp", "seed"}
METRICS = ("per_vertex", "point_to_plane", "nme_3d", "nme_2d")


# -- manifest helpers --------------------------------------------------------

class Manifest:
    def __init__(self, path, data, allowed, required=()):
        if not isinstance(data, dict):
            raise ManifestError(f"{path}: manifest must be a JSON object")
        unknown = sorted(set(data) - set(allowed))
        if unknown:
            raise ManifestError(f"{path}: unknown keys {unknown}")
        missing = [k for k in required if k not in data]
        if missing:
            raise ManifestError(f"{path}: missing keys {missing}")
        self.path = path
        self.base = os.path.dirname(os.path.abspath(path))
        self.data = data

    def get(self, key, default=None):
        return self.data.get(key, default)

    def resolve(self, p):
        return p if os.path.isabs(p) else os.path.join(self.base, p)


def _read_manifest(path, allowed, required=()):
    if not os.path.exists(path):
        raise FileNotFoundError(f"manifest not found: {path}")
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}: invalid JSON ({exc.msg})") from None
    return Manifest(path, data, allowed, required)


def _config(cls, block, what):
    block = dict(block or {})
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(block) - names)
    if unknown:
        raise ManifestError(f"unknown {what} keys {unknown}")
    try:
        return cls(**block)
    except (TypeError, ValueError) as exc:
        raise ManifestError(f"bad {what}: {exc}") from None


def _seed(m: Manifest) -> int:
    seed = m.get("seed")
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ManifestError(f"{m.path}: 'seed' must be an integer")
    return seed


def _out_dir(m: Manifest, args) -> str:
    out = args.out or m.get("out")
    if not out:
        raise ManifestError("an output directory is required (--out or manifest 'out')")
    out = out if args.out else m.resolve(out)
    os.makedirs(out, exist_ok=True)
    return out


def _synthetic_model(block):
    block = dict(block or {})
    unknown = sorted(set(block) - MODEL_KEYS)
    if unknown:
        raise ManifestError(f"unknown model keys {unknown}")
    model = make_synthetic_model(**{"n_subdiv": 4, **block})
    # the stored model is float32; generate from exactly what gets saved
    return model_from_bytes(model_to_bytes(model))


def _scene_spec(block, seed):
    block = dict(block or {})
    if "seed" in block:
        raise ManifestError("scene seed comes from the top-level 'seed' key")
    names = {f.name for f in fields(SceneSpec)} - {"seed"}
    unknown = sorted(set(block) - names)
    if unknown:
        raise ManifestError(f"unknown scene keys {unknown}")
    try:
        return SceneSpec.from_dict({**block, "seed": seed})
    except (TypeError, ValueError) as exc:
        raise ManifestError(f"bad scene spec: {exc}") from None


def _dump(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)


# -- commands ----------------------------------------------------------------

def cmd_synth(args):
    m = _read_manifest(args.manifest, {"seed", "model", "scene", "out"}, ("seed",))
    seed = _seed(m)
    out = _out_dir(m, args)
    model = _synthetic_model(m.get("model"))
    scene = generate_scene(model, _scene_spec(m.get("scene"), seed))
    save_scene(scene, out)
    log.info("wrote %d-frame scene to %s", scene.n_frames, out)
    return 0


def _load_frames(m: Manifest, model):
    frames = m.get("frames")
    if not isinstance(frames, list) or not frames:
        raise ManifestError("'frames' must be a non-empty list")
    out = []
    for k, fr in enumerate(frames):
        if not isinstance(fr, dict) or set(fr) != {"image", "landmarks"}:
            raise ManifestError(f"frame {k} needs exactly the keys 'image' and 'landmarks'")
        image = read_pnm(m.resolve(fr["image"]))
        out.append(Frame(image, read_landmarks(m.resolve(fr["landmarks"]))))
    return out


def _flow_provider(m: Manifest, model):
    flow = m.get("flow", "block_matching")
    if flow == "block_matching":
        return None
    if flow == "ground_truth":
        scene_dir = m.get("scene")
        if not scene_dir:
            raise ManifestError("flow 'ground_truth' needs a 'scene' directory")
        with open(os.path.join(m.resolve(scene_dir), "scene.json")) as fh:
            info = json.load(fh)
        spec = SceneSpec.from_dict(info["spec"])
        return CorrespondenceFlow(generate_scene(model, spec))
    raise ManifestError(f"unknown flow provider {flow!r}")


FIT_KEYS = {"seed", "model", "frames", "weights", "schedule", "canvas", "out", "flow",
            "scene", "threads"}


def cmd_fit(args):
    m = _read_manifest(args.manifest, FIT_KEYS, ("seed", "model", "frames"))
    seed = _seed(m)
    model = load_model(m.resolve(m.get("model")))
    frames = _load_frames(m, model)
    canvas = m.get("canvas")
    if canvas is not None and any(np.shape(f.image)[:2] != (canvas, canvas) for f in frames):
        raise ManifestError("frame images do not match the manifest canvas")
    threads = args.threads if args.threads is not None else int(m.get("threads", 1))
    problem = FitProblem(model, frames, _config(LossWeights, m.get("weights"), "weights"),
                         _config(StageConfig, m.get("schedule"), "schedule"), seed,
                         flow_provider=_flow_provider(m, model), threads=threads)
    out = _out_dir(m, args)
    result = fit(problem)
    for k, pose in enumerate(result.poses):
        name = frame_name(k)
        shape = synthesize_shape(model, result.params(k))
        export_obj(os.path.join(out, f"{name}.obj"), pose.apply(shape), model.triangles)
        write_pose(os.path.join(out, f"{name}_pose.txt"), pose)
    _dump(os.path.join(out, "params.json"), {
        "alpha_id": result.alpha_id.tolist(),
        "alpha_exp": [a.tolist() for a in result.alpha_exp],
        "stage_a": {"alpha_id": result.stage_a["alpha_id"].tolist(),
                    "alpha_exp": [a.tolist() for a in result.stage_a["alpha_exp"]]},
    })
    _dump(os.path.join(out, "losses.json"), result.final.asdict())
    write_trace_csv(os.path.join(out, "trace.csv"), result.trace)
    log.info("fit done: total %.6f after %d trace rows", result.final.total, len(result.trace))
    return 0


def _frame_meshes(d):
    k, out = 0, []
    while os.path.exists(os.path.join(d, f"{frame_name(k)}.obj")):
        out.append(load_obj(os.path.join(d, f"{frame_name(k)}.obj")))
        k += 1
    if not out:
        raise FileNotFoundError(f"no frame meshes in {d}")
    return out


def cmd_eval(args):
    m = _read_manifest(args.manifest, {"pred", "gt", "metrics", "with_scale", "out"},
                       ("pred", "gt"))
    metrics = m.get("metrics", ["per_vertex"])
    bad = sorted(set(metrics) - set(METRICS))
    if bad:
        raise ManifestError(f"unknown metrics {bad}")
    with_scale = bool(m.get("with_scale", False))
    gt_dir, pred_dir = m.resolve(m.get("gt")), m.resolve(m.get("pred"))
    model = load_model(os.path.join(gt_dir, "model.fmdl"))
    gt = _frame_meshes(gt_dir)
    pred = _frame_meshes(pred_dir)
    if len(gt) != len(pred):
        raise ManifestError(f"{len(pred)} predicted frames but {len(gt)} ground-truth frames")
    yaws = None
    truth = os.path.join(gt_dir, "truth.json")
    if os.path.exists(truth):
        with open(truth) as fh:
            yaws = json.load(fh).get("yaw")
    out = _out_dir(m, args)
    lm = model.landmark_indices
    tris = model.triangles
    reports = []
    for name in metrics:
        vals = []
        for (pv, _), (gv, _) in zip(pred, gt):
            if name == "per_vertex":
                vals.append(per_vertex_error(pv, gv, on=lm, with_scale=with_scale))
            elif name == "point_to_plane":
                vals.append(point_to_plane(pv, gv, tris, on=lm, with_scale=with_scale)["mean"])
            elif name == "nme_3d":
                vals.append(nme_3d(pv, gv, outer_interocular(gv[lm])))
            else:
                vals.append(nme_2d(pv[lm], gv[lm], bbox_diagonal(gv[lm, :2])))
        rep = ErrorReport(vals, yaws, name, [frame_name(k) for k in range(len(vals))])
        rep.write_csv(os.path.join(out, f"{name}.csv"))
        reports.append(rep)
    text = report_table(reports)
    with open(os.path.join(out, "report.txt"), "w") as fh:
        fh.write(text + "\n")
    print(text)
    return 0


STUDY_KEYS = {"seed", "n_scenes", "model", "scene", "baseline", "out"}


def cmd_study(args):
    m = _read_manifest(args.manifest, STUDY_KEYS, ("seed",))
    seed = _seed(m)
    n = int(m.get("n_scenes", 20))
    if n < 1:
        raise ManifestError("n_scenes must be >= 1")
    model = _synthetic_model(m.get("model"))
    block = {"yaw_range": [-80.0, 80.0], "landmark_noise_px": 1.0, **(m.get("scene") or {})}
    cfg = _config(StudyConfig, m.get("baseline"), "baseline")
    out = _out_dir(m, args)
    rows = []
    for s in range(n):
        scene = generate_scene(model, _scene_spec(block, seed + s))
        problem = FitProblem(model, [Frame(scene.images[k], scene.landmarks[k])
                                     for k in range(scene.n_frames)])
        rows += substitute_study(problem, scene, cfg, scene_index=s)
        log.info("study scene %d/%d", s + 1, n)
    table = StudyTable(rows)
    table.write_csv(os.path.join(out, "study.csv"))
    text = table.reduction_text() + "\n\n" + table.text()
    with open(os.path.join(out, "study.txt"), "w") as fh:
        fh.write(text + "\n")
    print(text)
    return 0


RENDER_KEYS = {"model", "params", "frame", "pose", "canvas", "texture_seed", "out", "image"}


def cmd_render(args):
    m = _read_manifest(args.manifest, RENDER_KEYS, ("model", "params", "pose"))
    model = load_model(m.resolve(m.get("model")))
    with open(m.resolve(m.get("params"))) as fh:
        params = json.load(fh)
    k = int(m.get("frame", 0))
    a_exp = params["alpha_exp"]
    a_exp = a_exp[k] if a_exp and isinstance(a_exp[0], list) else a_exp
    shape = synthesize_shape(model, FaceParams(np.array(params["alpha_id"]), np.array(a_exp)))
    pose = read_pose(m.resolve(m.get("pose")))
    canvas = int(m.get("canvas", 128))
    seed = m.get("texture_seed")
    tex = procedural_texture(model, seed) if seed is not None else \
        TextureMap.uniform(model.n_vertices, (0.6, 0.48, 0.4))
    out = _out_dir(m, args)
    img = render(model, shape, pose, tex, canvas).image
    path = os.path.join(out, m.get("image", "render.ppm"))
    write_ppm(path, img)
    log.info("wrote %s", path)
    return 0


COMMANDS = {"synth": cmd_synth, "fit": cmd_fit, "eval": cmd_eval, "study": cmd_study,
            "render": cmd_render}


def _setup_logging():
    level = os.environ.get("FACEFIT_LOG", "info").strip().lower()
    if level not in LOG_LEVELS:
        raise ManifestError(f"FACEFIT_LOG must be one of {sorted(LOG_LEVELS)}, got {level!r}")
    logging.basicConfig(level=LOG_LEVELS[level], stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("facefit").setLevel(LOG_LEVELS[level])


def _category(exc) -> str:
    if isinstance(exc, FaceFitError):
        return exc.category
    if isinstance(exc, (FileNotFoundError, PermissionError, IsADirectoryError, OSError)):
        return "io"
    if isinstance(exc, (KeyError, TypeError)):
        return "manifest"
    if isinstance(exc, ValueError):
        return "value"
    return "internal"


def build_parser():
    p = argparse.ArgumentParser(prog="facefit", description=__doc__.split("\n")[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--manifest", required=True, help="JSON run manifest")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default 1)")
    p.add_argument("--out", default=None, help="output directory (overrides manifest 'out')")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _setup_logging()
        if args.threads is not None and args.threads < 1:
            raise ManifestError("--threads must be >= 1")
        return COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - every failure becomes one line
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"error: {_category(exc)}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
