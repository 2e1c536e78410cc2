import json

import numpy as np
import pytest

from facefit.losses import photometric_loss
from facefit.model import load_model
from facefit.pose import XY_ONLY, read_landmarks, read_pose
from facefit.synthetic import (
    FrameIllum,
    Illumination,
    SceneSpec,
    generate_scene,
    ground_truth_flow,
    save_scene,
    warp,
)


def test_clean_scene_images_equal_renders(small_model):
    sc = generate_scene(small_model, SceneSpec(seed=1, n_frames=3))
    for k in range(sc.n_frames):
        assert np.array_equal(sc.images[k], sc.clean_renders[k].image)
        assert np.array_equal(sc.landmarks[k].coords, sc.clean_landmarks[k].coords)


def test_scene_is_deterministic(small_model):
    spec = SceneSpec(seed=5, n_frames=2, landmark_noise_px=1.0,
                     illum=Illumination((0.7, 1.4), (0.9, 1.1), (-0.02, 0.02)))
    a, b = generate_scene(small_model, spec), generate_scene(small_model, spec)
    assert np.array_equal(a.alpha_id, b.alpha_id)
    for k in range(2):
        assert np.array_equal(a.images[k], b.images[k])
        assert np.array_equal(a.landmarks[k].coords, b.landmarks[k].coords)
        assert np.array_equal(a.poses[k].T, b.poses[k].T)


def test_gamma_frame_is_strictly_monotone(small_model):
    spec = SceneSpec(seed=2, n_frames=1, illum=Illumination((2.0, 2.0)))
    sc = generate_scene(small_model, spec)
    clean = sc.clean_renders[0].image.ravel()
    out = sc.images[0].ravel()
    order = np.argsort(clean, kind="stable")
    c, o = clean[order], out[order]
    step = np.diff(c) > 0
    assert np.all(np.diff(o)[step] > 0)
    assert np.all(np.diff(o)[~step] == 0)


def test_parameter_ranges(small_model):
    sc = generate_scene(small_model, SceneSpec(seed=3, n_frames=4, param_scale=0.5,
                                               yaw_range=(10.0, 20.0)))
    assert np.all(np.abs(sc.alpha_id) <= 0.5 * small_model.sigma_id)
    assert all(10.0 <= y <= 20.0 for y in sc.yaws)


def test_landmark_noise_is_added(small_model):
    sc = generate_scene(small_model, SceneSpec(seed=4, n_frames=1, landmark_noise_px=1.0))
    d = sc.landmarks[0].coords - sc.clean_landmarks[0].coords
    assert 0.5 < d.std() < 1.5


def test_xy_only_frames(small_model):
    sc = generate_scene(small_model, SceneSpec(seed=4, n_frames=2, landmark_mode=["full3d", "xy"]))
    assert sc.landmarks[1].mode == XY_ONLY
    assert np.all(np.isnan(sc.landmarks[1].coords[:, 2]))


def test_spec_validation():
    with pytest.raises(ValueError):
        SceneSpec(n_frames=0)
    with pytest.raises(ValueError):
        SceneSpec(yaw_range=(10.0, -10.0))
    with pytest.raises(ValueError):
        Illumination(gamma_range=(0.0, 1.0))
    with pytest.raises(ValueError):
        SceneSpec(landmark_noise_px=-1.0)


def test_illumination_model():
    fi = FrameIllum(2.0, 0.5, 0.1)
    assert np.allclose(fi.apply(np.array([0.0, 0.5, 1.0])), [0.1, 0.225, 0.6])


def test_self_flow_is_zero(small_model):
    sc = generate_scene(small_model, SceneSpec(seed=6, n_frames=2))
    f = ground_truth_flow(sc, 1, 1)
    ok = np.isfinite(f).all(axis=2)
    assert ok.sum() > 1000
    assert np.max(np.abs(f[ok])) < 1e-9


def test_flow_warp_reduces_census_loss(small_model):
    for seed in range(5):
        sc = generate_scene(small_model, SceneSpec(seed=seed, n_frames=2, yaw_range=(-30, 30)))
        f = ground_truth_flow(sc, 0, 1)
        ok = np.isfinite(f).all(axis=2)
        w = np.ones(ok.shape)
        warped = warp(sc.images[0], f)
        assert photometric_loss(sc.images[1], warped, ok, w) < \
            photometric_loss(sc.images[1], sc.images[0], ok, w)


def test_save_scene_layout(tmp_path, small_model):
    sc = generate_scene(small_model, SceneSpec(seed=7, n_frames=2))
    save_scene(sc, tmp_path)
    names = {p.name for p in tmp_path.iterdir()}
    for k in range(2):
        for suffix in (".ppm", "_mask.pgm", "_landmarks.csv", "_pose.txt", ".obj"):
            assert f"frame_{k:02d}{suffix}" in names
    assert {"model.fmdl", "truth.json", "scene.json", "fit.json"} <= names
    assert load_model(tmp_path / "model.fmdl").n_vertices == small_model.n_vertices
    assert np.allclose(read_pose(tmp_path / "frame_01_pose.txt").T, sc.poses[1].T)
    assert np.allclose(read_landmarks(tmp_path / "frame_00_landmarks.csv").coords,
                       sc.landmarks[0].coords)
    spec = json.loads((tmp_path / "scene.json").read_text())["spec"]
    assert SceneSpec.from_dict(spec) == sc.spec
