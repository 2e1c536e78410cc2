import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from facefit.errors import DimensionMismatch
from facefit.images import quantize, to_gray
from facefit.losses import (
    LossBreakdown,
    LossWeights,
    block_matching_flow,
    census_transform,
    flow_loss,
    hamming_map,
    landmark_loss,
    landmark_loss_grad,
    photometric_loss,
    pyramid_descriptor,
    read_trace_csv,
    regularizer,
    regularizer_grad,
    semantic_loss,
    total_loss,
    write_trace_csv,
)
from facefit.model import FaceParams
from facefit.pose import FULL3D, XY_ONLY, LandmarkObservation, PoseTransform


def smooth_image(rng, h=48, w=48):
    """Band-limited random image in [0, 1]."""
    g = rng.random((h // 4 + 2, w // 4 + 2))
    up = np.kron(g, np.ones((4, 4)))[:h, :w]
    k = np.ones(5) / 5
    up = np.apply_along_axis(lambda r: np.convolve(r, k, "same"), 1, up)
    up = np.apply_along_axis(lambda c: np.convolve(c, k, "same"), 0, up)
    up = (up - up.min()) / (up.max() - up.min())
    return 0.1 + 0.8 * up


def census_oracle(gray):
    """Direct per-pixel census with clamp-to-edge borders."""
    h, w = gray.shape
    out = np.zeros((h, w), dtype=np.uint64)
    for r in range(h):
        for c in range(w):
            bit = 0
            code = 0
            for dr in range(-3, 4):
                for dc in range(-3, 4):
                    if dr == 0 and dc == 0:
                        continue
                    rr = min(max(r + dr, 0), h - 1)
                    cc = min(max(c + dc, 0), w - 1)
                    if gray[rr, cc] > gray[r, c]:
                        code |= 1 << bit
                    bit += 1
            out[r, c] = code
    return out


def descriptor_oracle(img, levels=3, cells=4, bins=8):
    g = to_gray(img)
    out = []
    for level in range(levels):
        if level:
            h, w = (g.shape[0] // 2) * 2, (g.shape[1] // 2) * 2
            g = g[:h, :w]
            g = 0.25 * (g[0::2, 0::2] + g[1::2, 0::2] + g[0::2, 1::2] + g[1::2, 1::2])
        gy, gx = np.gradient(g)
        mag = np.hypot(gx, gy)
        ang = np.mod(np.arctan2(gy, gx), 2 * np.pi)
        for rows in np.array_split(np.arange(g.shape[0]), cells):
            for cols in np.array_split(np.arange(g.shape[1]), cells):
                cell = g[np.ix_(rows, cols)]
                hist = np.zeros(bins)
                for r in rows:
                    for c in cols:
                        b = min(int(ang[r, c] / (2 * np.pi) * bins), bins - 1)
                        hist[b] += mag[r, c]
                n = max(cell.size, 1)
                out += [cell.mean(), cell.var()] + list(hist / n)
    return np.array(out)


# -- census / photometric ----------------------------------------------------

def test_census_constant_image_is_zero():
    assert not census_transform(np.full((20, 20), 0.4)).any()


def test_census_single_bright_pixel():
    img = np.zeros((15, 15))
    img[7, 7] = 1.0
    c = census_transform(img)
    assert c[7, 7] == 0
    bits = np.vectorize(lambda v: bin(int(v)).count("1"))(c)
    nbhd = np.zeros_like(bits, dtype=bool)
    nbhd[4:11, 4:11] = True
    nbhd[7, 7] = False
    assert np.all(bits[nbhd] == 1)
    assert np.all(bits[~nbhd & (np.arange(15)[:, None] != 7) | ~nbhd] == 0)


def test_census_matches_oracle():
    g = np.random.default_rng(0).random((19, 23))
    assert np.array_equal(census_transform(g), census_oracle(g))


def test_census_bit_order_row_major():
    img = np.zeros((7, 7))
    img[0, 0] = 1.0  # offset (-3, -3): first neighbor, bit 0
    img[6, 6] = 1.0  # offset (+3, +3): last neighbor, bit 47
    assert int(census_transform(img)[3, 3]) == (1 | (1 << 47))


def test_census_uses_luminance():
    rng = np.random.default_rng(1)
    rgb = rng.random((12, 12, 3))
    lum = rgb @ np.array([0.299, 0.587, 0.114])
    assert np.array_equal(census_transform(rgb), census_transform(lum))


def test_census_gamma_invariance_up_to_quantization():
    rng = np.random.default_rng(2)
    for _ in range(5):
        img = quantize(smooth_image(rng))
        g = quantize(img ** 0.5)
        diff = census_transform(img) != census_transform(g)
        # every differing descriptor must come from a tie created by quantization
        ties = np.zeros_like(diff)
        h, w = img.shape
        pad = np.pad(g, 3, mode="edge")
        for dr in range(7):
            for dc in range(7):
                if (dr, dc) != (3, 3):
                    ties |= pad[dr:dr + h, dc:dc + w] == g
        assert not np.any(diff & ~ties)


def test_photometric_identity_is_zero():
    img = smooth_image(np.random.default_rng(3))
    m = np.ones(img.shape, bool)
    assert photometric_loss(img, img, m, np.ones(img.shape)) == 0.0


def test_photometric_gamma_vs_shuffle():
    rng = np.random.default_rng(4)
    for _ in range(5):
        img = quantize(smooth_image(rng))
        m = np.ones(img.shape, bool)
        w = np.ones(img.shape)
        gamma = photometric_loss(img, quantize(img ** 1.6), m, w, lam=1.0)
        shuffled = rng.permutation(img.ravel()).reshape(img.shape)
        assert gamma < 0.01 * 48
        assert photometric_loss(img, shuffled, m, w, lam=1.0) > gamma


def test_photometric_empty_mask_is_zero():
    img = smooth_image(np.random.default_rng(5))
    assert photometric_loss(img, 1 - img, np.zeros(img.shape, bool), np.ones(img.shape)) == 0.0


def test_photometric_weighted_mean():
    rng = np.random.default_rng(6)
    a, b = rng.random((16, 16)), rng.random((16, 16))
    m = rng.random((16, 16)) > 0.3
    w = np.where(rng.random((16, 16)) > 0.5, 5.0, 1.0)
    ham = hamming_map(census_transform(a), census_transform(b)).astype(float)
    expect = 0.2 * (ham * m * w).sum() / (m * w).sum()
    assert photometric_loss(a, b, m, w) == pytest.approx(expect, rel=1e-12)


def test_photometric_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        photometric_loss(np.zeros((4, 4)), np.zeros((5, 4)), np.ones((4, 4), bool), np.ones((4, 4)))


# -- landmarks -----------------------------------------------------------------

def test_landmark_loss_examples():
    X = np.random.default_rng(7).normal(size=(10, 3))
    T = PoseTransform.identity()
    assert landmark_loss(T, X, LandmarkObservation(X)) == 0.0
    Y = X.copy()
    Y[3, 0] += 1.0
    assert landmark_loss(T, X, LandmarkObservation(Y), lam=2.5) == pytest.approx(2.5)


def test_landmark_loss_xy_ignores_z():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(10, 3))
    Y = X + rng.normal(size=X.shape)
    Z = Y.copy()
    Z[:, 2] = 1e9
    T = PoseTransform.identity()
    assert landmark_loss(T, X, LandmarkObservation(Y, XY_ONLY)) == \
        landmark_loss(T, X, LandmarkObservation(Z, XY_ONLY))
    assert landmark_loss(T, X, LandmarkObservation(Y, XY_ONLY)) <= \
        landmark_loss(T, X, LandmarkObservation(Y, FULL3D))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), split=st.integers(1, 9))
def test_landmark_loss_properties(seed, split):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(10, 3))
    Y = X + rng.normal(size=X.shape)
    T = PoseTransform(np.hstack([np.eye(3), rng.normal(size=(3, 1))]))
    whole = landmark_loss(T, X, LandmarkObservation(Y))
    parts = landmark_loss(T, X[:split], LandmarkObservation(Y[:split])) + \
        landmark_loss(T, X[split:], LandmarkObservation(Y[split:]))
    assert whole >= 0
    assert whole <= parts + 1e-12 and whole == pytest.approx(parts, rel=1e-12)


def test_landmark_grad_zero_at_exact_fit():
    X = np.random.default_rng(9).normal(size=(20, 3))
    Y = PoseTransform.compose(1.3, np.eye(3), [1, 2, 3]).apply(X)
    loss, g, _ = landmark_loss_grad(X, LandmarkObservation(Y))
    assert loss < 1e-9
    assert np.max(np.abs(g)) < 1e-9


# -- flow ------------------------------------------------------------------------

def test_flow_loss_examples():
    m = np.ones((8, 8), bool)
    w = np.ones((8, 8))
    assert flow_loss(np.zeros((8, 8, 2)), w, m) == 0.0
    assert flow_loss(np.dstack([np.ones((8, 8)), np.zeros((8, 8))]), w, m) == pytest.approx(0.2)


def test_flow_loss_matches_weighted_loop():
    rng = np.random.default_rng(10)
    f = rng.normal(size=(9, 7, 2))
    m = rng.random((9, 7)) > 0.4
    w = np.where(rng.random((9, 7)) > 0.5, 5.0, 1.0)
    num = den = 0.0
    for r in range(9):
        for c in range(7):
            if m[r, c]:
                num += (abs(f[r, c, 0]) + abs(f[r, c, 1])) * w[r, c]
                den += w[r, c]
    assert abs(flow_loss(f, w, m, lam=1.0) - num / den) < 1e-12


def test_flow_loss_skips_undefined_pixels():
    f = np.ones((4, 4, 2))
    f[0, 0] = np.nan
    assert flow_loss(f, np.ones((4, 4)), np.ones((4, 4), bool), lam=1.0) == pytest.approx(2.0)


def test_block_matching_identity_and_textureless():
    img = smooth_image(np.random.default_rng(11))
    assert not block_matching_flow(img, img).any()
    flat = np.full((32, 32), 0.5)
    assert not block_matching_flow(flat, flat * 0.9).any()


def test_block_matching_recovers_shift():
    img = np.random.default_rng(12).random((64, 64))
    shifted = np.roll(img, 2, axis=1)
    flow = block_matching_flow(img, shifted)
    interior = flow[8:56, 8:56]
    assert np.all(interior[..., 0] == 2) and np.all(interior[..., 1] == 0)


def test_block_matching_size_check():
    with pytest.raises(DimensionMismatch):
        block_matching_flow(np.zeros((8, 8)), np.zeros((9, 8)))


# -- semantic --------------------------------------------------------------------

def test_semantic_examples():
    rng = np.random.default_rng(13)
    f = rng.normal(size=20)
    assert semantic_loss(f, f) == pytest.approx(0.0, abs=1e-12)
    assert semantic_loss(f, 3 * f) == pytest.approx(0.0, abs=1e-12)
    assert semantic_loss([1.0, 0.0], [0.0, 1.0]) == pytest.approx(10.0)
    with pytest.raises(ValueError):
        semantic_loss(np.zeros(3), f[:3])


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), c=st.floats(0.01, 100))
def test_semantic_range_and_scale_invariance(seed, c):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=16), rng.normal(size=16)
    v = semantic_loss(a, b)
    assert 0.0 <= v <= 20.0
    assert semantic_loss(c * a, b) == pytest.approx(v, abs=1e-9)


def test_descriptor_matches_loop_oracle():
    rng = np.random.default_rng(14)
    for shape in ((64, 64, 3), (37, 50), (128, 128, 3)):
        img = rng.random(shape)
        assert np.max(np.abs(pyramid_descriptor(img) - descriptor_oracle(img))) < 1e-12


def test_descriptor_deterministic_length():
    img = np.random.default_rng(15).random((128, 128, 3))
    d = pyramid_descriptor(img)
    assert d.shape == (3 * 16 * 10,)
    assert np.array_equal(d, pyramid_descriptor(img))


# -- regularizer / totals ----------------------------------------------------------

def test_regularizer_examples(small_model):
    m = small_model
    assert regularizer(m.params(), m) == 0.0
    assert regularizer(FaceParams(m.sigma_id, np.zeros(m.k_exp)), m) == pytest.approx(m.k_id)
    rng = np.random.default_rng(16)
    p = FaceParams(rng.normal(size=m.k_id), rng.normal(size=m.k_exp))
    loop = sum(abs(p.alpha_id[i] / m.sigma_id[i]) for i in range(m.k_id)) + \
        0.5 * sum(abs(p.alpha_exp[i] / m.sigma_exp[i]) for i in range(m.k_exp))
    assert regularizer(p, m) == pytest.approx(loop, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), c=st.floats(0, 50))
def test_regularizer_homogeneous(small_model, seed, c):
    rng = np.random.default_rng(seed)
    p = FaceParams(rng.normal(size=small_model.k_id), rng.normal(size=small_model.k_exp))
    assert regularizer(p.scaled(c), small_model) == pytest.approx(c * regularizer(p, small_model),
                                                                  rel=1e-12, abs=1e-12)


def test_regularizer_grad_sign(small_model):
    p = FaceParams(np.ones(small_model.k_id), -np.ones(small_model.k_exp))
    gid, gexp = regularizer_grad(p, small_model)
    assert np.allclose(gid, 1 / small_model.sigma_id)
    assert np.allclose(gexp, -0.5 / small_model.sigma_exp)


def test_default_weights():
    w = LossWeights()
    assert (w.lambda_l, w.lambda_p, w.lambda_f, w.lambda_s, w.lambda_r) == (1.0, 0.2, 0.2, 10.0, 1.0)
    with pytest.raises(ValueError):
        LossWeights(lambda_p=-1.0)
    assert not LossWeights(lambda_p=0, lambda_f=0, lambda_s=0).image_terms_active


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1e6, allow_nan=False), min_size=5, max_size=5))
def test_total_loss_is_breakdown_sum(terms):
    total, b = total_loss(*terms)
    assert total == b.total == (b.L_l + b.L_p + b.L_f + b.L_s + b.L_r)
    assert abs(total - sum(terms)) <= 1e-12 * max(1.0, sum(terms))


def test_breakdown_addition():
    a = LossBreakdown(1, 2, 3, 4, 5)
    assert (a + a).astuple() == (2, 4, 6, 8, 10)
    assert a.asdict()["total"] == 15


def test_trace_csv_round_trip(tmp_path):
    rows = [{"iteration": k, **LossBreakdown(k, 0.1, 0.2, 0.3, 1.0).asdict()} for k in range(3)]
    write_trace_csv(tmp_path / "t.csv", rows)
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "iteration,L_l,L_p,L_f,L_s,L_r,total"
    back = read_trace_csv(tmp_path / "t.csv")
    assert [r["total"] for r in back] == [r["total"] for r in rows]
