"""Multi-frame analysis-by-synthesis fitting.

The unknowns are one identity vector shared by all frames and one expression
vector per frame, both in sigma-normalised units (``z = alpha / sigma``). The
pose of every frame is never optimised: it is re-solved in closed form from
the landmarks each time the shape changes.

Stage A minimises landmark + regularizer terms with analytic gradients.
Stage B adds the photometric, flow and semantic terms over ordered frame
pairs (texture swapped from frame i, rendered into frame j); their gradient
is taken by central finite differences.
"""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from facefit import kernels
from facefit.errors import DegenerateLandmarks, NonFiniteLoss
from facefit.losses import (
    LossBreakdown,
    LossWeights,
    census_transform,
    flow_loss,
    landmark_loss_grad,
    photometric_loss,
    pyramid_descriptor,
    semantic_loss,
)
from facefit.metrics import BUCKET_LABELS, ErrorReport, nme_3d, outer_interocular
from facefit.model import FaceModel, FaceParams, landmark_rows
from facefit.pose import LandmarkObservation, PoseTransform, project, rodrigues, solve_pose
from facefit.render import (
    Raster,
    TextureMap,
    rasterize_mesh,
    sample_texture,
    shade,
    swap_texture,
    triangle_weights,
    vertex_visibility,
)

log = logging.getLogger(__name__)

ALL_PAIRS = "all_pairs"
RING = "ring"


@dataclass(frozen=True)
class StageConfig:
    stage_a_iters: int = 300
    stage_b_iters: int = 8
    fd_step: float = 1e-3
    step_size: float = 1e-3
    pair_policy: str = "auto"
    max_halvings: int = 20
    flow_block: int = 8
    flow_radius: int = 4
    warm_start_iters: int = 20
    warm_start_ridge: float = 1.0
    landmark_smoothing: float = 0.0
    precondition: bool = True
    stage_b_step: float | None = None

    def pairs(self, n_frames: int):
        policy = self.pair_policy
        if policy == "auto":
            policy = ALL_PAIRS if n_frames <= 4 else RING
        if n_frames < 2:
            return []
        if policy == ALL_PAIRS:
            return [(i, j) for i in range(n_frames) for j in range(n_frames) if i != j]
        if policy == RING:
            pairs = []
            for i in range(n_frames):
                j = (i + 1) % n_frames
                pairs += [(i, j), (j, i)]
            return sorted(set(pairs))
        raise ValueError(f"unknown pair policy {self.pair_policy!r}")


@dataclass
class Frame:
    image: np.ndarray
    landmarks: LandmarkObservation


@dataclass(frozen=True)
class PairContext:
    """Everything a flow provider may use for the ordered pair i -> j."""

    i: int
    j: int
    target: np.ndarray
    rendered: np.ndarray
    target_census: np.ndarray
    rendered_census: np.ndarray
    raster: Raster
    screen_i: np.ndarray
    screen_j: np.ndarray
    m12: np.ndarray
    mask: np.ndarray


class BlockMatchingFlow:
    """Census block-matching flow from the target to the rendered image."""

    def __init__(self, block=8, radius=4):
        self.block = block
        self.radius = radius

    def __call__(self, ctx: PairContext) -> np.ndarray:
        h, w = ctx.target_census.shape
        b = self.block
        # only blocks touching the render mask contribute to the flow loss
        padded = np.zeros((-(-h // b) * b, -(-w // b) * b), dtype=bool)
        padded[:h, :w] = ctx.mask
        active = padded.reshape(padded.shape[0] // b, b, padded.shape[1] // b, b).any(axis=(1, 3))
        blocks = kernels.block_match(ctx.target_census, ctx.rendered_census,
                                     self.block, self.radius, active)
        return np.repeat(np.repeat(blocks, b, axis=0), b, axis=1)[:h, :w].astype(np.float64)


@dataclass
class FitProblem:
    model: FaceModel
    frames: list
    weights: LossWeights = field(default_factory=LossWeights)
    schedule: StageConfig = field(default_factory=StageConfig)
    seed: int = 0
    flow_provider: Callable | None = None
    feature_provider: Callable = pyramid_descriptor
    threads: int = 1

    def __post_init__(self):
        if not self.frames:
            raise ValueError("a fit problem needs at least one frame")
        for k, fr in enumerate(self.frames):
            if fr.landmarks is None or len(fr.landmarks) == 0:
                raise DegenerateLandmarks(f"frame {k} has no landmarks")
            if len(fr.landmarks) != self.model.n_landmarks:
                raise DegenerateLandmarks(
                    f"frame {k} has {len(fr.landmarks)} landmarks, model defines "
                    f"{self.model.n_landmarks}")

    @property
    def canvas(self):
        h, w = np.shape(self.frames[0].image)[:2]
        return (w, h)


@dataclass
class FitResult:
    alpha_id: np.ndarray
    alpha_exp: list
    poses: list
    trace: list
    final: LossBreakdown
    stage_a: dict = field(default_factory=dict)

    def params(self, k) -> FaceParams:
        return FaceParams(self.alpha_id, self.alpha_exp[k])


def gradient(loss_fn: Callable, x, fd_step: float, coords: Sequence[int] | None = None):
    """Central finite-difference gradient of a scalar function.

    Only ``coords`` are differentiated (all by default); the rest stay 0.
    """
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for k in range(x.size) if coords is None else coords:
        e = np.zeros_like(x)
        e[k] = fd_step
        g[k] = (loss_fn(x + e) - loss_fn(x - e)) / (2 * fd_step)
    return g


@dataclass
class _FrameState:
    shape: np.ndarray
    pose: PoseTransform
    tex: TextureMap
    raster: Raster
    screen: np.ndarray


class Objective:
    """Loss of a fit problem as a function of the normalised parameter vector."""

    def __init__(self, problem: FitProblem):
        self.p = problem
        m = problem.model
        self.model = m
        self.F = len(problem.frames)
        self.kid, self.kexp = m.k_id, m.k_exp
        self.size = self.kid + self.F * self.kexp
        rows = landmark_rows(m).ravel()
        self.mean_lm = m.mean_shape[rows]
        self.bid_lm = m.id_basis[rows]
        self.bexp_lm = m.exp_basis[rows]
        self.pairs = problem.schedule.pairs(self.F)
        self.tri_weight = triangle_weights(m)
        self.flow = problem.flow_provider or BlockMatchingFlow(
            problem.schedule.flow_block, problem.schedule.flow_radius)
        self._target_census = None
        self._target_feat = None

    # -- parameter packing --
    def unpack(self, z):
        z = np.asarray(z, dtype=np.float64)
        a_id = z[:self.kid] * self.model.sigma_id
        a_exp = [z[self.kid + f * self.kexp:self.kid + (f + 1) * self.kexp] * self.model.sigma_exp
                 for f in range(self.F)]
        return a_id, a_exp

    def pack(self, alpha_id, alpha_exp):
        parts = [np.asarray(alpha_id) / self.model.sigma_id]
        parts += [np.asarray(a) / self.model.sigma_exp for a in alpha_exp]
        return np.concatenate(parts)

    def exp_slice(self, f):
        return slice(self.kid + f * self.kexp, self.kid + (f + 1) * self.kexp)

    def frames_of_coord(self, k):
        return list(range(self.F)) if k < self.kid else [(k - self.kid) // self.kexp]

    # -- landmark + regularizer (analytic) --
    def landmarks(self, a_id, a_exp_f):
        return (self.mean_lm + self.bid_lm @ a_id + self.bexp_lm @ a_exp_f).reshape(-1, 3)

    def smooth_terms(self, z, with_grad=True, smoothing=0.0):
        w = self.p.weights
        a_id, a_exp = self.unpack(z)
        g = np.zeros(self.size)
        L_l = 0.0
        poses = []
        for f, fr in enumerate(self.p.frames):
            X = self.landmarks(a_id, a_exp[f])
            loss, gX, T = landmark_loss_grad(X, fr.landmarks, w.lambda_l, smoothing)
            L_l += loss
            poses.append(T)
            if with_grad:
                gx = gX.ravel()
                g[:self.kid] += (self.bid_lm.T @ gx) * self.model.sigma_id
                g[self.exp_slice(f)] += (self.bexp_lm.T @ gx) * self.model.sigma_exp
        zid = z[:self.kid]
        L_r = w.lambda_r * float(np.abs(zid).sum())
        g[:self.kid] += w.lambda_r * np.sign(zid)
        for f in range(self.F):
            ze = z[self.exp_slice(f)]
            L_r += 0.5 * w.lambda_r * float(np.abs(ze).sum())
            g[self.exp_slice(f)] += 0.5 * w.lambda_r * np.sign(ze)
        return L_l, L_r, g, poses

    def projected_residual(self, z, jac=False):
        """Landmark residuals after the closed-form pose solve, stacked over frames.

        With ``jac`` also returns the variable-projection (Kaufman) Jacobian
        with respect to z.
        """
        L = self.model.n_landmarks
        a_id, a_exp = self.unpack(z)
        res, rows = [], []
        for f, fr in enumerate(self.p.frames):
            o = fr.landmarks
            X = self.landmarks(a_id, a_exp[f])
            A = np.column_stack([X, np.ones(L)])
            c = o.channels
            coef, *_ = np.linalg.lstsq(A, o.observed, rcond=None)
            res.append((A @ coef - o.observed).ravel())
            if jac:
                Q, _ = np.linalg.qr(A)
                M = coef[:3].T  # c x 3 linear part of the pose rows
                J = np.zeros((L * c, self.size))
                for cols, B, sig in ((slice(0, self.kid), self.bid_lm, self.model.sigma_id),
                                     (self.exp_slice(f), self.bexp_lm, self.model.sigma_exp)):
                    D = np.einsum("ij,ljk->lik", M, B.reshape(L, 3, -1) * sig)  # (L, c, K)
                    D = D - np.einsum("la,ma,mck->lck", Q, Q, D)
                    J[:, cols] = D.reshape(L * c, -1)
                rows.append(J)
        r = np.concatenate(res)
        return (r, np.vstack(rows)) if jac else r

    def least_squares_start(self, iters=30, ridge=1.0, continuation=(1e3, 1e2, 1e1)):
        """Starting point for stage A from squared landmark residuals.

        Minimises ``sum |E_f(z)|^2 + ridge * |z|^2`` where ``E_f`` is the
        residual left after the closed-form pose solve, by damped Gauss-Newton
        with the pose projected out. The problem is solved first with the
        heavier ``continuation`` ridges, each solution seeding the next; this
        keeps z out of spurious basins far from zero.
        """
        z = np.zeros(self.size)
        for rd in [r for r in continuation if r > ridge] + [ridge]:
            z = self._gauss_newton(self.projected_residual, z, rd, iters)
        return z

    def landmark_metric(self, z, ridge=1.0):
        """Inverse Gauss-Newton matrix of the landmark residuals at z."""
        _, J = self.projected_residual(z, jac=True)
        return np.linalg.inv(J.T @ J + ridge * np.eye(self.size))

    def _gauss_newton(self, residual, z, ridge, iters):
        def cost(z):
            r = residual(z)
            return float(r @ r) + ridge * float(z @ z)

        c0 = cost(z)
        mu = 1e-3
        eye = np.eye(self.size)
        for _ in range(iters):
            r, J = residual(z, jac=True)
            H = J.T @ J + ridge * eye
            g = J.T @ r + ridge * z
            for _ in range(30):
                step = np.linalg.solve(H + mu * np.diag(np.diag(H)), -g)
                c1 = cost(z + step)
                if c1 < c0:
                    z, c0 = z + step, c1
                    mu = max(mu / 10, 1e-12)
                    break
                mu *= 10
            else:
                break
        return z

    # -- image terms --
    def _targets(self):
        if self._target_census is None:
            self._target_census = [census_transform(fr.image) for fr in self.p.frames]
            if self.p.weights.lambda_s > 0:
                self._target_feat = [self.p.feature_provider(fr.image) for fr in self.p.frames]
        return self._target_census

    def frame_state(self, f, a_id, a_exp_f) -> _FrameState:
        m = self.model
        shape = (m.mean_shape + m.id_basis @ a_id + m.exp_basis @ a_exp_f).reshape(-1, 3)
        X = shape[m.landmark_indices]
        pose = solve_pose(X, self.p.frames[f].landmarks)
        vis = vertex_visibility(m, shape, pose)
        tex = sample_texture(self.p.frames[f].image, m, shape, pose, vis)
        raster = rasterize_mesh(m, shape, pose, self.p.canvas)
        return _FrameState(shape, pose, tex, raster, project(pose, shape))

    def frame_states(self, z, frames=None, base=None):
        a_id, a_exp = self.unpack(z)
        states = list(base) if base is not None else [None] * self.F
        for f in (range(self.F) if frames is None else frames):
            states[f] = self.frame_state(f, a_id, a_exp[f])
        return states

    def pair_terms(self, states, i, j):
        w = self.p.weights
        si, sj = states[i], states[j]
        m12 = si.tex.valid & sj.tex.valid
        tex = swap_texture(si.tex, sj.tex, m12)
        out = shade(sj.raster, self.model, tex, self.tri_weight)
        if not out.mask2d.any():
            return 0.0, 0.0, 0.0
        target = self.p.frames[j].image
        ct = self._targets()[j]
        cr = census_transform(out.image)
        L_p = photometric_loss(target, out.image, out.mask2d, out.weight, w.lambda_p,
                               target_census=ct, rendered_census=cr) if w.lambda_p > 0 else 0.0
        L_f = 0.0
        if w.lambda_f > 0:
            ctx = PairContext(i, j, target, out.image, ct, cr, sj.raster, si.screen,
                              sj.screen, m12, out.mask2d)
            L_f = flow_loss(self.flow(ctx), out.weight, out.mask2d, w.lambda_f)
        L_s = 0.0
        if w.lambda_s > 0:
            feat = self.p.feature_provider(out.image)
            # a degenerate trial render can be all black: score it as orthogonal
            L_s = semantic_loss(self._target_feat[j], feat, w.lambda_s) if np.any(feat) else w.lambda_s
        return L_p, L_f, L_s

    def image_terms(self, states, pairs=None):
        """Per-pair (L_p, L_f, L_s) as a dict keyed by (i, j)."""
        return {pr: self.pair_terms(states, *pr) for pr in (self.pairs if pairs is None else pairs)}

    # -- full objective --
    def evaluate(self, z, image_terms=True):
        L_l, L_r, _, _ = self.smooth_terms(z, with_grad=False)
        L_p = L_f = L_s = 0.0
        if image_terms and self.pairs and self.p.weights.image_terms_active:
            per = self.image_terms(self.frame_states(z))
            L_p = sum(v[0] for v in per.values())
            L_f = sum(v[1] for v in per.values())
            L_s = sum(v[2] for v in per.values())
        return LossBreakdown(L_l, L_p, L_f, L_s, L_r)

    def image_gradient(self, z, fd_step, threads=1):
        """Central differences of the summed image terms, reusing unaffected pairs."""
        base_states = self.frame_states(z)
        base = self.image_terms(base_states)

        def pair_sum(d):
            return sum(sum(v) for v in d.values())

        def coord(k):
            frames = self.frames_of_coord(k)
            affected = [pr for pr in self.pairs if pr[0] in frames or pr[1] in frames]
            unaffected = pair_sum({pr: base[pr] for pr in self.pairs if pr not in affected})
            vals = []
            for sgn in (1.0, -1.0):
                zz = z.copy()
                zz[k] += sgn * fd_step
                states = self.frame_states(zz, frames, base_states)
                vals.append(unaffected + pair_sum(self.image_terms(states, affected)))
            return (vals[0] - vals[1]) / (2 * fd_step)

        ks = range(self.size)
        if threads > 1:
            with ThreadPoolExecutor(threads) as ex:
                g = list(ex.map(coord, ks))
        else:
            g = [coord(k) for k in ks]
        return np.array(g)


def _descend(obj: Objective, z, iters, step, image_terms, trace, stage, fd_step,
             max_halvings, threads, metric=None):
    b = obj.evaluate(z, image_terms)
    if not np.isfinite(b.total):
        raise NonFiniteLoss(f"non-finite initial loss in stage {stage}", trace)
    f0 = b.total
    for _ in range(iters):
        _, _, g, _ = obj.smooth_terms(z, smoothing=obj.p.schedule.landmark_smoothing)
        if image_terms and obj.pairs and obj.p.weights.image_terms_active:
            g = g + obj.image_gradient(z, fd_step, threads)
        if not np.all(np.isfinite(g)):
            raise NonFiniteLoss(f"non-finite gradient in stage {stage}", trace)
        if not np.any(g):
            break
        if metric is not None:
            g = metric @ g
        t = step
        accepted = None
        for _ in range(max_halvings + 1):
            zn = z - t * g
            bn = obj.evaluate(zn, image_terms)
            if not np.isfinite(bn.total):
                raise NonFiniteLoss(f"non-finite loss in stage {stage}", trace)
            if bn.total < f0:
                accepted = (zn, bn)
                break
            t *= 0.5
        if accepted is None:
            break
        z, b = accepted
        f0 = b.total
        step = 2.0 * t
        trace.append({"iteration": len(trace), "stage": stage, **b.asdict()})
        log.debug("stage %s iter %d total %.6f", stage, len(trace), f0)
    return z, b, step


def fit(problem: FitProblem, z0=None) -> FitResult:
    """Run stage A then stage B; see the module docstring."""
    obj = Objective(problem)
    cfg = problem.schedule
    if z0 is not None:
        z = np.array(z0, dtype=np.float64)
    elif cfg.warm_start_iters > 0:
        z = obj.least_squares_start(cfg.warm_start_iters, cfg.warm_start_ridge)
    else:
        z = np.zeros(obj.size)
    trace = []
    b0 = obj.evaluate(z, image_terms=False)
    trace.append({"iteration": 0, "stage": "A", **b0.asdict()})
    metric = obj.landmark_metric(z, cfg.warm_start_ridge) if cfg.precondition else None
    z, b, step = _descend(obj, z, cfg.stage_a_iters, cfg.step_size, False, trace, "A",
                          cfg.fd_step, cfg.max_halvings, problem.threads, metric)
    a_id, a_exp = obj.unpack(z)
    _, _, _, poses_a = obj.smooth_terms(z, with_grad=False)
    stage_a = {"alpha_id": a_id, "alpha_exp": a_exp, "poses": poses_a, "loss": b, "z": z.copy()}
    if cfg.stage_b_iters > 0:
        step_b = step
        if problem.weights.image_terms_active:
            # with every image weight at zero stage B is a plain continuation
            if cfg.precondition:
                metric = obj.landmark_metric(z, cfg.warm_start_ridge)
            if cfg.stage_b_step is not None:
                step_b = cfg.stage_b_step
        z, b, _ = _descend(obj, z, cfg.stage_b_iters, step_b, True, trace, "B",
                           cfg.fd_step, cfg.max_halvings, problem.threads, metric)
    a_id, a_exp = obj.unpack(z)
    _, _, _, poses = obj.smooth_terms(z, with_grad=False)
    final = obj.evaluate(z, image_terms=cfg.stage_b_iters > 0)
    return FitResult(a_id, a_exp, poses, trace, final, stage_a)


def with_schedule(problem: FitProblem, **changes) -> FitProblem:
    return replace(problem, schedule=replace(problem.schedule, **changes))


# -- pose-substitution study -------------------------------------------------

SUBSTITUTIONS = ("gt_identity", "gt_expression", "gt_pose")


@dataclass(frozen=True)
class StudyConfig:
    """Joint single-image baseline: pose is a gradient-descent variable here."""

    iters: int = 60
    fd_step: float = 1e-4
    step_size: float = 1e-4
    max_halvings: int = 20
    translation_unit: float = 10.0


def _baseline_pose(p, unit):
    return PoseTransform.compose(np.exp(p[0]), rodrigues(p[1:4]), p[4:7] * unit)


def _baseline_init(obj: Objective, obs: LandmarkObservation, unit):
    """Frontal pose matching the landmark centroid and spread of the mean face."""
    X = obj.mean_lm.reshape(-1, 3)
    c = obs.channels
    Y = obs.observed
    xc = X[:, :c] - X[:, :c].mean(axis=0)
    yc = Y - Y.mean(axis=0)
    f = np.sqrt((yc ** 2).sum() / (xc ** 2).sum())
    t = np.zeros(3)
    t[:c] = Y.mean(axis=0) - f * X[:, :c].mean(axis=0)
    return np.concatenate([[np.log(f)], np.zeros(3), t / unit])


def joint_baseline(model: FaceModel, obs: LandmarkObservation, weights=None,
                   config: StudyConfig | None = None):
    """Fit one frame with pose (log scale, rotation vector, translation) as
    free variables, by finite-difference gradient descent from a frontal start.

    Returns ``(alpha_id, alpha_exp, PoseTransform)``.
    """
    cfg = config or StudyConfig()
    w = weights or LossWeights()
    frame = Frame(np.zeros((1, 1)), obs)
    obj = Objective(FitProblem(model, [frame], w, StageConfig(stage_b_iters=0)))
    k = obj.size
    unit = cfg.translation_unit
    c = obs.channels

    def loss(x):
        a_id, a_exp = obj.unpack(x[:k])
        T = _baseline_pose(x[k:], unit).T
        X = obj.landmarks(a_id, a_exp[0])
        pred = X @ T[:c, :3].T + T[:c, 3]
        L_l = w.lambda_l * float(np.abs(pred - obs.observed).sum())
        L_r = w.lambda_r * (float(np.abs(x[:obj.kid]).sum())
                            + 0.5 * float(np.abs(x[obj.kid:k]).sum()))
        return L_l + L_r

    x = np.concatenate([np.zeros(k), _baseline_init(obj, obs, unit)])
    f0 = loss(x)
    step = cfg.step_size
    for _ in range(cfg.iters):
        g = gradient(loss, x, cfg.fd_step)
        t = step
        for _ in range(cfg.max_halvings + 1):
            xn = x - t * g
            fn = loss(xn)
            if fn < f0:
                break
            t *= 0.5
        else:
            break
        x, f0, step = xn, fn, 2.0 * t
    a_id, a_exp = obj.unpack(x[:k])
    return a_id, a_exp[0], _baseline_pose(x[k:], unit)


@dataclass
class StudyRow:
    scene: int
    frame: int
    yaw: float
    baseline: float
    gt_identity: float
    gt_expression: float
    gt_pose: float

    def reduction(self, name) -> float:
        return self.baseline - getattr(self, name)


def _posed_error(model, a_id, a_exp, pose, gt_posed, norm):
    shape = (model.mean_shape + model.id_basis @ a_id + model.exp_basis @ a_exp).reshape(-1, 3)
    return nme_3d(pose.apply(shape), gt_posed, norm)


def substitute_study(problem: FitProblem, ground_truth, config: StudyConfig | None = None,
                     scene_index: int = 0):
    """Per-frame errors of the joint baseline and of its three substitutions.

    ``ground_truth`` provides ``alpha_id``, ``alpha_exp``, ``poses``, ``yaws``
    and ``shapes`` (one entry per frame, as in a synthetic scene). Errors are
    the camera-space vertex NME of the posed mesh, normalised by the
    ground-truth outer interocular distance.
    """
    m = problem.model
    rows = []
    for k, fr in enumerate(problem.frames):
        a_id, a_exp, pose = joint_baseline(m, fr.landmarks, problem.weights, config)
        gt_pose = ground_truth.poses[k]
        gt_posed = gt_pose.apply(ground_truth.shapes[k])
        norm = outer_interocular(gt_posed[m.landmark_indices])
        gid, gexp = ground_truth.alpha_id, ground_truth.alpha_exp[k]
        rows.append(StudyRow(
            scene=scene_index, frame=k, yaw=float(ground_truth.yaws[k]),
            baseline=_posed_error(m, a_id, a_exp, pose, gt_posed, norm),
            gt_identity=_posed_error(m, gid, a_exp, pose, gt_posed, norm),
            gt_expression=_posed_error(m, a_id, gexp, pose, gt_posed, norm),
            gt_pose=_posed_error(m, a_id, a_exp, gt_pose, gt_posed, norm),
        ))
    return rows


@dataclass
class StudyTable:
    rows: list

    def buckets(self, name):
        """Per-|yaw|-bucket mean error of ``name`` (a row field)."""
        rep = ErrorReport([getattr(r, name) for r in self.rows], [r.yaw for r in self.rows], name)
        return {lab: v[0] for lab, v in rep.buckets().items()}

    def reductions(self, name):
        base = self.buckets("baseline")
        sub = self.buckets(name)
        return {lab: base[lab] - sub[lab] for lab in base}

    def mean_reduction(self, name) -> float:
        return float(np.mean([r.reduction(name) for r in self.rows]))

    def reduction_text(self) -> str:
        """Substitution x yaw-bucket table of mean error reduction vs the baseline."""
        lines = [f"{'reduction':<16}" + "".join(f"{b:>12}" for b in BUCKET_LABELS) + f"{'mean':>12}"]
        for name in SUBSTITUTIONS:
            vals = self.reductions(name)
            lines.append(f"{name:<16}" + "".join(f"{vals[b]:>12.4f}" for b in BUCKET_LABELS)
                         + f"{self.mean_reduction(name):>12.4f}")
        return "\n".join(lines)

    def text(self) -> str:
        lines = [f"{'variant':<16}" + "".join(f"{b:>12}" for b in BUCKET_LABELS) + f"{'mean':>12}"]
        for name in ("baseline",) + SUBSTITUTIONS:
            vals = self.buckets(name)
            mean = float(np.mean([getattr(r, name) for r in self.rows]))
            lines.append(f"{name:<16}" + "".join(f"{vals[b]:>12.4f}" for b in BUCKET_LABELS)
                         + f"{mean:>12.4f}")
        return "\n".join(lines)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scene", "frame", "yaw", "baseline", *SUBSTITUTIONS])
            for r in self.rows:
                w.writerow([r.scene, r.frame, repr(r.yaw), repr(r.baseline),
                            repr(r.gt_identity), repr(r.gt_expression), repr(r.gt_pose)])
