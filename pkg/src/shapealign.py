"""
Silhouette and keypoint alignment of a capsule body.

Each bone is a capsule whose length and girth are scaled by grouped shape
multipliers. Projection is orthographic: u = s*x + ox, v = -s*y + oy. A hard
raster is used for reported losses and a sigmoid-edge raster for gradients.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from . import gradkernels as gk
from .config import AlignConfig
from .errors import DegenerateRotation, Diverged, InsufficientKeypoints, ShapeMismatch
from .gradkernels import Tensor
from .models import NUM_CONTACTS, BodyParams, Keypoints2D, PoseVector, Silhouette, SkeletonModel
from .posemath import IDENTITY_6D, chain_positions, default_skeleton, rot6d_to_matrix_tensor

logger = logging.getLogger(__name__)

NUM_BETAS = 10
BETA_MIN = 0.2
BETA_MAX = 5.0
MIN_KEYPOINTS = 4

# shape group of the bone ending at each joint:
# 0 torso, 1 upper legs, 2 lower legs, 3 upper arms, 4 lower arms
BONE_GROUPS = {
    1: 0, 2: 0, 3: 0, 6: 0, 9: 0, 12: 0, 13: 0, 14: 0, 15: 0, 16: 0, 17: 0,
    4: 1, 5: 1,
    7: 2, 8: 2, 10: 2, 11: 2,
    18: 3, 19: 3,
    20: 4, 21: 4, 22: 4, 23: 4,
}


def bone_groups(num_joints: int) -> np.ndarray:
    return np.array([BONE_GROUPS.get(j, 0) for j in range(num_joints)])


def default_params(skel: SkeletonModel, cfg: Optional[AlignConfig] = None) -> BodyParams:
    cfg = cfg or AlignConfig()
    return BodyParams(
        beta=np.ones(NUM_BETAS),
        rots=np.tile(IDENTITY_6D, (skel.num_joints, 1)),
        root_t=np.zeros(3),
        cam_scale=cfg.pixels_per_meter,
        cam_offset=np.array([cfg.raster_size / 2.0, cfg.raster_size / 2.0]),
    )


@dataclass
class _Vars:
    beta: Tensor
    rots: Tensor
    root_t: Tensor


def _vars(params: BodyParams, requires_grad: bool = False) -> _Vars:
    return _Vars(
        beta=Tensor(np.asarray(params.beta, dtype=np.float64).copy(), requires_grad=requires_grad),
        rots=Tensor(np.asarray(params.rots, dtype=np.float64).copy(), requires_grad=requires_grad),
        root_t=Tensor(np.asarray(params.root_t, dtype=np.float64).copy(), requires_grad=requires_grad),
    )


def _joints(v: _Vars, skel: SkeletonModel) -> Tensor:
    if v.rots.shape != (skel.num_joints, 6) or v.beta.shape != (NUM_BETAS,):
        raise ShapeMismatch(f"Body params beta {v.beta.shape}, rots {v.rots.shape} for {skel.num_joints} joints")
    local = gk.reshape(rot6d_to_matrix_tensor(v.rots), (1, skel.num_joints, 3, 3))
    lengths = v.beta[bone_groups(skel.num_joints)]
    offsets = gk.as_tensor(skel.offsets) * gk.reshape(lengths, (skel.num_joints, 1))
    root = gk.reshape(v.root_t, (1, 3))
    return gk.reshape(chain_positions(skel.parents, local, root, offsets), (skel.num_joints, 3))


def _project(joints: Tensor, params: BodyParams) -> Tensor:
    s = float(params.cam_scale)
    ox, oy = float(params.cam_offset[0]), float(params.cam_offset[1])
    return gk.concat([joints[:, 0:1] * s + ox, joints[:, 1:2] * (-s) + oy], axis=1)


def project_keypoints(params: BodyParams, skel: SkeletonModel) -> np.ndarray:
    """Image coordinates (J, 2) of every joint."""
    return _project(_joints(_vars(params), skel), params).data


def _radii(v: _Vars, params: BodyParams, skel: SkeletonModel, cfg: AlignConfig) -> Tensor:
    girth = v.beta[5 + bone_groups(skel.num_joints)[1:]]
    return girth * (cfg.base_radius * float(params.cam_scale))


def _pixel_grid(cfg: AlignConfig) -> np.ndarray:
    rows, cols = np.mgrid[0:cfg.raster_size, 0:cfg.raster_size]
    return np.stack([cols.reshape(-1) + 0.5, rows.reshape(-1) + 0.5], axis=1)


def _bone_distances(uv: Tensor, skel: SkeletonModel, pixels: np.ndarray) -> Tensor:
    """Distance (bones, pixels) from each pixel centre to each projected bone segment."""
    children = np.arange(1, skel.num_joints)
    parents = np.array(skel.parents[1:])
    a = uv[parents]
    ab = uv[children] - a
    ap = gk.reshape(a, (len(children), 1, 2)) * -1.0 + pixels[None, :, :]
    ab3 = gk.reshape(ab, (len(children), 1, 2))
    denom = gk.tsum(ab * ab, axis=1, keepdims=True) + 1e-12
    t = gk.clip(gk.tsum(ap * ab3, axis=2) / denom, 0.0, 1.0)
    nearest = gk.reshape(t, t.shape + (1,)) * ab3
    return gk.sqrt(gk.tsum(gk.square(ap - nearest), axis=2) + 1e-12)


def _render(v: _Vars, params: BodyParams, skel: SkeletonModel, cfg: AlignConfig, soft: bool):
    uv = _project(_joints(v, skel), params)
    dist = _bone_distances(uv, skel, _pixel_grid(cfg))
    radii = gk.reshape(_radii(v, params, skel, cfg), (skel.num_joints - 1, 1))
    if not soft:
        inside = np.any(dist.data < radii.data, axis=0)
        return inside.reshape(cfg.raster_size, cfg.raster_size).astype(np.float64)
    z = (radii - dist) * (1.0 / cfg.soft_temperature)
    # 1 - prod(1 - sigmoid(z)) = 1 - exp(-sum softplus(z))
    coverage = 1.0 - gk.exp(-gk.tsum(gk.softplus(z), axis=0))
    return gk.reshape(coverage, (cfg.raster_size, cfg.raster_size))


def render_silhouette(params: BodyParams, skel: SkeletonModel,
                      cfg: Optional[AlignConfig] = None) -> Silhouette:
    cfg = cfg or AlignConfig()
    return Silhouette(pixels=_render(_vars(params), params, skel, cfg, soft=False))


def render_soft(params: BodyParams, skel: SkeletonModel, cfg: Optional[AlignConfig] = None) -> np.ndarray:
    cfg = cfg or AlignConfig()
    return _render(_vars(params), params, skel, cfg, soft=True).data


def silhouette_difference(a: Silhouette, b: Silhouette) -> float:
    if a.pixels.shape != b.pixels.shape:
        raise ShapeMismatch(f"Silhouettes {a.pixels.shape} vs {b.pixels.shape}")
    return float(np.sum((a.pixels - b.pixels) ** 2))


def silhouette_loss(params: BodyParams, S_ref: Silhouette, skel: SkeletonModel,
                    cfg: Optional[AlignConfig] = None) -> float:
    """Summed squared pixel difference against the hard raster."""
    return silhouette_difference(render_silhouette(params, skel, cfg), S_ref)


def soft_silhouette_loss_tensor(v: _Vars, params: BodyParams, S_ref: Silhouette,
                                skel: SkeletonModel, cfg: AlignConfig) -> Tensor:
    soft = _render(v, params, skel, cfg, soft=True)
    if soft.shape != S_ref.pixels.shape:
        raise ShapeMismatch(f"Raster {soft.shape} vs reference {S_ref.pixels.shape}")
    return gk.tsum(gk.square(soft - S_ref.pixels))


def _keypoint_loss_tensor(v: _Vars, params: BodyParams, kp: Keypoints2D, skel: SkeletonModel) -> Tensor:
    uv = _project(_joints(v, skel), params)
    valid = np.asarray(kp.valid, dtype=np.float64).reshape(-1, 1)
    target = np.where(valid > 0, np.asarray(kp.points, dtype=np.float64), 0.0)
    return gk.tsum(gk.square(uv - target) * valid)


def keypoint_loss(params: BodyParams, kp: Keypoints2D, skel: SkeletonModel) -> float:
    return _keypoint_loss_tensor(_vars(params), params, kp, skel).item()


def _with(params: BodyParams, beta=None, rots=None, root_t=None) -> BodyParams:
    out = params.copy()
    if beta is not None:
        out.beta = np.clip(beta, BETA_MIN, BETA_MAX)
    if rots is not None:
        out.rots = rots
    if root_t is not None:
        out.root_t = root_t
    return out


@dataclass
class AlignmentResult:
    params: BodyParams
    objective: float
    initial_objective: float
    history: List[float] = field(default_factory=list)
    iterations: int = 0


class ShapeAligner:
    """Two-stage fit of body parameters to keypoints and a silhouette.

    Stage one runs gradient descent with backtracking on the soft objective.
    When keypoints are given it fits pose, root and bone lengths to them alone.
    Stage two re-fits the girth multipliers, which only the silhouette
    constrains, by exact coordinate minimisation of the hard raster loss with
    the skeleton held fixed.
    """

    def __init__(self, skel: SkeletonModel, cfg: Optional[AlignConfig] = None):
        self.skel = skel
        self.cfg = cfg or AlignConfig()
        self.history: List[float] = []

    def hard_objective(self, params: BodyParams, S_ref: Optional[Silhouette],
                       kp: Optional[Keypoints2D], lambda_kpt: float, lambda_sil: float) -> float:
        total = 0.0
        if kp is not None and lambda_kpt:
            total += lambda_kpt * keypoint_loss(params, kp, self.skel)
        if S_ref is not None and lambda_sil:
            total += lambda_sil * silhouette_loss(params, S_ref, self.skel, self.cfg)
        return total

    def _soft(self, params: BodyParams, S_ref, kp, lambda_kpt, lambda_sil,
              optimize_shape: bool, need_grad: bool) -> Tuple[float, Optional[_Vars]]:
        v = _vars(params, requires_grad=need_grad)
        if not optimize_shape:
            v.beta.requires_grad = False
        total = gk.Tensor(0.0)
        if kp is not None and lambda_kpt:
            total = total + lambda_kpt * _keypoint_loss_tensor(v, params, kp, self.skel)
        if S_ref is not None and lambda_sil:
            total = total + lambda_sil * soft_silhouette_loss_tensor(v, params, S_ref, self.skel, self.cfg)
        if need_grad and total.requires_grad:
            total.backward()
        return total.item(), v

    def _descend(self, params: BodyParams, S_ref, kp, lambda_kpt: float, lambda_sil: float,
                 iters: int, optimize_shape: bool) -> Tuple[BodyParams, int]:
        cfg = self.cfg
        prev_obj = self.hard_objective(params, S_ref, kp, lambda_kpt, lambda_sil)
        best, best_obj = params, prev_obj
        step = cfg.step_size
        increases = 0
        iteration = 0
        for iteration in range(1, iters + 1):
            if best_obj == 0.0:
                break
            value, v = self._soft(params, S_ref, kp, lambda_kpt, lambda_sil, optimize_shape, True)
            grads = [
                v.beta.grad if optimize_shape and v.beta.grad is not None else np.zeros(NUM_BETAS),
                v.rots.grad if v.rots.grad is not None else np.zeros_like(params.rots),
                v.root_t.grad if v.root_t.grad is not None else np.zeros(3),
            ]
            g_norm2 = sum(float(np.sum(g * g)) for g in grads)
            if g_norm2 == 0.0:
                break
            accepted = False
            while step > 1e-12:
                candidate = _with(
                    params,
                    beta=params.beta - step * grads[0],
                    rots=params.rots - step * grads[1],
                    root_t=params.root_t - step * grads[2],
                )
                try:
                    trial, _ = self._soft(candidate, S_ref, kp, lambda_kpt, lambda_sil, optimize_shape, False)
                except DegenerateRotation:
                    trial = np.inf
                if trial <= value - 1e-4 * step * g_norm2:
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                logger.debug("line search stalled at iteration %d", iteration)
                break
            params = candidate
            step *= 2.0
            obj = self.hard_objective(params, S_ref, kp, lambda_kpt, lambda_sil)
            self.history.append(obj)
            increases = increases + 1 if obj > prev_obj else 0
            if increases >= cfg.patience:
                raise Diverged(f"Objective increased for {increases} consecutive iterations")
            prev_obj = obj
            if obj < best_obj:
                best, best_obj = params, obj
        return best, iteration

    def refine_girth(self, params: BodyParams, S_ref: Silhouette, sweeps: int = 4) -> BodyParams:
        """Coordinate minimisation of the hard silhouette loss over the girth multipliers.

        Each pixel outside the other groups' capsules switches on at a single
        girth threshold, so the loss along one coordinate is piecewise constant
        and its minimum is found exactly. The midpoint of the minimising
        interval nearest the current value is taken.
        """
        cfg = self.cfg
        uv = project_keypoints(params, self.skel)
        dist = _bone_distances(gk.as_tensor(uv), self.skel, _pixel_grid(cfg)).data
        ref = np.asarray(S_ref.pixels, dtype=np.float64).reshape(-1)
        if ref.shape[0] != dist.shape[1]:
            raise ShapeMismatch(f"Raster {cfg.raster_size}x{cfg.raster_size} vs reference {S_ref.pixels.shape}")
        groups = bone_groups(self.skel.num_joints)[1:]
        unit = cfg.base_radius * float(params.cam_scale)
        beta = params.beta.copy()
        present = [g for g in range(NUM_BETAS - 5) if np.any(groups == g)]
        for _ in range(sweeps):
            changed = False
            for g in present:
                radii = beta[5 + groups] * unit
                others = np.any(dist[groups != g] < radii[groups != g][:, None], axis=0)
                thresholds = np.min(dist[groups == g], axis=0) / unit
                free = ~others
                new = _best_threshold(thresholds[free], ref[free], beta[5 + g])
                if new != beta[5 + g]:
                    beta[5 + g] = new
                    changed = True
            if not changed:
                break
        return _with(params, beta=beta)

    def align(
        self,
        params0: BodyParams,
        S_ref: Optional[Silhouette],
        kp: Optional[Keypoints2D],
        lambda_kpt: Optional[float] = None,
        lambda_sil: Optional[float] = None,
        iters: Optional[int] = None,
        optimize_shape: bool = True,
    ) -> AlignmentResult:
        cfg = self.cfg
        lambda_kpt = cfg.lambda_kpt if lambda_kpt is None else lambda_kpt
        lambda_sil = cfg.lambda_sil if lambda_sil is None else lambda_sil
        iters = cfg.iters if iters is None else iters
        has_kp = kp is not None and kp.num_valid >= MIN_KEYPOINTS
        has_sil = S_ref is not None and S_ref.area > 0
        if not (has_kp or has_sil):
            raise InsufficientKeypoints(
                f"Need at least {MIN_KEYPOINTS} valid keypoints or a non-empty silhouette"
            )

        params = params0.copy()
        params.beta = np.clip(params.beta, BETA_MIN, BETA_MAX)
        initial = self.hard_objective(params, S_ref, kp, lambda_kpt, lambda_sil)
        self.history = [initial]
        if initial == 0.0:
            return AlignmentResult(params0.copy(), initial, initial, list(self.history), 0)

        use_kp = has_kp and lambda_kpt > 0
        use_sil = has_sil and lambda_sil > 0
        stage_sil = 0.0 if use_kp else lambda_sil
        fitted, iterations = self._descend(params, S_ref, kp, lambda_kpt, stage_sil, iters, optimize_shape)
        if use_sil and optimize_shape:
            fitted = self.refine_girth(fitted, S_ref)

        best, best_obj = params, initial
        final = self.hard_objective(fitted, S_ref, kp, lambda_kpt, lambda_sil)
        self.history.append(final)
        if final <= best_obj:
            best, best_obj = fitted, final
        logger.info("alignment finished after %d iterations: objective %.4f -> %.4f",
                    iterations, initial, best_obj)
        return AlignmentResult(best.copy(), best_obj, initial, list(self.history), iterations)


def _best_threshold(thresholds: np.ndarray, ref: np.ndarray, current: float) -> float:
    """Minimiser of sum((1[t < b] - ref)^2) over b in the allowed girth range."""
    if thresholds.size == 0:
        return current
    lo = max(BETA_MIN, 0.5 * current)
    hi = min(BETA_MAX, 1.5 * current)
    order = np.argsort(thresholds, kind="stable")
    t = thresholds[order]
    on_cost = (1.0 - ref[order]) ** 2
    off_cost = ref[order] ** 2
    # cost[k]: b lies in (t[k-1], t[k]], pixels 0..k-1 on
    cost = np.concatenate([[0.0], np.cumsum(on_cost)]) + np.concatenate([np.cumsum(off_cost[::-1])[::-1], [0.0]])
    edges = np.concatenate([[-np.inf], t, [np.inf]])
    left = np.maximum(edges[:-1], lo)
    right = np.minimum(edges[1:], hi)
    usable = left < right
    if not np.any(usable):
        return current
    cost = np.where(usable, cost, np.inf)
    best = np.flatnonzero(cost == cost.min())
    mids = 0.5 * (left[best] + right[best])
    inside = (current > left[best]) & (current <= right[best])
    if np.any(inside):
        return float(mids[np.argmax(inside)])
    return float(mids[np.argmin(np.abs(mids - current))])


def align(
    params0: BodyParams,
    S_ref: Optional[Silhouette],
    p: Optional[Keypoints2D],
    lambda_kpt: float = 1.0,
    lambda_sil: float = 1e-3,
    iters: int = 200,
    skel: Optional[SkeletonModel] = None,
    cfg: Optional[AlignConfig] = None,
) -> BodyParams:
    aligner = ShapeAligner(skel or default_skeleton(), cfg)
    return aligner.align(params0, S_ref, p, lambda_kpt, lambda_sil, iters).params


def fit_keypoints(
    kp: Keypoints2D,
    skel: SkeletonModel,
    cfg: Optional[AlignConfig] = None,
    init: Optional[BodyParams] = None,
) -> PoseVector:
    """Pose-only fit of joint rotations and root translation to 2D keypoints."""
    cfg = cfg or AlignConfig()
    if kp.num_valid < MIN_KEYPOINTS:
        raise InsufficientKeypoints(f"Need at least {MIN_KEYPOINTS} valid keypoints, got {kp.num_valid}")
    params0 = init or default_params(skel, cfg)
    result = ShapeAligner(skel, cfg).align(params0, None, kp, lambda_kpt=1.0, lambda_sil=0.0,
                                           iters=max(cfg.iters, 500), optimize_shape=False)
    return PoseVector(
        contacts=np.zeros(NUM_CONTACTS),
        rots=result.params.rots.copy(),
        root_t=result.params.root_t.copy(),
    )
