"""
Training objectives: reconstruction, kinematic auxiliaries, their weighted
sum, the noise-prediction kernel and the symmetric contrastive loss.

Every loss takes arrays or tensors and returns a scalar Tensor so callers can
backpropagate through it.
"""
from typing import Union

import numpy as np

from . import gradkernels as gk
from .errors import BadBatch, ShapeMismatch, TauNonPositive, TooShort
from .gradkernels import Tensor
from .models import NUM_CONTACTS, POSE_DIM, LossWeights, SkeletonModel
from .posemath import CONTACT_JOINTS, forward_kinematics_tensor

ArrayOrTensor = Union[np.ndarray, Tensor]


def _same_shape(a: Tensor, b: Tensor, name: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"{name}: {a.shape} vs {b.shape}")


def _joints(skel: SkeletonModel, x: Tensor) -> Tensor:
    """FK over any leading dims: (..., N, 151) -> (..., N, J, 3)."""
    if x.shape[-1] != POSE_DIM:
        raise ShapeMismatch(f"Expected {POSE_DIM}-dim poses, got {x.shape}")
    lead = x.shape[:-1]
    flat = gk.reshape(x, (int(np.prod(lead)), POSE_DIM))
    joints = forward_kinematics_tensor(skel, flat)
    return gk.reshape(joints, lead + (skel.num_joints, 3))


def _frame_diff(x: Tensor) -> Tensor:
    n = x.shape[-2] if x.ndim >= 2 else 0
    if n < 2:
        raise TooShort(f"Need at least 2 frames, got {n}")
    return x[..., 1:, :] - x[..., :-1, :]


def l_basic(x_true: ArrayOrTensor, x_pred: ArrayOrTensor) -> Tensor:
    x_true, x_pred = gk.as_tensor(x_true), gk.as_tensor(x_pred)
    _same_shape(x_true, x_pred, "l_basic")
    return gk.mse(x_pred, x_true)


def l_vg(eps_true: ArrayOrTensor, eps_pred: ArrayOrTensor) -> Tensor:
    eps_true, eps_pred = gk.as_tensor(eps_true), gk.as_tensor(eps_pred)
    _same_shape(eps_true, eps_pred, "l_vg")
    return gk.mse(eps_pred, eps_true)


def l_joint(x_true: ArrayOrTensor, x_pred: ArrayOrTensor, skel: SkeletonModel) -> Tensor:
    """Squared joint-position error summed over joints, averaged over frames."""
    x_true, x_pred = gk.as_tensor(x_true), gk.as_tensor(x_pred)
    _same_shape(x_true, x_pred, "l_joint")
    diff = _joints(skel, x_true) - _joints(skel, x_pred)
    frames = int(np.prod(x_pred.shape[:-1]))
    return gk.tsum(gk.square(diff)) * (1.0 / frames)


def l_vel(x_true: ArrayOrTensor, x_pred: ArrayOrTensor) -> Tensor:
    x_true, x_pred = gk.as_tensor(x_true), gk.as_tensor(x_pred)
    _same_shape(x_true, x_pred, "l_vel")
    diff = _frame_diff(x_true) - _frame_diff(x_pred)
    pairs = int(np.prod(diff.shape[:-1]))
    return gk.tsum(gk.square(diff)) * (1.0 / pairs)


def l_foot(x_pred: ArrayOrTensor, skel: SkeletonModel) -> Tensor:
    """Foot displacement gated by the predicted contact channel of the earlier frame."""
    x_pred = gk.as_tensor(x_pred)
    if x_pred.ndim < 2 or x_pred.shape[-2] < 2:
        raise TooShort(f"Need at least 2 frames, got shape {x_pred.shape}")
    feet = _joints(skel, x_pred)[..., CONTACT_JOINTS, :]
    step = feet[..., 1:, :, :] - feet[..., :-1, :, :]
    b_hat = x_pred[..., :-1, :NUM_CONTACTS]
    gated = step * gk.reshape(b_hat, b_hat.shape + (1,))
    pairs = int(np.prod(step.shape[:-2]))
    return gk.tsum(gk.square(gated)) * (1.0 / pairs)


def l_ac(
    x_true: ArrayOrTensor,
    x_pred: ArrayOrTensor,
    skel: SkeletonModel,
    w: LossWeights,
) -> Tensor:
    """L_basic plus the weighted auxiliary losses; zero-weight terms are not evaluated."""
    total = l_basic(x_true, x_pred)
    if w.lambda_pos:
        total = total + w.lambda_pos * l_joint(x_true, x_pred, skel)
    if w.lambda_vel:
        total = total + w.lambda_vel * l_vel(x_true, x_pred)
    if w.lambda_foot:
        total = total + w.lambda_foot * l_foot(x_pred, skel)
    return total


def contrastive_loss(
    Em: ArrayOrTensor,
    Ed: ArrayOrTensor,
    tau: Union[float, Tensor],
) -> Tensor:
    """Symmetric InfoNCE: -(1/2N) sum of matched log-probabilities in both directions."""
    Em, Ed = gk.as_tensor(Em), gk.as_tensor(Ed)
    if Em.ndim != 2 or Em.shape[0] == 0:
        raise BadBatch(f"Empty or malformed batch: {Em.shape}")
    if Em.shape != Ed.shape:
        raise BadBatch(f"Music batch {Em.shape} vs dance batch {Ed.shape}")
    tau = gk.as_tensor(tau)
    if np.any(tau.data <= 0):
        raise TauNonPositive(f"Temperature must be positive, got {tau.data}")
    n = Em.shape[0]
    logits = gk.matmul(Em, gk.transpose(Ed)) / tau
    diag = (np.arange(n), np.arange(n))
    music_to_dance = gk.log_softmax(logits, axis=1)[diag]
    dance_to_music = gk.log_softmax(logits, axis=0)[diag]
    return -(gk.tsum(music_to_dance) + gk.tsum(dance_to_music)) * (1.0 / (2 * n))
