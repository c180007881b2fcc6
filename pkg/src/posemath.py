"""
Rotation representations, the 24-joint skeleton, the 151-dim pose layout and
forward kinematics.

The 6D rotation is the first two columns of a rotation matrix, column-major.
Recovery orthonormalises the second column against the first (Gram-Schmidt)
and completes the frame with a cross product.
"""
import logging
from typing import Optional, Tuple, Union

import numpy as np
from scipy.spatial.transform import Rotation

from . import gradkernels as gk
from .errors import BadLength, DegenerateRotation, NotARotation
from .gradkernels import Tensor
from .models import (
    NUM_CONTACTS, NUM_JOINTS, POSE_DIM, ROOT_OFFSET, ROT6D_DIM,
    PoseVector, SkeletonModel,
)

logger = logging.getLogger(__name__)

DEGENERATE_EPS = 1e-9
ORTHO_TOL = 1e-4

JOINT_NAMES = [
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee",
    "spine2", "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot",
    "neck", "left_collar", "right_collar", "head", "left_shoulder",
    "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist",
    "left_hand", "right_hand",
]

SMPL_PARENTS = [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21]

# Rest offsets in parent-local space (meters).
REST_OFFSETS = np.array([
    [0.000, 0.000, 0.000],    # pelvis
    [-0.090, 0.000, 0.000],   # left_hip
    [0.090, 0.000, 0.000],    # right_hip
    [0.000, 0.100, 0.000],    # spine1
    [0.000, -0.420, 0.000],   # left_knee
    [0.000, -0.420, 0.000],   # right_knee
    [0.000, 0.100, 0.000],    # spine2
    [0.000, -0.420, 0.000],   # left_ankle
    [0.000, -0.420, 0.000],   # right_ankle
    [0.000, 0.100, 0.000],    # spine3
    [0.000, -0.050, 0.080],   # left_foot
    [0.000, -0.050, 0.080],   # right_foot
    [0.000, 0.120, 0.000],    # neck
    [-0.080, 0.000, 0.000],   # left_collar
    [0.080, 0.000, 0.000],    # right_collar
    [0.000, 0.100, 0.000],    # head
    [-0.150, 0.000, 0.000],   # left_shoulder
    [0.150, 0.000, 0.000],    # right_shoulder
    [-0.300, 0.000, 0.000],   # left_elbow
    [0.300, 0.000, 0.000],    # right_elbow
    [-0.250, 0.000, 0.000],   # left_wrist
    [0.250, 0.000, 0.000],    # right_wrist
    [-0.080, 0.000, 0.000],   # left_hand
    [0.080, 0.000, 0.000],    # right_hand
])

# left heel, right heel, left toe, right toe
CONTACT_JOINTS = [7, 8, 10, 11]

IDENTITY_6D = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


def default_skeleton() -> SkeletonModel:
    return SkeletonModel(parents=list(SMPL_PARENTS), offsets=REST_OFFSETS.copy())


def validate_skeleton(skel: SkeletonModel) -> None:
    """Check the tree has one root and parents precede children."""
    parents = skel.parents
    if sum(1 for p in parents if p < 0) != 1 or parents[0] >= 0:
        raise ValueError("Skeleton must have exactly one root at index 0")
    for child, parent in enumerate(parents[1:], start=1):
        if not 0 <= parent < child:
            raise ValueError(f"Joint {child} has parent {parent}; parents must precede children")
    if np.asarray(skel.offsets).shape != (len(parents), 3):
        raise ValueError(f"Offsets shape {np.asarray(skel.offsets).shape} for {len(parents)} joints")


def rot_block_index(joint: int) -> int:
    """Start index of a joint's 6D block in the pose vector."""
    if not 0 <= joint < NUM_JOINTS:
        raise ValueError(f"Unknown joint index: {joint}")
    return NUM_CONTACTS + ROT6D_DIM * joint


def rot6d_to_matrix(r: np.ndarray) -> np.ndarray:
    """Gram-Schmidt recovery of (..., 3, 3) rotations from (..., 6) inputs."""
    r = np.asarray(r, dtype=np.float64)
    if r.shape[-1] != 6:
        raise BadLength(f"6D rotation needs 6 values, got shape {r.shape}")
    a1, a2 = r[..., 0:3], r[..., 3:6]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    if np.any(n1 < DEGENERATE_EPS):
        raise DegenerateRotation("First column of 6D rotation is zero")
    b1 = a1 / n1
    u = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    nu = np.linalg.norm(u, axis=-1, keepdims=True)
    if np.any(nu < DEGENERATE_EPS):
        raise DegenerateRotation("Columns of 6D rotation are parallel or zero")
    b2 = u / nu
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def matrix_to_rot6d(R: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    if R.shape[-2:] != (3, 3):
        raise NotARotation(f"Expected 3x3 matrices, got shape {R.shape}")
    gram = np.swapaxes(R, -1, -2) @ R
    if np.max(np.abs(gram - np.eye(3))) > ORTHO_TOL:
        raise NotARotation("Matrix is not orthonormal within 1e-4")
    if np.any(np.linalg.det(R) < 0):
        raise NotARotation("Matrix is a reflection")
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def pose_pack(pose: PoseVector) -> np.ndarray:
    contacts = np.asarray(pose.contacts, dtype=np.float64).reshape(-1)
    rots = np.asarray(pose.rots, dtype=np.float64).reshape(-1)
    root_t = np.asarray(pose.root_t, dtype=np.float64).reshape(-1)
    if contacts.size != NUM_CONTACTS or rots.size != NUM_JOINTS * ROT6D_DIM or root_t.size != 3:
        raise BadLength(
            f"Pose fields have sizes {contacts.size}/{rots.size}/{root_t.size}, "
            f"expected {NUM_CONTACTS}/{NUM_JOINTS * ROT6D_DIM}/3"
        )
    return np.concatenate([contacts, rots, root_t])


def pose_unpack(vec: np.ndarray) -> PoseVector:
    vec = np.asarray(vec, dtype=np.float64)
    if vec.ndim != 1 or vec.shape[0] != POSE_DIM:
        raise BadLength(f"Pose vector must have length {POSE_DIM}, got shape {vec.shape}")
    return PoseVector(
        contacts=vec[:NUM_CONTACTS].copy(),
        rots=vec[NUM_CONTACTS:ROOT_OFFSET].reshape(NUM_JOINTS, ROT6D_DIM).copy(),
        root_t=vec[ROOT_OFFSET:].copy(),
    )


def identity_pose(root_t: Optional[np.ndarray] = None) -> np.ndarray:
    vec = np.zeros(POSE_DIM)
    vec[NUM_CONTACTS:ROOT_OFFSET] = np.tile(IDENTITY_6D, NUM_JOINTS)
    if root_t is not None:
        vec[ROOT_OFFSET:] = root_t
    return vec


def _as_frames(pose: Union[PoseVector, np.ndarray]) -> np.ndarray:
    if isinstance(pose, PoseVector):
        return pose_pack(pose)[None, :]
    frames = np.asarray(pose, dtype=np.float64)
    if frames.shape[-1] != POSE_DIM:
        raise BadLength(f"Pose vector must have length {POSE_DIM}, got shape {frames.shape}")
    return frames.reshape(-1, POSE_DIM)


def forward_kinematics_batch(skel: SkeletonModel, frames: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Joint positions (N, J, 3) and global rotations (N, J, 3, 3)."""
    frames = _as_frames(frames)
    n = frames.shape[0]
    local = rot6d_to_matrix(frames[:, NUM_CONTACTS:ROOT_OFFSET].reshape(n, NUM_JOINTS, ROT6D_DIM))
    offsets = np.asarray(skel.offsets, dtype=np.float64)
    positions = np.zeros((n, skel.num_joints, 3))
    rotations = np.zeros((n, skel.num_joints, 3, 3))
    rotations[:, 0] = local[:, 0]
    positions[:, 0] = frames[:, ROOT_OFFSET:]
    for child in range(1, skel.num_joints):
        parent = skel.parents[child]
        rotations[:, child] = rotations[:, parent] @ local[:, child]
        positions[:, child] = positions[:, parent] + rotations[:, parent] @ offsets[child]
    return positions, rotations


def forward_kinematics(skel: SkeletonModel, pose: Union[PoseVector, np.ndarray]) -> np.ndarray:
    """Joint positions (24, 3) for a single pose."""
    positions, _ = forward_kinematics_batch(skel, _as_frames(pose)[:1])
    return positions[0]


def sequence_joints(skel: SkeletonModel, frames: np.ndarray) -> np.ndarray:
    return forward_kinematics_batch(skel, frames)[0]


# differentiable variants
def _cross(a: Tensor, b: Tensor) -> Tensor:
    ax, ay, az = a[..., 0:1], a[..., 1:2], a[..., 2:3]
    bx, by, bz = b[..., 0:1], b[..., 1:2], b[..., 2:3]
    return gk.concat([ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx], axis=-1)


def rot6d_to_matrix_tensor(r: Tensor) -> Tensor:
    r = gk.as_tensor(r)
    a1, a2 = r[..., 0:3], r[..., 3:6]
    n1 = gk.sqrt(gk.tsum(gk.square(a1), axis=-1, keepdims=True))
    if np.any(n1.data < DEGENERATE_EPS):
        raise DegenerateRotation("First column of 6D rotation is zero")
    b1 = a1 / n1
    u = a2 - gk.tsum(b1 * a2, axis=-1, keepdims=True) * b1
    nu = gk.sqrt(gk.tsum(gk.square(u), axis=-1, keepdims=True))
    if np.any(nu.data < DEGENERATE_EPS):
        raise DegenerateRotation("Columns of 6D rotation are parallel or zero")
    b2 = u / nu
    b3 = _cross(b1, b2)
    return gk.stack([b1, b2, b3], axis=-1)


def chain_positions(parents, local: Tensor, root: Tensor, offsets) -> Tensor:
    """Walk the tree: local (n, J, 3, 3), root (n, 3), offsets (J, 3) -> (n, J, 3)."""
    offsets = gk.as_tensor(offsets)
    n = local.shape[0]
    rotations = [local[:, 0]]
    positions = [root]
    for child in range(1, len(parents)):
        parent = parents[child]
        parent_rot = rotations[parent]
        rotations.append(gk.matmul(parent_rot, local[:, child]))
        step = gk.matmul(parent_rot, gk.reshape(offsets[child], (3, 1)))
        positions.append(positions[parent] + gk.reshape(step, (n, 3)))
    return gk.stack(positions, axis=1)


def forward_kinematics_tensor(skel: SkeletonModel, frames: Tensor) -> Tensor:
    """Differentiable FK: (N, 151) -> (N, J, 3)."""
    frames = gk.as_tensor(frames)
    if frames.ndim != 2 or frames.shape[1] != POSE_DIM:
        raise BadLength(f"Expected (N, {POSE_DIM}) frames, got {frames.shape}")
    n = frames.shape[0]
    rot6 = gk.reshape(frames[:, NUM_CONTACTS:ROOT_OFFSET], (n, NUM_JOINTS, ROT6D_DIM))
    local = rot6d_to_matrix_tensor(rot6)
    return chain_positions(skel.parents, local, frames[:, ROOT_OFFSET:], skel.offsets)


# SMPL axis-angle interchange
def axis_angle_to_matrix(aa: np.ndarray) -> np.ndarray:
    aa = np.asarray(aa, dtype=np.float64)
    return Rotation.from_rotvec(aa.reshape(-1, 3)).as_matrix().reshape(aa.shape[:-1] + (3, 3))


def matrix_to_axis_angle(R: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    return Rotation.from_matrix(R.reshape(-1, 3, 3)).as_rotvec().reshape(R.shape[:-2] + (3,))


def pose_to_smpl_params(frames: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(N, 151) poses -> (N, 72) axis-angle rotations and (N, 3) translations."""
    frames = _as_frames(frames)
    n = frames.shape[0]
    mats = rot6d_to_matrix(frames[:, NUM_CONTACTS:ROOT_OFFSET].reshape(n, NUM_JOINTS, ROT6D_DIM))
    return matrix_to_axis_angle(mats).reshape(n, NUM_JOINTS * 3), frames[:, ROOT_OFFSET:].copy()


def smpl_params_to_pose(
    poses: np.ndarray,
    trans: np.ndarray,
    contacts: Optional[np.ndarray] = None,
) -> np.ndarray:
    poses = np.asarray(poses, dtype=np.float64).reshape(-1, NUM_JOINTS * 3)
    trans = np.asarray(trans, dtype=np.float64).reshape(-1, 3)
    if poses.shape[0] != trans.shape[0]:
        raise BadLength(f"{poses.shape[0]} rotation frames vs {trans.shape[0]} translations")
    n = poses.shape[0]
    mats = axis_angle_to_matrix(poses.reshape(n, NUM_JOINTS, 3))
    out = np.zeros((n, POSE_DIM))
    out[:, NUM_CONTACTS:ROOT_OFFSET] = matrix_to_rot6d(mats).reshape(n, -1)
    out[:, ROOT_OFFSET:] = trans
    if contacts is not None:
        out[:, :NUM_CONTACTS] = contacts
    return out


def contact_labels_from_motion(
    skel: SkeletonModel,
    frames: np.ndarray,
    fps: int,
    speed_threshold: float = 0.3,
    height_threshold: float = 0.05,
) -> np.ndarray:
    """Heel/toe contact bits: slow and close to the lowest foot height."""
    joints = sequence_joints(skel, frames)[:, CONTACT_JOINTS]
    if joints.shape[0] < 2:
        return np.ones((joints.shape[0], NUM_CONTACTS))
    speed = np.linalg.norm(np.diff(joints, axis=0), axis=-1) * fps
    speed = np.concatenate([speed, speed[-1:]], axis=0)
    height = joints[..., 1] - joints[..., 1].min()
    return ((speed < speed_threshold) & (height < height_threshold)).astype(np.float64)
