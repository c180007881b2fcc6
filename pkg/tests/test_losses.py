"""
Tests for the training objectives.
"""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from src.errors import BadBatch, ShapeMismatch, TauNonPositive, TooShort
from src.gradkernels import gradcheck
from src.losses import contrastive_loss, l_ac, l_basic, l_foot, l_joint, l_vel, l_vg
from src.models import NUM_CONTACTS, ROOT_OFFSET, LossWeights
from src.posemath import default_skeleton, identity_pose, matrix_to_rot6d


def random_frames(n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    frames = np.tile(identity_pose(), (n, 1))
    for i in range(n):
        mats = Rotation.from_rotvec(rng.normal(scale=0.4, size=(24, 3))).as_matrix()
        frames[i, NUM_CONTACTS:ROOT_OFFSET] = matrix_to_rot6d(mats).reshape(-1)
    frames[:, :NUM_CONTACTS] = rng.uniform(0.1, 0.9, size=(n, NUM_CONTACTS))
    frames[:, ROOT_OFFSET:] = rng.normal(scale=0.2, size=(n, 3))
    return frames


class TestReconstructionLosses:
    """Test L_basic, L_VG, L_joint and L_vel values."""

    def setup_method(self):
        self.skel = default_skeleton()
        self.x = random_frames(4, 0)

    def test_identical_inputs_are_zero(self):
        assert l_basic(self.x, self.x).item() == 0.0
        assert l_vg(self.x, self.x).item() == 0.0
        assert l_joint(self.x, self.x, self.skel).item() == 0.0
        assert l_vel(self.x, self.x).item() == 0.0

    @given(c=st.floats(-10, 10))
    @settings(max_examples=20, deadline=None)
    def test_constant_offset_gives_square(self, c):
        """
        Property: x_true = 0 and x_pred = c everywhere gives c squared.
        """
        zeros = np.zeros((3, 151))
        assert np.isclose(l_basic(zeros, zeros + c).item(), c * c)
        assert np.isclose(l_vg(zeros, zeros + c).item(), c * c)

    def test_root_shift_moves_all_joints(self):
        """Shifting the root by (1,0,0) moves 24 joints by 1 each."""
        shifted = self.x.copy()
        shifted[:, ROOT_OFFSET] += 1.0
        assert np.isclose(l_joint(self.x, shifted, self.skel).item(), 24.0)

    def test_velocity_ignores_constant_offset(self):
        shifted = self.x + 0.7
        assert np.isclose(l_vel(self.x, shifted).item(), 0.0)

    def test_velocity_needs_two_frames(self):
        with pytest.raises(TooShort):
            l_vel(self.x[:1], self.x[:1])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            l_basic(self.x, self.x[:2])

    def test_batched_inputs(self):
        batch = np.stack([self.x, random_frames(4, 1)])
        assert l_joint(batch, batch, self.skel).item() == 0.0
        assert np.isfinite(l_foot(batch, self.skel).item())


class TestFootLoss:
    """Test the contact-gated foot sliding term."""

    def setup_method(self):
        self.skel = default_skeleton()

    def test_stationary_feet(self):
        frames = np.tile(identity_pose(), (5, 1))
        frames[:, :NUM_CONTACTS] = 1.0
        assert l_foot(frames, self.skel).item() == 0.0

    def test_no_contact_means_no_penalty(self):
        frames = random_frames(5, 2)
        frames[:, :NUM_CONTACTS] = 0.0
        assert l_foot(frames, self.skel).item() == 0.0

    def test_sliding_contact_is_penalised(self):
        frames = np.tile(identity_pose(), (3, 1))
        frames[:, :NUM_CONTACTS] = 1.0
        frames[:, ROOT_OFFSET] = [0.0, 0.1, 0.2]
        # 4 feet, 2 steps of 0.1 each, averaged over the 2 steps
        assert np.isclose(l_foot(frames, self.skel).item(), 4 * 0.01)


class TestCombinedLoss:
    """Test L_AC."""

    def setup_method(self):
        self.skel = default_skeleton()
        self.x = random_frames(4, 3)
        self.y = random_frames(4, 4)

    def test_zero_weights_reduce_to_basic(self):
        w = LossWeights(0.0, 0.0, 0.0)
        assert l_ac(self.x, self.y, self.skel, w).item() == l_basic(self.x, self.y).item()

    def test_identical_stationary_is_zero(self):
        frames = np.tile(identity_pose(), (4, 1))
        frames[:, :NUM_CONTACTS] = 1.0
        assert l_ac(frames, frames, self.skel, LossWeights()).item() == 0.0

    def test_weighted_sum(self):
        w = LossWeights(0.5, 2.0, 3.0)
        expected = (l_basic(self.x, self.y).item()
                    + 0.5 * l_joint(self.x, self.y, self.skel).item()
                    + 2.0 * l_vel(self.x, self.y).item()
                    + 3.0 * l_foot(self.y, self.skel).item())
        assert np.isclose(l_ac(self.x, self.y, self.skel, w).item(), expected)


class TestContrastiveLoss:
    """Test the symmetric contrastive objective."""

    def test_single_pair_is_zero(self):
        e = np.array([[0.6, 0.8]])
        assert np.isclose(contrastive_loss(e, e, 0.07).item(), 0.0)

    def test_identical_embeddings_give_log_two(self):
        e = np.tile([[1.0, 0.0]], (2, 1))
        assert np.isclose(contrastive_loss(e, e, 0.5).item(), np.log(2.0))

    def test_matched_pairs_beat_shuffled(self):
        rng = np.random.default_rng(5)
        e = rng.normal(size=(6, 8))
        e /= np.linalg.norm(e, axis=1, keepdims=True)
        matched = contrastive_loss(e, e, 0.1).item()
        shuffled = contrastive_loss(e, e[::-1], 0.1).item()
        assert matched < shuffled

    def test_contract_errors(self):
        e = np.eye(3)
        with pytest.raises(TauNonPositive):
            contrastive_loss(e, e, 0.0)
        with pytest.raises(BadBatch):
            contrastive_loss(e, e[:2], 0.1)
        with pytest.raises(BadBatch):
            contrastive_loss(np.zeros((0, 3)), np.zeros((0, 3)), 0.1)


class TestLossGradients:
    """Every loss against central finite differences."""

    def setup_method(self):
        self.skel = default_skeleton()
        self.x = random_frames(3, 6)
        self.y = random_frames(3, 7)

    def test_basic_and_vg(self):
        assert gradcheck(lambda p: l_basic(self.x, p), [self.y]) < 1e-4
        assert gradcheck(lambda p: l_vg(self.x, p), [self.y]) < 1e-4

    def test_joint(self):
        assert gradcheck(lambda p: l_joint(self.x, p, self.skel), [self.y]) < 1e-4

    def test_vel(self):
        assert gradcheck(lambda p: l_vel(self.x, p), [self.y]) < 1e-4

    def test_foot(self):
        assert gradcheck(lambda p: l_foot(p, self.skel), [self.y]) < 1e-4

    def test_combined(self):
        w = LossWeights(1.0, 1.0, 1.0)
        assert gradcheck(lambda p: l_ac(self.x, p, self.skel, w), [self.y]) < 1e-4

    def test_contrastive(self):
        rng = np.random.default_rng(8)
        em, ed = rng.normal(size=(4, 5)), rng.normal(size=(4, 5))
        assert gradcheck(lambda a, b, t: contrastive_loss(a, b, t), [em, ed, np.array(0.3)]) < 1e-4
