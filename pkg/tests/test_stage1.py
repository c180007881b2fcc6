"""
Tests for the conditioned denoiser, stage-1 training and sampling.
"""
import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from src import gradkernels as gk
from src.config import DiffusionConfig, TrainConfig
from src.corpus import build_corpus, synth_click_track
from src.diffusion import DiffusionSchedule
from src.metrics import bas
from src.encoders import CONDITION_DIM, EMBED_DIM, build_condition
from src.errors import BadCorpus, InsufficientKeypoints, ShapeMismatch
from src.gradkernels import Rng, gradcheck
from src.models import NUM_CONTACTS, POSE_DIM, Keypoints2D, MotionSequence
from src.posemath import default_skeleton, identity_pose, matrix_to_rot6d, pose_pack, pose_unpack
from src.shapealign import default_params, project_keypoints
from src.stage1 import (
    ChoreographyModel, DenoiserNet, denoise, extract_initial_pose, sample_stage1, train_stage1,
)


def small_config(**overrides) -> TrainConfig:
    values = dict(T=4, epochs=1, batch_size=2, model_dim=16, heads=2)
    values.update(overrides)
    return TrainConfig(**values)


def zero_condition():
    return build_condition(np.zeros(EMBED_DIM), np.zeros(EMBED_DIM))


class TestDenoiserNet:
    """Test the x-prediction network."""

    def setup_method(self):
        self.net = DenoiserNet(small_config(), Rng(0, "net"))
        rng = np.random.default_rng(0)
        self.z = rng.normal(size=(2, 10, POSE_DIM))
        self.e = rng.normal(size=(2, CONDITION_DIM))

    def test_output_shape_and_contacts(self):
        out = self.net.forward(self.z, [1, 3], self.e).data
        assert out.shape == (2, 10, POSE_DIM)
        contacts = out[..., :NUM_CONTACTS]
        assert np.all((contacts > 0.0) & (contacts < 1.0))

    def test_denoise_single_sequence(self):
        out = denoise(self.net, self.z[0], 2, zero_condition())
        assert out.shape == (10, POSE_DIM)

    def test_bad_shapes(self):
        with pytest.raises(ShapeMismatch):
            self.net.forward(self.z[0], [1], self.e)
        with pytest.raises(ShapeMismatch):
            self.net.forward(self.z, [1, 1], self.e[:, :64])
        with pytest.raises(ShapeMismatch):
            denoise(self.net, self.z[0, :, :100], 1, zero_condition())

    def test_gradients(self):
        net = DenoiserNet(small_config(model_dim=8), Rng(1, "net"))
        rng = np.random.default_rng(1)
        z = rng.normal(size=(1, 2, POSE_DIM))
        e = rng.normal(size=(1, CONDITION_DIM))
        w = rng.normal(size=(1, 2, POSE_DIM))
        assert gradcheck(lambda a, b: gk.tsum(net.forward(a, [3], b) * w), [z, e]) < 1e-3


class TestTraining:
    """Test the stage-1 training loop."""

    def setup_method(self):
        self.corpus = build_corpus(["House", "Krump"], per_genre=2, duration=5.0)

    def test_same_seed_same_history(self):
        cfg = small_config()
        _, a = train_stage1(self.corpus, cfg)
        _, b = train_stage1(self.corpus, cfg)
        assert len(a) == 2
        assert a == b
        assert all(np.isfinite(a))

    def test_basic_objective(self):
        _, history = train_stage1(self.corpus, small_config(objective="basic"))
        assert len(history) == 2
        _, unweighted = train_stage1(
            self.corpus, small_config(lambda_pos=0.0, lambda_vel=0.0, lambda_foot=0.0),
        )
        assert unweighted == history

    def test_linear_schedule_from_config(self):
        model = ChoreographyModel(small_config(), genres=["House", "Krump"],
                                  diffusion_cfg=DiffusionConfig(schedule="linear"))
        assert np.array_equal(model.schedule.betas, DiffusionSchedule.linear(4).betas)
        _, history = train_stage1(self.corpus, small_config(), model)
        assert all(np.isfinite(history))

    def test_schedule_length_must_match(self):
        model = ChoreographyModel(small_config(T=6), genres=["House", "Krump"])
        with pytest.raises(ValueError):
            train_stage1(self.corpus, small_config(), model)

    def test_chunk_seeds_round_trip(self):
        model = ChoreographyModel(small_config(seed=5), genres=["House", "Krump"])
        assert model.chunk_seeds == {"music": 5, "genre": 5}
        model.restore_chunk_seeds({"music": 3, "genre": 4})
        assert model.motiontune.music.seed == 3
        assert model.genre_model.seed == 4
        assert model.chunk_seeds == {"music": 3, "genre": 4}

    def test_empty_corpus(self):
        with pytest.raises(BadCorpus):
            train_stage1([], small_config())

    def test_short_items(self):
        short = build_corpus(["House", "Krump"], per_genre=2, duration=3.0)
        with pytest.raises(BadCorpus):
            train_stage1(short, small_config())

    def test_condition_vector(self):
        model = ChoreographyModel(small_config(), genres=["House", "Krump"])
        clip = synth_click_track(3.0, 2.0, 0.25, 800.0, 1.0, Rng(0), 48000)
        cond = model.condition(clip, "House: jacking")
        assert cond.vector.shape == (CONDITION_DIM,)
        assert np.isclose(np.linalg.norm(cond.music), 1.0)


class TestSampling:
    """Test constrained sampling from the denoiser."""

    def setup_method(self):
        self.cfg = small_config()
        self.net = DenoiserNet(self.cfg, Rng(0, "net"))
        self.schedule = DiffusionSchedule.cosine(self.cfg.T)

    def test_initial_pose_is_exact(self):
        vec = identity_pose(np.array([0.3, 0.9, -0.2]))
        vec[:NUM_CONTACTS] = 1.0
        init = pose_unpack(vec)
        out = sample_stage1(self.net, zero_condition(), init, 20, self.schedule, Rng(0), self.cfg)
        assert out.frames.shape == (20, POSE_DIM)
        assert np.array_equal(out.frames[0], pose_pack(init))

    def test_long_sequence(self):
        out = sample_stage1(self.net, zero_condition(), None, 225, self.schedule, Rng(1), self.cfg)
        assert out.frames.shape == (225, POSE_DIM)
        assert np.all(np.isfinite(out.frames))

    def test_same_seed_same_sample(self):
        a = sample_stage1(self.net, zero_condition(), None, 12, self.schedule, Rng(2), self.cfg)
        b = sample_stage1(self.net, zero_condition(), None, 12, self.schedule, Rng(2), self.cfg)
        assert np.array_equal(a.frames, b.frames)

    def test_invalid_length(self):
        with pytest.raises(ValueError):
            sample_stage1(self.net, zero_condition(), None, 0, self.schedule, Rng(0), self.cfg)


class TestInitialPose:
    """Test initial-pose extraction."""

    def test_sequence_reference_returns_first_frame(self):
        frames = np.random.default_rng(3).normal(size=(5, POSE_DIM))
        pose = extract_initial_pose(MotionSequence(frames=frames))
        assert np.array_equal(pose_pack(pose), frames[0])

    def test_too_few_keypoints(self):
        valid = np.zeros(24, dtype=bool)
        valid[:2] = True
        with pytest.raises(InsufficientKeypoints):
            extract_initial_pose(Keypoints2D(points=np.zeros((24, 2)), valid=valid))

    @pytest.mark.slow
    def test_keypoint_reference_recovers_pose(self):
        skel = default_skeleton()
        angles = np.zeros(skel.num_joints)
        for joint, angle in {1: -0.3, 2: 0.3, 16: 0.6, 17: -0.6, 18: 0.3, 19: -0.3}.items():
            angles[joint] = angle
        truth = default_params(skel)
        truth.rots = matrix_to_rot6d(Rotation.from_euler("z", angles).as_matrix())
        truth.root_t = truth.root_t + np.array([0.03, -0.02, 0.0])
        points = project_keypoints(truth, skel)
        kp = Keypoints2D(points=points, valid=np.ones(len(points), dtype=bool))

        pose = extract_initial_pose(kp, skel)
        fitted = default_params(skel)
        fitted.rots, fitted.root_t = pose.rots, pose.root_t
        error = np.linalg.norm(project_keypoints(fitted, skel) - points, axis=1)
        assert error.max() < 2.0


def smoothed(history, window=20):
    return np.convolve(history, np.ones(window) / window, mode="valid")


@pytest.mark.slow
class TestTrainingDynamics:
    """Longer runs at the default chain length."""

    def test_aligned_objective_decreases(self):
        corpus = build_corpus(["House", "Krump"], per_genre=4, duration=5.0)
        cfg = TrainConfig(T=50, epochs=100, batch_size=4, model_dim=32, heads=2)
        _, history = train_stage1(corpus, cfg)
        assert len(history) == 200
        curve = smoothed(history)
        half = len(curve) // 2
        assert curve[-1] < curve[0]
        assert curve[half:].mean() < curve[:half].mean()
        assert np.argmin(curve) >= half

    def test_samples_follow_their_own_beats(self):
        """Samples score higher BAS against their conditioning track than the other tempo."""
        genres = ["Ballet Jazz", "Krump"]
        corpus = build_corpus(genres, per_genre=4, duration=5.0,
                              tempos={"Ballet Jazz": 1.0, "Krump": 2.5})
        cfg = TrainConfig(T=50, epochs=150, batch_size=4, model_dim=32, heads=2)
        model, _ = train_stage1(corpus, cfg, ChoreographyModel(cfg, genres=genres))
        slow, fast = corpus[0], corpus[4]
        gaps = []
        for item, other in ((slow, fast), (fast, slow)):
            cond = model.condition(item.clip)
            for k in range(10):
                out = sample_stage1(model.net, cond, None, cfg.clip_frames, model.schedule,
                                    Rng(k, f"bas/{item.genre}"), cfg)
                gaps.append(bas(out, item.beats) - bas(out, other.beats))
        assert len(gaps) == 20
        assert np.mean(gaps) >= 0.05
