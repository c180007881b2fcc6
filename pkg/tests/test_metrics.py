"""
Tests for PFC, diversity, BAS, MSAS and CSAS.
"""
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from src.errors import BadAlpha, BadDistribution, NoBeats, TooFew, TooShort, UnknownStyle
from src.metrics import (
    GEOMETRIC_DIM, KINETIC_DIM, bas, build_reference_sets, calibrate_alpha, csas, diversity,
    evaluate_bas, extract_features, kinematic_beats, msas, pfc,
)
from src.models import ROOT_OFFSET, FeatureBlock, MotionSequence, StyleReferenceSet
from src.posemath import default_skeleton, identity_pose


def rest_sequence(root_x) -> MotionSequence:
    frames = np.tile(identity_pose(), (len(root_x), 1))
    frames[:, ROOT_OFFSET] = root_x
    return MotionSequence(frames=frames, fps=30)


class TestPhysicalFootContact:
    """Test PFC on rigid root motion."""

    def setup_method(self):
        self.skel = default_skeleton()

    def test_static_sequence_scores_zero(self):
        assert pfc(rest_sequence(np.zeros(10)), self.skel) == 0.0

    def test_direct_evaluation(self):
        """Constant root acceleration: a/max a = 1 and both feet move with the root."""
        root_x = np.array([0.0, 0.01, 0.04, 0.09, 0.16])
        feet = np.array([0.03, 0.05, 0.07]) * 30.0
        assert np.isclose(pfc(rest_sequence(root_x), self.skel), np.mean(feet * feet))
        assert np.isclose(pfc(rest_sequence(root_x), self.skel), 2.49)

    def test_too_short(self):
        with pytest.raises(TooShort):
            pfc(rest_sequence(np.zeros(2)), self.skel)


class TestDiversity:
    """Test the mean pairwise distance."""

    def test_two_vectors(self):
        assert np.isclose(diversity([np.zeros(3), np.array([3.0, 4.0, 0.0])]), 5.0)

    def test_matches_brute_force(self):
        vecs = list(np.random.default_rng(0).normal(size=(6, 5)))
        dists = [np.linalg.norm(vecs[i] - vecs[j]) for i in range(6) for j in range(i + 1, 6)]
        assert abs(diversity(vecs) - sum(dists) / len(dists)) < 1e-10

    def test_feature_blocks(self):
        seq = rest_sequence(np.linspace(0.0, 1.0, 20))
        feats = extract_features(seq, default_skeleton())
        assert feats.kinetic.shape == (KINETIC_DIM,)
        assert feats.geometric.shape == (GEOMETRIC_DIM,)
        other = extract_features(rest_sequence(np.zeros(20)), default_skeleton())
        assert diversity([feats, other], FeatureBlock.GEOMETRIC) == 0.0
        assert diversity([feats, other], FeatureBlock.KINETIC) > 0.0

    def test_too_few(self):
        with pytest.raises(TooFew):
            diversity([np.zeros(3)])


class TestBeatAlignment:
    """Test BAS on given beat times and on motion."""

    def test_exact_alignment(self):
        beats = [0.5, 1.0, 1.5]
        assert bas(beats, beats) == 1.0

    def test_offset_by_sigma(self):
        beats = np.array([0.5, 1.0, 1.5])
        assert np.isclose(bas(beats + 0.1, beats, sigma=0.1), math.exp(-0.5))
        assert np.isclose(bas(beats + 0.1, beats, sigma=0.1), 0.6065, atol=1e-4)

    @given(seed=st.integers(0, 1000))
    @settings(max_examples=20, deadline=None)
    def test_matches_brute_force(self, seed):
        """
        Property: BAS equals the direct double loop over kinematic and music beats.
        """
        rng = np.random.default_rng(seed)
        kin = rng.uniform(0, 10, size=rng.integers(1, 8))
        music = rng.uniform(0, 10, size=rng.integers(1, 8))
        total = 0.0
        for k in kin:
            nearest = min((k - b) ** 2 for b in music)
            total += math.exp(-nearest / (2 * 0.1 ** 2))
        assert abs(bas(kin, music) - total / len(kin)) < 1e-10

    def test_kinematic_beats_of_oscillation(self):
        """Root swinging as cos(pi t) stops every second."""
        t = np.arange(90) / 30.0
        beats = kinematic_beats(rest_sequence(0.2 * np.cos(np.pi * t)), default_skeleton())
        assert np.allclose(beats, [1.0, 2.0])

    def test_no_beats(self):
        with pytest.raises(NoBeats):
            bas([], [1.0])
        with pytest.raises(NoBeats):
            bas([1.0], [])

    def test_evaluate_scores_beatless_items_zero(self):
        skel = default_skeleton()
        score, per_item = evaluate_bas([rest_sequence(np.zeros(30))], [[0.5]], skel)
        assert per_item == [0.0] and score == 0.0


class TestMusicStyleAlignment:
    """Test MSAS over classifier outputs."""

    def test_truth_always_first(self):
        probs = np.array([[0.6, 0.3, 0.1], [0.2, 0.6, 0.2]])
        assert np.isclose(msas(probs, [0, 1]), 0.6)

    def test_mixed_case(self):
        probs = np.array([
            [0.5, 0.3, 0.15, 0.05],
            [0.4, 0.3, 0.2, 0.1],
            [0.9, 0.05, 0.03, 0.02],
        ])
        assert np.isclose(msas(probs, [1, 3, 0]), 0.4)

    def test_ties_prefer_lower_index(self):
        probs = np.full((1, 4), 0.25)
        assert msas(probs, [3]) == 0.0
        assert msas(probs, [2]) == 0.25

    def test_matches_brute_force(self):
        rng = np.random.default_rng(1)
        probs = rng.dirichlet(np.ones(6), size=20)
        truth = rng.integers(0, 6, size=20)
        expected = []
        for row, t in zip(probs, truth):
            rank = sum(1 for p in row if p > row[t])
            expected.append(row[t] if rank < 3 else 0.0)
        assert abs(msas(probs, truth) - np.mean(expected)) < 1e-10

    def test_bad_rows(self):
        with pytest.raises(BadDistribution):
            msas(np.array([[0.5, 0.4]]), [0])
        with pytest.raises(BadDistribution):
            msas(np.array([[0.5, 0.5]]), [0, 1])


class TestChoreographyStyleAlignment:
    """Test CSAS and the alpha calibration."""

    def setup_method(self):
        self.refs = {"a": StyleReferenceSet("a", np.array([[-1.0, 0.0], [1.0, 0.0]]))}

    def test_unit_distance(self):
        score = csas([(np.array([0.0, 1.0]), "a")], self.refs, alpha=1.0, standardize=False)
        assert np.isclose(score, math.exp(-1.0))
        assert np.isclose(score, 0.3679, atol=1e-4)

    def test_decreases_with_alpha(self):
        items = [(np.array([0.0, 1.0]), "a")]
        scores = [csas(items, self.refs, alpha=a, standardize=False) for a in (0.5, 1.0, 2.0)]
        assert scores[0] > scores[1] > scores[2]

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        feats = rng.normal(size=(12, 4))
        styles = ["x", "y", "z"] * 4
        refs = build_reference_sets(feats, styles)
        items = [(rng.normal(size=4), s) for s in ("x", "y", "z", "x")]
        union = np.concatenate([r.members for r in refs.values()])
        std = union.std(axis=0)
        expected = []
        for v, s in items:
            centroid = refs[s].members.mean(axis=0)
            d = math.sqrt(sum(((v[i] - centroid[i]) / std[i]) ** 2 for i in range(4)))
            expected.append(math.exp(-0.7 * d))
        assert abs(csas(items, refs, alpha=0.7) - np.mean(expected)) < 1e-10

    def test_calibrated_alpha_gives_half(self):
        refs = build_reference_sets(np.random.default_rng(3).normal(size=(9, 3)), ["p", "q", "r"] * 3)
        alpha = calibrate_alpha(refs)
        std = np.concatenate([r.members for r in refs.values()]).std(axis=0)
        dists = [np.linalg.norm((m - r.centroid) / std) for r in refs.values() for m in r.members]
        assert np.isclose(math.exp(-alpha * np.median(dists)), 0.5)

    def test_errors(self):
        item = [(np.zeros(2), "a")]
        with pytest.raises(BadAlpha):
            csas(item, self.refs, alpha=0.0)
        with pytest.raises(UnknownStyle):
            csas([(np.zeros(2), "b")], self.refs)
        with pytest.raises(TooFew):
            csas([], self.refs)
