"""
Tests for text hashing, the contrastive encoders, the classifiers and the
style controller.
"""
import numpy as np
import pytest

from src.config import CHOREO_STYLES, GENRES, EncoderConfig
from src.corpus import build_corpus, synth_click_track
from src.encoders import (
    CONDITION_DIM, E_C_DIM, EMBED_DIM, POSE_FEATURE_DIM, DanceStyleClassifier, GenreModel,
    MotionTune, StyleController, build_condition, classify_genre, corpus_loss, hashed_tokens,
    pose_features, prepare_corpus, resolve_style, retrieval_at_1, style_embedding, token_matrix,
    tokenize, train_genre_model, train_motiontune, train_style_classifier,
)
from src.errors import BadCorpus, EmptyStyle, ShapeMismatch, TooShort
from src.gradkernels import Rng
from src.models import GenrePrediction, MotionSequence
from src.posemath import identity_pose


def click(duration: float = 3.0, tempo: float = 2.0, timbre: float = 1000.0):
    return synth_click_track(duration, tempo, 0.25, timbre, 1.0, Rng(0, "clip"), 48000)


def still_dance(frames: int = 60) -> MotionSequence:
    return MotionSequence(frames=np.tile(identity_pose(), (frames, 1)))


class TestTextFeatures:
    """Test tokenization and hashed token features."""

    def test_tokenize_lowercases_and_splits(self):
        assert tokenize("House: Jacking, Lofting!") == ["house", "jacking", "lofting"]
        assert tokenize("  ") == []

    def test_hashed_tokens_are_order_free(self):
        a = hashed_tokens("body wave robot")
        b = hashed_tokens("robot body wave")
        assert np.array_equal(a, b)
        assert a.any()

    def test_empty_text_is_zero(self):
        assert not hashed_tokens("").any()

    def test_token_matrix_rows(self):
        m = token_matrix("toprock footwork freeze", buckets=32)
        assert m.shape == (3, 32)
        assert np.all(np.abs(m).sum(axis=1) == 1.0)


class TestEncoders:
    """Test the contrastive music and dance encoders."""

    def setup_method(self):
        self.model = MotionTune(EncoderConfig(), seed=0)

    def test_same_clip_same_embedding(self):
        clip = click()
        a = self.model.encode_music(clip)
        b = self.model.encode_music(clip)
        assert a.shape == (EMBED_DIM,)
        assert np.array_equal(a, b)
        assert np.isclose(np.linalg.norm(a), 1.0)

    def test_dance_embedding_is_unit(self):
        e = self.model.encode_dance(still_dance(), "House: jacking")
        assert e.shape == (EMBED_DIM,)
        assert np.isclose(np.linalg.norm(e), 1.0)

    def test_short_inputs_rejected(self):
        with pytest.raises(TooShort):
            self.model.encode_music(click(duration=0.5))
        with pytest.raises(TooShort):
            self.model.encode_dance(still_dance(10), "House")

    def test_pose_feature_width(self):
        assert pose_features(still_dance()).shape == (POSE_FEATURE_DIM,)

    def test_tau_is_clamped(self):
        self.model.log_tau.data = np.array(np.log(50.0))
        self.model.clamp_tau()
        assert np.isclose(self.model.tau, EncoderConfig().tau_max)

    def test_too_few_pairs(self):
        corpus = build_corpus(["House", "Krump"], per_genre=2, duration=3.0)
        with pytest.raises(BadCorpus):
            train_motiontune(corpus, epochs=1)


class TestGenreModel:
    """Test the genre classifier and its feature taps."""

    def test_untrained_model_is_uniform(self):
        """The output layer starts at zero, so every genre gets 1/C."""
        genres = ["House", "Krump", "Pop"]
        pred = classify_genre(GenreModel(genres, Rng(0)), click())
        assert np.allclose(pred.probs, 1.0 / 3.0)
        assert pred.caption == "House"
        assert pred.e_c.shape == (E_C_DIM,)


class TestStyleClassifier:
    """Test the dance-side style classifier."""

    def test_probabilities_sum_to_one(self):
        model = DanceStyleClassifier(["a", "b", "c"], Rng(0))
        probs = model.predict_proba(still_dance())
        assert probs.shape == (3,)
        assert np.isclose(probs.sum(), 1.0)

    def test_training_reduces_loss(self):
        corpus = build_corpus(["House", "Krump"], per_genre=2, duration=3.0)
        seqs = [item.motion for item in corpus]
        labels = [item.genre for item in corpus]
        _, history = train_style_classifier(seqs, labels, ["House", "Krump"],
                                            EncoderConfig(classifier_epochs=30))
        assert history[-1] < history[0]

    def test_mismatched_labels(self):
        with pytest.raises(BadCorpus):
            train_style_classifier([still_dance()] * 3, ["a", "b"], ["a", "b"])


class TestStyleController:
    """Test the style embedding and the condition vector."""

    def setup_method(self):
        self.controller = StyleController(Rng(0))

    def test_zero_inputs_give_zero_style(self):
        out = self.controller(np.zeros(E_C_DIM), np.zeros((3, self.controller.buckets)))
        assert out.shape == (EMBED_DIM,)
        assert np.allclose(out.data, 0.0)

    def test_batched_output(self):
        e_c = np.random.default_rng(0).normal(size=(2, E_C_DIM))
        tokens = np.stack([token_matrix("house jacking", 256)] * 2)
        assert self.controller(e_c, tokens).shape == (2, EMBED_DIM)

    def test_wrong_e_c_width(self):
        with pytest.raises(ShapeMismatch):
            self.controller(np.zeros(E_C_DIM - 1), token_matrix("house"))

    def test_empty_style_rejected(self):
        with pytest.raises(EmptyStyle):
            style_embedding(self.controller, np.zeros(E_C_DIM), "")
        with pytest.raises(EmptyStyle):
            style_embedding(self.controller, np.zeros(E_C_DIM), " ,;")

    def test_condition_layout(self):
        rng = np.random.default_rng(1)
        e_m, s = rng.normal(size=EMBED_DIM), rng.normal(size=EMBED_DIM)
        cond = build_condition(e_m, s)
        assert cond.vector.shape == (CONDITION_DIM,)
        assert np.array_equal(cond.vector[:EMBED_DIM], e_m)
        assert np.array_equal(cond.vector[EMBED_DIM:], s)
        with pytest.raises(ShapeMismatch):
            build_condition(e_m[:10], s)

    def test_resolve_style(self):
        pred = GenrePrediction(caption="Break", probs=np.ones(1), e_c=np.zeros(E_C_DIM))
        assert resolve_style(pred, "Break: freeze") == "Break: freeze"
        assert resolve_style(pred) == f"Break: {CHOREO_STYLES['Break'][0]}"
        assert resolve_style(GenrePrediction("Unknown", np.ones(1), np.zeros(E_C_DIM)), "  ") == "Unknown"


@pytest.mark.slow
class TestContrastiveTraining:
    """Train the encoders on a small synthetic corpus."""

    def test_training_aligns_pairs(self):
        corpus = build_corpus(["House", "Krump", "Pop", "Break"], per_genre=4, duration=4.0)
        cfg = EncoderConfig(epochs=40, batch_size=16)
        untrained = MotionTune(cfg, seed=0)
        before = corpus_loss(untrained, prepare_corpus(untrained, corpus))
        model, history = train_motiontune(corpus, cfg=cfg, seed=0)
        data = prepare_corpus(model, corpus)
        assert corpus_loss(model, data) < before
        assert history[-1] < history[0]
        assert retrieval_at_1(model, data) > 1.0 / len(corpus)


@pytest.mark.slow
class TestTenGenreCorpus:
    """Encoders and the genre classifier on 64 pairs spanning all ten genres."""

    def setup_method(self):
        self.corpus = build_corpus(GENRES, per_genre=7, duration=5.0)[:64]

    def test_one_epoch_lowers_the_loss(self):
        cfg = EncoderConfig()
        untrained = MotionTune(cfg, seed=0)
        data = prepare_corpus(untrained, self.corpus)
        before = corpus_loss(untrained, data)
        model, history = train_motiontune(self.corpus, epochs=1, cfg=cfg, seed=0)
        assert len(history) == 1
        assert corpus_loss(model, prepare_corpus(model, self.corpus)) < before

    def test_retrieval(self):
        model, _ = train_motiontune(self.corpus, epochs=200, seed=0)
        assert retrieval_at_1(model, prepare_corpus(model, self.corpus)) >= 0.9

    def test_genre_accuracy(self):
        assert {item.genre for item in self.corpus} == set(GENRES)
        model, _ = train_genre_model(self.corpus, GENRES, EncoderConfig(), seed=0)
        correct = [classify_genre(model, item.clip).caption == item.genre for item in self.corpus]
        assert np.mean(correct) >= 0.95
