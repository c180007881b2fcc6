"""
Tests for the directory-level evaluation engine.
"""
import numpy as np
import pytest

from src import metrics
from src.config import MetricConfig
from src.corpus import gen_corpus
from src.errors import TooFew
from src.evaluation_engine import EvalItem, EvaluationEngine
from src.fileio import write_motion
from src.interfaces import StyleClassifierInterface
from src.models import ItemLabel, MetricName, MotionSequence
from src.posemath import identity_pose

GENRES = ["Ballet Jazz", "Middle Hip-hop"]


class OracleStyleClassifier(StyleClassifierInterface):
    """Puts all mass on the labelled genre of each known sequence."""

    def __init__(self, truth_by_frames):
        self.truth_by_frames = truth_by_frames

    @property
    def styles(self):
        return GENRES

    def predict_proba(self, seq):
        probs = np.zeros(len(GENRES))
        probs[GENRES.index(self.truth_by_frames[seq.frames.tobytes()])] = 1.0
        return probs


class TestEvaluationEngine:
    """Test metric selection, sidecar loading and warnings."""

    @pytest.fixture
    def corpus_dir(self, tmp_path):
        gen_corpus(GENRES, 2, 0, tmp_path / "data", duration=6.0)
        return tmp_path / "data"

    def test_load_items_reads_sidecars(self, corpus_dir):
        items = EvaluationEngine().load_items(corpus_dir)
        assert len(items) == 4
        assert all(item.label is not None and item.beats is not None for item in items)
        assert items[0].style_text.startswith("Ballet Jazz: ")

    def test_core_metrics(self, corpus_dir):
        engine = EvaluationEngine()
        result = engine.evaluate(corpus_dir, [MetricName.PFC, MetricName.BAS, MetricName.DIST])
        assert {"pfc", "bas", "dist_k", "dist_g"} == set(result.reports)
        assert result.reports["bas"].value >= 0.9
        assert len(result.per_item_bas) == 4
        assert result.warnings == []
        summary = engine.get_evaluation_summary(result)
        assert summary["metrics_computed"] == 4
        assert "bas_range" in summary

    def test_csas_against_own_corpus(self, corpus_dir):
        result = EvaluationEngine().evaluate(corpus_dir, [MetricName.CSAS], corpus_dir)
        assert 0.0 < result.reports["csas"].value <= 1.0
        assert result.reports["csas"].n == 4

    def test_calibrated_csas_alpha(self, tmp_path):
        """Four items per genre repeat one style, so the references have spread."""
        corpus_dir = tmp_path / "refs"
        gen_corpus(GENRES, 4, 0, corpus_dir, duration=6.0)
        engine = EvaluationEngine(cfg=MetricConfig(calibrate=True))
        items = engine.load_items(corpus_dir)
        references = metrics.build_reference_sets(
            [metrics.extract_features(item.motion, engine.skel) for item in items],
            [item.style_text for item in items],
        )
        report = engine.evaluate(corpus_dir, [MetricName.CSAS], corpus_dir).reports["csas"]
        assert report.params["calibrated"] is True
        assert np.isclose(report.params["alpha"], metrics.calibrate_alpha(references))

    def test_missing_inputs_become_warnings(self, corpus_dir):
        result = EvaluationEngine().evaluate(corpus_dir, [MetricName.MSAS, MetricName.CSAS])
        assert result.reports == {}
        assert any("MSAS" in w for w in result.warnings)
        assert any("CSAS" in w for w in result.warnings)

    def test_msas_with_perfect_classifier(self, corpus_dir):
        engine = EvaluationEngine()
        items = engine.load_items(corpus_dir)
        engine.style_classifier = OracleStyleClassifier(
            {item.motion.frames.tobytes(): item.label.genre for item in items}
        )
        result = engine.evaluate_items(items, [MetricName.MSAS])
        assert result.reports["msas"].value == 1.0

    def test_beats_from_wav_when_sidecar_missing(self, corpus_dir):
        for sidecar in corpus_dir.glob("*.beats.json"):
            sidecar.unlink()
        items = EvaluationEngine().load_items(corpus_dir)
        assert all(item.beats is not None and len(item.beats) > 0 for item in items)

    def test_short_and_unlabelled_items(self, tmp_path):
        frames = np.tile(identity_pose(), (60, 1))
        write_motion(tmp_path / "short.chor", MotionSequence(frames=frames))
        result = EvaluationEngine().evaluate(tmp_path, [MetricName.BAS])
        assert "bas" not in result.reports
        assert any("shorter than" in w for w in result.warnings)
        assert any("no music beats" in w for w in result.warnings)

    def test_static_motion_scores_zero_bas(self):
        item = EvalItem("still", MotionSequence(frames=np.tile(identity_pose(), (150, 1))),
                        ItemLabel("House", "jacking", 2.0), np.array([0.5, 1.0]))
        result = EvaluationEngine().evaluate_items([item], [MetricName.BAS])
        assert result.per_item_bas == {"still": 0.0}

    def test_empty_directory(self, tmp_path):
        with pytest.raises(TooFew):
            EvaluationEngine().evaluate(tmp_path, [MetricName.PFC])

    def test_missing_directory(self, tmp_path):
        with pytest.raises(RuntimeError):
            EvaluationEngine().evaluate(tmp_path / "missing", [MetricName.PFC])
