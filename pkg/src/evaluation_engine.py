"""
Evaluation engine that runs the metric suite over a directory of motion files.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from . import metrics
from .audio import detect_beats
from .config import AudioConfig, MetricConfig
from .errors import ChoreoError, NoBeats, TooFew
from .fileio import read_beats, read_label, read_motion, read_wav
from .interfaces import StyleClassifierInterface
from .models import EvaluationResult, FeatureBlock, ItemLabel, MetricName, MetricReport, MotionSequence, SkeletonModel
from .posemath import default_skeleton

logger = logging.getLogger(__name__)

MIN_SECONDS = 5.0


@dataclass
class EvalItem:
    name: str
    motion: MotionSequence
    label: Optional[ItemLabel] = None
    beats: Optional[np.ndarray] = None

    @property
    def style_text(self) -> Optional[str]:
        if self.label is None:
            return None
        return f"{self.label.genre}: {self.label.choreo_style}"


class EvaluationEngine:
    """Coordinates loading, metric computation and warnings for one evaluation run."""

    def __init__(
        self,
        skel: Optional[SkeletonModel] = None,
        cfg: Optional[MetricConfig] = None,
        audio_cfg: Optional[AudioConfig] = None,
        style_classifier: Optional[StyleClassifierInterface] = None,
    ):
        self.skel = skel or default_skeleton()
        self.cfg = cfg or MetricConfig()
        self.audio_cfg = audio_cfg or AudioConfig()
        self.style_classifier = style_classifier

    def load_items(self, directory: Union[str, Path]) -> List[EvalItem]:
        """Motion files plus optional label, beat and WAV sidecars sharing their stem."""
        directory = Path(directory)
        if not directory.is_dir():
            raise ValueError(f"Not a directory: {directory}")
        items = []
        for path in sorted(directory.glob("*.chor")):
            label_path = path.with_suffix(".json")
            items.append(EvalItem(
                name=path.stem,
                motion=read_motion(path),
                label=read_label(label_path) if label_path.exists() else None,
                beats=self._music_beats(path),
            ))
        return items

    def _music_beats(self, path: Path) -> Optional[np.ndarray]:
        sidecar = path.with_suffix(".beats.json")
        if sidecar.exists():
            return read_beats(sidecar)
        wav = path.with_suffix(".wav")
        if wav.exists():
            return np.asarray(detect_beats(read_wav(wav), self.audio_cfg))
        return None

    def evaluate(
        self,
        directory: Union[str, Path],
        metric_names: Sequence[MetricName],
        refs_dir: Optional[Union[str, Path]] = None,
    ) -> EvaluationResult:
        """Compute each requested metric; missing inputs become warnings, not failures."""
        try:
            items = self.load_items(directory)
            refs = self.load_items(refs_dir) if refs_dir is not None else None
            return self.evaluate_items(items, metric_names, refs, source=str(directory))
        except ChoreoError:
            raise
        except Exception as e:
            raise RuntimeError(f"Evaluation engine failed: {str(e)}") from e

    def evaluate_items(
        self,
        items: Sequence[EvalItem],
        metric_names: Sequence[MetricName],
        refs: Optional[Sequence[EvalItem]] = None,
        source: Optional[str] = None,
    ) -> EvaluationResult:
        if not items:
            raise TooFew("No motion files to evaluate")
        warnings = self._identify_warnings(items)
        reports: Dict[str, MetricReport] = {}
        per_item_bas: Dict[str, float] = {}
        for name in metric_names:
            if name == MetricName.PFC:
                values = [metrics.pfc(item.motion, self.skel) for item in items]
                reports["pfc"] = metrics.make_report(name, np.mean(values), len(values))
            elif name == MetricName.BAS:
                per_item_bas.update(self._bas(items, warnings))
                if per_item_bas:
                    reports["bas"] = metrics.make_report(
                        name, np.mean(list(per_item_bas.values())), len(per_item_bas),
                        sigma=self.cfg.sigma, window=self.cfg.beat_window,
                    )
            elif name == MetricName.DIST:
                reports.update(self._diversity(items))
            elif name == MetricName.MSAS:
                report = self._msas(items, warnings)
                if report is not None:
                    reports["msas"] = report
            elif name == MetricName.CSAS:
                report = self._csas(items, refs, warnings)
                if report is not None:
                    reports["csas"] = report
        return EvaluationResult(reports=reports, per_item_bas=per_item_bas, warnings=warnings, source=source)

    def _bas(self, items: Sequence[EvalItem], warnings: List[str]) -> Dict[str, float]:
        scores = {}
        for item in items:
            if item.beats is None or len(item.beats) == 0:
                warnings.append(f"{item.name}: no music beats available, skipped for BAS")
                continue
            try:
                scores[item.name] = metrics.bas(item.motion, item.beats, self.cfg.sigma,
                                                self.skel, self.cfg.beat_window)
            except NoBeats:
                warnings.append(f"{item.name}: motion has no kinematic beats, scored 0")
                scores[item.name] = 0.0
        return scores

    def _diversity(self, items: Sequence[EvalItem]) -> Dict[str, MetricReport]:
        feats = [metrics.extract_features(item.motion, self.skel) for item in items]
        return {
            "dist_k": metrics.make_report(MetricName.DIST, metrics.diversity(feats, FeatureBlock.KINETIC),
                                          len(feats), block="kinetic"),
            "dist_g": metrics.make_report(MetricName.DIST, metrics.diversity(feats, FeatureBlock.GEOMETRIC),
                                          len(feats), block="geometric"),
        }

    def _msas(self, items: Sequence[EvalItem], warnings: List[str]) -> Optional[MetricReport]:
        if self.style_classifier is None:
            warnings.append("MSAS needs a style classifier checkpoint; skipped")
            return None
        styles = self.style_classifier.styles
        labelled = [item for item in items if item.label is not None and item.label.genre in styles]
        if len(labelled) < len(items):
            warnings.append(f"MSAS skipped {len(items) - len(labelled)} items without a known genre label")
        if not labelled:
            return None
        probs = np.stack([self.style_classifier.predict_proba(item.motion) for item in labelled])
        truth = [styles.index(item.label.genre) for item in labelled]
        return metrics.make_report(MetricName.MSAS, metrics.msas(probs, truth), len(labelled))

    def _csas(self, items: Sequence[EvalItem], refs: Optional[Sequence[EvalItem]],
              warnings: List[str]) -> Optional[MetricReport]:
        if not refs:
            warnings.append("CSAS needs a reference directory; skipped")
            return None
        ref_items = [r for r in refs if r.label is not None]
        references = metrics.build_reference_sets(
            [metrics.extract_features(r.motion, self.skel) for r in ref_items],
            [r.style_text for r in ref_items],
        )
        pairs = [(metrics.extract_features(item.motion, self.skel), item.style_text)
                 for item in items if item.label is not None]
        if not pairs:
            warnings.append("CSAS found no labelled items; skipped")
            return None
        alpha = self.cfg.alpha
        if self.cfg.calibrate:
            alpha = metrics.calibrate_alpha(references, self.cfg.standardize)
            logger.info("calibrated CSAS alpha to %.4f", alpha)
        value = metrics.csas(pairs, references, alpha, self.cfg.standardize)
        return metrics.make_report(MetricName.CSAS, value, len(pairs), alpha=alpha,
                                   standardize=self.cfg.standardize, calibrated=self.cfg.calibrate)

    def _identify_warnings(self, items: Sequence[EvalItem]) -> List[str]:
        warnings = []
        short = [item.name for item in items if item.motion.duration < MIN_SECONDS]
        if short:
            warnings.append(f"{len(short)} sequences are shorter than {MIN_SECONDS:.0f} s: {', '.join(short[:5])}")
        fps = {item.motion.fps for item in items}
        if len(fps) > 1:
            warnings.append(f"Mixed frame rates in the evaluation set: {sorted(fps)}")
        return warnings

    def get_evaluation_summary(self, result: EvaluationResult) -> Dict[str, Any]:
        summary: Dict[str, Any] = {
            "metrics_computed": len(result.reports),
            "warnings": len(result.warnings),
            "values": {key: round(report.value, 4) for key, report in result.reports.items()},
        }
        if result.per_item_bas:
            scores = list(result.per_item_bas.values())
            summary["bas_range"] = f"{min(scores):.3f}-{max(scores):.3f}"
        return summary
