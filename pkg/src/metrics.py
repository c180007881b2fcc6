"""
Evaluation metrics for generated dance: physical foot contact, diversity,
beat alignment, music-style and choreography-style alignment.
"""
import logging
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.signal import argrelextrema
from scipy.spatial.distance import pdist

from .config import MetricConfig
from .errors import BadAlpha, BadDistribution, NoBeats, TooFew, TooShort, UnknownStyle
from .models import (
    FeatureBlock, FeatureVector, MetricName, MetricReport, MotionSequence,
    SkeletonModel, StyleReferenceSet,
)
from .posemath import default_skeleton, sequence_joints

logger = logging.getLogger(__name__)

LEFT_FOOT = (7, 10)
RIGHT_FOOT = (8, 11)
ROOT_JOINT = 0
UP_AXIS = 1
KINETIC_DIM = 72
GEOMETRIC_DIM = 32
NEAR_THRESHOLD = 0.3
MSAS_TOP_K = 3
ROW_SUM_TOLERANCE = 1e-6

# (a, b): fraction of frames with |a - b| < NEAR_THRESHOLD
NEAR_PAIRS = [
    (20, 21), (20, 15), (21, 15), (20, 0), (21, 0), (22, 10), (23, 11), (7, 8),
    (4, 5), (18, 19), (20, 12), (21, 12), (10, 11), (4, 21), (5, 20), (22, 23),
]
# (a, b): fraction of frames with a above b
ABOVE_PAIRS = [
    (20, 15), (21, 15), (18, 16), (19, 17), (20, 0), (21, 0), (7, 5), (8, 4),
    (7, 8), (8, 7), (22, 12), (23, 12), (4, 0), (5, 0), (20, 21), (10, 8),
]


def _positions(seq: MotionSequence, skel: SkeletonModel) -> np.ndarray:
    return sequence_joints(skel, seq.frames)


def pfc(seq: MotionSequence, skel: SkeletonModel) -> float:
    """Physical foot contact score; lower is more plausible.

    Root joint stands in for the centre of mass. Each foot's speed is the
    slower of its ankle and toe. Velocities and accelerations are finite
    differences scaled by fps.
    """
    if len(seq) < 3:
        raise TooShort(f"PFC needs at least 3 frames, got {len(seq)}")
    pos = _positions(seq, skel)
    root = pos[:, ROOT_JOINT]
    root_v = np.diff(root, axis=0) * seq.fps
    root_a = np.linalg.norm(np.diff(root_v, axis=0) * seq.fps, axis=-1)  # (N-2,)
    peak = root_a.max()
    if peak == 0:
        return 0.0
    foot_v = np.linalg.norm(pos[2:] - pos[1:-1], axis=-1) * seq.fps  # (N-2, J)
    left = np.minimum(foot_v[:, LEFT_FOOT[0]], foot_v[:, LEFT_FOOT[1]])
    right = np.minimum(foot_v[:, RIGHT_FOOT[0]], foot_v[:, RIGHT_FOOT[1]])
    return float(np.mean(root_a / peak * left * right))


def mean_joint_speed(seq: MotionSequence, skel: SkeletonModel) -> np.ndarray:
    pos = _positions(seq, skel)
    vel = np.gradient(pos, axis=0) * seq.fps
    return np.linalg.norm(vel, axis=-1).mean(axis=1)


def kinematic_beats(seq: MotionSequence, skel: SkeletonModel, window: int = 5) -> np.ndarray:
    """Times (s) of local minima of mean joint speed within a ``window``-frame neighbourhood."""
    if len(seq) < 3:
        return np.zeros(0)
    speed = mean_joint_speed(seq, skel)
    idx = argrelextrema(speed, np.less, order=max(window // 2, 1))[0]
    return idx / float(seq.fps)


def bas(
    motion: Union[MotionSequence, np.ndarray, Sequence[float]],
    beats: Sequence[float],
    sigma: float = 0.1,
    skel: Optional[SkeletonModel] = None,
    window: int = 5,
) -> float:
    """Mean over kinematic beats of exp(-min_b (t_k - t_b)^2 / (2 sigma^2))."""
    if isinstance(motion, MotionSequence):
        kin = kinematic_beats(motion, skel or default_skeleton(), window)
    else:
        kin = np.asarray(motion, dtype=np.float64).reshape(-1)
    music = np.asarray(beats, dtype=np.float64).reshape(-1)
    if kin.size == 0:
        raise NoBeats("No kinematic beats found")
    if music.size == 0:
        raise NoBeats("No music beats given")
    nearest = np.min((kin[:, None] - music[None, :]) ** 2, axis=1)
    return float(np.mean(np.exp(-nearest / (2.0 * sigma ** 2))))


def extract_features(seq: MotionSequence, skel: SkeletonModel) -> FeatureVector:
    if len(seq) < 2:
        raise TooShort(f"Feature extraction needs at least 2 frames, got {len(seq)}")
    pos = _positions(seq, skel)
    vel = np.diff(pos, axis=0) * seq.fps
    kinetic = np.mean(vel ** 2, axis=0).reshape(-1)[:KINETIC_DIM]

    near = [np.mean(np.linalg.norm(pos[:, a] - pos[:, b], axis=-1) < NEAR_THRESHOLD)
            for a, b in NEAR_PAIRS]
    above = [np.mean(pos[:, a, UP_AXIS] > pos[:, b, UP_AXIS]) for a, b in ABOVE_PAIRS]
    return FeatureVector(kinetic=kinetic, geometric=np.array(near + above, dtype=np.float64))


def _block(vectors: Iterable[Union[FeatureVector, np.ndarray]], block: FeatureBlock) -> np.ndarray:
    rows = []
    for v in vectors:
        if isinstance(v, FeatureVector):
            rows.append(v.kinetic if block == FeatureBlock.KINETIC else v.geometric)
        else:
            rows.append(np.asarray(v, dtype=np.float64))
    return np.stack(rows) if rows else np.zeros((0, 0))


def diversity(vectors: Sequence[Union[FeatureVector, np.ndarray]],
              block: FeatureBlock = FeatureBlock.KINETIC) -> float:
    """Mean pairwise Euclidean distance within one feature block."""
    if len(vectors) < 2:
        raise TooFew(f"Diversity needs at least 2 vectors, got {len(vectors)}")
    return float(np.mean(pdist(_block(vectors, block), metric="euclidean")))


def msas(probs: np.ndarray, true_idx: Sequence[int]) -> float:
    """Mean true-style probability over items whose truth is in the top 3."""
    probs = np.asarray(probs, dtype=np.float64)
    true_idx = np.asarray(true_idx, dtype=int).reshape(-1)
    if probs.ndim != 2 or probs.shape[0] != true_idx.shape[0]:
        raise BadDistribution(f"Probability rows {probs.shape} do not match {true_idx.shape[0]} labels")
    if probs.shape[0] == 0:
        raise TooFew("MSAS needs at least one item")
    bad = np.where(np.abs(probs.sum(axis=1) - 1.0) > ROW_SUM_TOLERANCE)[0]
    if bad.size or np.any(probs < 0):
        raise BadDistribution(f"Rows {bad.tolist()} are not probability distributions")
    classes = np.arange(probs.shape[1])
    scores = []
    for row, truth in zip(probs, true_idx):
        # descending probability, ties to the lower class index
        top = np.lexsort((classes, -row))[:MSAS_TOP_K]
        scores.append(row[truth] if truth in top else 0.0)
    return float(np.mean(scores))


def _vector(v: Union[FeatureVector, np.ndarray]) -> np.ndarray:
    return v.vector if isinstance(v, FeatureVector) else np.asarray(v, dtype=np.float64)


def reference_statistics(references: Dict[str, StyleReferenceSet]) -> Tuple[np.ndarray, np.ndarray]:
    """Mean and std over the union of all reference members; zero std maps to 1."""
    members = np.concatenate([ref.members for ref in references.values()], axis=0)
    mean = members.mean(axis=0)
    std = members.std(axis=0)
    return mean, np.where(std > 0, std, 1.0)


def csas(
    items: Sequence[Tuple[Union[FeatureVector, np.ndarray], str]],
    references: Dict[str, StyleReferenceSet],
    alpha: float = 1.0,
    standardize: bool = True,
) -> float:
    """Mean of exp(-alpha * distance) from each item to its intended style centroid."""
    if not alpha > 0:
        raise BadAlpha(f"alpha must be positive, got {alpha}")
    if not items:
        raise TooFew("CSAS needs at least one item")
    for _, style in items:
        if style not in references:
            raise UnknownStyle(f"No reference set for style '{style}'")
    if standardize:
        mean, std = reference_statistics(references)
    else:
        mean, std = 0.0, 1.0
    scores = []
    for feats, style in items:
        x = (_vector(feats) - mean) / std
        mu = (references[style].centroid - mean) / std
        scores.append(np.exp(-alpha * np.linalg.norm(x - mu)))
    return float(np.mean(scores))


def build_reference_sets(
    features: Sequence[Union[FeatureVector, np.ndarray]],
    styles: Sequence[str],
) -> Dict[str, StyleReferenceSet]:
    if len(features) != len(styles):
        raise ValueError(f"{len(features)} feature vectors for {len(styles)} style labels")
    grouped: Dict[str, List[np.ndarray]] = {}
    for feats, style in zip(features, styles):
        grouped.setdefault(style, []).append(_vector(feats))
    return {style: StyleReferenceSet(style=style, members=np.stack(rows))
            for style, rows in sorted(grouped.items())}


def calibrate_alpha(references: Dict[str, StyleReferenceSet], standardize: bool = True) -> float:
    """Alpha giving a median reference self-score of exactly 0.5."""
    if not references:
        raise TooFew("No reference sets to calibrate against")
    if standardize:
        mean, std = reference_statistics(references)
    else:
        mean, std = 0.0, 1.0
    distances = []
    for ref in references.values():
        members = (ref.members - mean) / std
        centroid = (ref.centroid - mean) / std
        distances.extend(np.linalg.norm(members - centroid, axis=1).tolist())
    median = float(np.median(distances))
    if median <= 0:
        raise BadAlpha("Reference sets have zero spread; alpha is undefined")
    return float(np.log(2.0) / median)


def make_report(metric: MetricName, value: float, n: int, **params) -> MetricReport:
    report = MetricReport(metric=metric.value, value=float(value), n=int(n), params=dict(params))
    logger.info("%s = %.4f over %d items", metric.value, report.value, report.n)
    return report


def evaluate_bas(sequences: Sequence[MotionSequence], beats: Sequence[Sequence[float]],
                 skel: SkeletonModel, cfg: Optional[MetricConfig] = None) -> Tuple[float, List[float]]:
    """Mean BAS and per-item scores; items without kinematic beats score 0."""
    cfg = cfg or MetricConfig()
    per_item = []
    for seq, b in zip(sequences, beats):
        try:
            per_item.append(bas(seq, b, cfg.sigma, skel, cfg.beat_window))
        except NoBeats:
            logger.warning("no beats for a %d-frame sequence; scoring 0", len(seq))
            per_item.append(0.0)
    if not per_item:
        raise TooFew("BAS needs at least one sequence")
    return float(np.mean(per_item)), per_item
