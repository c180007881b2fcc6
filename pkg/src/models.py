"""
Core data models for the choreography toolkit.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional

import numpy as np
from dataclasses_json import dataclass_json

NUM_JOINTS = 24
NUM_CONTACTS = 4
ROT6D_DIM = 6
POSE_DIM = NUM_CONTACTS + NUM_JOINTS * ROT6D_DIM + 3  # 151
ROOT_OFFSET = NUM_CONTACTS + NUM_JOINTS * ROT6D_DIM  # 148


class FeatureBlock(Enum):
    """Which half of a motion feature vector a diversity score uses."""
    KINETIC = "kinetic"
    GEOMETRIC = "geometric"


class MetricName(Enum):
    """Evaluation metrics exposed by the evaluation engine and CLI."""
    PFC = "pfc"
    BAS = "bas"
    DIST = "dist"
    MSAS = "msas"
    CSAS = "csas"


@dataclass
class PoseVector:
    """One frame: contact bits, 24 joint rotations in 6D, root translation."""
    contacts: np.ndarray  # (4,)
    rots: np.ndarray  # (24, 6)
    root_t: np.ndarray  # (3,)


@dataclass
class MotionSequence:
    """Frame-major pose sequence at a fixed frame rate."""
    frames: np.ndarray  # (N, 151)
    fps: int = 30

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim == 1:
            self.frames = self.frames[None, :]
        if self.fps <= 0:
            raise ValueError(f"Invalid fps: {self.fps}")

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.fps


@dataclass
class SkeletonModel:
    """Kinematic tree with topologically sorted parents and rest offsets."""
    parents: List[int]
    offsets: np.ndarray  # (J, 3)

    @property
    def num_joints(self) -> int:
        return len(self.parents)


@dataclass
class AudioClip:
    """Mono PCM samples in [-1, 1]."""
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise ValueError(f"Invalid sample rate: {self.sample_rate}")

    @property
    def duration(self) -> float:
        return self.samples.shape[0] / self.sample_rate


@dataclass
class SpectralFeatures:
    """Log-mel energies, frames x bands."""
    values: np.ndarray
    hop: int
    frame_rate: float

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]


@dataclass
class ChunkSet:
    """Global compressed view plus three local slices of equal shape."""
    global_view: SpectralFeatures
    locals: List[SpectralFeatures]
    repeats: int = 1
    pad_frames: int = 0
    local_starts: List[int] = field(default_factory=list)


@dataclass
class ConditionEmbedding:
    """Music part and style part of the denoiser condition."""
    music: np.ndarray
    style: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.music, self.style])


@dataclass
class GenrePrediction:
    """Output of the genre classifier for one clip."""
    caption: str
    probs: np.ndarray
    e_c: np.ndarray


@dataclass
class LossWeights:
    """Weights of the auxiliary kinematic losses."""
    lambda_pos: float = 1.0
    lambda_vel: float = 1.0
    lambda_foot: float = 1.0

    def __post_init__(self):
        for name in ("lambda_pos", "lambda_vel", "lambda_foot"):
            if getattr(self, name) < 0:
                raise ValueError(f"Negative loss weight {name}: {getattr(self, name)}")


@dataclass
class BodyParams:
    """Capsule body: shape multipliers, pose rotations, orthographic camera."""
    beta: np.ndarray  # (10,)
    rots: np.ndarray  # (24, 6)
    root_t: np.ndarray  # (3,)
    cam_scale: float
    cam_offset: np.ndarray  # (2,)

    def copy(self) -> "BodyParams":
        return BodyParams(
            beta=self.beta.copy(),
            rots=self.rots.copy(),
            root_t=self.root_t.copy(),
            cam_scale=float(self.cam_scale),
            cam_offset=self.cam_offset.copy(),
        )


@dataclass
class Silhouette:
    """Binary raster, rows x cols."""
    pixels: np.ndarray

    @property
    def area(self) -> int:
        return int(self.pixels.sum())


@dataclass
class Keypoints2D:
    """Image-space joint positions with validity flags."""
    points: np.ndarray  # (24, 2)
    valid: np.ndarray  # (24,) bool

    @property
    def num_valid(self) -> int:
        return int(np.count_nonzero(self.valid))


@dataclass
class FeatureVector:
    """Kinetic and geometric motion features."""
    kinetic: np.ndarray  # (72,)
    geometric: np.ndarray  # (32,)

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.kinetic, self.geometric])


@dataclass
class StyleReferenceSet:
    """Feature vectors of one choreography style and their centroid."""
    style: str
    members: np.ndarray  # (n, F)

    @property
    def centroid(self) -> np.ndarray:
        return self.members.mean(axis=0)


@dataclass
class CorpusItem:
    """One paired training example."""
    clip: AudioClip
    motion: MotionSequence
    genre: str
    choreo_style: str
    tempo: float
    beats: Optional[np.ndarray] = None  # click times (s)

    @property
    def text(self) -> str:
        return f"{self.genre}: {self.choreo_style}"


@dataclass_json
@dataclass
class ItemLabel:
    """JSON sidecar written next to every corpus item."""
    genre: str
    choreo_style: str
    tempo: float


@dataclass_json
@dataclass
class MetricReport:
    """Result of one metric over a set of sequences."""
    metric: str
    value: float
    n: int
    params: Dict[str, Any] = field(default_factory=dict)


@dataclass_json
@dataclass
class RunManifest:
    """Everything needed to reproduce a command's outputs."""
    command: str
    config: Dict[str, Any]
    seed: int
    started_at: str
    finished_at: str = ""
    input_hashes: Dict[str, str] = field(default_factory=dict)
    outputs: List[str] = field(default_factory=list)
    metrics: Dict[str, float] = field(default_factory=dict)
    args: Dict[str, Any] = field(default_factory=dict)


@dataclass
class EvaluationResult:
    """Complete evaluation result for a directory of generated dances."""
    reports: Dict[str, MetricReport]
    per_item_bas: Dict[str, float]
    warnings: List[str]
    source: Optional[str] = None
