"""
Configuration for every subsystem, with JSON persistence and env overrides.
"""
import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Union

from dataclasses_json import dataclass_json

from .errors import IoError

SEED_ENV = "CHOREO_SEED"

GENRES: List[str] = [
    "Break", "Pop", "Lock", "Middle Hip-hop", "LA Hip-hop",
    "House", "Waack", "Krump", "Street Jazz", "Ballet Jazz",
]

CHOREO_STYLES = {
    "Break": ["toprock", "footwork", "freeze"],
    "Pop": ["hand wave", "body wave", "robot"],
    "Lock": ["point", "wrist roll", "lock"],
    "Middle Hip-hop": ["bounce", "rock", "groove"],
    "LA Hip-hop": ["slide", "hit", "glide"],
    "House": ["walk out", "jacking", "shuffle"],
    "Waack": ["arm whip", "pose", "strut"],
    "Krump": ["stomp", "chest pop", "arm swing"],
    "Street Jazz": ["kick", "turn", "sway"],
    "Ballet Jazz": ["pirouette", "leap", "extension"],
}


@dataclass_json
@dataclass
class AudioConfig:
    sample_rate: int = 48000
    n_mels: int = 64
    n_fft: int = 2048
    hop: int = 480
    chunk_seconds: float = 5.0
    min_beat_gap: float = 0.25


@dataclass_json
@dataclass
class DiffusionConfig:
    """Noise schedule family and overlap of stitched windows; the chain length is TrainConfig.T."""
    schedule: str = "cosine"
    overlap_frames: int = 75


@dataclass_json
@dataclass
class EncoderConfig:
    embed_dim: int = 64
    hidden_dim: int = 64
    text_buckets: int = 256
    tau0: float = 0.07
    tau_min: float = 0.01
    tau_max: float = 1.0
    epochs: int = 60
    batch_size: int = 64
    lr: float = 3e-3
    classifier_epochs: int = 200
    classifier_lr: float = 1e-2
    use_motiontune: bool = True
    progress: bool = False


@dataclass_json
@dataclass
class TrainConfig:
    """Stage-1 training settings."""
    clip_frames: int = 150
    fps: int = 30
    T: int = 50
    batch_size: int = 4
    epochs: int = 50
    lr: float = 1e-3
    lambda_pos: float = 1.0
    lambda_vel: float = 1.0
    lambda_foot: float = 1.0
    objective: str = "ac"
    model_dim: int = 64
    heads: int = 4
    seed: int = 0
    progress: bool = False

    def __post_init__(self):
        if self.clip_frames != int(round(5 * self.fps)):
            raise ValueError(
                f"Clip length {self.clip_frames} must be 5 s at {self.fps} fps"
            )
        if self.objective not in ("ac", "basic"):
            raise ValueError(f"Unknown objective: {self.objective}")


@dataclass_json
@dataclass
class AlignConfig:
    lambda_kpt: float = 1.0
    lambda_sil: float = 1e-3
    iters: int = 200
    raster_size: int = 96
    pixels_per_meter: float = 50.0
    base_radius: float = 0.08
    soft_temperature: float = 1.0
    step_size: float = 1e-3
    patience: int = 50


@dataclass_json
@dataclass
class MetricConfig:
    sigma: float = 0.1
    beat_window: int = 5
    alpha: float = 1.0
    standardize: bool = True
    calibrate: bool = False  # fit alpha to the reference spread


@dataclass_json
@dataclass
class ChoreoConfig:
    """Root configuration."""
    seed: int = 0
    fps: int = 30
    genres: List[str] = field(default_factory=lambda: list(GENRES))
    audio: AudioConfig = field(default_factory=AudioConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    align: AlignConfig = field(default_factory=AlignConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)

    @classmethod
    def load(cls, path: Optional[Union[str, Path]]) -> "ChoreoConfig":
        """Read a JSON config; keys not present keep their defaults."""
        if path is None:
            return cls()
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise IoError(f"Cannot read config {path}: {e}") from e
        merged = cls().to_dict()
        for key, value in raw.items():
            if isinstance(value, dict) and isinstance(merged.get(key), dict):
                merged[key].update(value)
            else:
                merged[key] = value
        return cls.from_dict(merged)

    def with_env_overrides(self) -> "ChoreoConfig":
        value = os.environ.get(SEED_ENV)
        if value is None or value.strip() == "":
            return self
        try:
            seed = int(value)
        except ValueError:
            raise ValueError(f"{SEED_ENV} must be an integer, got {value!r}")
        return replace(self, seed=seed, train=replace(self.train, seed=seed))

    def styles_for(self, genre: str) -> List[str]:
        if genre not in CHOREO_STYLES:
            raise ValueError(f"Unknown genre: {genre}")
        return CHOREO_STYLES[genre]
