"""
Seeded synthetic music/dance corpus.

Each item pairs a click track with a dance whose joints swing in phase with the
clicks, so every joint is momentarily still on a beat. Genres differ in tempo,
timbre and which joints move; choreography styles add their own accents.
"""
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .config import CHOREO_STYLES, GENRES, AudioConfig
from .errors import BadCorpus, IoError
from .fileio import read_beats, read_label, read_motion, read_wav, write_beats, write_label, write_motion, write_wav
from .gradkernels import Rng
from .models import NUM_CONTACTS, NUM_JOINTS, POSE_DIM, ROOT_OFFSET, AudioClip, CorpusItem, ItemLabel, MotionSequence
from .posemath import axis_angle_to_matrix, contact_labels_from_motion, default_skeleton, matrix_to_rot6d

logger = logging.getLogger(__name__)

# beats per second
GENRE_TEMPOS: Dict[str, float] = {
    "Break": 110 / 60, "Pop": 100 / 60, "Lock": 120 / 60, "Middle Hip-hop": 90 / 60,
    "LA Hip-hop": 95 / 60, "House": 125 / 60, "Waack": 130 / 60, "Krump": 140 / 60,
    "Street Jazz": 105 / 60, "Ballet Jazz": 80 / 60,
}
TEMPO_JITTER = 0.04
MIN_ONSET = 0.25
CLICK_SECONDS = 0.04
ACTIVE_JOINTS = 8
ROOT_HEIGHT = 0.9


def genre_slug(genre: str) -> str:
    return genre.lower().replace(" ", "-")


def _timbre_hz(genre: str, genres: Sequence[str]) -> float:
    index = list(genres).index(genre) if genre in genres else 0
    return float(np.geomspace(300.0, 3000.0, max(len(genres), 2))[index])


def _joint_signature(rng: Rng, active: int, low: float, high: float) -> np.ndarray:
    amplitude = np.full(NUM_JOINTS, 0.02)
    joints = 1 + rng.permutation(NUM_JOINTS - 1)[:active]
    amplitude[joints] = rng.uniform(low, high, shape=active)
    return amplitude


def _axes(rng: Rng) -> np.ndarray:
    axes = rng.normal((NUM_JOINTS, 3))
    return axes / np.linalg.norm(axes, axis=1, keepdims=True)


def synth_click_track(duration: float, tempo: float, onset: float, timbre_hz: float,
                      intensity: float, rng: Rng, sample_rate: int) -> AudioClip:
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    fade = np.clip(t / 0.2, 0.0, 1.0)
    samples = 0.05 * intensity * fade * np.sin(2 * np.pi * 0.5 * timbre_hz * t)

    click_n = int(CLICK_SECONDS * sample_rate)
    ct = np.arange(click_n) / sample_rate
    burst = rng.normal(click_n) * (ct < 0.005)
    click = intensity * 0.6 * np.exp(-ct / 0.008) * (np.sin(2 * np.pi * timbre_hz * ct) + 0.5 * burst)
    for beat in beat_times(duration, tempo, onset):
        start = int(round(beat * sample_rate))
        end = min(n, start + click_n)
        samples[start:end] += click[:end - start]
    return AudioClip(np.clip(samples, -1.0, 1.0), sample_rate)


def beat_times(duration: float, tempo: float, onset: float) -> np.ndarray:
    return np.arange(onset, duration - 1e-9, 1.0 / tempo)


def synth_dance(duration: float, tempo: float, onset: float, amplitude: np.ndarray,
                axes: np.ndarray, intensity: float, fps: int) -> MotionSequence:
    """Joint angles a_j cos(pi f (t - t0)): speed vanishes exactly on every beat."""
    n = int(round(duration * fps))
    t = np.arange(n) / fps
    phase = np.cos(np.pi * tempo * (t - onset))
    angles = intensity * amplitude[None, :, None] * axes[None, :, :] * phase[:, None, None]
    rots = matrix_to_rot6d(axis_angle_to_matrix(angles))
    frames = np.zeros((n, POSE_DIM))
    frames[:, NUM_CONTACTS:ROOT_OFFSET] = rots.reshape(n, -1)
    frames[:, ROOT_OFFSET + 1] = ROOT_HEIGHT + 0.03 * intensity * phase
    frames[:, :NUM_CONTACTS] = contact_labels_from_motion(default_skeleton(), frames, fps)
    return MotionSequence(frames=frames, fps=fps)


def build_corpus(
    genres: Sequence[str] = GENRES,
    per_genre: int = 4,
    seed: int = 0,
    duration: float = 6.0,
    fps: int = 30,
    sample_rate: Optional[int] = None,
    tempos: Optional[Dict[str, float]] = None,
) -> List[CorpusItem]:
    """In-memory corpus; ``tempos`` overrides the per-genre beat rate in Hz."""
    genres = list(genres)
    if len(genres) < 2 or per_genre < 2:
        raise BadCorpus(f"Need at least 2 genres and 2 items per genre, got {len(genres)} x {per_genre}")
    sample_rate = sample_rate or AudioConfig().sample_rate
    tempos = {**GENRE_TEMPOS, **(tempos or {})}
    root = Rng(seed, "corpus")
    items = []
    for genre in genres:
        g_rng = root.child(f"genre/{genre}")
        base_amp = _joint_signature(g_rng.child("amplitude"), ACTIVE_JOINTS, 0.1, 0.3)
        axes = _axes(g_rng.child("axes"))
        styles = CHOREO_STYLES.get(genre, ["basic"])
        style_amp = {s: _joint_signature(g_rng.child(f"style/{s}"), 3, 0.05, 0.15) for s in styles}
        for i in range(per_genre):
            rng = g_rng.child(f"item{i}")
            style = styles[i % len(styles)]
            tempo = tempos.get(genre, 1.5) * (1.0 + rng.uniform(-TEMPO_JITTER, TEMPO_JITTER))
            onset = round(rng.uniform(MIN_ONSET, MIN_ONSET + 0.25) * fps) / fps
            intensity = float(rng.uniform(0.6, 1.0))
            clip = synth_click_track(duration, tempo, onset, _timbre_hz(genre, genres),
                                     intensity, rng.child("audio"), sample_rate)
            motion = synth_dance(duration, tempo, onset, base_amp + style_amp[style], axes, intensity, fps)
            items.append(CorpusItem(clip=clip, motion=motion, genre=genre, choreo_style=style, tempo=float(tempo),
                                    beats=beat_times(duration, tempo, onset)))
    logger.info("built %d synthetic items over %d genres", len(items), len(genres))
    return items


def item_stem(item: CorpusItem, index: int) -> str:
    return f"{genre_slug(item.genre)}_{index:03d}"


def gen_corpus(
    genres: Sequence[str],
    per_genre: int,
    seed: int,
    out_dir: Union[str, Path],
    tempos: Optional[Dict[str, float]] = None,
    **kwargs,
) -> List[Path]:
    """Write WAV, motion file, label and beat sidecars per item; returns the motion paths."""
    out = Path(out_dir)
    items = build_corpus(genres, per_genre, seed, tempos=tempos, **kwargs)
    counters: Dict[str, int] = {}
    written = []
    for item in items:
        index = counters.get(item.genre, 0)
        counters[item.genre] = index + 1
        stem = item_stem(item, index)
        write_wav(out / f"{stem}.wav", item.clip)
        written.append(write_motion(out / f"{stem}.chor", item.motion))
        write_label(out / f"{stem}.json", ItemLabel(item.genre, item.choreo_style, item.tempo))
        if item.beats is not None:
            write_beats(out / f"{stem}.beats.json", item.beats)
    logger.info("wrote %d items to %s", len(written), out)
    return written


def load_corpus(data_dir: Union[str, Path], sample_rate: Optional[int] = None) -> List[CorpusItem]:
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise IoError(f"Corpus directory {data_dir} does not exist")
    items = []
    for chor in sorted(data_dir.glob("*.chor")):
        label = read_label(chor.with_suffix(".json"))
        clip = read_wav(chor.with_suffix(".wav"), sample_rate)
        beats_path = chor.with_suffix(".beats.json")
        beats = read_beats(beats_path) if beats_path.exists() else None
        items.append(CorpusItem(clip=clip, motion=read_motion(chor), genre=label.genre,
                                choreo_style=label.choreo_style, tempo=label.tempo, beats=beats))
    if not items:
        raise BadCorpus(f"No motion files in {data_dir}")
    logger.info("loaded %d items from %s", len(items), data_dir)
    return items
