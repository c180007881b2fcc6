"""
Audio ingestion, log-mel features, onset/beat detection and the
variable-length chunking and fusion used by the style controller.
"""
import logging
from typing import Callable, List, Optional, Sequence, Union

import librosa
import numpy as np
from scipy.interpolate import interp1d
from scipy.signal import find_peaks

from . import gradkernels as gk
from .config import AudioConfig
from .errors import ShapeMismatch, TooShort
from .gradkernels import Rng, Tensor
from .layers import StrideMerge
from .models import AudioClip, ChunkSet, SpectralFeatures

logger = logging.getLogger(__name__)

LOG_FLOOR = 1e-10
ENVELOPE_FLOOR = 0.05
# flux index k compares frames k and k+1; a click enters the centred window
# of frame k+1 about two hops before its own frame
ONSET_LAG_FRAMES = 3


def resample_linear(clip: AudioClip, target_rate: int) -> AudioClip:
    """Linear-interpolation resampling, also used for multi-rate WAV input."""
    if clip.sample_rate == target_rate:
        return clip
    n_out = max(1, int(round(clip.samples.shape[0] * target_rate / clip.sample_rate)))
    src_t = np.arange(clip.samples.shape[0]) / clip.sample_rate
    dst_t = np.arange(n_out) / target_rate
    return AudioClip(np.interp(dst_t, src_t, clip.samples), target_rate)


def _prepared(clip: AudioClip, cfg: AudioConfig) -> AudioClip:
    if clip.samples.size == 0:
        raise TooShort("Audio clip is empty")
    return resample_linear(clip, cfg.sample_rate)


def log_mel(clip: AudioClip, cfg: Optional[AudioConfig] = None) -> SpectralFeatures:
    cfg = cfg or AudioConfig()
    clip = _prepared(clip, cfg)
    mel = librosa.feature.melspectrogram(
        y=clip.samples.astype(np.float64), sr=cfg.sample_rate, n_fft=cfg.n_fft,
        hop_length=cfg.hop, n_mels=cfg.n_mels, center=True, pad_mode="constant",
    )
    values = np.log(np.maximum(mel, LOG_FLOOR)).T
    return SpectralFeatures(values=values, hop=cfg.hop, frame_rate=cfg.sample_rate / cfg.hop)


def onset_envelope(clip: AudioClip, cfg: Optional[AudioConfig] = None) -> np.ndarray:
    """Half-wave-rectified log-mel flux, one value per consecutive frame pair."""
    cfg = cfg or AudioConfig()
    feats = log_mel(clip, cfg)
    if feats.num_frames < 2:
        raise TooShort(f"Need at least 2 feature frames, got {feats.num_frames}")
    flux = np.diff(feats.values, axis=0)
    return np.maximum(flux, 0.0).mean(axis=1)


def detect_beats(clip: AudioClip, cfg: Optional[AudioConfig] = None) -> List[float]:
    """Peak-picked onset times in seconds, at least ``min_beat_gap`` apart."""
    cfg = cfg or AudioConfig()
    clip = _prepared(clip, cfg)
    if clip.duration < 1.0:
        raise TooShort(f"Beat detection needs at least 1 s of audio, got {clip.duration:.3f} s")
    env = onset_envelope(clip, cfg)
    if not np.any(env > 0):
        return []
    threshold = max(env.mean() + env.std(), ENVELOPE_FLOOR)
    gap = int(np.ceil(cfg.min_beat_gap * cfg.sample_rate / cfg.hop))
    peaks, _ = find_peaks(env, height=threshold, distance=gap)

    samples = np.abs(clip.samples)
    half = cfg.n_fft // 2
    times = []
    for k in peaks:
        # refine inside the window where the onset first appears
        centre = (k + 1) * cfg.hop
        lo, hi = max(0, centre - half), min(samples.shape[0], centre + half)
        if hi > lo:
            t = (lo + int(np.argmax(samples[lo:hi]))) / cfg.sample_rate
        else:
            t = (k + ONSET_LAG_FRAMES) * cfg.hop / cfg.sample_rate
        times.append(float(np.clip(t, 0.0, clip.duration)))
    times = sorted(set(times))
    logger.debug("detected %d beats in %.2f s of audio", len(times), clip.duration)
    return times


def chunk_for_fusion(
    clip: AudioClip,
    d: Optional[float] = None,
    rng: Optional[Rng] = None,
    cfg: Optional[AudioConfig] = None,
) -> ChunkSet:
    """Global view compressed to d seconds plus one d-second slice per third."""
    cfg = cfg or AudioConfig()
    d = cfg.chunk_seconds if d is None else d
    rng = rng or Rng(0, "chunk")
    clip = _prepared(clip, cfg)
    sr = cfg.sample_rate
    frame_rate = sr / cfg.hop
    d_frames = int(round(d * frame_rate))
    d_samples = int(round(d * sr))
    n_samples = clip.samples.shape[0]

    if n_samples <= d_samples:
        repeats = max(1, int(np.floor(d_samples / n_samples)))
        wave = np.tile(clip.samples, repeats)
        pad = d_samples - wave.shape[0]
        wave = np.concatenate([wave, np.zeros(pad)])
        feats = log_mel(AudioClip(wave, sr), cfg).values[:d_frames]
        block = SpectralFeatures(values=feats, hop=cfg.hop, frame_rate=frame_rate)
        return ChunkSet(
            global_view=block,
            locals=[SpectralFeatures(feats.copy(), cfg.hop, frame_rate) for _ in range(3)],
            repeats=repeats,
            pad_frames=int(round(pad / cfg.hop)),
            local_starts=[0, 0, 0],
        )

    full = log_mel(clip, cfg).values
    n = full.shape[0]
    src = np.linspace(0.0, 1.0, n)
    dst = np.linspace(0.0, 1.0, d_frames)
    global_feats = interp1d(src, full, axis=0)(dst)
    third = n / 3.0
    starts = []
    for i in range(3):
        lo, hi = int(np.floor(i * third)), max(int(np.floor((i + 1) * third)), int(np.floor(i * third)) + 1)
        start = int(rng.integers(lo, hi))
        starts.append(min(start, n - d_frames))
    locals_ = [SpectralFeatures(full[s:s + d_frames].copy(), cfg.hop, frame_rate) for s in starts]
    return ChunkSet(
        global_view=SpectralFeatures(global_feats, cfg.hop, frame_rate),
        locals=locals_,
        local_starts=starts,
    )


BlockLike = Union[np.ndarray, Tensor, SpectralFeatures]


def _block(x: BlockLike) -> Tensor:
    return gk.as_tensor(x.values if isinstance(x, SpectralFeatures) else x)


def merge_locals(locals_: Sequence[BlockLike], merge: Optional[StrideMerge] = None) -> Tensor:
    """Interleave three blocks along time and reduce them with a stride-3 kernel."""
    blocks = [_block(b) for b in locals_]
    if len(blocks) != 3 or len({b.shape for b in blocks}) != 1 or blocks[0].ndim < 2:
        raise ShapeMismatch(f"merge_locals needs 3 equal blocks, got {[b.shape for b in blocks]}")
    merge = merge or StrideMerge(3)
    *lead, n, bands = blocks[0].shape
    interleaved = gk.reshape(gk.stack(blocks, axis=-2), tuple(lead) + (3 * n, bands))
    return merge(interleaved)


def fuse_features(
    global_view: BlockLike,
    local_merged: BlockLike,
    gate: Callable[[Tensor, Tensor], Tensor],
) -> Tensor:
    """alpha * global + (1 - alpha) * local with alpha from the gate."""
    g, l = _block(global_view), _block(local_merged)
    if g.shape != l.shape:
        raise ShapeMismatch(f"fuse_features: global {g.shape} vs local {l.shape}")
    alpha = gk.as_tensor(gate(g, l))
    return alpha * g + (1.0 - alpha) * l


def spectral_statistics(
    clip: AudioClip,
    bpm_grid: np.ndarray,
    cfg: Optional[AudioConfig] = None,
) -> np.ndarray:
    """Tempo autocorrelation on a BPM grid, loudness and brightness summaries."""
    cfg = cfg or AudioConfig()
    clip = _prepared(clip, cfg)
    env = onset_envelope(clip, cfg)
    frame_rate = cfg.sample_rate / cfg.hop
    tempo = tempo_profile(env, frame_rate, bpm_grid)
    rms = librosa.feature.rms(y=clip.samples, frame_length=cfg.n_fft, hop_length=cfg.hop)[0]
    centroid = librosa.feature.spectral_centroid(
        y=clip.samples, sr=cfg.sample_rate, n_fft=cfg.n_fft, hop_length=cfg.hop,
    )[0]
    loudness = np.array([np.log(rms.mean() + 1e-6), np.log(rms.std() + 1e-6)])
    brightness = np.array([np.log(np.median(centroid) + 1.0) - 7.0, env.mean()])
    return np.concatenate([tempo, loudness, brightness])


def tempo_profile(envelope: np.ndarray, frame_rate: float, bpm_grid: np.ndarray) -> np.ndarray:
    """Normalised autocorrelation of an envelope sampled at the given tempi."""
    env = envelope - envelope.mean()
    ac = librosa.autocorrelate(env)
    if ac[0] <= 0:
        return np.zeros(len(bpm_grid))
    ac = ac / ac[0]
    lags = 60.0 * frame_rate / np.asarray(bpm_grid, dtype=np.float64)
    return np.interp(lags, np.arange(ac.shape[0]), ac, right=0.0)


def bpm_grid(points: int = 40, low: float = 60.0, high: float = 180.0) -> np.ndarray:
    return np.geomspace(low, high, points)
