"""
DDPM schedule, forward noising, x-prediction reverse steps, masked
constraints and overlap stitching for arbitrary-length generation.
"""
import logging
from typing import Any, Optional

import numpy as np

from .config import DiffusionConfig
from .errors import BadOverlap, ShapeMismatch, StepOutOfRange
from .gradkernels import Rng
from .interfaces import DenoiserInterface
from .models import POSE_DIM, MotionSequence

logger = logging.getLogger(__name__)

BETA_MIN = 1e-4
BETA_MAX = 0.999


class DiffusionSchedule:
    """Cumulative signal levels alpha_bar[0..T] with alpha_bar[0] = 1."""

    def __init__(self, betas: np.ndarray):
        betas = np.clip(np.asarray(betas, dtype=np.float64), BETA_MIN, BETA_MAX)
        self.betas = np.concatenate([[0.0], betas])
        self.alphas = 1.0 - self.betas
        self.alpha_bar = np.cumprod(self.alphas)
        self.alpha_bar[0] = 1.0

    @classmethod
    def cosine(cls, T: int = 1000, s: float = 0.008) -> "DiffusionSchedule":
        t = np.linspace(0, T, T + 1)
        f = np.cos((t / T + s) / (1 + s) * (np.pi / 2)) ** 2
        return cls(1.0 - f[1:] / f[:-1])

    @classmethod
    def linear(cls, T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> "DiffusionSchedule":
        # betas are rescaled so short chains still end near pure noise
        scale = 1000.0 / T
        return cls(np.linspace(beta_start * scale, min(beta_end * scale, BETA_MAX), T))

    @classmethod
    def from_config(cls, cfg: DiffusionConfig, steps: int) -> "DiffusionSchedule":
        if cfg.schedule == "cosine":
            return cls.cosine(steps)
        if cfg.schedule == "linear":
            return cls.linear(steps)
        raise ValueError(f"Unknown schedule: {cfg.schedule}")

    @property
    def T(self) -> int:
        return len(self.betas) - 1

    def check_step(self, t: int, low: int = 0) -> None:
        if not low <= t <= self.T:
            raise StepOutOfRange(f"Step {t} outside [{low}, {self.T}]")

    def snr(self, t: int) -> float:
        self.check_step(t, low=1)
        return float(self.alpha_bar[t] / (1.0 - self.alpha_bar[t]))

    def posterior_variance(self, t: int) -> float:
        self.check_step(t, low=1)
        return float(self.betas[t] * (1.0 - self.alpha_bar[t - 1]) / (1.0 - self.alpha_bar[t]))


def forward_noise(schedule: DiffusionSchedule, z0: np.ndarray, t: int, eps: np.ndarray) -> np.ndarray:
    """z_t = sqrt(alpha_bar_t) z0 + sqrt(1 - alpha_bar_t) eps."""
    schedule.check_step(t)
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if z0.shape != eps.shape:
        raise ShapeMismatch(f"noise shape {eps.shape} vs sample shape {z0.shape}")
    ab = schedule.alpha_bar[t]
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


def posterior_mean(schedule: DiffusionSchedule, z_t: np.ndarray, t: int, x_hat: np.ndarray) -> np.ndarray:
    schedule.check_step(t, low=1)
    ab_t, ab_prev = schedule.alpha_bar[t], schedule.alpha_bar[t - 1]
    beta_t, alpha_t = schedule.betas[t], schedule.alphas[t]
    coef_x = np.sqrt(ab_prev) * beta_t / (1.0 - ab_t)
    coef_z = np.sqrt(alpha_t) * (1.0 - ab_prev) / (1.0 - ab_t)
    return coef_x * x_hat + coef_z * z_t


def reverse_step_xpred(
    schedule: DiffusionSchedule,
    z_t: np.ndarray,
    t: int,
    x_hat: np.ndarray,
    noise: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Draw z_{t-1} from q(z_{t-1} | z_t, x_hat); zero noise gives the mean."""
    schedule.check_step(t, low=1)
    z_t = np.asarray(z_t, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if z_t.shape != x_hat.shape:
        raise ShapeMismatch(f"prediction shape {x_hat.shape} vs latent shape {z_t.shape}")
    if t == 1:
        # alpha_bar_0 = 1, so the posterior collapses onto the prediction
        return x_hat.copy()
    mean = posterior_mean(schedule, z_t, t, x_hat)
    if noise is None:
        return mean
    return mean + np.sqrt(schedule.posterior_variance(t)) * noise


def masked_constrain(
    schedule: DiffusionSchedule,
    x_tm1: np.ndarray,
    x_start: np.ndarray,
    mask: np.ndarray,
    t: int,
    eps: np.ndarray,
) -> np.ndarray:
    """Replace known coordinates with a fresh forward sample of x_start at t-1."""
    schedule.check_step(t, low=1)
    x_tm1 = np.asarray(x_tm1, dtype=np.float64)
    x_start = np.asarray(x_start, dtype=np.float64)
    mask = np.asarray(mask)
    if not (x_tm1.shape == x_start.shape == mask.shape):
        raise ShapeMismatch(
            f"masked_constrain shapes: latent {x_tm1.shape}, start {x_start.shape}, mask {mask.shape}"
        )
    known = forward_noise(schedule, x_start, t - 1, eps)
    return np.where(mask.astype(bool), known, x_tm1)


def p_sample_loop(
    schedule: DiffusionSchedule,
    denoiser: DenoiserInterface,
    cond: Any,
    n_frames: int,
    rng: Rng,
    x_start: Optional[np.ndarray] = None,
    mask: Optional[np.ndarray] = None,
    dim: int = POSE_DIM,
) -> np.ndarray:
    """Full reverse chain from Gaussian noise, constraining each step when a mask is given."""
    if n_frames < 1:
        raise ValueError(f"Invalid frame count: {n_frames}")
    constrained = mask is not None and x_start is not None and np.any(mask)
    z = rng.normal((n_frames, dim))
    for t in range(schedule.T, 0, -1):
        x_hat = np.asarray(denoiser.predict_start(z, t, cond), dtype=np.float64)
        noise = rng.normal(z.shape) if t > 1 else None
        z = reverse_step_xpred(schedule, z, t, x_hat, noise)
        if constrained:
            z = masked_constrain(schedule, z, x_start, mask, t, rng.normal(z.shape))
    return z


def stitch_generate(
    schedule: DiffusionSchedule,
    denoiser: DenoiserInterface,
    cond: Any,
    prev_tail: Optional[MotionSequence],
    total_frames: int,
    rng: Rng,
    clip_frames: int = 150,
    overlap: int = 75,
    fps: int = 30,
) -> MotionSequence:
    """Generate ``total_frames`` by chaining clips whose heads repeat the previous tail.

    The first clip's leading frames are constrained to ``prev_tail`` when one
    is given; those frames stay in the output. Every later clip is sampled
    with its first ``overlap`` frames masked to the last ``overlap`` output
    frames and only its remaining frames are appended.
    """
    if total_frames < 1:
        raise ValueError(f"Invalid frame count: {total_frames}")
    if not 0 < overlap < clip_frames:
        raise BadOverlap(f"Overlap {overlap} must lie in (0, {clip_frames})")
    tail = None if prev_tail is None or len(prev_tail) == 0 else prev_tail.frames
    if tail is not None and tail.shape[0] > clip_frames:
        raise BadOverlap(f"Tail of {tail.shape[0]} frames exceeds clip length {clip_frames}")

    first_len = min(total_frames, clip_frames)
    x_start = np.zeros((first_len, POSE_DIM))
    mask = np.zeros_like(x_start)
    if tail is not None:
        k = min(tail.shape[0], first_len)
        x_start[:k] = tail[:k]
        mask[:k] = 1.0
    output = p_sample_loop(schedule, denoiser, cond, first_len, rng.child("clip0"),
                           x_start=x_start, mask=mask)
    clip_index = 1
    while output.shape[0] < total_frames:
        x_start = np.zeros((clip_frames, POSE_DIM))
        mask = np.zeros_like(x_start)
        x_start[:overlap] = output[-overlap:]
        mask[:overlap] = 1.0
        clip = p_sample_loop(schedule, denoiser, cond, clip_frames, rng.child(f"clip{clip_index}"),
                             x_start=x_start, mask=mask)
        output = np.concatenate([output, clip[overlap:]], axis=0)
        clip_index += 1
    logger.debug("stitched %d clips into %d frames", clip_index, total_frames)
    return MotionSequence(frames=output[:total_frames], fps=fps)
