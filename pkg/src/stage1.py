"""
Stage-1 dance generator: the conditioned denoiser network, its training loop,
constrained sampling and initial-pose extraction.
"""
import logging
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from . import gradkernels as gk
from .config import AlignConfig, DiffusionConfig, EncoderConfig, GENRES, TrainConfig
from .diffusion import DiffusionSchedule, forward_noise, stitch_generate
from .encoders import (
    CONDITION_DIM, GenreModel, MotionTune, StyleController,
    build_condition, classify_genre, resolve_style, token_matrix,
)
from .errors import BadCorpus, ShapeMismatch
from .gradkernels import Adam, Rng, Tensor
from .interfaces import DenoiserInterface
from .layers import FiLM, LayerNorm, Linear, MLP, Module, MultiHeadAttention
from .losses import l_ac, l_basic
from .models import (
    NUM_CONTACTS, POSE_DIM, AudioClip, ConditionEmbedding, CorpusItem,
    Keypoints2D, LossWeights, MotionSequence, PoseVector, SkeletonModel,
)
from .posemath import default_skeleton, pose_pack, pose_unpack
from .shapealign import fit_keypoints

logger = logging.getLogger(__name__)

NUM_BLOCKS = 4


def sinusoidal_embedding(positions: np.ndarray, dim: int) -> np.ndarray:
    positions = np.asarray(positions, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    args = positions[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=-1)


class AttentionBlock(Module):
    """Self-attention, cross-attention and MLP sub-layers, each FiLM-modulated."""

    def __init__(self, dim: int, heads: int, cond_dim: int, rng: Rng):
        self.ln_self = LayerNorm(dim)
        self.self_attn = MultiHeadAttention(dim, heads, rng.child("self"))
        self.film_self = [FiLM(cond_dim, dim, rng.child(f"film_self{i}")) for i in range(2)]
        self.ln_cross = LayerNorm(dim)
        self.cross_attn = MultiHeadAttention(dim, heads, rng.child("cross"))
        self.film_cross = [FiLM(cond_dim, dim, rng.child(f"film_cross{i}")) for i in range(2)]
        self.ln_mlp = LayerNorm(dim)
        self.mlp = MLP([dim, 2 * dim, dim], rng.child("mlp"))
        self.film_mlp = FiLM(cond_dim, dim, rng.child("film_mlp"))

    def __call__(self, x: Tensor, cond: Tensor, tokens: Tensor) -> Tensor:
        h = self.self_attn(self.ln_self(x))
        for film in self.film_self:
            h = film(h, cond)
        x = x + h
        h = self.cross_attn(self.ln_cross(x), tokens)
        for film in self.film_cross:
            h = film(h, cond)
        x = x + h
        return x + self.film_mlp(self.mlp(self.ln_mlp(x)), cond)


class DenoiserNet(Module, DenoiserInterface):
    """Predicts the clean pose sequence from z_t, t and the condition e."""

    def __init__(self, cfg: Optional[TrainConfig] = None, rng: Optional[Rng] = None,
                 cond_dim: int = CONDITION_DIM):
        cfg = cfg or TrainConfig()
        rng = rng or Rng(cfg.seed, "denoiser")
        dim = cfg.model_dim
        self.dim = dim
        self.cond_dim = cond_dim
        self.input_proj = Linear(POSE_DIM, dim, rng.child("in"))
        self.time_mlp = MLP([dim, dim, dim], rng.child("time"))
        half = cond_dim // 2
        self.cond_tokens = [Linear(half, dim, rng.child("tok_music")),
                            Linear(cond_dim - half, dim, rng.child("tok_style"))]
        self.blocks = [AttentionBlock(dim, cfg.heads, dim + cond_dim, rng.child(f"block{i}"))
                       for i in range(NUM_BLOCKS)]
        self.final_norm = LayerNorm(dim)
        self.output_proj = Linear(dim, POSE_DIM, rng.child("out"))

    def forward(self, z_t, t: Union[int, Sequence[int], np.ndarray], e) -> Tensor:
        """z_t: (B, N, 151); t: (B,); e: (B, 128) -> (B, N, 151)."""
        z_t = gk.as_tensor(z_t)
        e = gk.as_tensor(e)
        if z_t.ndim != 3 or z_t.shape[-1] != POSE_DIM:
            raise ShapeMismatch(f"Expected (B, N, {POSE_DIM}) input, got {z_t.shape}")
        batch, frames = z_t.shape[0], z_t.shape[1]
        if e.shape != (batch, self.cond_dim):
            raise ShapeMismatch(f"Condition must be ({batch}, {self.cond_dim}), got {e.shape}")
        t = np.broadcast_to(np.asarray(t, dtype=np.float64).reshape(-1), (batch,))

        h = self.input_proj(z_t) + sinusoidal_embedding(np.arange(frames), self.dim)
        t_emb = self.time_mlp(sinusoidal_embedding(t, self.dim))
        cond = gk.concat([t_emb, e], axis=-1)
        half = self.cond_dim // 2
        tokens = gk.stack([self.cond_tokens[0](e[:, :half]), self.cond_tokens[1](e[:, half:])], axis=1)
        for block in self.blocks:
            h = block(h, cond, tokens)
        out = self.output_proj(self.final_norm(h))
        contacts = gk.sigmoid(out[..., :NUM_CONTACTS])
        return gk.concat([contacts, out[..., NUM_CONTACTS:]], axis=-1)

    def predict_start(self, z_t: np.ndarray, t: int, cond) -> np.ndarray:
        e = cond.vector if isinstance(cond, ConditionEmbedding) else np.asarray(cond, dtype=np.float64)
        return self.forward(np.asarray(z_t)[None], [t], e.reshape(1, -1)).data[0]


def denoise(net: DenoiserNet, z_t: np.ndarray, t: int, e: ConditionEmbedding) -> np.ndarray:
    """Clean-sequence prediction for one (N, 151) latent."""
    z_t = np.asarray(z_t, dtype=np.float64)
    if z_t.ndim != 2 or z_t.shape[1] != POSE_DIM:
        raise ShapeMismatch(f"Expected (N, {POSE_DIM}) latent, got {z_t.shape}")
    return net.predict_start(z_t, t, e)


class ChoreographyModel(Module):
    """Denoiser, style controller and the audio encoders that feed its condition."""

    def __init__(self, cfg: Optional[TrainConfig] = None, genres: Sequence[str] = GENRES,
                 encoder_cfg: Optional[EncoderConfig] = None,
                 motiontune: Optional[MotionTune] = None,
                 genre_model: Optional[GenreModel] = None,
                 diffusion_cfg: Optional[DiffusionConfig] = None):
        self.cfg = cfg or TrainConfig()
        self.diffusion_cfg = diffusion_cfg or DiffusionConfig()
        rng = Rng(self.cfg.seed, "choreography")
        self.net = DenoiserNet(self.cfg, rng.child("denoiser"))
        self.controller = StyleController(rng.child("style"))
        self.motiontune = motiontune or MotionTune(encoder_cfg, seed=self.cfg.seed)
        self.genre_model = genre_model or GenreModel(genres, rng.child("genre"))
        self.schedule = DiffusionSchedule.from_config(self.diffusion_cfg, self.cfg.T)
        self.skel = default_skeleton()

    @property
    def chunk_seeds(self) -> Dict[str, int]:
        """Seeds of the chunk-start draws of the two audio encoders."""
        return {"music": self.motiontune.music.seed, "genre": self.genre_model.seed}

    def restore_chunk_seeds(self, seeds: Dict[str, int]) -> None:
        self.motiontune.music.seed = int(seeds["music"])
        self.genre_model.seed = int(seeds["genre"])

    def condition(self, clip: AudioClip, choreo_style: Optional[str] = None) -> ConditionEmbedding:
        e_m = self.motiontune.encode_music(clip)
        prediction = classify_genre(self.genre_model, clip)
        style = resolve_style(prediction, choreo_style)
        s = self.controller(prediction.e_c, token_matrix(style, self.controller.buckets)).data
        return build_condition(e_m, s)


def _crop(seq: MotionSequence, frames: int, rng: Rng) -> np.ndarray:
    start = int(rng.integers(0, len(seq) - frames + 1))
    return seq.frames[start:start + frames]


def train_stage1(
    corpus: Sequence[CorpusItem],
    cfg: Optional[TrainConfig] = None,
    model: Optional[ChoreographyModel] = None,
) -> Tuple[ChoreographyModel, List[float]]:
    """Train the denoiser and style controller on 5 s windows; returns per-step losses."""
    cfg = cfg or TrainConfig()
    if not corpus:
        raise BadCorpus("Stage-1 training needs a non-empty corpus")
    short = [i for i, item in enumerate(corpus) if len(item.motion) < cfg.clip_frames]
    if short:
        raise BadCorpus(f"Items {short} are shorter than {cfg.clip_frames} frames")
    model = model or ChoreographyModel(cfg)
    schedule = model.schedule
    if schedule.T != cfg.T:
        raise ValueError(f"Model schedule has {schedule.T} steps, training config asks for {cfg.T}")
    weights = LossWeights(cfg.lambda_pos, cfg.lambda_vel, cfg.lambda_foot)

    # encoders are frozen here; only their outputs enter the graph
    e_m = np.stack([model.motiontune.encode_music(item.clip) for item in corpus])
    e_c = np.stack([classify_genre(model.genre_model, item.clip).e_c for item in corpus])
    tokens = [token_matrix(item.text, model.controller.buckets) for item in corpus]

    params = {**{f"net.{k}": v for k, v in model.net.parameters().items()},
              **{f"controller.{k}": v for k, v in model.controller.parameters().items()}}
    optimizer = Adam(params, lr=cfg.lr)
    rng = Rng(cfg.seed, "stage1/train")
    history: List[float] = []
    n = len(corpus)
    batch = min(cfg.batch_size, n)
    steps_per_epoch = int(np.ceil(n / batch))
    logger.info("training stage-1 denoiser on %d sequences, T=%d, objective=%s",
                n, cfg.T, cfg.objective)
    pbar = tqdm(total=cfg.epochs * steps_per_epoch, desc="stage1", disable=not cfg.progress)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for step in range(steps_per_epoch):
            idx = order[step * batch:(step + 1) * batch]
            x0 = np.stack([_crop(corpus[i].motion, cfg.clip_frames, rng) for i in idx])
            t = rng.integers(1, cfg.T + 1, shape=len(idx))
            eps = rng.normal(x0.shape)
            z_t = np.stack([forward_noise(schedule, x0[j], int(t[j]), eps[j]) for j in range(len(idx))])
            styles = gk.stack([model.controller(e_c[i], tokens[i]) for i in idx], axis=0)
            e = gk.concat([e_m[idx], styles], axis=-1)
            x_hat = model.net.forward(z_t, t, e)
            if cfg.objective == "basic":
                loss = l_basic(x0, x_hat)
            else:
                loss = l_ac(x0, x_hat, model.skel, weights)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            history.append(loss.item())
            pbar.update(1)
            pbar.set_postfix({"loss": f"{history[-1]:.4f}"})
    pbar.close()
    logger.info("stage-1 training finished after %d steps: loss %.4f", len(history), history[-1])
    return model, history


def sample_stage1(
    net: DenoiserNet,
    e: ConditionEmbedding,
    init_pose: Optional[PoseVector],
    n_frames: int,
    schedule: DiffusionSchedule,
    rng: Rng,
    cfg: Optional[TrainConfig] = None,
    overlap: int = 75,
) -> MotionSequence:
    """Reverse chain from noise; frame 0 is pinned to ``init_pose`` when given."""
    cfg = cfg or TrainConfig()
    if n_frames < 1:
        raise ValueError(f"Invalid frame count: {n_frames}")
    tail = None
    if init_pose is not None:
        tail = MotionSequence(frames=pose_pack(init_pose)[None, :], fps=cfg.fps)
    return stitch_generate(schedule, net, e, tail, n_frames, rng,
                           clip_frames=cfg.clip_frames, overlap=overlap, fps=cfg.fps)


def extract_initial_pose(
    reference: Union[Keypoints2D, MotionSequence],
    skel: Optional[SkeletonModel] = None,
    align_cfg: Optional[AlignConfig] = None,
) -> PoseVector:
    """Frame 0 of a sequence, or a pose fitted to 2D keypoints."""
    if isinstance(reference, MotionSequence):
        return pose_unpack(reference.frames[0])
    return fit_keypoints(reference, skel or default_skeleton(), align_cfg or AlignConfig())
