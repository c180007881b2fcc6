"""
Contrastive music/dance encoders, the genre classifier, the dance-side style
classifier and the choreography style controller that produces the
denoiser condition.
"""
import hashlib
import logging
import re
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from . import gradkernels as gk
from .audio import bpm_grid, chunk_for_fusion, fuse_features, merge_locals, spectral_statistics, tempo_profile
from .config import AudioConfig, CHOREO_STYLES, EncoderConfig
from .errors import BadCorpus, EmptyStyle, ShapeMismatch, TooShort
from .gradkernels import Adam, Rng, Tensor
from .interfaces import DanceEncoderInterface, MusicEncoderInterface, StyleClassifierInterface
from .layers import AttentionalFeatureFusion, Linear, MLP, Module, MultiHeadAttention, StrideMerge
from .losses import contrastive_loss
from .models import AudioClip, ConditionEmbedding, CorpusItem, GenrePrediction, MotionSequence, SkeletonModel
from .posemath import default_skeleton, sequence_joints

logger = logging.getLogger(__name__)

EMBED_DIM = 64
CONDITION_DIM = 2 * EMBED_DIM
GENRE_HIDDEN = (64, 32)
E_C_DIM = sum(GENRE_HIDDEN)
MIN_DANCE_FRAMES = 30
MEL_CENTER = -10.0
MEL_SCALE = 5.0
TOKEN_RE = re.compile(r"[a-z0-9]+")


# text
def tokenize(text: str) -> List[str]:
    return TOKEN_RE.findall(text.lower())


def _token_bucket(token: str, buckets: int) -> Tuple[int, float]:
    digest = int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "little")
    return digest % buckets, 1.0 if (digest >> 40) & 1 else -1.0


def hashed_tokens(text: str, buckets: int = 256) -> np.ndarray:
    """Order-free signed bag of hashed tokens."""
    vec = np.zeros(buckets)
    tokens = tokenize(text)
    for token in tokens:
        idx, sign = _token_bucket(token, buckets)
        vec[idx] += sign
    return vec / np.sqrt(len(tokens)) if tokens else vec


def token_matrix(text: str, buckets: int = 256) -> np.ndarray:
    """One hashed row per token, in order."""
    tokens = tokenize(text)
    out = np.zeros((max(len(tokens), 1), buckets))
    for row, token in enumerate(tokens):
        idx, sign = _token_bucket(token, buckets)
        out[row, idx] = sign
    return out


# feature preparation
@dataclass
class MusicInputs:
    """Precomputed fused-branch and statistics-branch inputs for one clip."""
    global_view: np.ndarray  # (F, bands)
    locals: np.ndarray  # (3, F, bands)
    stats: np.ndarray


def prepare_music(
    clip: AudioClip,
    rng: Rng,
    audio_cfg: Optional[AudioConfig] = None,
    grid: Optional[np.ndarray] = None,
) -> MusicInputs:
    audio_cfg = audio_cfg or AudioConfig()
    if clip.duration < 1.0:
        raise TooShort(f"Music encoding needs at least 1 s of audio, got {clip.duration:.3f} s")
    grid = bpm_grid() if grid is None else grid
    chunks = chunk_for_fusion(clip, rng=rng, cfg=audio_cfg)
    scale = lambda v: (v - MEL_CENTER) / MEL_SCALE  # noqa: E731
    return MusicInputs(
        global_view=scale(chunks.global_view.values),
        locals=np.stack([scale(b.values) for b in chunks.locals]),
        stats=spectral_statistics(clip, grid, audio_cfg),
    )


def pose_features(
    seq: MotionSequence,
    skel: Optional[SkeletonModel] = None,
    grid: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Motion tempo profile, per-joint amplitude and per-joint mean speed."""
    if len(seq) < MIN_DANCE_FRAMES:
        raise TooShort(f"Dance encoding needs at least {MIN_DANCE_FRAMES} frames, got {len(seq)}")
    skel = skel or default_skeleton()
    grid = bpm_grid() if grid is None else grid
    joints = sequence_joints(skel, seq.frames)
    rel = joints - joints[:, :1]
    speed = np.linalg.norm(np.gradient(joints, axis=0) * seq.fps, axis=-1)
    tempo = tempo_profile(speed.mean(axis=1), float(seq.fps), grid)
    amplitude = rel.std(axis=0).reshape(-1) * 10.0
    return np.concatenate([tempo, amplitude, speed.mean(axis=0)])


POSE_FEATURE_DIM = len(bpm_grid()) + 24 * 3 + 24
STATS_DIM = len(bpm_grid()) + 4


def _fused_pool(merge: StrideMerge, aff: AttentionalFeatureFusion, global_view, locals_) -> Tensor:
    """Fuse global and merged local views and pool mean and spread over time."""
    local_merged = merge_locals([locals_[..., i, :, :] for i in range(3)], merge)
    fused = fuse_features(global_view, local_merged, aff.gate)
    mean = gk.mean(fused, axis=-2)
    centred = fused - gk.reshape(mean, mean.shape[:-1] + (1, mean.shape[-1]))
    spread = gk.sqrt(gk.mean(gk.square(centred), axis=-2) + 1e-6)
    return gk.layer_norm(gk.concat([mean, spread], axis=-1))


class MusicEncoder(Module, MusicEncoderInterface):
    """Fused log-mel branch plus spectral-statistics branch, projected to a unit vector."""

    def __init__(self, cfg: EncoderConfig, rng: Rng, n_mels: int = 64,
                 audio_cfg: Optional[AudioConfig] = None):
        hidden = cfg.hidden_dim
        self.use_motiontune = cfg.use_motiontune
        self.audio_cfg = audio_cfg or AudioConfig(n_mels=n_mels)
        self.merge = StrideMerge(3)
        self.aff = AttentionalFeatureFusion(n_mels, 16, rng.child("aff"))
        self.mel_mlp = MLP([2 * n_mels, hidden, hidden], rng.child("mel"))
        self.stats_mlp = MLP([STATS_DIM, hidden, hidden], rng.child("stats"))
        head_in = 2 * hidden if self.use_motiontune else hidden
        self.head = MLP([head_in, hidden, cfg.embed_dim], rng.child("head"))
        self.seed = rng.seed

    def prepare(self, clip: AudioClip) -> MusicInputs:
        return prepare_music(clip, Rng(self.seed, "chunk"), self.audio_cfg)

    def forward(self, inputs: Sequence[MusicInputs]) -> Tensor:
        stats = gk.layer_norm(np.stack([i.stats for i in inputs]))
        branches = [self.stats_mlp(stats)]
        if self.use_motiontune:
            g = np.stack([i.global_view for i in inputs])
            l = np.stack([i.locals for i in inputs])
            branches.insert(0, self.mel_mlp(_fused_pool(self.merge, self.aff, g, l)))
        return gk.l2_normalize(self.head(gk.concat(branches, axis=-1)))

    def encode_music(self, clip: AudioClip) -> np.ndarray:
        return self.forward([self.prepare(clip)]).data[0]


class TextEncoder(Module):
    def __init__(self, buckets: int, out_dim: int, rng: Rng):
        self.proj = Linear(buckets, out_dim, rng.child("proj"))
        self.buckets = buckets

    def features(self, texts: Sequence[str]) -> np.ndarray:
        return np.stack([hashed_tokens(t, self.buckets) for t in texts])

    def __call__(self, feats) -> Tensor:
        return self.proj(feats)


class DanceEncoder(Module, DanceEncoderInterface):
    """Pose statistics MLP concatenated with the text embedding, projected to a unit vector."""

    def __init__(self, cfg: EncoderConfig, rng: Rng, skel: Optional[SkeletonModel] = None):
        hidden = cfg.hidden_dim
        self.pose_mlp = MLP([POSE_FEATURE_DIM, hidden, hidden], rng.child("pose"))
        self.text = TextEncoder(cfg.text_buckets, hidden, rng.child("text"))
        self.head = MLP([2 * hidden, hidden, cfg.embed_dim], rng.child("dance"))
        self.skel = skel or default_skeleton()

    def prepare(self, seq: MotionSequence, text: str) -> Tuple[np.ndarray, np.ndarray]:
        return pose_features(seq, self.skel), hashed_tokens(text, self.text.buckets)

    def forward(self, pose_feats: np.ndarray, text_feats: np.ndarray) -> Tensor:
        pose = self.pose_mlp(gk.layer_norm(pose_feats))
        text = self.text(text_feats)
        return gk.l2_normalize(self.head(gk.concat([pose, text], axis=-1)))

    def encode_dance(self, seq: MotionSequence, text: str) -> np.ndarray:
        pose, txt = self.prepare(seq, text)
        return self.forward(pose[None], txt[None]).data[0]


class MotionTune(Module):
    """Paired encoders with a learnable temperature."""

    def __init__(self, cfg: Optional[EncoderConfig] = None, seed: int = 0,
                 audio_cfg: Optional[AudioConfig] = None):
        self.cfg = cfg or EncoderConfig()
        rng = Rng(seed, "motiontune")
        self.music = MusicEncoder(self.cfg, rng.child("music"), audio_cfg=audio_cfg)
        self.dance = DanceEncoder(self.cfg, rng.child("dance"))
        self.log_tau = Tensor(np.log(self.cfg.tau0), requires_grad=True)

    @property
    def tau(self) -> float:
        return float(np.exp(self.log_tau.data))

    def clamp_tau(self) -> None:
        self.log_tau.data = np.clip(self.log_tau.data, np.log(self.cfg.tau_min), np.log(self.cfg.tau_max))

    def encode_music(self, clip: AudioClip) -> np.ndarray:
        return self.music.encode_music(clip)

    def encode_dance(self, seq: MotionSequence, text: str) -> np.ndarray:
        return self.dance.encode_dance(seq, text)

    def loss(self, music_inputs, pose_feats, text_feats) -> Tensor:
        em = self.music.forward(music_inputs)
        ed = self.dance.forward(pose_feats, text_feats)
        return contrastive_loss(em, ed, gk.exp(self.log_tau))


@dataclass
class PreparedCorpus:
    music: List[MusicInputs]
    pose: np.ndarray
    text: np.ndarray


def prepare_corpus(model: MotionTune, corpus: Sequence[CorpusItem]) -> PreparedCorpus:
    music = [model.music.prepare(item.clip) for item in corpus]
    pairs = [model.dance.prepare(item.motion, item.text) for item in corpus]
    return PreparedCorpus(
        music=music,
        pose=np.stack([p for p, _ in pairs]),
        text=np.stack([t for _, t in pairs]),
    )


def train_motiontune(
    corpus: Sequence[CorpusItem],
    epochs: Optional[int] = None,
    tau0: Optional[float] = None,
    cfg: Optional[EncoderConfig] = None,
    seed: int = 0,
) -> Tuple[MotionTune, List[float]]:
    """Minimise the symmetric contrastive loss; returns the model and per-step losses."""
    cfg = cfg or EncoderConfig()
    if tau0 is not None:
        cfg = replace(cfg, tau0=tau0)
    epochs = cfg.epochs if epochs is None else epochs
    if len(corpus) < 8:
        raise BadCorpus(f"Contrastive training needs at least 8 pairs, got {len(corpus)}")
    model = MotionTune(cfg, seed=seed)
    data = prepare_corpus(model, corpus)
    optimizer = Adam(model.parameters(), lr=cfg.lr)
    rng = Rng(seed, "motiontune/batches")
    history: List[float] = []
    logger.info("training contrastive encoders on %d pairs for %d epochs", len(corpus), epochs)
    n = len(corpus)
    batch = min(cfg.batch_size, n)
    pbar = tqdm(range(epochs), desc="motiontune", disable=not cfg.progress)
    for epoch in pbar:
        order = rng.permutation(n)
        for start in range(0, n - batch + 1, batch):
            idx = order[start:start + batch]
            loss = model.loss([data.music[i] for i in idx], data.pose[idx], data.text[idx])
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            model.clamp_tau()
            history.append(loss.item())
        pbar.set_postfix({"loss": f"{history[-1]:.4f}", "tau": f"{model.tau:.3f}"})
        logger.debug("epoch %d loss %.4f tau %.4f", epoch, history[-1], model.tau)
    logger.info("contrastive training finished: loss %.4f", history[-1] if history else float("nan"))
    return model, history


def corpus_loss(model: MotionTune, data: PreparedCorpus) -> float:
    return model.loss(data.music, data.pose, data.text).item()


def retrieval_at_1(model: MotionTune, data: PreparedCorpus) -> float:
    """Fraction of music queries whose nearest dance is their own pair."""
    em = model.music.forward(data.music).data
    ed = model.dance.forward(data.pose, data.text).data
    sims = em @ ed.T
    return float(np.mean(np.argmax(sims, axis=1) == np.arange(sims.shape[0])))


# genre classification
class GenreModel(Module):
    """MLP over pooled fused audio features; last two hidden layers form e_c."""

    def __init__(self, genres: Sequence[str], rng: Rng, n_mels: int = 64,
                 audio_cfg: Optional[AudioConfig] = None):
        self.genres = list(genres)
        self.audio_cfg = audio_cfg or AudioConfig(n_mels=n_mels)
        self.merge = StrideMerge(3)
        self.aff = AttentionalFeatureFusion(n_mels, 16, rng.child("aff"))
        self.hidden1 = Linear(2 * n_mels + STATS_DIM, GENRE_HIDDEN[0], rng.child("h1"))
        self.hidden2 = Linear(GENRE_HIDDEN[0], GENRE_HIDDEN[1], rng.child("h2"))
        self.out = Linear(GENRE_HIDDEN[1], len(self.genres), rng.child("out"), scale=0.0)
        self.seed = rng.seed

    def prepare(self, clip: AudioClip) -> MusicInputs:
        return prepare_music(clip, Rng(self.seed, "chunk"), self.audio_cfg)

    def forward(self, inputs: Sequence[MusicInputs]) -> Tuple[Tensor, Tensor, Tensor]:
        g = np.stack([i.global_view for i in inputs])
        l = np.stack([i.locals for i in inputs])
        pooled = _fused_pool(self.merge, self.aff, g, l)
        stats = gk.layer_norm(np.stack([i.stats for i in inputs]))
        h1 = gk.gelu(self.hidden1(gk.concat([pooled, stats], axis=-1)))
        h2 = gk.gelu(self.hidden2(h1))
        return self.out(h2), h1, h2


def classify_genre(model: GenreModel, clip: AudioClip) -> GenrePrediction:
    logits, h1, h2 = model.forward([model.prepare(clip)])
    probs = gk.softmax(logits, axis=-1).data[0]
    return GenrePrediction(
        caption=model.genres[int(np.argmax(probs))],
        probs=probs,
        e_c=np.concatenate([h1.data[0], h2.data[0]]),
    )


def _train_classifier(model: Module, forward, labels: np.ndarray, epochs: int, lr: float,
                      desc: str, progress: bool) -> List[float]:
    optimizer = Adam(model.parameters(), lr=lr)
    history = []
    for _ in tqdm(range(epochs), desc=desc, disable=not progress):
        logits = forward()
        onehot = np.eye(logits.shape[-1])[labels]
        loss = -gk.tsum(gk.log_softmax(logits, axis=-1) * onehot) * (1.0 / labels.size)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        history.append(loss.item())
    return history


def train_genre_model(
    corpus: Sequence[CorpusItem],
    genres: Sequence[str],
    cfg: Optional[EncoderConfig] = None,
    seed: int = 0,
) -> Tuple[GenreModel, List[float]]:
    cfg = cfg or EncoderConfig()
    if len(corpus) < 2:
        raise BadCorpus(f"Genre training needs at least 2 clips, got {len(corpus)}")
    model = GenreModel(genres, Rng(seed, "genre"))
    unknown = {item.genre for item in corpus} - set(model.genres)
    if unknown:
        raise BadCorpus(f"Corpus genres not in the genre list: {sorted(unknown)}")
    inputs = [model.prepare(item.clip) for item in corpus]
    labels = np.array([model.genres.index(item.genre) for item in corpus])
    logger.info("training genre classifier on %d clips", len(corpus))
    history = _train_classifier(
        model, lambda: model.forward(inputs)[0], labels, cfg.classifier_epochs,
        cfg.classifier_lr, "genre", cfg.progress,
    )
    return model, history


class DanceStyleClassifier(Module, StyleClassifierInterface):
    """Predicts P(style | dance) from motion statistics."""

    def __init__(self, styles: Sequence[str], rng: Rng, hidden: int = 64,
                 skel: Optional[SkeletonModel] = None):
        self._styles = list(styles)
        self.mlp = MLP([POSE_FEATURE_DIM, hidden, len(self._styles)], rng.child("mlp"))
        self.skel = skel or default_skeleton()

    @property
    def styles(self) -> List[str]:
        return self._styles

    def logits(self, feats: np.ndarray) -> Tensor:
        return self.mlp(gk.layer_norm(feats))

    def predict_proba(self, seq: MotionSequence) -> np.ndarray:
        feats = pose_features(seq, self.skel)[None]
        return gk.softmax(self.logits(feats), axis=-1).data[0]


def train_style_classifier(
    sequences: Sequence[MotionSequence],
    labels: Sequence[str],
    styles: Sequence[str],
    cfg: Optional[EncoderConfig] = None,
    seed: int = 0,
) -> Tuple[DanceStyleClassifier, List[float]]:
    cfg = cfg or EncoderConfig()
    if len(sequences) < 2 or len(sequences) != len(labels):
        raise BadCorpus(f"Style training needs matching sequences and labels, got {len(sequences)}/{len(labels)}")
    model = DanceStyleClassifier(styles, Rng(seed, "style-classifier"))
    feats = np.stack([pose_features(s, model.skel) for s in sequences])
    y = np.array([model.styles.index(label) for label in labels])
    history = _train_classifier(
        model, lambda: model.logits(feats), y, cfg.classifier_epochs, cfg.classifier_lr,
        "style", cfg.progress,
    )
    return model, history


# style controller
class StyleController(Module):
    """Text tokens attend to themselves, then to the genre features, then pool."""

    def __init__(self, rng: Rng, dim: int = EMBED_DIM, heads: int = 4, buckets: int = 256):
        self.token_mlp = MLP([buckets, dim, dim], rng.child("tokens"))
        self.ec_proj = [
            Linear(GENRE_HIDDEN[0], dim, rng.child("ec0")),
            Linear(GENRE_HIDDEN[1], dim, rng.child("ec1")),
        ]
        self.self_attn = MultiHeadAttention(dim, heads, rng.child("self"))
        self.cross_attn = MultiHeadAttention(dim, heads, rng.child("cross"))
        self.out = Linear(dim, dim, rng.child("out"))
        self.buckets = buckets

    def __call__(self, e_c, e_t_tokens) -> Tensor:
        """e_c: (..., 96); e_t_tokens: (..., W, buckets) -> (..., dim)."""
        e_c = gk.as_tensor(e_c)
        if e_c.shape[-1] != E_C_DIM:
            raise ShapeMismatch(f"e_c must have {E_C_DIM} features, got {e_c.shape}")
        lead = e_c.shape[:-1]
        ec_tokens = gk.stack([
            self.ec_proj[0](e_c[..., :GENRE_HIDDEN[0]]),
            self.ec_proj[1](e_c[..., GENRE_HIDDEN[0]:]),
        ], axis=-2)
        x = self.token_mlp(e_t_tokens)
        x = x + self.self_attn(x)
        x = x + self.cross_attn(x, ec_tokens)
        pooled = gk.mean(x, axis=-2)
        out = self.out(pooled)
        return gk.reshape(out, lead + (out.shape[-1],))


def style_embedding(controller: StyleController, e_c: np.ndarray, choreo_style: str) -> np.ndarray:
    if not choreo_style or not tokenize(choreo_style):
        raise EmptyStyle("Choreography style must contain at least one word")
    return controller(e_c, token_matrix(choreo_style, controller.buckets)).data


def resolve_style(prediction: GenrePrediction, choreo_style: Optional[str] = None) -> str:
    """Style text for conditioning; without a user style the caption picks a sub-style."""
    if choreo_style and choreo_style.strip():
        return choreo_style
    styles = CHOREO_STYLES.get(prediction.caption)
    if not styles:
        return prediction.caption
    return f"{prediction.caption}: {styles[0]}"


def build_condition(e_m: np.ndarray, s: np.ndarray) -> ConditionEmbedding:
    e_m = np.asarray(e_m, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if e_m.shape != (EMBED_DIM,) or s.shape != (EMBED_DIM,):
        raise ShapeMismatch(f"Condition parts must be ({EMBED_DIM},), got {e_m.shape} and {s.shape}")
    return ConditionEmbedding(music=e_m.copy(), style=s.copy())
