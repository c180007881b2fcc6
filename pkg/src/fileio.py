"""
On-disk formats: motion files, checkpoints, silhouettes, audio and JSON sidecars.

Every writer goes through a temp file in the destination directory followed by
``os.replace`` so a reader never sees a partial file.
"""
import hashlib
import json
import logging
import os
import struct
import tempfile
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.io import wavfile

from .audio import resample_linear
from .errors import BadLength, BadMagic, IoError, Truncated
from .layers import Module
from .models import (
    NUM_JOINTS, POSE_DIM, AudioClip, BodyParams, ItemLabel, Keypoints2D, MotionSequence, RunManifest, Silhouette,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

MOTION_MAGIC = b"CHOR"
MOTION_VERSION = 1
MOTION_HEADER = struct.Struct("<4sHHHI")
CHECKPOINT_MAGIC = b"CHKP"
CHECKPOINT_VERSION = 1


def atomic_write(path: PathLike, data: bytes) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as e:
        raise IoError(f"Cannot write {path}: {e}") from e
    return path


def _read_bytes(path: PathLike) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise IoError(f"Cannot read {path}: {e}") from e


def file_hash(path: PathLike) -> str:
    return hashlib.sha256(_read_bytes(path)).hexdigest()


# motion files
def encode_motion(seq: MotionSequence) -> bytes:
    frames = np.asarray(seq.frames)
    if frames.ndim != 2 or frames.shape[1] != POSE_DIM:
        raise BadLength(f"Motion frames must be (N, {POSE_DIM}), got {frames.shape}")
    header = MOTION_HEADER.pack(MOTION_MAGIC, MOTION_VERSION, int(seq.fps), NUM_JOINTS, frames.shape[0])
    return header + frames.astype("<f4").tobytes(order="C")


def decode_motion(data: bytes) -> MotionSequence:
    if len(data) < MOTION_HEADER.size:
        raise Truncated(f"Motion file has {len(data)} bytes, header needs {MOTION_HEADER.size}")
    magic, version, fps, joints, frames = MOTION_HEADER.unpack_from(data)
    if magic != MOTION_MAGIC:
        raise BadMagic(f"Expected magic {MOTION_MAGIC!r}, got {magic!r}")
    if joints != NUM_JOINTS:
        raise BadLength(f"Motion file declares {joints} joints, expected {NUM_JOINTS}")
    if frames == 0:
        raise Truncated("Motion file has an empty payload")
    expected = frames * POSE_DIM * 4
    payload = data[MOTION_HEADER.size:]
    if len(payload) != expected:
        raise Truncated(f"Motion payload is {len(payload)} bytes, header declares {expected}")
    values = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(frames, POSE_DIM)
    return MotionSequence(frames=values, fps=fps)


def write_motion(path: PathLike, seq: MotionSequence) -> Path:
    return atomic_write(path, encode_motion(seq))


def read_motion(path: PathLike) -> MotionSequence:
    return decode_motion(_read_bytes(path))


# checkpoints: magic, version u16, header length u32, JSON header, float64 payload
def save_checkpoint(path: PathLike, arrays: Dict[str, np.ndarray], meta: Optional[Dict[str, Any]] = None) -> Path:
    index = []
    offset = 0
    chunks = []
    for name in sorted(arrays):
        value = np.ascontiguousarray(arrays[name], dtype="<f8")
        index.append({"name": name, "shape": list(value.shape), "offset": offset})
        chunks.append(value.tobytes())
        offset += value.nbytes
    header = json.dumps({"meta": meta or {}, "index": index}, sort_keys=True).encode("utf-8")
    blob = CHECKPOINT_MAGIC + struct.pack("<HI", CHECKPOINT_VERSION, len(header)) + header + b"".join(chunks)
    return atomic_write(path, blob)


def load_checkpoint(path: PathLike) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    data = _read_bytes(path)
    if data[:4] != CHECKPOINT_MAGIC:
        raise BadMagic(f"{path} is not a checkpoint")
    if len(data) < 10:
        raise Truncated(f"Checkpoint {path} header is truncated")
    _, header_len = struct.unpack_from("<HI", data, 4)
    start = 10 + header_len
    if len(data) < start:
        raise Truncated(f"Checkpoint {path} header is truncated")
    header = json.loads(data[10:start].decode("utf-8"))
    payload = data[start:]
    arrays = {}
    for entry in header["index"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        end = entry["offset"] + count * 8
        if end > len(payload):
            raise Truncated(f"Checkpoint entry {entry['name']} runs past the payload")
        arrays[entry["name"]] = np.frombuffer(payload[entry["offset"]:end], dtype="<f8").reshape(entry["shape"]).copy()
    return arrays, header["meta"]


# silhouettes as binary PGM (P5)
def write_pgm(path: PathLike, sil: Silhouette) -> Path:
    pixels = (np.asarray(sil.pixels) > 0.5).astype(np.uint8) * 255
    h, w = pixels.shape
    return atomic_write(path, f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())


def read_pgm(path: PathLike) -> Silhouette:
    data = _read_bytes(path)
    tokens: List[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise Truncated(f"PGM header in {path} is incomplete")
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise BadMagic(f"Expected a binary PGM (P5), got {tokens[0]!r}")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    pos += 1
    body = np.frombuffer(data[pos:pos + w * h], dtype=np.uint8)
    if body.size != w * h:
        raise Truncated(f"PGM {path} has {body.size} pixels, header declares {w * h}")
    return Silhouette(pixels=(body.reshape(h, w) > maxval / 2).astype(np.float64))


# audio
def read_wav(path: PathLike, target_rate: Optional[int] = None) -> AudioClip:
    """PCM16 or float WAV, mixed down to mono and optionally resampled."""
    try:
        rate, samples = wavfile.read(str(path))
    except (OSError, ValueError) as e:
        raise IoError(f"Cannot read WAV {path}: {e}") from e
    if np.issubdtype(samples.dtype, np.integer):
        samples = samples.astype(np.float64) / float(np.iinfo(samples.dtype).max)
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    clip = AudioClip(samples, int(rate))
    return resample_linear(clip, target_rate) if target_rate else clip


def write_wav(path: PathLike, clip: AudioClip, pcm16: bool = True) -> Path:
    samples = np.clip(clip.samples, -1.0, 1.0)
    data = (samples * 32767).astype("<i2") if pcm16 else samples.astype("<f4")
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        os.close(fd)
        wavfile.write(tmp, clip.sample_rate, data)
        os.replace(tmp, path)
    except OSError as e:
        raise IoError(f"Cannot write WAV {path}: {e}") from e
    return path


# JSON sidecars
def write_json(path: PathLike, payload: Any) -> Path:
    return atomic_write(path, (json.dumps(payload, indent=2, sort_keys=True) + "\n").encode("utf-8"))


def read_json(path: PathLike) -> Any:
    try:
        return json.loads(_read_bytes(path).decode("utf-8"))
    except json.JSONDecodeError as e:
        raise IoError(f"Invalid JSON in {path}: {e}") from e


def write_label(path: PathLike, label: ItemLabel) -> Path:
    return write_json(path, label.to_dict())


def read_label(path: PathLike) -> ItemLabel:
    return ItemLabel.from_dict(read_json(path))


def write_keypoints(path: PathLike, kp: Keypoints2D) -> Path:
    return write_json(path, {
        "points": np.asarray(kp.points, dtype=np.float64).tolist(),
        "valid": [bool(v) for v in kp.valid],
    })


def read_keypoints(path: PathLike) -> Keypoints2D:
    raw = read_json(path)
    points = np.asarray(raw["points"], dtype=np.float64)
    valid = np.asarray(raw.get("valid", [True] * len(points)), dtype=bool)
    if points.shape != (NUM_JOINTS, 2) or valid.shape != (NUM_JOINTS,):
        raise BadLength(f"Keypoints must be {NUM_JOINTS} x 2 with {NUM_JOINTS} flags, got {points.shape}")
    return Keypoints2D(points=points, valid=valid)


def write_beats(path: PathLike, beats: np.ndarray) -> Path:
    return write_json(path, {"beats": [float(b) for b in beats]})


def read_beats(path: PathLike) -> np.ndarray:
    return np.asarray(read_json(path)["beats"], dtype=np.float64)


def write_manifest(path: PathLike, manifest: RunManifest) -> Path:
    logger.debug("writing manifest %s", path)
    return write_json(path, manifest.to_dict())


def read_manifest(path: PathLike) -> RunManifest:
    return RunManifest.from_dict(read_json(path))


def save_modules(path: PathLike, modules: Dict[str, Module], meta: Optional[Dict[str, Any]] = None) -> Path:
    """One checkpoint holding several modules, keyed ``<prefix>.<parameter>``."""
    arrays = {f"{prefix}.{name}": value
              for prefix, module in modules.items()
              for name, value in module.state_dict().items()}
    meta = dict(meta or {})
    meta["modules"] = sorted(modules)
    return save_checkpoint(path, arrays, meta)


def load_modules(path: PathLike, modules: Dict[str, Module]) -> Dict[str, Any]:
    arrays, meta = load_checkpoint(path)
    for prefix, module in modules.items():
        head = f"{prefix}."
        module.load_state_dict({k[len(head):]: v for k, v in arrays.items() if k.startswith(head)})
    return meta


def body_params_to_dict(params: BodyParams) -> Dict[str, Any]:
    return {
        "beta": np.asarray(params.beta, dtype=np.float64).tolist(),
        "rots": np.asarray(params.rots, dtype=np.float64).tolist(),
        "root_t": np.asarray(params.root_t, dtype=np.float64).tolist(),
        "cam_scale": float(params.cam_scale),
        "cam_offset": np.asarray(params.cam_offset, dtype=np.float64).tolist(),
    }


def body_params_from_dict(raw: Dict[str, Any]) -> BodyParams:
    return BodyParams(
        beta=np.asarray(raw["beta"], dtype=np.float64),
        rots=np.asarray(raw["rots"], dtype=np.float64),
        root_t=np.asarray(raw["root_t"], dtype=np.float64),
        cam_scale=float(raw["cam_scale"]),
        cam_offset=np.asarray(raw["cam_offset"], dtype=np.float64),
    )
