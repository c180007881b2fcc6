"""
Command-line entry point: ``python -m src.cli <command> ...``.

Every command writes a run manifest next to its outputs. Failures print
``{"error": code, "message": ...}`` to stderr and exit with status 1.
"""
import argparse
import json
import logging
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from .audio import detect_beats
from .config import GENRES, ChoreoConfig, DiffusionConfig, EncoderConfig, TrainConfig
from .corpus import gen_corpus, load_corpus
from .encoders import (
    DanceStyleClassifier, GenreModel, MotionTune, classify_genre, prepare_corpus, retrieval_at_1,
    train_genre_model, train_motiontune, train_style_classifier,
)
from .errors import ChoreoError, ShapeMismatch
from .evaluation_engine import EvaluationEngine
from .fileio import (
    body_params_from_dict, body_params_to_dict, file_hash, load_checkpoint, load_modules, read_json,
    read_keypoints, read_manifest, read_motion, read_pgm, read_wav, save_modules, write_beats,
    write_json, write_label, write_manifest, write_motion,
)
from .gradkernels import Rng
from .models import ItemLabel, MetricName, RunManifest
from .posemath import default_skeleton, pose_to_smpl_params
from .shapealign import ShapeAligner, default_params
from .stage1 import ChoreographyModel, extract_initial_pose, sample_stage1, train_stage1

logger = logging.getLogger(__name__)


class RunContext:
    """Collects inputs, outputs and metrics of one command for its manifest."""

    def __init__(self, command: str, cfg: ChoreoConfig, args: Dict[str, Any]):
        self.command = command
        self.cfg = cfg
        self.args = args
        self.started_at = datetime.now(timezone.utc).isoformat()
        self.inputs: Dict[str, str] = {}
        self.outputs: List[str] = []
        self.metrics: Dict[str, float] = {}

    def add_input(self, path: Path) -> None:
        path = Path(path)
        if path.is_file():
            self.inputs[str(path)] = file_hash(path)
        elif path.is_dir():
            for child in sorted(path.iterdir()):
                if child.is_file() and not child.name.endswith(".manifest.json"):
                    self.inputs[str(child)] = file_hash(child)

    def add_output(self, path: Path) -> None:
        self.outputs.append(str(path))

    def finish(self, manifest_path: Path) -> Path:
        manifest = RunManifest(
            command=self.command,
            config=self.cfg.to_dict(),
            seed=self.cfg.seed,
            started_at=self.started_at,
            finished_at=datetime.now(timezone.utc).isoformat(),
            input_hashes=self.inputs,
            outputs=self.outputs,
            metrics=self.metrics,
            args=self.args,
        )
        return write_manifest(manifest_path, manifest)


def _manifest_next_to(out: Path) -> Path:
    out = Path(out)
    if out.is_dir():
        return out / "run.manifest.json"
    return out.with_name(out.name + ".manifest.json")


def _genres(value: str) -> List[str]:
    value = value.strip()
    if value.isdigit():
        count = int(value)
        if not 2 <= count <= len(GENRES):
            raise argparse.ArgumentTypeError(f"genre count must be between 2 and {len(GENRES)}")
        return GENRES[:count]
    names = [g.strip() for g in value.split(",") if g.strip()]
    unknown = [g for g in names if g not in GENRES]
    if unknown:
        raise argparse.ArgumentTypeError(f"unknown genres: {unknown}")
    return names


def _metric_names(values: Sequence[str]) -> List[MetricName]:
    names = []
    for value in values:
        names.extend(MetricName(v.strip()) for v in value.split(",") if v.strip())
    return names


def _corpus_genres(corpus) -> List[str]:
    present = {item.genre for item in corpus}
    return [g for g in GENRES if g in present] + sorted(present - set(GENRES))


# commands
def cmd_gen_data(args, ctx: RunContext) -> Path:
    seed = ctx.cfg.seed
    written = gen_corpus(args.genres, args.per_genre, seed, args.out,
                         duration=args.duration, fps=ctx.cfg.fps, sample_rate=ctx.cfg.audio.sample_rate)
    for path in written:
        ctx.add_output(path)
    ctx.metrics["items"] = float(len(written))
    return _manifest_next_to(args.out)


def cmd_train_encoder(args, ctx: RunContext) -> Path:
    ctx.add_input(args.data)
    corpus = load_corpus(args.data)
    enc_cfg = ctx.cfg.encoder
    model, history = train_motiontune(corpus, epochs=args.epochs, cfg=enc_cfg, seed=ctx.cfg.seed)
    ctx.metrics["loss"] = history[-1] if history else float("nan")
    ctx.metrics["retrieval_at_1"] = retrieval_at_1(model, prepare_corpus(model, corpus))
    save_modules(args.out, {"motiontune": model},
                 {"kind": "motiontune", "encoder": enc_cfg.to_dict(), "seed": ctx.cfg.seed})
    ctx.add_output(args.out)
    return _manifest_next_to(args.out)


def cmd_train_classifier(args, ctx: RunContext) -> Path:
    ctx.add_input(args.data)
    corpus = load_corpus(args.data)
    genres = _corpus_genres(corpus)
    enc_cfg = ctx.cfg.encoder if args.epochs is None else replace(ctx.cfg.encoder, classifier_epochs=args.epochs)
    genre_model, genre_hist = train_genre_model(corpus, genres, enc_cfg, ctx.cfg.seed)
    style_model, style_hist = train_style_classifier(
        [item.motion for item in corpus], [item.genre for item in corpus], genres, enc_cfg, ctx.cfg.seed,
    )
    correct = sum(classify_genre(genre_model, item.clip).caption == item.genre for item in corpus)
    ctx.metrics.update({
        "genre_loss": genre_hist[-1],
        "style_loss": style_hist[-1],
        "genre_accuracy": correct / len(corpus),
    })
    save_modules(args.out, {"genre": genre_model, "style": style_model},
                 {"kind": "classifier", "genres": genres, "encoder": enc_cfg.to_dict(), "seed": ctx.cfg.seed})
    ctx.add_output(args.out)
    return _manifest_next_to(args.out)


def load_motiontune(path: Path) -> MotionTune:
    _, meta = load_checkpoint(path)
    model = MotionTune(EncoderConfig.from_dict(meta["encoder"]), seed=meta.get("seed", 0))
    load_modules(path, {"motiontune": model})
    return model


def load_classifiers(path: Path):
    _, meta = load_checkpoint(path)
    seed = meta.get("seed", 0)
    genre_model = GenreModel(meta["genres"], Rng(seed, "genre"))
    style_model = DanceStyleClassifier(meta["genres"], Rng(seed, "style-classifier"))
    load_modules(path, {"genre": genre_model, "style": style_model})
    return genre_model, style_model


def cmd_train_stage1(args, ctx: RunContext) -> Path:
    ctx.add_input(args.data)
    corpus = load_corpus(args.data)
    train_cfg = replace(ctx.cfg.train, seed=ctx.cfg.seed,
                        **({"T": args.T} if args.T is not None else {}),
                        **({"epochs": args.epochs} if args.epochs is not None else {}),
                        **({"objective": args.objective} if args.objective else {}))
    motiontune, genre_model = None, None
    genres = _corpus_genres(corpus)
    if args.encoder:
        ctx.add_input(args.encoder)
        motiontune = load_motiontune(args.encoder)
    if args.classifier:
        ctx.add_input(args.classifier)
        genre_model, _ = load_classifiers(args.classifier)
        genres = genre_model.genres
    enc_cfg = motiontune.cfg if motiontune is not None else ctx.cfg.encoder
    model = ChoreographyModel(train_cfg, genres, enc_cfg, motiontune, genre_model, ctx.cfg.diffusion)
    model, history = train_stage1(corpus, train_cfg, model)
    ctx.metrics["final_loss"] = history[-1]
    ctx.metrics["initial_loss"] = history[0]
    save_modules(args.out, {"model": model}, {
        "kind": "stage1", "train": train_cfg.to_dict(), "encoder": enc_cfg.to_dict(), "genres": list(genres),
        "diffusion": model.diffusion_cfg.to_dict(), "chunk_seeds": model.chunk_seeds,
    })
    ctx.add_output(args.out)
    return _manifest_next_to(args.out)


def load_choreography_model(path: Path) -> ChoreographyModel:
    _, meta = load_checkpoint(path)
    model = ChoreographyModel(TrainConfig.from_dict(meta["train"]), meta["genres"],
                              EncoderConfig.from_dict(meta["encoder"]),
                              diffusion_cfg=DiffusionConfig.from_dict(meta["diffusion"]))
    load_modules(path, {"model": model})
    model.restore_chunk_seeds(meta["chunk_seeds"])
    return model


def _split_style(text: Optional[str], fallback_genre: str):
    if text and ":" in text:
        genre, style = text.split(":", 1)
        return genre.strip(), style.strip()
    return fallback_genre, (text or "").strip()


def cmd_sample(args, ctx: RunContext) -> Path:
    for path in (args.ckpt, args.music):
        ctx.add_input(path)
    model = load_choreography_model(args.ckpt)
    clip = read_wav(args.music)
    cond = model.condition(clip, args.style)
    init = None
    if args.init_pose:
        ctx.add_input(args.init_pose)
        source = Path(args.init_pose)
        reference = read_keypoints(source) if source.suffix == ".json" else read_motion(source)
        init = extract_initial_pose(reference, model.skel, ctx.cfg.align)
    rng = Rng(ctx.cfg.seed, "sample")
    seq = sample_stage1(model.net, cond, init, args.frames, model.schedule, rng, model.cfg,
                        overlap=ctx.cfg.diffusion.overlap_frames)
    out = Path(args.out)
    write_motion(out, seq)
    ctx.add_output(out)

    caption = classify_genre(model.genre_model, clip).caption
    genre, style = _split_style(args.style, caption)
    beats = np.asarray(detect_beats(clip, ctx.cfg.audio))
    tempo = float(1.0 / np.median(np.diff(beats))) if beats.size > 1 else 0.0
    write_label(out.with_suffix(".json"), ItemLabel(genre, style, tempo))
    write_beats(out.with_suffix(".beats.json"), beats)
    ctx.metrics["frames"] = float(len(seq))
    return _manifest_next_to(out)


def cmd_align(args, ctx: RunContext) -> Path:
    skel = default_skeleton()
    silhouette = kp = None
    align_cfg = ctx.cfg.align
    if args.silhouette:
        ctx.add_input(args.silhouette)
        silhouette = read_pgm(args.silhouette)
        h, w = silhouette.pixels.shape
        if h != w:
            raise ShapeMismatch(f"Silhouette must be square, got {h}x{w}")
        align_cfg = replace(align_cfg, raster_size=h)
    if args.keypoints:
        ctx.add_input(args.keypoints)
        kp = read_keypoints(args.keypoints)
    params0 = body_params_from_dict(read_json(args.init)) if args.init else default_params(skel, align_cfg)
    aligner = ShapeAligner(skel, align_cfg)
    result = aligner.align(params0, silhouette, kp, iters=args.iters)
    payload = body_params_to_dict(result.params)
    payload.update({
        "objective": result.objective,
        "initial_objective": result.initial_objective,
        "iterations": result.iterations,
        "history": result.history,
    })
    write_json(args.out, payload)
    ctx.add_output(args.out)
    ctx.metrics.update({"objective": result.objective, "initial_objective": result.initial_objective})
    return _manifest_next_to(args.out)


def cmd_eval(args, ctx: RunContext) -> Path:
    ctx.add_input(args.input)
    style_classifier = None
    if args.classifier:
        ctx.add_input(args.classifier)
        _, style_classifier = load_classifiers(args.classifier)
    metric_cfg = replace(ctx.cfg.metrics, calibrate=True) if getattr(args, "calibrate", False) else ctx.cfg.metrics
    engine = EvaluationEngine(default_skeleton(), metric_cfg, ctx.cfg.audio, style_classifier)
    result = engine.evaluate(args.input, _metric_names(args.metric), args.refs)
    for warning in result.warnings:
        logger.warning(warning)
    write_json(args.report, {
        "reports": [report.to_dict() for report in result.reports.values()],
        "per_item_bas": result.per_item_bas,
        "warnings": result.warnings,
        "source": result.source,
    })
    ctx.add_output(args.report)
    ctx.metrics.update({key: report.value for key, report in result.reports.items()})
    return _manifest_next_to(args.report)


def cmd_export_smpl(args, ctx: RunContext) -> Path:
    ctx.add_input(args.input)
    seq = read_motion(args.input)
    poses, trans = pose_to_smpl_params(seq.frames)
    write_json(args.out, {"fps": seq.fps, "poses": poses.tolist(), "trans": trans.tolist()})
    ctx.add_output(args.out)
    return _manifest_next_to(args.out)


COMMANDS: Dict[str, Callable] = {
    "gen-data": cmd_gen_data,
    "train-encoder": cmd_train_encoder,
    "train-classifier": cmd_train_classifier,
    "train-stage1": cmd_train_stage1,
    "sample": cmd_sample,
    "align": cmd_align,
    "eval": cmd_eval,
    "export-smpl": cmd_export_smpl,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="choreo", description="Music-driven dance generation toolkit")
    parser.add_argument("--config", type=Path, help="JSON config file; missing keys keep defaults")
    parser.add_argument("--seed", type=int, help="overrides the config seed")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a seeded synthetic corpus")
    p.add_argument("--genres", type=_genres, default=GENRES, help="count or comma-separated names")
    p.add_argument("--per-genre", type=int, default=4)
    p.add_argument("--duration", type=float, default=6.0)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train-encoder", help="contrastive music/dance encoders")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train-classifier", help="genre and dance-style classifiers")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train-stage1", help="conditioned denoiser")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--T", type=int, help="diffusion steps; defaults to train.T")
    p.add_argument("--epochs", type=int)
    p.add_argument("--objective", choices=["ac", "basic"])
    p.add_argument("--encoder", type=Path, help="checkpoint from train-encoder")
    p.add_argument("--classifier", type=Path, help="checkpoint from train-classifier")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("sample", help="generate a dance for a music file")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--music", type=Path, required=True)
    p.add_argument("--style", help='e.g. "House: walk out"')
    p.add_argument("--init-pose", type=Path, help="motion file (frame 0) or keypoint JSON")
    p.add_argument("--frames", type=int, default=150)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("align", help="fit body parameters to a silhouette and keypoints")
    p.add_argument("--silhouette", type=Path)
    p.add_argument("--keypoints", type=Path)
    p.add_argument("--init", type=Path, help="initial body parameter JSON")
    p.add_argument("--iters", type=int)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("eval", help="compute evaluation metrics over a directory")
    p.add_argument("--metric", action="append", required=True,
                   help="pfc, bas, dist, msas or csas; repeat or comma-separate")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--refs", type=Path, help="reference corpus for csas")
    p.add_argument("--classifier", type=Path, help="checkpoint for msas")
    p.add_argument("--calibrate", action="store_true", help="fit the csas alpha to the reference spread")
    p.add_argument("--report", type=Path, required=True)

    p = sub.add_parser("export-smpl", help="axis-angle export of a motion file")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("rerun", help="repeat a run from its manifest")
    p.add_argument("manifest", type=Path)
    return parser


def _jsonable(args: argparse.Namespace) -> Dict[str, Any]:
    out = {}
    for key, value in vars(args).items():
        if key in ("command", "config", "log_level"):
            continue
        out[key] = str(value) if isinstance(value, Path) else value
    return out


def run(command: str, args: argparse.Namespace, cfg: ChoreoConfig) -> Path:
    ctx = RunContext(command, cfg, _jsonable(args))
    logger.info("running %s with seed %d", command, cfg.seed)
    manifest_path = COMMANDS[command](args, ctx)
    return ctx.finish(manifest_path)


_PATH_ARGS = {"out", "data", "encoder", "classifier", "ckpt", "music", "init_pose",
              "silhouette", "keypoints", "init", "input", "refs", "report"}


def _rerun(manifest_path: Path) -> Path:
    """Repeat a command with the configuration and arguments its manifest recorded."""
    manifest = read_manifest(manifest_path)
    cfg = ChoreoConfig.from_dict(manifest.config)
    values = {key: Path(value) if key in _PATH_ARGS and value is not None else value
              for key, value in manifest.args.items()}
    return run(manifest.command, argparse.Namespace(**values), cfg)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), stream=sys.stderr,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        if args.command == "rerun":
            _rerun(args.manifest)
            return 0
        cfg = ChoreoConfig.load(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed, train=replace(cfg.train, seed=args.seed))
        cfg = cfg.with_env_overrides()
        run(args.command, args, cfg)
        return 0
    except ChoreoError as e:
        print(json.dumps(e.to_dict()), file=sys.stderr)
    except (OSError, ValueError, KeyError, RuntimeError) as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
