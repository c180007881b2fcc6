#!/usr/bin/env python3
"""
End-to-end workflow check at desk scale: corpus -> encoders -> stage 1 -> sample -> evaluate.
"""
import sys
import tempfile
from pathlib import Path

import numpy as np

# Add src directory to path for imports
sys.path.insert(0, str(Path(__file__).parent / "src"))

from src.config import EncoderConfig, MetricConfig, TrainConfig
from src.corpus import gen_corpus, load_corpus
from src.diffusion import DiffusionSchedule
from src.encoders import train_genre_model, train_motiontune, train_style_classifier
from src.evaluation_engine import EvaluationEngine
from src.fileio import write_beats, write_label, write_motion
from src.gradkernels import Rng
from src.models import ItemLabel, MetricName
from src.posemath import pose_pack
from src.stage1 import ChoreographyModel, extract_initial_pose, sample_stage1, train_stage1


def test_complete_workflow(workdir: Path):
    """Run the whole pipeline on a tiny synthetic corpus."""
    print("💃 Testing Choreography Workflow")
    print("=" * 50)

    genres = ["House", "Krump"]
    enc_cfg = EncoderConfig(epochs=5, classifier_epochs=40, batch_size=8)
    train_cfg = TrainConfig(T=10, epochs=2, batch_size=4, model_dim=32)

    # Generate corpus
    print("\n1. Generating synthetic corpus...")
    data_dir = workdir / "corpus"
    written = gen_corpus(genres, 4, seed=0, out_dir=data_dir, duration=6.0)
    corpus = load_corpus(data_dir)
    assert len(written) == 8, "Should write 8 motion files"
    assert len(corpus) == 8, "Should load 8 corpus items"
    print(f"✅ Corpus written: {len(corpus)} items in {data_dir}")

    # Train encoders
    print("\n2. Training contrastive encoders...")
    motiontune, enc_history = train_motiontune(corpus, cfg=enc_cfg, seed=0)
    assert all(np.isfinite(enc_history)), "Encoder losses should be finite"
    print(f"✅ Encoder loss: {enc_history[0]:.4f} -> {enc_history[-1]:.4f}")

    print("\n3. Training genre and dance-style classifiers...")
    genre_model, _ = train_genre_model(corpus, genres, enc_cfg, seed=0)
    style_model, style_history = train_style_classifier(
        [item.motion for item in corpus], [item.genre for item in corpus], genres, enc_cfg, seed=0,
    )
    assert style_history[-1] < style_history[0], "Style classifier loss should drop"
    print(f"✅ Style classifier loss: {style_history[0]:.4f} -> {style_history[-1]:.4f}")

    # Stage 1
    print("\n4. Training stage-1 denoiser...")
    model = ChoreographyModel(train_cfg, genres, enc_cfg, motiontune, genre_model)
    model, history = train_stage1(corpus, train_cfg, model)
    assert all(np.isfinite(history)), "Stage-1 losses should be finite"
    print(f"✅ Stage-1 loss: {history[0]:.4f} -> {history[-1]:.4f} over {len(history)} steps")

    # Sample
    print("\n5. Sampling a dance with a pinned first frame...")
    out_dir = workdir / "generated"
    reference = corpus[0]
    init = extract_initial_pose(reference.motion)
    cond = model.condition(reference.clip, f"{reference.genre}: {reference.choreo_style}")
    schedule = DiffusionSchedule.cosine(train_cfg.T)
    seq = sample_stage1(model.net, cond, init, 180, schedule, Rng(0, "workflow"), train_cfg)
    assert seq.frames.shape == (180, 151), f"Unexpected sample shape {seq.frames.shape}"
    assert np.allclose(seq.frames[0], pose_pack(init), atol=1e-6), "Frame 0 should match the initial pose"
    write_motion(out_dir / "sample_000.chor", seq)
    write_label(out_dir / "sample_000.json", ItemLabel(reference.genre, reference.choreo_style, reference.tempo))
    write_beats(out_dir / "sample_000.beats.json", reference.beats)
    print("✅ Sample generated and written")

    # Evaluate
    print("\n6. Evaluating the reference corpus...")
    engine = EvaluationEngine(cfg=MetricConfig(), style_classifier=style_model)
    result = engine.evaluate(data_dir, list(MetricName), refs_dir=data_dir)
    for key, report in result.reports.items():
        print(f"   {key}: {report.value:.4f} (n={report.n})")
    assert {"pfc", "bas", "dist_k", "dist_g", "msas", "csas"} <= set(result.reports), \
        "Every metric should be reported"
    assert 0.0 <= result.reports["bas"].value <= 1.0, "BAS outside [0, 1]"
    assert 0.0 <= result.reports["csas"].value <= 1.0, "CSAS outside [0, 1]"
    print("✅ Metric suite computed")

    print("\n7. Evaluating the generated sample...")
    generated = engine.evaluate(out_dir, [MetricName.PFC, MetricName.BAS])
    print(f"   pfc: {generated.reports['pfc'].value:.4f}")
    if generated.warnings:
        for warning in generated.warnings:
            print(f"   - {warning[:100]}")
    print("✅ Generated sample evaluated")

    # Summary
    print("\n" + "=" * 50)
    print("🎉 Complete workflow test PASSED!")
    print("\nSummary:")
    print(f"   Corpus items: {len(corpus)}")
    print(f"   Stage-1 steps: {len(history)}")
    print(f"   Metrics reported: {len(result.reports)}")
    print(f"   Warnings: {len(result.warnings)}")

    return True


if __name__ == "__main__":
    try:
        with tempfile.TemporaryDirectory() as tmp:
            test_complete_workflow(Path(tmp))
    except Exception as e:
        print(f"\n❌ Workflow test FAILED: {str(e)}")
        import traceback
        traceback.print_exc()
        sys.exit(1)
