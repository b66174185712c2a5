from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pytest
import torch

from videoworld import pipeline
from videoworld.config import run_config_from_text
from videoworld.metrics import psnr

SMOKE_TEXT = """
seed = 11
dataset.num_clips = 6
dataset.eval_clips = 4
dataset.num_frames = 8
dataset.eval_num_frames = 10
tokenizer.d_model = 32
tokenizer.num_heads = 2
tokenizer.num_codes = 64
tokenizer.latent_dim = 8
tokenizer.learning_rate = 3e-3
tokenizer.warmup_steps = 30
lam.d_model = 32
lam.num_heads = 2
lam.learning_rate = 3e-3
dynamics.d_model = 32
dynamics.num_layers = 2
dynamics.num_heads = 2
dynamics.decode_steps = 4
dynamics.learning_rate = 3e-3
train.batch_size = 4
train.tokenizer_steps = 60
train.lam_steps = 60
train.dynamics_steps = 150
"""


@pytest.fixture(scope="module")
def smoke_cfg():
    return run_config_from_text(SMOKE_TEXT)


@pytest.fixture(scope="module")
def smoke_data(smoke_cfg, tmp_path_factory):
    root = tmp_path_factory.mktemp("smoke-data")
    pipeline.generate_dataset(smoke_cfg, root)
    return root


def test_generate_dataset_layout_and_label_isolation(smoke_cfg, smoke_data):
    train_dir = smoke_data / "train"
    eval_dir = smoke_data / "eval"
    train_clips = sorted(p.name for p in train_dir.iterdir() if p.is_dir())
    assert len(train_clips) == 6
    assert len([p for p in eval_dir.iterdir() if p.is_dir()]) == 4
    clip0 = train_dir / train_clips[0]
    assert (clip0 / "meta").read_text().strip() == "fps=1"
    assert (clip0 / "labels.txt").exists()
    # the training loader touches frames and meta only
    tok, lam = pipeline.load_training_frames(train_dir, smoke_cfg.dataset)
    assert tok.shape == (6, 8, 32, 48, 3)
    assert lam.shape == (6, 8, 16, 24, 3)


def test_stage1_smoke_reduces_both_losses(smoke_cfg, smoke_data, tmp_path_factory):
    out = tmp_path_factory.mktemp("stage1")
    results = pipeline.train_stage1(smoke_cfg, smoke_data, out)
    for kind in ("tokenizer", "lam"):
        losses = results[kind].losses
        assert len(losses) == 60
        assert losses[-1] < 0.5 * losses[0], f"{kind} did not reduce loss 2x"
    assert (out / "tokenizer.ckpt").exists()
    assert (out / "lam.ckpt").exists()
    assert (out / "action_codebook.npy").exists()
    book = np.load(out / "action_codebook.npy")
    assert book.shape == (smoke_cfg.lam.num_actions, smoke_cfg.lam.latent_dim)


@pytest.fixture(scope="module")
def stage1_dir(smoke_cfg, smoke_data, tmp_path_factory):
    out = tmp_path_factory.mktemp("stage1-shared")
    pipeline.train_stage1(smoke_cfg, smoke_data, out)
    return out


def test_training_resume_is_bitwise(smoke_cfg, smoke_data, tmp_path_factory):
    out = tmp_path_factory.mktemp("resume")
    tok_frames, _ = pipeline.load_training_frames(smoke_data / "train", smoke_cfg.dataset)
    full = pipeline.train_tokenizer(smoke_cfg, tok_frames, out / "full.ckpt", steps=40)
    half = pipeline.train_tokenizer(smoke_cfg, tok_frames, out / "half.ckpt", steps=20)
    resumed = pipeline.train_tokenizer(
        smoke_cfg, tok_frames, out / "resumed.ckpt", steps=40, resume_from=out / "half.ckpt"
    )
    assert resumed.losses == full.losses[20:]
    assert (out / "resumed.ckpt").read_bytes() == (out / "full.ckpt").read_bytes()


def test_stage2_freezes_stage1_and_learns(smoke_cfg, smoke_data, stage1_dir):
    tok_before = (stage1_dir / "tokenizer.ckpt").read_bytes()
    lam_before = (stage1_dir / "lam.ckpt").read_bytes()
    result = pipeline.train_stage2(smoke_cfg, smoke_data, stage1_dir)
    assert (stage1_dir / "tokenizer.ckpt").read_bytes() == tok_before
    assert (stage1_dir / "lam.ckpt").read_bytes() == lam_before

    # masked CE starts near ln(num_codes) under the zero-initialized head
    assert result.losses[0] == pytest.approx(math.log(smoke_cfg.tokenizer.num_codes), rel=0.1)
    assert result.losses[-1] < 0.7 * result.losses[0]
    assert result.flops_estimate > 0


def test_evaluate_report_structure_and_determinism(smoke_cfg, smoke_data, stage1_dir, tmp_path):
    if not (stage1_dir / "dynamics.ckpt").exists():
        pipeline.train_stage2(smoke_cfg, smoke_data, stage1_dir)
    report_a = pipeline.evaluate(smoke_cfg, smoke_data, stage1_dir)
    report_b = pipeline.evaluate(smoke_cfg, smoke_data, stage1_dir)
    assert report_a.to_text() == report_b.to_text()

    assert tuple(p.prompt_frames for p in report_a.protocols) == (1, 4)
    for proto in report_a.protocols:
        assert set(proto.psnr_by_horizon) == {2, 4, 6}
        assert set(proto.delta_psnr_by_horizon) == {2, 4, 6}
        assert proto.fvd >= 0.0 and proto.fvd_random >= 0.0
    grid = report_a.to_grid()
    assert "Prompt frames: 1" in grid and "Prompt frames: 4" in grid

    text_path, json_path = pipeline.write_report(report_a, tmp_path)
    assert text_path.read_text() == report_a.to_text()
    assert json_path.exists()


def test_rollouts_track_own_references_better_than_shuffled(
    smoke_cfg, smoke_data, stage1_dir
):
    if not (stage1_dir / "dynamics.ckpt").exists():
        pipeline.train_stage2(smoke_cfg, smoke_data, stage1_dir)
    bundle = pipeline.load_bundle(stage1_dir)
    tok_clips, lam_clips = pipeline.load_eval_clips(smoke_data / "eval", smoke_cfg.dataset)
    from videoworld.data import VideoClip
    from videoworld.dynamics import rollout_batch
    from videoworld.seeding import make_rng

    prompts = [VideoClip(c.frames[:1], fps=1.0) for c in tok_clips]
    actions = np.stack([bundle.lam.infer_actions(c)[:6] for c in lam_clips])
    rolled = rollout_batch(
        prompts, actions, bundle.tokenizer, bundle.dynamics, smoke_cfg.dynamics,
        make_rng(0, "sanity"),
    )
    own = np.mean([psnr(r.frames[1:7], c.frames[1:7]) for r, c in zip(rolled, tok_clips)])
    shuffled_refs = tok_clips[1:] + tok_clips[:1]
    other = np.mean([psnr(r.frames[1:7], c.frames[1:7]) for r, c in zip(rolled, shuffled_refs)])
    assert own > other


def test_evaluate_rejects_missing_checkpoints(smoke_cfg, smoke_data, tmp_path):
    with pytest.raises(FileNotFoundError, match="missing checkpoint"):
        pipeline.evaluate(smoke_cfg, smoke_data, tmp_path)


def test_action_discovery_reads_labels_only_here(smoke_cfg, smoke_data, stage1_dir):
    lam, _ = pipeline.load_lam(stage1_dir / "lam.ckpt")
    score = pipeline.evaluate_action_discovery(lam, smoke_data / "eval", smoke_cfg.dataset)
    assert -1.0 <= score <= 1.0


def test_nonfinite_loss_aborts(smoke_cfg, smoke_data, tmp_path):
    import dataclasses

    bad = dataclasses.replace(
        smoke_cfg,
        tokenizer=dataclasses.replace(smoke_cfg.tokenizer, learning_rate=1e6),
    )
    tok_frames, _ = pipeline.load_training_frames(smoke_data / "train", smoke_cfg.dataset)
    with pytest.raises((RuntimeError, ValueError)):
        pipeline.train_tokenizer(bad, tok_frames, tmp_path / "bad.ckpt", steps=50)
