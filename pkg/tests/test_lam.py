from __future__ import annotations

import numpy as np
import pytest
import torch

from videoworld.data import SyntheticSceneConfig, VideoClip, generate_synthetic_clip, preprocess_clip
from videoworld.lam import LamConfig, LatentActionModel, desk_lam_config, sample_random_action
from videoworld.st_transformer import STBlockConfig


def _lam_clip(seed: int, num_frames: int = 8) -> VideoClip:
    clip, _ = generate_synthetic_clip(SyntheticSceneConfig(seed=seed, num_frames=num_frames))
    return preprocess_clip(clip, 16, 24, 1.0, num_frames)


def test_paper_table_config_constructs():
    cfg = LamConfig()
    assert cfg.encoder == STBlockConfig(8, 384, 12)
    assert cfg.decoder == STBlockConfig(12, 384, 12)
    assert cfg.num_actions == 12 and cfg.latent_dim == 32
    assert cfg.learning_rate == 1e-5
    assert (cfg.frame_height, cfg.frame_width) == (40, 60)
    LatentActionModel(cfg)


def test_two_frames_give_one_action(seeded_lam):
    clip = _lam_clip(0)
    pair = VideoClip(clip.frames[:2], fps=1.0)
    actions = seeded_lam.infer_actions(pair)
    assert actions.shape == (1,)
    assert 0 <= actions[0] < 12


def test_single_frame_rejected(seeded_lam):
    clip = _lam_clip(0)
    with pytest.raises(ValueError, match="two frames"):
        seeded_lam.infer_actions(VideoClip(clip.frames[:1], fps=1.0))


def test_action_inference_is_causal(seeded_lam):
    clip = _lam_clip(1)
    actions = seeded_lam.infer_actions(clip)
    frames = clip.frames.copy()
    frames[-1] = np.clip(frames[-1] + 0.4, 0.0, 1.0)
    actions_perturbed = seeded_lam.infer_actions(VideoClip(frames, fps=1.0))
    assert np.array_equal(actions[:-1], actions_perturbed[:-1])


def test_static_clip_maps_to_constant_action(seeded_lam):
    clip = _lam_clip(2)
    static = VideoClip(np.repeat(clip.frames[:1], 6, axis=0), fps=1.0)
    actions = seeded_lam.infer_actions(static)
    assert len(set(actions.tolist())) == 1


def test_decode_output_shape_and_range(seeded_lam):
    clip = _lam_clip(3)
    frames_in = VideoClip(clip.frames[:-1], fps=1.0)
    actions = np.zeros(frames_in.num_frames, dtype=np.int64)
    pred = seeded_lam.decode_clip(frames_in, actions)
    assert pred.shape == (frames_in.num_frames, 16, 24, 3)
    assert pred.min() >= 0.0 and pred.max() <= 1.0


def test_decode_is_causal_in_actions(seeded_lam):
    clip = _lam_clip(4)
    frames_in = VideoClip(clip.frames[:-1], fps=1.0)
    base = np.array([1, 2, 3, 4, 5, 6, 7], dtype=np.int64)
    pred_a = seeded_lam.decode_clip(frames_in, base)
    later_swapped = base.copy()
    later_swapped[4:] = 0  # actions after transition 3
    pred_b = seeded_lam.decode_clip(frames_in, later_swapped)
    assert np.abs(pred_a[:4] - pred_b[:4]).max() <= 1e-6


def test_decode_validates_lengths_and_bounds(seeded_lam):
    clip = _lam_clip(4)
    frames_in = VideoClip(clip.frames[:-1], fps=1.0)
    with pytest.raises(ValueError, match="one action per input frame"):
        seeded_lam.decode_clip(frames_in, np.zeros(3, dtype=np.int64))
    with pytest.raises(ValueError, match="out of range"):
        seeded_lam.decode_clip(frames_in, np.full(frames_in.num_frames, 12, dtype=np.int64))


def test_static_clip_identity_prediction_has_zero_reconstruction(seeded_lam):
    clip = _lam_clip(5)
    static = torch.from_numpy(np.repeat(clip.frames[:1], 6, axis=0))[None]
    # predicting each next frame as the current frame is exact on a constant clip
    assert float(((static[:, 1:] - static[:, :-1]) ** 2).mean()) == 0.0
    # and the loss targets are exactly frames 2..T
    h, q = seeded_lam.encode_transitions(static)
    pred = seeded_lam.decode_next_frames(static[:, :-1], q.ste_output)
    _, diag, _, _ = seeded_lam.compute_loss(static)
    manual = float(((static[:, 1:] - pred) ** 2).mean())
    assert diag["reconstruction"] == pytest.approx(manual, rel=1e-6)


def test_quantized_actions_are_codebook_rows(seeded_lam):
    clip = _lam_clip(6)
    h, q = seeded_lam.encode_transitions(torch.from_numpy(clip.frames)[None])
    for vec, idx in zip(q.quantized[0], q.indices[0]):
        assert torch.equal(vec, seeded_lam.quantizer.codes[idx])


def test_toy_training_halves_loss_and_actions_steer_decoder(tiny_clips):
    torch.manual_seed(6)
    rng = np.random.default_rng(6)
    model = LatentActionModel(desk_lam_config())
    opt = torch.optim.Adam(model.parameters(), lr=3e-3, betas=(0.9, 0.9999))
    frames = torch.from_numpy(
        np.stack([preprocess_clip(clip, 16, 24, 1.0, 8).frames for _, clip, _ in tiny_clips])
    )
    with torch.no_grad():
        h0, _ = model.encode_transitions(frames)
        model.quantizer.init_from_batch(h0, rng)
    losses = []
    for _ in range(500):
        loss, _, h, q = model.compute_loss(frames)
        opt.zero_grad()
        loss.backward()
        opt.step()
        model.quantizer.ema_update(h.detach(), q.indices, rng)
        losses.append(float(loss.detach()))
    assert losses[-1] < 0.5 * losses[0]

    # a trained decoder must react to the action input
    clip = VideoClip(frames[0].numpy(), fps=1.0)
    frames_in = VideoClip(clip.frames[:-1], fps=1.0)
    pred_a = model.decode_clip(frames_in, np.zeros(7, dtype=np.int64))
    pred_b = model.decode_clip(frames_in, np.full(7, 5, dtype=np.int64))
    assert np.abs(pred_a - pred_b).mean() > 0


def test_sample_random_action_reproducible_and_uniform():
    rng_a = np.random.default_rng(42)
    rng_b = np.random.default_rng(42)
    seq_a = [sample_random_action(rng_a) for _ in range(100)]
    seq_b = [sample_random_action(rng_b) for _ in range(100)]
    assert seq_a == seq_b

    rng = np.random.default_rng(7)
    draws = np.array([sample_random_action(rng) for _ in range(12000)])
    assert draws.min() >= 0 and draws.max() < 12
    counts = np.bincount(draws, minlength=12)
    expected = 12000 / 12
    assert np.all(counts > expected * 0.8)
    assert np.all(counts < expected * 1.2)


def test_action_codebook_export(seeded_lam):
    book = seeded_lam.action_codebook()
    assert book.shape == (12, 8)
    book[0, 0] = 999.0  # export is a copy
    assert float(seeded_lam.quantizer.codes[0, 0]) != 999.0
