from __future__ import annotations

import numpy as np
import pytest
import torch

from videoworld.data import SyntheticSceneConfig, generate_synthetic_clip, preprocess_clip
from videoworld.lam import LatentActionModel, desk_lam_config
from videoworld.tokenizer import VideoTokenizer, desk_tokenizer_config


@pytest.fixture(scope="session")
def tiny_clips():
    """Four deterministic desk-resolution clips with labels."""
    out = []
    for seed in range(4):
        cfg = SyntheticSceneConfig(seed=seed)
        out.append((cfg, *generate_synthetic_clip(cfg)))
    return out


@pytest.fixture()
def seeded_tokenizer(tiny_clips):
    """Desk tokenizer with a data-initialized codebook (untrained weights)."""
    torch.manual_seed(0)
    model = VideoTokenizer(desk_tokenizer_config())
    frames = torch.from_numpy(np.stack([clip.frames for _, clip, _ in tiny_clips[:2]]))
    with torch.no_grad():
        model.quantizer.init_from_batch(model.encode_features(frames), np.random.default_rng(0))
    return model


@pytest.fixture()
def seeded_lam(tiny_clips):
    torch.manual_seed(1)
    model = LatentActionModel(desk_lam_config())
    lam_frames = np.stack(
        [preprocess_clip(clip, 16, 24, 1.0, 8).frames for _, clip, _ in tiny_clips[:2]]
    )
    with torch.no_grad():
        h, _ = model.encode_transitions(torch.from_numpy(lam_frames))
        model.quantizer.init_from_batch(h, np.random.default_rng(1))
    return model
