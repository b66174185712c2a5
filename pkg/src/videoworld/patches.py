"""Non-overlapping square patch flattening shared by the pixel-space models."""

from __future__ import annotations

import torch


def patchify(frames: torch.Tensor, patch: int) -> torch.Tensor:
    """(B, T, H, W, C) -> (B, T, S, patch*patch*C) with S = (H/patch)*(W/patch)."""
    b, t, h, w, c = frames.shape
    if h % patch or w % patch:
        raise ValueError(f"resolution {h}x{w} not divisible by patch size {patch}")
    gh, gw = h // patch, w // patch
    x = frames.reshape(b, t, gh, patch, gw, patch, c)
    x = x.permute(0, 1, 2, 4, 3, 5, 6)
    return x.reshape(b, t, gh * gw, patch * patch * c)


def unpatchify(tokens: torch.Tensor, patch: int, height: int, width: int) -> torch.Tensor:
    """Inverse of patchify back to (B, T, H, W, C)."""
    b, t, s, d = tokens.shape
    gh, gw = height // patch, width // patch
    c = d // (patch * patch)
    x = tokens.reshape(b, t, gh, gw, patch, patch, c)
    x = x.permute(0, 1, 2, 4, 3, 5, 6)
    return x.reshape(b, t, height, width, c)
