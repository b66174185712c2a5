"""Factorized space-time transformer: per-frame spatial attention, per-position
causal temporal attention, and a feed-forward sublayer, stacked with pre-norm
residuals. Shared by the tokenizer, the latent action model, and the dynamics
model."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass(frozen=True)
class STBlockConfig:
    num_layers: int
    d_model: int
    num_heads: int
    ff_multiplier: int = 4

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.d_model % self.num_heads != 0:
            raise ValueError(
                f"d_model {self.d_model} not divisible by num_heads {self.num_heads}"
            )


def check_finite(x: torch.Tensor) -> None:
    if not torch.isfinite(x).all():
        raise ValueError("non-finite values in input tensor")


class MultiheadSelfAttention(nn.Module):
    """Plain multi-head self-attention over the middle axis of (B, L, D)."""

    def __init__(self, d_model: int, num_heads: int, causal: bool):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = d_model // num_heads
        self.causal = causal
        self.qkv = nn.Linear(d_model, 3 * d_model, bias=False)
        self.out = nn.Linear(d_model, d_model, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, length, d = x.shape
        qkv = self.qkv(x).reshape(b, length, 3, self.num_heads, self.head_dim)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)  # each (B, H, L, hd)
        out = F.scaled_dot_product_attention(q, k, v, is_causal=self.causal)
        out = out.permute(0, 2, 1, 3).reshape(b, length, d)
        return self.out(out)

    def value_path(self, x: torch.Tensor) -> torch.Tensor:
        """Output when attention reduces to averaging identical values."""
        d = x.shape[-1]
        w_v = self.qkv.weight[2 * d :]
        return self.out(x @ w_v.T)


class SpatialAttention(nn.Module):
    """Self-attention within each frame, independently per time step."""

    def __init__(self, d_model: int, num_heads: int):
        super().__init__()
        self.attn = MultiheadSelfAttention(d_model, num_heads, causal=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        check_finite(x)
        b, t, s, d = x.shape
        out = self.attn(x.reshape(b * t, s, d))
        return out.reshape(b, t, s, d)


class TemporalCausalAttention(nn.Module):
    """Strictly causal self-attention over time, independently per spatial position."""

    def __init__(self, d_model: int, num_heads: int):
        super().__init__()
        self.attn = MultiheadSelfAttention(d_model, num_heads, causal=True)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        check_finite(x)
        b, t, s, d = x.shape
        out = self.attn(x.permute(0, 2, 1, 3).reshape(b * s, t, d))
        return out.reshape(b, s, t, d).permute(0, 2, 1, 3)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, multiplier: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(d_model, multiplier * d_model),
            nn.GELU(),
            nn.Linear(multiplier * d_model, d_model),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class STBlock(nn.Module):
    def __init__(self, cfg: STBlockConfig):
        super().__init__()
        self.norm_s = nn.LayerNorm(cfg.d_model)
        self.spatial = SpatialAttention(cfg.d_model, cfg.num_heads)
        self.norm_t = nn.LayerNorm(cfg.d_model)
        self.temporal = TemporalCausalAttention(cfg.d_model, cfg.num_heads)
        self.norm_f = nn.LayerNorm(cfg.d_model)
        self.ff = FeedForward(cfg.d_model, cfg.ff_multiplier)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.spatial(self.norm_s(x))
        x = x + self.temporal(self.norm_t(x))
        x = x + self.ff(self.norm_f(x))
        return x


class STStack(nn.Module):
    """num_layers ST blocks with learned additive space and time embeddings.

    Position embeddings start at zero so an untrained stack treats a constant
    prefix identically at every time step; they are applied once at the input.
    Input and output are (B, T, S, D) feature volumes with S flattened spatial
    positions.
    """

    def __init__(self, cfg: STBlockConfig, num_positions: int, max_timesteps: int):
        super().__init__()
        self.cfg = cfg
        self.num_positions = num_positions
        self.max_timesteps = max_timesteps
        self.spatial_pos = nn.Parameter(torch.zeros(num_positions, cfg.d_model))
        self.temporal_pos = nn.Parameter(torch.zeros(max_timesteps, cfg.d_model))
        self.blocks = nn.ModuleList(STBlock(cfg) for _ in range(cfg.num_layers))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        check_finite(x)
        b, t, s, d = x.shape
        if s != self.num_positions:
            raise ValueError(f"expected {self.num_positions} spatial positions, got {s}")
        if t > self.max_timesteps:
            raise ValueError(f"sequence length {t} exceeds max_timesteps {self.max_timesteps}")
        if d != self.cfg.d_model:
            raise ValueError(f"expected d_model {self.cfg.d_model}, got {d}")
        x = x + self.spatial_pos[None, None] + self.temporal_pos[:t][None, :, None]
        for block in self.blocks:
            x = block(x)
        return x
