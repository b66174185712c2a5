"""Video tokenizer: causal ST-transformer encoder, vector quantizer, and causal
ST-transformer decoder. Trained with reconstruction MSE plus a commitment term;
the codebook itself learns through EMA updates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .data import VideoClip
from .patches import patchify, unpatchify
from .st_transformer import STBlockConfig, STStack, check_finite
from .vq import VectorQuantizer, commitment_loss


@dataclass(frozen=True)
class TokenizerConfig:
    frame_height: int = 120
    frame_width: int = 180
    patch_size: int = 4
    encoder: STBlockConfig = field(default_factory=lambda: STBlockConfig(4, 384, 12))
    decoder: STBlockConfig = field(default_factory=lambda: STBlockConfig(6, 384, 12))
    num_codes: int = 1024
    latent_dim: int = 32
    beta: float = 0.25
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.9999
    max_timesteps: int = 16
    ema_decay: float = 0.99
    ema_epsilon: float = 1e-5
    reseed_interval: int = 256
    # steps trained with the quantizer bypassed before the codebook is seeded
    # from the organized latent space; stabilizes small-scale VQ training
    warmup_steps: int = 0
    # Lloyd refinement passes applied to the sampled codebook seed
    codebook_kmeans_iters: int = 0

    def __post_init__(self):
        if self.frame_height % self.patch_size or self.frame_width % self.patch_size:
            raise ValueError("frame size must be divisible by the patch size")

    @property
    def tokens_height(self) -> int:
        return self.frame_height // self.patch_size

    @property
    def tokens_width(self) -> int:
        return self.frame_width // self.patch_size

    @property
    def tokens_per_frame(self) -> int:
        return self.tokens_height * self.tokens_width


def desk_tokenizer_config(**overrides) -> TokenizerConfig:
    """Small configuration used by tests and the synthetic-dataset experiments."""
    defaults = dict(
        frame_height=32,
        frame_width=48,
        encoder=STBlockConfig(2, 64, 4),
        decoder=STBlockConfig(2, 64, 4),
        num_codes=64,
        latent_dim=8,
        max_timesteps=8,
    )
    defaults.update(overrides)
    return TokenizerConfig(**defaults)


class VideoTokenizer(nn.Module):
    def __init__(self, cfg: TokenizerConfig):
        super().__init__()
        self.cfg = cfg
        patch_dim = cfg.patch_size * cfg.patch_size * 3
        self.patch_embed = nn.Linear(patch_dim, cfg.encoder.d_model)
        self.encoder = STStack(cfg.encoder, cfg.tokens_per_frame, cfg.max_timesteps)
        self.enc_norm = nn.LayerNorm(cfg.encoder.d_model)
        self.to_latent = nn.Linear(cfg.encoder.d_model, cfg.latent_dim)
        self.quantizer = VectorQuantizer(
            cfg.num_codes,
            cfg.latent_dim,
            decay=cfg.ema_decay,
            epsilon=cfg.ema_epsilon,
            reseed_interval=cfg.reseed_interval,
        )
        self.from_latent = nn.Linear(cfg.latent_dim, cfg.decoder.d_model)
        self.decoder = STStack(cfg.decoder, cfg.tokens_per_frame, cfg.max_timesteps)
        self.dec_norm = nn.LayerNorm(cfg.decoder.d_model)
        self.to_pixels = nn.Linear(cfg.decoder.d_model, patch_dim)

    # --- tensor paths (batched, used in training) ---------------------------

    def encode_features(self, frames: torch.Tensor) -> torch.Tensor:
        """(B, T, H, W, 3) -> pre-quantization latents (B, T, S, latent_dim)."""
        self._check_resolution(frames)
        x = self.patch_embed(patchify(frames, self.cfg.patch_size))
        x = self.encoder(x)
        return self.to_latent(self.enc_norm(x))

    def decode_latents(self, latents: torch.Tensor) -> torch.Tensor:
        """Latents (B, T, S, latent_dim) -> unclamped frames (B, T, H, W, 3)."""
        x = self.from_latent(latents)
        x = self.decoder(x)
        x = self.to_pixels(self.dec_norm(x))
        return unpatchify(x, self.cfg.patch_size, self.cfg.frame_height, self.cfg.frame_width)

    def compute_loss(self, frames: torch.Tensor):
        """Reconstruction MSE + commitment term. Returns (loss, diagnostics)."""
        check_finite(frames)
        h = self.encode_features(frames)
        q = self.quantizer.quantize(h)
        recon = self.decode_latents(q.ste_output)
        recon_term = ((frames - recon) ** 2).mean()
        commit_term = commitment_loss(h, q.quantized, self.cfg.beta)
        loss = recon_term + commit_term
        diagnostics = {
            "reconstruction": float(recon_term.detach()),
            "commitment": float(commit_term.detach()),
            "perplexity": self.quantizer.perplexity(q.indices.detach()),
        }
        return loss, diagnostics, h, q

    # --- clip-level API ------------------------------------------------------

    @torch.no_grad()
    def encode_clip(self, clip: VideoClip) -> np.ndarray:
        """Token grid (T, H/p, W/p) of code indices; frame t depends on frames <= t.

        Clips longer than max_timesteps are encoded with a sliding window over
        the most recent max_timesteps frames, which the causal encoder makes
        consistent with full-context encoding up to context truncation.
        """
        frames = torch.from_numpy(clip.frames)[None]
        t = frames.shape[1]
        max_t = self.cfg.max_timesteps
        if t <= max_t:
            h = self.encode_features(frames)
            idx = self.quantizer.quantize(h).indices[0]
        else:
            parts = []
            head = self.quantizer.quantize(self.encode_features(frames[:, :max_t])).indices[0]
            parts.append(head)
            for end in range(max_t + 1, t + 1):
                window = frames[:, end - max_t : end]
                tail = self.quantizer.quantize(self.encode_features(window)).indices[0, -1:]
                parts.append(tail)
            idx = torch.cat(parts, dim=0)
        grid = idx.reshape(t, self.cfg.tokens_height, self.cfg.tokens_width)
        return grid.numpy().astype(np.int64)

    @torch.no_grad()
    def decode_clip(self, tokens: np.ndarray) -> VideoClip:
        """Token grid -> pixel clip, clamped to [0, 1]; windowed like encode_clip."""
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim != 3 or tokens.shape[1:] != (self.cfg.tokens_height, self.cfg.tokens_width):
            raise ValueError(
                f"expected tokens of shape (T, {self.cfg.tokens_height}, "
                f"{self.cfg.tokens_width}), got {tokens.shape}"
            )
        if tokens.min() < 0 or tokens.max() >= self.cfg.num_codes:
            raise ValueError("token index out of range")
        flat = torch.from_numpy(tokens.reshape(1, tokens.shape[0], -1))
        t = flat.shape[1]
        max_t = self.cfg.max_timesteps

        def decode_window(window_tokens: torch.Tensor) -> torch.Tensor:
            latents = self.quantizer.codes[window_tokens]
            return self.decode_latents(latents)[0]

        if t <= max_t:
            frames = decode_window(flat)
        else:
            parts = [decode_window(flat[:, :max_t])]
            for end in range(max_t + 1, t + 1):
                parts.append(decode_window(flat[:, end - max_t : end])[-1:])
            frames = torch.cat(parts, dim=0)
        return VideoClip(np.clip(frames.numpy(), 0.0, 1.0), fps=1.0)

    def loss_on_clip(self, clip: VideoClip):
        loss, diagnostics, _, _ = self.compute_loss(torch.from_numpy(clip.frames)[None])
        return loss, diagnostics

    def _check_resolution(self, frames: torch.Tensor) -> None:
        if frames.shape[2] != self.cfg.frame_height or frames.shape[3] != self.cfg.frame_width:
            raise ValueError(
                f"expected {self.cfg.frame_height}x{self.cfg.frame_width} frames, "
                f"got {frames.shape[2]}x{frames.shape[3]}"
            )
