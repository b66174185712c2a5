"""Latent action model: infers one discrete action per frame transition from
pixels alone, trained by predicting the next frame. Used at inference only to
read actions off reference trajectories and to expose the action codebook."""

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
class LamConfig:
    frame_height: int = 40
    frame_width: int = 60
    patch_size: int = 4
    encoder: STBlockConfig = field(default_factory=lambda: STBlockConfig(8, 384, 12))
    decoder: STBlockConfig = field(default_factory=lambda: STBlockConfig(12, 384, 12))
    num_actions: int = 12
    latent_dim: int = 32
    beta: float = 0.25
    learning_rate: float = 1e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.9999
    max_timesteps: int = 16
    ema_decay: float = 0.99
    ema_epsilon: float = 1e-5
    reseed_interval: int = 256
    codebook_kmeans_iters: int = 0

    def __post_init__(self):
        if self.num_actions < 2:
            raise ValueError("num_actions must be >= 2")
        if self.frame_height % self.patch_size or self.frame_width % self.patch_size:
            raise ValueError("frame size must be divisible by the patch size")

    @property
    def tokens_per_frame(self) -> int:
        return (self.frame_height // self.patch_size) * (self.frame_width // self.patch_size)


def desk_lam_config(**overrides) -> LamConfig:
    defaults = dict(
        frame_height=16,
        frame_width=24,
        encoder=STBlockConfig(2, 64, 4),
        decoder=STBlockConfig(2, 64, 4),
        latent_dim=8,
        max_timesteps=8,
    )
    defaults.update(overrides)
    return LamConfig(**defaults)


def sample_random_action(rng: np.random.Generator, num_actions: int = 12) -> int:
    """Uniform draw from the action codebook indices."""
    return int(rng.integers(0, num_actions))


class LatentActionModel(nn.Module):
    def __init__(self, cfg: LamConfig):
        super().__init__()
        self.cfg = cfg
        patch_dim = cfg.patch_size * cfg.patch_size * 3
        self.enc_embed = nn.Linear(patch_dim, cfg.encoder.d_model)
        self.encoder = STStack(cfg.encoder, cfg.tokens_per_frame, cfg.max_timesteps)
        self.enc_norm = nn.LayerNorm(cfg.encoder.d_model)
        self.to_latent = nn.Linear(cfg.encoder.d_model, cfg.latent_dim)
        self.quantizer = VectorQuantizer(
            cfg.num_actions,
            cfg.latent_dim,
            decay=cfg.ema_decay,
            epsilon=cfg.ema_epsilon,
            reseed_interval=cfg.reseed_interval,
        )
        self.dec_embed = nn.Linear(patch_dim, cfg.decoder.d_model)
        self.action_up = nn.Linear(cfg.latent_dim, cfg.decoder.d_model)
        self.decoder = STStack(cfg.decoder, cfg.tokens_per_frame, cfg.max_timesteps)
        self.dec_norm = nn.LayerNorm(cfg.decoder.d_model)
        self.to_pixels = nn.Linear(cfg.decoder.d_model, patch_dim)

    # --- tensor paths --------------------------------------------------------

    def encode_transitions(self, frames: torch.Tensor):
        """(B, T, H, W, 3) -> pooled transition latents (B, T-1, latent_dim) + quantization.

        The latent for transition i is pooled from the causal feature of frame
        i+1, so it is a function of frames 1..i+1 only.
        """
        self._check_resolution(frames)
        if frames.shape[1] < 2:
            raise ValueError("need at least two frames to infer an action")
        x = self.enc_embed(patchify(frames, self.cfg.patch_size))
        feats = self.encoder(x)
        pooled = feats[:, 1:].mean(dim=2)
        h = self.to_latent(self.enc_norm(pooled))
        return h, self.quantizer.quantize(h)

    def decode_next_frames(
        self, frames_in: torch.Tensor, action_vecs: torch.Tensor
    ) -> torch.Tensor:
        """Frames 1..T-1 plus per-transition action vectors -> unclamped F_hat 2..T.

        The action vector for transition i is broadcast-added to every spatial
        token of frame i, so prediction t+1 sees frames 1..t and actions 1..t.
        """
        if frames_in.shape[1] != action_vecs.shape[1]:
            raise ValueError(
                f"got {frames_in.shape[1]} frames but {action_vecs.shape[1]} actions"
            )
        x = self.dec_embed(patchify(frames_in, self.cfg.patch_size))
        x = x + self.action_up(action_vecs)[:, :, None, :]
        x = self.decoder(x)
        x = self.to_pixels(self.dec_norm(x))
        return unpatchify(x, self.cfg.patch_size, self.cfg.frame_height, self.cfg.frame_width)

    def compute_loss(self, frames: torch.Tensor):
        """Next-frame reconstruction MSE + commitment term on the action latents."""
        check_finite(frames)
        h, q = self.encode_transitions(frames)
        pred = self.decode_next_frames(frames[:, :-1], q.ste_output)
        recon_term = ((frames[:, 1:] - pred) ** 2).mean()
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
    def infer_actions(self, clip: VideoClip) -> np.ndarray:
        """Length T-1 action indices; index i depends on frames 1..i+1 only.

        Long clips fall back to a sliding window of the most recent
        max_timesteps frames per transition.
        """
        frames = torch.from_numpy(clip.frames)[None]
        t = frames.shape[1]
        if t < 2:
            raise ValueError("need at least two frames to infer an action")
        max_t = self.cfg.max_timesteps
        if t <= max_t:
            _, q = self.encode_transitions(frames)
            return q.indices[0].numpy().astype(np.int64)
        parts = [self.encode_transitions(frames[:, :max_t])[1].indices[0]]
        for end in range(max_t + 1, t + 1):
            window = frames[:, end - max_t : end]
            parts.append(self.encode_transitions(window)[1].indices[0, -1:])
        return torch.cat(parts).numpy().astype(np.int64)

    @torch.no_grad()
    def decode_clip(self, frames_in: VideoClip, actions: np.ndarray) -> np.ndarray:
        """Predicted frames 2..T from frames 1..T-1 and action indices, in [0, 1]."""
        actions = np.asarray(actions, dtype=np.int64)
        if actions.ndim != 1 or len(actions) != frames_in.num_frames:
            raise ValueError(
                f"need one action per input frame: {frames_in.num_frames} frames, "
                f"{len(actions)} actions"
            )
        if actions.min() < 0 or actions.max() >= self.cfg.num_actions:
            raise ValueError("action index out of range")
        vecs = self.quantizer.codes[torch.from_numpy(actions)][None]
        pred = self.decode_next_frames(torch.from_numpy(frames_in.frames)[None], vecs)
        return np.clip(pred[0].numpy(), 0.0, 1.0)

    def action_codebook(self) -> np.ndarray:
        return self.quantizer.codes.detach().numpy().copy()

    def _check_resolution(self, frames: torch.Tensor) -> None:
        if frames.shape[2] != self.cfg.frame_height or frames.shape[3] != self.cfg.frame_width:
            raise ValueError(
                f"expected {self.cfg.frame_height}x{self.cfg.frame_width} frames, "
                f"got {frames.shape[2]}x{frames.shape[3]}"
            )
