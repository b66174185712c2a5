"""Action-conditioned masked-token dynamics over tokenizer codes: masked
cross-entropy training, confidence-ranked iterative decoding, and
autoregressive multi-frame rollout."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .data import VideoClip
from .st_transformer import STBlockConfig, STStack, check_finite
from .tokenizer import VideoTokenizer


@dataclass(frozen=True)
class DynamicsConfig:
    stack: STBlockConfig = field(default_factory=lambda: STBlockConfig(12, 512, 8))
    tokens_height: int = 30
    tokens_width: int = 45
    num_codes: int = 1024
    num_actions: int = 12
    decode_steps: int = 25
    temperature: float = 1.0
    max_timesteps: int = 16
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.9999

    def __post_init__(self):
        if self.decode_steps < 1:
            raise ValueError("decode_steps must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    @property
    def tokens_per_frame(self) -> int:
        return self.tokens_height * self.tokens_width

    @property
    def mask_id(self) -> int:
        return self.num_codes


def desk_dynamics_config(**overrides) -> DynamicsConfig:
    defaults = dict(
        stack=STBlockConfig(4, 128, 4),
        tokens_height=8,
        tokens_width=12,
        num_codes=64,
        max_timesteps=8,
        learning_rate=1e-3,
    )
    defaults.update(overrides)
    return DynamicsConfig(**defaults)


def mask_schedule(num_tokens: int, step: int, total_steps: int) -> int:
    """Tokens still masked after decode step `step` of `total_steps`.

    Cosine schedule clamped so at least one token is revealed per step and
    nothing stays masked at the final step.
    """
    if num_tokens < 1:
        raise ValueError("num_tokens must be >= 1")
    if not 1 <= step <= total_steps:
        raise ValueError(f"step must lie in [1, {total_steps}], got {step}")
    cosine = math.floor(num_tokens * math.cos(math.pi * step / (2 * total_steps)))
    return max(0, min(cosine, num_tokens - step))


def masked_cross_entropy(
    logits: torch.Tensor, targets: torch.Tensor, mask: torch.Tensor
) -> torch.Tensor:
    """Mean cross-entropy over masked positions only.

    logits (..., K), targets (...) integer, mask (...) boolean selecting the
    positions that contribute; everything else is ignored.
    """
    if not mask.any():
        raise ValueError("mask selects no positions")
    return F.cross_entropy(logits[mask], targets[mask])


class DynamicsModel(nn.Module):
    """ST-transformer over token embeddings with additive per-action embeddings.

    Input is a (B, T, S) grid of code indices where masked entries carry the
    extra MASK id; the action for transition t is added to every token of frame
    t, so frame t+1 reads its action context from frame t through the causal
    temporal attention. The output head scores the real codes only and starts
    at zero so the initial masked cross-entropy sits at ln(num_codes).
    """

    def __init__(self, cfg: DynamicsConfig):
        super().__init__()
        self.cfg = cfg
        self.token_embed = nn.Embedding(cfg.num_codes + 1, cfg.stack.d_model)
        self.action_embed = nn.Embedding(cfg.num_actions, cfg.stack.d_model)
        self.stack = STStack(cfg.stack, cfg.tokens_per_frame, cfg.max_timesteps)
        self.out_norm = nn.LayerNorm(cfg.stack.d_model)
        self.head = nn.Linear(cfg.stack.d_model, cfg.num_codes)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, tokens: torch.Tensor, actions: torch.Tensor) -> torch.Tensor:
        """tokens (B, T, S) with MASK allowed, actions (B, T-1) -> logits (B, T, S, K)."""
        b, t, s = tokens.shape
        if actions.shape != (b, t - 1):
            raise ValueError(f"expected actions of shape ({b}, {t - 1}), got {tuple(actions.shape)}")
        x = self.token_embed(tokens)
        act = self.action_embed(actions)[:, :, None, :]
        act = torch.cat([act, torch.zeros(b, 1, 1, act.shape[-1], dtype=act.dtype)], dim=1)
        x = x + act
        x = self.stack(x)
        return self.head(self.out_norm(x))


def sample_mask_positions(
    rng: np.random.Generator, batch: int, num_targets: int
) -> list[np.ndarray]:
    """One cosine-schedule mask draw per sample over flat target positions."""
    out = []
    for _ in range(batch):
        while True:
            ratio = math.cos(math.pi * rng.random() / 2.0)
            count = min(num_targets, max(1, math.ceil(ratio * num_targets)))
            if count >= 1:
                break
        out.append(rng.choice(num_targets, size=count, replace=False))
    return out


def dynamics_train_loss(
    model: DynamicsModel,
    tokens: torch.Tensor,
    actions: torch.Tensor,
    rng: np.random.Generator,
):
    """Masked-token prediction loss on a (B, T, S) batch of token grids.

    A mask ratio is drawn from the cosine schedule per sample, that fraction of
    target-frame tokens (frames 2..T) is replaced by MASK in the input, and the
    loss is the mean cross-entropy at masked positions only.
    """
    b, t, s = tokens.shape
    if t < 2:
        raise ValueError("need at least two token frames")
    num_targets = (t - 1) * s
    positions = sample_mask_positions(rng, b, num_targets)

    masked = tokens.clone()
    mask = torch.zeros(b, t, s, dtype=torch.bool)
    for i, pos in enumerate(positions):
        frame = 1 + pos // s
        col = pos % s
        masked[i, frame, col] = model.cfg.mask_id
        mask[i, frame, col] = True

    logits = model(masked, actions)
    loss = masked_cross_entropy(logits, tokens, mask)
    diagnostics = {
        "masked_fraction": float(mask[:, 1:].float().mean()),
        "cross_entropy": float(loss.detach()),
    }
    return loss, diagnostics


def _trim_context(tokens: np.ndarray, actions: np.ndarray, max_timesteps: int):
    """Keep the most recent max_timesteps - 1 context frames plus their actions."""
    keep = max_timesteps - 1
    if tokens.shape[-2] > keep:
        tokens = tokens[..., -keep:, :]
        actions = actions[..., -keep:]
    return tokens, actions


def iterative_decode_batch(
    model: DynamicsModel,
    prev_tokens: np.ndarray,
    actions: np.ndarray,
    cfg: DynamicsConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Decode the next frame's tokens for a batch of histories.

    prev_tokens (B, t, S) and actions (B, t), where actions[:, -1] drives the
    new transition; earlier entries replay the context's own transitions. Each
    of the decode_steps runs one model evaluation; sampled tokens are kept in
    confidence order until the schedule's masked count is reached.
    """
    prev_tokens = np.asarray(prev_tokens, dtype=np.int64)
    actions = np.asarray(actions, dtype=np.int64)
    if prev_tokens.ndim != 3 or prev_tokens.shape[1] < 1:
        raise ValueError("prev_tokens must be (B, t, S) with t >= 1")
    if actions.shape != prev_tokens.shape[:2]:
        raise ValueError("need one action per context frame (last one is the new transition)")
    if actions.min() < 0 or actions.max() >= cfg.num_actions:
        raise ValueError("action index out of range")
    prev_tokens, actions = _trim_context(prev_tokens, actions, cfg.max_timesteps)

    b, t, s = prev_tokens.shape
    grid = np.concatenate(
        [prev_tokens, np.full((b, 1, s), cfg.mask_id, dtype=np.int64)], axis=1
    )
    still_masked = np.ones((b, s), dtype=bool)
    steps = cfg.decode_steps
    with torch.no_grad():
        for step in range(1, steps + 1):
            logits = model(torch.from_numpy(grid), torch.from_numpy(actions))[:, -1]
            logits_np = logits.numpy().astype(np.float64)
            target_masked = mask_schedule(s, step, steps)
            for i in range(b):
                pos = np.nonzero(still_masked[i])[0]
                if pos.size == 0:
                    continue
                row_logits = logits_np[i, pos]
                probs = _softmax(row_logits)
                if cfg.temperature == 0.0:
                    sampled = row_logits.argmax(axis=-1)
                else:
                    gumbel = -np.log(-np.log(rng.random(row_logits.shape)))
                    sampled = (row_logits / cfg.temperature + gumbel).argmax(axis=-1)
                confidence = probs[np.arange(pos.size), sampled]
                reveal = pos.size - target_masked
                if reveal <= 0:
                    continue
                order = np.argsort(-confidence, kind="stable")[:reveal]
                grid[i, -1, pos[order]] = sampled[order]
                still_masked[i, pos[order]] = False
    if still_masked.any():
        raise RuntimeError("decode finished with masked tokens remaining")
    return grid[:, -1]


def iterative_decode(
    model: DynamicsModel,
    prev_tokens: np.ndarray,
    actions: np.ndarray,
    cfg: DynamicsConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Single-history variant of iterative_decode_batch: (t, S) + (t,) -> (S,)."""
    out = iterative_decode_batch(model, prev_tokens[None], np.asarray(actions)[None], cfg, rng)
    return out[0]


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def rollout_batch(
    prompts: list[VideoClip],
    actions: np.ndarray,
    tokenizer: VideoTokenizer,
    model: DynamicsModel,
    cfg: DynamicsConfig,
    rng: np.random.Generator,
    prompt_actions: np.ndarray | None = None,
) -> list[VideoClip]:
    """Roll out len(actions[i]) new frames per prompt, advancing all histories in lockstep.

    All prompts must share a frame count. actions is (B, n); prompt_actions
    (B, p-1) replays the transitions inside a multi-frame prompt (required when
    p >= 2 so inference sees the same action conditioning as training).
    """
    actions = np.asarray(actions, dtype=np.int64)
    if actions.ndim != 2 or actions.shape[1] < 1:
        raise ValueError("actions must be (B, n) with n >= 1")
    if len(prompts) != actions.shape[0]:
        raise ValueError("one action row per prompt required")
    p = prompts[0].num_frames
    if any(c.num_frames != p for c in prompts):
        raise ValueError("all prompts in a batch must have the same frame count")
    if p >= 2:
        if prompt_actions is None:
            raise ValueError("multi-frame prompts need prompt_actions for their transitions")
        prompt_actions = np.asarray(prompt_actions, dtype=np.int64)
        if prompt_actions.shape != (len(prompts), p - 1):
            raise ValueError(f"prompt_actions must be ({len(prompts)}, {p - 1})")
    else:
        prompt_actions = np.zeros((len(prompts), 0), dtype=np.int64)

    s = cfg.tokens_per_frame
    grids = np.stack([tokenizer.encode_clip(c).reshape(p, s) for c in prompts])
    history_actions = prompt_actions
    for j in range(actions.shape[1]):
        history_actions = np.concatenate([history_actions, actions[:, j : j + 1]], axis=1)
        next_tokens = iterative_decode_batch(model, grids, history_actions, cfg, rng)
        grids = np.concatenate([grids, next_tokens[:, None, :]], axis=1)

    clips = []
    for i, prompt in enumerate(prompts):
        tokens = grids[i].reshape(-1, cfg.tokens_height, cfg.tokens_width)
        decoded = tokenizer.decode_clip(tokens)
        frames = np.concatenate([prompt.frames, decoded.frames[p:]], axis=0)
        clips.append(VideoClip(frames, fps=prompt.fps))
    return clips


def rollout(
    prompt: VideoClip,
    actions: np.ndarray,
    tokenizer: VideoTokenizer,
    model: DynamicsModel,
    cfg: DynamicsConfig,
    rng: np.random.Generator,
    prompt_actions: np.ndarray | None = None,
) -> VideoClip:
    """Prompt frames followed by one generated frame per action.

    The prompt is tokenized, each action decodes the next frame's tokens
    conditioned on all tokens so far (sliding window beyond the trained
    length), and the full token sequence is detokenized with the tokenizer
    decoder; output pixels keep the original prompt frames.
    """
    actions = np.asarray(actions, dtype=np.int64)
    if actions.ndim != 1 or actions.size < 1:
        raise ValueError("actions must be a non-empty 1-D index sequence")
    pa = None if prompt_actions is None else np.asarray(prompt_actions, dtype=np.int64)[None]
    return rollout_batch([prompt], actions[None], tokenizer, model, cfg, rng, pa)[0]
