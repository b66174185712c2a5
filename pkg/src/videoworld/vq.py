"""Vector quantization with straight-through gradients, commitment loss, and
momentum (EMA) codebook updates. The codebook learns purely through the EMA
statistics; no gradient ever reaches the code vectors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn


@dataclass
class QuantizationResult:
    indices: torch.Tensor  # integer grid, input shape minus the channel axis
    quantized: torch.Tensor  # exact codebook rows, same shape as the input
    ste_output: torch.Tensor  # forward = quantized, backward = identity to input


def commitment_loss(h: torch.Tensor, z: torch.Tensor, beta: float) -> torch.Tensor:
    """beta * mean over vectors of ||sg(z) - h||^2; no gradient flows into z."""
    if h.shape != z.shape:
        raise ValueError(f"shape mismatch: {tuple(h.shape)} vs {tuple(z.shape)}")
    return beta * ((z.detach() - h) ** 2).sum(dim=-1).mean()


class VectorQuantizer(nn.Module):
    """K x D codebook maintained by exponential moving averages.

    Code k always equals ema_sums[k] / max(ema_counts[k], epsilon), so codes
    that receive no assignments keep their value exactly (both statistics decay
    by the same factor). Codes unused for reseed_interval consecutive updates
    are reseeded to a random in-batch vector. ema_update mutates state and must
    be serialized per instance; quantize is pure.
    """

    def __init__(
        self,
        num_codes: int,
        code_dim: int,
        decay: float = 0.99,
        epsilon: float = 1e-5,
        reseed_interval: int = 256,
    ):
        super().__init__()
        if num_codes < 1:
            raise ValueError("num_codes must be >= 1")
        if not 0.0 < decay < 1.0:
            raise ValueError("decay must lie in (0, 1)")
        self.num_codes = num_codes
        self.code_dim = code_dim
        self.decay = decay
        self.epsilon = epsilon
        self.reseed_interval = reseed_interval
        self.register_buffer("codes", torch.zeros(num_codes, code_dim))
        self.register_buffer("ema_counts", torch.zeros(num_codes))
        self.register_buffer("ema_sums", torch.zeros(num_codes, code_dim))
        self.register_buffer("unused_steps", torch.zeros(num_codes, dtype=torch.long))
        self.register_buffer("initialized", torch.tensor(False))

    def init_from_batch(
        self, h: torch.Tensor, rng: np.random.Generator, kmeans_iters: int = 0
    ) -> None:
        """Seed codes from encoder outputs, sampled without replacement.

        kmeans_iters > 0 refines the sampled rows with Lloyd iterations over
        the same vectors, which spreads the codebook much better when seeding
        from a warmed-up encoder.
        """
        flat = h.detach().reshape(-1, h.shape[-1])
        if flat.shape[-1] != self.code_dim:
            raise ValueError(f"feature dim {flat.shape[-1]} != code dim {self.code_dim}")
        if flat.shape[0] < self.num_codes:
            raise ValueError(
                f"need at least {self.num_codes} vectors to seed the codebook, "
                f"got {flat.shape[0]}"
            )
        pick = rng.choice(flat.shape[0], size=self.num_codes, replace=False)
        rows = flat[torch.from_numpy(np.ascontiguousarray(pick))].to(self.codes.dtype)
        for _ in range(kmeans_iters):
            d2 = (
                (flat**2).sum(dim=1, keepdim=True)
                + (rows**2).sum(dim=1)
                - 2.0 * flat.to(rows.dtype) @ rows.T
            )
            assign = torch.argmin(d2, dim=1)
            for k in range(self.num_codes):
                members = flat[assign == k]
                if members.shape[0] > 0:
                    rows[k] = members.mean(dim=0).to(rows.dtype)
        self.codes.copy_(rows)
        self.ema_sums.copy_(rows)
        self.ema_counts.fill_(1.0)
        self.unused_steps.zero_()
        self.initialized.fill_(True)

    def quantize(self, h: torch.Tensor) -> QuantizationResult:
        """Nearest code under squared Euclidean distance, ties to the lowest index."""
        if h.shape[-1] != self.code_dim:
            raise ValueError(f"feature dim {h.shape[-1]} != code dim {self.code_dim}")
        flat = h.reshape(-1, self.code_dim)
        codes = self.codes.to(h.dtype)
        with torch.no_grad():
            d2 = (
                (flat**2).sum(dim=1, keepdim=True)
                + (codes**2).sum(dim=1)
                - 2.0 * flat @ codes.T
            )
            indices = torch.argmin(d2, dim=1)  # argmin takes the first minimum
        quantized = codes[indices].reshape(h.shape)
        ste_output = h + (quantized - h).detach()
        return QuantizationResult(indices.reshape(h.shape[:-1]), quantized, ste_output)

    @torch.no_grad()
    def ema_update(self, h: torch.Tensor, indices: torch.Tensor, rng: np.random.Generator) -> None:
        if not bool(self.initialized):
            raise RuntimeError("codebook not initialized; call init_from_batch first")
        flat = h.detach().reshape(-1, self.code_dim).to(self.codes.dtype)
        idx = indices.reshape(-1)
        one_hot = torch.zeros(flat.shape[0], self.num_codes, dtype=self.codes.dtype)
        one_hot[torch.arange(flat.shape[0]), idx] = 1.0
        batch_counts = one_hot.sum(dim=0)
        batch_sums = one_hot.T @ flat

        self.ema_counts.mul_(self.decay).add_(batch_counts, alpha=1.0 - self.decay)
        self.ema_sums.mul_(self.decay).add_(batch_sums, alpha=1.0 - self.decay)
        self.codes.copy_(self.ema_sums / self.ema_counts.clamp_min(self.epsilon)[:, None])

        used = batch_counts > 0
        self.unused_steps[used] = 0
        self.unused_steps[~used] += 1
        dead = self.unused_steps >= self.reseed_interval
        if dead.any():
            for k in torch.nonzero(dead).flatten().tolist():
                row = flat[int(rng.integers(0, flat.shape[0]))]
                self.codes[k] = row
                self.ema_sums[k] = row
                self.ema_counts[k] = 1.0
                self.unused_steps[k] = 0

    def perplexity(self, indices: torch.Tensor) -> float:
        """exp(entropy) of the empirical code usage; K means uniform usage."""
        counts = torch.bincount(indices.reshape(-1), minlength=self.num_codes).double()
        probs = counts / counts.sum()
        nonzero = probs[probs > 0]
        return float(torch.exp(-(nonzero * nonzero.log()).sum()))
