from __future__ import annotations

import numpy as np
import pytest
import torch

from videoworld.st_transformer import (
    STBlockConfig,
    STStack,
    SpatialAttention,
    TemporalCausalAttention,
)


def _randomize(module: torch.nn.Module, seed: int, scale: float = 0.05) -> None:
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.add_(torch.randn(p.shape, generator=gen) * scale)


def test_config_rejects_bad_head_split():
    with pytest.raises(ValueError, match="divisible"):
        STBlockConfig(2, 64, 5)


def test_spatial_attention_shape_and_frame_independence():
    torch.manual_seed(0)
    attn = SpatialAttention(16, 4)
    x = torch.randn(2, 3, 5, 16)
    y = attn(x)
    assert y.shape == x.shape
    x2 = x.clone()
    x2[:, 1] += 1.0  # perturb frame 1 only
    y2 = attn(x2)
    assert torch.equal(y[:, 0], y2[:, 0])
    assert torch.equal(y[:, 2], y2[:, 2])


def test_spatial_attention_uniform_on_identical_vectors():
    torch.manual_seed(1)
    attn = SpatialAttention(8, 2)
    v = torch.randn(1, 1, 1, 8).expand(1, 2, 6, 8)  # all positions identical
    out = attn(v)
    expected = attn.attn.value_path(v)  # uniform weights average identical values
    assert torch.allclose(out, expected, atol=1e-6)


def test_spatial_attention_rejects_nonfinite():
    attn = SpatialAttention(8, 2)
    bad = torch.full((1, 1, 2, 8), float("nan"))
    with pytest.raises(ValueError, match="non-finite"):
        attn(bad)


def test_temporal_attention_single_step_is_value_path():
    torch.manual_seed(2)
    attn = TemporalCausalAttention(8, 2)
    x = torch.randn(2, 1, 3, 8)
    out = attn(x)
    assert torch.allclose(out, attn.attn.value_path(x), atol=1e-6)


def test_temporal_attention_causality_is_bitwise():
    torch.manual_seed(3)
    attn = TemporalCausalAttention(16, 4)
    x = torch.randn(1, 5, 4, 16)
    y = attn(x)
    x2 = x.clone()
    x2[:, 3] += 2.0
    y2 = attn(x2)
    assert torch.equal(y[:, :3], y2[:, :3])


def test_temporal_attention_position_independence():
    torch.manual_seed(4)
    attn = TemporalCausalAttention(16, 4)
    x = torch.randn(1, 4, 6, 16)
    y = attn(x)
    x2 = x.clone()
    x2[:, :, 2] += 1.0
    y2 = attn(x2)
    keep = [i for i in range(6) if i != 2]
    assert torch.equal(y[:, :, keep], y2[:, :, keep])


@pytest.mark.parametrize("num_layers", [1, 2, 4])
def test_stack_causality_across_depths(num_layers):
    torch.manual_seed(5)
    stack = STStack(STBlockConfig(num_layers, 32, 4), num_positions=6, max_timesteps=6)
    _randomize(stack, seed=num_layers)
    x = torch.randn(2, 5, 6, 32)
    with torch.no_grad():
        y = stack(x)
        for t in range(1, 5):
            x2 = x.clone()
            x2[:, t] += torch.randn(2, 6, 32)
            y2 = stack(x2)
            assert float((y[:, :t] - y2[:, :t]).abs().max()) <= 1e-6


def test_paper_scale_encoder_constructs():
    stack = STStack(STBlockConfig(4, 384, 12), num_positions=30 * 45, max_timesteps=16)
    assert sum(p.numel() for p in stack.parameters()) > 1_000_000


def test_zero_residual_stack_is_identity_plus_positions():
    cfg = STBlockConfig(2, 8, 2)
    stack = STStack(cfg, num_positions=4, max_timesteps=3)
    with torch.no_grad():
        for name, p in stack.named_parameters():
            if "pos" in name:
                p.copy_(torch.randn(p.shape, generator=torch.Generator().manual_seed(0)))
            else:
                p.zero_()
    x = torch.randn(1, 3, 4, 8)
    y = stack(x)
    expected = x + stack.spatial_pos[None, None] + stack.temporal_pos[:3][None, :, None]
    assert torch.allclose(y, expected, atol=1e-6)


def test_stack_gradients_match_finite_differences():
    torch.manual_seed(7)
    stack = STStack(STBlockConfig(1, 8, 2), num_positions=4, max_timesteps=2).double()
    _randomize(stack, seed=11, scale=0.1)
    x = torch.randn(1, 2, 4, 8, dtype=torch.float64, requires_grad=True)
    w = torch.randn(1, 2, 4, 8, dtype=torch.float64)

    def loss_fn():
        return (stack(x) * w).sum()

    loss = loss_fn()
    loss.backward()

    rng = np.random.default_rng(0)
    eps = 1e-6
    checked = 0
    for p in list(stack.parameters()) + [x]:
        grad = (x.grad if p is x else p.grad).reshape(-1)
        flat = p.data.reshape(-1)
        for idx in rng.choice(flat.numel(), size=min(12, flat.numel()), replace=False):
            orig = float(flat[idx])
            with torch.no_grad():
                flat[idx] = orig + eps
            up = float(loss_fn())
            with torch.no_grad():
                flat[idx] = orig - eps
            down = float(loss_fn())
            with torch.no_grad():
                flat[idx] = orig
            fd = (up - down) / (2 * eps)
            analytic = float(grad[idx])
            denom = max(abs(fd), abs(analytic), 1e-8)
            assert abs(fd - analytic) / denom < 1e-3
            checked += 1
    assert checked > 50


def test_spatial_permutation_equivariance():
    torch.manual_seed(8)
    attn = SpatialAttention(16, 4)
    x = torch.randn(1, 2, 7, 16)
    perm = torch.randperm(7, generator=torch.Generator().manual_seed(1))
    y_perm_in = attn(x[:, :, perm])
    y_perm_out = attn(x)[:, :, perm]
    assert torch.allclose(y_perm_in, y_perm_out, atol=1e-6)


def test_stack_rejects_bad_shapes():
    stack = STStack(STBlockConfig(1, 8, 2), num_positions=4, max_timesteps=2)
    with pytest.raises(ValueError, match="spatial positions"):
        stack(torch.randn(1, 2, 5, 8))
    with pytest.raises(ValueError, match="max_timesteps"):
        stack(torch.randn(1, 3, 4, 8))
