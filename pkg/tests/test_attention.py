import math

import numpy as np
import pytest
import torch
import torch.nn as nn

from liverseg import attention as attn
from liverseg.attention import (ASPP, CBAM, AttentionConfig, AttentionVariant,
                                ChannelAttention, SEBlock, SpatialAttention,
                                check_aspp_rates, effective_aspp_rates)


def zero_(module):
    for p in module.parameters():
        nn.init.zeros_(p)
    return module


class TestSE:
    def test_zero_mlp_halves_input(self):
        block = zero_(SEBlock(8))
        x = torch.randn(2, 8, 4, 4)
        assert torch.allclose(block(x), x / 2)

    def test_shape_preserved(self):
        block = SEBlock(8)
        x = torch.randn(2, 8, 4, 4)
        assert block(x).shape == x.shape

    def test_hand_evaluated_two_channel_chain(self):
        block = SEBlock(2, reduction=2)  # hidden width 1
        with torch.no_grad():
            block.fc1.weight.copy_(torch.tensor([[0.5, -0.25]]))
            block.fc1.bias.copy_(torch.tensor([0.1]))
            block.fc2.weight.copy_(torch.tensor([[2.0], [-1.0]]))
            block.fc2.bias.copy_(torch.tensor([0.3, -0.2]))
        x = torch.tensor([[[[2.0]], [[4.0]]]])
        hidden = max(0.0, 0.5 * 2.0 - 0.25 * 4.0 + 0.1)
        s1 = 1 / (1 + math.exp(-(2.0 * hidden + 0.3)))
        s2 = 1 / (1 + math.exp(-(-1.0 * hidden - 0.2)))
        out = block(x)
        assert out[0, 0, 0, 0].item() == pytest.approx(2.0 * s1, rel=1e-6)
        assert out[0, 1, 0, 0].item() == pytest.approx(4.0 * s2, rel=1e-6)


class TestCBAMChannel:
    def test_zero_mlp_gives_half(self):
        gate = zero_(ChannelAttention(4))
        w = gate(torch.randn(2, 4, 3, 3))
        assert torch.allclose(w, torch.full_like(w, 0.5))

    def test_constant_input_pooling_identity(self):
        gate = ChannelAttention(4, reduction=2)
        x = torch.arange(4.0).reshape(1, 4, 1, 1).expand(1, 4, 5, 5)
        c = x[:, :, :1, :1]
        expected = torch.sigmoid(2 * gate.fc2(torch.relu(gate.fc1(c))))
        assert torch.allclose(gate(x), expected, atol=1e-6)

    def test_matches_reference_formula(self):
        torch.manual_seed(0)
        gate = ChannelAttention(4, reduction=2)
        x = torch.randn(1, 4, 2, 2)
        avg = x.mean(dim=(2, 3), keepdim=True)
        mx = x.amax(dim=(2, 3), keepdim=True)
        mlp = lambda t: gate.fc2(torch.relu(gate.fc1(t)))
        expected = torch.sigmoid(mlp(avg) + mlp(mx))
        assert torch.allclose(gate(x), expected, atol=1e-6)
        assert gate(x).shape == (1, 4, 1, 1)


class TestCBAMSpatial:
    def test_zero_conv_gives_half(self):
        gate = zero_(SpatialAttention(7))
        m = gate(torch.randn(2, 3, 5, 5))
        assert torch.allclose(m, torch.full_like(m, 0.5))
        assert m.shape == (2, 1, 5, 5)

    def test_matches_reference(self):
        torch.manual_seed(1)
        gate = SpatialAttention(3)
        x = torch.randn(1, 3, 5, 5)
        stacked = torch.cat([x.mean(1, keepdim=True), x.amax(1, keepdim=True)], dim=1)
        expected = torch.sigmoid(torch.nn.functional.conv2d(stacked, gate.conv.weight, padding=1))
        assert torch.allclose(gate(x), expected, atol=1e-6)

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError):
            SpatialAttention(4)


class TestCBAM:
    def test_zero_weights_quarter(self):
        block = zero_(CBAM(6))
        x = torch.randn(2, 6, 4, 4)
        assert torch.allclose(block(x), x / 4)

    def test_shape_preserved_random_configs(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            c = int(rng.integers(1, 16))
            h = int(rng.integers(2, 9))
            block = CBAM(c, reduction=int(rng.integers(1, 17)),
                         spatial_kernel=int(rng.choice([3, 5, 7])))
            x = torch.randn(2, c, h, h)
            assert block(x).shape == x.shape

    def test_equals_explicit_composition(self):
        torch.manual_seed(2)
        block = CBAM(5)
        x = torch.randn(2, 5, 4, 4)
        after_channel = x * block.channel(x)
        expected = after_channel * block.spatial(after_channel)
        assert torch.allclose(block(x), expected)

    def test_batch_permutation_equivariance(self):
        torch.manual_seed(3)
        block = CBAM(4)
        x = torch.randn(3, 4, 4, 4)
        perm = torch.tensor([2, 0, 1])
        assert torch.allclose(block(x)[perm], block(x[perm]), atol=1e-6)

    def test_gates_strictly_in_unit_interval(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            c = int(rng.integers(1, 12))
            block = CBAM(c, reduction=int(rng.integers(1, 17)))
            x = torch.randn(1, c, 3, 3) * float(rng.uniform(0.1, 10))
            cg = block.channel(x)
            sg = block.spatial(x)
            assert cg.min() > 0 and cg.max() < 1
            assert sg.min() > 0 and sg.max() < 1
            se = SEBlock(c)
            s = torch.sigmoid(se.fc2(torch.relu(se.fc1(x.mean(dim=(2, 3))))))
            assert s.min() > 0 and s.max() < 1


class TestASPP:
    def test_branch_count(self):
        module = ASPP(8, rates=(1, 6, 12, 18), out_channels=4)
        assert module.n_branches == 5

    def test_spatial_size_preserved(self):
        module = ASPP(8, rates=(1, 6), out_channels=4).eval()
        x = torch.randn(1, 8, 8, 8)
        assert module(x).shape == (1, 4, 8, 8)

    def test_rate_too_large_named(self):
        module = ASPP(4, rates=(1, 12), out_channels=2)
        with pytest.raises(ValueError, match="rate 12"):
            module(torch.randn(1, 4, 8, 8))
        check_aspp_rates((1, 6), 8, 8)  # fits

    def test_constant_input_constant_branches(self):
        module = ASPP(3, rates=(1, 2, 3), out_channels=4).eval()
        x = torch.full((1, 3, 8, 8), 1.7)
        for branch in module.branches:
            out = branch(x)
            assert out.var(dim=(2, 3)).max().item() == pytest.approx(0.0, abs=1e-10)

    def test_batch_order_independent(self):
        torch.manual_seed(5)
        module = ASPP(3, rates=(1, 2), out_channels=4).eval()
        x = torch.randn(2, 3, 8, 8)
        flipped = module(x.flip(0)).flip(0)
        assert torch.allclose(module(x), flipped, atol=1e-6)

    def test_effective_rates_clamped(self):
        assert effective_aspp_rates((1, 6, 12, 18), 8) == (1, 6, 7)
        assert effective_aspp_rates((1, 6, 12, 18), 2) == (1,)


def test_config_validation():
    with pytest.raises(ValueError):
        AttentionConfig(spatial_kernel=4)
    with pytest.raises(ValueError):
        AttentionConfig(aspp_rates=(0, 6))
    cfg = AttentionConfig(variant=AttentionVariant.CBAM)
    assert attn.make_node_attention(cfg, 16) is not None
    assert attn.make_node_attention(AttentionConfig(), 16) is None
