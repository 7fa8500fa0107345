import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from fewseg.correlation import (CorrelationVolume, FeatureMap, FeaturePyramid, correlate,
                                mask_project, mask_support_features, stack_levels)


def fmap(tensor, idx=1):
    return FeatureMap(values=torch.as_tensor(tensor, dtype=torch.float32), level_index=idx)


def area_average_oracle(mask, out_h, out_w):
    """Adaptive-bin area averaging recomputed by explicit loops."""
    in_h, in_w = mask.shape
    out = torch.zeros(out_h, out_w)
    for i in range(out_h):
        for j in range(out_w):
            r0, r1 = (i * in_h) // out_h, -((-(i + 1) * in_h) // out_h)
            c0, c1 = (j * in_w) // out_w, -((-(j + 1) * in_w) // out_w)
            out[i, j] = mask[r0:r1, c0:c1].mean()
    return out


class TestMaskProject:
    def test_all_ones_invariant(self):
        out = mask_project(torch.ones(8, 8), fmap(torch.zeros(4, 4, 3)))
        assert torch.equal(out, torch.ones(4, 4, 3))

    def test_all_zeros(self):
        out = mask_project(torch.zeros(8, 8), fmap(torch.zeros(4, 4, 3)))
        assert torch.equal(out, torch.zeros(4, 4, 3))

    def test_area_average_value(self):
        mask = torch.tensor([[1.0, 0.0], [0.0, 0.0]])
        out = mask_project(mask, fmap(torch.zeros(1, 1, 2)))
        assert torch.allclose(out, torch.full((1, 1, 2), 0.25))

    def test_matches_bin_oracle(self):
        gen = torch.Generator().manual_seed(0)
        mask = (torch.rand(12, 10, generator=gen) > 0.5).float()
        out = mask_project(mask, fmap(torch.zeros(5, 3, 1)))
        want = area_average_oracle(mask, 5, 3)
        assert torch.allclose(out[:, :, 0], want, atol=1e-6)

    def test_rejects_empty_and_nonbinary(self):
        with pytest.raises(ValueError):
            mask_project(torch.zeros(0, 4), fmap(torch.zeros(2, 2, 1)))
        with pytest.raises(ValueError):
            mask_project(torch.full((4, 4), 0.5), fmap(torch.zeros(2, 2, 1)))

    def test_range(self):
        gen = torch.Generator().manual_seed(1)
        mask = (torch.rand(16, 16, generator=gen) > 0.3).float()
        out = mask_project(mask, fmap(torch.zeros(5, 7, 2)))
        assert out.min() >= 0 and out.max() <= 1


class TestMaskSupportFeatures:
    def test_identity_with_ones(self):
        f = fmap(torch.randn(4, 4, 3, generator=torch.Generator().manual_seed(2)))
        out = mask_support_features(f, torch.ones(8, 8))
        assert torch.equal(out.values, f.values)

    def test_zeros_with_zeros(self):
        f = fmap(torch.randn(4, 4, 3, generator=torch.Generator().manual_seed(3)))
        out = mask_support_features(f, torch.zeros(8, 8))
        assert torch.equal(out.values, torch.zeros_like(f.values))

    def test_scalar_product(self):
        # 2x2 mask with one foreground pixel downscales to 0.25 at 1x1
        f = fmap(torch.full((1, 1, 1), 2.0))
        out = mask_support_features(f, torch.tensor([[1.0, 0.0], [0.0, 0.0]]))
        assert out.values.item() == pytest.approx(0.5)


class TestCorrelate:
    def test_identical_vectors(self):
        v = torch.tensor([[[1.0, 2.0, 3.0]]])
        assert correlate(fmap(v), fmap(v))[0, 0, 0, 0].item() == pytest.approx(1.0)

    def test_antiparallel_clipped(self):
        a = fmap(torch.tensor([[[1.0, 0.0]]]))
        b = fmap(torch.tensor([[[-1.0, 0.0]]]))
        assert correlate(a, b)[0, 0, 0, 0].item() == 0.0

    def test_scalar_cosine(self):
        a = fmap(torch.tensor([[[3.0, 4.0]]]))
        b = fmap(torch.tensor([[[4.0, 3.0]]]))
        assert correlate(a, b)[0, 0, 0, 0].item() == pytest.approx(24 / 25)

    def test_zero_norm_convention(self):
        a = fmap(torch.tensor([[[0.0, 0.0]]]))
        b = fmap(torch.tensor([[[1.0, 1.0]]]))
        assert correlate(a, b)[0, 0, 0, 0].item() == 0.0

    def test_channel_mismatch(self):
        with pytest.raises(ValueError):
            correlate(fmap(torch.zeros(1, 1, 2)), fmap(torch.zeros(1, 1, 3)))

    def test_swap_symmetry(self):
        gen = torch.Generator().manual_seed(4)
        a = fmap(torch.randn(3, 2, 5, generator=gen))
        b = fmap(torch.randn(2, 4, 5, generator=gen))
        ab = correlate(a, b)
        ba = correlate(b, a)
        assert torch.allclose(ab, ba.permute(2, 3, 0, 1), atol=1e-6)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(min_value=0.1, max_value=100.0), st.integers(0, 10_000))
    def test_scale_invariance(self, scale, seed):
        gen = torch.Generator().manual_seed(seed)
        a = torch.randn(2, 2, 4, generator=gen)
        b = torch.randn(3, 2, 4, generator=gen)
        base = correlate(fmap(a), fmap(b))
        scaled = correlate(fmap(a * scale), fmap(b))
        assert torch.allclose(base, scaled, atol=1e-5)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_output_range(self, seed):
        gen = torch.Generator().manual_seed(seed)
        a = fmap(torch.randn(3, 3, 6, generator=gen))
        b = fmap(torch.randn(2, 5, 6, generator=gen))
        c = correlate(a, b)
        assert c.min() >= 0.0 and c.max() <= 1.0

    def test_masked_column_is_zero(self):
        gen = torch.Generator().manual_seed(5)
        f_q = fmap(torch.randn(4, 4, 3, generator=gen))
        f_s = fmap(torch.randn(2, 2, 3, generator=gen))
        mask = torch.zeros(4, 4)
        mask[0:2, 0:2] = 1.0  # projected: only support position (0,0) survives
        masked = mask_support_features(f_s, mask)
        c = correlate(f_q, masked)
        assert torch.equal(c[:, :, 1, :], torch.zeros(4, 4, 2))
        assert torch.equal(c[:, :, :, 1], torch.zeros(4, 4, 2))


def make_pyramids(gen, sizes=((4, 4),), channels=3, group=3):
    levels_q, levels_s = [], []
    for i, (h, w) in enumerate(sizes):
        levels_q.append(fmap(torch.randn(h, w, channels, generator=gen), idx=i + 1))
        levels_s.append(fmap(torch.randn(h, w, channels, generator=gen), idx=i + 1))
    groups = {group: tuple(range(len(sizes)))}
    return (FeaturePyramid(levels=levels_q, level_groups=groups),
            FeaturePyramid(levels=levels_s, level_groups=groups))


class TestStackLevels:
    def test_single_level_matches_correlate(self):
        gen = torch.Generator().manual_seed(6)
        pq, ps = make_pyramids(gen)
        mask = torch.ones(8, 8)
        vol = stack_levels(pq, ps, mask, 3)
        assert vol.values.shape == (4, 4, 4, 4, 1)
        masked = mask_support_features(ps.levels[0], mask)
        assert torch.equal(vol.values[..., 0], correlate(pq.levels[0], masked))

    def test_three_levels_shape(self):
        gen = torch.Generator().manual_seed(7)
        pq, ps = make_pyramids(gen, sizes=((4, 4),) * 3)
        vol = stack_levels(pq, ps, torch.ones(8, 8), 3)
        assert vol.values.shape == (4, 4, 4, 4, 3)

    def test_channels_match_independent_correlations(self):
        gen = torch.Generator().manual_seed(8)
        pq, ps = make_pyramids(gen, sizes=((4, 4),) * 3)
        mask = (torch.rand(8, 8, generator=gen) > 0.5).float()
        vol = stack_levels(pq, ps, mask, 3)
        for t in range(3):
            masked = mask_support_features(ps.levels[t], mask)
            assert torch.equal(vol.values[..., t], correlate(pq.levels[t], masked))

    def test_channel_order_follows_level_index(self):
        gen = torch.Generator().manual_seed(9)
        maps_q = [fmap(torch.randn(2, 2, 3, generator=gen), idx=5),
                  fmap(torch.randn(2, 2, 3, generator=gen), idx=4)]
        maps_s = [fmap(torch.randn(2, 2, 3, generator=gen), idx=5),
                  fmap(torch.randn(2, 2, 3, generator=gen), idx=4)]
        groups = {3: (0, 1)}
        vol = stack_levels(FeaturePyramid(maps_q, groups), FeaturePyramid(maps_s, groups),
                           torch.ones(4, 4), 3)
        # channel 0 must be the idx=4 level despite list order
        assert torch.equal(vol.values[..., 0], correlate(maps_q[1], maps_s[1]))

    def test_mixed_sizes_rejected(self):
        gen = torch.Generator().manual_seed(10)
        maps = [fmap(torch.randn(4, 4, 3, generator=gen)),
                fmap(torch.randn(2, 2, 3, generator=gen), idx=2)]
        with pytest.raises(ValueError):
            FeaturePyramid(levels=maps, level_groups={3: (0, 1)})


class TestTypes:
    def test_feature_map_validation(self):
        with pytest.raises(ValueError):
            FeatureMap(values=torch.zeros(4, 4), level_index=1)
        with pytest.raises(ValueError):
            FeatureMap(values=torch.full((2, 2, 1), math.nan), level_index=1)

    def test_volume_validation(self):
        with pytest.raises(ValueError):
            CorrelationVolume(values=torch.full((1, 1, 1, 1, 1), 2.0))
        with pytest.raises(ValueError):
            CorrelationVolume(values=torch.zeros(1, 1, 1, 1, 1), channel_kind="bogus")
        CorrelationVolume(values=torch.full((1, 1, 1, 1, 1), 2.0), channel_kind="embedded")
