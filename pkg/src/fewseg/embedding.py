"""Embedding of 4D correlation volumes: direct 4D convolution, 4D max-pooling,
non-overlapping patch projection, and the overlapping convolutional embedder
that replaces it.

Volumes are channel-last 5D tensors (h_q, w_q, h_s, w_s, C).
"""

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .correlation import STACKED_LEVELS


def _four(v):
    if isinstance(v, int):
        return (v,) * 4
    v = tuple(int(x) for x in v)
    if len(v) != 4:
        raise ValueError(f"expected a 4-vector, got {v}")
    return v


def conv4d(x, weight, bias=None, stride=1, padding=None):
    """Direct 4D cross-correlation over the four spatial axes.

    x:      (h_q, w_q, h_s, w_s, C_in)
    weight: (m1, m2, m3, m4, C_in, C_out), all kernel sides odd
    stride, padding: ints or 4-vectors; padding defaults to (m - 1) / 2 per axis
    (size-preserving at stride 1).

    Evaluated exactly (no approximation) by summing, over the first-axis kernel
    offsets, a 3D convolution of the correspondingly shifted input slab.
    """
    if x.ndim != 5 or weight.ndim != 6:
        raise ValueError("conv4d expects a 5D input and a 6D kernel")
    kernel = tuple(weight.shape[:4])
    if any(k % 2 == 0 for k in kernel):
        raise ValueError(f"kernel sides must be odd, got {kernel}")
    if weight.shape[4] != x.shape[4]:
        raise ValueError(f"channel mismatch: input {x.shape[4]}, kernel {weight.shape[4]}")
    stride = _four(stride)
    padding = _four(padding) if padding is not None else tuple((k - 1) // 2 for k in kernel)

    out_dims = []
    for d, k, s, p in zip(x.shape[:4], kernel, stride, padding):
        o = (d + 2 * p - k) // s + 1
        if o < 1:
            raise ValueError(f"kernel {kernel} larger than padded input {tuple(x.shape[:4])}")
        out_dims.append(o)

    # pad all four spatial axes (F.pad pads from the last dim backwards)
    xp = F.pad(x, (0, 0, padding[3], padding[3], padding[2], padding[2],
                   padding[1], padding[1], padding[0], padding[0]))
    # stack the m1 first-axis shifts along channels and evaluate the remaining
    # 3D kernel in one conv (summing over m1 x c_in inputs == the 4D definition)
    slabs = [
        xp[a : a + stride[0] * (out_dims[0] - 1) + 1 : stride[0]].permute(0, 4, 1, 2, 3)
        for a in range(kernel[0])
    ]
    stacked = torch.cat(slabs, dim=1)  # (o1, m1 * c_in, w_q_pad, h_s_pad, w_s_pad)
    w3 = weight.permute(5, 0, 4, 1, 2, 3).reshape(
        weight.shape[5], kernel[0] * x.shape[4], *kernel[1:])
    out = F.conv3d(stacked, w3, stride=stride[1:]).permute(0, 2, 3, 4, 1)
    if bias is not None:
        out = out + bias
    return out


def maxpool4d(x, window, stride=None):
    """Per-channel max over 4D windows; separable as max over axis pairs."""
    if x.ndim != 5:
        raise ValueError("maxpool4d expects a 5D input")
    window = _four(window)
    stride = _four(stride) if stride is not None else window
    hq, wq, hs, ws, c = x.shape
    # support plane first
    y = x.reshape(hq * wq, hs, ws, c).permute(0, 3, 1, 2)
    y = F.max_pool2d(y, window[2:], stride[2:])
    hs2, ws2 = y.shape[2], y.shape[3]
    y = y.permute(0, 2, 3, 1).reshape(hq, wq, hs2 * ws2 * c)
    # then query plane
    y = y.permute(2, 0, 1).unsqueeze(0)
    y = F.max_pool2d(y, window[:2], stride[:2])
    hq2, wq2 = y.shape[2], y.shape[3]
    return y.squeeze(0).permute(1, 2, 0).reshape(hq2, wq2, hs2, ws2, c)


class PatchEmbed4d(nn.Module):
    """Non-overlapping 4D patch embedding: each patch is flattened and linearly
    projected to `out_dim`. Requires every spatial dim divisible by its patch side
    (no implicit padding)."""

    def __init__(self, in_channels, patch, out_dim):
        super().__init__()
        self.patch = _four(patch)
        self.in_channels = in_channels
        self.out_dim = out_dim
        flat = in_channels * math.prod(self.patch)
        self.proj = nn.Linear(flat, out_dim)

    def forward(self, x):
        p1, p2, p3, p4 = self.patch
        hq, wq, hs, ws, c = x.shape
        if c != self.in_channels:
            raise ValueError(f"expected {self.in_channels} channels, got {c}")
        if hq % p1 or wq % p2 or hs % p3 or ws % p4:
            raise ValueError(f"dims {(hq, wq, hs, ws)} not divisible by patch {self.patch}")
        x = x.reshape(hq // p1, p1, wq // p2, p2, hs // p3, p3, ws // p4, p4, c)
        x = x.permute(0, 2, 4, 6, 1, 3, 5, 7, 8).reshape(
            hq // p1, wq // p2, hs // p3, ws // p4, p1 * p2 * p3 * p4 * c)
        return self.proj(x)


@dataclass(frozen=True)
class ConvStage:
    kernel: tuple
    stride: tuple
    out_channels: int


@dataclass(frozen=True)
class PoolStage:
    """Max-pool inserted before conv stage `before_stage` (== n_stages appends it last)."""

    before_stage: int
    window: tuple
    stride: tuple


@dataclass(frozen=True)
class ConvEmbedConfig:
    """Pipeline description for the overlapping convolutional embedder."""

    conv_stages: tuple
    pool_stages: tuple
    group_count: int
    out_dim: int

    def __post_init__(self):
        if not self.conv_stages:
            raise ValueError("need at least one conv stage")
        for st in self.conv_stages:
            if any(k % 2 == 0 or k < 3 for k in _four(st.kernel)):
                raise ValueError(f"overlapping stages need odd kernels >= 3, got {st.kernel}")
            if st.out_channels % self.group_count:
                raise ValueError(
                    f"group count {self.group_count} must divide stage channels {st.out_channels}")
        if self.conv_stages[-1].out_channels != self.out_dim:
            raise ValueError("final stage channels must equal out_dim")
        for ps in self.pool_stages:
            if not 0 <= ps.before_stage <= len(self.conv_stages):
                raise ValueError(f"pool position {ps.before_stage} out of range")

    @classmethod
    def default(cls, out_dim, support_pool=1, group_count=4):
        """Two m=3 stride-1 stages to out_dim/2 then out_dim; optional stride-2
        max-pool on the support axes only, applied up front."""
        pools = ()
        if support_pool > 1:
            pools = (PoolStage(0, (1, 1, support_pool, support_pool),
                               (1, 1, support_pool, support_pool)),)
        stages = (
            ConvStage((3, 3, 3, 3), (1, 1, 1, 1), out_dim // 2),
            ConvStage((3, 3, 3, 3), (1, 1, 1, 1), out_dim),
        )
        return cls(conv_stages=stages, pool_stages=pools, group_count=group_count, out_dim=out_dim)

    @property
    def total_stride(self):
        """Cumulative downsampling factor per spatial axis."""
        total = [1, 1, 1, 1]
        for ps in self.pool_stages:
            total = [t * s for t, s in zip(total, _four(ps.stride))]
        for st in self.conv_stages:
            total = [t * s for t, s in zip(total, _four(st.stride))]
        return tuple(total)


class ConvEmbed4d(nn.Module):
    """Overlapping convolutional embedder: (pool) -> conv4d -> ReLU -> GroupNorm
    per stage, projecting the stacked correlation channels to `cfg.out_dim`."""

    def __init__(self, in_channels, cfg):
        super().__init__()
        self.cfg = cfg
        self.in_channels = in_channels
        self.weights = nn.ParameterList()
        self.biases = nn.ParameterList()
        self.norms = nn.ModuleList()
        c_in = in_channels
        for st in cfg.conv_stages:
            k = _four(st.kernel)
            w = torch.empty(*k, c_in, st.out_channels)
            fan_in = c_in * math.prod(k)
            bound = 1.0 / math.sqrt(fan_in)
            nn.init.uniform_(w, -bound, bound)
            b = torch.empty(st.out_channels)
            nn.init.uniform_(b, -bound, bound)
            self.weights.append(nn.Parameter(w))
            self.biases.append(nn.Parameter(b))
            self.norms.append(nn.GroupNorm(cfg.group_count, st.out_channels, eps=1e-5, affine=True))
            c_in = st.out_channels

    def forward(self, x):
        if x.shape[4] != self.in_channels:
            raise ValueError(f"expected {self.in_channels} channels, got {x.shape[4]}")
        for i in range(len(self.cfg.conv_stages) + 1):
            for ps in self.cfg.pool_stages:
                if ps.before_stage == i:
                    x = maxpool4d(x, ps.window, ps.stride)
            if i == len(self.cfg.conv_stages):
                break
            st = self.cfg.conv_stages[i]
            x = conv4d(x, self.weights[i], self.biases[i], stride=st.stride)
            x = F.relu(x)
            # GroupNorm over channels with the 4 spatial axes as the normalized extent
            x = self.norms[i](x.permute(4, 0, 1, 2, 3).reshape(1, x.shape[4], -1)).reshape(
                x.shape[4], *x.shape[:4]).permute(1, 2, 3, 4, 0)
        return x


def vem_embed(vol, module):
    """Spec surface for the non-overlapping patch embedding of a correlation volume."""
    if vol.channel_kind != STACKED_LEVELS:
        raise ValueError("patch embedding expects a stacked-levels volume")
    return module(vol.values)


def vcm_embed(vol, module):
    """Spec surface for the overlapping convolutional embedding of a correlation volume."""
    if vol.channel_kind != STACKED_LEVELS:
        raise ValueError("convolutional embedding expects a stacked-levels volume")
    return module(vol.values)
