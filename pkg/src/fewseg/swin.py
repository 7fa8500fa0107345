"""Shifted-window attention over 4D correlation volumes (and its 2D restriction
used by the decoder): window partition/reverse, cyclic shift, relative position
bias indexed by N-dimensional offsets, and pre-norm transformer blocks.

Spatial tensors are channel-last: (d_1, ..., d_r, D) with r the spatial rank.
"""

import functools
import itertools
import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

NEG_INF = float("-inf")


@dataclass(frozen=True)
class WindowSpec:
    """Window side `n` (shared by all spatial axes) and per-axis shift, each 0 or n // 2."""

    n: int
    shift: tuple

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("window side must be >= 1")
        if any(s not in (0, self.n // 2) for s in self.shift):
            raise ValueError(f"shift entries must be 0 or {self.n // 2}, got {self.shift}")


def partition_windows(x, n):
    """Split (d_1..d_r, C) into non-overlapping n^r windows, lexicographic in
    window coordinates. Every spatial dim must divide by n."""
    rank = x.ndim - 1
    dims = x.shape[:rank]
    if any(d % n for d in dims):
        raise ValueError(f"dims {tuple(dims)} not divisible by window {n}")
    shape = []
    for d in dims:
        shape += [d // n, n]
    x = x.reshape(*shape, x.shape[-1])
    order = list(range(0, 2 * rank, 2)) + list(range(1, 2 * rank, 2)) + [2 * rank]
    x = x.permute(*order)
    return x.reshape(-1, *([n] * rank), x.shape[-1])


def reverse_windows(windows, dims, n):
    """Exact inverse of partition_windows for the given original dims."""
    rank = len(dims)
    blocks = [d // n for d in dims]
    if any(d % n for d in dims) or windows.shape[0] != math.prod(blocks):
        raise ValueError(f"window count {windows.shape[0]} inconsistent with dims {tuple(dims)}")
    if tuple(windows.shape[1:-1]) != (n,) * rank:
        raise ValueError(f"windows are {tuple(windows.shape[1:-1])}, expected {(n,) * rank}")
    x = windows.reshape(*blocks, *([n] * rank), windows.shape[-1])
    order = list(itertools.chain.from_iterable((i, rank + i) for i in range(rank))) + [2 * rank]
    return x.permute(*order).reshape(*dims, windows.shape[-1])


def cyclic_shift(x, shift):
    """Circular roll of the spatial axes by -shift (content at p moves to p - shift)."""
    rank = x.ndim - 1
    if len(shift) != rank:
        raise ValueError(f"shift rank {len(shift)} vs spatial rank {rank}")
    if all(s == 0 for s in shift):
        return x
    return torch.roll(x, shifts=[-s for s in shift], dims=list(range(rank)))


def partition4d(x, n):
    if x.ndim != 5:
        raise ValueError("expected a (h_q, w_q, h_s, w_s, D) volume")
    return partition_windows(x, n)


def reverse4d(windows, dims, n):
    if len(dims) != 4:
        raise ValueError("expected 4 original dims")
    return reverse_windows(windows, tuple(dims), n)


def cyclic_shift4d(x, shift):
    if x.ndim != 5:
        raise ValueError("expected a (h_q, w_q, h_s, w_s, D) volume")
    return cyclic_shift(x, tuple(shift))


class RelativePositionBias(nn.Module):
    """Learned attention bias looked up by the relative offset between window positions.

    The table has (2n - 1)^rank rows; `offset_to_row` is total and injective over
    offsets in [-(n-1), n-1]^rank.
    """

    def __init__(self, n, heads, rank=4):
        super().__init__()
        self.n = n
        self.rank = rank
        self.heads = heads
        self.table = nn.Parameter(torch.empty((2 * n - 1) ** rank, heads))
        nn.init.trunc_normal_(self.table, std=0.02)

        coords = torch.stack(torch.meshgrid(*([torch.arange(n)] * rank), indexing="ij"))
        coords = coords.reshape(rank, -1)  # (rank, n^rank)
        rel = coords[:, :, None] - coords[:, None, :]  # (rank, N, N)
        index = torch.zeros_like(rel[0])
        for axis in range(rank):
            index = index * (2 * n - 1) + (rel[axis] + n - 1)
        self.register_buffer("index", index, persistent=False)

    def offset_to_row(self, offsets):
        """Table row for a relative offset vector, mirroring the buffer construction."""
        row = 0
        for off in offsets:
            if not -(self.n - 1) <= off <= self.n - 1:
                raise ValueError(f"offset {off} outside [-(n-1), n-1]")
            row = row * (2 * self.n - 1) + (off + self.n - 1)
        return row

    def forward(self):
        # (heads, N, N)
        return self.table[self.index.reshape(-1)].reshape(*self.index.shape, self.heads).permute(2, 0, 1)


class WindowAttention(nn.Module):
    """Multi-head self-attention within each window, with relative position bias.

    Operates on flattened windows (T, N, D); `mask` is an additive (T, N, N)
    tensor (0 or -inf) applied to the logits before softmax.
    """

    def __init__(self, dim, n, heads, rank=4):
        super().__init__()
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)
        self.bias = RelativePositionBias(n, heads, rank=rank)

    def forward(self, windows, mask=None):
        t, num, d = windows.shape
        qkv = self.qkv(windows).reshape(t, num, 3, self.heads, d // self.heads).permute(2, 0, 3, 1, 4)
        q, k, v = qkv.unbind(0)  # each (T, heads, N, head_dim)
        attn = (q * self.scale) @ k.transpose(-2, -1)
        attn = attn.add_(self.bias().unsqueeze(0))
        if mask is not None:
            attn = attn.add_(mask.unsqueeze(1).to(attn.dtype))
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(t, num, d)
        return self.proj(out)


def window_attention(windows, attn, mask=None):
    """Spec surface: attention over spatial windows (T, n, ..., n, D)."""
    t = windows.shape[0]
    d = windows.shape[-1]
    flat = windows.reshape(t, -1, d)
    out = attn(flat, mask=mask)
    return out.reshape(windows.shape)


def _pad_to_multiple(x, n):
    """Right-pad spatial axes with zeros to the next multiple of n."""
    rank = x.ndim - 1
    dims = x.shape[:rank]
    padded = tuple(-(-d // n) * n for d in dims)
    if padded == tuple(dims):
        return x, padded
    pad = []
    for d, t in zip(reversed(dims), reversed(padded)):
        pad += [0, t - d]
    return F.pad(x, [0, 0] + pad), padded


def attention_mask(padded_dims, valid_dims, n, shift):
    """Additive (T, N, N) mask combining shifted-window segment separation and
    right-padding validity; None when no masking is needed.

    Tokens attend only within their wrapped segment and only to unpadded
    positions; the diagonal always stays unmasked so every softmax row is finite.
    Cached per geometry (call with hashable tuples); treat the result as read-only.
    """
    return _attention_mask_cached(tuple(padded_dims), tuple(valid_dims), n, tuple(shift))


@functools.lru_cache(maxsize=128)
def _attention_mask_cached(padded_dims, valid_dims, n, shift):
    rank = len(padded_dims)
    shifted = any(s for s in shift)
    padding = tuple(padded_dims) != tuple(valid_dims)
    if not shifted and not padding:
        return None

    region = torch.zeros(*padded_dims)
    for axis, (d, s) in enumerate(zip(padded_dims, shift)):
        ids = torch.zeros(d)
        if s:
            ids[d - n :] = 1
            ids[d - s :] = 2
        view = [1] * rank
        view[axis] = d
        region = region * 3 + ids.reshape(view)

    valid = torch.ones(*padded_dims, dtype=torch.bool)
    for axis, (d, v) in enumerate(zip(padded_dims, valid_dims)):
        ids = torch.arange(d) < v
        view = [1] * rank
        view[axis] = d
        valid = valid & ids.reshape(view)
    if shifted:
        valid = torch.roll(valid, shifts=[-s for s in shift], dims=list(range(rank)))

    flags = torch.stack([region, valid.to(region.dtype)], dim=-1)
    win = partition_windows(flags, n).reshape(-1, n**rank, 2)
    same_region = win[:, :, None, 0] == win[:, None, :, 0]
    both_valid = (win[:, :, None, 1] > 0) & (win[:, None, :, 1] > 0)
    allowed = (same_region & both_valid) | torch.eye(n**rank, dtype=torch.bool)
    return torch.where(allowed, 0.0, NEG_INF)


class Mlp(nn.Module):
    def __init__(self, dim, hidden):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class SwinBlock(nn.Module):
    """Pre-norm transformer block with (optionally shifted) windowed attention:
    x + WMSA(LN(x)), then x + MLP(LN(x)).

    Inputs whose spatial dims do not divide the window are right-padded with
    zeros for the attention pass (padded tokens masked out) and cropped back, so
    output shape always equals input shape.
    """

    def __init__(self, dim, n, shift, heads, rank=4, mlp_ratio=4):
        super().__init__()
        self.spec = WindowSpec(n=n, shift=tuple(shift))
        self.rank = rank
        self.norm1 = nn.LayerNorm(dim)
        self.attn = WindowAttention(dim, n, heads, rank=rank)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, dim * mlp_ratio)

    def forward(self, x):
        if x.ndim - 1 != self.rank:
            raise ValueError(f"expected spatial rank {self.rank}, got {x.ndim - 1}")
        n, shift = self.spec.n, self.spec.shift
        dims = x.shape[: self.rank]

        h = self.norm1(x)
        h, padded = _pad_to_multiple(h, n)
        mask = attention_mask(padded, dims, n, shift)
        h = cyclic_shift(h, shift)
        win = partition_windows(h, n)
        win = window_attention(win, self.attn, mask=mask)
        h = reverse_windows(win, padded, n)
        h = cyclic_shift(h, tuple(-s for s in shift))
        h = h[tuple(slice(0, d) for d in dims)]

        x = x + h
        return x + self.mlp(self.norm2(x))


class SwinStack(nn.Module):
    """`depth` blocks alternating unshifted / shifted windows, starting unshifted."""

    def __init__(self, dim, n, heads, depth=2, rank=4, mlp_ratio=4):
        super().__init__()
        if depth < 1:
            raise ValueError("depth must be >= 1")
        self.blocks = nn.ModuleList(
            SwinBlock(dim, n,
                      (0,) * rank if i % 2 == 0 else (n // 2,) * rank,
                      heads, rank=rank, mlp_ratio=mlp_ratio)
            for i in range(depth)
        )

    def forward(self, x):
        for blk in self.blocks:
            x = blk(x)
        return x


def windowed_score_elements(dims, n):
    """Per-head attention-logit count for windowed attention on a divisible grid."""
    tokens = math.prod(dims)
    windows = tokens // (n ** len(dims))
    return windows * (n ** len(dims)) ** 2


def full_score_elements(dims):
    """Per-head attention-logit count if all positions attended to all positions."""
    return math.prod(dims) ** 2
