"""Coarse-to-fine aggregation: per-level embedding + windowed-attention stacks,
with the coarser level's aggregated volume upsampled and added as guidance
before the finer level's attention pass.
"""

import torch
import torch.nn as nn


def linear_upsample(x, axis, size):
    """Align-corners linear interpolation of one axis to `size` (>= current)."""
    src = x.shape[axis]
    if size < src:
        raise ValueError(f"axis {axis}: downsampling {src} -> {size} not supported")
    if size == src:
        return x
    if src == 1:
        return x.expand(*[size if i == axis else -1 for i in range(x.ndim)]).clone()
    pos = torch.arange(size, dtype=x.dtype) * (src - 1) / (size - 1)
    lo = pos.floor().long().clamp(max=src - 2)
    frac = pos - lo.to(x.dtype)
    shape = [1] * x.ndim
    shape[axis] = size
    frac = frac.reshape(shape)
    lower = x.index_select(axis, lo)
    upper = x.index_select(axis, lo + 1)
    return lower + (upper - lower) * frac


def upsample_volume(a, target_dims):
    """Separable align-corners linear upsampling of all four spatial axes of a
    (h_q, w_q, h_s, w_s, D) volume; channels untouched; identity at equal size."""
    if a.ndim != 5 or len(target_dims) != 4:
        raise ValueError("expected a 5D volume and 4 target dims")
    for axis, size in enumerate(target_dims):
        a = linear_upsample(a, axis, size)
    return a


def upsample_map(x, target_hw):
    """Same interpolation restricted to a (H, W, C) map."""
    if x.ndim != 3 or len(target_hw) != 2:
        raise ValueError("expected a 3D map and 2 target dims")
    for axis, size in enumerate(target_hw):
        x = linear_upsample(x, axis, size)
    return x


class PyramidEncoder(nn.Module):
    """Runs embedder + attention stack per pyramid level, coarsest first; each
    finer level receives the upsampled coarser aggregation added to its embedding.
    Returns the finest aggregated volume (h_q', w_q', h_s', w_s', D).
    """

    def __init__(self, embedders, stacks):
        super().__init__()
        if len(embedders) != len(stacks) or not embedders:
            raise ValueError("need one embedder and one stack per level")
        self.embedders = nn.ModuleList(embedders)
        self.stacks = nn.ModuleList(stacks)

    def forward(self, volumes, zero_guidance=False):
        """`volumes`: per-level CorrelationVolume, ordered coarsest to finest.

        `zero_guidance` replaces every guidance term with zeros (diagnostic for
        the reduction to the unguided per-level path).
        """
        if len(volumes) != len(self.embedders):
            raise ValueError(f"got {len(volumes)} volumes for {len(self.embedders)} levels")
        agg = None
        for vol, embed, stack in zip(volumes, self.embedders, self.stacks):
            m = embed(vol.values)
            if agg is not None:
                guide = upsample_volume(agg, m.shape[:4])
                if zero_guidance:
                    guide = torch.zeros_like(guide)
                m = m + guide
            agg = stack(m)
        return agg
