"""Mask decoder: pools the aggregated volume over the support plane, then
alternates appearance-embedding fusion, 2D windowed-attention refinement and
upsampling until the full-resolution two-channel logits."""

import torch
import torch.nn as nn

from .pyramid import upsample_map
from .swin import SwinBlock


def pool_support(a):
    """Mean over the support spatial axes: (h_q, w_q, h_s, w_s, D) -> (h_q, w_q, D)."""
    if a.ndim != 5:
        raise ValueError("expected a 5D aggregated volume")
    return a.mean(dim=(2, 3))


class DecoderStage(nn.Module):
    """Concat a projected query appearance map, refine with one 2D windowed
    block, project back to `dim`, then 2x align-corners upsample."""

    def __init__(self, dim, feat_channels, width, window, heads, shift=0, mlp_ratio=4):
        super().__init__()
        self.appearance = nn.Linear(feat_channels, width)
        fused = dim + width
        self.block = SwinBlock(fused, window, (shift,) * 2, heads, rank=2, mlp_ratio=mlp_ratio)
        self.merge = nn.Linear(fused, dim)

    def forward(self, x, feat):
        emb = self.appearance(feat)
        if emb.shape[:2] != x.shape[:2]:
            raise ValueError(f"appearance {tuple(emb.shape[:2])} vs map {tuple(x.shape[:2])}")
        x = torch.cat([x, emb], dim=-1)
        x = self.block(x)
        x = self.merge(x)
        return upsample_map(x, (x.shape[0] * 2, x.shape[1] * 2))


class MaskDecoder(nn.Module):
    """Appearance-guided decoding of the pooled volume into (H_img, W_img, 2) logits.

    `stage_channels`: per stage (coarse to fine), the channel count of the query
    feature map fused at that stage; `stage_widths`: its projection width. Stage
    blocks alternate unshifted / shifted windows.
    """

    def __init__(self, dim, stage_channels, stage_widths, image_size, window=4, heads=4,
                 mlp_ratio=4):
        super().__init__()
        if len(stage_channels) != len(stage_widths):
            raise ValueError("need one projection width per stage")
        self.image_size = image_size
        self.stages = nn.ModuleList(
            DecoderStage(dim, c, w, window, heads,
                         shift=0 if i % 2 == 0 else window // 2, mlp_ratio=mlp_ratio)
            for i, (c, w) in enumerate(zip(stage_channels, stage_widths))
        )
        self.head = nn.Linear(dim, 2)

    def forward(self, pooled, feats):
        """`feats`: query feature maps, coarse to fine, one per stage; the first
        must match the pooled map's resolution."""
        if len(feats) != len(self.stages):
            raise ValueError(f"got {len(feats)} feature maps for {len(self.stages)} stages")
        x = pooled
        for stage, feat in zip(self.stages, feats):
            x = stage(x, feat)
        logits = self.head(x)
        return upsample_map(logits, (self.image_size, self.image_size))


def predict_mask(logits):
    """Per-pixel argmax over (background, foreground); ties go to background."""
    if logits.ndim != 3 or logits.shape[2] != 2:
        raise ValueError("expected (H, W, 2) logits")
    return (logits[:, :, 1] > logits[:, :, 0]).to(torch.uint8)
