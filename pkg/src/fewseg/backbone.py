"""Small trainable convolutional feature extractor standing in for a pretrained
backbone: three strided stages at 1/4, 1/8 and 1/16 resolution, two feature maps
per stage, plus a 1/2-resolution stem map kept for appearance embeddings."""

import torch
import torch.nn as nn
import torch.nn.functional as F

from .correlation import FeatureMap, FeaturePyramid

TOTAL_STRIDE = 16
# level indices into FeaturePyramid.levels: stem, then (a, b) per stage
STEM = 0
STAGE_B = (2, 4, 6)


class TinyBackbone(nn.Module):
    def __init__(self, width=16, freeze=False):
        super().__init__()
        self.width = width
        w = width
        self.stem = nn.Conv2d(3, w, 3, stride=2, padding=1)
        self.downs = nn.ModuleList()
        self.laterals = nn.ModuleList()
        self.norms_a = nn.ModuleList()
        self.norms_b = nn.ModuleList()
        chans = [w, 2 * w, 4 * w]
        c_prev = w
        for c in chans:
            self.downs.append(nn.Conv2d(c_prev, c, 3, stride=2, padding=1))
            self.laterals.append(nn.Conv2d(c, c, 3, stride=1, padding=1))
            self.norms_a.append(nn.GroupNorm(4, c))
            self.norms_b.append(nn.GroupNorm(4, c))
            c_prev = c
        self.stage_channels = chans
        if freeze:
            for p in self.parameters():
                p.requires_grad_(False)

    def forward(self, image):
        """image: (H, W, 3) in [0, 1]. Returns a FeaturePyramid whose groups
        3/4/5 hold the stage pairs; the stem map is levels[0]."""
        if image.ndim != 3 or image.shape[2] != 3:
            raise ValueError("expected an (H, W, 3) image")
        if min(image.shape[:2]) < TOTAL_STRIDE:
            raise ValueError(f"image smaller than total stride {TOTAL_STRIDE}")
        x = image.permute(2, 0, 1).unsqueeze(0)
        x = F.relu(self.stem(x))
        levels = [FeatureMap(x[0].permute(1, 2, 0), level_index=1)]
        idx = 2
        groups = {}
        for p, (down, lat, na, nb) in enumerate(
                zip(self.downs, self.laterals, self.norms_a, self.norms_b), start=3):
            x = F.relu(na(down(x)))
            a = x
            x = F.relu(nb(lat(x)))
            levels.append(FeatureMap(a[0].permute(1, 2, 0), level_index=idx))
            levels.append(FeatureMap(x[0].permute(1, 2, 0), level_index=idx + 1))
            groups[p] = (len(levels) - 2, len(levels) - 1)
            idx += 2
        return FeaturePyramid(levels=levels, level_groups=groups)


def tiny_backbone(image, module):
    """Spec surface: run the extractor on one image."""
    return module(image)
