"""Masked, stacked cosine-correlation volumes between query and support feature pyramids.

All tensors are channel-last and unbatched: feature maps are (H, W, C) and
correlation volumes are (h_q, w_q, h_s, w_s, C_ch).
"""

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

ZERO_NORM_EPS = 1e-12

STACKED_LEVELS = "stacked_levels"
EMBEDDED = "embedded"


@dataclass
class FeatureMap:
    """One backbone activation map, (H, W, C) with its extraction depth index."""

    values: torch.Tensor
    level_index: int

    def __post_init__(self):
        v = self.values
        if v.ndim != 3 or min(v.shape) < 1:
            raise ValueError(f"feature map must be (H, W, C) with dims >= 1, got {tuple(v.shape)}")
        if not torch.isfinite(v).all():
            raise ValueError("feature map contains non-finite entries")

    @property
    def spatial(self):
        return tuple(self.values.shape[:2])


@dataclass
class FeaturePyramid:
    """Ordered feature maps plus the grouping of same-resolution levels per pyramid layer."""

    levels: list
    level_groups: dict = field(default_factory=dict)

    def __post_init__(self):
        for p, idxs in self.level_groups.items():
            sizes = set()
            for i in idxs:
                if not 0 <= i < len(self.levels):
                    raise ValueError(f"group {p} references missing level {i}")
                sizes.add(self.levels[i].spatial)
            if len(sizes) > 1:
                raise ValueError(f"group {p} mixes spatial sizes {sorted(sizes)}")

    def group(self, p):
        """Group indices ordered by ascending level index (stacking channel order)."""
        idxs = self.level_groups[p]
        return sorted(idxs, key=lambda i: self.levels[i].level_index)


@dataclass
class CorrelationVolume:
    """4D matching scores (h_q, w_q, h_s, w_s, C_ch) between query and support positions."""

    values: torch.Tensor
    channel_kind: str = STACKED_LEVELS

    def __post_init__(self):
        v = self.values
        if v.ndim != 5 or min(v.shape) < 1:
            raise ValueError(f"correlation volume must be 5D with dims >= 1, got {tuple(v.shape)}")
        if not torch.isfinite(v).all():
            raise ValueError("correlation volume contains non-finite entries")
        if self.channel_kind == STACKED_LEVELS:
            if v.min() < 0 or v.max() > 1:
                raise ValueError("stacked correlation entries must lie in [0, 1]")
        elif self.channel_kind != EMBEDDED:
            raise ValueError(f"unknown channel_kind {self.channel_kind!r}")


def mask_project(mask, target):
    """Resize a binary (H_img, W_img) mask to a feature map's grid and broadcast over channels.

    Resizing is area-averaging (adaptive bins; exact bin means when the sizes
    divide), so outputs lie in [0, 1].
    """
    mask = torch.as_tensor(mask)
    if mask.ndim != 2 or mask.numel() == 0:
        raise ValueError(f"mask must be a non-empty 2D tensor, got shape {tuple(mask.shape)}")
    vals = torch.unique(mask)
    if not bool(((vals == 0) | (vals == 1)).all()):
        raise ValueError("mask entries must be 0 or 1")
    h, w = target.spatial
    c = target.values.shape[2]
    resized = F.adaptive_avg_pool2d(mask.to(target.values.dtype)[None, None], (h, w))[0, 0]
    return resized[:, :, None].expand(h, w, c)


def mask_support_features(f_s, m_s):
    """Zero out background support activations: Hadamard product with the projected mask."""
    proj = mask_project(m_s, f_s)
    if proj.shape != f_s.values.shape:
        raise ValueError(f"projected mask {tuple(proj.shape)} vs features {tuple(f_s.values.shape)}")
    return FeatureMap(values=f_s.values * proj, level_index=f_s.level_index)


def correlate(f_q, f_s_hat):
    """Clipped cosine similarity between every query and support position.

    Returns (h_q, w_q, h_s, w_s). Vectors with norm below ZERO_NORM_EPS
    correlate to 0 by convention.
    """
    q, s = f_q.values, f_s_hat.values
    if q.shape[2] != s.shape[2]:
        raise ValueError(f"channel mismatch: query {q.shape[2]} vs support {s.shape[2]}")

    def _unit(x):
        norm = x.norm(dim=2, keepdim=True)
        return torch.where(norm < ZERO_NORM_EPS, torch.zeros_like(x), x / norm.clamp_min(ZERO_NORM_EPS))

    cos = torch.einsum("ijc,klc->ijkl", _unit(q), _unit(s))
    # clamp(0, 1) is ReLU plus removal of float roundoff above 1
    return cos.clamp(0.0, 1.0)


def stack_levels(pyramid_q, pyramid_s, mask_s, p):
    """Correlate every level of pyramid layer `p` and stack along the channel axis."""
    idxs = pyramid_q.group(p)
    if not idxs:
        raise ValueError(f"pyramid layer {p} has no levels")
    channels = []
    for i in idxs:
        f_q = pyramid_q.levels[i]
        f_s = mask_support_features(pyramid_s.levels[i], mask_s)
        channels.append(correlate(f_q, f_s))
    sizes = {c.shape for c in channels}
    if len(sizes) > 1:
        raise ValueError(f"mixed correlation shapes within layer {p}: {sorted(sizes)}")
    return CorrelationVolume(values=torch.stack(channels, dim=-1), channel_kind=STACKED_LEVELS)
