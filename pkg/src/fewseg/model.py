"""End-to-end network: backbone features, masked correlation volumes per
pyramid level, guided coarse-to-fine aggregation, and appearance-guided
decoding to a query mask."""

import torch
import torch.nn as nn

from . import backbone as bb
from .config import RunConfig
from .correlation import stack_levels
from .decoder import MaskDecoder, pool_support, predict_mask
from .embedding import ConvEmbed4d, ConvEmbedConfig
from .metrics import kshot_vote
from .pyramid import PyramidEncoder
from .swin import SwinStack

# pyramid layers ordered coarse to fine, with their image strides
LAYER_STRIDES = {5: 16, 4: 8, 3: 4}
GROUP_SIZE = 2  # feature maps correlated per layer


def effective_window(n, dims):
    """Shrink the window for tiny grids (halve while larger than the smallest dim)."""
    m = min(dims)
    while n > 1 and n > m:
        n //= 2
    return n


class FewShotSegmenter(nn.Module):
    def __init__(self, cfg: RunConfig):
        super().__init__()
        self.cfg = cfg
        self.backbone = bb.TinyBackbone(cfg.backbone_width, freeze=cfg.freeze_backbone)
        if cfg.levels > len(LAYER_STRIDES):
            raise ValueError(f"at most {len(LAYER_STRIDES)} pyramid levels available")
        self.layers = sorted(LAYER_STRIDES)[::-1][: cfg.levels]  # e.g. [5, 4, 3]

        embedders, stacks = [], []
        fine_first = self.layers[::-1]
        for p in self.layers:
            s = cfg.image_size // LAYER_STRIDES[p]
            pool = cfg.support_pool[fine_first.index(p)]
            ecfg = ConvEmbedConfig.default(cfg.embed_dim, support_pool=pool,
                                           group_count=cfg.gn_groups)
            embedders.append(ConvEmbed4d(GROUP_SIZE, ecfg))
            out_dims = tuple(s // t for t in ecfg.total_stride)
            n = effective_window(cfg.window, out_dims)
            stacks.append(SwinStack(cfg.embed_dim, n, cfg.heads, depth=cfg.vtm_depth,
                                    rank=4, mlp_ratio=cfg.mlp_ratio))
        self.encoder = PyramidEncoder(embedders, stacks)

        # appearance sources by stride: stem at 2, then the b-map of each stage
        stride_to_level = {2: bb.STEM}
        stride_to_channels = {2: cfg.backbone_width}
        for i, b_idx in enumerate(bb.STAGE_B):
            stride_to_level[4 * 2**i] = b_idx
            stride_to_channels[4 * 2**i] = self.backbone.stage_channels[i]
        start_stride = LAYER_STRIDES[self.layers[-1]]
        self.appearance_levels = []
        stage_channels, stage_widths = [], []
        for i in range(cfg.decoder_stages):
            stride = start_stride >> i
            if stride not in stride_to_level:
                raise ValueError(f"no appearance source at stride {stride}; "
                                 f"reduce decoder_stages")
            self.appearance_levels.append(stride_to_level[stride])
            stage_channels.append(stride_to_channels[stride])
            # fewer widths are configured for coarser-than-listed strides
            width_idx = min(max(stride.bit_length() - 2, 0), len(cfg.appearance_widths) - 1)
            stage_widths.append(cfg.appearance_widths[width_idx])
        dec_dims = cfg.image_size // start_stride
        self.decoder = MaskDecoder(cfg.embed_dim, stage_channels, stage_widths,
                                   image_size=cfg.image_size,
                                   window=effective_window(cfg.window, (dec_dims, dec_dims)),
                                   heads=cfg.heads, mlp_ratio=cfg.mlp_ratio)

    def forward(self, support_image, support_mask, query_image):
        """One-shot forward: (H, W, 3) images in [0, 1], binary (H, W) support
        mask; returns (H, W, 2) logits for the query."""
        pyr_q = self.backbone(query_image)
        pyr_s = self.backbone(support_image)
        volumes = [stack_levels(pyr_q, pyr_s, support_mask, p) for p in self.layers]
        agg = self.encoder(volumes)
        pooled = pool_support(agg)
        feats = [pyr_q.levels[i].values for i in self.appearance_levels]
        return self.decoder(pooled, feats)

    @torch.no_grad()
    def predict_episode(self, episode, tau=None):
        """K-shot inference: one forward per support pair, then the pixel vote."""
        tau = self.cfg.tau if tau is None else tau
        query = torch.as_tensor(episode.query_image, dtype=torch.float32)
        masks = []
        for img, mask in episode.support:
            logits = self(torch.as_tensor(img, dtype=torch.float32),
                          torch.as_tensor(mask, dtype=torch.float32), query)
            masks.append(predict_mask(logits).numpy())
        return kshot_vote(masks, tau=tau)


def build_model(cfg):
    """Construct the network with seed-deterministic initialization."""
    torch.manual_seed(cfg.seed)
    return FewShotSegmenter(cfg)


def parameter_count(model):
    return sum(p.numel() for p in model.parameters() if p.requires_grad)
