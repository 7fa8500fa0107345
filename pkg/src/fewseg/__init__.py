"""Few-shot segmentation by aggregating 4D correlation volumes with windowed
attention: masked cosine correlation, overlapping 4D convolutional embedding,
shifted-window transformer aggregation over a guided pyramid, appearance-guided
decoding, K-shot vote inference, and the evaluation metrics."""

from .config import RunConfig, load_config
from .correlation import (CorrelationVolume, FeatureMap, FeaturePyramid, correlate,
                          mask_project, mask_support_features, stack_levels)
from .decoder import MaskDecoder, pool_support, predict_mask
from .embedding import (ConvEmbed4d, ConvEmbedConfig, ConvStage, PatchEmbed4d, PoolStage,
                        conv4d, maxpool4d, vcm_embed, vem_embed)
from .episodes import EpisodeSample, synth_episode
from .metrics import KeypointPair, aepe, fbiou, kshot_vote, mba, miou, pck
from .model import FewShotSegmenter, build_model, parameter_count
from .pyramid import PyramidEncoder, upsample_volume
from .swin import (RelativePositionBias, SwinBlock, SwinStack, WindowAttention, WindowSpec,
                   cyclic_shift4d, partition4d, reverse4d, window_attention)
from .train import evaluate, train

__all__ = [
    "RunConfig", "load_config",
    "CorrelationVolume", "FeatureMap", "FeaturePyramid", "correlate", "mask_project",
    "mask_support_features", "stack_levels",
    "MaskDecoder", "pool_support", "predict_mask",
    "ConvEmbed4d", "ConvEmbedConfig", "ConvStage", "PatchEmbed4d", "PoolStage",
    "conv4d", "maxpool4d", "vcm_embed", "vem_embed",
    "EpisodeSample", "synth_episode",
    "KeypointPair", "aepe", "fbiou", "kshot_vote", "mba", "miou", "pck",
    "FewShotSegmenter", "build_model", "parameter_count",
    "PyramidEncoder", "upsample_volume",
    "RelativePositionBias", "SwinBlock", "SwinStack", "WindowAttention", "WindowSpec",
    "cyclic_shift4d", "partition4d", "reverse4d", "window_attention",
    "evaluate", "train",
]
