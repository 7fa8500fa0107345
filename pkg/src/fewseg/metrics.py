"""K-shot vote inference and evaluation metrics: mean IoU, foreground-background
IoU, mean boundary accuracy, keypoint transfer accuracy, and average endpoint
error (the latter differentiable, for correspondence-style training)."""

import math
from dataclasses import dataclass

import numpy as np
import torch
from scipy.ndimage import distance_transform_cdt


def kshot_vote(masks, tau=0.5):
    """Per-pixel vote over K binary masks: foreground iff mean vote > tau."""
    if len(masks) == 0:
        raise ValueError("need at least one mask")
    stack = np.stack([np.asarray(m) for m in masks]).astype(np.float64)
    if stack.ndim != 3:
        raise ValueError("masks must share one 2D shape")
    return (stack.mean(axis=0) > tau).astype(np.uint8)


def _iou(intersection, union):
    # both-empty convention: IoU = 1
    return 1.0 if union == 0 else intersection / union


def miou(preds, gts, class_ids):
    """Class-averaged IoU; per class, intersection/union aggregated over that
    class's episodes before dividing."""
    if not len(class_ids):
        raise ValueError("need at least one episode")
    inter = {}
    union = {}
    for pred, gt, cid in zip(preds, gts, class_ids):
        p = np.asarray(pred).astype(bool)
        g = np.asarray(gt).astype(bool)
        inter[cid] = inter.get(cid, 0) + int((p & g).sum())
        union[cid] = union.get(cid, 0) + int((p | g).sum())
    return float(np.mean([_iou(inter[c], union[c]) for c in inter]))


def fbiou(preds, gts):
    """Mean of foreground and background IoU with all episodes pooled."""
    fg_i = fg_u = bg_i = bg_u = 0
    for pred, gt in zip(preds, gts):
        p = np.asarray(pred).astype(bool)
        g = np.asarray(gt).astype(bool)
        fg_i += int((p & g).sum())
        fg_u += int((p | g).sum())
        bg_i += int((~p & ~g).sum())
        bg_u += int((~p | ~g).sum())
    return 0.5 * (_iou(fg_i, fg_u) + _iou(bg_i, bg_u))


def boundary_pixels(mask):
    """Pixels whose value differs from any in-bounds 4-neighbor."""
    m = np.asarray(mask).astype(bool)
    edge = np.zeros_like(m)
    edge[:-1, :] |= m[:-1, :] != m[1:, :]
    edge[1:, :] |= m[1:, :] != m[:-1, :]
    edge[:, :-1] |= m[:, :-1] != m[:, 1:]
    edge[:, 1:] |= m[:, 1:] != m[:, :-1]
    return edge


def mba_radii(h, w):
    """Five radii uniform in [3, (w + h) / 300]; the interval degenerates to
    all-3 whenever the upper end is <= 3 (true for any image under ~900 px)."""
    upper = max(3.0, (w + h) / 300.0)
    return np.linspace(3.0, upper, 5)


def mba(pred, gt, image_hw=None):
    """Mean, over the sampled radii, of prediction accuracy restricted to pixels
    within Chebyshev distance r of the ground-truth boundary.

    Returns NaN (the undefined-metric sentinel) when the boundary is empty,
    i.e. for constant ground-truth masks.
    """
    p = np.asarray(pred).astype(bool)
    g = np.asarray(gt).astype(bool)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
    h, w = image_hw if image_hw is not None else g.shape
    edge = boundary_pixels(g)
    if not edge.any():
        return float("nan")
    dist = distance_transform_cdt(~edge, metric="chessboard")
    agree = p == g
    accs = []
    for r in mba_radii(h, w):
        band = dist <= r
        accs.append(float(agree[band].sum()) / float(band.sum()))
    return float(np.mean(accs))


@dataclass(frozen=True)
class KeypointPair:
    """Predicted vs ground-truth keypoint with its normalizing extent and threshold."""

    k_pred: tuple
    k_gt: tuple
    extent: tuple  # (H, W) of the object box or the image
    alpha: float

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")

    @property
    def correct(self):
        d = math.dist(self.k_pred, self.k_gt)
        return d <= self.alpha * max(self.extent)


def pck(pairs):
    """Fraction of keypoint pairs within alpha * max(H, W) of the ground truth
    (inclusive threshold)."""
    if not pairs:
        raise ValueError("need at least one keypoint pair")
    return sum(p.correct for p in pairs) / len(pairs)


def aepe(flow_pred, flow_gt):
    """Mean Euclidean norm of the per-position flow difference; differentiable."""
    if flow_pred.shape != flow_gt.shape:
        raise ValueError(f"shape mismatch {tuple(flow_pred.shape)} vs {tuple(flow_gt.shape)}")
    if flow_pred.shape[-1] != 2:
        raise ValueError("flow fields must have 2 channels last")
    diff = torch.as_tensor(flow_pred) - torch.as_tensor(flow_gt)
    return diff.norm(dim=-1).mean()


def format_report(values):
    """Render a metrics mapping as `key: value` lines, keys sorted."""
    lines = []
    for key in sorted(values):
        v = values[key]
        lines.append(f"{key}: {v:.6f}" if isinstance(v, float) else f"{key}: {v}")
    return "\n".join(lines) + "\n"


def evaluate_episodes(preds, gts, class_ids, seed):
    """Aggregate the segmentation metrics over a batch of evaluated episodes."""
    mbas = [mba(p, g) for p, g in zip(preds, gts)]
    mbas = [m for m in mbas if not math.isnan(m)]
    return {
        "episodes": len(preds),
        "fb_iou": float(fbiou(preds, gts)),
        "mba": float(np.mean(mbas)) if mbas else float("nan"),
        "miou": float(miou(preds, gts, class_ids)),
        "seed": seed,
    }
