"""Fast oracle/invariant suite behind the `selfcheck` CLI command: each check
recomputes an expected value by an independent route (loops, enumeration,
closed forms) and prints one PASS/FAIL line."""

import math
import tempfile

import numpy as np
import torch

from . import container, metrics
from .correlation import FeatureMap, correlate, mask_project
from .decoder import predict_mask
from .embedding import conv4d, maxpool4d
from .pyramid import linear_upsample
from .swin import (RelativePositionBias, WindowAttention, cyclic_shift4d,
                   full_score_elements, partition4d, reverse4d, windowed_score_elements)


def _loop_attention(windows, attn):
    """Dense per-window attention recomputed with explicit loops."""
    t, num, d = windows.shape
    heads = attn.heads
    hd = d // heads
    qkv = attn.qkv(windows).detach()
    bias = attn.bias().detach()
    out = torch.zeros_like(windows)
    for w in range(t):
        q, k, v = qkv[w, :, :d], qkv[w, :, d : 2 * d], qkv[w, :, 2 * d :]
        merged = torch.zeros(num, d)
        for h in range(heads):
            qs = q[:, h * hd : (h + 1) * hd] * hd ** -0.5
            ks = k[:, h * hd : (h + 1) * hd]
            vs = v[:, h * hd : (h + 1) * hd]
            logits = torch.empty(num, num)
            for i in range(num):
                for j in range(num):
                    logits[i, j] = (qs[i] * ks[j]).sum() + bias[h, i, j]
            weights = logits.softmax(dim=-1)
            merged[:, h * hd : (h + 1) * hd] = weights @ vs
        out[w] = attn.proj(merged)
    return out


def run_checks():
    """Yields (name, ok, detail) triples."""
    torch.manual_seed(7)
    rng = np.random.default_rng(7)

    x = torch.randn(8, 8, 4, 4, 5)
    win = partition4d(x, 4)
    yield ("partition/reverse round-trip bitwise",
           torch.equal(reverse4d(win, x.shape[:4], 4), x), "")
    shifted = cyclic_shift4d(x, (2, 2, 2, 2))
    yield ("cyclic shift +/- inverse bitwise",
           torch.equal(cyclic_shift4d(shifted, (-2, -2, -2, -2)), x), "")

    attn = WindowAttention(8, 2, heads=2, rank=4)
    windows = torch.randn(3, 16, 8)
    got = attn(windows)
    want = _loop_attention(windows, attn)
    err = (got - want).abs().max().item()
    yield ("window attention vs loop oracle", err < 1e-6, f"max err {err:.2e}")

    w_count = windowed_score_elements((8, 8, 8, 8), 4)
    f_count = full_score_elements((8, 8, 8, 8))
    yield ("windowed scores 16x fewer on 8^4 grid",
           w_count == 1_048_576 and f_count == 16_777_216 and f_count == 16 * w_count,
           f"{w_count} vs {f_count}")

    bias = RelativePositionBias(4, heads=2, rank=4)
    rows = {bias.offset_to_row(off) for off in
            [(i, j, k, l) for i in range(-3, 4) for j in range(-3, 4)
             for k in range(-3, 4) for l in range(-3, 4)]}
    yield ("bias table indexes (2n-1)^4 offsets injectively",
           len(rows) == 2401 and bias.table.shape[0] == 2401, f"{len(rows)} rows")

    f_q = FeatureMap(torch.tensor([[[3.0, 4.0]]]), 1)
    f_s = FeatureMap(torch.tensor([[[4.0, 3.0]]]), 1)
    c = correlate(f_q, f_s)[0, 0, 0, 0].item()
    yield ("cosine correlation 24/25", abs(c - 0.96) < 1e-6, f"{c}")

    proj = mask_project(torch.tensor([[1.0, 0.0], [0.0, 0.0]]),
                        FeatureMap(torch.zeros(1, 1, 2), 1))
    yield ("mask area-average 2x2 -> 1x1 = 0.25",
           torch.allclose(proj, torch.full((1, 1, 2), 0.25)), "")

    delta = torch.zeros(3, 3, 3, 3, 1, 1)
    delta[1, 1, 1, 1, 0, 0] = 1.0
    v = torch.randn(4, 4, 4, 4, 1)
    yield ("conv4d identity kernel", torch.allclose(conv4d(v, delta), v, atol=1e-6), "")
    ones = torch.ones(5, 5, 5, 5, 1)
    got = conv4d(ones, torch.ones(3, 3, 3, 3, 1, 1))[2, 2, 2, 2, 0].item()
    yield ("conv4d all-ones interior = 81", abs(got - 81.0) < 1e-4, f"{got}")

    spike = torch.zeros(4, 4, 4, 4, 1)
    spike[1, 0, 2, 3, 0] = 7.0
    pooled = maxpool4d(spike, (2, 2, 2, 2))
    yield ("maxpool4d routes the spike", pooled[0, 0, 1, 1, 0].item() == 7.0, "")

    ramp = torch.tensor([0.0, 1.0]).reshape(2, 1)
    up = linear_upsample(ramp, 0, 4).squeeze()
    yield ("align-corners ramp [0,1/3,2/3,1]",
           torch.allclose(up, torch.tensor([0.0, 1 / 3, 2 / 3, 1.0])), "")

    pred = rng.integers(0, 2, (16, 16)).astype(np.uint8)
    gt = rng.integers(0, 2, (16, 16)).astype(np.uint8)
    inter = int(((pred == 1) & (gt == 1)).sum())
    union = int(((pred == 1) | (gt == 1)).sum())
    got = metrics.miou([pred], [gt], [0])
    yield ("miou vs set-count oracle", abs(got - inter / union) < 1e-12, f"{got}")

    votes = [rng.integers(0, 2, (8, 8)).astype(np.uint8) for _ in range(5)]
    want = (sum(int(v[3, 3]) for v in votes) / 5) > 0.5
    got = metrics.kshot_vote(votes, tau=0.5)[3, 3]
    yield ("kshot vote vs enumeration", bool(got) == want, "")

    flow_a = torch.zeros(4, 4, 2)
    flow_b = torch.zeros(4, 4, 2)
    flow_b[..., 0] = 3.0
    flow_b[..., 1] = 4.0
    yield ("aepe constant offset (3,4) = 5",
           abs(metrics.aepe(flow_a, flow_b).item() - 5.0) < 1e-6, "")

    pairs = [metrics.KeypointPair((0.0, 0.0), (6.0, 8.0), (100, 50), alpha=0.1)]
    yield ("pck inclusive at the threshold", metrics.pck(pairs) == 1.0, "")

    square = np.zeros((16, 16), dtype=np.uint8)
    square[4:12, 4:12] = 1
    yield ("mba perfect prediction = 1", metrics.mba(square, square) == 1.0, "")

    with tempfile.NamedTemporaryFile(suffix=".vatc") as fh:
        data = {
            "a": rng.standard_normal((3, 4)).astype(np.float32),
            "b": rng.standard_normal(()).astype(np.float64),
            "c": rng.integers(0, 256, (5,)).astype(np.uint8),
            "empty": np.zeros((0, 2), dtype=np.float32),
        }
        container.write_tensors(fh.name, data)
        back = container.read_tensors(fh.name)
        ok = all(np.array_equal(back[k], data[k]) and back[k].dtype == data[k].dtype
                 for k in data)
    yield ("tensor container round-trip bitwise", ok, "")

    logits = torch.zeros(2, 2, 2)
    yield ("equal logits predict background", int(predict_mask(logits).sum()) == 0, "")


def main(log=print):
    failures = 0
    for name, ok, detail in run_checks():
        status = "PASS" if ok else "FAIL"
        suffix = f" ({detail})" if detail and not ok else ""
        log(f"{status} {name}{suffix}")
        failures += 0 if ok else 1
    log(f"{'OK' if failures == 0 else 'FAILED'}: selfcheck "
        f"{'passed' if failures == 0 else f'{failures} failures'}")
    return failures
