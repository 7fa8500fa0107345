"""Episodic training loop, checkpointing through the tensor container, and
K-shot evaluation. Everything is a pure function of the config seed: episode
order, parameter init, and the optimizer trajectory."""

import dataclasses

import numpy as np
import torch
import torch.nn.functional as F

from .config import RunConfig, dump_config
from .container import read_tensors, write_tensors
from .episodes import holdout_classes, synth_episode, train_classes
from .metrics import evaluate_episodes
from .model import build_model, parameter_count

_POOL_STRIDE = 1_000_003
_EVAL_OFFSET = 777_000_017

# fields that must match between a checkpoint and the config used to load it
ARCH_FIELDS = (
    "image_size", "window", "embed_dim", "levels", "heads", "vtm_depth", "mlp_ratio",
    "gn_groups", "backbone_width", "support_pool", "decoder_stages", "appearance_widths",
)


class TrainingDiverged(RuntimeError):
    pass


def episode_seed(seed, index):
    return (seed * _POOL_STRIDE + index) % (2**63 - 1)


def training_pool(cfg):
    """The fixed pool of training episodes (1-shot), derived from the seed."""
    return [
        synth_episode(episode_seed(cfg.seed, i), k=1, image_size=cfg.image_size,
                      classes=train_classes())
        for i in range(cfg.episode_pool)
    ]


def heldout_episodes(cfg, count, k=None):
    """Evaluation episodes drawn from the held-out shape/color combinations."""
    k = cfg.kshot if k is None else k
    return [
        synth_episode(episode_seed(cfg.seed + _EVAL_OFFSET, i), k=k,
                      image_size=cfg.image_size, classes=holdout_classes())
        for i in range(count)
    ]


def _to_t(x, dtype=torch.float32):
    return torch.as_tensor(x, dtype=dtype)


def episode_loss(model, episode):
    """Mean per-pixel two-class cross-entropy of the query prediction."""
    sup_img, sup_mask = episode.support[0]
    logits = model(_to_t(sup_img), _to_t(sup_mask), _to_t(episode.query_image))
    target = _to_t(episode.query_mask, dtype=torch.long)
    return F.cross_entropy(logits.permute(2, 0, 1).unsqueeze(0), target.unsqueeze(0))


def save_checkpoint(path, model, optimizer, cfg, step, losses):
    entries = {
        "meta/config": np.frombuffer(dump_config(cfg).encode("utf-8"), dtype=np.uint8),
        "meta/step": np.float64(step).reshape(()),
        "meta/loss_trace": np.asarray(losses, dtype=np.float64),
    }
    for name, tensor in model.state_dict().items():
        entries[f"model/{name}"] = tensor.detach().numpy()
    state = optimizer.state_dict()["state"]
    for idx, slots in state.items():
        for slot, value in slots.items():
            entries[f"opt/{idx}/{slot}"] = value.detach().numpy().astype(
                np.float64 if slot == "step" else np.float32)
    write_tensors(path, entries)


def load_checkpoint(path):
    """Returns (cfg, model, raw entries); the model has the stored weights."""
    entries = read_tensors(path)
    text = entries["meta/config"].tobytes().decode("utf-8")
    cfg = _config_from_text(text)
    model = build_model(cfg)
    state = {name[len("model/"):]: torch.from_numpy(arr)
             for name, arr in entries.items() if name.startswith("model/")}
    model.load_state_dict(state)
    return cfg, model, entries


def _config_from_text(text):
    values = {}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        key, raw = line.split("=", 1)
        values[key] = raw
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    parsed = {}
    for key, raw in values.items():
        f = fields[key]
        if isinstance(f.default, bool):
            parsed[key] = raw == "true"
        elif isinstance(f.default, tuple):
            parsed[key] = tuple(int(x) for x in raw.split(",") if x)
        elif isinstance(f.default, float):
            parsed[key] = float(raw)
        else:
            parsed[key] = int(raw)
    return RunConfig(**parsed)


def check_compatible(cfg, ckpt_cfg):
    for name in ARCH_FIELDS:
        if getattr(cfg, name) != getattr(ckpt_cfg, name):
            raise ValueError(f"checkpoint/config mismatch on {name}: "
                             f"{getattr(ckpt_cfg, name)} vs {getattr(cfg, name)}")


def _restore_optimizer(optimizer, entries):
    state = {}
    for name, arr in entries.items():
        if not name.startswith("opt/"):
            continue
        _, idx, slot = name.split("/")
        slot_t = torch.from_numpy(arr.astype(np.float32))
        state.setdefault(int(idx), {})[slot] = slot_t
    sd = optimizer.state_dict()
    sd["state"] = state
    optimizer.load_state_dict(sd)


def make_optimizer(model, cfg):
    params = [p for p in model.parameters() if p.requires_grad]
    return torch.optim.AdamW(params, lr=cfg.lr, betas=(0.9, 0.999),
                             weight_decay=cfg.weight_decay)


def train(cfg, checkpoint_path, resume_from=None, log=None, pool=None):
    """Run the episodic loop to cfg.max_steps, saving periodic checkpoints to
    `checkpoint_path` (suffix .stepN for the periodic ones). Returns the final
    loss trace."""
    if resume_from is not None:
        ckpt_cfg, model, entries = load_checkpoint(resume_from)
        check_compatible(cfg, ckpt_cfg)
        start = int(entries["meta/step"])
        losses = list(entries["meta/loss_trace"])
        optimizer = make_optimizer(model, cfg)
        _restore_optimizer(optimizer, entries)
    else:
        model = build_model(cfg)
        optimizer = make_optimizer(model, cfg)
        start = 0
        losses = []
    if log:
        log(f"learnable parameters: {parameter_count(model)}")
    pool = training_pool(cfg) if pool is None else pool
    model.train()
    for step in range(start, cfg.max_steps):
        episode = pool[step % len(pool)]
        loss = episode_loss(model, episode)
        if not torch.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss at step {step}")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        losses.append(float(loss))
        done = step + 1
        if log and (done % 50 == 0 or done == cfg.max_steps):
            log(f"step {done}/{cfg.max_steps} loss {losses[-1]:.4f}")
        if cfg.checkpoint_every and done % cfg.checkpoint_every == 0 and done < cfg.max_steps:
            save_checkpoint(f"{checkpoint_path}.step{done}", model, optimizer, cfg, done, losses)
    save_checkpoint(checkpoint_path, model, optimizer, cfg, cfg.max_steps, losses)
    return losses


def evaluate(cfg, checkpoint_path, episodes):
    """K-shot inference over `episodes`, reported as the sorted-key metrics dict."""
    ckpt_cfg, model, _ = load_checkpoint(checkpoint_path)
    check_compatible(cfg, ckpt_cfg)
    model.eval()
    preds, gts, cids = [], [], []
    for ep in episodes:
        preds.append(model.predict_episode(ep, tau=cfg.tau))
        gts.append(ep.query_mask)
        cids.append(ep.class_id)
    return evaluate_episodes(preds, gts, cids, seed=cfg.seed)
