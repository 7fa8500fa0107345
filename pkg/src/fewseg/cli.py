"""Command-line entry points: train, eval, predict, bench-attn, selfcheck."""

import argparse
import dataclasses
import math
import sys

import numpy as np
import torch

from . import selfcheck
from .config import RunConfig, load_config
from .container import write_tensors
from .episodes import holdout_classes, synth_episode
from .swin import full_score_elements, partition_windows, windowed_score_elements
from .train import (episode_seed, evaluate, heldout_episodes, load_checkpoint,
                    train, training_pool)
from .metrics import format_report


def _tuple_arg(raw):
    return tuple(int(x) for x in raw.split(",") if x.strip())


def _add_config_flags(parser):
    """One flag per RunConfig field (underscores become dashes)."""
    for f in dataclasses.fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if isinstance(f.default, bool):
            parser.add_argument(flag, dest=f.name, default=None,
                                action=argparse.BooleanOptionalAction)
        elif isinstance(f.default, tuple):
            parser.add_argument(flag, dest=f.name, default=None, type=_tuple_arg)
        elif isinstance(f.default, float):
            parser.add_argument(flag, dest=f.name, default=None, type=float)
        else:
            parser.add_argument(flag, dest=f.name, default=None, type=int)
    parser.add_argument("--config", default=None, help="flat key=value config file")
    parser.add_argument("--profile", default="desk", choices=("desk", "paper"))


def _config_from_args(args):
    overrides = {f.name: getattr(args, f.name) for f in dataclasses.fields(RunConfig)}
    return load_config(args.config, overrides=overrides, profile=args.profile)


def _cmd_train(args):
    cfg = _config_from_args(args)
    if args.resume:
        train(cfg, args.out, resume_from=args.resume, log=print)
    else:
        train(cfg, args.out, log=print)
    print(f"checkpoint written to {args.out}")
    return 0


def _cmd_eval(args):
    cfg = _config_from_args(args)
    if args.split == "heldout":
        episodes = heldout_episodes(cfg, args.episodes)
    else:
        episodes = training_pool(cfg)[: args.episodes]
    report = evaluate(cfg, args.checkpoint, episodes)
    text = format_report(report)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    sys.stdout.write(text)
    return 0


def _cmd_predict(args):
    cfg = _config_from_args(args)
    _, model, _ = load_checkpoint(args.checkpoint)
    episode = synth_episode(episode_seed(cfg.seed, args.episode_index), k=cfg.kshot,
                            image_size=cfg.image_size, classes=holdout_classes())
    mask = model.predict_episode(episode, tau=cfg.tau)
    write_tensors(args.out, {
        "mask": mask.astype(np.uint8),
        "query_mask": episode.query_mask.astype(np.uint8),
    })
    print(f"prediction written to {args.out}")
    return 0


def _cmd_bench_attn(args):
    dims = _tuple_arg(args.dims)
    n = args.window
    print(f"{'grid':>16} {'window':>6} {'windowed':>12} {'full':>12} {'ratio':>8}")
    rows = [dims] if args.dims_only else [(4,) * len(dims), (8,) * len(dims), dims]
    seen = set()
    for d in rows:
        if d in seen or any(s % n for s in d):
            continue
        seen.add(d)
        tokens = math.prod(d)
        # measured: materialize the per-window logits and count them
        x = torch.randn(*d, 8)
        windows = partition_windows(x, n).reshape(-1, n ** len(d), 8)
        logits = windows @ windows.transpose(-2, -1)
        measured = logits.numel()
        assert measured == windowed_score_elements(d, n)
        if tokens <= 4096:
            flat = x.reshape(tokens, 8)
            full_measured = (flat @ flat.T).numel()
            assert full_measured == full_score_elements(d)
        full = full_score_elements(d)
        label = "x".join(str(s) for s in d)
        print(f"{label:>16} {n:>6} {measured:>12} {full:>12} {full / measured:>8.1f}")
    return 0


def _cmd_selfcheck(_args):
    return 1 if selfcheck.main() else 0


def main(argv=None):
    parser = argparse.ArgumentParser(prog="fewseg",
                                     description="few-shot segmentation by 4D cost aggregation")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run the episodic training loop")
    _add_config_flags(p_train)
    p_train.add_argument("--out", default="checkpoint.vatc")
    p_train.add_argument("--resume", default=None)
    p_train.set_defaults(func=_cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_config_flags(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--episodes", type=int, default=50)
    p_eval.add_argument("--split", default="heldout", choices=("heldout", "train"))
    p_eval.add_argument("--out", default=None)
    p_eval.set_defaults(func=_cmd_eval)

    p_pred = sub.add_parser("predict", help="predict one synthetic episode")
    _add_config_flags(p_pred)
    p_pred.add_argument("--checkpoint", required=True)
    p_pred.add_argument("--episode-index", type=int, default=0)
    p_pred.add_argument("--out", default="prediction.vatc")
    p_pred.set_defaults(func=_cmd_predict)

    p_bench = sub.add_parser("bench-attn",
                             help="windowed vs full attention score-element counts")
    p_bench.add_argument("--dims", default="8,8,8,8")
    p_bench.add_argument("--window", type=int, default=4)
    p_bench.add_argument("--dims-only", action="store_true")
    p_bench.set_defaults(func=_cmd_bench_attn)

    p_check = sub.add_parser("selfcheck", help="run the oracle/invariant suite")
    p_check.set_defaults(func=_cmd_selfcheck)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
