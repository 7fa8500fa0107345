"""Run configuration: dataclass defaults mirror the published-scale recipe
(window 4, embed dim 128, tau 0.5, lr 5e-4), with a desk-scale override profile
small enough to train on one CPU core. Configs round-trip through flat
key=value text files."""

import dataclasses
import os
from dataclasses import dataclass


@dataclass
class RunConfig:
    image_size: int = 417
    window: int = 4
    embed_dim: int = 128
    tau: float = 0.5
    kshot: int = 1
    levels: int = 3
    heads: int = 4
    vtm_depth: int = 2
    mlp_ratio: int = 4
    gn_groups: int = 4
    backbone_width: int = 16
    freeze_backbone: bool = False
    support_pool: tuple = (2, 1, 1)        # per level, finest first
    decoder_stages: int = 2
    appearance_widths: tuple = (16, 32, 64)  # projection widths, finest level first
    lr: float = 5e-4
    weight_decay: float = 0.05
    seed: int = 0
    max_steps: int = 2000
    episode_pool: int = 10
    checkpoint_every: int = 500

    def __post_init__(self):
        if not 0 < self.tau < 1:
            raise ValueError("tau must lie in (0, 1)")
        if self.kshot < 1 or self.levels < 1 or self.max_steps < 0:
            raise ValueError("kshot and levels must be >= 1, max_steps >= 0")
        if self.embed_dim % self.heads:
            raise ValueError("embed_dim must divide by heads")
        if len(self.support_pool) < self.levels:
            raise ValueError("need a support_pool entry per level")
        if self.decoder_stages > len(self.appearance_widths):
            raise ValueError("need an appearance width per decoder stage")

    @classmethod
    def desk(cls, **overrides):
        """Desk-scale profile: 64x64 images, embed dim 32."""
        base = dict(image_size=64, embed_dim=32)
        base.update(overrides)
        return cls(**base)


def _parse_value(field, raw):
    raw = raw.strip()
    if field.type is bool or isinstance(field.default, bool):
        return raw.lower() in ("1", "true", "yes", "on")
    if isinstance(field.default, tuple):
        return tuple(int(x) for x in raw.split(",") if x.strip())
    if isinstance(field.default, float):
        return float(raw)
    return int(raw)


def load_config(path=None, overrides=None, profile="desk"):
    """Build a RunConfig from an optional key=value file plus explicit overrides;
    the VAT_SEED environment variable takes precedence over both for the seed.
    A `profile` key in the file (desk or paper) picks the default set."""
    values = {}
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    if path:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
                key, raw = line.split("=", 1)
                key = key.strip()
                if key == "profile":
                    profile = raw.strip()
                    continue
                if key not in fields:
                    raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
                values[key] = _parse_value(fields[key], raw)
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    env_seed = os.environ.get("VAT_SEED")
    if env_seed is not None:
        values["seed"] = int(env_seed)
    if profile == "desk":
        return RunConfig.desk(**values)
    if profile == "paper":
        return RunConfig(**values)
    raise ValueError(f"unknown profile {profile!r}")


def dump_config(cfg):
    """Serialize a RunConfig as the flat key=value text accepted by load_config."""
    lines = []
    for f in dataclasses.fields(RunConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{f.name}={v}")
    return "\n".join(lines) + "\n"
