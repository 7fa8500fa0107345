"""Synthetic episode generation: one colored target shape per scene (class =
shape family x color) plus a differently-classed distractor on a textured
background, with exact analytically-rasterized masks."""

import math
from dataclasses import dataclass, field

import numpy as np

FAMILIES = ("disk", "box", "tri")
COLORS = (
    (0.90, 0.15, 0.15),
    (0.15, 0.75, 0.20),
    (0.15, 0.30, 0.90),
    (0.92, 0.80, 0.10),
    (0.80, 0.15, 0.85),
    (0.10, 0.80, 0.80),
)


def class_id(family_idx, color_idx):
    return family_idx * len(COLORS) + color_idx


def all_classes():
    return [(f, c) for f in range(len(FAMILIES)) for c in range(len(COLORS))]


def train_classes():
    """Shape/color combos used for training pools."""
    return [(f, c) for f, c in all_classes() if c % len(FAMILIES) != f]


def holdout_classes():
    """Combos never paired during training (each family and color still appears
    in training with other partners)."""
    return [(f, c) for f, c in all_classes() if c % len(FAMILIES) == f]


@dataclass(frozen=True)
class ShapeSpec:
    family: str
    center: tuple  # (y, x) in pixels
    size: float    # radius / half-side / circumradius
    angle: float


def rasterize_shape(spec, image_size):
    """Exact binary membership of pixel centers (r + 0.5, c + 0.5) in the shape."""
    ys, xs = np.mgrid[0:image_size, 0:image_size]
    py = ys + 0.5 - spec.center[0]
    px = xs + 0.5 - spec.center[1]
    if spec.family == "disk":
        inside = py**2 + px**2 <= spec.size**2
    elif spec.family == "box":
        cos, sin = math.cos(spec.angle), math.sin(spec.angle)
        u = cos * px + sin * py
        v = -sin * px + cos * py
        inside = (np.abs(u) <= spec.size) & (np.abs(v) <= spec.size)
    elif spec.family == "tri":
        verts = [
            (spec.center[0] + spec.size * math.sin(spec.angle + k * 2 * math.pi / 3),
             spec.center[1] + spec.size * math.cos(spec.angle + k * 2 * math.pi / 3))
            for k in range(3)
        ]
        inside = np.ones((image_size, image_size), dtype=bool)
        for k in range(3):
            ay, ax = verts[k]
            by, bx = verts[(k + 1) % 3]
            oy, ox = verts[(k + 2) % 3]
            cross = (bx - ax) * (ys + 0.5 - ay) - (by - ay) * (xs + 0.5 - ax)
            ref = (bx - ax) * (oy - ay) - (by - ay) * (ox - ax)
            inside &= cross * ref >= 0
    else:
        raise ValueError(f"unknown shape family {spec.family!r}")
    return inside.astype(np.uint8)


@dataclass
class EpisodeSample:
    """K support image/mask pairs plus one query pair, all one class."""

    support: list
    query_image: np.ndarray
    query_mask: np.ndarray
    class_id: int
    query_shape: ShapeSpec = field(default=None, repr=False)


def _random_shape(rng, family, image_size):
    size = rng.uniform(0.14, 0.28) * image_size
    cy = rng.uniform(0.3, 0.7) * image_size
    cx = rng.uniform(0.3, 0.7) * image_size
    return ShapeSpec(family=FAMILIES[family], center=(cy, cx), size=size,
                     angle=rng.uniform(0, 2 * math.pi))


def _paint(rng, image, mask, color):
    noise = rng.uniform(-0.03, 0.03, size=image.shape)
    fill = np.asarray(color)[None, None, :] + noise
    image[mask.astype(bool)] = fill[mask.astype(bool)]


def _scene(rng, family, color, image_size):
    base = rng.uniform(0.35, 0.65)
    image = base + rng.uniform(-0.08, 0.08, size=(image_size, image_size, 3))
    # distractor of a different class (family and color both differ), drawn first
    d_family = int(rng.choice([f for f in range(len(FAMILIES)) if f != family]))
    d_color = int(rng.choice([c for c in range(len(COLORS)) if c != color]))
    d_spec = _random_shape(rng, d_family, image_size)
    _paint(rng, image, rasterize_shape(d_spec, image_size), COLORS[d_color])
    spec = _random_shape(rng, family, image_size)
    mask = rasterize_shape(spec, image_size)
    _paint(rng, image, mask, COLORS[color])
    return np.clip(image, 0.0, 1.0).astype(np.float32), mask, spec


def synth_episode(seed, k=1, image_size=64, classes=None):
    """Deterministically generate one episode from `seed`. `classes` is the pool
    of (family_idx, color_idx) combos to draw the episode class from."""
    rng = np.random.default_rng(seed)
    pool = classes if classes is not None else train_classes()
    family, color = pool[int(rng.integers(len(pool)))]
    support = []
    for _ in range(k):
        img, mask, _ = _scene(rng, family, color, image_size)
        support.append((img, mask))
    q_img, q_mask, q_spec = _scene(rng, family, color, image_size)
    return EpisodeSample(support=support, query_image=q_img, query_mask=q_mask,
                         class_id=class_id(family, color), query_shape=q_spec)
