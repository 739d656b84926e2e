"""Procedural caption+image dataset: colored shapes on a 3x3 placement grid.

A scene is 1-3 non-overlapping objects (shape, color, grid cell) over a plain
or gradient background. Captions are flat token triplets "color shape cell"
per object, padded to a fixed length T. The renderer rasterizes every scale
with pure integer arithmetic (2x2 subpixel coverage, 0..255 color mixing) so
output is bit-stable across platforms, then normalizes to [-1, 1].

Ground-truth per-token occupancy maps exist for evaluation only; they are
never fed to the model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, VocabularyError

COLORS = ("red", "green", "blue", "yellow")
SHAPES = ("circle", "square", "triangle")
CELLS = (
    "top-left", "top-center", "top-right",
    "middle-left", "middle-center", "middle-right",
    "bottom-left", "bottom-center", "bottom-right",
)
PAD = "pad"

VOCAB: tuple[str, ...] = (PAD,) + COLORS + SHAPES + CELLS
TOKEN_ID = {tok: i for i, tok in enumerate(VOCAB)}
PAD_ID = TOKEN_ID[PAD]
BACKGROUNDS = ("plain", "gradient")

_RGB = {
    "red": (230, 40, 40),
    "green": (40, 200, 60),
    "blue": (50, 70, 230),
    "yellow": (235, 220, 50),
}
_BG_PLAIN = 45
_BG_GRAD_LO, _BG_GRAD_HI = 20, 70


@dataclass(frozen=True)
class SceneObject:
    shape: str
    color: str
    cell: int  # 0..8, row-major on the 3x3 grid


@dataclass(frozen=True)
class SceneSpec:
    objects: tuple[SceneObject, ...]
    background: str


@dataclass
class ScenePair:
    spec: SceneSpec
    tokens: np.ndarray  # (T,) int64 token ids
    images: list[np.ndarray]  # per scale, (3, s, s) float64 in [-1, 1]
    layout: list[np.ndarray]  # per scale, (T, s, s) uint8 occupancy


def tokens_to_string(ids) -> str:
    return " ".join(VOCAB[i] for i in ids)


def string_to_tokens(text: str) -> np.ndarray:
    out = []
    for word in text.split():
        if word not in TOKEN_ID:
            raise VocabularyError(f"unknown token {word!r}")
        out.append(TOKEN_ID[word])
    return np.asarray(out, dtype=np.int64)


def sample_scene(seed: int, max_objects: int = 3) -> SceneSpec:
    """Uniform draw over valid scenes: 1..max_objects objects on distinct cells."""
    if not 1 <= max_objects <= 3:
        raise ConfigError(f"max_objects must be in 1..3, got {max_objects}")
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, max_objects + 1))
    cells = rng.choice(9, size=n, replace=False)
    objects = tuple(
        SceneObject(
            shape=SHAPES[rng.integers(len(SHAPES))],
            color=COLORS[rng.integers(len(COLORS))],
            cell=int(c),
        )
        for c in cells
    )
    background = BACKGROUNDS[rng.integers(2)]
    return SceneSpec(objects, background)


def scene_tokens(spec: SceneSpec, t: int) -> np.ndarray:
    """Token triplet per object, padded to length t."""
    ids = []
    for ob in spec.objects:
        ids += [TOKEN_ID[ob.color], TOKEN_ID[ob.shape], TOKEN_ID[CELLS[ob.cell]]]
    if len(ids) > t:
        raise ConfigError(f"{len(spec.objects)} objects need {len(ids)} tokens > T={t}")
    ids += [PAD_ID] * (t - len(ids))
    return np.asarray(ids, dtype=np.int64)


def _inside(shape: str, px: np.ndarray, py: np.ndarray, s4: int) -> np.ndarray:
    """Integer membership test in cell-local coordinates.

    px, py are positions in units of 1/s4 of the cell side (0 <= p < s4).
    Shapes fill the cell: the square is the cell, the circle is inscribed,
    the triangle spans the full base pointing up.
    """
    if shape == "square":
        return np.ones(np.broadcast(px, py).shape, dtype=bool)
    if shape == "circle":
        u = 2 * px - s4
        v = 2 * py - s4
        return u * u + v * v <= s4 * s4
    if shape == "triangle":
        u = 2 * px - s4
        v = 2 * py - s4
        return (2 * u + v + s4 >= 0) & (2 * u - v - s4 <= 0)
    raise ConfigError(f"unknown shape {shape!r}")


def _object_mask(ob: SceneObject, side: int, subdiv: int) -> np.ndarray:
    """Boolean inclusion on a (subdiv*side)^2 sample grid of pixel/subpixel centers."""
    n = subdiv * side
    cx, cy = ob.cell % 3, ob.cell // 3
    q = np.arange(n, dtype=np.int64)
    # sample centers at (2q+1)/(2n) of the image; cell test cleared to integers
    num = 3 * (2 * q + 1)  # numerator over denominator 2n, times 3
    lo_x, hi_x = cx * 2 * n, (cx + 1) * 2 * n
    in_x = (num >= lo_x) & (num < hi_x)
    lo_y, hi_y = cy * 2 * n, (cy + 1) * 2 * n
    in_y = (num >= lo_y) & (num < hi_y)
    # cell-local position: lx = px / (2n) with px in [0, 2n) inside the cell
    px = num - lo_x
    py = num - lo_y
    s4 = 2 * n
    # guard out-of-cell positions before the shape test
    body = _inside(ob.shape, px[None, :].repeat(n, 0), py[:, None].repeat(n, 1), s4)
    return body & in_x[None, :] & in_y[:, None]


def _background(side: int, background: str) -> np.ndarray:
    """(3, side, side) int64 background in 0..255."""
    if background == "plain":
        return np.full((3, side, side), _BG_PLAIN, dtype=np.int64)
    rows = _BG_GRAD_LO + (
        (_BG_GRAD_HI - _BG_GRAD_LO) * np.arange(side, dtype=np.int64)
    ) // max(side - 1, 1)
    return np.broadcast_to(rows[None, :, None], (3, side, side)).copy()


def render(spec: SceneSpec, scales: int, t: int, base: int = 8) -> ScenePair:
    """Rasterize the scene at ``scales`` resolutions (base * 2^i per side)."""
    if scales < 1:
        raise ConfigError(f"need at least one scale, got {scales}")
    tokens = scene_tokens(spec, t)
    images: list[np.ndarray] = []
    layout: list[np.ndarray] = []
    for i in range(scales):
        side = base * (2**i)
        img = _background(side, spec.background)
        lay = np.zeros((t, side, side), dtype=np.uint8)
        for k, ob in enumerate(spec.objects):
            sub = _object_mask(ob, side, subdiv=2)
            cov = sub.reshape(side, 2, side, 2).sum(axis=(1, 3)).astype(np.int64)
            rgb = _RGB[ob.color]
            for ch in range(3):
                img[ch] = (img[ch] * (4 - cov) + rgb[ch] * cov + 2) // 4
            occupied = _object_mask(ob, side, subdiv=1)
            for j in range(3 * k, 3 * k + 3):  # color, shape, cell share the map
                lay[j][occupied] = 1
        images.append(img.astype(np.float64) / 127.5 - 1.0)
        layout.append(lay)
    return ScenePair(spec, tokens, images, layout)


def occupancy_matrix(pair: ScenePair, scale_index: int) -> np.ndarray:
    """(T, N) per-token pixel counts at the given scale, row-major flattening."""
    lay = pair.layout[scale_index]
    t, side, _ = lay.shape
    return lay.reshape(t, side * side).astype(np.float64)


def max_objects_for(t: int) -> int:
    return max(1, min(3, t // 3))


def write_manifest(path, seeds, t: int, max_objects: int) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for seed in seeds:
            spec = sample_scene(int(seed), max_objects)
            fh.write(f"{int(seed)}\t{tokens_to_string(scene_tokens(spec, t))}\n")


def read_manifest(path) -> list[tuple[int, np.ndarray]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            seed_str, text = line.rstrip("\n").split("\t")
            out.append((int(seed_str), string_to_tokens(text)))
    return out
