"""Synthetic instruction-following world: colored shapes on a cell grid.

Each world is a set of non-overlapping shapes (one per grid cell), rendered
in one of three modes: plain optical, an inverted-intensity speckled mode
standing in for a second imaging modality, and a busier "general" mode with
a wider size range. The renderer also emits per-pixel class labels and a
per-shape owner map, which double as segmentation ground truth downstream.

Instruction pairs are templated from world geometry, so every answer has an
exact oracle: captions enumerate shapes, counting/color questions read the
shape list, grounding answers are bounding boxes of rendered masks in
normalized hundredths, classification answers name the dominant color.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .kernels import raster
from .streams import make_rng

SHAPE_NAMES = ("square", "disk", "triangle")
COLOR_NAMES = ("red", "green", "blue", "yellow", "cyan", "magenta")
PALETTE = np.array(
    [
        [0.85, 0.15, 0.15],
        [0.15, 0.80, 0.20],
        [0.15, 0.25, 0.85],
        [0.85, 0.80, 0.15],
        [0.15, 0.80, 0.80],
        [0.80, 0.15, 0.80],
    ],
    dtype=np.float32,
)
BACKGROUND = np.float32(0.12)

TASKS = ("caption", "vqa", "grounding", "classification")
MODES = ("optical", "sar", "general")

_BOX_RE = re.compile(r"^\[(\d{1,2}),(\d{1,2}),(\d{1,2}),(\d{1,2})\]$")


@dataclass(frozen=True)
class Shape:
    kind: int  # index into SHAPE_NAMES
    color: int  # index into COLOR_NAMES
    cell: int  # row-major grid cell
    cx: float
    cy: float
    half: float


@dataclass(frozen=True)
class World:
    shapes: tuple
    size: int
    mode: str
    cell: int = 8


@dataclass
class RawExample:
    image: np.ndarray  # [S, S, 3] float32 in [0, 1]
    query: str
    response: str
    source: str
    task: str


# per-kind half-extent ranges as a fraction of the cell; triangles cover
# half their bounding box, so they get the largest halves
_HALF_RANGES = {
    0: (0.34, 0.45),  # square
    1: (0.38, 0.46),  # disk
    2: (0.42, 0.47),  # triangle
}
_GENERAL_WIDEN = 0.08  # the "general" mode draws from a wider size range


def generate_world(rng, size: int = 32, cell: int = 8, min_shapes: int = 0,
                   max_shapes: int = 4, mode: str = "optical") -> World:
    if mode not in MODES:
        raise ValueError(f"unknown render mode {mode!r}")
    grid = size // cell
    hi_n = min(max_shapes, grid * grid)
    lo_n = min(min_shapes, hi_n)
    n = int(rng.integers(lo_n, hi_n + 1))
    cells = np.sort(rng.choice(grid * grid, size=n, replace=False)) if n else np.array([], dtype=int)
    shapes = []
    for c in cells:
        gy, gx = divmod(int(c), grid)
        kind = int(rng.integers(0, 3))
        lo, hi = _HALF_RANGES[kind]
        if mode == "general":
            lo, hi = max(lo - _GENERAL_WIDEN, 0.15), hi
        half = float(cell * (lo + rng.random() * (hi - lo)))
        half = min(half, cell / 2.0 - 0.5)
        slack = cell / 2.0 - half - 0.5
        jx = float((rng.random() * 2 - 1) * max(slack, 0.0))
        jy = float((rng.random() * 2 - 1) * max(slack, 0.0))
        shapes.append(Shape(kind=kind,
                            color=int(rng.integers(0, 6)),
                            cell=int(c),
                            cx=gx * cell + cell / 2.0 - 0.5 + jx,
                            cy=gy * cell + cell / 2.0 - 0.5 + jy,
                            half=half))
    return World(shapes=tuple(shapes), size=size, mode=mode, cell=cell)


SENSOR_NOISE_STD = 0.07


def render(world: World, noise_rng=None):
    """Returns (image, labels, owner); labels are 0=bg, 1+shape kind.

    Every mode carries per-pixel sensor noise drawn from ``noise_rng``;
    geometry (labels/owner) stays noise-free.
    """
    s = world.shapes
    types = np.array([sh.kind for sh in s], dtype=np.int64)
    cxs = np.array([sh.cx for sh in s], dtype=np.float64)
    cys = np.array([sh.cy for sh in s], dtype=np.float64)
    halfs = np.array([sh.half for sh in s], dtype=np.float64)
    colors = PALETTE[[sh.color for sh in s]] if s else np.zeros((0, 3), dtype=np.float32)
    img, labels, owner = raster(types, cxs, cys, halfs, colors,
                                world.size, world.size, BACKGROUND)
    if noise_rng is None:
        noise_rng = make_rng("render-noise-default", world.mode)
    if world.mode == "general":
        ramp = np.linspace(0.0, 0.12, world.size, dtype=np.float32)
        bg = owner < 0
        img[bg] = np.clip(img[bg] + ramp[None, :, None].repeat(world.size, 0)[bg], 0.0, 1.0)
    elif world.mode == "sar":
        gray = img @ np.array([0.299, 0.587, 0.114], dtype=np.float32)
        inv = 1.0 - gray
        speckle = noise_rng.gamma(shape=6.0, scale=1.0 / 6.0, size=gray.shape).astype(np.float32)
        img = np.clip((inv * speckle)[:, :, None].repeat(3, axis=2), 0.0, 1.0)
    if world.mode in ("optical", "general"):
        noise = noise_rng.normal(0.0, SENSOR_NOISE_STD, size=img.shape).astype(np.float32)
        img = np.clip(img + noise, 0.0, 1.0)
    return img, labels, owner


def shape_mask(world: World, owner: np.ndarray, index: int) -> np.ndarray:
    return owner == index


def box_hundredths(mask: np.ndarray, size: int) -> str:
    """Inclusive pixel box of a mask, each edge mapped to floor(p*100/size)."""
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise ValueError("empty mask has no box")
    x1, x2 = int(xs.min() * 100 // size), int(xs.max() * 100 // size)
    y1, y2 = int(ys.min() * 100 // size), int(ys.max() * 100 // size)
    return f"[{x1},{y1},{x2},{y2}]"


def parse_box(text: str):
    m = _BOX_RE.match(text)
    if not m:
        raise ValueError(f"not a box string: {text!r}")
    x1, y1, x2, y2 = (int(g) for g in m.groups())
    if not (0 <= x1 <= x2 <= 99 and 0 <= y1 <= y2 <= 99):
        raise ValueError(f"box out of range: {text!r}")
    return x1, y1, x2, y2


def caption_text(world: World) -> str:
    if not world.shapes:
        return "an empty scene"
    parts = [f"{COLOR_NAMES[sh.color]} {SHAPE_NAMES[sh.kind]}" for sh in world.shapes]
    return ", ".join(parts)


def _unique_shapes(world: World):
    """Shapes whose (color, kind) pair occurs exactly once."""
    seen = {}
    for i, sh in enumerate(world.shapes):
        seen.setdefault((sh.color, sh.kind), []).append(i)
    return [idxs[0] for key, idxs in sorted(seen.items()) if len(idxs) == 1]


def dominant_color(world: World, owner: np.ndarray) -> str:
    counts = np.zeros(len(COLOR_NAMES), dtype=np.int64)
    for i, sh in enumerate(world.shapes):
        counts[sh.color] += int((owner == i).sum())
    return COLOR_NAMES[int(np.argmax(counts))]


_CAPTION_QUERIES = ("describe the scene.", "what do you see?", "list the objects.")


def cell_content(world: World, row: int, col: int) -> str:
    """What occupies a grid cell: '<color> <shape>' or 'nothing'."""
    grid = world.size // world.cell
    target = row * grid + col
    for sh in world.shapes:
        if sh.cell == target:
            return f"{COLOR_NAMES[sh.color]} {SHAPE_NAMES[sh.kind]}"
    return "nothing"


def make_example(source: str, index: int, task: str, base_seed,
                 size: int = 32, mode: str = "optical",
                 min_shapes: int = 0, max_shapes: int = 4,
                 cell: int = 8) -> RawExample:
    """Deterministic instruction triple; unsatisfiable asks force a reroll."""
    if task not in TASKS and task not in ("vqa_count", "vqa_color", "vqa_cell"):
        raise ValueError(f"unknown task {task!r}")
    need_shape = task in ("grounding", "classification", "vqa_color")
    lo = max(min_shapes, 1) if need_shape else min_shapes
    for salt in range(64):
        rng = make_rng(base_seed, "world", source, index, salt)
        world = generate_world(rng, size=size, cell=cell, min_shapes=lo,
                               max_shapes=max_shapes, mode=mode)
        img, labels, owner = render(world, noise_rng=make_rng(base_seed, "noise", source, index, salt))
        if task == "caption":
            q = _CAPTION_QUERIES[int(rng.integers(0, len(_CAPTION_QUERIES)))]
            return RawExample(img, q, caption_text(world), source, "caption")
        if task in ("vqa", "vqa_count"):
            kind = int(rng.integers(0, 3))
            count = sum(1 for sh in world.shapes if sh.kind == kind)
            q = f"how many {SHAPE_NAMES[kind]}s?"
            return RawExample(img, q, str(count), source, "vqa")
        if task == "vqa_cell":
            grid = world.size // world.cell
            row = int(rng.integers(0, grid))
            col = int(rng.integers(0, grid))
            q = f"what is in row {row}, column {col}?"
            return RawExample(img, q, cell_content(world, row, col), source, "vqa")
        if task == "vqa_color":
            kinds = [k for k in range(3) if sum(sh.kind == k for sh in world.shapes) == 1]
            if not kinds:
                continue
            kind = kinds[int(rng.integers(0, len(kinds)))]
            sh = next(s for s in world.shapes if s.kind == kind)
            q = f"what color is the {SHAPE_NAMES[kind]}?"
            return RawExample(img, q, COLOR_NAMES[sh.color], source, "vqa")
        if task == "grounding":
            uniq = _unique_shapes(world)
            uniq = [i for i in uniq if np.any(owner == i)]
            if not uniq:
                continue
            i = uniq[int(rng.integers(0, len(uniq)))]
            sh = world.shapes[i]
            q = f"where is the {COLOR_NAMES[sh.color]} {SHAPE_NAMES[sh.kind]}?"
            return RawExample(img, q, box_hundredths(owner == i, size), source, "grounding")
        if task == "classification":
            if not world.shapes or not np.any(owner >= 0):
                continue
            return RawExample(img, "what is the dominant color?",
                              dominant_color(world, owner), source, "classification")
    raise RuntimeError(f"could not satisfy task {task!r} after 64 rerolls")


def seg_example(index: int, base_seed, size: int = 32, mode: str = "optical",
                min_shapes: int = 1, max_shapes: int = 4, cell: int = 16):
    """(image, per-pixel class labels) pair for downstream segmentation.

    Downstream scenes default to large shapes (16px cells): interior patches
    are solid color, so the shape class is only decidable from context.
    """
    rng = make_rng(base_seed, "seg-world", index)
    world = generate_world(rng, size=size, cell=cell, min_shapes=min_shapes,
                           max_shapes=max_shapes, mode=mode)
    img, labels, _ = render(world, noise_rng=make_rng(base_seed, "seg-noise", index))
    return img, labels


# text alphabet every template can emit; the tokenizer vocabulary is built
# from this so it never depends on which examples were generated
TEMPLATE_CORPUS = (
    "abcdefghijklmnopqrstuvwxyz0123456789 ,.?[]"
)
