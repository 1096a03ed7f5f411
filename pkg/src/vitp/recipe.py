"""Dataset recipes: named entries with sizes, sample rates, and tags.

An entry's mixture weight is size x rate (expected occurrences per mixture
epoch), realized as with-replacement categorical sampling. Tags carry both
the task capabilities an entry trains (caption/vqa/grounding/classification/
general) and, where relevant, a modality marker ('sar'); entries without a
modality tag count as optical.

The four curation principles are checked mechanically: (1) at least three
distinct sources, (2) all downstream modalities covered, (3) grounding data
present when downstream needs localization, (4) general-domain probability
mass inside a configured band.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .streams import make_rng
from .synthworld import RawExample, make_example

TASK_TAGS = ("caption", "vqa", "grounding", "classification", "general")
MODALITY_TAGS = ("optical", "sar")


@dataclass(frozen=True)
class RecipeEntry:
    name: str
    size: int
    sample_rate: float
    tags: tuple

    def __post_init__(self):
        if self.size < 1:
            raise ValueError(f"entry {self.name}: size must be >= 1")
        if self.sample_rate < 0:
            raise ValueError(f"entry {self.name}: sample_rate must be non-negative")
        if not self.tags:
            raise ValueError(f"entry {self.name}: at least one tag required")
        for t in self.tags:
            if t not in TASK_TAGS and t not in MODALITY_TAGS:
                raise ValueError(f"entry {self.name}: unknown tag {t!r}")

    @property
    def weight(self) -> float:
        return self.size * self.sample_rate

    def modality(self) -> str:
        return "sar" if "sar" in self.tags else "optical"


@dataclass(frozen=True)
class MixtureSpec:
    entries: tuple

    def __post_init__(self):
        if not self.entries:
            raise ValueError("recipe must contain at least one entry")
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            raise ValueError("duplicate entry names in recipe")


@dataclass
class RecipeReport:
    principles: dict = field(default_factory=dict)  # 1..4 -> bool
    messages: list = field(default_factory=list)

    @property
    def all_pass(self) -> bool:
        return all(self.principles.values())


def mixture_probabilities(spec: MixtureSpec) -> np.ndarray:
    weights = np.array([e.weight for e in spec.entries], dtype=np.float64)
    total = weights.sum()
    if total <= 0:
        raise ValueError("all mixture weights are zero")
    return weights / total


def validate_recipe(spec: MixtureSpec, downstream_modalities=("optical", "sar"),
                    needs_localization: bool = True,
                    general_band=(0.01, 0.10)) -> RecipeReport:
    report = RecipeReport()
    p = mixture_probabilities(spec)

    n_sources = len({e.name for e in spec.entries})
    report.principles[1] = n_sources >= 3
    if not report.principles[1]:
        report.messages.append(f"only {n_sources} source(s); need >= 3 for scale and diversity")

    covered = {e.modality() for e in spec.entries}
    missing = [m for m in downstream_modalities if m not in covered]
    report.principles[2] = not missing
    if missing:
        report.messages.append(f"modalities not covered: {missing}")

    has_grounding = any("grounding" in e.tags for e in spec.entries)
    report.principles[3] = has_grounding or not needs_localization
    if not report.principles[3]:
        report.messages.append("downstream needs localization but no grounding entry present")

    general_mass = float(sum(pi for pi, e in zip(p, spec.entries) if "general" in e.tags))
    lo, hi = general_band
    report.principles[4] = lo <= general_mass <= hi
    if not report.principles[4]:
        report.messages.append(
            f"general-data probability mass {general_mass:.4f} outside [{lo}, {hi}]")
    return report


def sample_entry_indices(spec: MixtureSpec, rng, n: int) -> np.ndarray:
    return rng.choice(len(spec.entries), size=n, p=mixture_probabilities(spec))


def sample_batch(spec: MixtureSpec, datasets: dict, rng, batch_size: int) -> list:
    """Draw entries by probability, then a uniform example within each."""
    for e in spec.entries:
        if e.name not in datasets:
            raise KeyError(f"no dataset handle for recipe entry {e.name!r}")
    picks = sample_entry_indices(spec, rng, batch_size)
    out = []
    for d in picks:
        ds = datasets[spec.entries[d].name]
        out.append(ds[int(rng.integers(0, len(ds)))])
    return out


# ---------------------------------------------------------------------------
# manifest file format: name<TAB>size<TAB>rate<TAB>tags, '#' comments

def format_manifest(spec: MixtureSpec) -> str:
    lines = ["# name\tsize\trate\ttags"]
    for e in spec.entries:
        rate = f"{e.sample_rate:g}"
        lines.append(f"{e.name}\t{e.size}\t{rate}\t{','.join(e.tags)}")
    return "\n".join(lines) + "\n"


def parse_manifest(text: str) -> MixtureSpec:
    entries = []
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ValueError(f"manifest line {ln}: expected 4 tab-separated fields")
        name, size, rate, tags = parts
        entries.append(RecipeEntry(name=name, size=int(size), sample_rate=float(rate),
                                   tags=tuple(t for t in tags.split(",") if t)))
    return MixtureSpec(entries=tuple(entries))


def save_manifest(spec: MixtureSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_manifest(spec))


def load_manifest(path) -> MixtureSpec:
    with open(path, "r", encoding="utf-8") as f:
        return parse_manifest(f.read())


# ---------------------------------------------------------------------------
# reference composition: public remote-sensing instruction datasets

def reference_recipe() -> MixtureSpec:
    rows = [
        ("Mini-InternVL", 1394_000, 0.03, ("caption", "vqa", "general")),
        ("RSVQA", 100_000, 0.1, ("vqa",)),
        ("FIT_RS", 100_000, 0.1, ("vqa",)),
        ("GeoChat", 64_000, 2.0, ("grounding",)),
        ("VRSBench", 38_000, 5.0, ("grounding",)),
        ("RSVG", 5_500, 10.0, ("grounding",)),
        ("DIOR-RSVG", 27_000, 8.0, ("grounding",)),
        ("ISPRS_SAR", 1_500, 1.0, ("classification", "sar")),
        ("SAR_Sentinel-1+2", 16_000, 1.0, ("classification", "sar")),
        ("VHM", 223_000, 1.0, ("caption", "vqa", "classification")),
        ("LevirCCcaptions", 50_000, 0.5, ("caption",)),
        ("GAIA", 33_000, 1.0, ("caption",)),
        ("Million-AID", 920_000, 0.05, ("caption", "classification")),
    ]
    return MixtureSpec(entries=tuple(
        RecipeEntry(name=n, size=s, sample_rate=r, tags=t) for n, s, r, t in rows))


# ---------------------------------------------------------------------------
# desk-scale synthetic recipe and its backing datasets

DESK_ROWS = [
    # name, size, rate, tags, generation subtasks, mode, (min, max) shapes, cell
    ("cap-broad", 256, 1.0, ("caption",), ("caption",), "optical", (0, 4), 8),
    ("vqa-cell", 192, 1.0, ("vqa",), ("vqa_cell",), "optical", (2, 10), 8),
    ("vqa-cell-big", 256, 1.5, ("vqa",), ("vqa_cell",), "optical", (1, 4), 16),
    ("vqa-count", 160, 1.0, ("vqa",), ("vqa_count",), "optical", (1, 8), 8),
    ("vqa-color", 96, 1.0, ("vqa",), ("vqa_color",), "optical", (1, 4), 8),
    ("ground-main", 160, 1.5, ("grounding",), ("grounding",), "optical", (1, 6), 8),
    ("ground-big", 192, 2.0, ("grounding",), ("grounding",), "optical", (1, 4), 16),
    ("ground-fine", 96, 2.0, ("grounding",), ("grounding",), "optical", (1, 2), 8),
    ("cls-color", 96, 1.0, ("classification",), ("classification",), "optical", (1, 6), 8),
    ("sar-cap", 96, 1.0, ("caption", "sar"), ("caption",), "sar", (0, 4), 8),
    ("sar-cell-big", 96, 1.5, ("vqa", "sar"), ("vqa_cell",), "sar", (1, 4), 16),
    ("sar-cls", 96, 1.0, ("classification", "sar"), ("classification",), "sar", (1, 4), 16),
    ("general-mix", 64, 1.2, ("general", "caption", "vqa"), ("caption", "vqa_count"), "general", (0, 6), 8),
]


def desk_recipe() -> MixtureSpec:
    return MixtureSpec(entries=tuple(
        RecipeEntry(name=n, size=s, sample_rate=r, tags=tags)
        for n, s, r, tags, _, _, _, _ in DESK_ROWS))


class SynthDataset:
    """Lazily generated, cached pool of instruction examples for one entry."""

    def __init__(self, name: str, count: int, subtasks, mode: str,
                 shape_range, base_seed, image_size: int = 32, cell: int = 8):
        self.name = name
        self.count = count
        self.subtasks = tuple(subtasks)
        self.mode = mode
        self.shape_range = shape_range
        self.base_seed = base_seed
        self.image_size = image_size
        self.cell = cell
        self._cache = {}

    def __len__(self):
        return self.count

    def __getitem__(self, i: int) -> RawExample:
        if not 0 <= i < self.count:
            raise IndexError(i)
        ex = self._cache.get(i)
        if ex is None:
            task = self.subtasks[i % len(self.subtasks)]
            lo, hi = self.shape_range
            ex = make_example(self.name, i, task, self.base_seed,
                              size=self.image_size, mode=self.mode,
                              min_shapes=lo, max_shapes=hi, cell=self.cell)
            self._cache[i] = ex
        return ex


def desk_datasets(seed, image_size: int = 32, spec: MixtureSpec | None = None) -> dict:
    """Dataset handles for (a subset of) the desk recipe entries."""
    wanted = None if spec is None else {e.name for e in spec.entries}
    handles = {}
    for name, size, _rate, _tags, subtasks, mode, shape_range, cell in DESK_ROWS:
        if wanted is not None and name not in wanted:
            continue
        handles[name] = SynthDataset(name, size, subtasks, mode, shape_range,
                                     base_seed=seed, image_size=image_size,
                                     cell=cell)
    return handles


# ---------------------------------------------------------------------------
# example shards: length-prefixed records of (raw RGB image, Q, R, tag)

import struct


def _pack_record(ex: RawExample) -> bytes:
    img8 = np.clip(np.round(ex.image * 255.0), 0, 255).astype(np.uint8)
    h, w, _ = img8.shape
    q = ex.query.encode("utf-8")
    r = ex.response.encode("utf-8")
    tag = ex.task.encode("utf-8")
    src = ex.source.encode("utf-8")
    payload = struct.pack("<HH", h, w) + img8.tobytes()
    for blob in (q, r, tag, src):
        payload += struct.pack("<I", len(blob)) + blob
    return struct.pack("<I", len(payload)) + payload


def write_shard(path, examples) -> None:
    with open(path, "wb") as f:
        for ex in examples:
            f.write(_pack_record(ex))


def read_shard(path) -> list:
    out = []
    with open(path, "rb") as f:
        data = f.read()
    off = 0
    while off < len(data):
        if off + 4 > len(data):
            raise ValueError("truncated shard record header")
        (rec_len,) = struct.unpack_from("<I", data, off)
        off += 4
        end = off + rec_len
        if end > len(data):
            raise ValueError("truncated shard record payload")
        h, w = struct.unpack_from("<HH", data, off)
        p = off + 4
        n_img = h * w * 3
        img = np.frombuffer(data[p:p + n_img], dtype=np.uint8).reshape(h, w, 3)
        p += n_img
        fields = []
        for _ in range(4):
            (blen,) = struct.unpack_from("<I", data, p)
            p += 4
            fields.append(data[p:p + blen].decode("utf-8"))
            p += blen
        if p != end:
            raise ValueError("shard record length mismatch")
        q, r, tag, src = fields
        out.append(RawExample(image=(img.astype(np.float32) / 255.0),
                              query=q, response=r, source=src, task=tag))
        off = end
    return out
