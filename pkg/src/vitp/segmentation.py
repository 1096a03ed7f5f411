"""Downstream transfer: per-patch segmentation head over encoder tokens.

The head is a linear per-patch classifier trained with cross-entropy on
patch-majority labels; evaluation paints each patch's argmax over its pixel
square (nearest-neighbor upsampling) and scores per-pixel mIoU pooled over
the evaluation split.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from . import vit as vit_mod
from .blocks import linear_params
from .optim import adamw_step, clip_global_norm, cosine_lr, init_optimizer_state
from .streams import make_rng
from .synthworld import seg_example
from .vit import VitConfig

NUM_CLASSES = 4  # background + square/disk/triangle

# downstream scenes cycle through render modes so every pretraining
# capability (second modality, general breadth) is exercised at eval time
MODE_CYCLE = ("optical", "sar", "optical", "general", "optical",
              "sar", "optical", "general", "optical", "sar")


@dataclass
class EvalReport:
    metric: str
    value: float
    per_class: dict
    seed: int
    config_digest: str
    excluded: tuple = ()


@dataclass
class SegDataset:
    images: np.ndarray  # [M, S, S, 3]
    labels: np.ndarray  # [M, S, S]


def make_seg_split(seed, count: int, size: int = 32, split: str = "train") -> SegDataset:
    images, labels = [], []
    for i in range(count):
        mode = MODE_CYCLE[i % len(MODE_CYCLE)]
        img, lab = seg_example(i, base_seed=(seed, "seg", split), size=size,
                               mode=mode, min_shapes=1, max_shapes=4)
        images.append(img)
        labels.append(lab)
    return SegDataset(images=np.stack(images), labels=np.stack(labels))


def patch_majority_labels(labels: np.ndarray, patch: int) -> np.ndarray:
    """Per-patch majority class, ties resolved toward the lower class id."""
    single = labels.ndim == 2
    labs = labels[None] if single else labels
    b, h, w = labs.shape
    gh, gw = h // patch, w // patch
    cells = labs.reshape(b, gh, patch, gw, patch).transpose(0, 1, 3, 2, 4)
    cells = cells.reshape(b, gh * gw, patch * patch)
    onehot = np.eye(NUM_CLASSES, dtype=np.int64)[cells]  # [b, n, p*p, C]
    counts = onehot.sum(axis=2)
    out = counts.argmax(axis=2)
    return out[0] if single else out


def upsample_patch_predictions(pred: np.ndarray, size: int, patch: int) -> np.ndarray:
    grid = size // patch
    single = pred.ndim == 1
    p = pred[None] if single else pred
    img = p.reshape(-1, grid, grid).repeat(patch, axis=1).repeat(patch, axis=2)
    return img[0] if single else img


def evaluate_miou(pred_masks: np.ndarray, gt_masks: np.ndarray,
                  num_classes: int = NUM_CLASSES, exclude=()):
    """Pooled per-class IoU; classes with an empty union are skipped."""
    pred = np.asarray(pred_masks)
    gt = np.asarray(gt_masks)
    if pred.shape != gt.shape:
        raise T.DimensionError("prediction and ground-truth shapes differ")
    per_class = {}
    for c in range(num_classes):
        if c in exclude:
            continue
        p = pred == c
        g = gt == c
        union = int(np.logical_or(p, g).sum())
        if union == 0:
            continue
        inter = int(np.logical_and(p, g).sum())
        per_class[c] = inter / union
    if not per_class:
        raise T.DegenerateBatchError("no class has a non-empty union")
    return per_class, float(np.mean(list(per_class.values())))


def head_logits(backbone_params: dict, vit_cfg: VitConfig, head_params: dict,
                images: np.ndarray) -> T.Tensor:
    tokens = vit_mod.encode(images, backbone_params, vit_cfg).tokens
    return T.add(T.matmul(tokens, head_params["head.w"]), head_params["head.b"])


def predict_pixels(backbone_params, vit_cfg, head_params, images: np.ndarray) -> np.ndarray:
    logits = head_logits(backbone_params, vit_cfg, head_params, images)
    patch_preds = logits.data.argmax(axis=-1)
    return upsample_patch_predictions(patch_preds, images.shape[1], vit_cfg.patch_size)


def init_head(embed_dim: int, seed, dtype=np.float32) -> dict:
    rng = make_rng(seed, "init", "seg-head")
    return linear_params(rng, "head", embed_dim, NUM_CLASSES, dtype)


@dataclass
class FinetuneConfig:
    steps: int = 500
    batch_size: int = 8
    head_lr: float = 5e-3
    backbone_lr: float = 3e-4
    warmup_fraction: float = 0.05
    weight_decay: float = 0.0
    clip_norm: float = 1.0
    freeze_backbone: bool = False
    seed: int = 0

    def digest(self, extra: str = "") -> str:
        text = repr(self) + extra
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


def finetune_segmentation(backbone_params: dict, vit_cfg: VitConfig,
                          train: SegDataset, eval_set: SegDataset,
                          cfg: FinetuneConfig):
    """Train the head (plus the backbone unless frozen); returns
    (head params, EvalReport on the held-out split)."""
    dtype = backbone_params["vit.patch_embed.w"].dtype
    head = init_head(vit_cfg.embed_dim, cfg.seed, dtype)
    groups = [(head, cfg.head_lr, init_optimizer_state(head))]
    if not cfg.freeze_backbone:
        groups.append((backbone_params, cfg.backbone_lr,
                       init_optimizer_state(backbone_params)))

    patch_labels = patch_majority_labels(train.labels, vit_cfg.patch_size)
    present = set(np.unique(train.labels))
    absent = sorted(set(range(NUM_CLASSES)) - present)
    if absent:
        warnings.warn(f"classes absent from the train split: {absent}; "
                      "excluded from mIoU")

    n = train.images.shape[0]
    for step in range(cfg.steps):
        rng = make_rng(cfg.seed, "seg-batch", step)
        idx = rng.integers(0, n, size=min(cfg.batch_size, n))
        images = train.images[idx].astype(dtype, copy=False)
        targets = patch_labels[idx]
        with T.GradTape() as tape:
            logits = head_logits(backbone_params, vit_cfg, head, images)
            loss = T.cross_entropy(logits, targets)
        grads = tape.backward(loss)
        for group_params, base_lr, opt in groups:
            by_name = {name: grads.get(p) for name, p in group_params.items()}
            by_name = clip_global_norm(by_name, cfg.clip_norm)
            lr = cosine_lr(step, base_lr, cfg.steps, cfg.warmup_fraction)
            adamw_step(group_params, by_name, opt, lr, weight_decay=cfg.weight_decay)

    report = evaluate_head(backbone_params, vit_cfg, head, eval_set, cfg,
                           exclude=tuple(absent))
    return head, report


def evaluate_head(backbone_params, vit_cfg, head_params, eval_set: SegDataset,
                  cfg: FinetuneConfig, exclude=()) -> EvalReport:
    dtype = backbone_params["vit.patch_embed.w"].dtype
    preds = predict_pixels(backbone_params, vit_cfg, head_params,
                           eval_set.images.astype(dtype, copy=False))
    per_class, miou = evaluate_miou(preds, eval_set.labels, exclude=exclude)
    return EvalReport(metric="mIoU", value=miou, per_class=per_class,
                      seed=cfg.seed, config_digest=cfg.digest(),
                      excluded=tuple(exclude))
