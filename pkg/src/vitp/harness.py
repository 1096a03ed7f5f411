"""Evaluation harnesses: robustness, data efficiency, ablation sweeps.

Each sweep runs its arms (optionally in parallel, capped by VITP_THREADS),
collects `arm,seed,metric,value` rows, and writes result CSVs atomically.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import corruption as co
from . import recipe as rc
from .blocks import param
from .segmentation import (FinetuneConfig, SegDataset, evaluate_head,
                           finetune_segmentation, make_seg_split)
from .streams import make_rng
from .trainer import TrainConfig, pretrain
from .vit import VitConfig, init_vit_params


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("VITP_THREADS", "1")))
    except ValueError:
        return 1


def _map_arms(fn, items):
    workers = worker_count()
    if workers == 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def write_rows_csv(path, rows) -> None:
    """Atomic write of `arm,seed,metric,value` rows."""
    tmp = str(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write("arm,seed,metric,value\n")
        for arm, seed, metric, value in rows:
            f.write(f"{arm},{seed},{metric},{value!r}\n")
    os.replace(tmp, path)


def write_rows_svg(path, rows, title="") -> None:
    """Minimal static line chart of per-arm mean metric values."""
    arms = []
    for arm, _seed, _metric, _value in rows:
        if arm not in arms:
            arms.append(arm)
    means = [float(np.mean([v for a, _s, _m, v in rows if a == arm]))
             for arm in arms]
    w, h, pad = 480, 240, 48
    lo, hi = min(means), max(means)
    span = (hi - lo) or 1.0
    pts = []
    for i, v in enumerate(means):
        x = pad + i * (w - 2 * pad) / max(len(means) - 1, 1)
        y = h - pad - (v - lo) / span * (h - 2 * pad)
        pts.append((x, y))
    poly = " ".join(f"{x:.1f},{y:.1f}" for x, y in pts)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">',
             f'<text x="{w/2}" y="18" text-anchor="middle" font-size="13">{title}</text>',
             f'<polyline points="{poly}" fill="none" stroke="#2266cc" stroke-width="2"/>']
    for (x, y), arm, v in zip(pts, arms, means):
        parts.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="3" fill="#2266cc"/>')
        parts.append(f'<text x="{x:.1f}" y="{h - pad + 16}" text-anchor="middle" '
                     f'font-size="10">{arm}</text>')
        parts.append(f'<text x="{x:.1f}" y="{y - 8:.1f}" text-anchor="middle" '
                     f'font-size="10">{v:.3f}</text>')
    parts.append("</svg>")
    tmp = str(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write("\n".join(parts) + "\n")
    os.replace(tmp, path)


def clone_params(params: dict) -> dict:
    return {n: param(p.data.copy(), p.data.dtype) for n, p in params.items()}


# ---------------------------------------------------------------------------
# transfer building blocks

def pretrain_backbone(cfg: TrainConfig, spec=None, datasets=None):
    """Pretrain and return (vision params, VitConfig)."""
    res = pretrain(cfg, spec=spec, datasets=datasets)
    bb = {n: p for n, p in res.model.params.items() if n.startswith("vit.")}
    return bb, res.model.vit_cfg


def random_backbone(cfg: TrainConfig, seed):
    vit_cfg = VitConfig(patch_size=cfg.patch_size, embed_dim=cfg.vit_dim,
                        depth=cfg.vit_depth, heads=cfg.vit_heads)
    return init_vit_params(vit_cfg, (cfg.image_size, cfg.image_size),
                           seed=(seed, "random-arm")), vit_cfg


def transfer_metric(backbone: dict, vit_cfg: VitConfig, train: SegDataset,
                    eval_set: SegDataset, ft: FinetuneConfig):
    head, report = finetune_segmentation(clone_params(backbone), vit_cfg,
                                         train, eval_set, ft)
    return head, report


# ---------------------------------------------------------------------------
# robustness (clean vs corrupted evaluation)

@dataclass
class RobustnessReport:
    clean: float
    per_kind: dict
    average: float
    delta_tp: float
    seed: int


def corrupt_dataset(eval_set: SegDataset, kind: str, severity: int, seed,
                    severity_params=None) -> SegDataset:
    images = np.stack([
        co.corrupt(eval_set.images[i], kind, severity,
                   make_rng(seed, "corrupt", kind, severity, i),
                   severity_params=severity_params)
        for i in range(eval_set.images.shape[0])
    ])
    return SegDataset(images=images, labels=eval_set.labels)


def robustness_eval(backbone: dict, vit_cfg: VitConfig, head: dict,
                    eval_set: SegDataset, kinds=co.KINDS, severities=(1, 2, 3),
                    seed=0, severity_params=None,
                    ft: FinetuneConfig | None = None) -> RobustnessReport:
    """Clean metric, per-corruption means, and the clean-minus-average drop."""
    for kind in kinds:
        if kind not in co.KINDS:
            raise ValueError(f"unknown corruption kind {kind!r}")
    ft = ft or FinetuneConfig(seed=seed)
    clean = evaluate_head(backbone, vit_cfg, head, eval_set, ft).value
    per_kind = {}
    for kind in kinds:
        vals = []
        for sev in severities:
            ds = corrupt_dataset(eval_set, kind, sev, seed, severity_params)
            vals.append(evaluate_head(backbone, vit_cfg, head, ds, ft).value)
        per_kind[kind] = float(np.mean(vals))
    average = float(np.mean(list(per_kind.values()))) if per_kind else clean
    return RobustnessReport(clean=clean, per_kind=per_kind, average=average,
                            delta_tp=clean - average, seed=seed)


# ---------------------------------------------------------------------------
# data efficiency

def fraction_subset(train: SegDataset, fraction: float, seed) -> SegDataset:
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction {fraction} outside (0, 1]")
    n = train.images.shape[0]
    k = int(round(fraction * n))
    if k < 1:
        raise ValueError(f"fraction {fraction} of {n} examples yields no data")
    order = make_rng(seed, "data-efficiency-subset").permutation(n)
    idx = np.sort(order[:k])
    return SegDataset(images=train.images[idx], labels=train.labels[idx])


def data_efficiency_sweep(arms: dict, vit_cfg: VitConfig, train: SegDataset,
                          eval_set: SegDataset, fractions, seeds,
                          ft_base: FinetuneConfig | None = None):
    """Rows of (arm, seed, fraction, metric, drop-from-full) per arm/seed."""
    ft_base = ft_base or FinetuneConfig()
    rows = []
    for arm_name, backbone in arms.items():
        for seed in seeds:
            full_value = None
            for fraction in fractions:
                sub = fraction_subset(train, fraction, seed)
                ft = replace(ft_base, seed=seed)
                _, report = transfer_metric(backbone, vit_cfg, sub, eval_set, ft)
                if fraction == 1.0:
                    full_value = report.value
                drop = None if full_value is None else full_value - report.value
                rows.append({"arm": arm_name, "seed": seed, "fraction": fraction,
                             "value": report.value, "drop": drop})
    return rows


# ---------------------------------------------------------------------------
# recipe ablation arms

RECIPE_ARMS = ("full", "wo_diversity", "wo_second_modality", "wo_grounding",
               "wo_general")
_DIVERSITY_ENTRIES = ("cap-broad", "vqa-color", "ground-fine")


def recipe_arm(spec: rc.MixtureSpec, arm: str) -> rc.MixtureSpec:
    """Filtered recipe for one ablation arm; weights renormalize implicitly."""
    if arm == "full":
        return spec
    if arm == "wo_diversity":
        keep = [e for e in spec.entries if e.name not in _DIVERSITY_ENTRIES]
    elif arm == "wo_second_modality":
        keep = [e for e in spec.entries if "sar" not in e.tags]
    elif arm == "wo_grounding":
        keep = [e for e in spec.entries if "grounding" not in e.tags]
    elif arm == "wo_general":
        keep = [e for e in spec.entries if "general" not in e.tags]
    else:
        raise ValueError(f"unknown recipe arm {arm!r}")
    return rc.MixtureSpec(entries=tuple(keep))


# ---------------------------------------------------------------------------
# ablation sweeps (one CSV per sweep)

@dataclass
class SweepContext:
    base_cfg: TrainConfig
    train: SegDataset
    eval_set: SegDataset
    ft: FinetuneConfig = field(default_factory=FinetuneConfig)

    def arm_metric(self, cfg: TrainConfig, seed: int, spec=None, datasets=None) -> float:
        cfg = replace(cfg, seed=seed)
        backbone, vit_cfg = pretrain_backbone(cfg, spec=spec, datasets=datasets)
        _, report = transfer_metric(backbone, vit_cfg, self.train, self.eval_set,
                                    replace(self.ft, seed=seed))
        return report.value


def sweep_vrl(ctx: SweepContext, out_csv, ratios=(0.0, 0.25, 0.5, 0.75, 0.9),
              seeds=(0,)):
    def one(job):
        r, seed = job
        cfg = replace(ctx.base_cfg, drop_ratio=r, vrl_enabled=r > 0)
        return (f"r={r}", seed, "mIoU", ctx.arm_metric(cfg, seed))

    rows = _map_arms(one, [(r, s) for r in ratios for s in seeds])
    write_rows_csv(out_csv, rows)
    return rows


def sweep_steps(ctx: SweepContext, out_csv, step_grid=(200, 800, 2000), seeds=(0,)):
    def one(job):
        steps, seed = job
        cfg = replace(ctx.base_cfg, total_steps=steps)
        return (f"steps={steps}", seed, "mIoU", ctx.arm_metric(cfg, seed))

    rows = _map_arms(one, [(n, s) for n in step_grid for s in seeds])
    write_rows_csv(out_csv, rows)
    return rows


def sweep_lm_size(ctx: SweepContext, out_csv, depths=(2, 4, 8), seeds=(0,)):
    def one(job):
        depth, seed = job
        cfg = replace(ctx.base_cfg, lm_depth=depth)
        return (f"lm_depth={depth}", seed, "mIoU", ctx.arm_metric(cfg, seed))

    rows = _map_arms(one, [(d, s) for d in depths for s in seeds])
    write_rows_csv(out_csv, rows)
    return rows


def sweep_recipe(ctx: SweepContext, out_csv, arms=RECIPE_ARMS, seeds=(0,)):
    def one(job):
        arm, seed = job
        cfg = replace(ctx.base_cfg, seed=seed)
        spec = recipe_arm(rc.desk_recipe(), arm)
        datasets = rc.desk_datasets(seed=cfg.seed, image_size=cfg.image_size,
                                    spec=spec)
        return (arm, seed, "mIoU", ctx.arm_metric(cfg, seed, spec=spec,
                                                  datasets=datasets))

    rows = _map_arms(one, [(a, s) for a in arms for s in seeds])
    write_rows_csv(out_csv, rows)
    return rows
