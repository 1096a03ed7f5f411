"""Pretraining loop: sample, assemble, drop, loss, AdamW, checkpoint.

All randomness is drawn from counter-based streams keyed by (seed, purpose,
step), so a run is a pure function of (seed, config, recipe); resuming from
a checkpoint continues the identical trajectory bit for bit.

Desk defaults train a ~x1000-smaller model than the reference setup, so the
base learning rate is scaled up accordingly; the reference optimizer values
stay available as the `paper-scale` preset.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, fields, replace

import numpy as np

from . import checkpoint as ckpt
from . import recipe as rc
from .lm import LmConfig
from .optim import OptimizerState, adamw_step, clip_global_norm, cosine_lr, init_optimizer_state
from .pipeline import VlmModel, VrlConfig, batch_loss, init_vlm
from .streams import make_rng
from .synthworld import TEMPLATE_CORPUS
from .tensor import DivergenceError, GradTape
from .tokenizer import build_vocab
from .vit import VitConfig, grid_tokens


@dataclass(frozen=True)
class TrainConfig:
    seed: int
    base_lr: float = 3e-4
    total_steps: int = 2000
    warmup_fraction: float = 0.03
    batch_size: int = 16
    weight_decay: float = 0.01
    clip_norm: float = 1.0
    drop_ratio: float = 0.75
    vrl_enabled: bool = True
    checkpoint_every: int = 500
    image_size: int = 32
    patch_size: int = 4
    vit_dim: int = 64
    vit_depth: int = 2
    vit_heads: int = 4
    lm_dim: int = 64
    lm_depth: int = 2
    lm_heads: int = 4
    proj_hidden: int = 128
    max_text_len: int = 144
    dtype: str = "float32"
    recipe: str = "desk"

    def __post_init__(self):
        if not 0 <= self.warmup_fraction < 1:
            raise ValueError("warmup_fraction must lie in [0, 1)")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        VrlConfig(drop_ratio=self.drop_ratio)  # validates the ratio domain


PRESETS = {
    "desk-default": {},
    "paper-scale": {"base_lr": 2e-5, "total_steps": 8000, "batch_size": 128,
                    "warmup_fraction": 0.0},
}


def preset_config(name: str, seed: int, **overrides) -> TrainConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    kwargs = dict(PRESETS[name])
    kwargs.update(overrides)
    return TrainConfig(seed=seed, **kwargs)


_FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def config_to_text(cfg: TrainConfig) -> str:
    lines = []
    for f in fields(TrainConfig):
        lines.append(f"{f.name}={getattr(cfg, f.name)}")
    return "\n".join(lines) + "\n"


def config_from_text(text: str, require_seed: bool = True) -> TrainConfig:
    """Parse `key=value` lines; unknown keys are rejected."""
    values = {}
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config line {ln}: expected key=value")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _FIELD_TYPES:
            raise ValueError(f"config line {ln}: unknown key {key!r}")
        kind = _FIELD_TYPES[key]
        if kind in ("int", int):
            values[key] = int(val)
        elif kind in ("float", float):
            values[key] = float(val)
        elif kind in ("bool", bool):
            values[key] = val.lower() in ("1", "true", "yes")
        else:
            values[key] = val
    if "seed" not in values:
        if require_seed:
            raise ValueError("config must define a seed (no wall-clock seeding)")
        values["seed"] = 0
    return TrainConfig(**values)


def config_digest(cfg: TrainConfig, extra: str = "") -> str:
    text = config_to_text(cfg) + extra
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


def config_from_meta(meta: dict) -> TrainConfig:
    """Recover the TrainConfig stored in checkpoint meta."""
    return config_from_text(meta["config"].replace(";", "\n"))


def build_model(cfg: TrainConfig) -> VlmModel:
    vocab = build_vocab(TEMPLATE_CORPUS)
    n_img = grid_tokens(cfg.image_size, cfg.image_size, cfg.patch_size)
    vit_cfg = VitConfig(patch_size=cfg.patch_size, embed_dim=cfg.vit_dim,
                        depth=cfg.vit_depth, heads=cfg.vit_heads)
    lm_cfg = LmConfig(vocab_size=vocab.size, model_dim=cfg.lm_dim,
                      depth=cfg.lm_depth, heads=cfg.lm_heads,
                      max_sequence_len=n_img + cfg.max_text_len)
    return init_vlm(vocab, vit_cfg, lm_cfg,
                    image_hw=(cfg.image_size, cfg.image_size),
                    proj_hidden=cfg.proj_hidden, max_text_len=cfg.max_text_len,
                    seed=cfg.seed, dtype=np.dtype(cfg.dtype))


def load_recipe_and_datasets(cfg: TrainConfig):
    if cfg.recipe == "desk":
        spec = rc.desk_recipe()
        datasets = rc.desk_datasets(seed=cfg.seed, image_size=cfg.image_size)
    else:
        spec = rc.load_manifest(cfg.recipe)
        datasets = rc.desk_datasets(seed=cfg.seed, image_size=cfg.image_size, spec=spec)
    return spec, datasets


@dataclass
class PretrainResult:
    model: VlmModel
    opt_state: OptimizerState
    curve: list  # (step, lr, loss)
    final_step: int


def write_curve(path, curve) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("step,lr,loss\n")
        for step, lr, loss in curve:
            f.write(f"{step},{lr!r},{loss!r}\n")


def read_curve_rows(path, below_step=None) -> list:
    if not os.path.exists(path):
        return []
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        next(f)  # header
        for line in f:
            s, lr, loss = line.rstrip("\n").split(",")
            step = int(s)
            if below_step is None or step < below_step:
                rows.append((step, float(lr), float(loss)))
    return rows


def _assign_loaded(model: VlmModel, arrays: dict) -> None:
    names = set(model.params)
    if set(arrays) != names:
        missing = names - set(arrays)
        extra = set(arrays) - names
        raise ckpt.CheckpointFormatError(
            f"checkpoint params mismatch (missing {sorted(missing)}, extra {sorted(extra)})")
    for name, arr in arrays.items():
        p = model.params[name]
        if arr.shape != p.data.shape:
            raise ckpt.CheckpointFormatError(
                f"shape mismatch for {name}: {arr.shape} vs {p.data.shape}")
        p.data[...] = arr.astype(p.data.dtype, copy=False)


def pretrain(cfg: TrainConfig, spec=None, datasets=None, curve_path=None,
             checkpoint_path=None, resume=None, log_every: int = 0,
             stop_after: int | None = None) -> PretrainResult:
    """Run the instruction-tuning loop for cfg.total_steps optimizer steps.

    ``stop_after`` interrupts the run early (the schedule still spans
    cfg.total_steps), modelling a checkpoint-and-resume split.
    """
    if spec is None or datasets is None:
        spec, datasets = load_recipe_and_datasets(cfg)
    model = build_model(cfg)
    opt_state = init_optimizer_state(model.params)
    start_step = 0
    curve = []
    if resume is not None:
        arrays, opt_m, opt_v, opt_step, meta = ckpt.load_checkpoint(resume)
        _assign_loaded(model, arrays)
        for name in opt_state.m:
            opt_state.m[name][...] = opt_m[name]
            opt_state.v[name][...] = opt_v[name]
        opt_state.step = opt_step
        start_step = int(meta["next_step"])
        if curve_path is not None:
            curve = read_curve_rows(curve_path, below_step=start_step)

    vrl = VrlConfig(drop_ratio=cfg.drop_ratio, stream_seed=cfg.seed,
                    enabled=cfg.vrl_enabled)
    digest = config_digest(cfg)

    def save(path, next_step, extra_meta=None):
        meta = {"next_step": next_step, "seed": cfg.seed, "config_digest": digest,
                "total_steps": cfg.total_steps,
                "config": config_to_text(cfg).strip().replace("\n", ";")}
        if extra_meta:
            meta.update(extra_meta)
        ckpt.save_checkpoint(path, model.params, opt_state, meta)

    end_step = cfg.total_steps if stop_after is None else min(cfg.total_steps, stop_after)
    for step in range(start_step, end_step):
        rng_data = make_rng(cfg.seed, "data", step)
        batch = rc.sample_batch(spec, datasets, rng_data, cfg.batch_size)
        with GradTape() as tape:
            loss = batch_loss(model, batch, vrl, step=step)
        loss_val = float(loss.data)
        if not np.isfinite(loss_val):
            if checkpoint_path is not None:
                save(checkpoint_path, step, {"aborted": "divergence"})
            if curve_path is not None:
                write_curve(curve_path, curve)
            raise DivergenceError(f"non-finite loss at step {step}")
        grads = tape.backward(loss)
        by_name = {name: grads.get(p) for name, p in model.params.items()}
        by_name = clip_global_norm(by_name, cfg.clip_norm)
        lr = cosine_lr(step, cfg.base_lr, cfg.total_steps, cfg.warmup_fraction)
        adamw_step(model.params, by_name, opt_state, lr,
                   weight_decay=cfg.weight_decay)
        curve.append((step, lr, loss_val))
        if log_every and (step % log_every == 0 or step == cfg.total_steps - 1):
            print(f"step {step} lr {lr:.3e} loss {loss_val:.4f}", flush=True)
        if checkpoint_path is not None and cfg.checkpoint_every > 0 \
                and (step + 1) % cfg.checkpoint_every == 0:
            save(checkpoint_path, step + 1)
            if curve_path is not None:
                write_curve(curve_path, curve)

    if checkpoint_path is not None:
        save(checkpoint_path, end_step)
    if curve_path is not None:
        write_curve(curve_path, curve)
    return PretrainResult(model=model, opt_state=opt_state, curve=curve,
                          final_step=end_step)


def replace_config(cfg: TrainConfig, **kwargs) -> TrainConfig:
    return replace(cfg, **kwargs)
