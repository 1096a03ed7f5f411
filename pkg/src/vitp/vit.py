"""Vision transformer encoder over non-overlapping image patches.

A [CLS] row participates in attention internally but is stripped from the
token sequence handed onward; only patch tokens carry the spatial content
the rest of the pipeline manipulates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .blocks import block_forward, block_params, layernorm_params, linear_params, param, take_rows, trunc_normal
from .streams import make_rng


@dataclass(frozen=True)
class VitConfig:
    patch_size: int = 8
    embed_dim: int = 64
    depth: int = 2
    heads: int = 4
    include_cls: bool = True

    def __post_init__(self):
        if self.embed_dim % self.heads != 0:
            raise ValueError("embed_dim must be divisible by heads")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")


@dataclass
class VisualTokens:
    tokens: T.Tensor  # [B, N, embed_dim] or [N, embed_dim]
    position_index: np.ndarray  # grid index per token, unique and sorted
    had_cls: bool


def grid_tokens(height: int, width: int, patch_size: int) -> int:
    if height % patch_size or width % patch_size:
        raise T.DimensionError(
            f"image {height}x{width} not divisible by patch size {patch_size}"
        )
    return (height // patch_size) * (width // patch_size)


def patchify(image: np.ndarray, patch_size: int) -> np.ndarray:
    """[H, W, 3] (or batched) -> [N, 3*p*p] rows in row-major grid order."""
    single = image.ndim == 3
    imgs = image[None] if single else image
    b, h, w, c = imgs.shape
    n = grid_tokens(h, w, patch_size)
    p = patch_size
    rows = imgs.reshape(b, h // p, p, w // p, p, c)
    rows = rows.transpose(0, 1, 3, 2, 4, 5).reshape(b, n, p * p * c)
    return rows[0] if single else rows


def unpatchify(rows: np.ndarray, height: int, width: int, patch_size: int) -> np.ndarray:
    p = patch_size
    gh, gw = height // p, width // p
    img = rows.reshape(gh, gw, p, p, 3).transpose(0, 2, 1, 3, 4)
    return img.reshape(height, width, 3)


def init_vit_params(cfg: VitConfig, image_hw, seed, dtype=np.float32) -> dict:
    h, w = image_hw
    n = grid_tokens(h, w, cfg.patch_size)
    d = cfg.embed_dim
    params = {}
    rng = make_rng(seed, "init", "vit")
    params.update(linear_params(rng, "vit.patch_embed", 3 * cfg.patch_size ** 2, d, dtype))
    n_pos = n + (1 if cfg.include_cls else 0)
    params["vit.pos"] = param(trunc_normal(rng, (n_pos, d), dtype=dtype), dtype)
    if cfg.include_cls:
        params["vit.cls"] = param(trunc_normal(rng, (1, d), dtype=dtype), dtype)
    for i in range(cfg.depth):
        params.update(block_params(rng, f"vit.blk{i}", d, dtype))
    params.update(layernorm_params("vit.ln_f", d, dtype))
    return params


def embed_patches(images: np.ndarray, params: dict, cfg: VitConfig) -> T.Tensor:
    """Patchify + linear embed, before any positional information."""
    rows = patchify(images, cfg.patch_size)
    x = T.Tensor(rows, dtype=params["vit.patch_embed.w"].dtype)
    return T.add(T.matmul(x, params["vit.patch_embed.w"]), params["vit.patch_embed.b"])


def encode(images: np.ndarray, params: dict, cfg: VitConfig) -> VisualTokens:
    """Run the backbone; returns patch tokens without the [CLS] row."""
    single = images.ndim == 3
    imgs = images[None] if single else images
    b, h, w, _ = imgs.shape
    n = grid_tokens(h, w, cfg.patch_size)
    x = embed_patches(imgs, params, cfg)
    if cfg.include_cls:
        cls = T.embedding(params["vit.cls"], np.zeros((b, 1), dtype=np.int64))
        x = T.concat(cls, x, axis=1)
    pos_ids = np.arange(x.shape[1])
    x = T.add(x, T.embedding(params["vit.pos"], pos_ids))
    for i in range(cfg.depth):
        x = block_forward(x, params, f"vit.blk{i}", cfg.heads, causal=False)
    x = T.layernorm(x, params["vit.ln_f.g"], params["vit.ln_f.b"])
    if cfg.include_cls:
        x = take_rows(x, np.arange(1, n + 1))
    tokens = T.reshape(x, (n, cfg.embed_dim)) if single else x
    return VisualTokens(tokens=tokens, position_index=np.arange(n), had_cls=cfg.include_cls)
