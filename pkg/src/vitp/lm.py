"""Decoder-only autoregressive language model over pre-embedded rows.

The model consumes sequences whose rows are already embedded and
positionally encoded (image rows from the projector, text rows from the
token-embedding table it owns). The input embedding is weight-tied with the
output projection; a separate output bias remains untied.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .blocks import block_forward, block_params, layernorm_params, param, trunc_normal
from .streams import make_rng

IGNORE = -1


@dataclass(frozen=True)
class LmConfig:
    vocab_size: int
    model_dim: int = 64
    depth: int = 2
    heads: int = 4
    max_sequence_len: int = 192

    def __post_init__(self):
        if self.model_dim % self.heads != 0:
            raise ValueError("model_dim must be divisible by heads")


@dataclass
class SequenceEmbedding:
    rows: T.Tensor  # [L, model_dim] or [B, L, model_dim]
    targets: np.ndarray  # token id or IGNORE per row
    position_ids: np.ndarray


def init_lm_params(cfg: LmConfig, seed, dtype=np.float32) -> dict:
    rng = make_rng(seed, "init", "lm")
    params = {
        "lm.embed": param(trunc_normal(rng, (cfg.vocab_size, cfg.model_dim), dtype=dtype), dtype),
        "lm.out_bias": param(np.zeros(cfg.vocab_size), dtype),
    }
    for i in range(cfg.depth):
        params.update(block_params(rng, f"lm.blk{i}", cfg.model_dim, dtype))
    params.update(layernorm_params("lm.ln_f", cfg.model_dim, dtype))
    return params


def embed_tokens(ids, params: dict) -> T.Tensor:
    return T.embedding(params["lm.embed"], np.asarray(ids, dtype=np.int64))


def forward_logits(rows, params: dict, cfg: LmConfig) -> T.Tensor:
    """Causal forward pass; logits at t depend only on rows <= t."""
    x = rows.rows if isinstance(rows, SequenceEmbedding) else rows
    single = x.data.ndim == 2
    if single:
        x = T.reshape(x, (1,) + x.shape)
    if x.shape[1] > cfg.max_sequence_len:
        raise T.DimensionError(
            f"sequence length {x.shape[1]} exceeds max {cfg.max_sequence_len}"
        )
    for i in range(cfg.depth):
        x = block_forward(x, params, f"lm.blk{i}", cfg.heads, causal=True)
    x = T.layernorm(x, params["lm.ln_f.g"], params["lm.ln_f.b"])
    logits = T.add(T.matmul(x, T.transpose(params["lm.embed"], (1, 0))), params["lm.out_bias"])
    return T.reshape(logits, logits.shape[1:]) if single else logits


def generate_greedy(prefix: SequenceEmbedding, params: dict, cfg: LmConfig,
                    pe_table, max_new: int, eos_id: int = 2) -> list[int]:
    """Append argmax tokens until <eos> or the budget runs out."""
    if max_new < 1:
        raise ValueError("max_new must be >= 1")
    rows = prefix.rows.data
    next_pos = int(prefix.position_ids[-1]) + 1
    out = []
    for _ in range(max_new):
        logits = forward_logits(T.Tensor(rows), params, cfg)
        tok = int(np.argmax(logits.data[-1]))
        out.append(tok)
        if tok == eos_id:
            break
        new_row = params["lm.embed"].data[tok] + pe_table.data[next_pos]
        rows = np.concatenate([rows, new_row[None, :]], axis=0)
        next_pos += 1
    return out
