"""Vision-language pipeline: project, position-encode, drop, assemble, loss.

The ordering contract is fixed: visual tokens are projected into the LM
width, positional encodings are added, and only then may the token-drop
regularizer remove image rows, so surviving rows keep their original
positional information. Image rows occupy positional slots [0, N) and text
rows [N, N + max_text_len), so the two streams never collide in the table.

Supervision follows the instruction-tuning convention: the loss is taken
over response tokens (plus the closing <eos>) only; image rows, the <bos>
frame and the query carry IGNORE targets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from . import tokenizer as tok
from . import vit as vit_mod
from .blocks import linear_params, param, take_rows, trunc_normal
from .lm import IGNORE, LmConfig, forward_logits, init_lm_params
from .streams import make_rng
from .vit import VisualTokens, VitConfig, grid_tokens, init_vit_params


class VrlConfigError(ValueError):
    pass


@dataclass(frozen=True)
class VrlConfig:
    drop_ratio: float
    stream_seed: int = 0
    enabled: bool = True

    def __post_init__(self):
        if not (0.0 <= self.drop_ratio < 1.0):
            raise VrlConfigError(
                f"drop_ratio must lie in [0, 1), got {self.drop_ratio}"
            )


@dataclass
class DropPlan:
    kept_indices: np.ndarray  # strictly increasing subset of [0, N)
    original_length: int
    ratio: float
    stream_labels: tuple


@dataclass
class ProjectedTokens:
    tokens: T.Tensor  # [B, N, model_dim] or [N, model_dim]
    position_ids: np.ndarray


@dataclass
class AssembledSequence:
    rows: T.Tensor  # image rows then text rows
    targets: np.ndarray  # IGNORE except over the response region
    position_ids: np.ndarray
    image_len: int


def kept_count(n: int, ratio: float) -> int:
    """ceil((1-r)*n), guarding against float fuzz for decimal ratios."""
    return int(math.ceil(round((1.0 - ratio) * n, 9)))


def draw_drop_plan(n: int, cfg: VrlConfig, step: int = 0, example: int = 0) -> DropPlan:
    """Uniform size-preserving subset of [0, n), order preserved."""
    if n < 1:
        raise T.DimensionError("cannot drop from an empty token sequence")
    labels = (cfg.stream_seed, "vrl", step, example)
    if not cfg.enabled or cfg.drop_ratio == 0.0:
        kept = np.arange(n)
    else:
        rng = make_rng(*labels)
        k = kept_count(n, cfg.drop_ratio)
        kept = np.sort(rng.choice(n, size=k, replace=False))
    return DropPlan(kept_indices=kept, original_length=n,
                    ratio=cfg.drop_ratio if cfg.enabled else 0.0,
                    stream_labels=labels)


def vrl_drop(rows: T.Tensor, position_ids: np.ndarray, cfg: VrlConfig,
             step: int = 0, example: int = 0):
    """Drop image rows per a fresh plan; rows must already carry PE."""
    n = rows.shape[0]
    plan = draw_drop_plan(n, cfg, step=step, example=example)
    kept = plan.kept_indices
    out = take_rows(T.reshape(rows, (1,) + rows.shape), kept[None, :])
    out = T.reshape(out, (len(kept), rows.shape[1]))
    return out, position_ids[kept], plan


def project(v: VisualTokens, params: dict) -> ProjectedTokens:
    """Two-layer MLP (ReLU between) from encoder width to LM width."""
    x = v.tokens
    h = T.relu(T.add(T.matmul(x, params["proj.fc1.w"]), params["proj.fc1.b"]))
    out = T.add(T.matmul(h, params["proj.fc2.w"]), params["proj.fc2.b"])
    return ProjectedTokens(tokens=out, position_ids=v.position_index.copy())


def add_positional(rows: T.Tensor, position_ids: np.ndarray, pe_table: T.Tensor) -> T.Tensor:
    ids = np.asarray(position_ids)
    if ids.size and (ids.min() < 0 or ids.max() >= pe_table.shape[0]):
        raise T.DimensionError("position id out of range for the PE table")
    return T.add(rows, T.embedding(pe_table, ids))


def assemble(img_rows: T.Tensor, img_position_ids: np.ndarray,
             text_rows: T.Tensor, text_position_ids: np.ndarray,
             text_targets: np.ndarray) -> AssembledSequence:
    """Concatenate [image ; text]; image rows always get IGNORE targets."""
    if text_rows.shape[0] == 0:
        raise T.DegenerateBatchError("empty text stream")
    text_targets = np.asarray(text_targets)
    if np.all(text_targets == IGNORE):
        raise T.DegenerateBatchError("no supervised positions (empty response)")
    rows = T.concat(img_rows, text_rows, axis=0)
    targets = np.concatenate([np.full(img_rows.shape[0], IGNORE, dtype=np.int64),
                              text_targets.astype(np.int64)])
    position_ids = np.concatenate([np.asarray(img_position_ids),
                                   np.asarray(text_position_ids)])
    return AssembledSequence(rows=rows, targets=targets,
                             position_ids=position_ids, image_len=img_rows.shape[0])


def tokenize_pair(vocab: tok.Vocabulary, query: str, response: str):
    """Token stream [<bos>] Q R [<eos>] as (input_ids, next-token targets)."""
    q_ids = vocab.encode(query)
    r_ids = vocab.encode(response)
    if not r_ids:
        raise T.DegenerateBatchError("empty response")
    stream = [tok.BOS] + q_ids + r_ids + [tok.EOS]
    inputs = stream[:-1]
    targets = [stream[i + 1] if i >= len(q_ids) else IGNORE for i in range(len(inputs))]
    return np.asarray(inputs, dtype=np.int64), np.asarray(targets, dtype=np.int64)


# ---------------------------------------------------------------------------
# whole-model bundle

@dataclass
class VlmModel:
    vocab: tok.Vocabulary
    vit_cfg: VitConfig
    lm_cfg: LmConfig
    image_hw: tuple
    proj_hidden: int
    max_text_len: int
    params: dict = field(repr=False)

    @property
    def n_img_tokens(self) -> int:
        return grid_tokens(self.image_hw[0], self.image_hw[1], self.vit_cfg.patch_size)

    def text_position_ids(self, length: int) -> np.ndarray:
        return self.n_img_tokens + np.arange(length)

    def dtype(self):
        return self.params["vit.patch_embed.w"].dtype


def init_vlm(vocab: tok.Vocabulary, vit_cfg: VitConfig, lm_cfg: LmConfig,
             image_hw, proj_hidden: int, max_text_len: int, seed,
             dtype=np.float32) -> VlmModel:
    if lm_cfg.vocab_size != vocab.size:
        raise ValueError("lm vocab_size must match the tokenizer vocabulary")
    params = {}
    params.update(init_vit_params(vit_cfg, image_hw, seed, dtype))
    rng = make_rng(seed, "init", "proj")
    params.update(linear_params(rng, "proj.fc1", vit_cfg.embed_dim, proj_hidden, dtype))
    params.update(linear_params(rng, "proj.fc2", proj_hidden, lm_cfg.model_dim, dtype))
    n_img = grid_tokens(image_hw[0], image_hw[1], vit_cfg.patch_size)
    pe_rng = make_rng(seed, "init", "pe")
    params["pe.table"] = param(
        trunc_normal(pe_rng, (n_img + max_text_len, lm_cfg.model_dim), dtype=dtype), dtype)
    params.update(init_lm_params(lm_cfg, seed, dtype))
    return VlmModel(vocab=vocab, vit_cfg=vit_cfg, lm_cfg=lm_cfg, image_hw=tuple(image_hw),
                    proj_hidden=proj_hidden, max_text_len=max_text_len, params=params)


def prepare_text_batch(model: VlmModel, examples):
    """Tokenize and right-pad a batch of (query, response) pairs."""
    pairs = [tokenize_pair(model.vocab, ex.query, ex.response) for ex in examples]
    longest = max(len(ids) for ids, _ in pairs)
    if longest > model.max_text_len:
        raise T.DimensionError(
            f"text stream of {longest} tokens exceeds max_text_len {model.max_text_len}"
        )
    b = len(pairs)
    ids = np.full((b, longest), tok.PAD, dtype=np.int64)
    targets = np.full((b, longest), IGNORE, dtype=np.int64)
    for i, (inp, tgt) in enumerate(pairs):
        ids[i, : len(inp)] = inp
        targets[i, : len(tgt)] = tgt
    return ids, targets


def batch_loss(model: VlmModel, examples, vrl: VrlConfig | None, step: int = 0) -> T.Tensor:
    """Mean NLL over supervised positions across the batch.

    With ``vrl`` enabled each example gets a fresh drop plan keyed by
    (stream seed, step, example index); with ``vrl`` None or ratio 0 the
    image rows pass through untouched and the result is the plain
    instruction-tuning loss.
    """
    images = np.stack([ex.image for ex in examples]).astype(model.dtype(), copy=False)
    text_ids, text_targets = prepare_text_batch(model, examples)
    b = len(examples)

    visual = vit_mod.encode(images, model.params, model.vit_cfg)
    projected = project(visual, model.params)
    img_rows = add_positional(projected.tokens, projected.position_ids, model.params["pe.table"])

    n = model.n_img_tokens
    if vrl is not None and vrl.enabled and vrl.drop_ratio > 0.0:
        plans = [draw_drop_plan(n, vrl, step=step, example=i) for i in range(b)]
        idx = np.stack([p.kept_indices for p in plans])
        img_rows = take_rows(img_rows, idx)
    t_len = text_ids.shape[1]
    text_rows = T.embedding(model.params["lm.embed"], text_ids)
    text_rows = add_positional(text_rows, model.text_position_ids(t_len)[None, :],
                               model.params["pe.table"])
    rows = T.concat(img_rows, text_rows, axis=1)
    targets = np.concatenate(
        [np.full((b, img_rows.shape[1]), IGNORE, dtype=np.int64), text_targets], axis=1)
    if np.all(targets == IGNORE):
        raise T.DegenerateBatchError("batch has no supervised positions")
    logits = forward_logits(rows, model.params, model.lm_cfg)
    mask = targets == IGNORE
    safe_targets = np.where(mask, 0, targets)
    return T.cross_entropy(logits, safe_targets, ignore_mask=mask)


def sft_loss(model: VlmModel, examples, step: int = 0) -> T.Tensor:
    return batch_loss(model, examples, vrl=None, step=step)


def vrl_loss(model: VlmModel, examples, vrl: VrlConfig, step: int = 0) -> T.Tensor:
    return batch_loss(model, examples, vrl=vrl, step=step)
