"""Shared transformer plumbing: parameter init and pre-LN blocks.

Both the vision encoder and the language decoder are stacks of these blocks;
they differ only in the causal flag and in what surrounds the stack.
"""

import numpy as np
from scipy.special import erfinv

from . import tensor as T

_PHI_LO = 0.022750131948179195  # Phi(-2)
_PHI_HI = 0.9772498680518208  # Phi(+2)


def trunc_normal(rng, shape, std=0.02, dtype=np.float32):
    """Normal(0, std) truncated to +-2 std via inverse-CDF sampling."""
    u = _PHI_LO + rng.random(shape) * (_PHI_HI - _PHI_LO)
    return (np.sqrt(2.0) * erfinv(2.0 * u - 1.0) * std).astype(dtype)


def param(data, dtype=np.float32):
    return T.Tensor(np.asarray(data, dtype=dtype), requires_grad=True)


def linear_params(rng, prefix, d_in, d_out, dtype):
    return {
        f"{prefix}.w": param(trunc_normal(rng, (d_in, d_out), dtype=dtype), dtype),
        f"{prefix}.b": param(np.zeros(d_out), dtype),
    }


def layernorm_params(prefix, dim, dtype):
    return {
        f"{prefix}.g": param(np.ones(dim), dtype),
        f"{prefix}.b": param(np.zeros(dim), dtype),
    }


def block_params(rng, prefix, dim, dtype):
    p = {}
    p.update(layernorm_params(f"{prefix}.ln1", dim, dtype))
    for name in ("wq", "wk", "wv", "wo"):
        p.update(linear_params(rng, f"{prefix}.attn.{name[1]}", dim, dim, dtype))
    p.update(layernorm_params(f"{prefix}.ln2", dim, dtype))
    p.update(linear_params(rng, f"{prefix}.mlp.fc1", dim, 4 * dim, dtype))
    p.update(linear_params(rng, f"{prefix}.mlp.fc2", 4 * dim, dim, dtype))
    return p


def linear(x, params, prefix):
    return T.add(T.matmul(x, params[f"{prefix}.w"]), params[f"{prefix}.b"])


def _split_heads(x, heads):
    b, t, d = x.shape
    x = T.reshape(x, (b, t, heads, d // heads))
    return T.transpose(x, (0, 2, 1, 3))


def _merge_heads(x):
    b, h, t, dh = x.shape
    return T.reshape(T.transpose(x, (0, 2, 1, 3)), (b, t, h * dh))


def multi_head_attention(x, params, prefix, heads, causal):
    q = _split_heads(linear(x, params, f"{prefix}.q"), heads)
    k = _split_heads(linear(x, params, f"{prefix}.k"), heads)
    v = _split_heads(linear(x, params, f"{prefix}.v"), heads)
    o = _merge_heads(T.attention(q, k, v, causal=causal))
    return linear(o, params, f"{prefix}.o")


def block_forward(x, params, prefix, heads, causal):
    h = T.layernorm(x, params[f"{prefix}.ln1.g"], params[f"{prefix}.ln1.b"])
    x = T.add(x, multi_head_attention(h, params, f"{prefix}.attn", heads, causal))
    h = T.layernorm(x, params[f"{prefix}.ln2.g"], params[f"{prefix}.ln2.b"])
    h = linear(h, params, f"{prefix}.mlp.fc1")
    h = T.gelu(h)
    h = linear(h, params, f"{prefix}.mlp.fc2")
    return T.add(x, h)


def take_rows(x, idx):
    """Gather rows from a [B, N, D] tensor with per-batch indices [B, K]."""
    b, n, d = x.shape
    idx = np.asarray(idx)
    if idx.ndim == 1:
        idx = np.broadcast_to(idx, (b, idx.shape[0]))
    flat = T.reshape(x, (b * n, d))
    offsets = (np.arange(b) * n)[:, None]
    return T.embedding(flat, idx + offsets)
