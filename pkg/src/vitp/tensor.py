"""Tape-based reverse-mode autodiff over dense numpy arrays.

Values are immutable once wrapped in a :class:`Tensor`; every op records a
backward closure on the innermost active :class:`GradTape`, and the backward
pass replays those records in exact reverse application order, accumulating
gradients in a dict keyed by tensor identity.

Float32 is the training dtype, float64 the testing dtype; binary ops demand
matching dtypes rather than promoting silently. An opt-in debug flag checks
every op output for NaN/Inf (tests switch it on, training leaves it off).
"""

from __future__ import annotations

import numpy as np

from . import kernels


class DimensionError(ValueError):
    """Operand shapes or ids do not satisfy an op's contract."""


class DegenerateBatchError(ValueError):
    """A loss was asked for with zero supervised positions."""


class DivergenceError(FloatingPointError):
    """A non-finite value appeared in an op output (debug mode only)."""


_DEBUG_CHECKS = False


def set_debug_checks(enabled: bool) -> None:
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(enabled)


def debug_checks_enabled() -> bool:
    return _DEBUG_CHECKS


class Tensor:
    """A dense array plus a requires_grad flag; hashable by identity."""

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


_TAPES: list["GradTape"] = []


class GradTape:
    """Ordered op record; backward visits entries in reverse order."""

    def __init__(self):
        self.entries = []  # (name, out, backward_fn)

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPES.pop()
        return False

    def backward(self, loss: Tensor, seed_grad=None) -> dict:
        """Run the tape backward from ``loss``; returns {tensor: grad}."""
        if seed_grad is None:
            if loss.data.ndim != 0:
                raise DimensionError("backward() without seed_grad needs a scalar loss")
            seed_grad = np.ones((), dtype=loss.dtype)
        grads: dict[Tensor, np.ndarray] = {loss: np.asarray(seed_grad, dtype=loss.dtype)}
        for _name, out, backward_fn in reversed(self.entries):
            gout = grads.get(out)
            if gout is None:
                continue
            for inp, ginc in backward_fn(gout):
                if not inp.requires_grad:
                    continue
                if ginc.shape != inp.data.shape:
                    raise DimensionError(
                        f"gradient shape {ginc.shape} != value shape {inp.data.shape}"
                    )
                acc = grads.get(inp)
                grads[inp] = ginc if acc is None else acc + ginc
        return grads


def _record(name, out: Tensor, inputs, backward_fn):
    if _DEBUG_CHECKS and not np.all(np.isfinite(out.data)):
        raise DivergenceError(f"non-finite values in output of {name}")
    if _TAPES and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _TAPES[-1].entries.append((name, out, backward_fn))
    return out


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _check_same_dtype(name, a: Tensor, b: Tensor):
    if a.dtype != b.dtype:
        raise TypeError(f"{name}: dtype mismatch {a.dtype} vs {b.dtype}")


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcasted gradient back down to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise

def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, dtype=a.dtype) if not isinstance(b, Tensor) else b
    _check_same_dtype("add", a, b)
    out = Tensor(a.data + b.data)

    def backward(g):
        return [(a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape))]

    return _record("add", out, (a, b), backward)


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, dtype=a.dtype) if not isinstance(b, Tensor) else b
    _check_same_dtype("mul", a, b)
    out = Tensor(a.data * b.data)

    def backward(g):
        return [
            (a, _unbroadcast(g * b.data, a.shape)),
            (b, _unbroadcast(g * a.data, b.shape)),
        ]

    return _record("mul", out, (a, b), backward)


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0))

    def backward(g):
        return [(a, g * (a.data > 0).astype(a.dtype))]

    return _record("relu", out, (a,), backward)


def gelu(a: Tensor) -> Tensor:
    flat = np.ascontiguousarray(a.data.reshape(-1))
    y, tanh_inner = kernels.gelu_fwd(flat)
    out = Tensor(y.reshape(a.shape))

    def backward(g):
        dx = kernels.gelu_bwd(flat, tanh_inner, np.ascontiguousarray(g.reshape(-1)))
        return [(a, dx.reshape(a.shape))]

    return _record("gelu", out, (a,), backward)


# ---------------------------------------------------------------------------
# shape manipulation

def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape))

    def backward(g):
        return [(a, g.reshape(a.shape))]

    return _record("reshape", out, (a,), backward)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    out = Tensor(np.transpose(a.data, axes))
    inv = np.argsort(axes)

    def backward(g):
        return [(a, np.transpose(g, inv))]

    return _record("transpose", out, (a,), backward)


def concat(a: Tensor, b: Tensor, axis: int) -> Tensor:
    _check_same_dtype("concat", a, b)
    out = Tensor(np.concatenate([a.data, b.data], axis=axis))
    split = a.shape[axis]

    def backward(g):
        ga, gb = np.split(g, [split], axis=axis)
        return [(a, ga), (b, gb)]

    return _record("concat", out, (a, b), backward)


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b)
    _check_same_dtype("matmul", a, b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError("matmul operands must be at least 2-d")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    if b.data.ndim != 2 and b.shape[:-2] != a.shape[:-2]:
        raise DimensionError(f"matmul batch dims differ: {a.shape} @ {b.shape}")

    if b.data.ndim == 2 and a.data.ndim > 2:
        # collapse batch dims into one GEMM
        lead = a.shape[:-1]
        a2 = np.ascontiguousarray(a.data.reshape(-1, a.shape[-1]))
        out = Tensor(np.matmul(a2, b.data).reshape(lead + (b.shape[-1],)))

        def backward(g):
            g2 = np.ascontiguousarray(g.reshape(-1, b.shape[-1]))
            da = np.matmul(g2, b.data.T).reshape(a.shape)
            db = np.matmul(a2.T, g2)
            return [(a, da), (b, db)]

        return _record("matmul", out, (a, b), backward)

    out = Tensor(np.matmul(a.data, b.data))

    def backward(g):
        da = np.matmul(g, np.swapaxes(b.data, -1, -2))
        db = np.matmul(np.swapaxes(a.data, -1, -2), g)
        if b.data.ndim == 2 and db.ndim > 2:
            db = db.sum(axis=tuple(range(db.ndim - 2)))
        return [(a, da), (b, db)]

    return _record("matmul", out, (a, b), backward)


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup ``table[ids]``; gradient scatter-adds into the table."""
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise DimensionError("embedding ids must be integers")
    if table.data.ndim != 2:
        raise DimensionError("embedding table must be 2-d")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DimensionError("embedding id out of range")
    out = Tensor(table.data[ids])
    flat_ids = np.ascontiguousarray(ids.reshape(-1).astype(np.int64))

    def backward(g):
        dt = np.zeros_like(table.data)
        kernels.embedding_grad(flat_ids, np.ascontiguousarray(g.reshape(-1, table.shape[1])), dt)
        return [(table, dt)]

    return _record("embedding", out, (table,), backward)


# ---------------------------------------------------------------------------
# normalization / softmax / attention

def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    dim = x.shape[-1]
    if gamma.shape != (dim,) or beta.shape != (dim,):
        raise DimensionError("layernorm affine params must match the last axis")
    rows = np.ascontiguousarray(x.data.reshape(-1, dim))
    y, mean, rstd = kernels.layernorm_fwd(rows, gamma.data, beta.data, eps)
    out = Tensor(y.reshape(x.shape))

    def backward(g):
        dx, dgamma, dbeta = kernels.layernorm_bwd(
            rows, gamma.data, mean, rstd, np.ascontiguousarray(g.reshape(-1, dim))
        )
        return [(x, dx.reshape(x.shape)), (gamma, dgamma), (beta, dbeta)]

    return _record("layernorm", out, (x, gamma, beta), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = axis % x.data.ndim
    if x.shape[axis] < 1:
        raise DimensionError("softmax over an empty axis")
    moved = np.moveaxis(x.data, axis, -1)
    rows = np.ascontiguousarray(moved.reshape(-1, moved.shape[-1]))
    p = kernels.softmax_rows_fwd(rows)
    out = Tensor(np.moveaxis(p.reshape(moved.shape), -1, axis))

    def backward(g):
        gm = np.ascontiguousarray(np.moveaxis(g, axis, -1).reshape(rows.shape))
        ds = kernels.softmax_rows_bwd(p, gm)
        return [(x, np.moveaxis(ds.reshape(moved.shape), -1, axis))]

    return _record("softmax", out, (x,), backward)


def attention(q: Tensor, k: Tensor, v: Tensor, causal: bool = False) -> Tensor:
    """Scaled dot-product attention over [..., T, dh] blocks."""
    _check_same_dtype("attention", q, k)
    _check_same_dtype("attention", q, v)
    if q.shape != k.shape or q.shape != v.shape:
        raise DimensionError("attention expects q, k, v of identical shape")
    if q.data.ndim < 2:
        raise DimensionError("attention operands must be at least 2-d")
    lead = q.shape[:-2]
    t, dh = q.shape[-2], q.shape[-1]
    scale = np.asarray(1.0 / np.sqrt(dh), dtype=q.dtype)
    q3 = np.ascontiguousarray(q.data.reshape(-1, t, dh))
    k3 = np.ascontiguousarray(k.data.reshape(-1, t, dh))
    v3 = np.ascontiguousarray(v.data.reshape(-1, t, dh))
    s = np.matmul(q3, np.swapaxes(k3, 1, 2)) * scale
    if causal:
        p = kernels.causal_softmax_fwd(s)
    else:
        p = kernels.softmax_rows_fwd(s.reshape(-1, t)).reshape(s.shape)
    o = np.matmul(p, v3)
    out = Tensor(o.reshape(q.shape))

    def backward(g):
        g3 = np.ascontiguousarray(g.reshape(-1, t, dh))
        dv = np.matmul(np.swapaxes(p, 1, 2), g3)
        dp = np.matmul(g3, np.swapaxes(v3, 1, 2))
        if causal:
            ds = kernels.causal_softmax_bwd(p, dp)
        else:
            ds = kernels.softmax_rows_bwd(
                p.reshape(-1, t), np.ascontiguousarray(dp.reshape(-1, t))
            ).reshape(s.shape)
        ds = ds * scale
        dq = np.matmul(ds, k3)
        dk = np.matmul(np.swapaxes(ds, 1, 2), q3)
        return [
            (q, dq.reshape(lead + (t, dh))),
            (k, dk.reshape(lead + (t, dh))),
            (v, dv.reshape(lead + (t, dh))),
        ]

    return _record("attention", out, (q, k, v), backward)


# ---------------------------------------------------------------------------
# reductions / losses

def mean(x: Tensor) -> Tensor:
    out = Tensor(np.asarray(x.data.mean(), dtype=x.dtype))
    n = x.size

    def backward(g):
        return [(x, np.broadcast_to(g / n, x.shape).astype(x.dtype, copy=False))]

    return _record("mean", out, (x,), backward)


def tsum(x: Tensor) -> Tensor:
    out = Tensor(np.asarray(x.data.sum(), dtype=x.dtype))

    def backward(g):
        return [(x, np.broadcast_to(g, x.shape).astype(x.dtype, copy=False))]

    return _record("sum", out, (x,), backward)


def cross_entropy(logits: Tensor, targets, ignore_mask=None) -> Tensor:
    """Mean negative log-likelihood over supervised positions.

    ``targets`` holds a token id per position; positions where ``ignore_mask``
    is True contribute nothing to the loss or the gradient.
    """
    vocab = logits.shape[-1]
    targets = np.asarray(targets)
    if targets.shape != logits.shape[:-1]:
        raise DimensionError("targets must match logits leading shape")
    rows = logits.data.reshape(-1, vocab)
    tflat = targets.reshape(-1).astype(np.int64)
    if ignore_mask is None:
        supervised = np.ones(tflat.shape, dtype=bool)
    else:
        supervised = ~np.asarray(ignore_mask).reshape(-1).astype(bool)
    n_sup = int(supervised.sum())
    if n_sup == 0:
        raise DegenerateBatchError("cross_entropy: every position is masked")
    tsup = tflat[supervised]
    if tsup.min() < 0 or tsup.max() >= vocab:
        raise DimensionError("target id out of vocabulary range")
    sup_rows = rows[supervised]
    m = sup_rows.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(sup_rows - m).sum(axis=1))
    picked = sup_rows[np.arange(n_sup), tsup]
    out = Tensor(np.asarray((lse - picked).sum() / n_sup, dtype=logits.dtype))

    def backward(g):
        p = np.exp(sup_rows - m)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(n_sup), tsup] -= 1.0
        dl = np.zeros_like(rows)
        dl[supervised] = p * (g / n_sup)
        return [(logits, dl.reshape(logits.shape))]

    return _record("cross_entropy", out, (logits,), backward)
