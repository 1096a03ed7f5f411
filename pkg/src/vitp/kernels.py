"""Hot numeric kernels, each in a numba and a pure-numpy variant.

Every kernel is registered in ``IMPLS`` as ``{"numpy": fn, "numba": fn}`` so
the benchmark and the parity tests can reach both variants; the module-level
names are bound to the active backend picked by :mod:`vitp.backend`.

Matrix products are deliberately absent: those go straight to BLAS through
``np.matmul`` and gain nothing from numba.
"""

import math

import numpy as np

from .backend import use_numba

if use_numba():
    from numba import njit
else:  # pragma: no cover - exercised via VITP_NUMBA=0 runs
    njit = None

_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


# ---------------------------------------------------------------------------
# layernorm over the last axis, rows pre-flattened to [R, D]

def _layernorm_fwd_np(x, gamma, beta, eps):
    mean = x.mean(axis=1)
    var = x.var(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[:, None]) * rstd[:, None]
    y = xhat * gamma[None, :] + beta[None, :]
    return y.astype(x.dtype, copy=False), mean.astype(x.dtype, copy=False), rstd.astype(x.dtype, copy=False)


def _layernorm_bwd_np(x, gamma, mean, rstd, dy):
    xhat = (x - mean[:, None]) * rstd[:, None]
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma[None, :]
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = rstd[:, None] * (dxhat - m1 - xhat * m2)
    return dx.astype(x.dtype, copy=False), dgamma.astype(gamma.dtype, copy=False), dbeta.astype(gamma.dtype, copy=False)


# ---------------------------------------------------------------------------
# gelu (tanh form), flat arrays

def _gelu_fwd_np(x):
    """Returns (gelu(x), tanh(inner)); the tanh is reused by the backward."""
    inner = _GELU_C * (x + _GELU_A * x * x * x)
    t = np.tanh(inner)
    return (0.5 * x * (1.0 + t)).astype(x.dtype, copy=False), t


def _gelu_bwd_np(x, t, dy):
    dinner = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
    grad = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
    return (dy * grad).astype(x.dtype, copy=False)


# ---------------------------------------------------------------------------
# softmax over rows [M, N], and causal softmax over score blocks [M, T, T]

def _softmax_rows_fwd_np(s):
    m = s.max(axis=1, keepdims=True)
    e = np.exp(s - m)
    return (e / e.sum(axis=1, keepdims=True)).astype(s.dtype, copy=False)


def _softmax_rows_bwd_np(p, dp):
    inner = (dp * p).sum(axis=1, keepdims=True)
    return (p * (dp - inner)).astype(p.dtype, copy=False)


def _causal_softmax_fwd_np(s):
    t = s.shape[1]
    mask = np.tril(np.ones((t, t), dtype=bool))
    masked = np.where(mask[None, :, :], s, -np.inf)
    m = masked.max(axis=2, keepdims=True)
    e = np.exp(masked - m)
    return (e / e.sum(axis=2, keepdims=True)).astype(s.dtype, copy=False)


def _causal_softmax_bwd_np(p, dp):
    inner = (dp * p).sum(axis=2, keepdims=True)
    return (p * (dp - inner)).astype(p.dtype, copy=False)


# ---------------------------------------------------------------------------
# embedding gradient scatter-accumulate

def _embedding_grad_np(ids, dy, out):
    np.add.at(out, ids, dy)


# ---------------------------------------------------------------------------
# shape rasterizer: types 0=square, 1=disk, 2=triangle; pixel coordinate is
# its integer index; labels are class ids (type + 1), owner is shape index.

def _raster_np(types, cxs, cys, halfs, colors, height, width, bg):
    img = np.full((height, width, 3), bg, dtype=np.float32)
    labels = np.zeros((height, width), dtype=np.int64)
    owner = np.full((height, width), -1, dtype=np.int64)
    py, px = np.mgrid[0:height, 0:width].astype(np.float64)
    for s in range(types.shape[0]):
        cx, cy, h = cxs[s], cys[s], halfs[s]
        if types[s] == 0:
            inside = (np.abs(px - cx) <= h) & (np.abs(py - cy) <= h)
        elif types[s] == 1:
            inside = (px - cx) ** 2 + (py - cy) ** 2 <= h * h
        else:
            c1 = -h * (py - cy + h) - 2.0 * h * (px - cx)
            c2 = 2.0 * h * (py - cy - h)
            c3 = -h * (py - cy - h) + 2.0 * h * (px - cx - h)
            inside = (c1 <= 0.0) & (c2 <= 0.0) & (c3 <= 0.0)
        img[inside] = colors[s]
        labels[inside] = types[s] + 1
        owner[inside] = s
    return img, labels, owner


# ---------------------------------------------------------------------------
# separable blur with edge-clamped taps, [H, W, 3] images

def _sep_blur_np(img, k):
    height, width, _ = img.shape
    taps = k.shape[0]
    r = taps // 2
    tmp = np.zeros((height, width, 3), dtype=np.float64)
    for j in range(taps):
        cols = np.clip(np.arange(width) + j - r, 0, width - 1)
        tmp += k[j] * img[:, cols, :]
    out = np.zeros((height, width, 3), dtype=np.float64)
    for j in range(taps):
        rows = np.clip(np.arange(height) + j - r, 0, height - 1)
        out += k[j] * tmp[rows, :, :]
    return out.astype(np.float32)


_NUMPY_IMPLS = {
    "layernorm_fwd": _layernorm_fwd_np,
    "layernorm_bwd": _layernorm_bwd_np,
    "gelu_fwd": _gelu_fwd_np,
    "gelu_bwd": _gelu_bwd_np,
    "softmax_rows_fwd": _softmax_rows_fwd_np,
    "softmax_rows_bwd": _softmax_rows_bwd_np,
    "causal_softmax_fwd": _causal_softmax_fwd_np,
    "causal_softmax_bwd": _causal_softmax_bwd_np,
    "embedding_grad": _embedding_grad_np,
    "raster": _raster_np,
    "sep_blur": _sep_blur_np,
}

_NUMBA_IMPLS = {}

if use_numba():

    @njit(cache=True)
    def _layernorm_fwd_nb(x, gamma, beta, eps):
        rows, dim = x.shape
        y = np.empty_like(x)
        mean = np.empty(rows, dtype=x.dtype)
        rstd = np.empty(rows, dtype=x.dtype)
        for i in range(rows):
            acc = 0.0
            for j in range(dim):
                acc += x[i, j]
            mu = acc / dim
            acc = 0.0
            for j in range(dim):
                d = x[i, j] - mu
                acc += d * d
            rs = 1.0 / math.sqrt(acc / dim + eps)
            mean[i] = mu
            rstd[i] = rs
            for j in range(dim):
                y[i, j] = (x[i, j] - mu) * rs * gamma[j] + beta[j]
        return y, mean, rstd

    @njit(cache=True)
    def _layernorm_bwd_nb(x, gamma, mean, rstd, dy):
        rows, dim = x.shape
        dx = np.empty_like(x)
        dgamma = np.zeros(dim, dtype=gamma.dtype)
        dbeta = np.zeros(dim, dtype=gamma.dtype)
        for i in range(rows):
            mu = mean[i]
            rs = rstd[i]
            m1 = 0.0
            m2 = 0.0
            for j in range(dim):
                xhat = (x[i, j] - mu) * rs
                dxh = dy[i, j] * gamma[j]
                m1 += dxh
                m2 += dxh * xhat
                dgamma[j] += dy[i, j] * xhat
                dbeta[j] += dy[i, j]
            m1 /= dim
            m2 /= dim
            for j in range(dim):
                xhat = (x[i, j] - mu) * rs
                dxh = dy[i, j] * gamma[j]
                dx[i, j] = rs * (dxh - m1 - xhat * m2)
        return dx, dgamma, dbeta

    @njit(cache=True)
    def _gelu_fwd_nb(x):
        out = np.empty_like(x)
        t = np.empty_like(x)
        for i in range(x.shape[0]):
            v = x[i]
            inner = _GELU_C * (v + _GELU_A * v * v * v)
            t[i] = math.tanh(inner)
            out[i] = 0.5 * v * (1.0 + t[i])
        return out, t

    @njit(cache=True)
    def _gelu_bwd_nb(x, t, dy):
        out = np.empty_like(x)
        for i in range(x.shape[0]):
            v = x[i]
            ti = t[i]
            dinner = _GELU_C * (1.0 + 3.0 * _GELU_A * v * v)
            out[i] = dy[i] * (0.5 * (1.0 + ti) + 0.5 * v * (1.0 - ti * ti) * dinner)
        return out

    @njit(cache=True)
    def _softmax_rows_fwd_nb(s):
        rows, n = s.shape
        p = np.empty_like(s)
        for i in range(rows):
            m = s[i, 0]
            for j in range(1, n):
                if s[i, j] > m:
                    m = s[i, j]
            acc = 0.0
            for j in range(n):
                e = math.exp(s[i, j] - m)
                p[i, j] = e
                acc += e
            for j in range(n):
                p[i, j] /= acc
        return p

    @njit(cache=True)
    def _softmax_rows_bwd_nb(p, dp):
        rows, n = p.shape
        ds = np.empty_like(p)
        for i in range(rows):
            inner = 0.0
            for j in range(n):
                inner += dp[i, j] * p[i, j]
            for j in range(n):
                ds[i, j] = p[i, j] * (dp[i, j] - inner)
        return ds

    @njit(cache=True)
    def _causal_softmax_fwd_nb(s):
        blocks, t, _ = s.shape
        p = np.zeros_like(s)
        for b in range(blocks):
            for i in range(t):
                m = s[b, i, 0]
                for j in range(1, i + 1):
                    if s[b, i, j] > m:
                        m = s[b, i, j]
                acc = 0.0
                for j in range(i + 1):
                    e = math.exp(s[b, i, j] - m)
                    p[b, i, j] = e
                    acc += e
                for j in range(i + 1):
                    p[b, i, j] /= acc
        return p

    @njit(cache=True)
    def _causal_softmax_bwd_nb(p, dp):
        blocks, t, _ = p.shape
        ds = np.empty_like(p)
        for b in range(blocks):
            for i in range(t):
                inner = 0.0
                for j in range(t):
                    inner += dp[b, i, j] * p[b, i, j]
                for j in range(t):
                    ds[b, i, j] = p[b, i, j] * (dp[b, i, j] - inner)
        return ds

    @njit(cache=True)
    def _embedding_grad_nb(ids, dy, out):
        for i in range(ids.shape[0]):
            row = ids[i]
            for j in range(dy.shape[1]):
                out[row, j] += dy[i, j]

    @njit(cache=True)
    def _raster_nb(types, cxs, cys, halfs, colors, height, width, bg):
        img = np.full((height, width, 3), bg, dtype=np.float32)
        labels = np.zeros((height, width), dtype=np.int64)
        owner = np.full((height, width), -1, dtype=np.int64)
        for s in range(types.shape[0]):
            cx, cy, h = cxs[s], cys[s], halfs[s]
            y0 = max(0, int(math.floor(cy - h)))
            y1 = min(height - 1, int(math.ceil(cy + h)))
            x0 = max(0, int(math.floor(cx - h)))
            x1 = min(width - 1, int(math.ceil(cx + h)))
            for py in range(y0, y1 + 1):
                for px in range(x0, x1 + 1):
                    fx = float(px)
                    fy = float(py)
                    if types[s] == 0:
                        inside = abs(fx - cx) <= h and abs(fy - cy) <= h
                    elif types[s] == 1:
                        inside = (fx - cx) ** 2 + (fy - cy) ** 2 <= h * h
                    else:
                        c1 = -h * (fy - cy + h) - 2.0 * h * (fx - cx)
                        c2 = 2.0 * h * (fy - cy - h)
                        c3 = -h * (fy - cy - h) + 2.0 * h * (fx - cx - h)
                        inside = c1 <= 0.0 and c2 <= 0.0 and c3 <= 0.0
                    if inside:
                        img[py, px, 0] = colors[s, 0]
                        img[py, px, 1] = colors[s, 1]
                        img[py, px, 2] = colors[s, 2]
                        labels[py, px] = types[s] + 1
                        owner[py, px] = s
        return img, labels, owner

    @njit(cache=True)
    def _sep_blur_nb(img, k):
        height, width, _ = img.shape
        taps = k.shape[0]
        r = taps // 2
        tmp = np.zeros((height, width, 3), dtype=np.float64)
        for y in range(height):
            for x in range(width):
                for j in range(taps):
                    c = min(max(x + j - r, 0), width - 1)
                    for ch in range(3):
                        tmp[y, x, ch] += k[j] * img[y, c, ch]
        out = np.zeros((height, width, 3), dtype=np.float64)
        for y in range(height):
            for x in range(width):
                for j in range(taps):
                    rr = min(max(y + j - r, 0), height - 1)
                    for ch in range(3):
                        out[y, x, ch] += k[j] * tmp[rr, x, ch]
        return out.astype(np.float32)

    _NUMBA_IMPLS = {
        "layernorm_fwd": _layernorm_fwd_nb,
        "layernorm_bwd": _layernorm_bwd_nb,
        "gelu_fwd": _gelu_fwd_nb,
        "gelu_bwd": _gelu_bwd_nb,
        "softmax_rows_fwd": _softmax_rows_fwd_nb,
        "softmax_rows_bwd": _softmax_rows_bwd_nb,
        "causal_softmax_fwd": _causal_softmax_fwd_nb,
        "causal_softmax_bwd": _causal_softmax_bwd_nb,
        "embedding_grad": _embedding_grad_nb,
        "raster": _raster_nb,
        "sep_blur": _sep_blur_nb,
    }

IMPLS = {
    name: {"numpy": fn, "numba": _NUMBA_IMPLS.get(name)}
    for name, fn in _NUMPY_IMPLS.items()
}

# numpy's SIMD transcendentals beat scalar jit loops for these even when the
# numba backend is on; `vitp bench` reproduces the measurement
_NUMPY_PREFERRED = {"gelu_fwd", "gelu_bwd", "softmax_rows_fwd"}


def active_variant(name: str) -> str:
    if not use_numba() or name in _NUMPY_PREFERRED:
        return "numpy"
    return "numba"


def _pick(name):
    return IMPLS[name][active_variant(name)]


layernorm_fwd = _pick("layernorm_fwd")
layernorm_bwd = _pick("layernorm_bwd")
gelu_fwd = _pick("gelu_fwd")
gelu_bwd = _pick("gelu_bwd")
softmax_rows_fwd = _pick("softmax_rows_fwd")
softmax_rows_bwd = _pick("softmax_rows_bwd")
causal_softmax_fwd = _pick("causal_softmax_fwd")
causal_softmax_bwd = _pick("causal_softmax_bwd")
embedding_grad = _pick("embedding_grad")
raster = _pick("raster")
sep_blur = _pick("sep_blur")
