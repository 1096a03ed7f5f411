"""Image corruptions with three severity levels per kind.

Each transform is deterministic given its rng, clamps to [0, 1], and its
distortion energy grows with severity. The severity parameter tables are
plain data so tests (and the identity check) can swap in custom levels,
including zero-magnitude ones.
"""

from __future__ import annotations

import numpy as np

from .kernels import sep_blur

KINDS = ("brightness_contrast", "gaussian_noise", "gaussian_blur",
         "salt_pepper", "data_gaps", "translate")

DEFAULT_SEVERITY = {
    "brightness_contrast": {1: (0.08, 1.15), 2: (0.16, 1.35), 3: (0.28, 1.60)},
    "gaussian_noise": {1: 0.04, 2: 0.09, 3: 0.16},
    "gaussian_blur": {1: 0.6, 2: 1.1, 3: 1.8},
    "salt_pepper": {1: 0.02, 2: 0.05, 3: 0.10},
    "data_gaps": {1: 0.20, 2: 0.35, 3: 0.50},
    "translate": {1: 0.10, 2: 0.20, 3: 0.35},
}


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    if sigma <= 0:
        return np.array([1.0])
    radius = max(1, int(np.ceil(3.0 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def corrupt(image: np.ndarray, kind: str, severity: int, rng,
            severity_params: dict | None = None) -> np.ndarray:
    """Apply one corruption; returns a fresh float32 image in [0, 1]."""
    if kind not in KINDS:
        raise ValueError(f"unknown corruption kind {kind!r}")
    table = DEFAULT_SEVERITY if severity_params is None else severity_params
    if severity not in table[kind]:
        raise ValueError(f"severity {severity} not configured for {kind}")
    p = table[kind][severity]
    img = np.asarray(image, dtype=np.float32)
    h, w, _ = img.shape

    if kind == "brightness_contrast":
        shift, contrast = p
        if shift == 0.0 and contrast == 1.0:
            return img.copy()
        sign = 1.0 if rng.random() < 0.5 else -1.0
        out = (img - 0.5) * contrast + 0.5 + sign * shift
    elif kind == "gaussian_noise":
        out = img + rng.normal(0.0, p, size=img.shape).astype(np.float32)
    elif kind == "gaussian_blur":
        out = sep_blur(img, gaussian_kernel1d(p))
    elif kind == "salt_pepper":
        n_flip = int(round(p * h * w))
        out = img.copy()
        if n_flip:
            flat = rng.choice(h * w, size=n_flip, replace=False)
            vals = (rng.random(n_flip) < 0.5).astype(np.float32)
            ys, xs = np.divmod(flat, w)
            out[ys, xs, :] = vals[:, None]
    elif kind == "data_gaps":
        cy = int(rng.integers(0, h))
        cx = int(rng.integers(0, w))
        side = int(round(p * min(h, w)))
        out = img.copy()
        if side:
            y0, y1 = max(0, cy - side // 2), min(h, cy - side // 2 + side)
            x0, x1 = max(0, cx - side // 2), min(w, cx - side // 2 + side)
            out[y0:y1, x0:x1, :] = 0.0
    else:  # translate
        sy = 1 if rng.random() < 0.5 else -1
        sx = 1 if rng.random() < 0.5 else -1
        dy = sy * int(round(p * h))
        dx = sx * int(round(p * w))
        out = np.zeros_like(img)
        ys0, ys1 = max(0, dy), min(h, h + dy)
        xs0, xs1 = max(0, dx), min(w, w + dx)
        out[ys0:ys1, xs0:xs1, :] = img[ys0 - dy:ys1 - dy, xs0 - dx:xs1 - dx, :]

    return np.clip(out, 0.0, 1.0).astype(np.float32)


def mse(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2))
