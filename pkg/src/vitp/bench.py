"""Benchmark the numba and numpy variants of every hot kernel.

Run via `vitp bench`. The results justify the per-kernel defaults in
:mod:`vitp.kernels`: on numpy builds with SIMD transcendentals the
vectorized numpy gelu beats a scalar numba loop by an order of magnitude,
while the fused layernorm/softmax/scatter/raster loops favor numba.
"""

from __future__ import annotations

import time

import numpy as np

from . import kernels
from .streams import make_rng


def _timeit(fn, args, repeats=30):
    fn(*args)  # warmup / jit compile
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - t0) / repeats


def _cases(dtype=np.float32):
    rng = make_rng("bench")
    rows = rng.standard_normal((1120, 256)).astype(dtype)
    gamma = rng.standard_normal(256).astype(dtype)
    beta = rng.standard_normal(256).astype(dtype)
    dy = rng.standard_normal((1120, 256)).astype(dtype)
    _, mean, rstd = kernels.IMPLS["layernorm_fwd"]["numpy"](rows, gamma, beta, 1e-5)
    flat = rng.standard_normal(290_000).astype(dtype)
    _, tanh_inner = kernels.IMPLS["gelu_fwd"]["numpy"](flat)
    sm = rng.standard_normal((1120, 90)).astype(dtype)
    smp = kernels.IMPLS["softmax_rows_fwd"]["numpy"](sm)
    sc = rng.standard_normal((64, 90, 90)).astype(dtype)
    scp = kernels.IMPLS["causal_softmax_fwd"]["numpy"](sc)
    ids = rng.integers(0, 64, size=4096).astype(np.int64)
    edy = rng.standard_normal((4096, 64)).astype(dtype)
    types = np.array([0, 1, 2, 0], dtype=np.int64)
    cxs = np.array([5.5, 20.0, 12.0, 26.0])
    cys = np.array([5.5, 6.0, 24.0, 26.0])
    halfs = np.array([2.5, 3.0, 3.5, 2.8])
    colors = rng.random((4, 3)).astype(np.float32)
    img = rng.random((64, 64, 3)).astype(np.float32)
    blur_k = np.array([0.06, 0.24, 0.4, 0.24, 0.06])

    def emb_args():
        return (ids, edy, np.zeros((64, 64), dtype=dtype))

    return [
        ("layernorm_fwd", (rows, gamma, beta, 1e-5)),
        ("layernorm_bwd", (rows, gamma, mean, rstd, dy)),
        ("gelu_fwd", (flat,)),
        ("gelu_bwd", (flat, tanh_inner, flat)),
        ("softmax_rows_fwd", (sm,)),
        ("softmax_rows_bwd", (smp, sm)),
        ("causal_softmax_fwd", (sc,)),
        ("causal_softmax_bwd", (scp, sc)),
        ("embedding_grad", emb_args),
        ("raster", (types, cxs, cys, halfs, colors, 64, 64, np.float32(0.12))),
        ("sep_blur", (img, blur_k)),
    ]


def run_bench(repeats: int = 30, out=print):
    out(f"{'kernel':<22}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}{'active':>10}")
    results = {}
    for name, args in _cases():
        impls = kernels.IMPLS[name]
        times = {}
        for variant in ("numpy", "numba"):
            fn = impls[variant]
            if fn is None:
                times[variant] = None
                continue
            call_args = args() if callable(args) else args
            times[variant] = _timeit(fn, call_args, repeats) * 1000
        np_t, nb_t = times["numpy"], times["numba"]
        if nb_t is None:
            ratio = "-"
            active = "numpy"
        else:
            ratio = f"{np_t / nb_t:.2f}x"
            active = "numba" if kernels.active_variant(name) == "numba" else "numpy"
        out(f"{name:<22}{np_t:>12.4f}{(nb_t if nb_t is not None else float('nan')):>12.4f}{ratio:>10}{active:>10}")
        results[name] = times
    return results


if __name__ == "__main__":
    run_bench()
