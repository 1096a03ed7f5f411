"""Central finite-difference verification of analytic gradients.

The checked function is projected to a scalar through a fixed random linear
functional so any output shape reduces to one number; the numeric side never
touches the tape, keeping the two routes independent.
"""

from dataclasses import dataclass, field

import numpy as np

from .streams import make_rng
from .tensor import GradTape, Tensor, tsum, mul


@dataclass
class GradCheckReport:
    max_rel_err: float
    per_input: list = field(default_factory=list)
    suspect_nondifferentiable: bool = False

    def __float__(self):
        return float(self.max_rel_err)


def _rel_err(analytic: float, numeric: float) -> float:
    denom = max(abs(analytic), abs(numeric), 1e-6)
    return abs(analytic - numeric) / denom


def grad_check(fn, inputs, eps: float = 5e-4, threshold: float = 1e-4,
               projection_seed: int = 0) -> GradCheckReport:
    """Compare tape gradients of ``fn(*inputs)`` against central differences.

    ``inputs`` are float64 arrays; all of them are treated as differentiable.
    Non-differentiable points are flagged in the report (error above the
    threshold with an analytic/numeric sign flip), never raised.
    """
    if not (1e-6 <= eps <= 1e-3):
        raise ValueError(f"eps {eps} outside [1e-6, 1e-3]")
    arrays = [np.asarray(x, dtype=np.float64) for x in inputs]

    probe = fn(*[Tensor(a) for a in arrays])
    proj = Tensor(make_rng("gradcheck-proj", projection_seed).standard_normal(probe.shape))

    def scalar(*tensors):
        out = fn(*tensors)
        return tsum(mul(out, proj))

    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    with GradTape() as tape:
        loss = scalar(*tensors)
    grads = tape.backward(loss)

    max_err = 0.0
    per_input = []
    suspect = False
    for idx, base in enumerate(arrays):
        analytic = grads.get(tensors[idx])
        if analytic is None:
            analytic = np.zeros_like(base)
        numeric = np.zeros_like(base)
        flat = base.reshape(-1)
        nflat = numeric.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            args = [Tensor(a) for a in arrays]
            f_plus = float(scalar(*args).data)
            flat[j] = orig - eps
            args = [Tensor(a) for a in arrays]
            f_minus = float(scalar(*args).data)
            flat[j] = orig
            nflat[j] = (f_plus - f_minus) / (2.0 * eps)
        errs = np.zeros_like(base)
        eflat = errs.reshape(-1)
        aflat = analytic.reshape(-1)
        for j in range(flat.size):
            e = _rel_err(aflat[j], nflat[j])
            eflat[j] = e
            if e > threshold and aflat[j] * nflat[j] < 0:
                suspect = True
        worst = float(errs.max()) if errs.size else 0.0
        per_input.append(worst)
        max_err = max(max_err, worst)
    return GradCheckReport(max_rel_err=max_err, per_input=per_input,
                           suspect_nondifferentiable=suspect)


def standard_op_battery(eps: float = 5e-4, seed: int = 0, trials: int = 10):
    """Finite-difference checks over every differentiable op.

    Yields (op name, GradCheckReport) with `trials` random shapes per op.
    """
    from . import tensor as T

    rng = make_rng("gradcheck-battery", seed)
    results = []

    def worst(name, fn_inputs):
        best = GradCheckReport(0.0)
        for fn, inputs in fn_inputs:
            rep = grad_check(fn, inputs, eps=eps)
            if rep.max_rel_err > best.max_rel_err:
                best = rep
        results.append((name, best))

    worst("matmul", [(T.matmul, [rng.standard_normal((int(m), int(k))),
                                 rng.standard_normal((int(k), int(n)))])
                     for m, k, n in rng.integers(1, 5, size=(trials, 3))])
    worst("add", [(T.add, [rng.standard_normal(4), rng.standard_normal(4)])
                  for _ in range(trials)])
    worst("mul", [(T.mul, [rng.standard_normal(4), rng.standard_normal(4)])
                  for _ in range(trials)])
    worst("gelu", [(T.gelu, [rng.standard_normal((2, 3)) * 2]) for _ in range(trials)])
    worst("relu", [(T.relu, [rng.standard_normal((2, 3)) + 0.5]) for _ in range(trials)])
    worst("softmax", [(lambda t: T.softmax(t, axis=-1),
                       [rng.standard_normal((3, int(v))) * 2])
                      for v in rng.integers(2, 7, size=trials)])
    worst("layernorm", [(T.layernorm, [rng.standard_normal((3, 6)),
                                       rng.standard_normal(6),
                                       rng.standard_normal(6)])
                        for _ in range(trials)])

    def emb_case():
        v = int(rng.integers(3, 8))
        ids = rng.integers(0, v, size=5)
        return (lambda t: T.embedding(t, ids), [rng.standard_normal((v, 3))])

    worst("embedding", [emb_case() for _ in range(trials)])

    def attn_case(causal):
        t_len, dh = int(rng.integers(2, 5)), int(rng.integers(2, 4))
        qkv = [rng.standard_normal((1, t_len, dh)) for _ in range(3)]
        return (lambda q, k, v: T.attention(q, k, v, causal=causal), qkv)

    worst("attention", [attn_case(False) for _ in range(trials // 2)]
          + [attn_case(True) for _ in range(trials - trials // 2)])
    worst("reshape", [(lambda t: T.reshape(t, (6,)), [rng.standard_normal((2, 3))])
                      for _ in range(trials)])
    worst("transpose", [(lambda t: T.transpose(t, (1, 0)), [rng.standard_normal((2, 3))])
                        for _ in range(trials)])
    worst("concat", [(lambda a, b: T.concat(a, b, axis=0),
                      [rng.standard_normal((2, 3)), rng.standard_normal((1, 3))])
                     for _ in range(trials)])
    worst("mean", [(T.mean, [rng.standard_normal((3, 2))]) for _ in range(trials)])

    def ce_case():
        t_len, v = int(rng.integers(1, 4)), int(rng.integers(3, 8))
        targets = rng.integers(0, v, size=t_len)
        return (lambda l: T.cross_entropy(l, targets),
                [rng.standard_normal((t_len, v)) * 2])

    worst("cross_entropy", [ce_case() for _ in range(trials)])

    def composite_case():
        targets = rng.integers(0, 5, size=2)
        return (lambda l: T.cross_entropy(T.mul(T.softmax(l, axis=-1), 3.0), targets),
                [rng.standard_normal((2, 5))])

    worst("softmax+cross_entropy", [composite_case() for _ in range(trials)])
    return results
