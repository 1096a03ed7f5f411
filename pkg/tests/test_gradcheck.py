"""Every differentiable op's backward vs central finite differences."""

import numpy as np
import pytest

from vitp import tensor as T
from vitp.gradcheck import grad_check
from vitp.streams import make_rng

THRESH = 1e-4


def _shapes(rng, n, ndim_choices=((2, 5), (3, 4), (6,), (2, 3, 2))):
    for i in range(n):
        yield ndim_choices[i % len(ndim_choices)]


def test_grad_matmul():
    rng = make_rng("gc-matmul")
    for i in range(10):
        m, k, n = rng.integers(1, 5, size=3)
        a = rng.standard_normal((m, k))
        b = rng.standard_normal((k, n))
        rep = grad_check(T.matmul, [a, b])
        assert rep.max_rel_err <= THRESH


def test_grad_matmul_batched():
    rng = make_rng("gc-matmul-b")
    a = rng.standard_normal((2, 3, 4))
    b = rng.standard_normal((4, 2))
    assert grad_check(T.matmul, [a, b]).max_rel_err <= THRESH


@pytest.mark.parametrize("op", [T.add, T.mul])
def test_grad_add_mul(op):
    rng = make_rng("gc-addmul", op.__name__)
    for i in range(10):
        shape = tuple(rng.integers(1, 5, size=rng.integers(1, 4)))
        a = rng.standard_normal(shape)
        b = rng.standard_normal(shape)
        assert grad_check(op, [a, b]).max_rel_err <= THRESH
    # broadcast case
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((4,))
    assert grad_check(op, [a, b]).max_rel_err <= THRESH


def test_grad_gelu_relu():
    rng = make_rng("gc-act")
    for i, shape in enumerate(_shapes(rng, 10)):
        x = rng.standard_normal(shape) * 2
        assert grad_check(T.gelu, [x]).max_rel_err <= THRESH
        x = rng.standard_normal(shape) + np.where(rng.random(shape) > 0.5, 0.5, -0.5)
        assert grad_check(T.relu, [x]).max_rel_err <= THRESH


def test_grad_softmax():
    rng = make_rng("gc-softmax")
    for i in range(10):
        shape = (int(rng.integers(1, 5)), int(rng.integers(2, 7)))
        x = rng.standard_normal(shape) * 3
        assert grad_check(lambda t: T.softmax(t, axis=-1), [x]).max_rel_err <= THRESH


def test_grad_layernorm():
    rng = make_rng("gc-ln")
    for i in range(10):
        rows, dim = int(rng.integers(1, 5)), int(rng.integers(2, 8))
        x = rng.standard_normal((rows, dim)) * 2
        gamma = rng.standard_normal(dim)
        beta = rng.standard_normal(dim)
        assert grad_check(T.layernorm, [x, gamma, beta]).max_rel_err <= THRESH


def test_grad_embedding():
    rng = make_rng("gc-emb")
    for i in range(10):
        v, d = int(rng.integers(3, 8)), int(rng.integers(2, 5))
        table = rng.standard_normal((v, d))
        ids = rng.integers(0, v, size=6)
        assert grad_check(lambda t: T.embedding(t, ids), [table]).max_rel_err <= THRESH


def test_grad_attention():
    rng = make_rng("gc-attn")
    for causal in (False, True):
        for i in range(5):
            t, dh = int(rng.integers(2, 6)), int(rng.integers(2, 5))
            q = rng.standard_normal((1, t, dh))
            k = rng.standard_normal((1, t, dh))
            v = rng.standard_normal((1, t, dh))
            rep = grad_check(lambda a, b, c: T.attention(a, b, c, causal=causal), [q, k, v])
            assert rep.max_rel_err <= THRESH


def test_grad_reshape_transpose_concat_mean():
    rng = make_rng("gc-shape")
    x = rng.standard_normal((3, 4))
    assert grad_check(lambda t: T.reshape(t, (4, 3)), [x]).max_rel_err <= THRESH
    x = rng.standard_normal((2, 3, 4))
    assert grad_check(lambda t: T.transpose(t, (2, 0, 1)), [x]).max_rel_err <= THRESH
    a = rng.standard_normal((2, 3))
    b = rng.standard_normal((4, 3))
    assert grad_check(lambda u, v: T.concat(u, v, axis=0), [a, b]).max_rel_err <= THRESH
    x = rng.standard_normal((5, 2))
    assert grad_check(T.mean, [x]).max_rel_err <= THRESH


def test_grad_cross_entropy_and_softmax_composite():
    rng = make_rng("gc-ce")
    for i in range(10):
        t, v = int(rng.integers(1, 5)), int(rng.integers(3, 9))
        logits = rng.standard_normal((t, v)) * 2
        targets = rng.integers(0, v, size=t)
        rep = grad_check(lambda l: T.cross_entropy(l, targets), [logits])
        assert rep.max_rel_err <= THRESH


def test_grad_constant_function_exactly_zero():
    x = np.ones((3, 3))

    def const(t):
        return T.mul(t, 0.0)

    rep = grad_check(const, [x])
    assert rep.max_rel_err == 0.0
    assert not rep.suspect_nondifferentiable


def test_grad_check_eps_domain():
    with pytest.raises(ValueError):
        grad_check(T.mean, [np.ones(3)], eps=1e-2)
    with pytest.raises(ValueError):
        grad_check(T.mean, [np.ones(3)], eps=1e-7)
