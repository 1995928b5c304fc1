import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from outfitgen import autodiff as ad
from outfitgen.autodiff import Tensor

from gradcheck import check

TOL = 1e-4


def leaf(rng, *shape, positive=False, away_from_zero=False):
    x = rng.standard_normal(shape)
    if positive:
        x = np.abs(x) + 0.5
    if away_from_zero:
        x = np.where(np.abs(x) < 0.1, x + np.sign(x + 1e-12) * 0.2, x)
    return Tensor(x, requires_grad=True)


def project(out, rng):
    """Scalar loss with a random direction so every output element matters."""
    w = Tensor(rng.standard_normal(out.shape))
    return ad.sum_(out * w)


def _cases():
    return {
        "add_broadcast": lambda r: ((a := leaf(r, 3, 4)), (b := leaf(r, 4)), lambda: a + b),
        "sub": lambda r: ((a := leaf(r, 3, 4)), (b := leaf(r, 1, 4)), lambda: a - b),
        "mul_broadcast": lambda r: ((a := leaf(r, 2, 3, 4)), (b := leaf(r, 3, 1)), lambda: a * b),
        "scale": lambda r: ((a := leaf(r, 5)), None, lambda: ad.scale(a, -2.5)),
        "matmul_2d": lambda r: ((a := leaf(r, 3, 4)), (b := leaf(r, 4, 2)), lambda: a @ b),
        "matmul_batched": lambda r: ((a := leaf(r, 2, 3, 4)), (b := leaf(r, 2, 4, 5)), lambda: a @ b),
        "matmul_broadcast": lambda r: ((a := leaf(r, 2, 3, 4)), (b := leaf(r, 4, 5)), lambda: a @ b),
        "relu": lambda r: ((a := leaf(r, 4, 5, away_from_zero=True)), None, lambda: ad.relu(a)),
        "exp": lambda r: ((a := leaf(r, 6)), None, lambda: ad.exp(a)),
        "log": lambda r: ((a := leaf(r, 6, positive=True)), None, lambda: ad.log(a)),
        "softmax": lambda r: ((a := leaf(r, 3, 5)), None, lambda: ad.softmax(a, axis=-1)),
        "softmax_axis0": lambda r: ((a := leaf(r, 3, 5)), None, lambda: ad.softmax(a, axis=0)),
        "log_softmax": lambda r: ((a := leaf(r, 3, 5)), None, lambda: ad.log_softmax(a)),
        "layer_norm": lambda r: ((a := leaf(r, 4, 6)), None, lambda: ad.layer_norm(a)),
        "concat": lambda r: ((a := leaf(r, 2, 3)), (b := leaf(r, 4, 3)), lambda: ad.concat([a, b], 0)),
        "stack": lambda r: ((a := leaf(r, 2, 3)), (b := leaf(r, 2, 3)), lambda: ad.stack([a, b], 1)),
        "index_select_repeats": lambda r: (
            (a := leaf(r, 5, 3)), None, lambda: ad.index_select(a, [0, 2, 2, 4, 0], axis=0)
        ),
        "index_select_2d_index": lambda r: (
            (a := leaf(r, 4, 3, 2)), None, lambda: ad.index_select(a, [[0, 1], [1, 1]], axis=1)
        ),
        "sum_axis": lambda r: ((a := leaf(r, 3, 4)), None, lambda: ad.sum_(a, axis=1)),
        "sum_keepdims": lambda r: ((a := leaf(r, 3, 4)), None, lambda: ad.sum_(a, axis=0, keepdims=True)),
        "mean": lambda r: ((a := leaf(r, 3, 4)), None, lambda: ad.mean(a, axis=(0, 1))),
        "reshape": lambda r: ((a := leaf(r, 3, 4)), None, lambda: a.reshape(2, 6)),
        "transpose": lambda r: ((a := leaf(r, 2, 3, 4)), None, lambda: a.transpose(2, 0, 1)),
        "dropout": lambda r: (
            (a := leaf(r, 4, 4)), None,
            lambda: ad.dropout(a, 0.5, np.random.default_rng(7), training=True),
        ),
    }


CASES = _cases()


@pytest.mark.parametrize("name", sorted(CASES))
@pytest.mark.parametrize("seed", range(10))
def test_primitive_gradients(name, seed):
    rng = np.random.default_rng(seed)
    a, b, fn = CASES[name](rng)
    proj_rng = np.random.default_rng(1000 + seed)
    w = proj_rng.standard_normal(fn().shape)
    inputs = [t for t in (a, b) if t is not None]
    assert check(lambda: ad.sum_(fn() * Tensor(w)), inputs) < TOL


def test_shared_subexpression_accumulates():
    rng = np.random.default_rng(0)
    a = leaf(rng, 3)
    f = lambda: ad.sum_(a * a + a)
    assert check(f, [a]) < TOL
    np.testing.assert_allclose(a.grad, 2 * a.data + 1)


def test_matmul_rejects_vectors():
    with pytest.raises(ValueError):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones(3))


def test_no_grad_records_nothing():
    a = Tensor(np.ones(3), requires_grad=True)
    with ad.no_grad():
        b = a * 2.0
    assert not b.requires_grad


def test_backward_needs_scalar_or_grad():
    a = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        (a * 2.0).backward()
    with pytest.raises(ValueError):
        ad.sum_(Tensor(np.ones(3))).backward()


def test_log_softmax_stable_for_large_inputs():
    out = ad.log_softmax(Tensor([1000.0, 0.0, -1000.0])).data
    assert np.all(np.isfinite(out))
    assert out[0] == pytest.approx(0.0)


def test_dropout_identity_at_eval_and_zero_rate():
    a = Tensor(np.ones(4), requires_grad=True)
    assert ad.dropout(a, 0.35, np.random.default_rng(0), training=False) is a
    assert ad.dropout(a, 0.0, np.random.default_rng(0), training=True) is a
    with pytest.raises(ValueError):
        ad.dropout(a, 1.0, np.random.default_rng(0))


def test_grad_buffer_is_not_aliased_across_leaves():
    a = Tensor(np.ones(3), requires_grad=True)
    b = Tensor(np.ones(3), requires_grad=True)
    s = a + b
    loss = ad.sum_(s * 3.0) + ad.sum_(a)
    loss.backward()
    np.testing.assert_allclose(a.grad, 4.0)
    np.testing.assert_allclose(b.grad, 3.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 12))
def test_layer_norm_moments(seed, width):
    x = np.random.default_rng(seed).standard_normal((3, width)) * 5 + 2
    y = ad.layer_norm(Tensor(x)).data
    np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-10)
    np.testing.assert_allclose(y.var(axis=-1), 1.0, atol=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_softmax_is_distribution(seed):
    x = np.random.default_rng(seed).standard_normal((4, 7)) * 30
    p = ad.softmax(Tensor(x)).data
    np.testing.assert_allclose(p.sum(axis=-1), 1.0)
    assert np.all(p >= 0)
