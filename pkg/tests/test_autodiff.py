import numpy as np
import pytest

from spectralign import autodiff as ad
from spectralign.autodiff import Tensor, finite_difference_check


def leaf(rng, shape):
    return Tensor(rng.normal(size=shape))


def test_add_mul_broadcast_grads():
    rng = np.random.default_rng(0)
    a = leaf(rng, (4, 3))
    b = leaf(rng, (3,))
    loss = ad.tsum((a + b) * b)
    loss.backward()
    assert np.allclose(a.grad, np.tile(b.data, (4, 1)))
    assert np.allclose(b.grad, a.data.sum(axis=0) + 2 * 4 * b.data)


def test_matmul_grads():
    rng = np.random.default_rng(1)
    a = leaf(rng, (5, 4))
    b = leaf(rng, (4, 2))
    loss = ad.tsum(a @ b)
    loss.backward()
    g = np.ones((5, 2))
    assert np.allclose(a.grad, g @ b.data.T)
    assert np.allclose(b.grad, a.data.T @ g)


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(2)
    x = leaf(rng, (6, 4))
    p = ad.softmax_rows(x)
    assert np.allclose(p.data.sum(axis=1), 1.0)


def test_log_softmax_matches_log_of_softmax():
    rng = np.random.default_rng(3)
    x = leaf(rng, (5, 3))
    a = ad.log_softmax_rows(x).data
    b = np.log(ad.softmax_rows(Tensor(x.data)).data)
    assert np.allclose(a, b, atol=1e-12)


def test_gather_scatter_inverse_shapes():
    rng = np.random.default_rng(4)
    x = leaf(rng, (7, 2))
    idx = np.array([0, 3, 3, 6])
    g = ad.gather_rows(x, idx)
    assert g.data.shape == (4, 2)
    loss = ad.tsum(g)
    loss.backward()
    expected = np.zeros((7, 2))
    np.add.at(expected, idx, 1.0)
    assert np.allclose(x.grad, expected)


def test_backward_accumulates_through_reuse():
    x = Tensor(np.array([2.0]))
    loss = ad.tsum(x * x + x)
    loss.backward()
    assert np.allclose(x.grad, np.array([5.0]))  # d/dx (x^2 + x) at 2


@pytest.mark.parametrize("op_name,build", [
    ("relu", lambda x: ad.tsum(ad.relu(x))),
    ("leaky_relu", lambda x: ad.tsum(ad.leaky_relu(x))),
    ("softplus", lambda x: ad.tsum(ad.softplus(x))),
    ("exp", lambda x: ad.tsum(ad.exp(x))),
    ("softmax", lambda x: ad.tsum(ad.softmax_rows(x) * ad.softmax_rows(x))),
    ("pool", lambda x: ad.frobenius_sq(ad.average_pool_rows(x))),
    ("transpose", lambda x: ad.frobenius_sq(ad.transpose(x) @ x)),
])
def test_finite_difference_single_input(op_name, build):
    rng = np.random.default_rng(hash(op_name) % 2 ** 31)
    arrays = [rng.normal(size=(5, 4)) + 0.3]

    rel = finite_difference_check(lambda t: build(t), arrays)
    assert rel <= 1e-6


def test_finite_difference_log():
    rng = np.random.default_rng(77)
    arrays = [rng.uniform(0.5, 2.0, size=(4, 3))]
    rel = finite_difference_check(lambda t: ad.tsum(ad.log(t)), arrays)
    assert rel <= 1e-6


def test_unbroadcast_scalar_grad():
    x = Tensor(np.array(3.0))
    y = Tensor(np.ones((2, 2)))
    loss = ad.tsum(y * x)
    loss.backward()
    assert np.allclose(x.grad, 4.0)
