import numpy as np
import pytest

from spectralign.errors import DataError, NumericError
from spectralign.params import (Adam, GradientDescent, ParamStore,
                                load_checkpoint, make_optimizer,
                                save_checkpoint)


def simple_store():
    store = ParamStore()
    store.add("w", np.array([[1.0, 2.0], [3.0, 4.0]]))
    store.add("b", np.array([0.5]))
    return store.finalize()


def test_store_views_alias_flat_arrays():
    store = simple_store()
    assert store.size == 5
    store.view("w")[0, 0] = 9.0
    assert store.values[0] == 9.0
    store.grads[4] = 2.0
    assert store.grad_view("b")[0] == 2.0


def test_duplicate_and_late_add_rejected():
    store = ParamStore()
    store.add("w", np.zeros(2))
    with pytest.raises(DataError):
        store.add("w", np.zeros(2))
    store.finalize()
    with pytest.raises(DataError):
        store.add("x", np.zeros(2))


def test_plain_descent_single_step():
    store = ParamStore()
    store.add("theta", np.array([1.0]))
    store.finalize()
    store.grads[:] = 0.5
    GradientDescent(lr=0.1).step(store)
    assert store.values[0] == pytest.approx(0.95)
    assert store.grads[0] == 0.0


def test_plain_descent_converges_on_quadratic():
    store = ParamStore()
    store.add("theta", np.array([0.0]))
    store.finalize()
    opt = GradientDescent(lr=0.1)
    for _ in range(200):
        store.grads[:] = 2.0 * (store.values - 3.0)
        opt.step(store)
    assert abs(store.values[0] - 3.0) <= 1e-4


def test_adam_converges_on_quadratic():
    store = ParamStore()
    store.add("theta", np.array([0.0]))
    store.finalize()
    opt = Adam(lr=0.05)
    for _ in range(500):
        store.grads[:] = 2.0 * (store.values - 3.0)
        opt.step(store)
    assert abs(store.values[0] - 3.0) <= 1e-3


def test_non_finite_gradient_names_segment():
    store = simple_store()
    store.grads[4] = np.nan
    with pytest.raises(NumericError, match="'b'"):
        GradientDescent().step(store)


def test_make_optimizer_kinds():
    assert isinstance(make_optimizer("adam", 1e-3), Adam)
    assert isinstance(make_optimizer("gd", 1e-3), GradientDescent)
    with pytest.raises(DataError):
        make_optimizer("lbfgs", 1e-3)


def test_checkpoint_roundtrip(tmp_path):
    store = simple_store()
    store.extras["mu"] = np.arange(3.0)
    store.extras["scale"] = np.array(2.5)
    path = tmp_path / "m.ckpt"
    save_checkpoint(store, str(path))
    again = load_checkpoint(str(path))
    assert np.array_equal(again.values, store.values)
    assert again.segments == store.segments
    assert np.array_equal(again.extras["mu"], store.extras["mu"])
    assert float(again.extras["scale"]) == 2.5


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOTACKPT" * 4)
    with pytest.raises(DataError):
        load_checkpoint(str(path))
