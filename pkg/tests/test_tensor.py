import numpy as np
import pytest

from acunet.errors import ContractError
from acunet.tensor import Tensor, backward, get_tape, no_grad


def test_sum_gradient_is_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    backward(x.sum())
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_square_gradient_is_two_x():
    x = Tensor([1.5, -2.0, 3.0], requires_grad=True)
    backward((x * x).sum())
    np.testing.assert_array_equal(x.grad, 2 * x.data)


def test_non_scalar_loss_rejected():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        backward(x * 2.0)


def test_tape_cleared_after_backward():
    x = Tensor(np.ones(3), requires_grad=True)
    y = (x * 3.0).sum()
    assert len(get_tape()) > 0
    backward(y)
    assert len(get_tape()) == 0


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = (x * x).sum()
    assert len(get_tape()) == 0
    assert not y.requires_grad


def test_leaf_gradients_accumulate():
    x = Tensor([2.0], requires_grad=True)
    backward((x * 3.0).sum())
    backward((x * 3.0).sum())
    np.testing.assert_array_equal(x.grad, [6.0])


def test_broadcast_gradients_reduce_to_operand_shape():
    a = Tensor(np.ones((2, 3)), requires_grad=True)
    b = Tensor(np.ones((1, 3)), requires_grad=True)
    backward((a * b + b).sum())
    assert b.grad.shape == (1, 3)
    # two rows of a, plus the direct term broadcast over two rows
    np.testing.assert_array_equal(b.grad, [[4.0, 4.0, 4.0]])


def test_reused_tensor_sums_all_paths():
    x = Tensor([3.0], requires_grad=True)
    y = x * x + x / 2.0 - 1.0
    backward(y.sum())
    np.testing.assert_allclose(x.grad, [2 * 3.0 + 0.5])


def test_intermediate_grads_populated():
    x = Tensor([1.0, 2.0], requires_grad=True)
    h = x * 2.0
    backward((h * h).sum())
    np.testing.assert_array_equal(h.grad, 2 * h.data)


def test_getitem_and_reshape_route_gradients():
    x = Tensor(np.arange(12.0).reshape(3, 4), requires_grad=True)
    backward(x.reshape(4, 3)[1:3].sum())
    expected = np.zeros(12)
    expected[3:9] = 1.0
    np.testing.assert_array_equal(x.grad, expected.reshape(3, 4))


def test_pow_and_division():
    x = Tensor([2.0, 4.0], requires_grad=True)
    backward((x**3 / 2.0).sum() + (1.0 / x).sum())
    np.testing.assert_allclose(x.grad, 1.5 * x.data**2 - 1.0 / x.data**2)


def test_repeat_runs_identical():
    def run():
        rng = np.random.default_rng(3)
        x = Tensor(rng.standard_normal((4, 5)), requires_grad=True)
        w = Tensor(rng.standard_normal((4, 5)), requires_grad=True)
        backward(((x * w).sum(axis=1) ** 2).mean())
        return x.grad.copy(), w.grad.copy()

    a, b = run(), run()
    assert all(np.array_equal(u, v) for u, v in zip(a, b))
