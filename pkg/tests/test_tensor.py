"""Core tensor engine: forward values, gradients, determinism, errors."""

import numpy as np
import pytest

from shapefuse import tensor as T
from shapefuse.errors import ContractError, DimensionError, NumericError
from shapefuse.gradcheck import check_gradients
from shapefuse.optim import SGD, Parameter, init_param
from shapefuse.tensor import Tensor, backward


def rand_param(name, shape, seed, sigma=0.7):
    return init_param(name, shape, "gaussian", seed, sigma=sigma)


# ---------------------------------------------------------------------------
# forward values
# ---------------------------------------------------------------------------


def test_softmax_uniform_logits():
    out = T.softmax(Tensor([[0.0, 0.0, 0.0]]), axis=1)
    np.testing.assert_allclose(out.data, [[1 / 3, 1 / 3, 1 / 3]], rtol=0, atol=1e-15)


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(0)
    out = T.softmax(Tensor(rng.normal(size=(7, 5)) * 30), axis=1)
    np.testing.assert_allclose(out.data.sum(axis=1), np.ones(7), rtol=0, atol=1e-12)


def test_layer_norm_constant_row_is_zero():
    out = T.layer_norm(Tensor([[3.5, 3.5, 3.5, 3.5]]), axis=-1)
    np.testing.assert_array_equal(out.data, np.zeros((1, 4)))


def test_matmul_ones_gives_row_sums():
    a = Tensor([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    out = T.matmul(a, Tensor(np.ones((3, 1))))
    np.testing.assert_array_equal(out.data, [[6.0], [15.0]])


def test_l2_normalize_unit_norm():
    rng = np.random.default_rng(1)
    out = T.l2_normalize(Tensor(rng.normal(size=(6, 9))), axis=1)
    np.testing.assert_allclose(np.linalg.norm(out.data, axis=1), np.ones(6), rtol=0, atol=1e-12)


def test_l2_normalize_zero_row_raises():
    with pytest.raises(NumericError):
        T.l2_normalize(Tensor(np.zeros((1, 4))), axis=1)


def test_arccos_clamps_out_of_range():
    out = T.arccos(Tensor([1.5, -1.5]))
    np.testing.assert_allclose(out.data, [np.arccos(1 - 1e-7), np.arccos(-1 + 1e-7)])


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 2))))


def test_nonfinite_output_names_primitive():
    with pytest.raises(NumericError, match="log"):
        T.log(Tensor([0.0]))


def test_constructor_rejects_nan():
    with pytest.raises(NumericError):
        Tensor([np.nan])


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        backward(T.relu(x))


def test_linear_map_gradient():
    rng = np.random.default_rng(2)
    w = rand_param("w", (4, 3), 2)
    x = Tensor(rng.normal(size=(5, 4)))
    backward(T.tsum(T.matmul(x, w.value)))
    expected = np.tile(x.data.sum(axis=0)[:, None], (1, 3))
    np.testing.assert_allclose(w.value.grad, expected, rtol=1e-12)


def test_uniform_softmax_ce_gradient_symmetry():
    # uniform logits, true class gradient is (1/K - 1), others 1/K
    k = 5
    logits = Tensor(np.zeros((1, k)), requires_grad=True)
    logp = T.log(T.softmax(logits, axis=1))
    loss = T.smul(T.gather(T.reshape(logp, (k,)), np.array([2])), -1.0)
    backward(T.mean(loss))
    expected = np.full((1, k), 1.0 / k)
    expected[0, 2] = 1.0 / k - 1.0
    np.testing.assert_allclose(logits.grad, expected, rtol=0, atol=1e-12)


def test_grad_accumulates_until_zeroed():
    w = rand_param("w", (3, 2), 3)
    x = Tensor(np.ones((1, 3)))
    for _ in range(2):
        backward(T.tsum(T.matmul(x, w.value)))
    np.testing.assert_allclose(w.value.grad, 2 * np.ones((3, 2)))
    w.value.zero_grad()
    assert w.value.grad is None


def test_unreachable_parameter_warns():
    used = rand_param("used", (2, 2), 4)
    unused = rand_param("unused", (2, 2), 5)
    loss_t = T.tsum(used.value)
    with pytest.warns(UserWarning, match="unused"):
        backward(loss_t, expected=[used, unused])


@pytest.mark.parametrize(
    "name,builder",
    [
        ("matmul", lambda p, x: T.tsum(T.matmul(x, p.value))),
        ("add", lambda p, x: T.tsum(T.add(x, p.value))),
        ("sub", lambda p, x: T.tsum(T.sub(p.value, x))),
        ("mul", lambda p, x: T.tsum(T.mul(x, p.value))),
        ("smul", lambda p, x: T.tsum(T.smul(p.value, 2.5))),
        ("relu", lambda p, x: T.tsum(T.relu(p.value))),
        ("exp", lambda p, x: T.tsum(T.exp(p.value))),
        ("log", lambda p, x: T.tsum(T.log(T.add(T.mul(p.value, p.value), Tensor(np.ones((4, 4)) * 0.5))))),
        ("sqrt", lambda p, x: T.tsum(T.sqrt(T.add(T.mul(p.value, p.value), Tensor(np.ones((4, 4)) * 0.5))))),
        ("cos", lambda p, x: T.tsum(T.cos(p.value))),
        ("arccos", lambda p, x: T.tsum(T.arccos(T.smul(T.cos(p.value), 0.9)))),
        ("softmax", lambda p, x: T.tsum(T.mul(T.softmax(p.value, axis=1), x))),
        ("layer_norm", lambda p, x: T.tsum(T.mul(T.layer_norm(p.value, axis=1), x))),
        ("l2_normalize", lambda p, x: T.tsum(T.mul(T.l2_normalize(p.value, axis=1), x))),
        ("mean", lambda p, x: T.tsum(T.mul(T.mean(p.value, axis=0, keepdims=True), x[:1]))),
        ("max", lambda p, x: T.tsum(T.mul(T.tmax(p.value, axis=1), x[:, 0]))),
        ("concat", lambda p, x: T.tsum(T.mul(T.concat([p.value, p.value], axis=1), np.tile(x, (1, 2))))),
        ("gather", lambda p, x: T.tsum(T.mul(T.gather(p.value, np.array([1, 1, 3, 0])), x))),
        ("reshape", lambda p, x: T.tsum(T.mul(T.reshape(p.value, (2, 8)), x.reshape(2, 8)))),
        ("transpose", lambda p, x: T.tsum(T.mul(T.transpose(p.value, (1, 0)), x.T))),
        ("pad2d", lambda p, x: T.tsum(T.mul(T.pad2d(p.value, 1), np.ones((6, 6))))),
    ],
)
def test_primitive_gradients_match_finite_differences(name, builder):
    rng = np.random.default_rng(hash(name) % 2**32)
    p = rand_param(name, (4, 4), int(rng.integers(1 << 30)))
    x = rng.normal(size=(4, 4))  # plain array; ops wrap constants themselves
    worst = check_gradients(lambda: builder(p, x), [p])
    assert worst <= 1.0, f"{name}: worst tolerance ratio {worst}"


# ---------------------------------------------------------------------------
# init + optimizer
# ---------------------------------------------------------------------------


def test_init_zeros_ones():
    assert not init_param("z", (3, 3), "zeros", 0).data.any()
    np.testing.assert_array_equal(init_param("o", (2,), "ones", 0).data, [1.0, 1.0])


def test_init_deterministic_per_seed_and_name():
    a = init_param("layer.w", (16,), "gaussian", 42)
    b = init_param("layer.w", (16,), "gaussian", 42)
    c = init_param("layer.w", (16,), "gaussian", 43)
    np.testing.assert_array_equal(a.data, b.data)
    assert not np.array_equal(a.data, c.data)


def test_init_gaussian_sample_std():
    p = init_param("g", (100, 100), "gaussian", 11, sigma=0.02)
    assert 0.018 <= p.data.std() <= 0.022


def test_sgd_zero_lr_keeps_values():
    p = rand_param("p", (3,), 6)
    before = p.data.copy()
    backward(T.tsum(p.value))
    SGD([p], momentum=0.0, weight_decay=0.0).step(lr=0.0)
    np.testing.assert_array_equal(p.data, before)


def test_sgd_plain_step():
    p = rand_param("p", (3,), 7)
    before = p.data.copy()
    backward(T.tsum(T.smul(p.value, 2.0)))  # grad = 2
    SGD([p], momentum=0.0, weight_decay=0.0).step(lr=0.1)
    np.testing.assert_allclose(p.data, before - 0.2, rtol=1e-14)
    assert p.value.grad is None  # grads zeroed by the step


def test_sgd_momentum_two_steps():
    # constant grad g, momentum 0.9: total displacement lr*g*(1 + 1.9)
    p = Parameter("p", Tensor(np.array([5.0]), requires_grad=True))
    opt = SGD([p], momentum=0.9, weight_decay=0.0)
    g, lr = 2.0, 0.01
    for _ in range(2):
        p.value.grad = np.array([g])
        opt.step(lr)
    np.testing.assert_allclose(5.0 - p.data[0], lr * g * 2.9, rtol=1e-12)


def test_sgd_weight_decay_folds_into_velocity():
    p = Parameter("p", Tensor(np.array([4.0]), requires_grad=True))
    opt = SGD([p], momentum=0.0, weight_decay=0.5)
    p.value.grad = np.array([1.0])
    opt.step(lr=0.1)
    np.testing.assert_allclose(p.data, [4.0 - 0.1 * (1.0 + 0.5 * 4.0)])


def test_sgd_missing_grad_raises():
    p = rand_param("p", (2,), 8)
    with pytest.raises(ContractError, match="p"):
        SGD([p]).step(lr=0.1)


def test_forward_determinism_bit_identical():
    def run():
        w = init_param("w", (8, 8), "gaussian", 123, sigma=0.3)
        x = Tensor(np.linspace(-1, 1, 64).reshape(8, 8))
        return T.softmax(T.matmul(x, w.value), axis=1).data

    assert np.array_equal(run(), run())
