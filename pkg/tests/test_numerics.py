import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pading import numerics as nx
from pading.errors import DimensionError, ParameterError, StateError, VerificationError
from pading.numerics import AdamState, Param, SgdState, adam_step, grad_check, sgd_step


def test_matmul_hand_example():
    out = nx.matmul([[1.0, 2.0], [3.0, 4.0]], [[5.0], [6.0]])
    assert out.data.tolist() == [[17.0], [39.0]]


def test_matmul_identity_and_zero(rng):
    m = rng.standard_normal((2, 5))
    assert np.array_equal(nx.matmul(np.eye(2), m).data, m)
    assert np.array_equal(nx.matmul(np.zeros((3, 2)), m).data, np.zeros((3, 5)))


def test_matmul_shape_error_names_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        nx.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_associative(rng):
    for _ in range(20):
        a, b, c = (rng.standard_normal((4, 4)) for _ in range(3))
        left = nx.matmul(nx.matmul(a, b), c).data
        right = nx.matmul(a, nx.matmul(b, c)).data
        np.testing.assert_allclose(left, right, atol=1e-9)


def test_softmax_examples():
    np.testing.assert_allclose(nx.softmax_rows([[0.0, math.log(3.0)]]).data, [[0.25, 0.75]], atol=1e-15)
    np.testing.assert_allclose(nx.softmax_rows(np.full((1, 5), 2.5)).data, np.full((1, 5), 0.2))
    x = np.array([[0.3, -1.2, 4.0]])
    np.testing.assert_allclose(nx.softmax_rows(x + 17.0).data, nx.softmax_rows(x).data, atol=1e-15)
    with pytest.raises(ParameterError):
        nx.softmax_rows(x, temperature=0.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.integers(1, 6), st.integers(1, 8))
def test_softmax_rows_sum_to_one(seed, log_mag, rows, cols):
    x = np.random.default_rng(seed).standard_normal((rows, cols)) * 10.0 ** log_mag
    p = nx.softmax_rows(x, temperature=0.1).data
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)


def test_l2_normalize_rows():
    rows, zero = nx.l2_normalize_rows([[3.0, 4.0], [0.0, 0.0], [0.0, 1.0]])
    np.testing.assert_allclose(rows, [[0.6, 0.8], [0.0, 0.0], [0.0, 1.0]])
    assert zero.tolist() == [False, True, False]


@given(st.integers(0, 2**32 - 1))
def test_l2_normalize_unit_norm(seed):
    m = np.random.default_rng(seed).standard_normal((5, 7))
    rows, _ = nx.l2_normalize_rows(m)
    np.testing.assert_allclose(np.linalg.norm(rows, axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(nx.l2_normalize_rows(rows).rows, rows, atol=1e-15)


# ------------------------------------------------------------- optimizers

def _param(value, grad):
    p = Param(np.atleast_2d(value))
    p.grad = np.atleast_2d(np.asarray(grad, dtype=float))
    return p


def test_sgd_plain_step():
    p = _param([[1.0, -2.0]], [[0.5, 1.0]])
    sgd_step([p], SgdState(learning_rate=0.1, weight_decay=0.0, momentum=0.0))
    np.testing.assert_allclose(p.data, [[0.95, -2.1]])


def test_sgd_zero_grad_no_decay_is_noop():
    p = _param([[1.0, 2.0]], [[0.0, 0.0]])
    sgd_step([p], SgdState(learning_rate=0.1, weight_decay=0.0))
    assert p.data.tolist() == [[1.0, 2.0]]


def test_sgd_momentum_two_steps():
    # v1 = g, v2 = 0.9 g + g; total displacement 0.1 g + 0.1 * 1.9 g
    g = 2.0
    p = _param([[0.0]], [[g]])
    state = SgdState(learning_rate=0.1, weight_decay=0.0, momentum=0.9)
    sgd_step([p], state)
    sgd_step([p], state)
    np.testing.assert_allclose(p.data, [[-(0.1 * g + 0.1 * 1.9 * g)]], rtol=1e-15)


def test_sgd_weight_decay_enters_gradient():
    p = _param([[2.0]], [[0.0]])
    sgd_step([p], SgdState(learning_rate=0.5, weight_decay=0.1, momentum=0.0))
    np.testing.assert_allclose(p.data, [[2.0 - 0.5 * 0.1 * 2.0]])


def test_missing_gradient_is_state_error():
    with pytest.raises(StateError):
        sgd_step([Param([[1.0]])], SgdState())
    with pytest.raises(StateError):
        adam_step([Param([[1.0]])], AdamState())


def test_invalid_optimizer_settings():
    with pytest.raises(ParameterError):
        SgdState(learning_rate=0.0)
    with pytest.raises(ParameterError):
        SgdState(momentum=1.0)


def test_adam_first_step_magnitude_is_learning_rate():
    p = _param([[0.0, 0.0]], [[3.0, -0.01]])
    adam_step([p], AdamState(learning_rate=0.01))
    np.testing.assert_allclose(p.data, [[-0.01, 0.01]], rtol=1e-5)


def test_adam_zero_grad_first_step_is_noop():
    p = _param([[1.5]], [[0.0]])
    state = AdamState()
    adam_step([p], state)
    assert p.data.tolist() == [[1.5]] and state.timestep == 1


def test_adam_moments_bounded(rng):
    p = Param(np.zeros((3, 3)))
    state = AdamState()
    for t in range(1000):
        p.grad = rng.uniform(-1, 1, (3, 3))
        adam_step([p], state)
        assert state.timestep == t + 1
    assert all(np.all(np.isfinite(m)) for m in state.first_moment + state.second_moment)
    assert np.abs(state.first_moment[0]).max() <= 1.0 and state.second_moment[0].max() <= 1.0


def test_optimizer_steps_bit_identical(rng):
    value, grads = rng.standard_normal((4, 3)), [rng.standard_normal((4, 3)) for _ in range(5)]
    for make, step in ((SgdState, sgd_step), (AdamState, adam_step)):
        runs = []
        for _ in range(2):
            p, state = Param(value), make()
            for g in grads:
                p.grad = g.copy()
                step([p], state)
            runs.append(p.data.copy())
        assert np.array_equal(runs[0], runs[1])


def test_zero_grad_sets_zeros():
    p = Param(np.ones((2, 2)))
    assert p.grad is None
    p.zero_grad()
    assert np.array_equal(p.grad, np.zeros((2, 2)))


# ------------------------------------------------------------ grad_check

def test_grad_check_quadratic(rng):
    w = Param(rng.standard_normal((3, 4)))
    report = grad_check(lambda: nx.sum_(nx.square(w)) * 0.5, [w], probe_count=12)
    assert report.max_rel_error < 1e-6
    w.zero_grad()
    (nx.sum_(nx.square(w)) * 0.5).backward()
    np.testing.assert_allclose(w.grad, w.data)


def test_grad_check_constant_loss():
    w = Param(np.ones((2, 2)))
    report = grad_check(lambda: nx.Tensor([[3.0]]) + nx.sum_(w) * 0.0, [w], probe_count=4)
    assert all(a == 0.0 and n == 0.0 for _, _, a, n, _ in report.probes)


def test_grad_check_rejects_nondeterministic_loss():
    w = Param(np.ones((1, 1)))
    gen = np.random.default_rng()
    with pytest.raises(VerificationError):
        grad_check(lambda: nx.sum_(w) * float(gen.random()), [w])


def test_grad_check_eps_range():
    w = Param(np.ones((1, 1)))
    with pytest.raises(ParameterError):
        grad_check(lambda: nx.sum_(w), [w], eps=1e-2)


def test_grad_check_detects_sign_error(rng, monkeypatch):
    # a deliberately wrong backward for exp must be caught
    real_exp = nx.exp

    def bad_exp(a):
        out = real_exp(a)
        out._backward = lambda g: (-g * out.data,)
        return out

    w = Param(rng.standard_normal((2, 3)))
    monkeypatch.setattr(nx, "exp", bad_exp)
    report = grad_check(lambda: nx.sum_(nx.exp(w)), [w], probe_count=5)
    assert report.max_rel_error > 1.0


# every differentiable op, checked on random small shapes

OPS = {
    "add_bias": (lambda a, b: nx.add(a, nx.take_rows(b, [0])), 2),
    "sub": (lambda a, b: nx.sub(a, b), 2),
    "mul": (lambda a, b: nx.mul(a, b), 2),
    "div": (lambda a, b: nx.div(a, nx.add(nx.square(b), 0.5)), 2),
    "matmul": (lambda a, b: nx.matmul(a, nx.transpose(b)), 2),
    "exp": (lambda a: nx.exp(a), 1),
    "log": (lambda a: nx.log(nx.add(nx.square(a), 0.5)), 1),
    "sqrt": (lambda a: nx.sqrt(nx.add(nx.square(a), 0.5)), 1),
    "abs": (lambda a: nx.abs_(a), 1),
    "leaky_relu": (lambda a: nx.leaky_relu(a, 0.2), 1),
    "clip": (lambda a: nx.clip(a, -0.5, 0.5), 1),
    "sum_rows": (lambda a: nx.sum_(a, axis=1), 1),
    "mean_cols": (lambda a: nx.mean(a, axis=0), 1),
    "concat_cols": (lambda a, b: nx.concat_cols([a, b]), 2),
    "concat_rows": (lambda a, b: nx.concat_rows([a, b]), 2),
    "take_rows": (lambda a: nx.take_rows(a, [0, 0, 1]), 1),
    "split_cols": (lambda a: nx.mul(*nx.split_cols(nx.concat_cols([a, a]), a.shape[1])), 1),
    "softmax": (lambda a: nx.softmax_rows(a, 0.7), 1),
    "log_softmax": (lambda a: nx.log_softmax_rows(a, 0.3), 1),
    "masked_log_softmax": (lambda a: nx.masked_log_softmax_rows(a, np.tri(*a.shape, k=-1, dtype=bool) | (np.arange(a.shape[1]) == a.shape[1] - 1), 0.5), 1),
    "cross_entropy": (lambda a: nx.cross_entropy(a, np.arange(a.shape[0]) % a.shape[1], 0.5), 1),
    "sqdist": (lambda a, b: nx.sqdist(a, b), 2),
}


@pytest.mark.parametrize("name", sorted(OPS))
@settings(max_examples=5, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), rows=st.integers(2, 4), cols=st.integers(2, 4))
def test_every_op_passes_grad_check(name, seed, rows, cols):
    fn, arity = OPS[name]
    gen = np.random.default_rng(seed)
    params = [Param(gen.standard_normal((rows, cols))) for _ in range(arity)]
    weights = None

    def loss():
        nonlocal weights
        out = fn(*params)
        if weights is None:
            weights = np.random.default_rng(seed + 1).standard_normal(out.shape)
        return nx.sum_(nx.mul(out, weights))

    report = grad_check(loss, params, probe_count=8, eps=1e-5, seed=seed)
    assert report.max_rel_error < 1e-4, report.probes
