import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from benthicbnn import numeric as nm
from benthicbnn.errors import DimensionError, TrainingError, UsageError
from nets import layer_stack_case, layer_stack_loss
from oracles import central_difference, conv2d_loops, relative_error


# dense_forward ---------------------------------------------------------------

def test_dense_identity_weights():
    out = nm.dense_forward([[1.0, 2.0]], np.eye(2), np.zeros(2))
    np.testing.assert_array_equal(out.value, [[1.0, 2.0]])


def test_dense_zero_input_passes_bias():
    w = np.random.default_rng(0).normal(size=(2, 2))
    out = nm.dense_forward([[0.0, 0.0]], w, [3.0, -1.0])
    np.testing.assert_array_equal(out.value, [[3.0, -1.0]])


def test_dense_hand_matmul():
    out = nm.dense_forward([[1.0, 1.0]], [[2.0, 0.0], [0.0, 3.0]], [1.0, 1.0])
    np.testing.assert_array_equal(out.value, [[3.0, 4.0]])


def test_dense_shape_mismatch_names_shapes():
    with pytest.raises(DimensionError, match=r"\(1, 3\).*\(2, 2\)"):
        nm.dense_forward(np.ones((1, 3)), np.ones((2, 2)), np.zeros(2))


# conv2d_forward --------------------------------------------------------------

def test_conv_identity_kernel():
    k = np.zeros((1, 1, 3, 3))
    k[0, 0, 1, 1] = 1.0
    x = np.ones((1, 1, 3, 3))
    out = nm.conv2d_forward(x, k, [0.0])
    np.testing.assert_array_equal(out.value, x)


def test_conv_zero_input_gives_bias():
    out = nm.conv2d_forward(np.zeros((2, 3, 4, 4)), np.ones((2, 3, 3, 3)), [1.5, -2.0])
    assert np.all(out.value[:, 0] == 1.5) and np.all(out.value[:, 1] == -2.0)


def test_conv_averaging_ramp_matches_loops():
    x = np.arange(25, dtype=float).reshape(1, 1, 5, 5)
    k = np.full((1, 1, 3, 3), 1 / 9)
    out = nm.conv2d_forward(x, k, [0.0]).value
    ref = conv2d_loops(x, k, [0.0])
    np.testing.assert_allclose(out, ref, atol=1e-10)
    # interior equals the local mean of the linear ramp, i.e. the centre value
    np.testing.assert_allclose(out[0, 0, 1:4, 1:4], x[0, 0, 1:4, 1:4], atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_conv_random_matches_loops(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 3, 5, 6))
    k = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    np.testing.assert_allclose(nm.conv2d_forward(x, k, b).value, conv2d_loops(x, k, b), atol=1e-10)


def test_conv_channel_mismatch():
    with pytest.raises(DimensionError):
        nm.conv2d_forward(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 3, 3)), [0.0])


# softmax ---------------------------------------------------------------------

def test_softmax_uniform():
    np.testing.assert_allclose(nm.softmax(np.zeros((1, 5))), [[0.2] * 5], atol=1e-15)


def test_softmax_log_ratio():
    np.testing.assert_allclose(nm.softmax([[np.log(1.0), np.log(3.0)]]), [[0.25, 0.75]], atol=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=8), st.floats(-100, 100))
def test_softmax_shift_invariant_and_normalised(row, c):
    x = np.array([row])
    p = nm.softmax(x)
    assert abs(p.sum() - 1.0) < 1e-12
    assert np.all(p >= 0)
    np.testing.assert_allclose(nm.softmax(x + c), p, atol=1e-12)


def test_softmax_large_logits_stable():
    p = nm.softmax([[1000.0, 1000.0, -1000.0]])
    assert np.all(np.isfinite(p))
    np.testing.assert_allclose(p, [[0.5, 0.5, 0.0]])


# backward --------------------------------------------------------------------

def test_backward_square():
    w = nm.Tensor(3.0, requires_grad=True)
    loss = nm.square(w)
    nm.backward(loss)
    assert w.grad == pytest.approx(6.0)


def test_backward_without_forward():
    with pytest.raises(UsageError):
        nm.backward(nm.Tensor(1.0, requires_grad=True))


def test_backward_twice_is_usage_error():
    w = nm.Tensor(2.0, requires_grad=True)
    loss = nm.square(w)
    nm.backward(loss)
    with pytest.raises(UsageError):
        nm.backward(loss)


def test_constant_loss_zero_gradients():
    w = nm.Tensor(np.ones((2, 3)), requires_grad=True)
    loss = nm.tsum(w * 0.0) + 5.0
    (g,) = nm.backward(loss, [w])
    np.testing.assert_array_equal(g, 0.0)


def test_cross_entropy_gradient_four_parameter_net():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(6, 2))
    y = rng.integers(0, 2, size=6)
    w = rng.normal(size=(2, 2))
    b = rng.normal(size=2)
    W, B = nm.Tensor(w, requires_grad=True), nm.Tensor(b, requires_grad=True)
    ga = nm.backward(nm.cross_entropy(nm.dense_forward(x, W, B), y), [W, B])

    def f():
        return float(nm.cross_entropy(nm.dense_forward(x, w, b), y).value)

    gn = central_difference(f, [w, b])
    for a, n in zip(ga, gn):
        assert relative_error(a, n) < 1e-4


@pytest.mark.parametrize("seed", range(20))
def test_gradient_check_all_layer_types(seed):
    arrays, x, y, target = layer_stack_case(seed)
    params = [nm.Tensor(a, requires_grad=True) for a in arrays]
    ga = nm.backward(layer_stack_loss(params, x, y, target), params)
    gn = central_difference(lambda: float(layer_stack_loss(arrays, x, y, target).value), arrays)
    for a, n in zip(ga, gn):
        assert relative_error(a, n) < 1e-4


def test_gradients_finite():
    rng = np.random.default_rng(3)
    w = nm.Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    loss = nm.cross_entropy(nm.dense_forward(rng.normal(size=(5, 4)) * 100, w, np.zeros(3)), [0, 1, 2, 0, 1])
    (g,) = nm.backward(loss, [w])
    assert np.all(np.isfinite(g))


# optimizer -------------------------------------------------------------------

def test_zero_gradient_leaves_params():
    w = nm.Tensor([1.0, -2.0], requires_grad=True)
    state = nm.OptimizerState.for_params([w])
    nm.optimizer_step([w], [np.zeros(2)], state)
    np.testing.assert_array_equal(w.value, [1.0, -2.0])
    assert state.step == 1


def test_one_step_descends():
    w = nm.Tensor(1.0, requires_grad=True)
    state = nm.OptimizerState.for_params([w], lr=0.1)
    nm.optimizer_step([w], [np.array(2.0)], state)
    assert w.value < 1.0


def test_converges_on_quadratic():
    w = nm.Tensor(0.0, requires_grad=True)
    state = nm.OptimizerState.for_params([w], lr=0.1)
    steps = []
    for _ in range(200):
        loss = nm.square(w - 2.0)
        grads = nm.backward(loss, [w])
        nm.optimizer_step([w], grads, state)
        steps.append(state.step)
    assert abs(float(w.value) - 2.0) < 1e-2
    assert steps == list(range(1, 201))


def test_nonfinite_gradient_names_parameter():
    w = nm.Tensor([1.0], requires_grad=True, name="layer0.W")
    state = nm.OptimizerState.for_params([w])
    with pytest.raises(TrainingError, match="layer0.W"):
        nm.optimizer_step([w], [np.array([np.nan])], state)


def test_training_bit_identical_under_seed():
    def run():
        s = nm.RandomStream(11, "init")
        w = nm.he_normal((4, 3), 4, s)
        b = nm.Tensor(np.zeros(3), requires_grad=True)
        data = nm.RandomStream(11, "data")
        x = data.normal(size=(16, 4))
        y = data.integers(0, 3, size=16)
        st_ = nm.OptimizerState.for_params([w, b])
        for _ in range(30):
            g = nm.backward(nm.cross_entropy(nm.dense_forward(x, w, b), y), [w, b])
            nm.optimizer_step([w, b], g, st_)
        return w.value.copy(), b.value.copy()

    (w1, b1), (w2, b2) = run(), run()
    assert w1.tobytes() == w2.tobytes() and b1.tobytes() == b2.tobytes()


# random streams --------------------------------------------------------------

def test_stream_reproducible_and_label_independent():
    a = nm.RandomStream(5, "mc").normal(size=1000)
    b = nm.RandomStream(5, "mc").normal(size=1000)
    c = nm.RandomStream(5, "init").normal(size=1000)
    np.testing.assert_array_equal(a, b)
    assert abs(np.corrcoef(a, c)[0, 1]) < 0.1
