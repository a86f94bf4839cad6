import numpy as np
import pytest

from anm.errors import NotScalarError, ShapeError, UnboundInputError
from anm.tensor import Tape, Tensor, check_gradients, evaluate
from anm.tensor import graph as g

from tests.conftest import naive_conv2d

rng = np.random.default_rng(7)


def _sq_loss(node):
    return g.mean_reduce(g.squared_error(node, g.placeholder("t")))


def _cases():
    x, w, a, b = (g.placeholder(n) for n in ("x", "w", "a", "b"))
    bn_params = ("gamma", "beta", "rm", "rv")
    gamma, beta, rm, rv = (g.placeholder(n) for n in bn_params)
    labels = g.placeholder("labels")
    return {
        "add-broadcast": (
            _sq_loss(g.add(a, b)),
            {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=(4,)), "t": rng.normal(size=(3, 4))},
            ["a", "b"],
        ),
        "scale": (
            _sq_loss(g.scale(a, -1.7)),
            {"a": rng.normal(size=(2, 5)), "t": rng.normal(size=(2, 5))},
            ["a"],
        ),
        "matmul-transpose": (
            _sq_loss(g.matmul(a, w, transpose_b=True)),
            {"a": rng.normal(size=(3, 5)), "w": rng.normal(size=(2, 5)), "t": rng.normal(size=(3, 2))},
            ["a", "w"],
        ),
        "conv2d-stride-pad": (
            _sq_loss(g.conv2d(x, w, stride=2, padding=1)),
            {"x": rng.normal(size=(2, 3, 6, 6)), "w": rng.normal(size=(4, 3, 3, 3)), "t": rng.normal(size=(2, 4, 3, 3))},
            ["x", "w"],
        ),
        "relu": (
            _sq_loss(g.relu(a)),
            {"a": rng.normal(size=(4, 4)), "t": rng.normal(size=(4, 4))},
            ["a"],
        ),
        "batchnorm-training": (
            _sq_loss(g.batchnorm(x, gamma, beta, rm, rv, training=True)),
            {
                "x": rng.normal(size=(4, 3, 2, 2)),
                "gamma": rng.uniform(0.5, 1.5, size=3),
                "beta": rng.normal(size=3),
                "rm": np.zeros(3),
                "rv": np.ones(3),
                "t": rng.normal(size=(4, 3, 2, 2)),
            },
            ["x", "gamma", "beta"],
        ),
        "batchnorm-inference": (
            _sq_loss(g.batchnorm(a, gamma, beta, rm, rv, training=False)),
            {
                "a": rng.normal(size=(5, 3)),
                "gamma": rng.uniform(0.5, 1.5, size=3),
                "beta": rng.normal(size=3),
                "rm": rng.normal(size=3),
                "rv": rng.uniform(0.5, 2.0, size=3),
                "t": rng.normal(size=(5, 3)),
            },
            ["a", "gamma", "beta"],
        ),
        "maxpool2d": (
            _sq_loss(g.maxpool2d(x, 2)),
            {"x": rng.normal(size=(1, 2, 4, 4)), "t": rng.normal(size=(1, 2, 2, 2))},
            ["x"],
        ),
        "gap-flatten": (
            _sq_loss(g.flatten(g.global_avg_pool(x))),
            {"x": rng.normal(size=(2, 3, 4, 4)), "t": rng.normal(size=(2, 3))},
            ["x"],
        ),
        "softmax-cross-entropy": (
            g.softmax_cross_entropy(a, labels),
            {"a": rng.normal(size=(4, 5)), "labels": np.array([0, 3, 4, 1])},
            ["a"],
        ),
        "index-select": (
            _sq_loss(g.index_select(a, [1, 4, 4])),
            {"a": rng.normal(size=(3, 6)), "t": rng.normal(size=(3, 3))},
            ["a"],
        ),
        "clamp": (
            _sq_loss(g.clamp(a, -0.5, 0.5)),
            {"a": rng.normal(size=(4, 4)), "t": rng.normal(size=(4, 4))},
            ["a"],
        ),
    }


CASES = _cases()


@pytest.mark.parametrize("name", sorted(CASES))
@pytest.mark.parametrize("mode", ["64", "32"])
def test_gradients_match_central_differences(name, mode):
    loss, inputs, wrt = CASES[name]
    report = check_gradients(loss, inputs, probes=60, mode=mode, wrt=wrt)
    assert report.skipped < report.probes
    assert report.passed, f"{name}: max relative error {report.max_rel_error:.3e} at {report.worst}"


def test_composite_network_gradients():
    x, w1, w2 = g.placeholder("x"), g.placeholder("w1"), g.placeholder("w2")
    gamma, beta, rm, rv = (g.placeholder(n) for n in ("gamma", "beta", "rm", "rv"))
    h = g.relu(g.batchnorm(g.conv2d(x, w1, 1, 1), gamma, beta, rm, rv, training=True))
    h = g.flatten(g.global_avg_pool(g.maxpool2d(h, 2)))
    logits = g.matmul(h, w2, transpose_b=True)
    loss = g.softmax_cross_entropy(logits, g.placeholder("labels"))
    inputs = {
        "x": rng.uniform(0, 1, size=(3, 2, 4, 4)),
        "w1": rng.normal(size=(3, 2, 3, 3)),
        "w2": rng.normal(size=(4, 3)),
        "gamma": np.ones(3),
        "beta": np.zeros(3),
        "rm": np.zeros(3),
        "rv": np.ones(3),
        "labels": np.array([0, 2, 3]),
    }
    report = check_gradients(loss, inputs, probes=100, mode="64", wrt=["x", "w1", "w2", "gamma", "beta"])
    assert report.passed, report


def test_evaluate_is_bit_identical():
    a, b = g.placeholder("a"), g.placeholder("b")
    root = g.relu(g.matmul(a, b))
    inputs = {"a": rng.normal(size=(4, 3)), "b": rng.normal(size=(3, 2))}
    first = evaluate(root, inputs).data
    second = evaluate(root, inputs).data
    assert first.tobytes() == second.tobytes()


def test_unbound_input_is_named():
    root = g.add(g.placeholder("a"), g.placeholder("missing"))
    with pytest.raises(UnboundInputError, match="missing"):
        evaluate(root, {"a": np.ones(2)})


def test_gradient_needs_scalar_loss():
    a = g.placeholder("a")
    root = g.relu(a)
    tape = Tape()
    tape.evaluate(root, {"a": np.ones((2, 2))})
    with pytest.raises(NotScalarError):
        tape.gradient_wrt_input(root, "a")


def test_shape_error_carries_op_kind_and_shapes():
    root = g.matmul(g.placeholder("a"), g.placeholder("b"))
    with pytest.raises(ShapeError) as info:
        evaluate(root, {"a": np.ones((2, 3)), "b": np.ones((4, 2))})
    assert info.value.kind == "matmul"
    assert info.value.shapes == ((2, 3), (4, 2))


def test_input_off_the_loss_path_gets_zero_gradient():
    a, b = g.placeholder("a"), g.placeholder("b")
    loss = g.mean_reduce(a)
    tape = Tape()
    tape.evaluate(loss, {"a": np.ones(3), "b": np.ones(2)})
    # b is bound but never reached from the loss
    grads = tape.gradients(loss, ["a", "b"])
    assert grads["b"].meta["on_path"] is False
    np.testing.assert_array_equal(grads["b"].data, np.zeros(2))
    np.testing.assert_allclose(grads["a"].data, np.full(3, 1 / 3), rtol=1e-6)


def test_clamp_blocks_gradient_outside_interval():
    a = g.placeholder("a")
    loss = g.mean_reduce(g.clamp(a, 0.0, 1.0))
    tape = Tape(np.float64)
    tape.evaluate(loss, {"a": np.array([-0.5, 0.5, 1.5])})
    np.testing.assert_array_equal(tape.gradient_wrt_input(loss, "a").data, [0.0, 1 / 3, 0.0])


def test_gradient_wrt_params_skips_frozen_and_untracked():
    a, w = g.placeholder("a"), g.placeholder("w")
    loss = g.mean_reduce(g.matmul(a, w))
    tape = Tape()
    tape.evaluate(
        loss,
        {
            "a": Tensor(np.ones((2, 3))),
            "w": Tensor(np.ones((3, 1)), requires_grad=True),
        },
    )
    assert set(tape.gradient_wrt_params(loss)) == {"w"}
    assert tape.gradient_wrt_params(loss, frozen={"w"}) == {}


def test_tensor_data_is_read_only():
    t = Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        t.data[0] = 3.0
    assert t.dtype == np.float32
    assert Tensor([1, 2]).dtype == np.int64


def test_relu_probes_at_zero_are_skipped_and_counted():
    loss = g.mean_reduce(g.relu(g.placeholder("a")))
    flat = check_gradients(loss, {"a": np.zeros(4)}, probes=10, mode="64")
    assert flat.skipped == 10
    assert flat.max_rel_error == 0.0 and flat.passed

    values = np.array([0.0, 1.5, -2.0, 0.7])
    report = check_gradients(loss, {"a": values}, probes=40, mode="64", seed=3)
    at_zero = int(np.sum(np.random.default_rng(3).integers(0, 4, size=40) == 0))
    assert report.skipped == at_zero
    assert report.passed


@pytest.mark.parametrize("stride, padding", [(1, 0), (1, 1), (2, 1), (3, 2)])
def test_conv2d_matches_explicit_loop(stride, padding):
    x = rng.normal(size=(2, 3, 7, 6))
    w = rng.normal(size=(4, 3, 3, 2))
    out = evaluate(g.conv2d(g.placeholder("x"), g.placeholder("w"), stride, padding), {"x": x, "w": w}, np.float64)
    np.testing.assert_allclose(out.data, naive_conv2d(x, w, stride, padding), rtol=1e-12, atol=1e-12)


def test_numpy_returns_a_writable_copy():
    t = Tensor([1.0, 2.0])
    copy = t.numpy()
    copy[0] = 5.0
    assert t.data[0] == 1.0
    assert copy.dtype == np.float32
