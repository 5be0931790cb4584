import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gradcases import CASES
from nases.nn import (
    CheckpointError,
    LrSchedule,
    NumericError,
    ParamSet,
    ShapeError,
    adam_step,
    cosine_lr,
    finite_diff_grad,
    he_init,
    max_rel_error,
    nesterov_step,
)
from nases.nn.conv import (
    BNStats,
    ConfigError,
    MissingStatsError,
    avg_pool,
    batchnorm,
    conv_ops,
    depthwise_conv,
    max_pool,
    max_pool_backward,
)
from nases.nn.layers import dense, dense_backward, lstm_step, mse, softmax, softmax_cross_entropy
from nases.space import OperatorKind


@pytest.mark.parametrize("name", sorted(CASES))
def test_gradient_matches_finite_differences(name):
    assert CASES[name](np.random.default_rng(0)) < 1e-4


def test_max_rel_error_definition():
    assert max_rel_error([2.0, 0.1], [2.2, 0.3]) == pytest.approx(0.2)
    assert max_rel_error([], []) == 0.0


def test_finite_diff_on_quadratic_restores_input():
    x = np.array([1.0, -2.0, 3.0])
    g = finite_diff_grad(lambda v: float(np.sum(v**2)), x)
    np.testing.assert_allclose(g, 2 * x, rtol=1e-8)
    np.testing.assert_array_equal(x, [1.0, -2.0, 3.0])


def test_finite_diff_rejects_nonfinite():
    with pytest.raises(NumericError):
        finite_diff_grad(lambda v: math.sqrt(v[0]) if v[0] >= 0 else math.nan, np.array([5e-5]))


def test_dense_shape_mismatch():
    with pytest.raises(ShapeError):
        dense(np.zeros((2, 3)), np.zeros(2), np.zeros((1, 4)))


def test_lstm_zero_weights_closed_form():
    H = 2
    h, c, _ = lstm_step(np.zeros((8, 1)), np.zeros((8, H)), np.zeros(8), np.ones((1, 1)), np.zeros((1, H)), np.ones((1, H)))
    # every gate is sigmoid(0) = 0.5 and the candidate is tanh(0) = 0
    np.testing.assert_allclose(c, 0.5)
    np.testing.assert_allclose(h, 0.5 * np.tanh(0.5))


def test_losses_known_values():
    assert mse(np.array([1.0, 3.0]), np.array([0.0, 0.0]))[0] == pytest.approx(5.0)
    loss, _ = softmax_cross_entropy(np.zeros((4, 10)), np.arange(4))
    assert loss == pytest.approx(math.log(10))
    big = softmax(np.array([[1000.0, 0.0]]))
    assert np.all(np.isfinite(big))


def test_depthwise_identity_kernel():
    x = np.random.default_rng(0).normal(size=(1, 2, 5, 5))
    w = np.zeros((2, 3, 3))
    w[:, 1, 1] = 1.0
    np.testing.assert_allclose(depthwise_conv(x, w)[0], x)


def test_stride_and_shapes():
    x = np.ones((2, 3, 7, 7))
    for kind in OperatorKind:
        params = {"dw": np.ones((3, 5, 5)) if kind is OperatorKind.SEP_CONV_5X5 else np.ones((3, 3, 3)), "pw": np.ones((4, 3))}
        y1, _ = conv_ops(params, x, kind, 1)
        y2, _ = conv_ops(params, x, kind, 2)
        assert y1.shape[2:] == (7, 7) and y2.shape[2:] == (4, 4)
    with pytest.raises(ConfigError):
        conv_ops({}, x, OperatorKind.IDENTITY, stride=3)


def test_avg_pool_excludes_padding():
    x = np.ones((1, 1, 3, 3))
    np.testing.assert_allclose(avg_pool(x)[0], 1.0)


def test_max_pool_routes_to_argmax():
    x = np.zeros((1, 1, 3, 3))
    x[0, 0, 1, 1] = 5.0
    y, cache = max_pool(x)
    np.testing.assert_allclose(y, 5.0)
    dx = max_pool_backward(np.ones_like(y), cache)
    assert dx[0, 0, 1, 1] == 9 and dx.sum() == 9


def test_batchnorm_running_stats_and_inference():
    rng = np.random.default_rng(0)
    stats = BNStats()
    g, b = np.ones(2), np.zeros(2)
    with pytest.raises(MissingStatsError):
        batchnorm(rng.normal(size=(4, 2)), g, b, stats, training=False)
    x1 = rng.normal(size=(8, 2)) + 3
    out, _ = batchnorm(x1, g, b, stats, training=True)
    np.testing.assert_allclose(out.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(stats.mean, x1.mean(axis=0))
    x2 = rng.normal(size=(8, 2))
    batchnorm(x2, g, b, stats, training=True)
    np.testing.assert_allclose(stats.mean, 0.9 * x1.mean(axis=0) + 0.1 * x2.mean(axis=0))


# -- optimizers and schedule --------------------------------------------------


def test_adam_first_step_moves_by_lr():
    ps = ParamSet({"w": np.array([1.0, -1.0])})
    adam_step(ps, {"w": np.array([3.0, -0.2])}, lr=0.01)
    # bias-corrected first step is lr * sign(g) up to eps
    np.testing.assert_allclose(ps["w"], [0.99, -0.99], atol=1e-8)
    assert ps.step == 1


def test_nesterov_hand_computed():
    ps = ParamSet({"w": np.array([1.0])})
    nesterov_step(ps, {"w": np.array([0.5])}, lr=0.1, momentum=0.9, weight_decay=0.0)
    # v = 0.5; p -= 0.1 * (0.5 + 0.9 * 0.5)
    np.testing.assert_allclose(ps["w"], [1.0 - 0.095])
    nesterov_step(ps, {"w": np.array([0.5])}, lr=0.1, momentum=0.9, weight_decay=0.0)
    # v = 0.9 * 0.5 + 0.5 = 0.95
    np.testing.assert_allclose(ps["w"], [0.905 - 0.1 * (0.5 + 0.9 * 0.95)])


def test_optimizer_rejects_nonfinite_without_mutation():
    ps = ParamSet({"w": np.array([1.0, 2.0])})
    with pytest.raises(NumericError):
        adam_step(ps, {"w": np.array([np.nan, 1.0])}, 0.1)
    np.testing.assert_array_equal(ps["w"], [1.0, 2.0])
    assert ps.step == 0


def test_cosine_schedule_golden_values():
    s = LrSchedule()
    assert cosine_lr(s, 0) == pytest.approx(0.05)
    assert cosine_lr(s, 5) == pytest.approx(0.0255)
    assert cosine_lr(s, 9.999) == pytest.approx(0.001, abs=1e-5)
    assert cosine_lr(s, 10) == pytest.approx(0.05)  # warm restart


@given(st.floats(0, 1000))
def test_cosine_schedule_bounded_and_periodic(t):
    s = LrSchedule()
    lr = cosine_lr(s, t)
    assert s.l_min - 1e-12 <= lr <= s.l_max + 1e-12
    assert cosine_lr(s, t + s.t0) == pytest.approx(lr, abs=1e-9)


def test_schedule_validation():
    with pytest.raises(ValueError):
        LrSchedule(0.001, 0.05)
    with pytest.raises(ValueError):
        cosine_lr(LrSchedule(), -1)


def test_he_init_std():
    w = he_init((100_000,), 50, 0)
    assert abs(w.std() / math.sqrt(2 / 50) - 1) < 0.03
    np.testing.assert_array_equal(w, he_init((100_000,), 50, 0))


# -- checkpoints --------------------------------------------------------------


def _sample_paramset():
    ps = ParamSet({"a": np.arange(6.0).reshape(2, 3), "b": np.array(2.5), "c": np.zeros((0, 4))})
    adam_step(ps, {"a": np.ones((2, 3)), "b": np.array(1.0), "c": np.zeros((0, 4))}, 0.1)
    return ps


def test_checkpoint_round_trip(tmp_path):
    ps = _sample_paramset()
    ps.save(tmp_path / "p.bin")
    back = ParamSet.load(tmp_path / "p.bin")
    assert back.equal(ps) and back.step == ps.step
    np.testing.assert_array_equal(back.state["a"]["m"], ps.state["a"]["m"])
    assert back.to_bytes() == ps.to_bytes()
    assert back.digest() == ps.digest()


def test_checkpoint_layout():
    ps = ParamSet({"w": np.array([1.5, -2.0])})
    raw = ps.to_bytes()
    assert raw[:8] == b"NASESPK1"
    assert struct.unpack_from("<Q", raw, 8)[0] == 1 and raw[16:17] == b"w"
    assert struct.unpack_from("<QQ", raw, 17) == (1, 2)
    assert struct.unpack_from("<2d", raw, 33) == (1.5, -2.0)


@given(arrays(np.float64, st.tuples(st.integers(0, 3), st.integers(1, 3)), elements=st.floats(-1e6, 1e6)))
def test_checkpoint_property(arr):
    ps = ParamSet({"x": arr})
    assert ParamSet.from_bytes(ps.to_bytes()).equal(ps)


def test_checkpoint_corruption(tmp_path):
    raw = _sample_paramset().to_bytes()
    with pytest.raises(CheckpointError):
        ParamSet.from_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(CheckpointError):
        ParamSet.from_bytes(raw[:-5])
    with pytest.raises(CheckpointError):
        ParamSet.load(tmp_path / "missing.bin")


def test_paramset_rejects_nonfinite_and_reserved_names():
    with pytest.raises(NumericError):
        ParamSet({"w": np.array([np.inf])})
    with pytest.raises(KeyError):
        ParamSet({"w@m": np.zeros(1)})


# -- closed-form kernel examples ----------------------------------------------


def test_dense_identity_and_bias():
    x = np.random.default_rng(0).normal(size=(2, 3))
    np.testing.assert_array_equal(dense(np.eye(3), np.zeros(3), x)[0], x)
    np.testing.assert_array_equal(dense(np.ones((2, 3)), np.array([4.0, 5.0]), np.zeros((1, 3)))[0], [[4.0, 5.0]])


def test_lstm_all_zero_gives_zero_state():
    h, c, _ = lstm_step(np.zeros((8, 3)), np.zeros((8, 2)), np.zeros(8), np.ones((1, 3)), np.zeros((1, 2)), np.zeros((1, 2)))
    assert np.all(h == 0) and np.all(c == 0)


def test_pool_examples():
    np.testing.assert_allclose(avg_pool(np.full((1, 1, 5, 5), 7.0))[0], 7.0)
    spike = np.zeros((1, 1, 5, 5))
    spike[0, 0, 2, 2] = 1.0
    expected = np.zeros((5, 5))
    expected[1:4, 1:4] = 1.0
    np.testing.assert_array_equal(max_pool(spike)[0][0, 0], expected)
    x = np.random.default_rng(0).normal(size=(1, 2, 4, 4))
    assert conv_ops({}, x, OperatorKind.IDENTITY)[0] is x


def test_batchnorm_constant_channel_gives_shift():
    x = np.full((4, 2, 3, 3), 3.0)
    out, _ = batchnorm(x, np.ones(2), np.array([0.25, -1.0]), BNStats(), training=True)
    np.testing.assert_allclose(out[:, 0], 0.25)
    np.testing.assert_allclose(out[:, 1], -1.0)
    y, _ = batchnorm(np.random.default_rng(1).normal(size=(2, 3, 4, 4)), np.ones(3), np.zeros(3), BNStats(), True)
    np.testing.assert_allclose(y.var(axis=(0, 2, 3)), 1, atol=1e-4)


def test_loss_and_activation_examples():
    x = np.random.default_rng(2).normal(size=(5, 7))
    assert mse(x, x)[0] == 0.0
    assert mse(np.zeros(2), np.ones(2))[0] == 1.0
    np.testing.assert_allclose(softmax(x).sum(axis=1), 1, atol=1e-9)
    from nases.nn.layers import sigmoid

    s = sigmoid(np.array([-30.0, 0.0, 30.0]))
    assert np.all((s > 0) & (s < 1)) and s[1] == 0.5
    with pytest.raises(ShapeError):
        mse(np.zeros(2), np.zeros(3))


def test_adam_examples():
    ps = ParamSet({"w": np.array([2.0])})
    adam_step(ps, {"w": np.array([0.0])}, 1e-5)
    assert ps["w"][0] == 2.0 and ps.step == 1
    ps = ParamSet({"w": np.array([0.0])})
    adam_step(ps, {"w": np.array([1.0])}, 1e-5)
    assert ps["w"][0] == pytest.approx(-1e-5 / (1 + 1e-8), rel=1e-12)
    trace = []
    for _ in range(1000):
        adam_step(ps, {"w": np.array([1.0])}, 1e-3)
        trace.append(ps["w"][0])
    assert all(b < a for a, b in zip(trace, trace[1:]))


def test_nesterov_examples():
    ps = ParamSet({"w": np.array([2.0])})
    nesterov_step(ps, {"w": np.array([0.0])}, lr=0.1, momentum=0.9, weight_decay=1e-4)
    assert ps["w"][0] == pytest.approx(2.0 - 0.1 * 1e-4 * 2.0 * 1.9)
    ps = ParamSet({"w": np.array([2.0])})
    nesterov_step(ps, {"w": np.array([0.5])}, lr=0.1, momentum=0.0, weight_decay=0.0)
    assert ps["w"][0] == pytest.approx(1.95)
    ps = ParamSet({"w": np.array([0.0])})
    nesterov_step(ps, {"w": np.array([1.0])}, 0.1, 0.9, 0.0)
    first = -ps["w"][0]
    nesterov_step(ps, {"w": np.array([1.0])}, 0.1, 0.9, 0.0)
    assert -ps["w"][0] - first > first


def test_he_init_examples():
    w = he_init((100_000,), 100, 3)
    assert 0.138 <= w.std() <= 0.145
    assert he_init((200_000,), 8, 1).std() == pytest.approx(0.5, rel=0.01)


def test_finite_diff_examples():
    g = finite_diff_grad(lambda p: float(p[0] ** 2), np.array([3.0]))
    assert abs(g[0] - 6) < 1e-6
    assert finite_diff_grad(lambda p: 4.0, np.array([1.0, 2.0])).tolist() == [0.0, 0.0]
    W, b, x = (np.random.default_rng(5).normal(size=s) for s in ((4, 3), (4,), (2, 3)))
    dW, _, _ = dense_backward(np.ones((2, 4)), W, x)
    num = finite_diff_grad(lambda w: float(dense(w, b, x)[0].sum()), W)
    assert max_rel_error(dW, num) < 1e-5
