"""Analytic-versus-finite-difference cases shared by the unit and acceptance suites.

Each case returns the largest relative error over every gradient it checks.
Scalar objectives contract the output with a fixed random tensor so every
output element contributes.
"""
import numpy as np

from nases.autoencoder import AutoencoderModel, decoder_backward, decoder_forward, encoder_backward, encoder_forward
from nases.controller import ControllerModel, log_prob, log_prob_grad
from nases.nn import ParamSet, finite_diff_grad, max_rel_error
from nases.nn.conv import (
    BNStats,
    avg_pool,
    avg_pool_backward,
    batchnorm,
    batchnorm_backward,
    conv_ops,
    conv_ops_backward,
    depthwise_conv,
    depthwise_conv_backward,
    global_avg_pool,
    global_avg_pool_backward,
    max_pool,
    max_pool_backward,
    pointwise_conv,
    pointwise_conv_backward,
)
from nases.nn.layers import (
    dense,
    dense_backward,
    lstm_step,
    lstm_step_backward,
    mse,
    relu,
    relu_backward,
    sigmoid,
    sigmoid_backward,
    softmax,
    softmax_backward,
    softmax_cross_entropy,
    tanh_backward,
)
from nases.space import OperatorKind, SpaceConfig


def _worst(pairs):
    return max(max_rel_error(a, n) for a, n in pairs)


def case_dense(rng):
    W, b, x = rng.normal(size=(4, 3)), rng.normal(size=4), rng.normal(size=(5, 3))
    R = rng.normal(size=(5, 4))
    f = lambda: float(np.sum(dense(W, b, x)[0] * R))
    dW, db, dx = dense_backward(R, W, x)
    return _worst([(dW, finite_diff_grad(lambda _: f(), W)), (db, finite_diff_grad(lambda _: f(), b)),
                   (dx, finite_diff_grad(lambda _: f(), x))])


def case_activations(rng):
    x = rng.normal(size=(3, 4)) + 0.05  # keep relu inputs off the kink
    R = rng.normal(size=(3, 4))
    out = []
    for fwd, bwd in [
        (relu, lambda dy, y, x: relu_backward(dy, x)),
        (sigmoid, lambda dy, y, x: sigmoid_backward(dy, y)),
        (np.tanh, lambda dy, y, x: tanh_backward(dy, y)),
        (softmax, lambda dy, y, x: softmax_backward(dy, y)),
    ]:
        y = fwd(x)
        num = finite_diff_grad(lambda _: float(np.sum(fwd(x) * R)), x)
        out.append((bwd(R, y, x), num))
    return _worst(out)


def case_losses(rng):
    pred, target = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    _, g = mse(pred, target)
    e1 = max_rel_error(g, finite_diff_grad(lambda _: mse(pred, target)[0], pred))
    logits, labels = rng.normal(size=(6, 5)), rng.integers(0, 5, size=6)
    _, g = softmax_cross_entropy(logits, labels)
    e2 = max_rel_error(g, finite_diff_grad(lambda _: softmax_cross_entropy(logits, labels)[0], logits))
    return max(e1, e2)


def case_lstm_step(rng):
    I, H, B = 3, 4, 2
    Wx, Wh, b = rng.normal(size=(4 * H, I)) * 0.5, rng.normal(size=(4 * H, H)) * 0.5, rng.normal(size=4 * H)
    x, h, c = rng.normal(size=(B, I)), rng.normal(size=(B, H)), rng.normal(size=(B, H))
    Rh, Rc = rng.normal(size=(B, H)), rng.normal(size=(B, H))

    def f(_):
        hn, cn, _c = lstm_step(Wx, Wh, b, x, h, c)
        return float(np.sum(hn * Rh) + np.sum(cn * Rc))

    cache = lstm_step(Wx, Wh, b, x, h, c)[2]
    grads = lstm_step_backward(Rh, Rc, Wx, Wh, cache)
    return _worst([(g, finite_diff_grad(f, arr)) for g, arr in zip(grads, (Wx, Wh, b, x, h, c))])


def case_conv_primitives(rng):
    out = []
    for stride in (1, 2):
        x = rng.normal(size=(2, 3, 6, 6))
        w = rng.normal(size=(3, 3, 3))
        y, cache = depthwise_conv(x, w, stride)
        R = rng.normal(size=y.shape)
        f = lambda _: float(np.sum(depthwise_conv(x, w, stride)[0] * R))
        dw, dx = depthwise_conv_backward(R, cache)
        out += [(dw, finite_diff_grad(f, w)), (dx, finite_diff_grad(f, x))]

        pw = rng.normal(size=(4, 3))
        y, cache = pointwise_conv(x, pw, stride)
        R = rng.normal(size=y.shape)
        f = lambda _: float(np.sum(pointwise_conv(x, pw, stride)[0] * R))
        dpw, dx = pointwise_conv_backward(R, cache)
        out += [(dpw, finite_diff_grad(f, pw)), (dx, finite_diff_grad(f, x))]

        for fwd, bwd in ((avg_pool, avg_pool_backward), (max_pool, max_pool_backward)):
            y, cache = fwd(x, stride)
            R = rng.normal(size=y.shape)
            out.append((bwd(R, cache), finite_diff_grad(lambda _: float(np.sum(fwd(x, stride)[0] * R)), x)))

    x = rng.normal(size=(2, 3, 4, 4))
    y, shape = global_avg_pool(x)
    R = rng.normal(size=y.shape)
    out.append((global_avg_pool_backward(R, shape), finite_diff_grad(lambda _: float(np.sum(global_avg_pool(x)[0] * R)), x)))
    return _worst(out)


def case_conv_ops(rng):
    out = []
    for kind in OperatorKind:
        for stride in (1, 2):
            x = rng.normal(size=(2, 3, 5, 5))
            params = {}
            if kind in (OperatorKind.SEP_CONV_3X3, OperatorKind.SEP_CONV_5X5):
                k = 3 if kind is OperatorKind.SEP_CONV_3X3 else 5
                params = {"dw": rng.normal(size=(3, k, k)), "pw": rng.normal(size=(4, 3))}
            y, cache = conv_ops(params, x, kind, stride)
            R = rng.normal(size=y.shape)
            f = lambda _: float(np.sum(conv_ops(params, x, kind, stride)[0] * R))
            grads, dx = conv_ops_backward(R, cache)
            out.append((dx, finite_diff_grad(f, x)))
            out += [(grads[k], finite_diff_grad(f, v)) for k, v in params.items()]
    return _worst(out)


def case_batchnorm(rng):
    out = []
    for shape in ((6, 3), (3, 2, 3, 3)):
        for training in (True, False):
            x = rng.normal(size=shape) * 2 + 1
            C = shape[1]
            gamma, beta = rng.normal(size=C), rng.normal(size=C)
            stats = BNStats(rng.normal(size=C), rng.uniform(0.5, 2, size=C))
            frozen = BNStats(stats.mean.copy(), stats.var.copy())
            R = rng.normal(size=shape)

            def f(_):
                s = BNStats(frozen.mean.copy(), frozen.var.copy())
                return float(np.sum(batchnorm(x, gamma, beta, s, training)[0] * R))

            _, cache = batchnorm(x, gamma, beta, stats, training)
            dg, db, dx = batchnorm_backward(R, cache)
            out += [(dg, finite_diff_grad(f, gamma)), (db, finite_diff_grad(f, beta)), (dx, finite_diff_grad(f, x))]
    return _worst(out)


def case_autoencoder(rng):
    space = SpaceConfig(3)
    ae = AutoencoderModel.create(space, embed_dim=3, hidden=4, seed=1)
    x = rng.uniform(size=(2, space.origin_dim))
    _, eg, dg = ae.loss_and_grads(x)
    out = []
    for ps, g in ((ae.encoder, eg), (ae.decoder, dg)):
        num = finite_diff_grad(lambda _: ae.loss_and_grads(x)[0], ps)
        out += [(g[k], num[k]) for k in num]
    return _worst(out)


def case_controller_log_prob(rng):
    space = SpaceConfig(2)
    ae = AutoencoderModel.create(space, embed_dim=3, hidden=4, seed=2)
    c = ControllerModel(ae.encoder.copy(), space, sigma=0.5)
    a = rng.uniform(size=space.origin_dim)
    action = rng.normal(size=c.embed_dim)
    g = log_prob_grad(c, a, action)
    num = finite_diff_grad(lambda _: log_prob(c, a, action), c.params)
    return _worst([(g[k], num[k]) for k in num])


def case_child_net(rng):
    from nases.evaluator.child import build_child
    from nases.space import Architecture, LayerSpec

    arch = Architecture((
        LayerSpec(OperatorKind.SEP_CONV_3X3),
        LayerSpec(OperatorKind.MAX_POOL_3X3, {0}),
        LayerSpec(OperatorKind.SEP_CONV_5X5, {0}),
        LayerSpec(OperatorKind.AVG_POOL_3X3, {1, 2}),
    ))
    net = build_child(arch, filters=2, classes=3, reductions=[2], seed=0, in_channels=2)
    x = rng.normal(size=(3, 2, 6, 6))
    y = rng.integers(0, 3, size=3)
    _, grads, _ = net.loss_and_grads(x, y)

    def f(_):
        logits, _c = net.forward(x, training=True)
        return softmax_cross_entropy(logits, y)[0]

    num = finite_diff_grad(f, net.params)
    return _worst([(grads[k], num[k]) for k in num])


CASES = {
    "dense": case_dense,
    "activations": case_activations,
    "losses": case_losses,
    "lstm_step": case_lstm_step,
    "conv_primitives": case_conv_primitives,
    "conv_ops": case_conv_ops,
    "batchnorm": case_batchnorm,
    "autoencoder": case_autoencoder,
    "controller_log_prob": case_controller_log_prob,
    "child_net": case_child_net,
}
