"""Trainable convolutional child network built from a discrete architecture.

Layer ``i`` (for ``i > 0``) concatenates its sequential input with every skip
source, subsampled to its own resolution, and passes the stack through a
ReLU-conv1x1-batchnorm adapter that sets the channel count. The operator
block follows. Reduction layers halve the resolution inside their adapter.
Layer 0 applies its operator directly to the image. The head is global
average pooling and one linear classifier.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..nn import NumericError, ParamSet, adam_step, cosine_lr, he_init, nesterov_step
from ..nn.conv import (
    SEP_KERNEL,
    BNStats,
    batchnorm,
    batchnorm_backward,
    conv_ops,
    conv_ops_backward,
    global_avg_pool,
    global_avg_pool_backward,
    pointwise_conv,
    pointwise_conv_backward,
)
from ..nn.layers import dense, dense_backward, relu, relu_backward, softmax_cross_entropy
from ..nn.optim import LrSchedule
from ..space import Architecture, OperatorKind
from .base import EvalBudget, EvaluationFailed, Reward
from .data import DatasetSplit, augment

log = logging.getLogger(__name__)


class BuildError(ValueError):
    pass


def default_reductions(layer_count: int) -> list[int]:
    return sorted({r for r in (layer_count // 3, 2 * layer_count // 3) if r > 0})


@dataclass
class LayerPlan:
    index: int
    op: OperatorKind
    sources: list  # layer indices feeding the adapter, sequential input first
    factors: list  # spatial subsampling per source
    in_channels: int  # channels entering the operator block
    out_channels: int
    stage: int


@dataclass
class ChildNet:
    arch: Architecture
    plans: list
    params: ParamSet
    classes: int
    bn: dict = field(default_factory=dict)

    @property
    def num_params(self) -> int:
        return self.params.size

    # -- forward ------------------------------------------------------------

    def forward(self, x, training: bool):
        outs, caches = [], []
        for plan in self.plans:
            i = plan.index
            c = {}
            if i == 0:
                h = x
            else:
                parts = [outs[j][:, :, ::f, ::f] for j, f in zip(plan.sources, plan.factors)]
                cat = np.concatenate(parts, axis=1)
                c["cat_shapes"] = [p.shape for p in parts]
                r = relu(cat)
                z, c["adapt_conv"] = pointwise_conv(r, self.params[f"L{i}.adapter.w"])
                h, c["adapt_bn"] = batchnorm(
                    z, self.params[f"L{i}.adapter.gamma"], self.params[f"L{i}.adapter.beta"],
                    self.bn[f"L{i}.adapter"], training,
                )
                c["cat"] = cat
            if plan.op in SEP_KERNEL:
                # layer 0 sees raw pixels, so it skips the leading ReLU
                r = h if i == 0 else relu(h)
                z, c["op"] = conv_ops(self.params.params, r, plan.op, prefix=f"L{i}.op.")
                y, c["op_bn"] = batchnorm(
                    z, self.params[f"L{i}.op.gamma"], self.params[f"L{i}.op.beta"],
                    self.bn[f"L{i}.op"], training,
                )
                c["op_in"] = h
            else:
                y, c["op"] = conv_ops(self.params.params, h, plan.op)
            if y.shape[1] != plan.out_channels:
                raise BuildError(f"layer {i} produced {y.shape[1]} channels, planned {plan.out_channels}")
            outs.append(y)
            caches.append(c)
        top = relu(outs[-1])
        pooled, gshape = global_avg_pool(top)
        logits, hin = dense(self.params["head.W"], self.params["head.b"], pooled)
        return logits, (outs, caches, top, gshape, hin)

    def backward(self, dlogits, cache):
        outs, caches, top, gshape, hin = cache
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        grads["head.W"], grads["head.b"], dpooled = dense_backward(dlogits, self.params["head.W"], hin)
        douts = [None] * len(outs)
        douts[-1] = relu_backward(global_avg_pool_backward(dpooled, gshape), outs[-1])
        for plan in reversed(self.plans):
            i = plan.index
            c = caches[i]
            dy = douts[i]
            if dy is None:
                continue  # output unused downstream
            if plan.op in SEP_KERNEL:
                dg, db, dz = batchnorm_backward(dy, c["op_bn"])
                grads[f"L{i}.op.gamma"] += dg
                grads[f"L{i}.op.beta"] += db
                pg, dr = conv_ops_backward(dz, c["op"], prefix=f"L{i}.op.")
                for k, v in pg.items():
                    grads[k] += v
                dh = dr if i == 0 else relu_backward(dr, c["op_in"])
            else:
                _, dh = conv_ops_backward(dy, c["op"])
            if i == 0:
                continue
            dg, db, dz = batchnorm_backward(dh, c["adapt_bn"])
            grads[f"L{i}.adapter.gamma"] += dg
            grads[f"L{i}.adapter.beta"] += db
            dw, dr = pointwise_conv_backward(dz, c["adapt_conv"])
            grads[f"L{i}.adapter.w"] += dw
            dcat = relu_backward(dr, c["cat"])
            offset = 0
            for j, f, shape in zip(plan.sources, plan.factors, c["cat_shapes"]):
                part = dcat[:, offset : offset + shape[1]]
                offset += shape[1]
                full = np.zeros(outs[j].shape)
                full[:, :, ::f, ::f] = part
                douts[j] = full if douts[j] is None else douts[j] + full
        return grads

    def loss_and_grads(self, x, y):
        logits, cache = self.forward(x, training=True)
        loss, dlogits = softmax_cross_entropy(logits, y)
        return loss, self.backward(dlogits, cache), logits

    def predict(self, x, batch_size: int = 256):
        out = []
        for s in range(0, len(x), batch_size):
            out.append(self.forward(x[s : s + batch_size], training=False)[0])
        return np.concatenate(out).argmax(axis=1)


def plan_layers(arch: Architecture, filters: int, reductions=None, double_at_reduction=True, in_channels=3):
    L = len(arch)
    reductions = default_reductions(L) if reductions is None else sorted(set(reductions))
    if any(r < 1 or r >= L for r in reductions):
        raise BuildError(f"reduction layers {reductions} must lie in [1, {L - 1}]")
    plans = []
    for i, lay in enumerate(arch.layers):
        stage = sum(r <= i for r in reductions)
        width = filters * (2**stage if double_at_reduction else 1)
        if i == 0:
            sources, factors = [], []
            cin = in_channels
        else:
            sources = [i - 1] + sorted(lay.skips)
            factors = [2 ** (stage - plans[j].stage) for j in sources]
            cin = width
        cout = width if (i > 0 or lay.op in SEP_KERNEL) else cin
        plans.append(LayerPlan(i, lay.op, sources, factors, cin, cout, stage))
    return plans


def build_child(
    arch: Architecture,
    filters: int = 40,
    classes: int = 10,
    reductions=None,
    double_at_reduction: bool = True,
    seed: int = 0,
    in_channels: int = 3,
) -> ChildNet:
    """Instantiate and He-initialize a child network for ``arch``."""
    plans = plan_layers(arch, filters, reductions, double_at_reduction, in_channels)
    rng = np.random.default_rng(seed)
    params = {}
    bn = {}
    for p in plans:
        i = p.index
        if i > 0:
            adapter_in = sum(plans[j].out_channels for j in p.sources)
            params[f"L{i}.adapter.w"] = he_init((p.in_channels, adapter_in), adapter_in, rng)
            params[f"L{i}.adapter.gamma"] = np.ones(p.in_channels)
            params[f"L{i}.adapter.beta"] = np.zeros(p.in_channels)
            bn[f"L{i}.adapter"] = BNStats()
        if p.op in SEP_KERNEL:
            k = SEP_KERNEL[p.op]
            params[f"L{i}.op.dw"] = he_init((p.in_channels, k, k), k * k, rng)
            params[f"L{i}.op.pw"] = he_init((p.out_channels, p.in_channels), p.in_channels, rng)
            params[f"L{i}.op.gamma"] = np.ones(p.out_channels)
            params[f"L{i}.op.beta"] = np.zeros(p.out_channels)
            bn[f"L{i}.op"] = BNStats()
    last = plans[-1].out_channels
    params["head.W"] = he_init((classes, last), last, rng)
    params["head.b"] = np.zeros(classes)
    return ChildNet(arch, plans, ParamSet(params), classes, bn)


def accuracy(net: ChildNet, x, y) -> float:
    return float(np.mean(net.predict(x) == y)) if len(y) else 0.0


def train_child(
    net: ChildNet,
    train_x,
    train_y,
    eval_x,
    eval_y,
    epochs: int,
    batch_size: int = 128,
    seed: int = 0,
    schedule: LrSchedule = LrSchedule(),
    momentum: float = 0.9,
    weight_decay: float = 1e-4,
    cutout: int = 0,
) -> Reward:
    """Nesterov SGD under a per-batch cosine schedule; reward is the best held-out accuracy."""
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if len(train_y) == 0:
        raise ValueError("empty training set")
    t_start = time.perf_counter()
    rng = np.random.default_rng(seed)
    n = len(train_y)
    nb = math.ceil(n / batch_size)
    losses, accs = [], []
    for epoch in range(epochs):
        perm = rng.permutation(n)
        total = 0.0
        for b in range(nb):
            idx = perm[b * batch_size : (b + 1) * batch_size]
            xb = augment(train_x[idx], rng, cutout=cutout)
            loss, grads, _ = net.loss_and_grads(xb, train_y[idx])
            if not math.isfinite(loss):
                raise EvaluationFailed("training diverged", {"epoch": epoch, "batch": b})
            lr = cosine_lr(schedule, epoch + b / nb)
            try:
                nesterov_step(net.params, grads, lr, momentum, weight_decay)
            except NumericError as exc:
                raise EvaluationFailed(str(exc), {"epoch": epoch, "batch": b}) from exc
            if not all(np.isfinite(v).all() for v in net.params.params.values()):
                raise EvaluationFailed("parameters became non-finite", {"epoch": epoch, "batch": b})
            total += loss * len(idx)
        losses.append(total / n)
        accs.append(accuracy(net, eval_x, eval_y))
        log.debug("epoch %d loss=%.4f acc=%.4f", epoch + 1, losses[-1], accs[-1])
    return Reward(
        max(accs),
        {
            "loss_curve": losses,
            "accuracy_curve": accs,
            "last_accuracy": accs[-1],
            "num_params": net.num_params,
            "epochs": epochs,
            "wall_time_s": time.perf_counter() - t_start,
        },
    )


class ChildEvaluator:
    """Reward = best validation accuracy of the child trained for ``budget.epochs_e1`` epochs."""

    def __init__(
        self,
        data: DatasetSplit,
        filters: int = 40,
        classes: int = 10,
        double_at_reduction: bool = True,
        cutout: int = 0,
        schedule: LrSchedule = LrSchedule(),
        momentum: float = 0.9,
        weight_decay: float = 1e-4,
    ):
        self.data = data
        self.filters = filters
        self.classes = classes
        self.double_at_reduction = double_at_reduction
        self.cutout = cutout
        self.schedule = schedule
        self.momentum = momentum
        self.weight_decay = weight_decay

    @classmethod
    def from_config(cls, cfg, data: DatasetSplit) -> "ChildEvaluator":
        return cls(
            data,
            cfg.filters,
            cfg.classes,
            cfg.double_at_reduction,
            cfg.cutout,
            LrSchedule(cfg.l_max, cfg.l_min, cfg.t0),
            cfg.momentum,
            cfg.weight_decay,
        )

    def build(self, arch: Architecture, seed: int) -> ChildNet:
        return build_child(arch, self.filters, self.classes, None, self.double_at_reduction, seed)

    def _train(self, arch, budget, epochs, train_x, train_y, eval_x, eval_y) -> Reward:
        net = self.build(arch, budget.seed)
        return train_child(
            net, train_x, train_y, eval_x, eval_y, epochs, budget.batch_size, budget.seed,
            self.schedule, self.momentum, self.weight_decay, self.cutout,
        )

    def evaluate(self, arch: Architecture, budget: EvalBudget) -> Reward:
        d = self.data
        return self._train(arch, budget, budget.epochs_e1, d.train_x, d.train_y, d.val_x, d.val_y)

    def final(self, arch: Architecture, budget: EvalBudget) -> Reward:
        """Retrain from scratch on train + validation for ``epochs_e2``; score once on test."""
        d = self.data
        x = np.concatenate([d.train_x, d.val_x])
        y = np.concatenate([d.train_y, d.val_y])
        net = self.build(arch, budget.seed)
        r = train_child(
            net, x, y, d.val_x[:0], d.val_y[:0], budget.epochs_e2, budget.batch_size, budget.seed,
            self.schedule, self.momentum, self.weight_decay, self.cutout,
        )
        test_acc = accuracy(net, d.test_x, d.test_y)
        meta = {k: v for k, v in r.metadata.items() if k not in ("accuracy_curve", "last_accuracy")}
        return Reward(test_acc, {**meta, "test_accuracy": test_acc, "test_error": 1.0 - test_acc})
