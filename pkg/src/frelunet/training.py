"""Initialization, SGD with momentum and weight-decay groups, learning-rate
schedule, and the epoch loop with metric capture.

Weights are initialized from the back-propagation variance condition
(1/2) * k^2 * d_out * Var[w] = 1, i.e. Var[w] = 2 / (k^2 * d_out) with
d_out the output channel count (a linear layer counts as a 1x1 conv).
Biases start at zero, batch-norm at gamma=1/beta=0, and activation
parameters at their kind defaults (frelu b = -1).

The optimizer folds weight decay into the gradient before the momentum
update: v <- m*v + (g + wd*w); w <- w - lr*v. Batch-norm scale/shift and
activation parameters form the no-decay group and skip the wd term.
"""

from dataclasses import dataclass, field

import numpy as np

from .data import BatchIterator
from .layers import Activation, BatchNorm, Conv2d, Dropout, Linear, ResidualBlock
from .tensor import Rng

# rng sub-stream tags used by one training run
STREAM_INIT = 0
STREAM_DROPOUT = 1


class NanGradientError(RuntimeError):
    """A parameter gradient went non-finite during an optimizer step."""


@dataclass
class InitPolicy:
    mode: str = "msra_backward"
    gain: float = 2.0

    def __post_init__(self):
        if self.gain <= 0:
            raise ValueError(f"gain must be > 0, got {self.gain}")

    def weight_variance(self, k, d_out):
        return self.gain / (k * k * d_out)

    def linear_weight_variance(self, fan_in):
        # Fully-connected layers use fan-in scaling: the backward (fan-out)
        # rule blows up for small output widths (a 2-unit embedding head
        # would get Var[w]=1 over a 1000+ fan-in and saturate on the first
        # forward pass, killing training).
        return self.gain / fan_in


def msra_weight_variance(k, d_out):
    """Weight variance keeping backward gradient variance flat: 2/(k^2*d_out)."""
    if k < 1 or d_out < 1:
        raise ValueError(f"need k >= 1 and d_out >= 1, got k={k}, d_out={d_out}")
    return 2.0 / (k * k * d_out)


def _init_layer(layer, policy, rng, counter):
    if isinstance(layer, Conv2d):
        var = policy.weight_variance(layer.k, layer.out_ch)
        layer.W[...] = rng.child(next(counter)).normal(0.0, np.sqrt(var), layer.W.shape)
        layer.bias[...] = 0.0
    elif isinstance(layer, Linear):
        var = policy.linear_weight_variance(layer.in_features)
        w = rng.child(next(counter)).normal(0.0, np.sqrt(var), layer.W.shape)
        # Zero the column sums: rectifier features are all-positive, so an
        # uncentered draw gives each output unit a random DC offset that
        # dwarfs the per-sample variation and can leave narrow layers (the
        # 2-unit embedding) born dead behind their own activation.
        layer.W[...] = w - w.mean(axis=0, keepdims=True)
        layer.bias[...] = 0.0
    elif isinstance(layer, BatchNorm):
        layer.gamma[...] = 1.0
        layer.beta[...] = 0.0
        layer.running_mean[...] = 0.0
        layer.running_var[...] = 1.0
    elif isinstance(layer, Activation):
        for pname, value in layer.base_spec.learnable_params().items():
            layer.values[pname][...] = value
    elif isinstance(layer, Dropout):
        layer.rng = rng.child(STREAM_DROPOUT, next(counter))
    elif isinstance(layer, ResidualBlock):
        for sub in layer.sublayers():
            _init_layer(sub, policy, rng, counter)


def init_network(net, policy, rng):
    """(Re)initialize all parameters in place; returns the network."""
    counter = iter(range(10_000))
    for layer in net.layers:
        _init_layer(layer, policy, rng, counter)
    net.zero_grads()
    return net


@dataclass
class LrSchedule:
    base_lr: float
    milestones: tuple = ()
    factor: float = 0.1

    def __post_init__(self):
        self.milestones = tuple(int(m) for m in self.milestones)
        if self.base_lr <= 0:
            raise ValueError(f"base_lr must be > 0, got {self.base_lr}")
        if not 0.0 < self.factor < 1.0:
            raise ValueError(f"factor must be in (0,1), got {self.factor}")
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ValueError(f"milestones must be strictly increasing, got {self.milestones}")


def lr_at(schedule, epoch):
    """base_lr * factor^(number of milestones <= epoch)."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    drops = sum(1 for m in schedule.milestones if m <= epoch)
    return schedule.base_lr * schedule.factor ** drops


class SgdState:
    """Momentum buffers aligned with the network's parameter slots."""

    def __init__(self, slots, momentum=0.9, weight_decay=1e-4):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocities = [np.zeros_like(value) for _, value, _, _ in slots]


def sgd_step(state, slots, lr):
    """One in-place update; decay-group slots get the wd*w term, others don't."""
    for v, (name, value, grad, decay) in zip(state.velocities, slots):
        if not np.all(np.isfinite(grad)):
            raise NanGradientError(f"non-finite gradient in {name}")
        g = grad + state.weight_decay * value if decay else grad
        v *= state.momentum
        v += g
        value -= lr * v


@dataclass
class TrainReport:
    """Per-epoch metrics (row 0 is the initialized, untrained model)."""

    rows: list = field(default_factory=list)
    param_columns: list = field(default_factory=list)
    status: str = "ok"
    network: object = None

    @property
    def columns(self):
        return ["epoch", "lr", "train_loss", "train_err", "test_err"] + self.param_columns

    @property
    def final_test_err(self):
        return self.rows[-1]["test_err"]

    def param_trace(self):
        return [{c: row[c] for c in ["epoch"] + self.param_columns} for row in self.rows]


def evaluate(net, dataset, batch_size=500):
    """Eval-mode mean loss and error rate over a dataset."""
    total_loss = 0.0
    wrong = 0
    n = len(dataset)
    for start in range(0, n, batch_size):
        xb = dataset.images[start:start + batch_size]
        yb = dataset.labels[start:start + batch_size]
        logits = net.forward(xb, train=False)
        total_loss += net.loss(logits, yb) * len(yb)
        wrong += int(np.sum(np.argmax(logits, axis=1) != yb))
    return total_loss / n, wrong / n


def train_network(net, train_ds, test_ds, seed, epochs, batch_size,
                  schedule, momentum=0.9, weight_decay=1e-4,
                  init_policy=None, explode_factor=10.0, explode_patience=3):
    """Run the SGD recipe and capture metrics after every epoch.

    Deterministic given all arguments (the seed drives initialization,
    dropout and batch order). Training train-loss/error are running
    averages over the epoch's batches; the epoch-0 row measures the
    initialized model with the same train-mode pass but no updates.
    Divergence (non-finite loss/gradients, or train loss above
    explode_factor * initial loss for explode_patience consecutive
    epochs) sets status "exploding" and preserves the rows so far.
    """
    rng = Rng(seed)
    init_network(net, init_policy or InitPolicy(), rng.child(STREAM_INIT))
    slots = net.param_slots()
    state = SgdState(slots, momentum=momentum, weight_decay=weight_decay)
    iterator = BatchIterator(train_ds, batch_size, seed)

    report = TrainReport(network=net)
    report.param_columns = sorted(net.activation_param_trace())

    def record(epoch, lr, train_loss, train_err):
        if test_ds is not None:
            _, test_err = evaluate(net, test_ds)
        else:
            test_err = float("nan")
        row = {"epoch": epoch, "lr": lr, "train_loss": train_loss,
               "train_err": train_err, "test_err": test_err}
        row.update(net.activation_param_trace())
        report.rows.append(row)

    def epoch_pass(epoch, lr, update):
        total_loss, wrong, seen = 0.0, 0, 0
        # divergence is detected from the loss, not from numpy warnings
        with np.errstate(over="ignore", invalid="ignore"):
            for xb, yb in iterator.batches(epoch=epoch):
                logits = net.forward(xb, train=True)
                loss = net.loss(logits, yb)
                if not np.isfinite(loss):
                    return None
                if update:
                    net.zero_grads()
                    net.backward()
                    sgd_step(state, slots, lr)
                total_loss += loss * len(yb)
                wrong += int(np.sum(np.argmax(logits, axis=1) != yb))
                seen += len(yb)
        return total_loss / seen, wrong / seen

    first = epoch_pass(0, lr_at(schedule, 0), update=False)
    if first is None:
        report.status = "exploding"
        return report
    record(0, lr_at(schedule, 0), *first)
    initial_loss = first[0]

    high_loss_streak = 0
    for epoch in range(1, epochs + 1):
        lr = lr_at(schedule, epoch)
        try:
            result = epoch_pass(epoch, lr, update=True)
        except NanGradientError:
            result = None
        if result is None:
            report.status = "exploding"
            return report
        record(epoch, lr, *result)
        high_loss_streak = high_loss_streak + 1 if result[0] > explode_factor * initial_loss else 0
        if high_loss_streak >= explode_patience:
            report.status = "exploding"
            return report
    return report
