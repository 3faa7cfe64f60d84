"""Finite-difference sweep over every layer type and activation kind.

Each component is driven through a scalar loss f = sum(forward(x) * u)
with a fixed random u, and its analytic backward is compared against
central differences. Inputs are kept away from non-differentiable points:
activation inputs must sit at least 100*h from their kink, pooling inputs
are built from a scaled permutation so no window has near-ties, and
composite blocks are re-sampled until every internal pre-activation
clears the kink guard. Dropout is checked against a frozen mask since a
fresh mask per forward would not be a function.

Batch-norm entries use a 10x looser threshold: its backward divides by
the batch sigma, which amplifies finite-difference noise.
"""

import numpy as np

from .activations import KINDS, SRELU, ActivationSpec, act_backward, act_forward
from .layers import (
    Activation,
    BatchNorm,
    Conv2d,
    Dropout,
    Linear,
    MaxPool2x2,
    ResidualBlock,
    SoftmaxCrossEntropy,
)
from .oracles import FD_STEP, GradCheckReport, finite_diff_grad_at
from .tensor import Rng

KINK_GAP = 1e-3  # >= 100 * FD_STEP keeps central differences on one branch


def _sample_indices(rng, size, limit=36):
    if size <= limit:
        return list(range(size))
    return sorted(int(i) for i in rng.permutation(size)[:limit])


def _away_from(x, centers, gap=KINK_GAP):
    """Push values out of the gap band around each kink center."""
    out = np.array(x)
    for c in np.atleast_1d(centers):
        near = np.abs(out - c) < gap
        out[near] = c + gap * np.where(out[near] >= c, 1.0, -1.0) * 2.0
    return out


def _check_array(report, rng, component, parameter, array, analytic, f, threshold):
    idxs = _sample_indices(rng, array.size)
    numeric = finite_diff_grad_at(f, array, idxs, h=FD_STEP)
    report.add(component, parameter, analytic.reshape(-1)[idxs], numeric, threshold)


def _check_activation(report, rng, kind, tolerance):
    spec = ActivationSpec(kind)
    kinks = [spec.delta] if kind == SRELU else [0.0]
    x = _away_from(rng.normal(0.0, 1.5, (4, 6)), kinks)
    u = rng.normal(0.0, 1.0, x.shape)
    dx, dparams = act_backward(spec, x, u)

    def loss_of_x(xv):
        return float(np.sum(act_forward(spec, xv) * u))

    _check_array(report, rng, f"activation[{kind}]", "x", x, dx, loss_of_x, tolerance)
    for pname, danalytic in dparams.items():
        pval = np.array([getattr(spec, pname)])

        def loss_of_p(pv):
            return float(np.sum(act_forward(spec.with_params(**{pname: float(pv[0])}), x) * u))

        _check_array(report, rng, f"activation[{kind}]", pname, pval,
                     np.array([danalytic]), loss_of_p, tolerance)


def _layer_loss(layer, x, u, train):
    return float(np.sum(layer.forward(x, train=train) * u))


def _check_layer_params(report, rng, component, layer, x, u, tolerance, train=True):
    layer.zero_grads()
    out = layer.forward(x, train=train)
    dx = layer.backward(u)
    _check_array(report, rng, component, "x", x, dx,
                 lambda xv: _layer_loss(layer, xv, u, train), tolerance)
    for name, value, grad, _ in layer.param_slots():
        pname = name.split(".", 1)[1] if "." in name else name  # drop the layer prefix
        _check_array(report, rng, component, pname, value, grad.copy(),
                     lambda _v: _layer_loss(layer, x, u, train), tolerance)
    return out


def _check_conv(report, rng, tolerance, stride, padding):
    n = int(rng.integers(2, 5))
    ci = int(rng.integers(2, 9))
    co = int(rng.integers(2, 7))
    h = w = int(rng.integers(6, 11))
    layer = Conv2d(ci, co, 3, stride=stride, padding=padding)
    layer.W[...] = rng.normal(0.0, 0.5, layer.W.shape)
    layer.bias[...] = rng.normal(0.0, 0.5, layer.bias.shape)
    x = rng.normal(0.0, 1.0, (n, ci, h, w))
    out_shape = layer.forward(x).shape
    u = rng.normal(0.0, 1.0, out_shape)
    _check_layer_params(report, rng, f"conv2d[s{stride},p{padding}]", layer, x, u, tolerance)


def _check_linear(report, rng, tolerance):
    layer = Linear(7, 5)
    layer.W[...] = rng.normal(0.0, 0.5, layer.W.shape)
    layer.bias[...] = rng.normal(0.0, 0.5, layer.bias.shape)
    x = rng.normal(0.0, 1.0, (4, 7))
    u = rng.normal(0.0, 1.0, (4, 5))
    _check_layer_params(report, rng, "linear", layer, x, u, tolerance)


def _check_maxpool(report, rng, tolerance):
    n, c, h, w = 2, 3, 7, 8
    # distinct, well-separated values: no window near-ties to break FD
    x = 0.1 * (rng.permutation(n * c * h * w).astype(np.float64)
               - n * c * h * w / 2).reshape(n, c, h, w)
    layer = MaxPool2x2()
    out = layer.forward(x)
    u = rng.normal(0.0, 1.0, out.shape)
    dx = layer.backward(u)
    _check_array(report, rng, "maxpool2x2", "x", x, dx,
                 lambda xv: _layer_loss(layer, xv, u, False), tolerance)


def _check_dropout(report, rng, tolerance):
    layer = Dropout(0.35, rng=rng.child(91))
    x = rng.normal(0.0, 1.0, (4, 5, 3, 3))
    layer.forward(x, train=True)
    mask = layer._mask  # frozen: a fresh mask per forward would not be a function
    u = rng.normal(0.0, 1.0, x.shape)
    dx = layer.backward(u)
    _check_array(report, rng, "dropout", "x", x, dx,
                 lambda xv: float(np.sum(xv * mask * u)), tolerance)


def _check_batchnorm(report, rng, tolerance, spatial):
    c = 4
    layer = BatchNorm(c)
    layer.gamma[...] = rng.normal(1.0, 0.2, c)
    layer.beta[...] = rng.normal(0.0, 0.2, c)
    shape = (5, c, 4, 4) if spatial else (8, c)
    x = rng.normal(0.0, 1.0, shape)
    u = rng.normal(0.0, 1.0, shape)
    tag = "batchnorm2d" if spatial else "batchnorm1d"
    _check_layer_params(report, rng, tag, layer, x, u, tolerance, train=True)


def _check_softmax_ce(report, rng, tolerance):
    head = SoftmaxCrossEntropy()
    logits = rng.normal(0.0, 2.0, (5, 7))
    labels = rng.integers(0, 7, 5)
    head.forward(logits, labels)
    dlogits = head.backward()

    def loss_of(lv):
        return float(head.forward(lv, labels))

    _check_array(report, rng, "softmax_ce", "logits", logits, dlogits, loss_of, tolerance)


def _internal_kinks_clear(block, gap):
    for layer in block.sublayers():
        if isinstance(layer, Activation):
            spec = layer.current_spec()
            kink = spec.delta if spec.kind == SRELU else 0.0
            if np.min(np.abs(layer._x - kink)) < gap:
                return False
    return True


def _check_residual_block(report, rng, tolerance, variant):
    c = 3
    block = ResidualBlock(variant, c, ActivationSpec("frelu"))
    for name, value, _, _ in block.param_slots():
        if name.endswith(".W"):
            value[...] = rng.normal(0.0, 0.4, value.shape)
    x = u = None
    for _ in range(40):
        x = rng.normal(0.0, 1.0, (3, c, 5, 5))
        block.forward(x, train=True)
        if _internal_kinks_clear(block, 10 * FD_STEP):
            break
    else:
        raise RuntimeError("could not sample a kink-free residual input")
    u = rng.normal(0.0, 1.0, (3, c, 5, 5))
    _check_layer_params(report, rng, f"resblock[{variant}]", block, x, u, tolerance)


def run_gradcheck(seed, tolerance=1e-6, bn_factor=10.0):
    """One full sweep; returns a GradCheckReport listing every pair checked."""
    rng = Rng(seed)
    report = GradCheckReport()
    bn_tol = tolerance * bn_factor
    for i, kind in enumerate(KINDS):
        _check_activation(report, rng.child(100 + i), kind, tolerance)
    _check_conv(report, rng.child(1), tolerance, stride=1, padding=1)
    _check_conv(report, rng.child(2), tolerance, stride=2, padding=0)
    _check_linear(report, rng.child(3), tolerance)
    _check_maxpool(report, rng.child(4), tolerance)
    _check_dropout(report, rng.child(5), tolerance)
    _check_batchnorm(report, rng.child(6), bn_tol, spatial=True)
    _check_batchnorm(report, rng.child(7), bn_tol, spatial=False)
    _check_softmax_ce(report, rng.child(8), tolerance)
    for i, variant in enumerate(("original", "no_act_after_addition", "no_bn_after_first_conv")):
        _check_residual_block(report, rng.child(9 + i), bn_tol, variant)
    return report


def run_gradcheck_sweep(seeds, tolerance=1e-6, bn_factor=10.0):
    """Sweep several seeds into one combined report."""
    combined = GradCheckReport()
    for seed in seeds:
        combined.entries.extend(run_gradcheck(seed, tolerance, bn_factor).entries)
    return combined
