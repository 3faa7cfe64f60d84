"""Network layers with hand-written forward and backward passes.

Every layer caches what its backward pass needs during forward, so the
call order is always forward -> backward on a single graph instance.
Parameters live in numpy arrays that are updated in place; each layer
exposes them through `param_slots()` as (name, value, grad, decay)
tuples, where `decay` says whether the optimizer applies weight decay
(weights yes; biases, batch-norm scale/shift and activation parameters
no).

Convolution is cross-correlation (no kernel flip) via im2col + GEMM.
Max-pooling breaks ties by first index in row-major window scan.
Dropout is inverted: surviving units are scaled by 1/(1-rate) at train
time and the layer is the identity in eval mode.
"""

import numpy as np

from . import activations as act


def im2col(x, k, stride, pad):
    """Unfold (N,C,H,W) into (N*Ho*Wo, C*k*k) patch rows."""
    n, c, h, w = x.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"kernel {k} with stride {stride}, pad {pad} does not fit input {h}x{w}")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = np.empty((n, c, k, k, ho, wo), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i:i + ho * stride:stride, j:j + wo * stride:stride]
    return cols.transpose(0, 4, 5, 1, 2, 3).reshape(n * ho * wo, c * k * k), ho, wo


def col2im(cols, x_shape, k, stride, pad, ho, wo):
    """Fold patch-row gradients back onto the input, accumulating overlaps."""
    n, c, h, w = x_shape
    cols6 = cols.reshape(n, ho, wo, c, k, k).transpose(0, 3, 4, 5, 1, 2)
    img = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            img[:, :, i:i + ho * stride:stride, j:j + wo * stride:stride] += cols6[:, :, i, j]
    return img[:, :, pad:pad + h, pad:pad + w]


class Layer:
    """Base: stateless pass-through with no parameters."""

    name = "layer"

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, upstream):
        raise NotImplementedError

    def param_slots(self):
        return []

    def zero_grads(self):
        for _, _, grad, _ in self.param_slots():
            grad[...] = 0.0


class Conv2d(Layer):
    def __init__(self, in_ch, out_ch, k, stride=1, padding=0, name="conv"):
        if k < 1:
            raise ValueError(f"kernel size must be >= 1, got {k}")
        self.in_ch, self.out_ch, self.k = in_ch, out_ch, k
        self.stride, self.padding = stride, padding
        self.W = np.zeros((out_ch, in_ch, k, k))
        self.bias = np.zeros(out_ch)
        self.gW = np.zeros_like(self.W)
        self.gbias = np.zeros_like(self.bias)
        self.name = name
        self._cache = None

    def forward(self, x, train=False):
        if x.ndim != 4 or x.shape[1] != self.in_ch:
            raise ValueError(f"{self.name}: expected (N,{self.in_ch},H,W), got {x.shape}")
        cols, ho, wo = im2col(x, self.k, self.stride, self.padding)
        out = cols @ self.W.reshape(self.out_ch, -1).T + self.bias
        self._cache = (x.shape, cols, ho, wo)
        n = x.shape[0]
        return out.reshape(n, ho, wo, self.out_ch).transpose(0, 3, 1, 2)

    def backward(self, upstream):
        x_shape, cols, ho, wo = self._cache
        up = upstream.transpose(0, 2, 3, 1).reshape(-1, self.out_ch)
        self.gW += (up.T @ cols).reshape(self.W.shape)
        self.gbias += up.sum(axis=0)
        dcols = up @ self.W.reshape(self.out_ch, -1)
        return col2im(dcols, x_shape, self.k, self.stride, self.padding, ho, wo)

    def param_slots(self):
        return [(f"{self.name}.W", self.W, self.gW, True),
                (f"{self.name}.bias", self.bias, self.gbias, False)]


class Linear(Layer):
    def __init__(self, in_features, out_features, name="linear"):
        self.in_features, self.out_features = in_features, out_features
        self.W = np.zeros((in_features, out_features))
        self.bias = np.zeros(out_features)
        self.gW = np.zeros_like(self.W)
        self.gbias = np.zeros_like(self.bias)
        self.name = name
        self._x = None

    def forward(self, x, train=False):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ValueError(f"{self.name}: expected (N,{self.in_features}), got {x.shape}")
        self._x = x
        return x @ self.W + self.bias

    def backward(self, upstream):
        self.gW += self._x.T @ upstream
        self.gbias += upstream.sum(axis=0)
        return upstream @ self.W.T

    def param_slots(self):
        return [(f"{self.name}.W", self.W, self.gW, True),
                (f"{self.name}.bias", self.bias, self.gbias, False)]


class Flatten(Layer):
    def __init__(self, name="flatten"):
        self.name = name
        self._shape = None

    def forward(self, x, train=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, upstream):
        return upstream.reshape(self._shape)


class MaxPool2x2(Layer):
    """2x2 max pooling with stride 2; odd trailing rows/columns are dropped."""

    def __init__(self, name="pool"):
        self.name = name
        self._cache = None

    def forward(self, x, train=False):
        n, c, h, w = x.shape
        ho, wo = h // 2, w // 2
        if ho < 1 or wo < 1:
            raise ValueError(f"{self.name}: input {h}x{w} too small for 2x2 pooling")
        win = x[:, :, :ho * 2, :wo * 2].reshape(n, c, ho, 2, wo, 2)
        win = win.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
        idx = win.argmax(axis=-1)  # argmax takes the first maximum: row-major tie-break
        out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
        self._cache = (x.shape, idx)
        return out

    def backward(self, upstream):
        (n, c, h, w), idx = self._cache
        ho, wo = h // 2, w // 2
        dwin = np.zeros((n, c, ho, wo, 4))
        np.put_along_axis(dwin, idx[..., None], upstream[..., None], axis=-1)
        dx = np.zeros((n, c, h, w))
        dx[:, :, :ho * 2, :wo * 2] = (
            dwin.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * 2, wo * 2)
        )
        return dx


class Dropout(Layer):
    def __init__(self, rate, rng=None, name="dropout"):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0,1), got {rate}")
        self.rate = rate
        self.rng = rng  # assigned at network init; unused when rate == 0 or eval mode
        self.name = name
        self._mask = None

    def forward(self, x, train=False):
        if not train or self.rate == 0.0:
            self._mask = None
            return x
        if self.rng is None:
            raise RuntimeError(f"{self.name}: no rng assigned; initialize the network first")
        keep = self.rng.uniform(x.shape) >= self.rate
        self._mask = keep / (1.0 - self.rate)
        return x * self._mask

    def backward(self, upstream):
        if self._mask is None:
            return upstream
        return upstream * self._mask


class BatchNorm(Layer):
    """Batch normalization over (N,) per feature or (N,H,W) per channel.

    Train mode normalizes by batch statistics (population variance) and
    folds them into the running estimates with retention `momentum`:
    running <- momentum * running + (1 - momentum) * batch. Eval mode
    normalizes by the running estimates. A train-mode batch that reduces
    over fewer than 2 elements per channel is rejected.
    """

    def __init__(self, channels, momentum=0.9, eps=1e-5, name="bn"):
        if not 0.0 < momentum < 1.0:
            raise ValueError(f"momentum must be in (0,1), got {momentum}")
        if eps <= 0:
            raise ValueError(f"eps must be > 0, got {eps}")
        self.channels = channels
        self.momentum, self.eps = momentum, eps
        self.gamma = np.ones(channels)
        self.beta = np.zeros(channels)
        self.ggamma = np.zeros_like(self.gamma)
        self.gbeta = np.zeros_like(self.beta)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.name = name
        self._cache = None

    def _axes_and_view(self, x):
        if x.ndim == 2:
            return (0,), (1, -1)
        if x.ndim == 4:
            return (0, 2, 3), (1, -1, 1, 1)
        raise ValueError(f"{self.name}: expected rank-2 or rank-4 input, got rank {x.ndim}")

    def forward(self, x, train=False):
        axes, view = self._axes_and_view(x)
        if x.shape[1] != self.channels:
            raise ValueError(f"{self.name}: expected {self.channels} channels, got {x.shape[1]}")
        if train:
            m = int(np.prod([x.shape[a] for a in axes]))
            if m < 2:
                raise ValueError(f"{self.name}: train-mode batch reduces over {m} element(s); need >= 2")
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            self.running_mean[...] = self.momentum * self.running_mean + (1 - self.momentum) * mean
            self.running_var[...] = self.momentum * self.running_var + (1 - self.momentum) * var
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean.reshape(view)) * inv_std.reshape(view)
        self._cache = (x, xhat, mean, inv_std, axes, view, train)
        return self.gamma.reshape(view) * xhat + self.beta.reshape(view)

    def backward(self, upstream):
        x, xhat, mean, inv_std, axes, view, train = self._cache
        self.ggamma += (upstream * xhat).sum(axis=axes)
        self.gbeta += upstream.sum(axis=axes)
        g = upstream * self.gamma.reshape(view)
        if not train:
            return g * inv_std.reshape(view)
        m = float(np.prod([x.shape[a] for a in axes]))
        xc = x - mean.reshape(view)
        ivs = inv_std.reshape(view)
        dvar = (g * xc * -0.5 * ivs ** 3).sum(axis=axes)
        dmean = (g * -ivs).sum(axis=axes) + dvar * (-2.0 / m) * xc.sum(axis=axes)
        return g * ivs + (dvar.reshape(view) * 2.0 * xc + dmean.reshape(view)) / m

    def param_slots(self):
        return [(f"{self.name}.gamma", self.gamma, self.ggamma, False),
                (f"{self.name}.beta", self.beta, self.gbeta, False)]


class Activation(Layer):
    """One activation layer; the learnable parameter (if any) is a layer-wise scalar."""

    def __init__(self, spec, name="act"):
        self.kind = spec.kind
        self.base_spec = spec
        self.values = {p: np.array([v]) for p, v in spec.learnable_params().items()}
        self.grads = {p: np.zeros(1) for p in self.values}
        self.name = name
        self._x = None

    def current_spec(self):
        return self.base_spec.with_params(**{p: float(v[0]) for p, v in self.values.items()})

    def forward(self, x, train=False):
        self._x = x
        return act.act_forward(self.current_spec(), x)

    def backward(self, upstream):
        dx, dparams = act.act_backward(self.current_spec(), self._x, upstream)
        for p, dval in dparams.items():
            self.grads[p][0] += dval
        return dx

    def param_slots(self):
        return [(f"{self.name}.{p}", self.values[p], self.grads[p], False)
                for p in sorted(self.values)]


# Residual block wirings (two-conv basic blocks; the skip is the identity).
ORIGINAL = "original"
NO_ACT_AFTER_ADD = "no_act_after_addition"
NO_BN_AFTER_FIRST_CONV = "no_bn_after_first_conv"

BLOCK_VARIANTS = (ORIGINAL, NO_ACT_AFTER_ADD, NO_BN_AFTER_FIRST_CONV)


class ResidualBlock(Layer):
    """conv-(BN)-ACT-conv-BN branch added to the identity skip.

    original:               branch = conv,BN,ACT,conv,BN; ACT after the addition
    no_act_after_addition:  same branch; identity after the addition
    no_bn_after_first_conv: branch = conv,ACT,conv,BN; ACT after the addition
    """

    def __init__(self, variant, channels, act_spec, name="block"):
        if variant not in BLOCK_VARIANTS:
            raise ValueError(f"unknown block variant {variant!r}, expected one of {BLOCK_VARIANTS}")
        if channels < 1:
            raise ValueError(f"channels must be >= 1, got {channels}")
        self.variant = variant
        self.name = name
        branch = [Conv2d(channels, channels, 3, padding=1, name=f"{name}.conv1")]
        if variant != NO_BN_AFTER_FIRST_CONV:
            branch.append(BatchNorm(channels, name=f"{name}.bn1"))
        branch.append(Activation(act_spec, name=f"{name}.act1"))
        branch.append(Conv2d(channels, channels, 3, padding=1, name=f"{name}.conv2"))
        branch.append(BatchNorm(channels, name=f"{name}.bn2"))
        self.branch = branch
        self.post_act = None if variant == NO_ACT_AFTER_ADD else Activation(act_spec, name=f"{name}.act2")

    def sublayers(self):
        return self.branch + ([self.post_act] if self.post_act is not None else [])

    def forward(self, x, train=False):
        out = x
        for layer in self.branch:
            out = layer.forward(out, train=train)
        out = out + x
        if self.post_act is not None:
            out = self.post_act.forward(out, train=train)
        return out

    def backward(self, upstream):
        if self.post_act is not None:
            upstream = self.post_act.backward(upstream)
        g = upstream
        for layer in reversed(self.branch):
            g = layer.backward(g)
        return g + upstream  # branch gradient plus the skip path

    def param_slots(self):
        slots = []
        for layer in self.sublayers():
            slots.extend(layer.param_slots())
        return slots


class SoftmaxCrossEntropy:
    """Softmax + cross-entropy head; loss is the mean over the batch."""

    def __init__(self):
        self._cache = None

    def forward(self, logits, labels):
        labels = np.asarray(labels)
        n, k = logits.shape
        if labels.shape != (n,):
            raise ValueError(f"labels shape {labels.shape} does not match batch {n}")
        if labels.min() < 0 or labels.max() >= k:
            raise ValueError(f"labels must lie in [0,{k})")
        z = logits - logits.max(axis=1, keepdims=True)
        log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        loss = -log_probs[np.arange(n), labels].mean()
        self._cache = (np.exp(log_probs), labels)
        return loss

    def backward(self):
        probs, labels = self._cache
        n = probs.shape[0]
        d = probs.copy()
        d[np.arange(n), labels] -= 1.0
        return d / n
