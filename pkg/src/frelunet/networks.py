"""Sequential network container and the experiment architectures.

Architectures are selectable by id in the harness config:

    smallnet       3 conv stages (32/64/128) + 512 linear, optional BN,
                   dropout 20/20/20/50, for 3x32x32 inputs
    smallnet-mini  same stack at desk scale (8/16/32 conv, 64 linear)
                   for small synthetic images
    lenetpp        3 conv stages ending in a 2-unit embedding layer whose
                   activation is swappable; ReLU everywhere else
    mini-resnet    stem conv + one residual block (variant selectable)
"""

import numpy as np

from .activations import RELU, ActivationSpec
from .layers import (
    Activation,
    BatchNorm,
    Conv2d,
    Dropout,
    Flatten,
    Linear,
    MaxPool2x2,
    ResidualBlock,
    SoftmaxCrossEntropy,
)


class Network:
    """Ordered layers plus a softmax cross-entropy head.

    `feature_index` marks the layer whose output is the embedding that
    `features()` returns (the 2-unit layer in lenetpp).
    """

    def __init__(self, layers, in_shape, num_classes, feature_index=None):
        self.layers = layers
        self.in_shape = tuple(in_shape)
        self.num_classes = num_classes
        self.feature_index = feature_index
        self.head = SoftmaxCrossEntropy()

    def forward(self, x, train=False):
        out = x
        for layer in self.layers:
            out = layer.forward(out, train=train)
        return out

    def loss(self, logits, labels):
        return self.head.forward(logits, labels)

    def backward(self):
        g = self.head.backward()
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def features(self, x):
        """Eval-mode forward up to and including the feature layer."""
        if self.feature_index is None:
            raise ValueError("this network has no designated feature layer")
        out = x
        for layer in self.layers[:self.feature_index + 1]:
            out = layer.forward(out, train=False)
        return out

    def param_slots(self):
        slots = []
        for layer in self.layers:
            slots.extend(layer.param_slots())
        return slots

    def zero_grads(self):
        for _, _, grad, _ in self.param_slots():
            grad[...] = 0.0

    def activation_layers(self):
        """All activation layers in graph order, residual sublayers included."""
        found = []
        for layer in self.layers:
            if isinstance(layer, Activation):
                found.append(layer)
            elif isinstance(layer, ResidualBlock):
                found.extend(sub for sub in layer.sublayers() if isinstance(sub, Activation))
        return found

    def activation_param_trace(self):
        """Current layer-wise activation parameters, keyed like b_layer1."""
        trace = {}
        idx = 0
        for layer in self.activation_layers():
            if not layer.values:
                continue
            idx += 1
            for pname in sorted(layer.values):
                trace[f"{pname}_layer{idx}"] = float(layer.values[pname][0])
        return trace

    def dropout_layers(self):
        return [layer for layer in self.layers if isinstance(layer, Dropout)]

    def predict(self, x):
        return np.argmax(self.forward(x, train=False), axis=1)


def _conv_block(layers, in_ch, out_ch, use_bn, act_spec, stage):
    layers.append(Conv2d(in_ch, out_ch, 3, padding=1, name=f"conv{stage}"))
    if use_bn:
        layers.append(BatchNorm(out_ch, name=f"bn{stage}"))
    layers.append(Activation(act_spec, name=f"act{stage}"))


def build_smallnet(act_spec, use_bn, num_classes, in_shape=(3, 32, 32),
                   conv_channels=(32, 64, 128), linear_width=512):
    """Conv 3x3/1 stages with (BN+)ACT, 2x2 max-pool and dropout after each,
    then linear -> (BN+)ACT -> dropout 50% -> linear -> softmax."""
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {num_classes}")
    c, h, w = in_shape
    layers = []
    in_ch = c
    for stage, out_ch in enumerate(conv_channels, start=1):
        _conv_block(layers, in_ch, out_ch, use_bn, act_spec, stage)
        layers.append(MaxPool2x2(name=f"pool{stage}"))
        layers.append(Dropout(0.2, name=f"drop{stage}"))
        in_ch = out_ch
        h, w = h // 2, w // 2
    layers.append(Flatten())
    layers.append(Linear(in_ch * h * w, linear_width, name="fc1"))
    if use_bn:
        layers.append(BatchNorm(linear_width, name="bn_fc1"))
    layers.append(Activation(act_spec, name="act_fc1"))
    feature_index = len(layers) - 1
    layers.append(Dropout(0.5, name="drop_fc1"))
    layers.append(Linear(linear_width, num_classes, name="fc2"))
    return Network(layers, in_shape, num_classes, feature_index=feature_index)


def build_smallnet_mini(act_spec, use_bn, num_classes, in_shape=(1, 12, 12)):
    return build_smallnet(act_spec, use_bn, num_classes, in_shape=in_shape,
                          conv_channels=(8, 16, 32), linear_width=64)


def build_lenetpp(act_last, in_shape=(1, 28, 28), conv_channels=(32, 64, 128),
                  embed_dim=2, num_classes=10):
    """Conv net whose penultimate linear layer is a 2-unit embedding.

    ReLU everywhere except that embedding's activation, which is
    `act_last`; `features()` returns the post-activation embedding.

    The flattened conv features are batch-normalized before the embedding
    layer. They are all-positive (post-rectifier), so without centering
    every 2-unit weight draw inherits a random DC offset that dwarfs the
    per-sample variation and usually leaves one or both embedding units
    permanently dead behind their own rectifier.
    """
    relu = ActivationSpec(RELU)
    c, h, w = in_shape
    layers = []
    in_ch = c
    for stage, out_ch in enumerate(conv_channels, start=1):
        layers.append(Conv2d(in_ch, out_ch, 3, padding=1, name=f"conv{stage}"))
        layers.append(Activation(relu, name=f"act{stage}"))
        layers.append(MaxPool2x2(name=f"pool{stage}"))
        in_ch = out_ch
        h, w = h // 2, w // 2
    layers.append(Flatten())
    layers.append(BatchNorm(in_ch * h * w, name="bn_feat"))
    layers.append(Linear(in_ch * h * w, embed_dim, name="fc_embed"))
    layers.append(Activation(act_last, name="act_embed"))
    feature_index = len(layers) - 1
    layers.append(Linear(embed_dim, num_classes, name="fc_out"))
    return Network(layers, in_shape, num_classes, feature_index=feature_index)


def build_mini_resnet(variant, act_spec, num_classes, in_shape=(1, 12, 12), channels=8):
    """Stem conv + BN + ACT, one residual block of the given variant,
    pool, linear head. Smoke-scale only."""
    c, h, w = in_shape
    layers = [Conv2d(c, channels, 3, padding=1, name="stem"),
              BatchNorm(channels, name="stem_bn"),
              Activation(act_spec, name="stem_act"),
              ResidualBlock(variant, channels, act_spec, name="block1"),
              MaxPool2x2(name="pool"),
              Flatten(),
              Linear(channels * (h // 2) * (w // 2), num_classes, name="fc")]
    feature_index = len(layers) - 2  # flattened block output
    return Network(layers, in_shape, num_classes, feature_index=feature_index)


ARCHITECTURES = {
    "smallnet": build_smallnet,
    "smallnet-mini": build_smallnet_mini,
    "lenetpp": build_lenetpp,
    "mini-resnet": build_mini_resnet,
}
