"""frelunet: flexible rectified linear units in a small numpy CNN engine.

The package implements the rectifier family (relu, lrelu, prelu, elu,
srelu, frelu) with hand-written gradients, the layers and architectures
needed to study them (conv/pool/dropout/batch-norm networks, a 2-unit
embedding net, a miniature residual net), a deterministic SGD training
engine, numerical oracles (finite differences, Gaussian quadrature,
variance propagation probe), an sklearn-style classifier facade and a
CSV-emitting experiment CLI.
"""

from .activations import (
    FRELU,
    KINDS,
    ActivationSpec,
    act_backward,
    act_forward,
    classify_state,
    expected_activation_mean,
    state_capacity,
)
from .data import BatchIterator, LabeledDataset, load_mnist_idx, synthetic_gaussians
from .estimator import ConvNetClassifier
from .experiments import TrainConfig, load_config, train
from .networks import build_lenetpp, build_mini_resnet, build_smallnet, build_smallnet_mini
from .oracles import finite_diff_grad, gauss_mean, variance_probe
from .tensor import Rng, matmul, reduce_stats, sample_gaussian, tensor_full
from .training import InitPolicy, LrSchedule, init_network, lr_at, msra_weight_variance

__version__ = "0.1.0"

__all__ = [
    "ActivationSpec", "BatchIterator", "ConvNetClassifier", "FRELU",
    "InitPolicy", "KINDS", "LabeledDataset", "LrSchedule", "Rng",
    "TrainConfig", "act_backward", "act_forward", "build_lenetpp",
    "build_mini_resnet", "build_smallnet", "build_smallnet_mini",
    "classify_state", "expected_activation_mean", "finite_diff_grad",
    "gauss_mean", "init_network", "load_config", "load_mnist_idx", "lr_at",
    "matmul", "msra_weight_variance", "reduce_stats", "sample_gaussian",
    "state_capacity", "synthetic_gaussians", "tensor_full", "train",
    "variance_probe",
]
