"""scikit-learn compatible classifier over the training engine.

ConvNetClassifier makes the engine compose with the wider ecosystem:
get_params/set_params/clone work, fit takes (X, y) image arrays, predict
returns labels, and transform returns the learned feature embedding (the
2-unit embedding for the lenetpp architecture).
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.exceptions import NotFittedError

from .activations import KINDS, ActivationSpec
from .data import LabeledDataset
from .networks import build_lenetpp, build_mini_resnet, build_smallnet, build_smallnet_mini
from .training import LrSchedule, train_network


def check_images(X, expected_shape=None):
    """Validate and normalize image input to float64 (N,C,H,W).

    Accepts (N,C,H,W) or single-channel (N,H,W). Rejects empty arrays and
    non-finite values; if expected_shape is given, the per-example shape
    must match it.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3:
        X = X[:, None, :, :]
    if X.ndim != 4:
        raise ValueError(f"X must be (N,C,H,W) or (N,H,W), got shape {X.shape}")
    if X.shape[0] < 1:
        raise ValueError("X must hold at least one example")
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains non-finite values")
    if expected_shape is not None and X.shape[1:] != tuple(expected_shape):
        raise ValueError(f"expected per-example shape {tuple(expected_shape)}, "
                         f"got {X.shape[1:]}")
    return X


def check_labels(y, n_samples):
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != n_samples:
        raise ValueError(f"y must be 1-d with {n_samples} entries, got shape {y.shape}")
    return y


class ConvNetClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Small CNN classifier with a selectable rectifier activation.

    Parameters mirror the experiment harness: `activation` picks the
    rectifier kind ('relu', 'lrelu', 'prelu', 'elu', 'srelu', 'frelu'),
    the *_init values seed its learnable parameter, and `architecture`
    selects the network ('smallnet', 'smallnet-mini', 'lenetpp',
    'mini-resnet'). Training is deterministic given `seed`.
    """

    def __init__(self, architecture="smallnet-mini", activation="frelu",
                 b_init=None, k_init=None, alpha=None, delta_init=None,
                 use_bn=True, epochs=5, batch_size=32, base_lr=0.05,
                 milestones=(), lr_factor=0.1, momentum=0.9,
                 weight_decay=1e-4, seed=0, block_variant="original"):
        self.architecture = architecture
        self.activation = activation
        self.b_init = b_init
        self.k_init = k_init
        self.alpha = alpha
        self.delta_init = delta_init
        self.use_bn = use_bn
        self.epochs = epochs
        self.batch_size = batch_size
        self.base_lr = base_lr
        self.milestones = milestones
        self.lr_factor = lr_factor
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.seed = seed
        self.block_variant = block_variant

    def _activation_spec(self):
        if self.activation not in KINDS:
            raise ValueError(f"unknown activation {self.activation!r}, "
                             f"expected one of {KINDS}")
        return ActivationSpec(self.activation, b=self.b_init, k=self.k_init,
                              alpha=self.alpha, delta=self.delta_init)

    def _build(self, in_shape, n_classes):
        act = self._activation_spec()
        if self.architecture == "smallnet":
            return build_smallnet(act, self.use_bn, n_classes, in_shape=in_shape)
        if self.architecture == "smallnet-mini":
            return build_smallnet_mini(act, self.use_bn, n_classes, in_shape=in_shape)
        if self.architecture == "lenetpp":
            return build_lenetpp(act, in_shape=in_shape, num_classes=n_classes)
        if self.architecture == "mini-resnet":
            return build_mini_resnet(self.block_variant, act, n_classes, in_shape=in_shape)
        raise ValueError(f"unknown architecture {self.architecture!r}")

    def fit(self, X, y):
        X = check_images(X)
        y = check_labels(y, X.shape[0])
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least 2 classes")
        has_bn = (self.use_bn or self.architecture in ("mini-resnet", "lenetpp"))
        if has_bn and X.shape[0] % self.batch_size == 1:
            raise ValueError(f"batch_size {self.batch_size} leaves a size-1 final "
                             "batch, which batch norm cannot process")
        ds = LabeledDataset(X, y_idx, class_count=len(self.classes_))
        net = self._build(X.shape[1:], len(self.classes_))
        schedule = LrSchedule(self.base_lr, tuple(self.milestones), self.lr_factor)
        self.report_ = train_network(
            net, ds, None, seed=self.seed, epochs=self.epochs,
            batch_size=self.batch_size, schedule=schedule,
            momentum=self.momentum, weight_decay=self.weight_decay)
        self.network_ = net
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def _check_fitted(self):
        if not hasattr(self, "network_"):
            raise NotFittedError("this ConvNetClassifier instance is not fitted yet")

    def decision_function(self, X):
        self._check_fitted()
        X = check_images(X, expected_shape=self.network_.in_shape)
        return self.network_.forward(X, train=False)

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]

    def predict_proba(self, X):
        logits = self.decision_function(X)
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def transform(self, X):
        """Learned feature embedding (for lenetpp: the 2-d embedding)."""
        self._check_fitted()
        X = check_images(X, expected_shape=self.network_.in_shape)
        return self.network_.features(X)
