"""The rectifier family: ReLU, LReLU, PReLU, ELU, SReLU and FReLU.

Forward rules (elementwise):

    relu(x)   = x if x > 0 else 0
    lrelu(x)  = x if x > 0 else slope * x          (slope fixed, 0.01)
    prelu(x)  = max(x, 0) + k * min(x, 0)          (k learnable)
    elu(x)    = x if x > 0 else alpha * (e^x - 1)  (alpha fixed)
    srelu(x)  = relu(x - delta) + delta            (delta learnable)
    frelu(x)  = x + b if x > 0 else b              (b learnable)

frelu adds a single layer-wise learnable bias b to the relu output, so it
degenerates to relu exactly when b = 0. srelu is kept in the composition
form above, which is algebraically max(x, delta) but bitwise-stable under
the relu-composition identity (the max form differs by 1 ulp on many
inputs). Gradients at the kink x = 0 (x = delta for srelu) take the
inactive branch.

Learnable parameters are layer-wise scalars: one value shared by every
unit of an activation layer. Their per-element upstream gradients are
summed over batch and spatial dimensions.
"""

import numpy as np

RELU = "relu"
LRELU = "lrelu"
PRELU = "prelu"
ELU = "elu"
SRELU = "srelu"
FRELU = "frelu"

KINDS = (RELU, LRELU, PRELU, ELU, SRELU, FRELU)

# Output state of one FReLU unit (three-way split requires b < 0).
POSITIVE = "positive"
NEGATIVE = "negative"
INACTIVATION = "inactivation"

_DEFAULTS = {
    RELU: {},
    LRELU: {"k": 0.01},    # fixed slope
    PRELU: {"k": 0.25},    # learnable slope
    ELU: {"alpha": 1.0},   # fixed scale
    SRELU: {"delta": -1.0},  # learnable threshold
    FRELU: {"b": -1.0},    # learnable bias
}

_LEARNABLE = {
    RELU: (),
    LRELU: (),
    PRELU: ("k",),
    ELU: (),
    SRELU: ("delta",),
    FRELU: ("b",),
}


class ActivationSpec:
    """Kind tag plus the parameters that kind actually reads.

    Parameters irrelevant to `kind` are ignored. Defaults: frelu b=-1,
    prelu k=0.25, lrelu slope=0.01, elu alpha=1, srelu delta=-1.
    """

    def __init__(self, kind, b=None, k=None, alpha=None, delta=None):
        if kind not in KINDS:
            raise ValueError(f"unknown activation kind {kind!r}, expected one of {KINDS}")
        self.kind = kind
        defaults = _DEFAULTS[kind]
        self.b = float(b if b is not None else defaults.get("b", 0.0))
        self.k = float(k if k is not None else defaults.get("k", 0.0))
        self.alpha = float(alpha if alpha is not None else defaults.get("alpha", 1.0))
        self.delta = float(delta if delta is not None else defaults.get("delta", 0.0))
        if kind == ELU and self.alpha <= 0:
            raise ValueError(f"elu needs alpha > 0, got {self.alpha}")

    def learnable_params(self):
        """Names and current values of this kind's learnable parameters."""
        return {name: getattr(self, name) for name in _LEARNABLE[self.kind]}

    def with_params(self, **values):
        """Copy with some parameters replaced."""
        fields = {"b": self.b, "k": self.k, "alpha": self.alpha, "delta": self.delta}
        fields.update(values)
        return ActivationSpec(self.kind, **fields)

    def __repr__(self):
        params = ", ".join(f"{n}={getattr(self, n)}" for n in ("b", "k", "alpha", "delta")
                           if n in _DEFAULTS[self.kind])
        return f"ActivationSpec({self.kind}{', ' + params if params else ''})"


def act_forward(spec, x):
    """Elementwise activation output, same shape as x."""
    x = np.asarray(x, dtype=np.float64)
    kind = spec.kind
    if kind == RELU:
        return np.maximum(x, 0.0)
    if kind == LRELU or kind == PRELU:
        return np.maximum(x, 0.0) + spec.k * np.minimum(x, 0.0)
    if kind == ELU:
        return np.where(x > 0, x, spec.alpha * np.expm1(x))
    if kind == SRELU:
        return np.maximum(x - spec.delta, 0.0) + spec.delta
    if kind == FRELU:
        return np.where(x > 0, x + spec.b, spec.b)
    raise AssertionError(kind)


def act_backward(spec, x, upstream):
    """Input gradient and per-parameter gradients.

    Returns (dx, dparams) where dparams maps each learnable parameter
    name to the sum of its per-element gradients times upstream.
    """
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if x.shape != upstream.shape:
        raise ValueError(f"shape mismatch: x {x.shape} vs upstream {upstream.shape}")
    kind = spec.kind
    pos = x > 0
    if kind == RELU:
        return np.where(pos, upstream, 0.0), {}
    if kind == LRELU:
        return np.where(pos, upstream, spec.k * upstream), {}
    if kind == PRELU:
        dx = np.where(pos, upstream, spec.k * upstream)
        dk = float(np.sum(upstream * np.minimum(x, 0.0)))
        return dx, {"k": dk}
    if kind == ELU:
        return np.where(pos, upstream, spec.alpha * np.exp(x) * upstream), {}
    if kind == SRELU:
        above = (x - spec.delta) > 0
        dx = np.where(above, upstream, 0.0)
        ddelta = float(np.sum(np.where(above, 0.0, upstream)))
        return dx, {"delta": ddelta}
    if kind == FRELU:
        dx = np.where(pos, upstream, 0.0)
        db = float(np.sum(upstream))  # d frelu / d b = 1 on both branches
        return dx, {"b": db}
    raise AssertionError(kind)


def classify_state(x, b):
    """Which of the three FReLU output states a pre-activation x falls in.

    positive: x > 0 and x + b > 0; negative: x > 0 and x + b <= 0
    (the boundary x + b == 0 counts as negative); inactivation: x <= 0.
    The split is only three-way for b < 0, but the rule is total.
    """
    if x <= 0:
        return INACTIVATION
    if x + b > 0:
        return POSITIVE
    return NEGATIVE


def state_capacity(n_units, b):
    """Distinct joint output states of an n-unit layer: 3^n if b < 0 else 2^n."""
    n = int(n_units)
    if n < 1:
        raise ValueError(f"n_units must be >= 1, got {n}")
    if n > 40:
        raise ValueError(f"n_units capped at 40 to keep the count in a safe range, got {n}")
    return 3 ** n if b < 0 else 2 ** n


def scalar_function(spec):
    """The activation as a vectorized scalar function (for tables/quadrature)."""
    return lambda x: act_forward(spec, x)


def expected_activation_mean(spec):
    """E[f(X)] for X ~ N(0, 1), computed by Gaussian quadrature.

    For frelu this is E[relu(X)] + b = 1/sqrt(2*pi) + b, so the mean
    crosses zero at b = -1/sqrt(2*pi) ~= -0.3989.
    """
    from .oracles import gauss_mean  # local import: oracles also uses this module

    return gauss_mean(scalar_function(spec))
