"""Independent numerical checks: finite differences, Gaussian-expectation
quadrature, and the Monte-Carlo initialization-variance probe.

These never reuse the analytic derivative code they are checking. The
variance probe builds its stack out of raw matrix products (1x1-conv
equivalents of uniform width) rather than the layer classes, so it
exercises the initialization math, not the layer implementations.
"""

from dataclasses import dataclass, field

import numpy as np

from .activations import act_backward, act_forward

FD_STEP = 1e-5  # central differences at 64-bit: truncation ~h^2, rounding ~eps/h


def relative_error(analytic, numeric):
    """|a - n| / max(|a|, |n|, 1e-12), elementwise."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-12)
    return np.abs(a - n) / denom


def finite_diff_grad(f, x, h=FD_STEP):
    """Gradient of scalar-valued f at x by central differences, per element."""
    if h <= 0:
        raise ValueError(f"h must be > 0, got {h}")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"f returned a non-finite value near element {i}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def finite_diff_grad_at(f, x, flat_indices, h=FD_STEP):
    """Central differences at selected flat indices only (for large tensors)."""
    if h <= 0:
        raise ValueError(f"h must be > 0, got {h}")
    x = np.asarray(x, dtype=np.float64)
    flat = x.reshape(-1)
    out = np.zeros(len(flat_indices))
    for j, i in enumerate(flat_indices):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"f returned a non-finite value near element {i}")
        out[j] = (fp - fm) / (2.0 * h)
    return out


@dataclass
class GradCheckEntry:
    """One checked (component, parameter) pair.

    max_rel_err is the raw relative error; gated_err additionally zeroes
    coordinates whose absolute analytic/numeric difference sits below the
    finite-difference noise floor, and is what pass/fail uses.
    """
    component: str
    parameter: str
    max_rel_err: float
    gated_err: float
    worst_index: int
    threshold: float

    @property
    def passed(self):
        return self.gated_err < self.threshold


# Central differences carry rounding noise of order eps*|f|/(2h) no matter
# how small the true gradient is, so a difference below this bound carries
# no information: both sides agree to the oracle's resolution. Without the
# gate, structurally-zero or merely small gradients (a conv bias feeding
# straight into batch norm; a coordinate whose upstream weight is tiny)
# would fail on pure noise. Any genuine formula error moves gradients by
# amounts on the gradient scale, orders of magnitude above this. The floor
# is proportional to the requested threshold (at the default 1e-6 it is
# 1e-8), so tightening the tolerance below the oracle's own noise floor
# correctly reports failure instead of silently gating it away.
FD_NOISE_FLOOR = 1e-8
DEFAULT_THRESHOLD = 1e-6


@dataclass
class GradCheckReport:
    entries: list = field(default_factory=list)

    def add(self, component, parameter, analytic, numeric, threshold):
        a = np.asarray(analytic, dtype=np.float64).reshape(-1)
        n = np.asarray(numeric, dtype=np.float64).reshape(-1)
        raw = relative_error(a, n)
        atol = FD_NOISE_FLOOR * (threshold / DEFAULT_THRESHOLD)
        gated = np.where(np.abs(a - n) < atol, 0.0, raw)
        worst = int(np.argmax(gated)) if gated.size else 0
        self.entries.append(GradCheckEntry(component, parameter,
                                           float(raw.max()) if raw.size else 0.0,
                                           float(gated.max()) if gated.size else 0.0,
                                           worst, threshold))

    @property
    def passed(self):
        return all(e.passed for e in self.entries)


# Gauss quadrature: composite Simpson on [-10, 10] with step 1e-3. The
# Gaussian tail mass beyond +-10 is < 1e-22, far below the 1e-9 target.
GAUSS_DOMAIN = 10.0
GAUSS_STEP = 1e-3


def gauss_mean(f):
    """E[f(X)] for X ~ N(0,1); f must accept numpy arrays elementwise."""
    n = int(round(2 * GAUSS_DOMAIN / GAUSS_STEP))  # panel count, even by construction
    x = np.linspace(-GAUSS_DOMAIN, GAUSS_DOMAIN, n + 1)
    y = np.asarray(f(x), dtype=np.float64) * np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return float((GAUSS_STEP / 3.0) * (w @ y))


@dataclass
class VarianceReport:
    """Per-layer empirical variances from the Monte-Carlo probe.

    forward_var[l-1]  = Var[x_l], the l-th linear output (pre-activation)
    backward_var[l-1] = Var[dCost/dxin_l], the gradient at the l-th
                        linear layer's input
    backward_ratios   = backward_var[l] / backward_var[l+1], adjacent layers
    forward_offset    = measured Var[x_L] minus the zero-bias prediction
                        Var[x_1] * (gain/2)^(L-1); the bias-induced growth
    """
    depth: int
    width: int
    forward_var: np.ndarray
    backward_var: np.ndarray
    backward_ratios: np.ndarray
    forward_offset: float
    log_var_slope: float

    @property
    def backward_stable(self):
        return bool(np.all(self.backward_ratios >= 0.5) and np.all(self.backward_ratios <= 2.0))


def variance_probe(depth, width, act_spec, policy, trials, rng, batch=16):
    """Measure forward/backward variance propagation through a plain stack.

    Each trial samples fresh weights W_l ~ N(0, policy.weight_variance(1, width))
    for `depth` uniform-width linear (1x1 conv) layers with the given
    activation between them, pushes a unit-variance input through, then
    injects a unit-variance gradient at the top and backpropagates.
    Statistics aggregate over all trials, batch rows and units.
    """
    if depth < 3:
        raise ValueError(f"depth must be >= 3, got {depth}")
    if trials < 100:
        raise ValueError(f"trials must be >= 100, got {trials}")
    var_w = policy.weight_variance(1, width)
    fwd_s1 = np.zeros(depth)
    fwd_s2 = np.zeros(depth)
    bwd_s1 = np.zeros(depth)
    bwd_s2 = np.zeros(depth)
    for t in range(trials):
        trng = rng.child(t)
        ws = [trng.normal(0.0, np.sqrt(var_w), (width, width)) for _ in range(depth)]
        x = trng.normal(0.0, 1.0, (batch, width))
        pre = []
        for w in ws:
            z = x @ w.T
            pre.append(z)
            x = act_forward(act_spec, z)
        g = trng.normal(0.0, 1.0, (batch, width))
        for l in range(depth - 1, -1, -1):
            dz, _ = act_backward(act_spec, pre[l], g)
            g = dz @ ws[l]
            bwd_s1[l] += g.sum()
            bwd_s2[l] += (g * g).sum()
            fwd_s1[l] += pre[l].sum()
            fwd_s2[l] += (pre[l] * pre[l]).sum()
    n = trials * batch * width
    fwd_var = fwd_s2 / n - (fwd_s1 / n) ** 2
    bwd_var = bwd_s2 / n - (bwd_s1 / n) ** 2
    ratios = bwd_var[:-1] / bwd_var[1:]
    predicted_top = fwd_var[0] * (policy.gain / 2.0) ** (depth - 1)
    slope = float(np.polyfit(np.arange(1, depth + 1), np.log(bwd_var), 1)[0])
    return VarianceReport(depth=depth, width=width,
                          forward_var=fwd_var, backward_var=bwd_var,
                          backward_ratios=ratios,
                          forward_offset=float(fwd_var[-1] - predicted_top),
                          log_var_slope=slope)
