"""Dense-array building blocks: linear layers with hand-written backward
passes, the Adam optimizer, the L1 photometric loss, and a finite-difference
gradient checker.

All tensors are plain numpy arrays.  Training runs in float32; gradient
certification switches the whole model to float64 because central differences
in single precision are too noisy to certify tight tolerances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, TrainingDivergenceError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class ParamGroup:
    """A named learnable tensor together with its gradient and Adam state."""

    name: str
    value: np.ndarray
    grad: np.ndarray
    adam_m: np.ndarray
    adam_v: np.ndarray
    step_count: int = 0

    @classmethod
    def create(cls, name: str, value: np.ndarray) -> "ParamGroup":
        value = np.asarray(value)
        return cls(
            name=name,
            value=value,
            grad=np.zeros_like(value),
            adam_m=np.zeros_like(value),
            adam_v=np.zeros_like(value),
        )

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


def glorot_uniform(rng: np.random.Generator, out_dim: int, in_dim: int,
                   dtype=np.float32) -> np.ndarray:
    bound = np.sqrt(6.0 / (in_dim + out_dim))
    return rng.uniform(-bound, bound, size=(out_dim, in_dim)).astype(dtype)


class LinearLayer:
    """y = W x + b with weights of shape (out, in)."""

    def __init__(self, name: str, in_dim: int, out_dim: int,
                 rng: np.random.Generator | None = None,
                 dtype=np.float32, zero_init: bool = False,
                 bias_init: np.ndarray | float = 0.0):
        if zero_init:
            w = np.zeros((out_dim, in_dim), dtype=dtype)
        else:
            if rng is None:
                raise ValueError("rng required for random init")
            w = glorot_uniform(rng, out_dim, in_dim, dtype)
        b = np.full((out_dim,), 0.0, dtype=dtype) + np.asarray(bias_init, dtype=dtype)
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = ParamGroup.create(f"{name}.weight", w)
        self.bias = ParamGroup.create(f"{name}.bias", b.astype(dtype))

    def params(self) -> list[ParamGroup]:
        return [self.weight, self.bias]


def linear_forward(layer: LinearLayer, x: np.ndarray,
                   batch_invariant: bool = False) -> np.ndarray:
    """Apply the layer to a batch of rows.

    With ``batch_invariant=True`` every output element is accumulated over the
    input dimension in a fixed left-to-right order, so the result for a given
    row is bit-identical no matter how the batch is split.  BLAS matmuls do
    not guarantee this, which matters when a full-frame render must match a
    pixel-by-pixel recomposition exactly.  The invariant path is slower and is
    used only for inference.
    """
    x = np.atleast_2d(x)
    if x.shape[1] != layer.in_dim:
        raise DimensionError(
            f"linear_forward: input width {x.shape[1]} != {layer.in_dim}")
    if batch_invariant:
        w = layer.weight.value
        out = np.broadcast_to(layer.bias.value,
                              (x.shape[0], layer.out_dim)).copy()
        for i in range(layer.in_dim):
            out += x[:, i:i + 1] * w[None, :, i]
        return out
    return x @ layer.weight.value.T + layer.bias.value


def linear_backward(layer: LinearLayer, x: np.ndarray, grad_out: np.ndarray):
    """Returns (grad_input, grad_weights, grad_bias); does not accumulate."""
    x = np.atleast_2d(x)
    grad_out = np.atleast_2d(grad_out)
    if x.shape[1] != layer.in_dim or grad_out.shape[1] != layer.out_dim:
        raise DimensionError("linear_backward: shape mismatch")
    grad_input = grad_out @ layer.weight.value
    grad_w = grad_out.T @ x
    grad_b = grad_out.sum(axis=0)
    return grad_input, grad_w, grad_b


def linear_apply(layer: LinearLayer, x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """linear_backward that also accumulates into the layer's ParamGroups."""
    grad_input, grad_w, grad_b = linear_backward(layer, x, grad_out)
    layer.weight.grad += grad_w
    layer.bias.grad += grad_b
    return grad_input


def adam_step(group: ParamGroup, lr: float, beta1: float = ADAM_BETA1,
              beta2: float = ADAM_BETA2, eps: float = ADAM_EPS) -> ParamGroup:
    """One bias-corrected Adam update; zeroes the gradient afterwards."""
    if not np.all(np.isfinite(group.grad)):
        raise TrainingDivergenceError(f"non-finite gradient in {group.name}")
    group.step_count += 1
    t = group.step_count
    g = group.grad
    group.adam_m[...] = beta1 * group.adam_m + (1.0 - beta1) * g
    group.adam_v[...] = beta2 * group.adam_v + (1.0 - beta2) * g * g
    m_hat = group.adam_m / (1.0 - beta1 ** t)
    v_hat = group.adam_v / (1.0 - beta2 ** t)
    group.value -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(group.value.dtype)
    group.zero_grad()
    return group


def l1_loss(pred: np.ndarray, target: np.ndarray):
    """Mean absolute error and its subgradient w.r.t. pred (sign(0) = 0)."""
    if pred.shape != target.shape:
        raise DimensionError(
            f"l1_loss: shapes {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(np.abs(diff)))
    grad = np.sign(diff) / diff.size
    return loss, grad


def finite_difference_check(model_fn, params: list[ParamGroup],
                            epsilon: float = 1e-4,
                            samples_per_group: int = 8,
                            seed: int = 0) -> dict[str, float]:
    """Compare analytic gradients against central differences.

    ``model_fn()`` must return ``(loss, grads)`` where ``grads`` maps group
    names to arrays of the group's shape, evaluated at the current parameter
    values.  A random subsample of coordinates is probed per group.  Returns
    the per-group max relative error; never raises on mismatch.
    """
    rng = np.random.default_rng(seed)
    _, analytic = model_fn()
    report: dict[str, float] = {}
    for group in params:
        g = np.asarray(analytic[group.name]).reshape(-1)
        flat = group.value.reshape(-1)
        n = flat.size
        k = min(samples_per_group, n)
        coords = rng.choice(n, size=k, replace=False)
        worst = 0.0
        for c in coords:
            orig = flat[c]
            flat[c] = orig + epsilon
            lp, _ = model_fn()
            flat[c] = orig - epsilon
            lm, _ = model_fn()
            flat[c] = orig
            fd = (lp - lm) / (2.0 * epsilon)
            denom = max(abs(g[c]), abs(fd), 1e-6)
            worst = max(worst, abs(g[c] - fd) / denom)
        report[group.name] = worst
    return report
