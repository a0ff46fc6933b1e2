"""Dense numeric primitives with hand-derived backward rules.

The network in :mod:`timerec.model` is a fixed pipeline, so instead of a
general autodiff tape each primitive here ships a matching ``*_backward``
function and the model composes them explicitly.  All arrays are plain
numpy; float64 is the test-mode dtype (required for finite-difference
checks), float32 is accepted for large training runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for a primitive."""


class DivergenceError(RuntimeError):
    """Raised when a loss or gradient turns non-finite."""


class GradientCheckError(AssertionError):
    """Raised when an analytic gradient disagrees with finite differences."""


# ---------------------------------------------------------------------------
# primitives


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    return a @ b


def matmul_backward(grad_out: np.ndarray, a: np.ndarray, b: np.ndarray):
    """Returns (d_a, d_b) for out = a @ b."""
    if a.ndim == 1 and b.ndim == 2:
        return grad_out @ b.T, np.outer(a, grad_out)
    return grad_out @ b.T, a.T @ grad_out


def add_bias(x: np.ndarray, b: np.ndarray) -> np.ndarray:
    if x.shape[-1] != b.shape[-1]:
        raise ShapeError(f"add_bias: incompatible shapes {x.shape} + {b.shape}")
    return x + b


def add_bias_backward(grad_out: np.ndarray):
    """Returns (d_x, d_b); bias gradient sums over leading axes."""
    if grad_out.ndim == 1:
        return grad_out, grad_out
    return grad_out, grad_out.reshape(-1, grad_out.shape[-1]).sum(axis=0)


def elementwise_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ShapeError(f"elementwise_mul: incompatible shapes {a.shape} * {b.shape}")
    return a * b


def elementwise_mul_backward(grad_out: np.ndarray, a: np.ndarray, b: np.ndarray):
    return grad_out * b, grad_out * a


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign to avoid overflow in exp
    out = np.empty_like(x, dtype=x.dtype)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(grad_out: np.ndarray, out: np.ndarray) -> np.ndarray:
    return grad_out * out * (1.0 - out)


def tanh(x: np.ndarray) -> np.ndarray:
    return np.tanh(x)


def tanh_backward(grad_out: np.ndarray, out: np.ndarray) -> np.ndarray:
    return grad_out * (1.0 - out * out)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(grad_out: np.ndarray, out: np.ndarray, axis: int = -1) -> np.ndarray:
    inner = (grad_out * out).sum(axis=axis, keepdims=True)
    return out * (grad_out - inner)


def concat(parts: list[np.ndarray]) -> np.ndarray:
    return np.concatenate(parts)


def concat_backward(grad_out: np.ndarray, sizes: list[int]) -> list[np.ndarray]:
    grads, off = [], 0
    for n in sizes:
        grads.append(grad_out[off:off + n])
        off += n
    if off != grad_out.shape[0]:
        raise ShapeError(f"concat_backward: sizes {sizes} do not cover {grad_out.shape}")
    return grads


def mean(x: np.ndarray, axis: int | None = None) -> np.ndarray:
    return np.mean(x, axis=axis)


def mean_backward(grad_out: np.ndarray, x_shape: tuple, axis: int | None = None) -> np.ndarray:
    if axis is None:
        n = int(np.prod(x_shape))
        return np.full(x_shape, grad_out / n)
    n = x_shape[axis]
    return np.broadcast_to(np.expand_dims(grad_out / n, axis), x_shape).copy()


def dropout(x: np.ndarray, rate: float, train: bool, rng: np.random.Generator | None = None):
    """Inverted dropout.

    Returns (out, mask); mask is None when the op is an exact identity
    (eval mode or rate 0).  Train-time output is scaled by 1/(1-rate).
    """
    if not train or rate == 0.0:
        return x, None
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rng is None:
        raise ValueError("dropout in train mode needs an rng")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype)
    mask = keep / (1.0 - rate)
    return x * mask, mask


def dropout_backward(grad_out: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    if mask is None:
        return grad_out
    return grad_out * mask


# ---------------------------------------------------------------------------
# parameters and optimizer


@dataclass
class Parameter:
    name: str
    value: np.ndarray
    grad: np.ndarray = field(init=False)
    adam_m: np.ndarray = field(init=False)
    adam_v: np.ndarray = field(init=False)
    step: int = 0

    def __post_init__(self):
        self.grad = np.zeros_like(self.value)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)

    @property
    def shape(self) -> tuple:
        return self.value.shape


class ParameterStore:
    """Named parameters in a fixed insertion order (determinism contract)."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, value: np.ndarray) -> Parameter:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        p = Parameter(name, np.ascontiguousarray(value))
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def zero_grads(self) -> None:
        for p in self:
            p.grad[...] = 0.0


def uniform_init(rng: np.random.Generator, shape: tuple, bound: float, dtype=np.float64) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def adam_step(param: Parameter, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, l2: float = 1e-6) -> None:
    """Bias-corrected Adam update; L2 enters as a gradient term l2 * value."""
    g = param.grad
    if not np.all(np.isfinite(g)):
        raise DivergenceError(f"non-finite gradient in parameter {param.name!r}")
    if l2 != 0.0:
        g = g + l2 * param.value
    param.step += 1
    t = param.step
    param.adam_m[...] = beta1 * param.adam_m + (1.0 - beta1) * g
    param.adam_v[...] = beta2 * param.adam_v + (1.0 - beta2) * (g * g)
    m_hat = param.adam_m / (1.0 - beta1 ** t)
    v_hat = param.adam_v / (1.0 - beta2 ** t)
    param.value[...] = param.value - lr * m_hat / (np.sqrt(v_hat) + eps)


# ---------------------------------------------------------------------------
# finite-difference gradient checking


@dataclass
class FDReport:
    max_rel_error: float
    worst_param: str
    worst_index: tuple
    checked_coords: int

    def __str__(self):
        return (f"max relative error {self.max_rel_error:.3e} at "
                f"{self.worst_param}{list(self.worst_index)} "
                f"({self.checked_coords} coordinates checked)")


def finite_difference_check(f: Callable[[], float], store: ParameterStore,
                            epsilon: float = 1e-5, coords_per_param: int = 200,
                            rng: np.random.Generator | None = None,
                            tolerance: float | None = None) -> FDReport:
    """Compare analytic grads in `store` against central differences of `f`.

    `f` re-evaluates the scalar objective from the current parameter values
    and must not touch `.grad`.  Analytic gradients are read from the store
    as populated by the caller before this runs.  Checks all coordinates of
    a parameter when it has fewer than `coords_per_param`, otherwise a
    random sample.  Relative error uses a small floor so coordinates below
    finite-difference resolution do not produce spurious blowups.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    worst = (0.0, "", ())
    checked = 0
    for p in store:
        if p.value.dtype != np.float64:
            raise ValueError(f"finite_difference_check requires float64, {p.name} is {p.value.dtype}")
        flat_v = p.value.reshape(-1)
        flat_g = p.grad.reshape(-1)
        size = flat_v.shape[0]
        if size <= coords_per_param:
            idxs = np.arange(size)
        else:
            idxs = rng.choice(size, size=coords_per_param, replace=False)
        for i in idxs:
            orig = flat_v[i]
            flat_v[i] = orig + epsilon
            f_plus = f()
            flat_v[i] = orig - epsilon
            f_minus = f()
            flat_v[i] = orig
            fd = (f_plus - f_minus) / (2.0 * epsilon)
            rel = abs(fd - flat_g[i]) / max(abs(fd), abs(flat_g[i]), 1e-6)
            checked += 1
            if rel > worst[0]:
                worst = (rel, p.name, np.unravel_index(i, p.value.shape))
    report = FDReport(worst[0], worst[1], worst[2], checked)
    if tolerance is not None and report.max_rel_error > tolerance:
        raise GradientCheckError(
            f"gradient check failed: {report} exceeds tolerance {tolerance:g}")
    return report
