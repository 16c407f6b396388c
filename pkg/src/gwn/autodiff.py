"""Minimal dense-tensor reverse-mode automatic differentiation.

A Tape records every operation in execution order, which is already a
topological order, so the backward pass is a single reverse sweep that
visits each node exactly once. Tensors are thin handles (array, tape,
node id); arrays are float64 throughout.
"""

from __future__ import annotations

import json
import struct
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf as _erf

from .errors import ValidationError

Array = np.ndarray


def _as_array(value) -> Array:
    return np.asarray(value, dtype=np.float64)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Reduce a broadcasted gradient back to the operand's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tape:
    """Append-only operation record; one per forward/backward episode."""

    def __init__(self):
        self.inputs: list[tuple[int, ...]] = []
        self.backwards: list[Callable[[Array], tuple[Array, ...]] | None] = []

    def _record(self, data: Array, parents: tuple[int, ...], backward) -> "Tensor":
        self.inputs.append(parents)
        self.backwards.append(backward)
        return Tensor(data, self, len(self.inputs) - 1)

    def leaf(self, data) -> "Tensor":
        return self._record(_as_array(data), (), None)

    def constant(self, data) -> "Tensor":
        # recorded like a leaf; simply never asked for its gradient
        return self._record(_as_array(data), (), None)


class Tensor:
    __slots__ = ("data", "tape", "idx")

    def __init__(self, data: Array, tape: Tape, idx: int):
        self.data = _as_array(data)
        self.tape = tape
        self.idx = idx

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, node={self.idx})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other, self.tape), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def _wrap(value, tape: Tape) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return tape.constant(value)


def _binary(a: Tensor, b, forward, backward) -> Tensor:
    b = _wrap(b, a.tape)
    if a.tape is not b.tape:
        raise ValidationError("operands live on different tapes")
    out = forward(a.data, b.data)
    sa, sb = a.data.shape, b.data.shape

    def bwd(grad):
        ga, gb = backward(grad, a.data, b.data)
        return _unbroadcast(ga, sa), _unbroadcast(gb, sb)

    return a.tape._record(out, (a.idx, b.idx), bwd)


def add(a: Tensor, b) -> Tensor:
    return _binary(a, b, lambda x, y: x + y, lambda g, x, y: (g, g))


def sub(a: Tensor, b) -> Tensor:
    return _binary(a, b, lambda x, y: x - y, lambda g, x, y: (g, -g))


def mul(a: Tensor, b) -> Tensor:
    return _binary(a, b, lambda x, y: x * y, lambda g, x, y: (g * y, g * x))


def div(a: Tensor, b) -> Tensor:
    return _binary(
        a, b, lambda x, y: x / y, lambda g, x, y: (g / y, -g * x / (y * y))
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ValidationError(
            f"matmul shape mismatch: {a.data.shape} x {b.data.shape}"
        )

    def bwd(grad):
        return grad @ b.data.T, a.data.T @ grad

    return a.tape._record(a.data @ b.data, (a.idx, b.idx), bwd)


def _unary(a: Tensor, forward, backward) -> Tensor:
    out = forward(a.data)

    def bwd(grad):
        return (backward(grad, a.data, out),)

    return a.tape._record(out, (a.idx,), bwd)


def elu(a: Tensor) -> Tensor:
    return _unary(
        a,
        lambda x: np.where(x > 0, x, np.expm1(x)),
        lambda g, x, y: g * np.where(x > 0, 1.0, np.exp(x)),
    )


def softplus(a: Tensor) -> Tensor:
    return _unary(
        a,
        lambda x: np.logaddexp(0.0, x),
        lambda g, x, y: g / (1.0 + np.exp(-x)),
    )


def exp(a: Tensor) -> Tensor:
    return _unary(a, np.exp, lambda g, x, y: g * y)


def log(a: Tensor) -> Tensor:
    return _unary(a, np.log, lambda g, x, y: g / x)


def sqrt(a: Tensor) -> Tensor:
    return _unary(a, np.sqrt, lambda g, x, y: g / (2.0 * y))


def erf(a: Tensor) -> Tensor:
    coef = 2.0 / np.sqrt(np.pi)
    return _unary(a, _erf, lambda g, x, y: g * coef * np.exp(-x * x))


def st_quantize(a: Tensor) -> Tensor:
    """Round half away from zero forward; identity gradient backward."""
    return _unary(
        a,
        lambda x: np.copysign(np.floor(np.abs(x) + 0.5), x),
        lambda g, x, y: g,
    )


def combine_matched(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise mean where the operands agree, zero where they differ.

    Gradients split equally to both operands at matching positions and
    vanish at mismatches.
    """
    if a.data.shape != b.data.shape:
        raise ValidationError(
            f"combine shape mismatch: {a.data.shape} vs {b.data.shape}"
        )
    mask = a.data == b.data
    out = np.where(mask, 0.5 * (a.data + b.data), 0.0)

    def bwd(grad):
        half = 0.5 * grad * mask
        return half, half

    return a.tape._record(out, (a.idx, b.idx), bwd)


def lower_bound(a: Tensor, bound: float) -> Tensor:
    """Clamp from below; gradient passes when unclamped or pushing upward."""
    out = np.maximum(a.data, bound)

    def bwd(grad):
        passes = (a.data >= bound) | (grad < 0)
        return (grad * passes,)

    return a.tape._record(out, (a.idx,), bwd)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tape = tensors[0].tape
    sizes = [t.data.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([0] + sizes)

    def bwd(grad):
        pieces = []
        for k in range(len(sizes)):
            index = [slice(None)] * grad.ndim
            index[axis] = slice(offsets[k], offsets[k + 1])
            pieces.append(grad[tuple(index)])
        return tuple(pieces)

    return tape._record(out, tuple(t.idx for t in tensors), bwd)


def split(a: Tensor, sizes: Sequence[int], axis: int = 1) -> list[Tensor]:
    if sum(sizes) != a.data.shape[axis]:
        raise ValidationError(
            f"split sizes {tuple(sizes)} do not cover axis of {a.data.shape}"
        )
    pieces = []
    offset = 0
    for size in sizes:
        index = [slice(None)] * a.data.ndim
        index[axis] = slice(offset, offset + size)
        index = tuple(index)

        def bwd(grad, index=index):
            full = np.zeros_like(a.data)
            full[index] = grad
            return (full,)

        pieces.append(a.tape._record(a.data[index], (a.idx,), bwd))
        offset += size
    return pieces


def tsum(a: Tensor) -> Tensor:
    return _unary(a, lambda x: np.asarray(x.sum()), lambda g, x, y: g * np.ones_like(x))


def tmean(a: Tensor) -> Tensor:
    return _unary(
        a,
        lambda x: np.asarray(x.mean()),
        lambda g, x, y: g * np.ones_like(x) / x.size,
    )


def sum_sq(a: Tensor) -> Tensor:
    return _unary(a, lambda x: np.asarray((x * x).sum()), lambda g, x, y: 2.0 * g * x)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross entropy over the batch, in nats."""
    labels = np.asarray(labels, dtype=np.int64)
    x = logits.data
    shifted = x - x.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    n = x.shape[0]
    loss = -log_probs[np.arange(n), labels].mean()

    def bwd(grad):
        soft = np.exp(log_probs)
        soft[np.arange(n), labels] -= 1.0
        return (grad * soft / n,)

    return logits.tape._record(np.asarray(loss), (logits.idx,), bwd)


def backward(tape: Tape, loss: Tensor) -> list[Array | None]:
    """Reverse sweep from a scalar loss; returns per-node gradients."""
    if loss.data.ndim != 0 and loss.data.size != 1:
        raise ValidationError(f"loss must be scalar, got shape {loss.data.shape}")
    grads: list[Array | None] = [None] * len(tape.inputs)
    grads[loss.idx] = np.ones_like(loss.data)
    for idx in range(loss.idx, -1, -1):
        grad = grads[idx]
        if grad is None or tape.backwards[idx] is None:
            continue
        for parent, parent_grad in zip(tape.inputs[idx], tape.backwards[idx](grad)):
            if grads[parent] is None:
                grads[parent] = np.array(parent_grad, dtype=np.float64, copy=True)
            else:
                grads[parent] = grads[parent] + parent_grad
    return grads


def gradient(grads: list[Array | None], tensor: Tensor) -> Array:
    """Gradient of a tensor, with disconnected nodes reading as zero."""
    g = grads[tensor.idx]
    return np.zeros_like(tensor.data) if g is None else g


# --- optimizer -----------------------------------------------------------------

def clip_gradients(grads: dict[str, Array], max_norm: float = 1.0) -> dict[str, Array]:
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total <= max_norm or total == 0.0:
        return grads
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}


def adam_init(params: dict[str, Array]) -> dict:
    return {
        "step": 0,
        "m": {k: np.zeros_like(v) for k, v in params.items()},
        "v": {k: np.zeros_like(v) for k, v in params.items()},
    }


def adam_step(
    params: dict[str, Array],
    grads: dict[str, Array],
    state: dict,
    lr: float = 1e-4,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    clip_norm: float | None = 1.0,
) -> tuple[dict[str, Array], dict]:
    """One Adam update with prior global gradient-norm clipping."""
    if set(params) != set(grads):
        raise ValidationError("params and grads must share the same keys")
    if clip_norm is not None:
        grads = clip_gradients(grads, clip_norm)
    b1, b2 = betas
    t = state["step"] + 1
    new_params = {}
    for key, value in params.items():
        g = grads[key]
        state["m"][key] = b1 * state["m"][key] + (1 - b1) * g
        state["v"][key] = b2 * state["v"][key] + (1 - b2) * g * g
        m_hat = state["m"][key] / (1 - b1**t)
        v_hat = state["v"][key] / (1 - b2**t)
        new_params[key] = value - lr * m_hat / (np.sqrt(v_hat) + eps)
    state["step"] = t
    return new_params, state


# --- checkpoints ----------------------------------------------------------------

def save_checkpoint(params: dict[str, Array], path: str) -> None:
    """Shape-prefixed little-endian float64 blob plus a JSON name manifest."""
    names = list(params.keys())
    with open(path, "wb") as fh:
        for name in names:
            arr = np.asarray(params[name], dtype="<f8", order="C")
            fh.write(struct.pack("<I", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.tobytes())
    with open(str(path) + ".json", "w", encoding="ascii") as fh:
        json.dump({"layers": names}, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path: str) -> dict[str, Array]:
    with open(str(path) + ".json", "r", encoding="ascii") as fh:
        names = json.load(fh)["layers"]
    params: dict[str, Array] = {}
    with open(path, "rb") as fh:
        for name in names:
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(ndim))
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape)
            params[name] = data.astype(np.float64)
    return params
