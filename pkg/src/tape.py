"""
Reverse-mode gradient tape over a closed set of tensor operations.

Every operation records a TapeNode holding its inputs and the activations its
backward rule needs. Nodes are appended in execution order, so walking the list
backwards is a valid reverse topological order and each node is visited once.

Supported ops: conv2d, bias_add, relu, softplus, add, sub, mul, div, neg, power,
absolute, mean, total (sum) and window_filter (separable symmetric-padded
smoothing, used for the SSIM window statistics).
"""

from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.special import expit

from .errors import ShapeMismatchError, TapeError

Backward = Callable[[np.ndarray], tuple[np.ndarray | None, ...]]


@dataclass(eq=False)
class TapeNode:
    """One recorded operation: kind, inputs and the closure computing input gradients."""

    op: str
    inputs: tuple["Var", ...]
    output: "Var"
    backward: Backward


class Var:
    """A tensor value living on a tape, with an optional gradient slot."""

    __array_ufunc__ = None

    def __init__(self, data: np.ndarray, tape: "Tape", requires_grad: bool = False):
        self.data = np.asarray(data)
        self.tape = tape
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Var(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self, like=self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self, like=self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self, like=self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self, like=self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)


class Tape:
    """Records operations and replays them backwards once."""

    def __init__(
        self, dtype: np.dtype | type = np.float32, kinks: Sequence[np.ndarray] | None = None
    ):
        self.dtype = np.dtype(dtype)
        self.nodes: list[TapeNode] = []
        self.bindings: dict[str, Var] = {}
        self.consumed = False
        self.kinks: list[np.ndarray] = []
        self._frozen = None if kinks is None else list(kinks)

    def kink_sign(self, data: np.ndarray) -> np.ndarray:
        """
        Sign pattern of a relu/abs input, in recording order.

        A tape created with ``kinks`` replays those signs instead of reading them
        from ``data``, so a finite-difference evaluation stays on the linear piece
        of the recorded graph.

        Raises:
            TapeError: If the replayed pattern does not match the graph
        """
        if self._frozen is None:
            sign = np.sign(data).astype(np.float64)
        else:
            index = len(self.kinks)
            if index >= len(self._frozen) or self._frozen[index].shape != np.shape(data):
                raise TapeError(f"kink pattern does not match the graph at kink {index}")
            sign = self._frozen[index]
        self.kinks.append(sign)
        return sign

    def variable(self, data: np.ndarray, name: str | None = None) -> Var:
        """Create a leaf that receives gradients; named leaves are tracked in ``bindings``."""
        var = Var(np.array(data, dtype=self.dtype), self, requires_grad=True)
        if name is not None:
            self.bindings[name] = var
        return var

    def constant(self, data) -> Var:
        """Create a leaf that never receives gradients."""
        return Var(np.asarray(data, dtype=self.dtype), self, requires_grad=False)

    def record(self, op: str, inputs: tuple[Var, ...], data: np.ndarray, backward: Backward) -> Var:
        if self.consumed:
            raise TapeError("tape has already been consumed by backward()")
        requires_grad = any(v.requires_grad for v in inputs)
        data = np.asarray(data)
        # scalar reductions keep double precision
        dtype = np.float64 if data.ndim == 0 else self.dtype
        out = Var(data.astype(dtype), self, requires_grad=requires_grad)
        if requires_grad:
            self.nodes.append(TapeNode(op, inputs, out, backward))
        return out

    def backward(self, output: Var, seed: np.ndarray | float | None = None) -> None:
        """
        Propagate d(output) back to every leaf that requires gradients.

        Args:
            output: Value to differentiate (usually a scalar loss)
            seed: Upstream gradient; ones when omitted

        Raises:
            TapeError: If the tape was already consumed or output lives elsewhere
        """
        if self.consumed:
            raise TapeError("backward() called twice on the same tape")
        if output.tape is not self:
            raise TapeError("output was not recorded on this tape")

        if seed is None:
            output.grad = np.ones(output.shape, dtype=np.float64)
        else:
            output.grad = np.broadcast_to(np.asarray(seed, dtype=np.float64), output.shape).copy()

        for node in reversed(self.nodes):
            upstream = node.output.grad
            if upstream is None:
                continue
            grads = node.backward(upstream)
            for var, grad in zip(node.inputs, grads, strict=True):
                if grad is None or not var.requires_grad:
                    continue
                grad = _unbroadcast(np.asarray(grad, dtype=np.float64), var.shape)
                var.grad = grad if var.grad is None else var.grad + grad
            if node.output is not output:
                node.output.grad = None

        self.nodes.clear()
        self.consumed = True


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _lift(value, like: Var) -> Var:
    if isinstance(value, Var):
        if value.tape is not like.tape:
            raise TapeError("cannot combine values recorded on different tapes")
        return value
    return like.tape.constant(value)


def _pair(a, b, like: Var | None) -> tuple[Var, Var]:
    anchor = like if like is not None else (a if isinstance(a, Var) else b)
    return _lift(a, anchor), _lift(b, anchor)


def add(a, b, like: Var | None = None) -> Var:
    a, b = _pair(a, b, like)
    return a.tape.record("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a, b, like: Var | None = None) -> Var:
    a, b = _pair(a, b, like)
    return a.tape.record("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def mul(a, b, like: Var | None = None) -> Var:
    a, b = _pair(a, b, like)
    a_data, b_data = a.data, b.data
    return a.tape.record("mul", (a, b), a_data * b_data, lambda g: (g * b_data, g * a_data))


def div(a, b, like: Var | None = None) -> Var:
    a, b = _pair(a, b, like)
    a_data = a.data.astype(np.float64)
    b_data = b.data.astype(np.float64)
    quotient = a_data / b_data

    def backward(g):
        return g / b_data, -g * quotient / b_data

    return a.tape.record("div", (a, b), quotient, backward)


def neg(a: Var) -> Var:
    return a.tape.record("neg", (a,), -a.data, lambda g: (-g,))


def power(a: Var, exponent: float) -> Var:
    """Elementwise a**exponent for a non-negative base."""
    base = a.data.astype(np.float64)
    out = np.power(base, exponent)

    def backward(g):
        positive = base > 0
        safe = np.where(positive, base, 1.0)
        slope = np.where(positive, exponent * np.power(safe, exponent - 1.0), 0.0)
        if exponent == 1.0:
            slope = np.ones_like(base)
        return (g * slope,)

    return a.tape.record("pow", (a,), out, backward)


def absolute(a: Var) -> Var:
    sign = a.tape.kink_sign(a.data)
    return a.tape.record("abs", (a,), a.data * sign, lambda g: (g * sign,))


def relu(a: Var) -> Var:
    mask = (a.tape.kink_sign(a.data) > 0).astype(np.float64)
    return a.tape.record("relu", (a,), a.data * mask, lambda g: (g * mask,))


def softplus(a: Var) -> Var:
    """log(1 + e^a), computed stably."""
    x = a.data.astype(np.float64)
    slope = expit(x)
    return a.tape.record("softplus", (a,), np.logaddexp(0.0, x), lambda g: (g * slope,))


def mean(a: Var) -> Var:
    size = a.data.size
    shape = a.shape
    value = np.mean(a.data, dtype=np.float64)
    return a.tape.record("mean", (a,), value, lambda g: (np.full(shape, float(g) / size),))


def total(a: Var) -> Var:
    shape = a.shape
    value = np.sum(a.data, dtype=np.float64)
    return a.tape.record("sum", (a,), value, lambda g: (np.full(shape, float(g)),))


def symmetric_index(length: int, radius: int) -> np.ndarray:
    """Source index for each position of a mirror-padded axis."""
    return np.pad(np.arange(length), radius, mode="symmetric")


def _fold_axis(grad_padded: np.ndarray, length: int, radius: int, axis: int) -> np.ndarray:
    """Adjoint of symmetric padding along one axis."""
    index = symmetric_index(length, radius)
    shape = list(grad_padded.shape)
    shape[axis] = length
    folded = np.zeros(shape, dtype=np.float64)
    selector: list = [slice(None)] * grad_padded.ndim
    selector[axis] = index
    np.add.at(folded, tuple(selector), grad_padded)
    return folded


def _pad_symmetric(data: np.ndarray, radius: int) -> np.ndarray:
    return np.pad(data, ((radius, radius), (radius, radius), (0, 0)), mode="symmetric")


def conv2d(x: Var, w: Var) -> Var:
    """
    Stride-1 'same' convolution (cross-correlation) of an H×W×Cin tensor.

    Weights have shape (k, k, Cin, Cout) with odd k; borders are mirror-padded.
    """
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise ShapeMismatchError(
            f"conv2d expects HWC input and kkIO weights, got {x.shape}, {w.shape}"
        )
    k = w.shape[0]
    if k != w.shape[1] or k % 2 != 1:
        raise ShapeMismatchError(f"conv2d kernel must be square and odd, got {w.shape[:2]}")
    if x.shape[2] != w.shape[2]:
        raise ShapeMismatchError(
            f"conv2d channel mismatch: input {x.shape[2]}, weights {w.shape[2]}"
        )

    radius = k // 2
    height, width, _ = x.shape
    padded = _pad_symmetric(x.data.astype(np.float64), radius)
    weights = w.data.astype(np.float64)
    out = np.zeros((height, width, w.shape[3]), dtype=np.float64)
    for i in range(k):
        for j in range(k):
            out += padded[i : i + height, j : j + width, :] @ weights[i, j]

    def backward(g):
        grad_padded = np.zeros_like(padded)
        grad_w = np.zeros_like(weights)
        flat_g = g.reshape(-1, g.shape[2])
        for i in range(k):
            for j in range(k):
                window = padded[i : i + height, j : j + width, :]
                grad_padded[i : i + height, j : j + width, :] += g @ weights[i, j].T
                grad_w[i, j] = window.reshape(-1, window.shape[2]).T @ flat_g
        grad_x = _fold_axis(grad_padded, height, radius, axis=0)
        grad_x = _fold_axis(grad_x, width, radius, axis=1)
        return grad_x, grad_w

    return x.tape.record("conv2d", (x, w), out, backward)


def bias_add(x: Var, b: Var) -> Var:
    """Add a per-channel bias to an H×W×C tensor."""
    if b.data.ndim != 1 or b.shape[0] != x.shape[-1]:
        raise ShapeMismatchError(f"bias of shape {b.shape} does not match {x.shape[-1]} channels")
    return x.tape.record(
        "bias_add", (x, b), x.data + b.data, lambda g: (g, g.reshape(-1, g.shape[-1]).sum(axis=0))
    )


def _filter_adjoint_axis(grad: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    """Adjoint of mirror-padded correlation along one axis."""
    radius = taps.size // 2
    length = grad.shape[axis]
    widths = [(0, 0)] * grad.ndim
    widths[axis] = (radius, radius)
    full = ndimage.correlate1d(np.pad(grad, widths), taps[::-1], axis=axis, mode="constant")
    return _fold_axis(full, length, radius, axis)


def window_filter(x: Var, taps: np.ndarray) -> Var:
    """
    Separable smoothing of the spatial axes with mirror padding.

    Requires each spatial size to exceed the filter radius.
    """
    taps = np.asarray(taps, dtype=np.float64)
    radius = taps.size // 2
    if x.shape[0] <= radius or x.shape[1] <= radius:
        raise ShapeMismatchError(
            f"window of radius {radius} needs spatial size > {radius}, got {x.shape[:2]}"
        )
    out = ndimage.correlate1d(x.data.astype(np.float64), taps, axis=0, mode="reflect")
    out = ndimage.correlate1d(out, taps, axis=1, mode="reflect")

    def backward(g):
        grad = _filter_adjoint_axis(g, taps, axis=1)
        return (_filter_adjoint_axis(grad, taps, axis=0),)

    return x.tape.record("window_filter", (x,), out, backward)
