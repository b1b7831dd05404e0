"""Dense NHWC tensors with tape-based reverse-mode differentiation.

Operations run eagerly on numpy arrays. When a `Graph` is active (``with
Graph() as graph:``) and an input requires gradients, the operation appends a
node to the tape; `Graph.backward` then walks the tape in reverse creation
order.
"""

from __future__ import annotations

from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np

logger = logging.getLogger(__name__)

CE_EPSILON = 1e-7
POINTWISE_KINDS = ("relu", "logistic", "tanh", "softplus")
ELEMENTWISE_KINDS = ("add", "mul")

_active_graph: ContextVar[Optional["Graph"]] = ContextVar("active_graph", default=None)


class Tensor:
    """Dense array plus optional gradient buffer.

    Activations are (batch, height, width, channels); kernels are
    (kh, kw, cin, cout), biases are vectors and losses are 0-d.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "is_leaf")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None,
                 dtype=None, is_leaf: bool = True):
        array = np.asarray(data, dtype=dtype)
        if array.dtype not in (np.float32, np.float64):
            array = array.astype(np.float32)
        self.data: np.ndarray = array
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self.is_leaf = is_leaf

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"


@dataclass
class Node:
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Graph:
    """Recording tape. Nodes are kept in creation order."""

    nodes: List[Node] = field(default_factory=list)
    consumed: bool = False
    _token: object = field(default=None, repr=False)

    def __enter__(self) -> "Graph":
        self._token = _active_graph.set(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _active_graph.reset(self._token)
        self._token = None

    def record(self, node: Node) -> None:
        if self.consumed:
            raise RuntimeError("Graph already consumed by backward; call reset() first")
        self.nodes.append(node)

    def reset(self) -> None:
        self.nodes.clear()
        self.consumed = False

    def backward(self, loss: Tensor) -> Dict[int, np.ndarray]:
        """Populate ``.grad`` of every leaf tensor that requires gradients.

        Returns the gradient map keyed by ``id(tensor)``; intermediates are
        only reachable through it.
        """
        if self.consumed:
            raise RuntimeError("backward called twice on the same graph without reset()")
        if loss.data.ndim != 0:
            raise ValueError(f"backward expects a scalar loss, got shape {loss.shape}")
        if not any(node.output is loss for node in self.nodes):
            raise ValueError("loss was not produced by this graph")

        grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: Dict[int, Tensor] = {}
        for node in reversed(self.nodes):
            upstream = grads.pop(id(node.output), None)
            if upstream is None:
                continue
            input_grads = node.backward(upstream)
            for tensor, grad in zip(node.inputs, input_grads):
                if grad is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                if key in grads:
                    grads[key] = grads[key] + grad
                else:
                    grads[key] = grad
                if tensor.is_leaf:
                    leaves[key] = tensor

        for key, tensor in leaves.items():
            grad = grads[key].astype(tensor.dtype, copy=False)
            _require_finite(grad, f"gradient of {tensor.name or 'tensor'}")
            tensor.grad = grad if tensor.grad is None else tensor.grad + grad
        self.consumed = True
        return grads


def active_graph() -> Optional[Graph]:
    return _active_graph.get()


def zero_grad(params) -> None:
    for tensor in _iter_tensors(params):
        tensor.grad = None


def _iter_tensors(params):
    if isinstance(params, dict):
        return params.values()
    return params


def _require_finite(array: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(array)):
        raise FloatingPointError(f"non-finite values in {what}")


def _emit(op: str, data: np.ndarray, inputs: Tuple[Tensor, ...],
          backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> Tensor:
    """Wrap an op result and record it on the active graph when needed."""
    _require_finite(data, f"{op} output")
    requires_grad = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=requires_grad, is_leaf=False)
    graph = _active_graph.get()
    if graph is not None and requires_grad:
        graph.record(Node(op, inputs, out, backward))
    return out


def _check_inputs(op: str, *tensors: Tensor) -> None:
    for tensor in tensors:
        _require_finite(tensor.data, f"{op} input")


def custom_op(op: str, data: np.ndarray, inputs: Tuple[Tensor, ...],
              backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> Tensor:
    """Record an operation implemented outside this module."""
    _check_inputs(op, *inputs)
    return _emit(op, data, inputs, backward)


# --- convolution -----------------------------------------------------------

def _conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2D cross-correlation with zero padding, NHWC layout."""
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input and kernel, got {x.shape} and {kernel.shape}")
    kh, kw, cin, cout = kernel.shape
    if x.shape[3] != cin:
        raise ValueError(f"conv2d channel mismatch: input {x.shape} vs kernel {kernel.shape}")
    if bias.shape != (cout,):
        raise ValueError(f"conv2d bias shape {bias.shape} does not match kernel {kernel.shape}")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d needs stride >= 1 and padding >= 0, got {stride}, {padding}")
    _check_inputs("conv2d", x, kernel, bias)

    batch, height, width, _ = x.shape
    out_h = _conv_output_size(height, kh, stride, padding)
    out_w = _conv_output_size(width, kw, stride, padding)
    if out_h < 1 or out_w < 1:
        raise ValueError(f"conv2d kernel {kernel.shape} too large for input {x.shape}")

    padded = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(1, 2))
    windows = windows[:, ::stride, ::stride][:, :out_h, :out_w]
    # windows: (B, out_h, out_w, cin, kh, kw) -> columns ordered (kh, kw, cin)
    cols = windows.transpose(0, 1, 2, 4, 5, 3).reshape(batch * out_h * out_w, kh * kw * cin)
    weight = kernel.data.reshape(kh * kw * cin, cout)
    out = (cols @ weight).reshape(batch, out_h, out_w, cout) + bias.data

    def backward(grad: np.ndarray):
        grad_rows = grad.reshape(batch * out_h * out_w, cout)
        grad_kernel = (cols.T @ grad_rows).reshape(kh, kw, cin, cout)
        grad_bias = grad_rows.sum(axis=0)
        grad_cols = (grad_rows @ weight.T).reshape(batch, out_h, out_w, kh, kw, cin)
        grad_padded = np.zeros_like(padded)
        for di in range(kh):
            for dj in range(kw):
                grad_padded[:, di:di + stride * out_h:stride, dj:dj + stride * out_w:stride, :] += \
                    grad_cols[:, :, :, di, dj, :]
        grad_x = grad_padded[:, padding:padding + height, padding:padding + width, :]
        return grad_x, grad_kernel, grad_bias

    return _emit("conv2d", out, (x, kernel, bias), backward)


# --- pointwise ---------------------------------------------------------------

def logistic_array(values: np.ndarray) -> np.ndarray:
    decay = np.exp(-np.abs(values))
    return np.where(values >= 0, 1 / (1 + decay), decay / (1 + decay))


def pointwise(x: Tensor, kind: str) -> Tensor:
    if kind not in POINTWISE_KINDS:
        raise ValueError(f"Unsupported pointwise kind: {kind}")
    _check_inputs(kind, x)
    data = x.data

    if kind == "relu":
        out = np.maximum(data, 0)

        def backward(grad):
            return (grad * (data > 0),)
    elif kind == "logistic":
        out = logistic_array(data)

        def backward(grad):
            return (grad * out * (1 - out),)
    elif kind == "tanh":
        out = np.tanh(data)

        def backward(grad):
            return (grad * (1 - out * out),)
    else:
        out = np.logaddexp(0, data).astype(data.dtype, copy=False)

        def backward(grad):
            return (grad * logistic_array(data),)

    return _emit(kind, out, (x,), backward)


def relu(x: Tensor) -> Tensor:
    return pointwise(x, "relu")


def logistic(x: Tensor) -> Tensor:
    return pointwise(x, "logistic")


# --- binary ------------------------------------------------------------------

def elementwise(a: Tensor, b: Tensor, kind: str) -> Tensor:
    if kind not in ELEMENTWISE_KINDS:
        raise ValueError(f"Unsupported elementwise kind: {kind}")
    if a.shape != b.shape:
        raise ValueError(f"{kind} shape mismatch: {a.shape} vs {b.shape}")
    _check_inputs(kind, a, b)

    if kind == "add":
        out = a.data + b.data

        def backward(grad):
            return grad, grad
    else:
        out = a.data * b.data

        def backward(grad):
            return grad * b.data, grad * a.data

    return _emit(kind, out, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    return elementwise(a, b, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    return elementwise(a, b, "mul")


def scale(x: Tensor, factor: float) -> Tensor:
    _check_inputs("scale", x)
    out = x.data * x.dtype.type(factor)

    def backward(grad):
        return (grad * factor,)

    return _emit("scale", out, (x,), backward)


def reduce_sum(x: Tensor) -> Tensor:
    _check_inputs("reduce_sum", x)
    out = np.asarray(x.data.sum(), dtype=x.dtype)

    def backward(grad):
        return (np.broadcast_to(grad, x.shape).astype(x.dtype),)

    return _emit("reduce_sum", out, (x,), backward)


# --- reshaping ---------------------------------------------------------------

def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling of the spatial axes."""
    if x.data.ndim != 4:
        raise ValueError(f"upsample2x expects NHWC input, got {x.shape}")
    _check_inputs("upsample2x", x)
    out = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)
    batch, height, width, channels = x.shape

    def backward(grad):
        return (grad.reshape(batch, height, 2, width, 2, channels).sum(axis=(2, 4)),)

    return _emit("upsample2x", out, (x,), backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 4 or b.data.ndim != 4 or a.shape[:3] != b.shape[:3]:
        raise ValueError(f"concat_channels spatial mismatch: {a.shape} vs {b.shape}")
    _check_inputs("concat_channels", a, b)
    out = np.concatenate([a.data, b.data], axis=3)
    split = a.shape[3]

    def backward(grad):
        return grad[..., :split], grad[..., split:]

    return _emit("concat_channels", out, (a, b), backward)


# --- loss --------------------------------------------------------------------

def cross_entropy(pred: Tensor, target: Tensor, epsilon: float = CE_EPSILON) -> Tensor:
    """Mean binary cross entropy with predictions clipped to [eps, 1 - eps]."""
    if pred.shape != target.shape:
        raise ValueError(f"cross_entropy shape mismatch: {pred.shape} vs {target.shape}")
    _check_inputs("cross_entropy", pred, target)
    labels = target.data
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("cross_entropy target must be binary {0, 1}")

    dtype = pred.dtype
    lo = dtype.type(epsilon)
    hi = dtype.type(1 - epsilon)
    clipped = np.clip(pred.data, lo, hi)
    count = pred.data.size
    losses = -(labels * np.log(clipped) + (1 - labels) * np.log(1 - clipped))
    out = np.asarray(losses.mean(), dtype=dtype)

    def backward(grad):
        inside = (pred.data >= lo) & (pred.data <= hi)
        local = (clipped - labels) / (clipped * (1 - clipped)) / count
        return grad * local * inside, None

    return _emit("cross_entropy", out, (pred, target), backward)
