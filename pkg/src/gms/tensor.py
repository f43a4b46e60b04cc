"""Dense tensors with tape-based reverse-mode automatic differentiation.

All arithmetic is carried out on contiguous row-major :mod:`numpy` buffers.
Every operation that involves a tensor with ``requires_grad=True`` records a
:class:`Node` carrying the saved activations of its backward rule. Nodes are
numbered in creation order, so sorting the nodes reachable from a loss by
that number yields a valid topological order of the graph (the tape).
"""

from __future__ import annotations

import itertools
import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Iterator, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, DimensionError, GraphStateError, UsageError

if TYPE_CHECKING:
    from typing_extensions import TypeAlias

    Gradient: TypeAlias = Union[np.ndarray, None]
    BackwardFn: TypeAlias = Callable[[np.ndarray], Sequence[Gradient]]

_PRECISIONS = {"float32": np.float32, "float64": np.float64}


@dataclass
class _EngineState:
    dtype: type[np.floating] = np.float32
    grad_enabled: bool = True


_state = _EngineState()
_uids = itertools.count()
_sequence = itertools.count()


def set_precision(name: str) -> None:
    """Set the global floating point precision ("float32" or "float64")."""
    if name not in _PRECISIONS:
        msg = f"Unknown precision {name!r}; expected one of {sorted(_PRECISIONS)}."
        raise ConfigurationError(msg)
    _state.dtype = _PRECISIONS[name]


def get_precision() -> str:
    """Return the name of the active global precision."""
    return "float64" if _state.dtype is np.float64 else "float32"


@contextmanager
def precision(name: str) -> Iterator[None]:
    """Temporarily switch the global precision."""
    previous = get_precision()
    set_precision(name)
    try:
        yield
    finally:
        set_precision(previous)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block."""
    previous = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


def is_grad_enabled() -> bool:
    """Return whether operations currently record graph nodes."""
    return _state.grad_enabled


class Node:
    """A recorded operation: its inputs and the rule that maps an output gradient to input gradients."""

    __slots__ = ("backward_fn", "consumed", "inputs", "op", "output_uid", "seq")

    def __init__(self, op: str, inputs: tuple[Tensor, ...], backward_fn: BackwardFn, output_uid: int) -> None:
        """Create a node and assign it the next tape position."""
        self.op = op
        self.inputs = inputs
        self.backward_fn: BackwardFn | None = backward_fn
        self.output_uid = output_uid
        self.seq = next(_sequence)
        self.consumed = False

    def __repr__(self) -> str:
        """Return a short description of the node."""
        return f"Node(op={self.op!r}, seq={self.seq}, consumed={self.consumed})"


class Tensor:
    """An n-dimensional float array with optional graph linkage."""

    __slots__ = ("data", "name", "node", "requires_grad", "uid")

    def __init__(self, data: object, requires_grad: bool = False, name: str | None = None) -> None:
        """Create a tensor holding a copy of ``data`` in the active precision.

        Args:
            data: Anything :func:`numpy.array` accepts.
            requires_grad: Whether backward() should produce a gradient for this tensor.
            name: Optional label used in error messages and archives.
        """
        self.data: np.ndarray = np.array(data, dtype=_state.dtype, order="C", copy=True)
        self.requires_grad = requires_grad
        self.name = name
        self.node: Node | None = None
        self.uid = next(_uids)

    @classmethod
    def _wrap(cls, array: np.ndarray) -> Tensor:
        out = cls.__new__(cls)
        data = np.asarray(array, dtype=_state.dtype)
        out.data = data if data.flags.c_contiguous else data.copy(order="C")
        out.requires_grad = False
        out.name = None
        out.node = None
        out.uid = next(_uids)
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        """Shape of the tensor."""
        return self.data.shape

    @property
    def ndim(self) -> int:
        """Number of axes."""
        return self.data.ndim

    @property
    def size(self) -> int:
        """Number of elements."""
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype:
        """Element type of the buffer."""
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        """Whether the tensor was created by the user rather than by an operation."""
        return self.node is None

    def numpy(self) -> np.ndarray:
        """Return a copy of the underlying buffer."""
        return self.data.copy()

    def item(self) -> float:
        """Return the value of a single-element tensor."""
        if self.size != 1:
            msg = f"item() requires a single-element tensor, got shape {self.shape}."
            raise UsageError(msg)
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        """Return a short description of the tensor."""
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}{label})"

    def __add__(self, other: Tensor | float) -> Tensor:
        """Elementwise addition."""
        return add(self, other) if isinstance(other, Tensor) else shift(self, float(other))

    def __radd__(self, other: float) -> Tensor:
        """Scalar shift."""
        return shift(self, float(other))

    def __sub__(self, other: Tensor | float) -> Tensor:
        """Elementwise subtraction."""
        return subtract(self, other) if isinstance(other, Tensor) else shift(self, -float(other))

    def __rsub__(self, other: float) -> Tensor:
        """Scalar minus tensor."""
        return shift(negate(self), float(other))

    def __mul__(self, other: Tensor | float) -> Tensor:
        """Elementwise multiplication."""
        return multiply(self, other) if isinstance(other, Tensor) else scale(self, float(other))

    def __rmul__(self, other: float) -> Tensor:
        """Scalar scaling."""
        return scale(self, float(other))

    def __truediv__(self, other: Tensor | float) -> Tensor:
        """Elementwise division."""
        return divide(self, other) if isinstance(other, Tensor) else scale(self, 1.0 / float(other))

    def __neg__(self) -> Tensor:
        """Negation."""
        return negate(self)


def record_op(out: np.ndarray, op: str, inputs: tuple[Tensor, ...], backward_fn: BackwardFn) -> Tensor:
    """Wrap the result of an operation and, if needed, record it on the tape.

    Args:
        out: The forward result.
        op: Name of the operation (used in diagnostics).
        inputs: The tensors the result depends on.
        backward_fn: Maps the gradient of the result to one gradient (or None) per input.

    Returns:
        The result tensor.
    """
    result = Tensor._wrap(out)  # noqa: SLF001
    if _state.grad_enabled and any(t.requires_grad for t in inputs):
        result.requires_grad = True
        result.node = Node(op, inputs, backward_fn, result.uid)
    return result


# ---------------------------------------------------------------------------
# graph traversal


@dataclass
class ComputationGraph:
    """The nodes reachable from a root tensor, in tape (creation) order."""

    nodes: list[Node] = field(default_factory=list)

    @classmethod
    def trace(cls, root: Tensor) -> ComputationGraph:
        """Collect every node the root depends on."""
        if root.node is None:
            return cls()
        seen: set[int] = set()
        stack = [root.node]
        nodes: list[Node] = []
        while stack:
            node = stack.pop()
            if node.seq in seen:
                continue
            if node.consumed:
                msg = f"The graph behind {node.op!r} has already been consumed by a previous backward()."
                raise GraphStateError(msg)
            seen.add(node.seq)
            nodes.append(node)
            stack.extend(t.node for t in node.inputs if t.node is not None)
        nodes.sort(key=lambda n: n.seq)
        return cls(nodes)


def _consumed(_grad: np.ndarray) -> Sequence[Gradient]:
    msg = "backward() was called twice on the same graph."
    raise GraphStateError(msg)


def backward(loss: Tensor) -> dict[int, Tensor]:
    """Run reverse-mode differentiation from a scalar loss.

    Gradients accumulate additively over every path. The graph is consumed:
    calling backward() again on any tensor of the same graph raises
    :class:`~gms.errors.GraphStateError`.

    Args:
        loss: Single-element tensor connected to the graph.

    Returns:
        Mapping from :attr:`Tensor.uid` of every leaf with ``requires_grad=True`` to its gradient.
    """
    if loss.size != 1:
        msg = f"backward() requires a scalar loss, got shape {loss.shape}."
        raise UsageError(msg)
    if loss.node is None:
        if loss.requires_grad:
            return {loss.uid: Tensor._wrap(np.ones_like(loss.data))}  # noqa: SLF001
        msg = "The loss is not connected to any tensor that requires a gradient."
        raise UsageError(msg)
    if loss.node.consumed:
        msg = "backward() was called twice on the same graph."
        raise GraphStateError(msg)

    graph = ComputationGraph.trace(loss)
    pending: dict[int, np.ndarray] = {loss.uid: np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(graph.nodes):
        grad = pending.pop(node.output_uid, None)
        backward_fn = node.backward_fn
        node.consumed = True
        node.backward_fn = _consumed
        inputs = node.inputs
        node.inputs = ()
        if grad is None or backward_fn is None:
            continue
        for tensor, input_grad in zip(inputs, backward_fn(grad)):
            if input_grad is None or not tensor.requires_grad:
                continue
            if tensor.uid in pending:
                pending[tensor.uid] = pending[tensor.uid] + input_grad
            else:
                pending[tensor.uid] = input_grad
            if tensor.node is None:
                leaves[tensor.uid] = tensor
    return {uid: Tensor._wrap(pending[uid]) for uid in leaves}  # noqa: SLF001


# ---------------------------------------------------------------------------
# elementwise suite


def _channel_shape(x: Tensor, y: Tensor, op: str) -> tuple[int, ...] | None:
    """Return the broadcast view shape for ``y`` (None if shapes are equal)."""
    if x.shape == y.shape:
        return None
    if y.ndim == 1 and x.ndim >= 2 and y.shape[0] == x.shape[1]:
        return (1, y.shape[0]) + (1,) * (x.ndim - 2)
    if x.ndim == y.ndim:
        axis = next(i for i, (a, b) in enumerate(zip(x.shape, y.shape)) if a != b)
        msg = f"{op}: shapes {x.shape} and {y.shape} differ on axis {axis} ({x.shape[axis]} vs {y.shape[axis]})."
    else:
        msg = (
            f"{op}: cannot combine shapes {x.shape} and {y.shape}; "
            f"only equal shapes or a per-channel vector of length {x.shape[1] if x.ndim >= 2 else '?'} broadcast."
        )
    raise DimensionError(msg)


def _unbroadcast(grad: np.ndarray, view: tuple[int, ...] | None) -> np.ndarray:
    if view is None:
        return grad
    axes = tuple(i for i in range(grad.ndim) if i != 1)
    return grad.sum(axis=axes)


def add(x: Tensor, y: Tensor) -> Tensor:
    """Elementwise sum; ``y`` may be a per-channel vector."""
    view = _channel_shape(x, y, "add")
    yd = y.data if view is None else y.data.reshape(view)

    def _backward(g: np.ndarray) -> Sequence[Gradient]:
        return g, _unbroadcast(g, view)

    return record_op(x.data + yd, "add", (x, y), _backward)


def subtract(x: Tensor, y: Tensor) -> Tensor:
    """Elementwise difference; ``y`` may be a per-channel vector."""
    view = _channel_shape(x, y, "subtract")
    yd = y.data if view is None else y.data.reshape(view)

    def _backward(g: np.ndarray) -> Sequence[Gradient]:
        return g, -_unbroadcast(g, view)

    return record_op(x.data - yd, "subtract", (x, y), _backward)


def multiply(x: Tensor, y: Tensor) -> Tensor:
    """Elementwise (Hadamard) product; ``y`` may be a per-channel vector."""
    view = _channel_shape(x, y, "multiply")
    yd = y.data if view is None else y.data.reshape(view)
    xd = x.data

    def _backward(g: np.ndarray) -> Sequence[Gradient]:
        gx = g * yd if x.requires_grad else None
        gy = _unbroadcast(g * xd, view) if y.requires_grad else None
        return gx, gy

    return record_op(xd * yd, "multiply", (x, y), _backward)


def divide(x: Tensor, y: Tensor) -> Tensor:
    """Elementwise quotient of equal-shaped tensors."""
    view = _channel_shape(x, y, "divide")
    yd = y.data if view is None else y.data.reshape(view)
    out = x.data / yd

    def _backward(g: np.ndarray) -> Sequence[Gradient]:
        gx = g / yd if x.requires_grad else None
        gy = _unbroadcast(-g * out / yd, view) if y.requires_grad else None
        return gx, gy

    return record_op(out, "divide", (x, y), _backward)


def scale(x: Tensor, factor: float) -> Tensor:
    """Multiply by a Python scalar."""
    return record_op(x.data * factor, "scale", (x,), lambda g: (g * factor,))


def shift(x: Tensor, offset: float) -> Tensor:
    """Add a Python scalar."""
    return record_op(x.data + offset, "shift", (x,), lambda g: (g,))


def negate(x: Tensor) -> Tensor:
    """Elementwise negation."""
    return record_op(-x.data, "negate", (x,), lambda g: (-g,))


def square(x: Tensor) -> Tensor:
    """Elementwise square."""
    xd = x.data
    return record_op(xd * xd, "square", (x,), lambda g: (2.0 * xd * g,))


def tanh(x: Tensor) -> Tensor:
    """Elementwise hyperbolic tangent."""
    out = np.tanh(x.data)
    return record_op(out, "tanh", (x,), lambda g: (g * (1.0 - out * out),))


def exp(x: Tensor) -> Tensor:
    """Elementwise exponential."""
    out = np.exp(x.data)
    return record_op(out, "exp", (x,), lambda g: (g * out,))


def clamp(x: Tensor, low: float | None = None, high: float | None = None) -> Tensor:
    """Clip values to ``[low, high]``; the gradient is zero outside the active range."""
    lo = -np.inf if low is None else low
    hi = np.inf if high is None else high
    xd = x.data
    active = (xd >= lo) & (xd <= hi)
    return record_op(np.clip(xd, lo, hi), "clamp", (x,), lambda g: (g * active,))


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Reinterpret the row-major buffer with a new shape."""
    target = tuple(int(s) for s in shape)
    if math.prod(target) != x.size:
        msg = f"Cannot reshape tensor of shape {x.shape} ({x.size} elements) into {target}."
        raise DimensionError(msg)
    original = x.shape
    return record_op(x.data.reshape(target), "reshape", (x,), lambda g: (g.reshape(original),))


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    """Reorder the axes of a tensor (the result is materialized row-major)."""
    order = tuple(int(a) for a in axes)
    if sorted(order) != list(range(x.ndim)):
        msg = f"permute: {order} is not a permutation of the {x.ndim} axes of shape {x.shape}."
        raise DimensionError(msg)
    inverse = tuple(np.argsort(order))
    return record_op(np.ascontiguousarray(x.data.transpose(order)), "permute", (x,), lambda g: (g.transpose(inverse),))


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Select ``length`` consecutive entries along ``axis`` starting at ``start``."""
    if not 0 <= start <= start + length <= x.shape[axis]:
        msg = f"narrow: [{start}, {start + length}) is out of range for axis {axis} of size {x.shape[axis]}."
        raise DimensionError(msg)
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, start + length)
    window = tuple(index)
    full = x.shape

    def _backward(g: np.ndarray) -> Sequence[Gradient]:
        out = np.zeros(full, dtype=g.dtype)
        out[window] = g
        return (out,)

    return record_op(x.data[window], "narrow", (x,), _backward)


def upsample_nearest2d(x: Tensor, factor: int = 2) -> Tensor:
    """Nearest-neighbor upsampling of the two trailing axes of an ``[N, C, H, W]`` tensor."""
    if x.ndim != 4:
        msg = f"upsample_nearest2d expects [N, C, H, W], got shape {x.shape}."
        raise DimensionError(msg)
    n, c, h, w = x.shape
    out = x.data.repeat(factor, axis=2).repeat(factor, axis=3)

    def _backward(g: np.ndarray) -> Sequence[Gradient]:
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return record_op(out, "upsample_nearest2d", (x,), _backward)


# ---------------------------------------------------------------------------
# reductions


def reduce(x: Tensor, mode: str = "sum", axes: Sequence[int] | None = None) -> Tensor:
    """Sum or average a tensor, over all elements by default.

    Args:
        x: The tensor to reduce.
        mode: "sum" or "mean".
        axes: Axes to reduce over. Defaults to all axes (a scalar result).

    Returns:
        The reduced tensor.
    """
    if mode not in {"sum", "mean"}:
        msg = f"Unknown reduction mode {mode!r}; expected 'sum' or 'mean'."
        raise ConfigurationError(msg)
    reduced = tuple(range(x.ndim)) if axes is None else tuple(a % x.ndim for a in axes)
    count = math.prod(x.shape[a] for a in reduced)
    out = x.data.sum(axis=reduced)
    if mode == "mean":
        out = out / count
    keep = tuple(1 if i in reduced else s for i, s in enumerate(x.shape))
    full = x.shape
    factor = 1.0 if mode == "sum" else 1.0 / count

    def _backward(g: np.ndarray) -> Sequence[Gradient]:
        return (np.broadcast_to(np.reshape(g, keep) * factor, full).copy(),)

    return record_op(np.asarray(out), f"reduce_{mode}", (x,), _backward)


def mean(x: Tensor) -> Tensor:
    """Arithmetic mean of all elements."""
    return reduce(x, "mean")


# ---------------------------------------------------------------------------
# linear algebra


def matmul_batched(a: Tensor, b: Tensor) -> Tensor:
    """Per-batch matrix product of ``[B, M, K]`` and ``[B, K, N]``."""
    if a.ndim != 3 or b.ndim != 3:
        msg = f"matmul_batched expects 3-D operands, got shapes {a.shape} and {b.shape}."
        raise DimensionError(msg)
    if a.shape[0] != b.shape[0]:
        msg = f"matmul_batched: batch axis 0 differs ({a.shape[0]} vs {b.shape[0]})."
        raise DimensionError(msg)
    if a.shape[2] != b.shape[1]:
        msg = f"matmul_batched: inner dimensions differ (axis 2 of a is {a.shape[2]}, axis 1 of b is {b.shape[1]})."
        raise DimensionError(msg)
    ad, bd = a.data, b.data

    def _backward(g: np.ndarray) -> Sequence[Gradient]:
        ga = np.matmul(g, bd.transpose(0, 2, 1)) if a.requires_grad else None
        gb = np.matmul(ad.transpose(0, 2, 1), g) if b.requires_grad else None
        return ga, gb

    return record_op(np.matmul(ad, bd), "matmul_batched", (a, b), _backward)


def softmax_lastdim(x: Tensor) -> Tensor:
    """Numerically stabilized softmax over the last axis."""
    if x.ndim == 0 or x.shape[-1] < 1:
        msg = f"softmax_lastdim needs a non-empty last axis, got shape {x.shape}."
        raise DimensionError(msg)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def _backward(g: np.ndarray) -> Sequence[Gradient]:
        return ((g - (g * out).sum(axis=-1, keepdims=True)) * out,)

    return record_op(out, "softmax_lastdim", (x,), _backward)


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    """Return the output extent of a convolution along one axis.

    Raises:
        ConfigurationError: If the geometry does not produce a positive integer size.
    """
    span = size + 2 * padding - kernel
    if span < 0 or span % stride != 0:
        msg = (
            f"Convolution geometry (size={size}, kernel={kernel}, stride={stride}, padding={padding}) "
            f"does not yield an integer output size: ({size} + 2*{padding} - {kernel})/{stride} + 1."
        )
        raise ConfigurationError(msg)
    return span // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation via patch gathering and a single matrix product.

    Args:
        x: Input of shape ``[N, Cin, H, W]``.
        weight: Kernel of shape ``[Cout, Cin, kh, kw]``.
        bias: Optional per-output-channel bias of shape ``[Cout]``.
        stride: Step between neighbouring windows.
        padding: Zero padding added on each spatial border.

    Returns:
        Output of shape ``[N, Cout, H', W']``.
    """
    if x.ndim != 4 or weight.ndim != 4:
        msg = f"conv2d expects a 4-D input and weight, got shapes {x.shape} and {weight.shape}."
        raise DimensionError(msg)
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if cin != wcin:
        msg = f"conv2d: axis 1 (channels) of the input is {cin} but the weight expects {wcin}."
        raise DimensionError(msg)
    if bias is not None and bias.shape != (cout,):
        msg = f"conv2d: bias must have shape ({cout},), got {bias.shape}."
        raise DimensionError(msg)
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, cin * kh * kw)
    wmat = weight.data.reshape(cout, -1)
    out = (cols @ wmat.T).reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, cout, 1, 1)
    padded_shape = xp.shape
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def _backward(g: np.ndarray) -> Sequence[Gradient]:
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        gw = (g2.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (g2 @ wmat).reshape(n, ho, wo, cin, kh, kw)
            gxp = np.zeros(padded_shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += gcols[
                        :, :, :, :, i, j
                    ].transpose(0, 3, 1, 2)
            gx = gxp[:, :, padding : padding + h, padding : padding + w]
        if bias is None:
            return gx, gw
        gb = g.sum(axis=(0, 2, 3)) if bias.requires_grad else None
        return gx, gw, gb

    return record_op(np.ascontiguousarray(out), "conv2d", inputs, _backward)


# ---------------------------------------------------------------------------
# verification


@dataclass
class GradCheckReport:
    """Outcome of comparing analytic gradients against central differences."""

    max_relative_error: float
    per_input: dict[int, float] = field(default_factory=dict)
    checked_elements: int = 0
    skipped_inputs: list[int] = field(default_factory=list)

    def passed(self, rtol: float = 1e-5) -> bool:
        """Return whether every checked element is within ``rtol``."""
        return self.max_relative_error <= rtol


def grad_check(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    step: float = 1e-5,
    floor: float = 1e-3,
    max_elements: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare backward() against central finite differences.

    The relative error of an element is ``|a - n| / max(|a|, |n|, floor)``.
    Inputs that do not require a gradient are skipped.

    Args:
        fn: Closure computing a scalar from ``inputs``.
        inputs: Leaf tensors to differentiate with respect to.
        step: Finite-difference step ``h``.
        floor: Lower bound of the relative-error denominator.
        max_elements: If given, check at most this many randomly chosen elements per input.
        seed: Seed for the element sampling.

    Returns:
        A report; nothing is asserted.
    """
    if _state.dtype is not np.float64:
        msg = "grad_check requires the float64 precision mode."
        raise UsageError(msg)
    grads = backward(fn())
    picker = np.random.default_rng(seed)
    report = GradCheckReport(max_relative_error=0.0)
    for index, tensor in enumerate(inputs):
        if not tensor.requires_grad or tensor.node is not None:
            report.skipped_inputs.append(index)
            continue
        analytic = grads[tensor.uid].data if tensor.uid in grads else np.zeros_like(tensor.data)
        flat = tensor.data.reshape(-1)
        positions = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            positions = np.sort(picker.choice(flat.size, size=max_elements, replace=False))
        worst = 0.0
        with no_grad():
            for k in positions:
                original = flat[k]
                flat[k] = original + step
                plus = fn().item()
                flat[k] = original - step
                minus = fn().item()
                flat[k] = original
                numeric = (plus - minus) / (2.0 * step)
                a = float(analytic.reshape(-1)[k])
                worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), floor))
        report.per_input[index] = worst
        report.checked_elements += len(positions)
        report.max_relative_error = max(report.max_relative_error, worst)
    return report
