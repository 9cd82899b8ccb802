"""Dense float64 tensors with tape-based reverse-mode differentiation.

A :class:`Graph` is activated as a context manager. While it is active every
primitive below records itself on the tape; outside of a graph the same
primitives only compute values. Forward results do not depend on whether
tracing is on.
"""

from __future__ import annotations

import contextvars
from contextlib import contextmanager
from typing import Callable, Dict, Iterator, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from kanbench.errors import ContractError, DimensionError

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]
# vjp(grad_out, needs) -> one gradient (or None) per input
VJP = Callable[[np.ndarray, Tuple[bool, ...]], Sequence[Optional[np.ndarray]]]

_ACTIVE_GRAPH: contextvars.ContextVar[Optional["Graph"]] = contextvars.ContextVar(
    "kanbench_active_graph", default=None
)


class Tensor:
    """Dense n-dimensional float64 array that can take part in a graph."""

    __slots__ = ("values", "grad", "requires_grad", "node_id", "_graph")

    def __init__(self, values: ArrayLike, requires_grad: bool = False):
        if isinstance(values, Tensor):
            values = values.values
        self.values = np.asarray(values, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.node_id: Optional[int] = None
        self._graph: Optional[Graph] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        if self.values.size != 1:
            raise ContractError(f"item() needs a single value, tensor has shape {self.shape}")
        return float(self.values.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.values

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def accumulate_grad(self, grad: np.ndarray) -> None:
        if grad.shape != self.values.shape:
            raise ContractError(f"gradient shape {grad.shape} does not match tensor shape {self.shape}")
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += grad

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        if np.isscalar(other):
            return scale(self, float(other))
        return multiply(self, other)

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis: Optional[int] = None) -> "Tensor":
        return reduce_sum(self, axis)

    def mean(self) -> "Tensor":
        return reduce_mean(self)


class _Node(NamedTuple):
    op: str
    inputs: Tuple[int, ...]
    vjp: Optional[VJP]
    tensor: Tensor
    needs_grad: bool


class Graph:
    """Ordered tape of primitive operations.

    Node ids are positions on the tape, so every operation's inputs precede
    it and a reverse sweep is a valid topological order.
    """

    def __init__(self):
        self.nodes: List[_Node] = []
        self._token: Optional[contextvars.Token] = None

    def __enter__(self) -> "Graph":
        self._token = _ACTIVE_GRAPH.set(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if self._token is not None:
            _ACTIVE_GRAPH.reset(self._token)
            self._token = None

    def __len__(self) -> int:
        return len(self.nodes)

    def node_of(self, tensor: Tensor) -> int:
        """Return the node id of ``tensor``, registering it as a leaf if new."""
        if tensor._graph is self and tensor.node_id is not None:
            return tensor.node_id
        node_id = len(self.nodes)
        self.nodes.append(_Node("leaf", (), None, tensor, tensor.requires_grad))
        tensor.node_id = node_id
        tensor._graph = self
        return node_id

    def record(self, op: str, inputs: Sequence[Tensor], values: np.ndarray, vjp: VJP) -> Tensor:
        input_ids = tuple(self.node_of(t) for t in inputs)
        needs = any(self.nodes[i].needs_grad for i in input_ids)
        out = Tensor(values, requires_grad=needs)
        out.node_id = len(self.nodes)
        out._graph = self
        self.nodes.append(_Node(op, input_ids, vjp, out, needs))
        return out

    def backward(self, loss: Tensor) -> Dict[int, Tensor]:
        """Propagate d(loss)/d(node) backwards through the tape.

        Leaf tensors with ``requires_grad`` accumulate into ``.grad``. The
        returned map holds the gradient of every node reached on the way.
        """
        if loss._graph is not self or loss.node_id is None:
            raise ContractError("loss tensor was not recorded on this graph")
        if loss.values.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")

        adjoints: Dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.values)}
        for node_id in range(loss.node_id, -1, -1):
            grad_out = adjoints.get(node_id)
            if grad_out is None:
                continue
            node = self.nodes[node_id]
            if node.vjp is None:
                continue
            needs = tuple(self.nodes[i].needs_grad for i in node.inputs)
            if not any(needs):
                continue
            input_grads = node.vjp(grad_out, needs)
            for input_id, need, grad in zip(node.inputs, needs, input_grads):
                if not need or grad is None:
                    continue
                if input_id in adjoints:
                    adjoints[input_id] = adjoints[input_id] + grad
                else:
                    adjoints[input_id] = grad

        for node_id, grad in adjoints.items():
            node = self.nodes[node_id]
            if node.op == "leaf" and node.tensor.requires_grad:
                node.tensor.accumulate_grad(grad)
        return {node_id: Tensor(grad) for node_id, grad in adjoints.items()}


def backward(graph: Graph, loss: Tensor) -> Dict[int, Tensor]:
    """Module-level alias for :meth:`Graph.backward`."""
    return graph.backward(loss)


@contextmanager
def no_trace() -> Iterator[None]:
    """Temporarily disable recording, e.g. for evaluation passes."""
    token = _ACTIVE_GRAPH.set(None)
    try:
        yield
    finally:
        _ACTIVE_GRAPH.reset(token)


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def record_op(op: str, inputs: Sequence[Tensor], values: np.ndarray, vjp: VJP) -> Tensor:
    """Wrap ``values`` as the output of ``op``; recorded only while tracing."""
    graph = _ACTIVE_GRAPH.get()
    if graph is None:
        return Tensor(values)
    return graph.record(op, inputs, values, vjp)


# Primitives ---------------------------------------------------------------

def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    av, bv = a.values, b.values

    def vjp(g, needs):
        return (g @ bv.T if needs[0] else None, av.T @ g if needs[1] else None)

    return record_op("matmul", (a, b), av @ bv, vjp)


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Elementwise sum; ``b`` may also be a row vector added to every row of ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        def vjp(g, needs):
            return (g, g)
    elif a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        def vjp(g, needs):
            return (g, g.sum(axis=0) if needs[1] else None)
    else:
        raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}")
    return record_op("add", (a, b), a.values + b.values, vjp)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"cannot subtract shapes {a.shape} and {b.shape}")

    def vjp(g, needs):
        return (g, -g)

    return record_op("sub", (a, b), a.values - b.values, vjp)


def multiply(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}")
    av, bv = a.values, b.values

    def vjp(g, needs):
        return (g * bv if needs[0] else None, g * av if needs[1] else None)

    return record_op("multiply", (a, b), av * bv, vjp)


def scale(a: ArrayLike, factor: float) -> Tensor:
    a = as_tensor(a)

    def vjp(g, needs):
        return (g * factor,)

    return record_op("scale", (a,), a.values * factor, vjp)


def transpose(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"transpose needs a 2-D tensor, got {a.shape}")

    def vjp(g, needs):
        return (g.T,)

    return record_op("transpose", (a,), a.values.T, vjp)


def reshape(a: ArrayLike, shape: Tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    old_shape = a.shape
    try:
        values = a.values.reshape(shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc

    def vjp(g, needs):
        return (g.reshape(old_shape),)

    return record_op("reshape", (a,), values, vjp)


def repeat_columns(a: ArrayLike, repeats: int) -> Tensor:
    """[m, n] -> [m, n * repeats], each column repeated ``repeats`` times in place."""
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"repeat_columns needs a 2-D tensor, got {a.shape}")
    m, n = a.shape

    def vjp(g, needs):
        return (g.reshape(m, n, repeats).sum(axis=-1),)

    return record_op("gather", (a,), np.repeat(a.values, repeats, axis=1), vjp)


def elementwise(
    a: ArrayLike,
    fn: Callable[[np.ndarray], np.ndarray],
    dfn: Callable[[np.ndarray, np.ndarray], np.ndarray],
    name: str = "map",
) -> Tensor:
    """Apply ``fn`` elementwise. ``dfn(x, y)`` returns dy/dx given input and output."""
    a = as_tensor(a)
    x = a.values
    y = fn(x)

    def vjp(g, needs):
        return (g * dfn(x, y),)

    return record_op(name, (a,), y, vjp)


def reduce_sum(a: ArrayLike, axis: Optional[int] = None) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    if axis is None:
        def vjp(g, needs):
            return (np.broadcast_to(g, shape).copy(),)
        return record_op("sum", (a,), np.asarray(a.values.sum()), vjp)

    def vjp_axis(g, needs):
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return record_op("sum", (a,), a.values.sum(axis=axis), vjp_axis)


def reduce_mean(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    shape, count = a.shape, a.size

    def vjp(g, needs):
        return (np.full(shape, float(g) / count),)

    return record_op("mean", (a,), np.asarray(a.values.mean()), vjp)


def basis_eval(
    x: ArrayLike,
    basis_fn: Callable[[np.ndarray], np.ndarray],
    derivative_fn: Callable[[np.ndarray], np.ndarray],
) -> Tensor:
    """Expand every entry of a [m, n] tensor into ``nb`` basis values.

    ``basis_fn`` maps [m, n] -> [m, n, nb]; the output is flattened to
    [m, n * nb]. ``derivative_fn`` is only evaluated when x needs a gradient.
    """
    x = as_tensor(x)
    if x.ndim != 2:
        raise DimensionError(f"basis_eval needs a 2-D tensor, got {x.shape}")
    xv = x.values
    basis = basis_fn(xv)
    m, n, nb = basis.shape

    def vjp(g, needs):
        return ((g.reshape(m, n, nb) * derivative_fn(xv)).sum(axis=-1),)

    return record_op("basis-eval", (x,), basis.reshape(m, n * nb), vjp)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax_cross_entropy(logits: ArrayLike, targets: ArrayLike) -> Tensor:
    """Mean softmax cross-entropy of [m, c] logits against [m, c] one-hot targets."""
    logits, targets = as_tensor(logits), as_tensor(targets)
    if logits.ndim != 2 or logits.shape != targets.shape:
        raise DimensionError(f"logits {logits.shape} and targets {targets.shape} must be equal 2-D shapes")
    m = logits.shape[0]
    log_probs = log_softmax(logits.values)
    loss = -(targets.values * log_probs).sum() / m

    def vjp(g, needs):
        probs = np.exp(log_probs)
        d_logits = float(g) * (probs - targets.values) / m if needs[0] else None
        d_targets = -float(g) * log_probs / m if needs[1] else None
        return (d_logits, d_targets)

    return record_op("cross-entropy", (logits, targets), np.asarray(loss), vjp)


def grad_check(f: Callable[[Tensor], Tensor], point: ArrayLike, h: float = 1e-5) -> float:
    """Max relative error between the tape gradient and central differences.

    The error per coordinate is |analytic - numeric| / max(1, |analytic|).
    """
    base = np.array(as_tensor(point).values, dtype=np.float64)
    x = Tensor(base.copy(), requires_grad=True)
    with Graph() as graph:
        out = f(x)
    graph.backward(out)
    analytic = x.grad if x.grad is not None else np.zeros_like(base)

    numeric = np.zeros_like(base)
    with no_trace():
        for idx in np.ndindex(base.shape):
            shifted = base.copy()
            shifted[idx] = base[idx] + h
            plus = f(Tensor(shifted)).item()
            shifted[idx] = base[idx] - h
            minus = f(Tensor(shifted)).item()
            numeric[idx] = (plus - minus) / (2.0 * h)

    if base.size == 0:
        return 0.0
    errors = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(errors.max())
