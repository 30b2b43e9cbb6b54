"""
Reverse-mode automatic differentiation over float64 numpy arrays.

Every op builds a `Node` holding its value, the parents it was computed from and a
closure that pushes the upstream gradient into those parents. `backward` walks the
graph in reverse topological order. Leaf gradients accumulate across calls and are
only cleared by an explicit `zero_grad`.
"""
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from core.exceptions import ShapeError

Tensor = np.ndarray
ArrayLike = Union[np.ndarray, Sequence, float, int]

_deterministic = True
_pool: Optional[ThreadPoolExecutor] = None
_PARALLEL_MIN_ROWS = 1024
_PARALLEL_CHUNKS = 4


def set_deterministic(flag: bool) -> None:
    """Toggle row-parallel matmul; on (default) every product is a single BLAS call"""
    global _deterministic, _pool
    _deterministic = bool(flag)
    if _deterministic and _pool is not None:
        _pool.shutdown(wait=True)
        _pool = None
    logger.debug(f"Deterministic math: {_deterministic}")


def as_tensor(data: ArrayLike) -> Tensor:
    """Coerce to a float64 array"""
    return np.asarray(data, dtype=np.float64)


def _matmul(a: Tensor, b: Tensor) -> Tensor:
    global _pool
    if _deterministic or a.shape[0] < _PARALLEL_MIN_ROWS:
        return a @ b
    if _pool is None:
        _pool = ThreadPoolExecutor(max_workers=_PARALLEL_CHUNKS)
    blocks = np.array_split(a, _PARALLEL_CHUNKS, axis=0)
    return np.vstack(list(_pool.map(lambda blk: blk @ b, blocks)))


class Node:
    """A value in the computation graph together with its gradient buffer"""

    __slots__ = ("value", "grad", "parents", "op", "requires_grad", "name", "_backward")

    def __init__(
        self,
        value: ArrayLike,
        parents: Tuple["Node", ...] = (),
        op: str = "leaf",
        requires_grad: bool = False,
        name: Optional[str] = None,
    ):
        self.value = as_tensor(value)
        self.grad = np.zeros_like(self.value)
        self.parents = tuple(parents)
        self.op = op
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self.name = name
        self._backward: Optional[Callable[[Tensor], None]] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def item(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        label = self.name or self.op
        return f"Node({label}, shape={self.shape}, requires_grad={self.requires_grad})"


class Parameter(Node):
    """A learnable leaf"""

    def __init__(self, value: ArrayLike, name: Optional[str] = None):
        super().__init__(np.array(value, dtype=np.float64), requires_grad=True, name=name)


def constant(value: ArrayLike) -> Node:
    return Node(value)


def detach(node: Node) -> Node:
    """Copy a node's value into a fresh leaf; gradients stop here"""
    return Node(node.value.copy(), op="detach")


def _node(value: Tensor, parents: Tuple[Node, ...], op: str) -> Node:
    return Node(value, parents, op)


# ---------------------------------------------------------------------------
# forward ops
# ---------------------------------------------------------------------------

def matmul(a: Node, b: Node) -> Node:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    out = _node(_matmul(a.value, b.value), (a, b), "matmul")

    def _backward(g: Tensor) -> None:
        if a.requires_grad:
            a.grad += _matmul(g, b.value.T)
        if b.requires_grad:
            b.grad += _matmul(a.value.T, g)

    out._backward = _backward
    return out


def add(a: Node, b: Node) -> Node:
    if a.shape != b.shape:
        raise ShapeError("add", a.shape, b.shape)
    out = _node(a.value + b.value, (a, b), "add")

    def _backward(g: Tensor) -> None:
        if a.requires_grad:
            a.grad += g
        if b.requires_grad:
            b.grad += g

    out._backward = _backward
    return out


def sub(a: Node, b: Node) -> Node:
    if a.shape != b.shape:
        raise ShapeError("sub", a.shape, b.shape)
    out = _node(a.value - b.value, (a, b), "sub")

    def _backward(g: Tensor) -> None:
        if a.requires_grad:
            a.grad += g
        if b.requires_grad:
            b.grad -= g

    out._backward = _backward
    return out


def mul(a: Node, b: Node) -> Node:
    if a.shape != b.shape:
        raise ShapeError("mul", a.shape, b.shape)
    out = _node(a.value * b.value, (a, b), "mul")

    def _backward(g: Tensor) -> None:
        if a.requires_grad:
            a.grad += g * b.value
        if b.requires_grad:
            b.grad += g * a.value

    out._backward = _backward
    return out


def add_bias(x: Node, bias: Node) -> Node:
    """x[..., d] + bias[d]"""
    if bias.value.ndim != 1 or x.value.ndim < 1 or x.shape[-1] != bias.shape[0]:
        raise ShapeError("add_bias", x.shape, bias.shape)
    out = _node(x.value + bias.value, (x, bias), "add_bias")

    def _backward(g: Tensor) -> None:
        if x.requires_grad:
            x.grad += g
        if bias.requires_grad:
            bias.grad += g.reshape(-1, bias.shape[0]).sum(axis=0)

    out._backward = _backward
    return out


def scale(x: Node, c: float) -> Node:
    c = float(c)
    out = _node(x.value * c, (x,), "scale")

    def _backward(g: Tensor) -> None:
        if x.requires_grad:
            x.grad += g * c

    out._backward = _backward
    return out


def relu(x: Node) -> Node:
    mask = x.value > 0.0
    out = _node(np.where(mask, x.value, 0.0), (x,), "relu")

    def _backward(g: Tensor) -> None:
        # subgradient at exactly 0 is 0
        if x.requires_grad:
            x.grad += g * mask

    out._backward = _backward
    return out


def _stable_sigmoid(v: Tensor) -> Tensor:
    pos = v >= 0
    z = np.exp(-np.abs(v))
    return np.where(pos, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid(x: Node) -> Node:
    s = _stable_sigmoid(x.value)
    out = _node(s, (x,), "sigmoid")

    def _backward(g: Tensor) -> None:
        if x.requires_grad:
            x.grad += g * s * (1.0 - s)

    out._backward = _backward
    return out


def log_sigmoid(x: Node) -> Node:
    """log(sigmoid(x)) without forming sigmoid(x) first"""
    out = _node(-np.logaddexp(0.0, -x.value), (x,), "log_sigmoid")

    def _backward(g: Tensor) -> None:
        if x.requires_grad:
            x.grad += g * _stable_sigmoid(-x.value)

    out._backward = _backward
    return out


def log_softmax(x: Node, axis: int = -1) -> Node:
    if x.value.ndim == 0:
        raise ShapeError("log_softmax", x.shape)
    shifted = x.value - np.max(x.value, axis=axis, keepdims=True)
    # the max term is exactly 1; summing the rest into log1p keeps tiny tails
    rest = np.exp(shifted)
    np.put_along_axis(rest, np.argmax(x.value, axis=axis, keepdims=True), 0.0, axis=axis)
    lse = np.log1p(np.sum(rest, axis=axis, keepdims=True))
    value = shifted - lse
    out = _node(value, (x,), "log_softmax")

    def _backward(g: Tensor) -> None:
        if x.requires_grad:
            x.grad += g - np.exp(value) * np.sum(g, axis=axis, keepdims=True)

    out._backward = _backward
    return out


def dot(u: Node, v: Node) -> Node:
    """Inner product of two vectors"""
    if u.value.ndim != 1 or u.shape != v.shape:
        raise ShapeError("dot", u.shape, v.shape)
    out = _node(np.dot(u.value, v.value), (u, v), "dot")

    def _backward(g: Tensor) -> None:
        if u.requires_grad:
            u.grad += g * v.value
        if v.requires_grad:
            v.grad += g * u.value

    out._backward = _backward
    return out


def rowwise_dot(a: Node, b: Node) -> Node:
    """[n, d] x [n, d] -> [n]"""
    if a.value.ndim != 2 or a.shape != b.shape:
        raise ShapeError("rowwise_dot", a.shape, b.shape)
    out = _node(np.einsum("nd,nd->n", a.value, b.value), (a, b), "rowwise_dot")

    def _backward(g: Tensor) -> None:
        if a.requires_grad:
            a.grad += g[:, None] * b.value
        if b.requires_grad:
            b.grad += g[:, None] * a.value

    out._backward = _backward
    return out


def batched_matvec(m: Node, v: Node) -> Node:
    """[n, k, d] x [n, d] -> [n, k]"""
    if m.value.ndim != 3 or v.value.ndim != 2 or m.shape[0] != v.shape[0] or m.shape[2] != v.shape[1]:
        raise ShapeError("batched_matvec", m.shape, v.shape)
    out = _node(np.einsum("nkd,nd->nk", m.value, v.value), (m, v), "batched_matvec")

    def _backward(g: Tensor) -> None:
        if m.requires_grad:
            m.grad += g[:, :, None] * v.value[:, None, :]
        if v.requires_grad:
            v.grad += np.einsum("nk,nkd->nd", g, m.value)

    out._backward = _backward
    return out


def l2_normalize(x: Node, axis: int = -1, eps: float = 1e-12) -> Node:
    norm = np.sqrt(np.sum(x.value * x.value, axis=axis, keepdims=True))
    clipped = np.maximum(norm, eps)
    y = x.value / clipped
    active = norm >= eps
    out = _node(y, (x,), "l2_normalize")

    def _backward(g: Tensor) -> None:
        if x.requires_grad:
            proj = np.sum(g * y, axis=axis, keepdims=True) * active
            x.grad += (g - y * proj) / clipped

    out._backward = _backward
    return out


def concat(nodes: Sequence[Node], axis: int = -1) -> Node:
    nodes = list(nodes)
    if not nodes:
        raise ShapeError("concat", ())
    try:
        value = np.concatenate([n.value for n in nodes], axis=axis)
    except ValueError:
        raise ShapeError("concat", *[n.shape for n in nodes])
    sizes = [n.shape[axis] for n in nodes]
    cuts = np.cumsum(sizes)[:-1]
    out = _node(value, tuple(nodes), "concat")

    def _backward(g: Tensor) -> None:
        for node, piece in zip(nodes, np.split(g, cuts, axis=axis)):
            if node.requires_grad:
                node.grad += piece

    out._backward = _backward
    return out


def mean(x: Node) -> Node:
    """Mean over all elements; returns a scalar"""
    size = x.value.size
    if size == 0:
        raise ShapeError("mean", x.shape)
    out = _node(np.mean(x.value), (x,), "mean")

    def _backward(g: Tensor) -> None:
        if x.requires_grad:
            x.grad += np.broadcast_to(g / size, x.shape)

    out._backward = _backward
    return out


def sum_(x: Node, axis: Optional[int] = None, keepdims: bool = False) -> Node:
    out = _node(np.sum(x.value, axis=axis, keepdims=keepdims), (x,), "sum")

    def _backward(g: Tensor) -> None:
        if not x.requires_grad:
            return
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x.grad += np.broadcast_to(g, x.shape)

    out._backward = _backward
    return out


def reshape(x: Node, shape: Sequence[int]) -> Node:
    try:
        value = x.value.reshape(tuple(shape))
    except ValueError:
        raise ShapeError("reshape", x.shape, tuple(shape))
    out = _node(value, (x,), "reshape")

    def _backward(g: Tensor) -> None:
        if x.requires_grad:
            x.grad += g.reshape(x.shape)

    out._backward = _backward
    return out


def take_rows(x: Node, indices: ArrayLike) -> Node:
    """x[indices] along the first axis"""
    idx = np.asarray(indices, dtype=np.int64)
    if x.value.ndim < 1 or (idx.size and (idx.min() < -x.shape[0] or idx.max() >= x.shape[0])):
        raise ShapeError("take_rows", x.shape, idx.shape)
    out = _node(x.value[idx], (x,), "take_rows")

    def _backward(g: Tensor) -> None:
        if x.requires_grad:
            np.add.at(x.grad, idx, g)

    out._backward = _backward
    return out


def pick(x: Node, indices: ArrayLike) -> Node:
    """x[i, indices[i]] for a [n, c] matrix"""
    idx = np.asarray(indices, dtype=np.int64)
    if x.value.ndim != 2 or idx.shape != (x.shape[0],):
        raise ShapeError("pick", x.shape, idx.shape)
    rows = np.arange(x.shape[0])
    out = _node(x.value[rows, idx], (x,), "pick")

    def _backward(g: Tensor) -> None:
        if x.requires_grad:
            np.add.at(x.grad, (rows, idx), g)

    out._backward = _backward
    return out


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

def _topological_order(root: Node) -> list:
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Node) -> None:
    """
    Propagate d(loss)/d(node) into every reachable node requiring gradients

    Args:
        loss: scalar node
    """
    if loss.value.ndim != 0:
        raise ShapeError("backward (scalar loss required)", loss.shape)
    if not loss.requires_grad:
        return
    order = _topological_order(loss)
    for node in order:
        if not node.is_leaf:
            node.grad = np.zeros_like(node.value)
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)


def zero_grad(nodes: Iterable[Node]) -> None:
    for node in nodes:
        node.zero_grad()


# ---------------------------------------------------------------------------
# finite-difference oracle
# ---------------------------------------------------------------------------

def numerical_grad(fn: Callable[[], Node], node: Node, h: float = 1e-6) -> Tensor:
    """
    Central finite differences of a scalar function w.r.t. one node's value

    Args:
        fn: rebuilds the graph and returns the scalar loss
        node: leaf whose value is perturbed in place
        h: step size

    Returns:
        Array shaped like node.value
    """
    grad = np.zeros_like(node.value)
    for pos in np.ndindex(*node.value.shape):
        orig = node.value[pos]
        node.value[pos] = orig + h
        plus = float(fn().value)
        node.value[pos] = orig - h
        minus = float(fn().value)
        node.value[pos] = orig
        grad[pos] = (plus - minus) / (2.0 * h)
    return grad


def relative_error(analytic: Tensor, numeric: Tensor) -> float:
    diff = np.linalg.norm(np.ravel(analytic - numeric))
    scale_ = max(np.linalg.norm(np.ravel(analytic)), np.linalg.norm(np.ravel(numeric)), 1e-10)
    return float(diff / scale_)


def gradient_check(fn: Callable[[], Node], nodes: Sequence[Node], h: float = 1e-6) -> float:
    """Largest relative error between backward() and finite differences over `nodes`"""
    for node in nodes:
        node.zero_grad()
    backward(fn())
    analytic = [node.grad.copy() for node in nodes]
    worst = 0.0
    for node, a in zip(nodes, analytic):
        worst = max(worst, relative_error(a, numerical_grad(fn, node, h)))
    return worst
