"""Dense-tensor computation graphs with reverse-mode differentiation.

A graph is a flat, topologically ordered list of nodes over float64 arrays
(1-D or 2-D).  The op set is deliberately small -- enough to express dense
networks, hinge losses, L1/L2 penalties and a hard [0,1] clamp -- so that the
whole surface can be checked against central finite differences.

Graphs are immutable after construction and safe to share across threads;
evaluation state lives entirely in per-call lists.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

OP_KINDS = (
    "input",
    "constant",
    "matmul",
    "add",
    "relu",
    "sigmoid",
    "scale",
    "sum",
    "square",
    "max_with_zero",
    "concat",
)

_ELEMENTWISE = frozenset({"relu", "sigmoid", "scale", "square", "max_with_zero"})


class GraphError(Exception):
    """Malformed graph, shape mismatch, or bad evaluation request."""


class NonFiniteError(ArithmeticError):
    """An operation produced NaN or Inf."""


@dataclass(frozen=True)
class Node:
    kind: str
    parents: tuple[int, ...] = ()
    shape: tuple[int, ...] = ()
    value: np.ndarray | None = None  # constant payload
    alpha: float = 1.0               # scale payload


def _infer_shape(kind: str, parent_shapes: list[tuple[int, ...]]) -> tuple[int, ...]:
    if kind in _ELEMENTWISE:
        (s,) = parent_shapes
        return s
    if kind == "add":
        a, b = parent_shapes
        if a != b:
            raise GraphError(f"add requires equal shapes, got {a} and {b}")
        return a
    if kind == "matmul":
        a, b = parent_shapes
        if len(a) != 2:
            raise GraphError(f"matmul left operand must be 2-D, got shape {a}")
        if len(b) == 1:
            if a[1] != b[0]:
                raise GraphError(f"matmul inner dimensions differ: {a} @ {b}")
            return (a[0],)
        if len(b) == 2:
            if a[1] != b[0]:
                raise GraphError(f"matmul inner dimensions differ: {a} @ {b}")
            return (a[0], b[1])
        raise GraphError(f"matmul right operand must be 1-D or 2-D, got shape {b}")
    if kind == "sum":
        return (1,)
    if kind == "concat":
        if not parent_shapes:
            raise GraphError("concat needs at least one parent")
        for s in parent_shapes:
            if len(s) != 1:
                raise GraphError(f"concat operates on 1-D tensors, got shape {s}")
        return (sum(s[0] for s in parent_shapes),)
    raise GraphError(f"unknown op kind {kind!r}")


def _check_shape(shape: tuple[int, ...]) -> tuple[int, ...]:
    shape = tuple(int(d) for d in shape)
    if len(shape) not in (1, 2) or any(d < 1 for d in shape):
        raise GraphError(f"tensor shapes must be 1-D or 2-D with positive dims, got {shape}")
    return shape


class Graph:
    """Immutable acyclic op list; node ids are positions in the list."""

    __slots__ = ("nodes", "input_ids")

    def __init__(self, nodes):
        nodes = tuple(nodes)
        for i, node in enumerate(nodes):
            if node.kind not in OP_KINDS:
                raise GraphError(f"node {i}: unknown op kind {node.kind!r}")
            if any(p >= i or p < 0 for p in node.parents):
                raise GraphError(f"node {i}: parents must precede the node")
            if node.kind == "input":
                if node.parents:
                    raise GraphError(f"node {i}: input takes no parents")
                _check_shape(node.shape)
            elif node.kind == "constant":
                if node.parents or node.value is None:
                    raise GraphError(f"node {i}: constant needs a value and no parents")
                if node.value.shape != node.shape:
                    raise GraphError(f"node {i}: constant value/shape mismatch")
            else:
                expect = _infer_shape(node.kind, [nodes[p].shape for p in node.parents])
                if expect != node.shape:
                    raise GraphError(
                        f"node {i} ({node.kind}): declared shape {node.shape}, inferred {expect}"
                    )
        self.nodes = nodes
        self.input_ids = tuple(i for i, n in enumerate(nodes) if n.kind == "input")

    def __len__(self) -> int:
        return len(self.nodes)

    def shape_of(self, node_id: int) -> tuple[int, ...]:
        return self.nodes[node_id].shape


class GraphBuilder:
    """Append-only constructor for :class:`Graph`; methods return node ids."""

    def __init__(self):
        self._nodes: list[Node] = []

    def _append(self, node: Node) -> int:
        self._nodes.append(node)
        return len(self._nodes) - 1

    def _op(self, kind: str, parents: tuple[int, ...], alpha: float = 1.0) -> int:
        for p in parents:
            if p < 0 or p >= len(self._nodes):
                raise GraphError(f"unknown parent node id {p}")
        shape = _infer_shape(kind, [self._nodes[p].shape for p in parents])
        return self._append(Node(kind, parents, shape, alpha=alpha))

    def input(self, shape) -> int:
        return self._append(Node("input", (), _check_shape(shape)))

    def constant(self, value) -> int:
        arr = np.atleast_1d(np.asarray(value, dtype=np.float64))
        _check_shape(arr.shape)
        if not np.all(np.isfinite(arr)):
            raise GraphError("constants must be finite")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        return self._append(Node("constant", (), arr.shape, value=arr))

    def matmul(self, a: int, b: int) -> int:
        return self._op("matmul", (a, b))

    def add(self, a: int, b: int) -> int:
        return self._op("add", (a, b))

    def relu(self, a: int) -> int:
        return self._op("relu", (a,))

    def sigmoid(self, a: int) -> int:
        return self._op("sigmoid", (a,))

    def scale(self, a: int, alpha: float) -> int:
        alpha = float(alpha)
        if not np.isfinite(alpha):
            raise GraphError("scale factor must be finite")
        return self._op("scale", (a,), alpha=alpha)

    def sum(self, a: int) -> int:
        return self._op("sum", (a,))

    def square(self, a: int) -> int:
        return self._op("square", (a,))

    def max_with_zero(self, a: int) -> int:
        return self._op("max_with_zero", (a,))

    def concat(self, parts) -> int:
        return self._op("concat", tuple(parts))

    def splice(self, graph: Graph, bind: dict[int, int]) -> dict[int, int]:
        """Copy ``graph`` into this builder, rewiring its inputs onto existing nodes.

        ``bind`` maps every input node id of ``graph`` to a node id already in
        this builder.  Returns the id mapping for all copied nodes.
        """
        missing = [i for i in graph.input_ids if i not in bind]
        if missing:
            raise GraphError(f"splice requires bindings for all inputs, missing {missing}")
        mapping: dict[int, int] = {}
        for i, node in enumerate(graph.nodes):
            if node.kind == "input":
                target = bind[i]
                if self._nodes[target].shape != node.shape:
                    raise GraphError(
                        f"splice binding for input {i}: shape {self._nodes[target].shape} != {node.shape}"
                    )
                mapping[i] = target
            elif node.kind == "constant":
                mapping[i] = self._append(node)
            else:
                parents = tuple(mapping[p] for p in node.parents)
                mapping[i] = self._append(Node(node.kind, parents, node.shape, alpha=node.alpha))
        return mapping

    def shape_of(self, node_id: int) -> tuple[int, ...]:
        return self._nodes[node_id].shape

    def build(self) -> Graph:
        return Graph(self._nodes)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp may overflow for very negative x; 1/(1+inf) == 0.0 is the right answer
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def forward_eval(graph: Graph, inputs: dict[int, np.ndarray]) -> list[np.ndarray]:
    """Evaluate every node; returns values indexed by node id.

    Pure: identical inputs give bit-identical outputs.  Raises
    :class:`NonFiniteError` if any op produces NaN/Inf and
    :class:`GraphError` for unbound inputs or shape mismatches.
    """
    nodes = graph.nodes
    values: list[np.ndarray] = [None] * len(nodes)  # type: ignore[list-item]
    # overflow surfaces as the explicit NonFiniteError below, not as a warning
    with np.errstate(over="ignore", invalid="ignore"):
        return _forward(nodes, values, inputs)


def _forward(nodes, values, inputs) -> list[np.ndarray]:
    for i, node in enumerate(nodes):
        kind = node.kind
        if kind == "input":
            if i not in inputs:
                raise GraphError(f"unbound input node {i}")
            v = np.asarray(inputs[i], dtype=np.float64)
            if v.shape != node.shape:
                raise GraphError(f"input node {i}: expected shape {node.shape}, got {v.shape}")
        elif kind == "constant":
            v = node.value
        elif kind == "matmul":
            v = values[node.parents[0]] @ values[node.parents[1]]
        elif kind == "add":
            v = values[node.parents[0]] + values[node.parents[1]]
        elif kind == "relu" or kind == "max_with_zero":
            v = np.maximum(values[node.parents[0]], 0.0)
        elif kind == "sigmoid":
            v = _sigmoid(values[node.parents[0]])
        elif kind == "scale":
            v = values[node.parents[0]] * node.alpha
        elif kind == "sum":
            v = np.array([values[node.parents[0]].sum()])
        elif kind == "square":
            v = np.square(values[node.parents[0]])
        else:  # concat
            v = np.concatenate([values[p] for p in node.parents])
        if not np.all(np.isfinite(v)):
            raise NonFiniteError(f"non-finite result at node {i} ({kind})")
        values[i] = v
    return values


def _require_scalar(graph: Graph, node_id: int, what: str) -> None:
    shape = graph.nodes[node_id].shape
    if int(np.prod(shape)) != 1:
        raise GraphError(f"{what} must be scalar-valued, node {node_id} has shape {shape}")


def forward_backward(
    graph: Graph, inputs: dict[int, np.ndarray], seed: int
) -> tuple[list[np.ndarray], dict[int, np.ndarray]]:
    """One forward pass plus reverse-mode gradients of ``seed`` w.r.t. every input.

    ReLU / max_with_zero use subgradient 0 at exactly 0.  Inputs with no path
    to the seed get zero gradients.
    """
    _require_scalar(graph, seed, "seed node")
    values = forward_eval(graph, inputs)
    nodes = graph.nodes
    adj: list[np.ndarray | None] = [None] * len(nodes)
    adj[seed] = np.ones(nodes[seed].shape)

    def acc(i: int, delta: np.ndarray) -> None:
        adj[i] = delta if adj[i] is None else adj[i] + delta

    with np.errstate(over="ignore", invalid="ignore"):
        _backward(nodes, values, adj, acc, seed)

    grads: dict[int, np.ndarray] = {}
    for i in graph.input_ids:
        gi = adj[i]
        if gi is None:
            gi = np.zeros(nodes[i].shape)
        elif not np.all(np.isfinite(gi)):
            raise NonFiniteError(f"non-finite gradient at input node {i}")
        grads[i] = gi
    return values, grads


def _backward(nodes, values, adj, acc, seed: int) -> None:
    for i in range(seed, -1, -1):
        g = adj[i]
        if g is None:
            continue
        node = nodes[i]
        kind = node.kind
        if kind == "input" or kind == "constant":
            continue
        if kind == "matmul":
            p0, p1 = node.parents
            a, b = values[p0], values[p1]
            if b.ndim == 1:
                acc(p0, np.outer(g, b))
                acc(p1, a.T @ g)
            else:
                acc(p0, g @ b.T)
                acc(p1, a.T @ g)
        elif kind == "add":
            acc(node.parents[0], g)
            acc(node.parents[1], g)
        elif kind == "relu" or kind == "max_with_zero":
            p = node.parents[0]
            acc(p, g * (values[p] > 0.0))
        elif kind == "sigmoid":
            s = values[i]
            acc(node.parents[0], g * s * (1.0 - s))
        elif kind == "scale":
            acc(node.parents[0], g * node.alpha)
        elif kind == "sum":
            p = node.parents[0]
            acc(p, np.full(values[p].shape, g[0]))
        elif kind == "square":
            p = node.parents[0]
            acc(p, g * 2.0 * values[p])
        else:  # concat
            off = 0
            for p in node.parents:
                n = values[p].shape[0]
                acc(p, g[off : off + n])
                off += n


def backward_grad(graph: Graph, inputs: dict[int, np.ndarray], seed: int) -> dict[int, np.ndarray]:
    """Gradient of a scalar seed node with respect to each input node."""
    return forward_backward(graph, inputs, seed)[1]


def finite_diff_grad(
    graph: Graph, inputs: dict[int, np.ndarray], seed: int, step: float
) -> dict[int, np.ndarray]:
    """Central-difference estimate of :func:`backward_grad` (the test oracle)."""
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    _require_scalar(graph, seed, "seed node")

    def eval_seed(bound: dict[int, np.ndarray]) -> float:
        return float(forward_eval(graph, bound)[seed].reshape(()))

    base = {i: np.array(v, dtype=np.float64) for i, v in inputs.items()}
    grads: dict[int, np.ndarray] = {}
    for i in graph.input_ids:
        x = base[i]
        g = np.zeros_like(x)
        flat_x = x.reshape(-1)
        flat_g = g.reshape(-1)
        for j in range(flat_x.size):
            orig = flat_x[j]
            flat_x[j] = orig + step
            f_plus = eval_seed(base)
            flat_x[j] = orig - step
            f_minus = eval_seed(base)
            flat_x[j] = orig
            flat_g[j] = (f_plus - f_minus) / (2.0 * step)
        grads[i] = g
    return grads
