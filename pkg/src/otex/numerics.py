"""Dense tensors with define-by-run reverse-mode differentiation.

A :class:`Graph` records every operation applied to tensors attached to it.
Tensors that carry no graph are plain constants; operations that only touch
constants are evaluated eagerly and leave no trace.  Vectors are 1-D arrays,
sequences of vectors are stored column-wise as ``[dim x length]`` matrices.
"""
from __future__ import annotations

import math
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from .errors import ContractError, GradCheckError, ShapeError, ValidationError

LOG_CLAMP = 1e-12


class Tensor:
    __slots__ = ("data", "graph", "node")

    def __init__(self, data, graph: Optional["Graph"] = None, node: int = -1):
        self.data = data
        self.graph = graph
        self.node = node

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        where = f"node={self.node}" if self.graph is not None else "const"
        return f"Tensor(shape={self.data.shape}, {where})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    @property
    def T(self):
        return transpose(self)


class Node:
    __slots__ = ("kind", "inputs", "out", "cache")

    def __init__(self, kind, inputs, out, cache):
        self.kind = kind
        self.inputs = inputs
        self.out = out
        self.cache = cache


class Graph:
    """Operation tape for one forward computation.

    Nodes are appended as operations execute, so every node's inputs precede
    it.  ``params`` maps registered parameter names to their node ids.
    """

    def __init__(self, dtype=np.float32, check_finite: bool = False):
        self.dtype = np.dtype(dtype)
        self.check_finite = check_finite
        self.nodes: list[Node] = []
        self.params: Dict[str, int] = {}

    def __len__(self):
        return len(self.nodes)

    def param(self, name: str, value) -> Tensor:
        if name in self.params:
            raise ContractError(f"parameter {name!r} registered twice")
        data = np.asarray(value, dtype=self.dtype)
        t = self._record("param", (), data, name)
        self.params[name] = t.node
        return t

    def leaf(self, value) -> Tensor:
        """An input that is tracked on the tape but is not a parameter."""
        return self._record("leaf", (), np.array(value, dtype=self.dtype), None)

    def constant(self, value) -> Tensor:
        return Tensor(np.asarray(value, dtype=self.dtype))

    def _record(self, kind, inputs, data, cache) -> Tensor:
        if self.check_finite and not np.all(np.isfinite(data)):
            raise FloatingPointError(f"non-finite output from {kind!r} at node {len(self.nodes)}")
        t = Tensor(data, self, len(self.nodes))
        self.nodes.append(Node(kind, inputs, t, cache))
        return t


def tensor(value, dtype=np.float32) -> Tensor:
    """Untracked constant tensor."""
    return Tensor(np.asarray(value, dtype=dtype))


def _emit(kind, inputs, data, cache=None) -> Tensor:
    graph = None
    for t in inputs:
        g = t.graph
        if g is not None:
            if graph is not None and g is not graph:
                raise ContractError("operands belong to different graphs")
            graph = g
    if graph is None:
        return Tensor(data)
    return graph._record(kind, inputs, data, cache)


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _same_shape(kind, a: Tensor, b: Tensor):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{kind}: shape mismatch {a.data.shape} vs {b.data.shape}")


# forward operations ----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product ``a @ b``; ``b`` may be a vector."""
    if a.data.ndim != 2 or b.data.ndim not in (1, 2) or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.data.shape} by {b.data.shape}")
    return _emit("matmul", (a, b), a.data @ b.data)


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return _emit("add_scalar", (a,), a.data + np.asarray(b, dtype=a.data.dtype))
    _same_shape("add", a, b)
    return _emit("add", (a, b), a.data + b.data)


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return _emit("add_scalar", (a,), a.data - np.asarray(b, dtype=a.data.dtype))
    _same_shape("sub", a, b)
    return _emit("sub", (a, b), a.data - b.data)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product."""
    _same_shape("hadamard", a, b)
    return _emit("mul", (a, b), a.data * b.data)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit("scale", (a,), a.data * a.data.dtype.type(c), c)


def one_minus(a: Tensor) -> Tensor:
    return _emit("one_minus", (a,), 1 - a.data)


def elementwise(op: str, a: Tensor, b) -> Tensor:
    """Dispatch by name: ``add``, ``sub``, ``hadamard`` or ``scale``."""
    if op == "add":
        return add(a, b)
    if op == "sub":
        return sub(a, b)
    if op == "hadamard":
        return mul(a, _as_tensor(b, a))
    if op == "scale":
        return scale(a, b)
    raise ValueError(f"unknown elementwise op {op!r}")


def add_bias(m: Tensor, b: Tensor) -> Tensor:
    """Add vector ``b`` to every column of ``m``.

    This is the only broadcasting operation; it is explicit by design.
    """
    if m.data.ndim == 1:
        return add(m, b)
    if b.data.ndim != 1 or m.data.shape[0] != b.data.shape[0]:
        raise ShapeError(f"add_bias: {m.data.shape} and {b.data.shape}")
    return _emit("add_bias", (m, b), m.data + b.data[:, None])


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype, copy=False)
    return _emit("sigmoid", (a,), out)


def elu(a: Tensor) -> Tensor:
    """ELU with alpha = 1."""
    x = a.data
    out = np.where(x > 0, x, np.expm1(np.minimum(x, 0))).astype(x.dtype, copy=False)
    return _emit("elu", (a,), out)


def softmax(a: Tensor, axis: int = 0) -> Tensor:
    """Softmax along ``axis``; for a ``[classes x n]`` matrix each column is a distribution."""
    if a.data.size == 0:
        raise ContractError("softmax of an empty tensor")
    x = a.data
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return _emit("softmax", (a,), e / e.sum(axis=axis, keepdims=True), axis)


def cross_entropy(q: Tensor, target) -> Tensor:
    """Negative log-probability of ``target``.

    ``q`` is a probability vector and ``target`` an int, or ``q`` is a
    ``[classes x n]`` matrix and ``target`` holds n class indices, in which case
    the per-column losses are summed.
    """
    n_cls = q.data.shape[0]
    tgt = np.asarray(target, dtype=np.int64)
    if tgt.size and (tgt.min() < 0 or tgt.max() >= n_cls):
        raise IndexError(f"cross_entropy: target {target} outside [0, {n_cls})")
    if q.data.ndim == 1:
        if tgt.ndim != 0:
            raise ShapeError("cross_entropy: vector input needs a single target")
        cols = None
        picked = q.data[tgt]
    else:
        if tgt.shape != (q.data.shape[1],):
            raise ShapeError(f"cross_entropy: {tgt.shape[0] if tgt.ndim else 1} targets for {q.data.shape}")
        cols = np.arange(q.data.shape[1])
        picked = q.data[tgt, cols]
    loss = -np.log(np.maximum(picked, LOG_CLAMP)).sum()
    return _emit("cross_entropy", (q,), np.asarray(loss, dtype=q.data.dtype), (tgt, cols))


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along ``axis`` (0 stacks vectors / feature rows, 1 appends columns)."""
    if not parts:
        raise ContractError("concat of no tensors")
    arrays = [p.data for p in parts]
    try:
        out = np.concatenate(arrays, axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: incompatible shapes {[a.shape for a in arrays]}") from exc
    sizes = [a.shape[axis] for a in arrays]
    return _emit("concat", tuple(parts), out, (axis, sizes))


def split(a: Tensor, sizes: Sequence[int], axis: int = 0) -> list[Tensor]:
    if sum(sizes) != a.data.shape[axis]:
        raise ShapeError(f"split: sizes {list(sizes)} do not cover axis of length {a.data.shape[axis]}")
    out, start = [], 0
    for s in sizes:
        key = [slice(None)] * a.data.ndim
        key[axis] = slice(start, start + s)
        out.append(take(a, tuple(key)))
        start += s
    return out


def _is_fancy(key) -> bool:
    if not isinstance(key, tuple):
        key = (key,)
    return any(isinstance(k, (list, np.ndarray)) for k in key)


def take(a: Tensor, key) -> Tensor:
    """Indexing (basic slices or integer arrays); gradients scatter back additively."""
    return _emit("take", (a,), a.data[key], (key, _is_fancy(key)))


def take_columns(a: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    return take(a, (slice(None), ids))


def transpose(a: Tensor) -> Tensor:
    return _emit("transpose", (a,), a.data.T)


def sum_all(a: Tensor) -> Tensor:
    return _emit("sum", (a,), np.asarray(a.data.sum(), dtype=a.data.dtype))


def square_sum(a: Tensor) -> Tensor:
    return sum_all(mul(a, a))


# backward rules: (node, upstream grad) -> gradient per input ------------------


def _bw_matmul(node, g):
    a, b = node.inputs
    if b.data.ndim == 1:
        return np.outer(g, b.data), a.data.T @ g
    return g @ b.data.T, a.data.T @ g


def _bw_sigmoid(node, g):
    y = node.out.data
    return (g * y * (1 - y),)


def _bw_elu(node, g):
    x, y = node.inputs[0].data, node.out.data
    return (g * np.where(x > 0, 1, y + 1),)


def _bw_softmax(node, g):
    y = node.out.data
    return (y * (g - (g * y).sum(axis=node.cache, keepdims=True)),)


def _bw_cross_entropy(node, g):
    q = node.inputs[0].data
    tgt, cols = node.cache
    gq = np.zeros_like(q)
    if cols is None:
        p = q[tgt]
        if p >= LOG_CLAMP:
            gq[tgt] = -g / p
    else:
        p = q[tgt, cols]
        gq[tgt, cols] = np.where(p >= LOG_CLAMP, -g / np.maximum(p, LOG_CLAMP), 0)
    return (gq,)


def _bw_concat(node, g):
    axis, sizes = node.cache
    bounds = np.cumsum(sizes)[:-1]
    return tuple(np.split(g, bounds, axis=axis))


def _bw_take(node, g):
    key, fancy = node.cache
    src = node.inputs[0].data
    out = np.zeros_like(src)
    if fancy:
        np.add.at(out, key, g)
    else:
        out[key] += g
    return (out,)


BACKWARD_RULES: Dict[str, Callable] = {
    "matmul": _bw_matmul,
    "add": lambda node, g: (g, g),
    "add_scalar": lambda node, g: (g,),
    "sub": lambda node, g: (g, -g),
    "mul": lambda node, g: (g * node.inputs[1].data, g * node.inputs[0].data),
    "scale": lambda node, g: (g * node.cache,),
    "one_minus": lambda node, g: (-g,),
    "add_bias": lambda node, g: (g, g.sum(axis=1)),
    "sigmoid": _bw_sigmoid,
    "elu": _bw_elu,
    "softmax": _bw_softmax,
    "cross_entropy": _bw_cross_entropy,
    "concat": _bw_concat,
    "take": _bw_take,
    "transpose": lambda node, g: (g.T,),
    "sum": lambda node, g: (np.full_like(node.inputs[0].data, g),),
}


def backward(graph: Graph, loss: Tensor) -> Dict[str, np.ndarray]:
    """Reverse sweep from a scalar ``loss``; returns a gradient per registered parameter."""
    if loss.graph is not graph:
        raise ContractError("loss does not belong to this graph")
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    grads: list = [None] * len(graph.nodes)
    grads[loss.node] = np.ones_like(loss.data)
    rules = BACKWARD_RULES
    for idx in range(loss.node, -1, -1):
        g = grads[idx]
        if g is None:
            continue
        node = graph.nodes[idx]
        if not node.inputs:
            continue
        in_grads = rules[node.kind](node, g)
        for t, gi in zip(node.inputs, in_grads):
            j = t.node
            if j < 0 or t.graph is not graph:
                continue
            if grads[j] is None:
                grads[j] = gi
            else:
                grads[j] = grads[j] + gi
    out = {}
    for name, idx in graph.params.items():
        g = grads[idx]
        data = graph.nodes[idx].out.data
        out[name] = np.zeros_like(data) if g is None else np.asarray(g, dtype=data.dtype).reshape(data.shape)
    return out


# verification and gradient post-processing -------------------------------------


def grad_check_detail(
    f: Callable[[Dict[str, Tensor]], Tensor],
    params: Dict[str, np.ndarray],
    eps: float = 1e-5,
    max_entries: Optional[int] = None,
    seed: int = 0,
) -> Dict[str, float]:
    """Per-parameter max of ``|analytic - numeric| / max(1, |analytic|)``.

    ``f`` maps a dict of tensors to a scalar tensor and must be deterministic.
    Everything runs in float64.  With ``max_entries`` only a seeded random
    subset of each parameter's entries is perturbed.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    graph = Graph(np.float64)
    bound = {k: graph.param(k, v) for k, v in base.items()}
    loss = f(bound)
    if not np.isfinite(loss.data):
        raise GradCheckError(f"loss is not finite at the base point (parameters: {', '.join(sorted(base))})")
    analytic = backward(graph, loss)

    def evaluate():
        return float(f({k: Tensor(v) for k, v in base.items()}).data)

    rng = np.random.default_rng(seed)
    report = {}
    for name in sorted(base):
        arr = base[name]
        flat = arr.reshape(-1)
        idxs = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idxs = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        a_flat = analytic[name].reshape(-1)
        worst = 0.0
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            fp = evaluate()
            flat[i] = orig - eps
            fm = evaluate()
            flat[i] = orig
            numeric = (fp - fm) / (2 * eps)
            a = a_flat[i]
            if not (math.isfinite(numeric) and math.isfinite(a)):
                raise GradCheckError(f"non-finite gradient for parameter {name!r} at entry {int(i)}")
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
        report[name] = worst
    return report


def grad_check(f, params, eps: float = 1e-5, max_entries: Optional[int] = None, seed: int = 0) -> float:
    detail = grad_check_detail(f, params, eps=eps, max_entries=max_entries, seed=seed)
    return max(detail.values(), default=0.0)


def global_norm(grads: Dict[str, np.ndarray]) -> float:
    total = 0.0
    for name in sorted(grads):
        g = np.asarray(grads[name], dtype=np.float64)
        total += float(np.dot(g.ravel(), g.ravel()))
    return math.sqrt(total)


def global_norm_clip(grads: Dict[str, np.ndarray], max_norm: float) -> Dict[str, np.ndarray]:
    """Rescale all gradients jointly so their global L2 norm is at most ``max_norm``.

    Norms within a relative 1e-6 of the limit are left alone, which keeps the
    operation idempotent under float32 rounding.
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = global_norm(grads)
    if norm <= max_norm * (1 + 1e-6):
        return dict(grads)
    factor = max_norm / norm
    return {k: (np.asarray(g, dtype=np.float64) * factor).astype(g.dtype) for k, g in grads.items()}


def dropout_mask(shape, rate: float, rng: Optional[np.random.Generator], dtype=np.float32) -> np.ndarray:
    """Inverted-dropout mask: 0 with probability ``rate``, else ``1 / (1 - rate)``.

    ``rng=None`` (inference) or ``rate == 0`` gives the all-ones mask.
    """
    if not 0 <= rate < 1:
        raise ValidationError(f"dropout rate must be in [0, 1), got {rate}")
    if rng is None or rate == 0:
        return np.ones(shape, dtype=dtype)
    keep = rng.random(shape) >= rate
    return keep.astype(dtype) * np.asarray(1.0 / (1.0 - rate), dtype=dtype)

