"""Dense float64 tensors with reverse-mode differentiation on a tape.

Every op appends one record to the tape; records are therefore already in
topological order, and `backward` replays them once in reverse.  Forward
outputs are checked for NaN/Inf so divergence fails fast at the op that
produced it.

Elementwise ops support numpy-style broadcasting (the backward pass sums
gradients over broadcast axes); matmul is strictly 2-D.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NonFiniteError, ShapeError

LEAKY_SLOPE = 0.2


class Node:
    __slots__ = ("op", "inputs", "backward")

    def __init__(self, op: str, inputs: tuple[int, ...], backward: Callable | None):
        self.op = op
        self.inputs = inputs
        self.backward = backward


class Tensor:
    __slots__ = ("values", "tape", "node")

    def __init__(self, values: np.ndarray, tape: "Tape | None" = None, node: int | None = None):
        self.values = values
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, node={self.node})"


class Tape:
    """Op recorder.  Single-owner during a forward/backward pass."""

    def __init__(self):
        self.nodes: list[Node] = []

    def _emit(self, op: str, values: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
        if not np.isfinite(values).all():
            raise NonFiniteError(f"op {op!r} produced non-finite values")
        ids = tuple(t.node for t in inputs)
        self.nodes.append(Node(op, ids, backward))
        return Tensor(values, self, len(self.nodes) - 1)

    def leaf(self, values: np.ndarray, op: str = "leaf") -> Tensor:
        arr = np.asarray(values, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"{op} holds non-finite values")
        self.nodes.append(Node(op, (), None))
        return Tensor(arr, self, len(self.nodes) - 1)

    def const(self, values: np.ndarray) -> Tensor:
        return self.leaf(values, op="const")

    def backward(self, loss: Tensor) -> list[np.ndarray | None]:
        """Gradient of a scalar loss w.r.t. every node, by node id.

        Nodes the loss does not depend on get None.
        """
        if loss.tape is not self:
            raise ShapeError("loss tensor does not belong to this tape")
        if loss.values.size != 1:
            raise ShapeError(f"loss must be scalar, got shape {loss.values.shape}")
        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        grads[loss.node] = np.ones_like(loss.values)
        for nid in range(loss.node, -1, -1):
            g = grads[nid]
            if g is None:
                continue
            node = self.nodes[nid]
            if node.backward is None:
                continue
            contribs = node.backward(g)
            for iid, c in zip(node.inputs, contribs):
                if c is None:
                    continue
                if grads[iid] is None:
                    grads[iid] = c
                else:
                    grads[iid] = grads[iid] + c
        return grads


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _same_tape(*ts: Tensor) -> Tape:
    tape = ts[0].tape
    for t in ts:
        if t.tape is not tape:
            raise ShapeError("operands recorded on different tapes")
    return tape


def add(a: Tensor, b: Tensor) -> Tensor:
    tape = _same_tape(a, b)
    out = a.values + b.values
    ash, bsh = a.values.shape, b.values.shape
    return tape._emit("add", out, (a, b), lambda g: (_unbroadcast(g, ash), _unbroadcast(g, bsh)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    tape = _same_tape(a, b)
    out = a.values - b.values
    ash, bsh = a.values.shape, b.values.shape
    return tape._emit("sub", out, (a, b), lambda g: (_unbroadcast(g, ash), _unbroadcast(-g, bsh)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    tape = _same_tape(a, b)
    av, bv = a.values, b.values
    out = av * bv
    return tape._emit(
        "mul", out, (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    tape = _same_tape(a, b)
    av, bv = a.values, b.values
    out = av / bv
    return tape._emit(
        "div", out, (a, b),
        lambda g: (_unbroadcast(g / bv, av.shape), _unbroadcast(-g * av / (bv * bv), bv.shape)),
    )


def scale(a: Tensor, c: float) -> Tensor:
    out = a.values * c
    return a.tape._emit("scale", out, (a,), lambda g: (g * c,))


def add_const(a: Tensor, c) -> Tensor:
    out = a.values + c
    return a.tape._emit("add_const", out, (a,), lambda g: (_unbroadcast(g, a.values.shape),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    tape = _same_tape(a, b)
    av, bv = a.values, b.values
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul shapes {av.shape} x {bv.shape}")
    out = av @ bv
    return tape._emit("matmul", out, (a, b), lambda g: (g @ bv.T, av.T @ g))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tape = _same_tape(*tensors)
    vals = [t.values for t in tensors]
    out = np.concatenate(vals, axis=axis)
    sizes = [v.shape[axis] for v in vals]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return tape._emit("concat", out, tuple(tensors), bw)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    out = a.values[start:stop].copy()
    shape = a.values.shape

    def bw(g):
        ga = np.zeros(shape)
        ga[start:stop] = g
        return (ga,)

    return a.tape._emit("slice_rows", out, (a,), bw)


def gather(a: Tensor, rows: np.ndarray) -> Tensor:
    rows = np.asarray(rows, dtype=np.int64)
    out = a.values[rows]
    shape = a.values.shape

    def bw(g):
        ga = np.zeros(shape)
        np.add.at(ga, rows, g)
        return (ga,)

    return a.tape._emit("gather", out, (a,), bw)


def scatter_max(a: Tensor, index: np.ndarray, size: int) -> Tensor:
    """Rowwise segment max: out[i] = max over rows r with index[r] == i.

    Rows of the output that receive no input are zero.  Gradient routes only
    to the argmax row per (segment, column); ties go to the lowest row index.
    """
    index = np.asarray(index, dtype=np.int64)
    av = a.values
    if av.ndim != 2 or len(index) != av.shape[0]:
        raise ShapeError("scatter_max expects (R, d) values with one index per row")
    d = av.shape[1]
    out = np.zeros((size, d))
    arg = np.full((size, d), -1, dtype=np.int64)
    order = np.argsort(index, kind="stable")
    bounds = np.searchsorted(index[order], np.arange(size + 1))
    for i in range(size):
        seg = order[bounds[i]:bounds[i + 1]]
        if len(seg) == 0:
            continue
        block = av[seg]
        amax = block.argmax(axis=0)
        out[i] = block[amax, np.arange(d)]
        arg[i] = seg[amax]

    def bw(g):
        ga = np.zeros_like(av)
        valid = arg >= 0
        rows = arg[valid]
        cols = np.broadcast_to(np.arange(d), arg.shape)[valid]
        np.add.at(ga, (rows, cols), g[valid])
        return (ga,)

    return a.tape._emit("scatter_max", out, (a,), bw)


def pair_scatter_max(P: Tensor, Q: Tensor, src: np.ndarray, dst: np.ndarray, size: int) -> Tensor:
    """Segment max over implicit edge values P[dst] + Q[src] - Q[dst].

    Equivalent to gathering the edge matrix and scatter_max-ing it, but never
    materializes per-edge activations on the tape.  Edges must be grouped by
    ascending dst.  Ties route the gradient to the first edge.
    """
    tape = _same_tape(P, Q)
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    pv, qv = P.values, Q.values
    if pv.shape != qv.shape:
        raise ShapeError("P and Q must have the same shape")
    d = pv.shape[1]
    edge_vals = pv[dst] + qv[src] - qv[dst]
    out = np.full((size, d), 0.0)
    arg = np.full((size, d), -1, dtype=np.int64)
    bounds = np.searchsorted(dst, np.arange(size + 1))
    lengths = np.diff(bounds)
    # vectorize the per-segment argmax by batching segments of equal length
    for length in np.unique(lengths):
        if length == 0:
            continue
        segs = np.flatnonzero(lengths == length)
        pos = bounds[segs][:, None] + np.arange(length)[None, :]
        block = edge_vals[pos]  # (n_segs, length, d)
        amax = block.argmax(axis=1)  # (n_segs, d)
        out[segs] = np.take_along_axis(block, amax[:, None, :], axis=1)[:, 0, :]
        arg[segs] = bounds[segs][:, None] + amax

    def bw(g):
        valid = (arg >= 0).ravel()
        edges = arg.ravel()[valid]
        cc = np.broadcast_to(np.arange(d), arg.shape).ravel()[valid]
        gv = g.ravel()[valid]
        nd = pv.shape[0] * d

        def accum(rows, weights):
            return np.bincount(rows * d + cc, weights=weights, minlength=nd).reshape(pv.shape)

        gp = accum(dst[edges], gv)
        gq = accum(src[edges], gv) - accum(dst[edges], gv)
        return (gp, gq)

    return tape._emit("pair_scatter_max", out, (P, Q), bw)


def max_reduce(a: Tensor, axis: int) -> Tensor:
    """Max along one axis; gradient goes to the first argmax per slot."""
    av = a.values
    out = av.max(axis=axis)
    arg = av.argmax(axis=axis)

    def bw(g):
        ga = np.zeros_like(av)
        idx = list(np.indices(out.shape))
        idx.insert(axis % av.ndim, arg)
        ga[tuple(idx)] = g
        return (ga,)

    return a.tape._emit("max_reduce", out, (a,), bw)


def sum_reduce(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    av = a.values
    out = av.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, av.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, av.shape).copy(),)

    return a.tape._emit("sum", np.asarray(out, dtype=np.float64), (a,), bw)


def mean_reduce(a: Tensor, axis: int | None = None) -> Tensor:
    av = a.values
    count = av.size if axis is None else av.shape[axis]
    out = av.mean(axis=axis)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g / count, av.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis) / count, av.shape).copy(),)

    return a.tape._emit("mean", np.asarray(out, dtype=np.float64), (a,), bw)


def tile_rows(a: Tensor, n: int) -> Tensor:
    """Repeat a (d,) vector into (n, d) rows; gradient sums over rows."""
    av = a.values
    if av.ndim != 1:
        raise ShapeError(f"tile_rows expects a vector, got {av.shape}")
    out = np.broadcast_to(av, (n, av.shape[0])).copy()
    return a.tape._emit("tile_rows", out, (a,), lambda g: (g.sum(axis=0),))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    av = a.values
    out = av.reshape(shape)
    return a.tape._emit("reshape", out, (a,), lambda g: (g.reshape(av.shape),))


def relu(a: Tensor) -> Tensor:
    av = a.values
    out = np.maximum(av, 0.0)
    return a.tape._emit("relu", out, (a,), lambda g: (g * (av > 0),))


def leaky_relu(a: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    av = a.values
    out = np.where(av > 0, av, slope * av)
    return a.tape._emit("leaky_relu", out, (a,), lambda g: (g * np.where(av > 0, 1.0, slope),))


def sigmoid(a: Tensor) -> Tensor:
    av = a.values
    out = np.empty_like(av)
    pos = av >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-av[pos]))
    e = np.exp(av[~pos])
    out[~pos] = e / (1.0 + e)
    return a.tape._emit("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.values)
    return a.tape._emit("exp", out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    av = a.values
    out = np.log(av)
    return a.tape._emit("log", out, (a,), lambda g: (g / av,))


def square(a: Tensor) -> Tensor:
    av = a.values
    return a.tape._emit("square", av * av, (a,), lambda g: (2.0 * g * av,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.values)
    return a.tape._emit("sqrt", out, (a,), lambda g: (g / (2.0 * out),))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    av = a.values
    shifted = av - av.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return a.tape._emit("softmax", out, (a,), bw)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    av = a.values
    shifted = av - av.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    sm = np.exp(out)

    def bw(g):
        return (g - sm * g.sum(axis=axis, keepdims=True),)

    return a.tape._emit("log_softmax", out, (a,), bw)
