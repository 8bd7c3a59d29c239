"""Reverse-mode automatic differentiation on an explicit, replayable tape.

The design is a Wengert list: every differentiable operation appends one node
to a ``Tape``, in execution order, so a backward pass is a single reverse sweep
over a list slice — no topological sort, no recursion.  Backward rules are
written in terms of the same tensor ops, which is what makes second-order
gradients work: ``backward(..., create_graph=True)`` runs the reverse sweep
with taping left on, so the produced gradients are themselves differentiable
tape residents, and differentiating *through* a backward pass is just another
backward pass (backward-over-backward).

Deliberate restrictions, all enforced loudly:

* float64 everywhere — certificate tolerances assume 64-bit arithmetic;
* broadcasting only between a scalar and a tensor, or equal shapes
  (row-broadcasts are explicit ops with explicit adjoints);
* a tensor belongs to at most one tape, and mixing tapes is an error.

Tensors without a node are constants: they participate in arithmetic but
receive no gradient and cannot be differentiated against.
"""

from __future__ import annotations

import heapq

import numpy as np

__all__ = [
    "Tape", "Tensor", "backward", "finite_diff",
    "add", "sub", "mul", "neg", "matmul", "transpose", "relu", "linear",
    "bmm", "bswap", "blinear", "bsum_rows", "btile_rows", "tile_batch", "sum_batch",
    "reduce_sum", "reduce_mean", "broadcast_rows", "concat_cols",
    "elementwise", "reduce",
]

# Taping is suspended while a plain (create_graph=False) backward sweep runs,
# so adjoint arithmetic stays off the tape and costs only the numpy calls.
_TAPING = True


class Tape:
    """Append-only record of differentiable operations.

    Nodes are (parents, vjp) pairs stored in execution order; the node's
    position in ``self.nodes`` is its id.  The graph is acyclic by
    construction because a node can only refer to earlier nodes.
    """

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes = []

    def __len__(self):
        return len(self.nodes)

    def leaf(self, data) -> "Tensor":
        """Register ``data`` as a differentiable leaf on this tape."""
        t = Tensor(data)
        t.tape = self
        t.idx = len(self.nodes)
        self.nodes.append(((), None))
        return t

    def _record(self, out: "Tensor", parents, vjp):
        out.tape = self
        out.idx = len(self.nodes)
        self.nodes.append((parents, vjp))


class Tensor:
    """A float64 ndarray plus (optionally) a position on a tape."""

    __slots__ = ("data", "tape", "idx")

    def __init__(self, data):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.tape = None
        self.idx = -1

    # -- conveniences -------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = f" tape@{self.idx}" if self.tape is not None else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tape_of(*tensors):
    """The common tape of the taped operands (None if all constant)."""
    tape = None
    for t in tensors:
        if t.tape is not None:
            if tape is None:
                tape = t.tape
            elif tape is not t.tape:
                raise ValueError("operands live on different tapes")
    return tape


def _emit(data, parents, vjp) -> Tensor:
    """Wrap ``data``; record a node when taping is on and a parent is taped."""
    out = Tensor(data)
    if _TAPING:
        tape = _tape_of(*parents)
        if tape is not None:
            tape._record(out, tuple(parents), vjp)
    return out


def _check_elementwise(a: Tensor, b: Tensor, op: str):
    if a.data.shape != b.data.shape and a.data.size != 1 and b.data.size != 1:
        raise ValueError(
            f"{op}: shapes {a.data.shape} and {b.data.shape} are neither equal "
            "nor scalar-with-tensor (only those broadcasts are supported)"
        )


def _unbroadcast(g: Tensor, shape) -> Tensor:
    # Adjoint of scalar-with-tensor broadcasting: sum everything back down.
    if g.data.shape == shape:
        return g
    s = reduce_sum(g)
    if shape == ():
        return s
    return reshape_scalar(s, shape)


def reshape_scalar(s: Tensor, shape) -> Tensor:
    """View a size-1 tensor under a size-1 target shape (adjoint plumbing)."""
    if int(np.prod(shape)) != 1 or s.data.size != 1:
        raise ValueError("reshape_scalar only handles size-1 tensors")
    return _emit(s.data.reshape(shape), (s,), lambda g: (_unbroadcast(g, s.data.shape),))


# -- arithmetic -------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_elementwise(a, b, "add")
    return _emit(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_elementwise(a, b, "sub")
    return _emit(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.data.shape),
                            _unbroadcast(neg(g), b.data.shape)))


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_elementwise(a, b, "mul")
    return _emit(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(mul(g, b), a.data.shape),
                            _unbroadcast(mul(g, a), b.data.shape)))


def neg(a) -> Tensor:
    a = _lift(a)
    return _emit(-a.data, (a,), lambda g: (neg(g),))


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul inner dimensions differ: {a.data.shape} @ {b.data.shape}")
    return _emit(a.data @ b.data, (a, b),
                 lambda g: (matmul(g, transpose(b)), matmul(transpose(a), g)))


def transpose(a) -> Tensor:
    a = _lift(a)
    if a.data.ndim != 2:
        raise ValueError("transpose expects a 2-D tensor")
    return _emit(a.data.T.copy(), (a,), lambda g: (transpose(g),))


def linear(h, w, b) -> Tensor:
    """Fused affine layer: h @ w.T + b with h (n, d_in), w (d_out, d_in), b (d_out,).

    One tape node for what would otherwise be transpose + matmul +
    broadcast + add; the layer dominates the meta-training graph, so fusing
    it keeps the unrolled inner loop's node count (and the reverse-sweep
    Python overhead) manageable.
    """
    h, w, b = _lift(h), _lift(w), _lift(b)
    if h.data.ndim != 2 or w.data.ndim != 2 or b.data.ndim != 1:
        raise ValueError(
            f"linear expects (n,d_in) @ (d_out,d_in)^T + (d_out,), got "
            f"{h.data.shape}, {w.data.shape}, {b.data.shape}")
    if h.data.shape[1] != w.data.shape[1] or w.data.shape[0] != b.data.shape[0]:
        raise ValueError(
            f"linear dimensions disagree: {h.data.shape}, {w.data.shape}, {b.data.shape}")
    return _emit(h.data @ w.data.T + b.data, (h, w, b),
                 lambda g: (matmul(g, w), matmul(transpose(g), h),
                            reduce_sum(g, axis=0)))


# -- batched (leading task axis) ops ------------------------------------------
#
# Training on a batch of tasks raises the natural rank by one: each task
# carries its own parameter copies, stacked along a leading axis.  These ops
# make that one graph node per layer instead of one subgraph per task, which
# is what keeps the unrolled meta-gradient tractable in pure Python.


def _check_batched(t: Tensor, ndim: int, op: str):
    if t.data.ndim != ndim:
        raise ValueError(f"{op} expects a {ndim}-D tensor, got shape {t.data.shape}")


def bmm(a, b) -> Tensor:
    """Per-task matmul: (T, n, k) @ (T, k, m) -> (T, n, m)."""
    a, b = _lift(a), _lift(b)
    _check_batched(a, 3, "bmm")
    _check_batched(b, 3, "bmm")
    if a.data.shape[0] != b.data.shape[0] or a.data.shape[2] != b.data.shape[1]:
        raise ValueError(f"bmm shapes disagree: {a.data.shape} @ {b.data.shape}")
    return _emit(np.matmul(a.data, b.data), (a, b),
                 lambda g: (bmm(g, bswap(b)), bmm(bswap(a), g)))


def bswap(a) -> Tensor:
    """Transpose within each task: swap the last two axes of a 3-D tensor."""
    a = _lift(a)
    _check_batched(a, 3, "bswap")
    return _emit(np.swapaxes(a.data, 1, 2).copy(), (a,), lambda g: (bswap(g),))


def blinear(h, w, b) -> Tensor:
    """Per-task affine layer: h @ w.T + b on (T, n, d_in), (T, d_out, d_in), (T, d_out)."""
    h, w, b = _lift(h), _lift(w), _lift(b)
    _check_batched(h, 3, "blinear")
    _check_batched(w, 3, "blinear")
    _check_batched(b, 2, "blinear")
    if (h.data.shape[0] != w.data.shape[0] or h.data.shape[2] != w.data.shape[2]
            or b.data.shape != w.data.shape[:2]):
        raise ValueError(
            f"blinear dimensions disagree: {h.data.shape}, {w.data.shape}, {b.data.shape}")
    out = np.matmul(h.data, np.swapaxes(w.data, 1, 2)) + b.data[:, None, :]
    return _emit(out, (h, w, b),
                 lambda g: (bmm(g, w), bmm(bswap(g), h), bsum_rows(g)))


def bsum_rows(a) -> Tensor:
    """Sum each task's rows: (T, n, d) -> (T, d)."""
    a = _lift(a)
    _check_batched(a, 3, "bsum_rows")
    n = a.data.shape[1]
    return _emit(a.data.sum(axis=1), (a,), lambda g: (btile_rows(g, n),))


def btile_rows(v, n: int) -> Tensor:
    """Tile each task's vector into n rows: (T, d) -> (T, n, d)."""
    v = _lift(v)
    _check_batched(v, 2, "btile_rows")
    t, d = v.data.shape
    return _emit(np.broadcast_to(v.data[:, None, :], (t, n, d)).copy(), (v,),
                 lambda g: (bsum_rows(g),))


def tile_batch(a, t: int) -> Tensor:
    """Give every task its own copy: shape s -> (t,) + s; adjoint sums the copies."""
    a = _lift(a)
    if t < 1:
        raise ValueError("tile_batch needs at least one task")
    data = np.broadcast_to(a.data, (t,) + a.data.shape).copy()
    return _emit(data, (a,), lambda g: (sum_batch(g),))


def sum_batch(a) -> Tensor:
    """Collapse the task axis by summation: (t,) + s -> s."""
    a = _lift(a)
    if a.data.ndim < 1:
        raise ValueError("sum_batch needs a leading task axis")
    t = a.data.shape[0]
    return _emit(a.data.sum(axis=0), (a,), lambda g: (tile_batch(g, t),))


def relu(a) -> Tensor:
    """max(x, 0); the subgradient at exactly 0 is taken to be 0."""
    a = _lift(a)
    mask = Tensor((a.data > 0.0).astype(np.float64))
    return _emit(np.maximum(a.data, 0.0), (a,), lambda g: (mul(g, mask),))


def reduce_sum(a, axis=None) -> Tensor:
    """Sum over everything (axis=None) or over rows (axis=0).

    Summing an empty slice follows the additive identity: the result is 0.
    """
    a = _lift(a)
    if axis is None:
        return _emit(np.asarray(a.data.sum()), (a,),
                     lambda g: (mul(g, Tensor(np.ones_like(a.data))),))
    if axis != 0 or a.data.ndim != 2:
        raise ValueError("axis reduction is only supported along axis 0 of a 2-D tensor")
    n = a.data.shape[0]
    return _emit(a.data.sum(axis=0), (a,), lambda g: (broadcast_rows(g, n),))


def reduce_mean(a) -> Tensor:
    a = _lift(a)
    if a.data.size == 0:
        raise ValueError("mean of an empty tensor is undefined")
    return mul(reduce_sum(a), 1.0 / a.data.size)


def broadcast_rows(v, n: int) -> Tensor:
    """Tile a 1-D tensor into n identical rows; adjoint is a column sum."""
    v = _lift(v)
    if v.data.ndim != 1:
        raise ValueError("broadcast_rows expects a 1-D tensor")
    return _emit(np.broadcast_to(v.data, (n, v.data.shape[0])).copy(), (v,),
                 lambda g: (reduce_sum(g, axis=0),))


def concat_cols(a, b) -> Tensor:
    """Concatenate two 2-D tensors along columns."""
    a, b = _lift(a), _lift(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[0] != b.data.shape[0]:
        raise ValueError(f"concat_cols needs matching row counts, got {a.data.shape}, {b.data.shape}")
    p = a.data.shape[1]
    return _emit(np.concatenate([a.data, b.data], axis=1), (a, b),
                 lambda g: (slice_cols(g, 0, p), slice_cols(g, p, p + b.data.shape[1])))


def slice_cols(a, start: int, stop: int) -> Tensor:
    a = _lift(a)
    if a.data.ndim != 2:
        raise ValueError("slice_cols expects a 2-D tensor")
    cols = a.data.shape[1]

    def vjp(g):
        left = Tensor(np.zeros((a.data.shape[0], start)))
        right = Tensor(np.zeros((a.data.shape[0], cols - stop)))
        out = concat_cols(left, g) if start else g
        return (concat_cols(out, right) if stop != cols else out,)

    return _emit(a.data[:, start:stop].copy(), (a,), vjp)


# -- spec-facing dispatchers -------------------------------------------------

_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul}
_REDUCE = {"sum": reduce_sum, "mean": reduce_mean}


def elementwise(op: str, a, b) -> Tensor:
    try:
        return _ELEMENTWISE[op](a, b)
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}; have {sorted(_ELEMENTWISE)}") from None


def reduce(op: str, a, axis=None) -> Tensor:
    if op == "mean" and axis is not None:
        raise ValueError("mean reduction is whole-tensor only")
    try:
        fn = _REDUCE[op]
    except KeyError:
        raise ValueError(f"unknown reduction {op!r}; have {sorted(_REDUCE)}") from None
    return fn(a, axis) if op == "sum" else fn(a)


# -- backward ----------------------------------------------------------------

def backward(output: Tensor, wrt, create_graph: bool = False):
    """Gradients of a scalar ``output`` with respect to each tensor in ``wrt``.

    One reverse sweep over the ancestors of ``output`` (a heap keeps the
    visit order descending, so each node is finalized only after every
    consumer has contributed — and nodes off the path are never touched).
    With ``create_graph=True`` the adjoint arithmetic is itself taped, so the
    returned gradients can be differentiated again; otherwise taping is
    suspended for the sweep and the results are constants.

    ``wrt`` may contain any tensor on the tape, leaf or intermediate: the
    gradient of an intermediate is its fully accumulated adjoint, holding it
    fixed as an independent variable (what multi-step unrolled updates
    differentiate through).  Gradients are accumulated functionally (nothing
    on the tape is mutated), so repeated backward calls over one tape are
    independent.  A ``wrt`` entry that does not influence ``output`` gets a
    zero gradient.
    """
    global _TAPING
    if output.data.size != 1:
        raise ValueError(f"backward needs a scalar output, got shape {output.data.shape}")
    if output.tape is None:
        raise ValueError("output is not on a tape (it is a constant)")
    tape = output.tape
    wrt = list(wrt)
    for t in wrt:
        if t.tape is not tape:
            raise ValueError("a wrt tensor is not on the output's tape")

    nodes = tape.nodes
    wanted = {t.idx for t in wrt}
    grads: dict[int, Tensor] = {output.idx: Tensor(np.ones_like(output.data))}
    captured: dict[int, Tensor] = {}
    heap = [-output.idx]

    prev = _TAPING
    _TAPING = bool(create_graph)
    try:
        while heap:
            i = -heapq.heappop(heap)
            g = grads.pop(i, None)
            if g is None:
                continue
            if i in wanted:
                captured[i] = g
            parents, vjp = nodes[i]
            if vjp is None:       # leaf: nothing upstream
                continue
            for p, pg in zip(parents, vjp(g)):
                if p.tape is None or pg is None:
                    continue
                held = grads.get(p.idx)
                if held is None:
                    heapq.heappush(heap, -p.idx)
                    grads[p.idx] = pg
                elif create_graph:
                    grads[p.idx] = add(held, pg)
                else:  # constants: accumulate without dispatch overhead
                    grads[p.idx] = Tensor(held.data + pg.data)
    finally:
        _TAPING = prev

    out = []
    for t in wrt:
        g = captured.get(t.idx)
        out.append(Tensor(np.zeros_like(t.data)) if g is None else g)
    return out


# -- numerical oracle ---------------------------------------------------------

def finite_diff(f, arrays, eps: float = 1e-6):
    """Central-difference gradient of ``f(arrays) -> float``.

    The test oracle for backward: O(eps^2) accurate and completely
    independent of the tape machinery.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    grads = []
    for k, a in enumerate(arrays):
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f(arrays)
            flat[i] = orig - eps
            lo = f(arrays)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * eps)
        grads.append(g)
    return grads
