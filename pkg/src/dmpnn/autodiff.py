"""Reverse-mode automatic differentiation over dense float64 arrays.

Every op builds a new :class:`Tensor` holding its numpy value, its parent
tensors and a closure that maps the output gradient onto the parents.
Graphs are built by running ordinary Python code (define-by-run), which is
what lets the message-passing topology change from one sample to the next.

Row-indexed primitives (``gather``, ``segment_sum``, ``segment_min``) exist so
that a whole mini-batch of differently shaped networks can be evaluated as a
single disjoint-union graph.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

DTYPE = np.float64
EXTENDED = np.longdouble

# Branch decisions of piecewise ops (ReLU masks, clip masks, argmins), logged
# only while grad_check evaluates, so it can tell when a finite-difference
# step straddles a kink.
_branch_log: list | None = None


def _record_branch(choice) -> None:
    if _branch_log is not None:
        _branch_log.append(np.array(choice))


class ShapeError(ValueError):
    """Raised when a primitive receives operands of incompatible shapes."""

    def __init__(self, op: str, msg: str):
        super().__init__(f"{op}: {msg}")
        self.op = op


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _backward: Callable | None = None, op: str = "leaf"):
        data = np.asarray(data)
        # extended precision passes through untouched: grad_check evaluates
        # its reference differences in it
        self.data = data if data.dtype == EXTENDED else data.astype(DTYPE, copy=False)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(op={self.op}, shape={self.shape})"

    # operator sugar; everything routes through the module-level primitives
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self, seed=None) -> None:
        backward(self, seed)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, _parents=tuple(parents) if needs else (),
                  _backward=backward_fn if needs else None, op=op)


def _accum(t: Tensor, g: np.ndarray) -> None:
    # never mutates in place: the same array may be handed to several parents
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


# ---------------------------------------------------------------- arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError("add", f"operand shapes {a.shape} and {b.shape} differ")

    def bw(g):
        _accum(a, g)
        _accum(b, g)

    return _result(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError("sub", f"operand shapes {a.shape} and {b.shape} differ")

    def bw(g):
        _accum(a, g)
        _accum(b, -g)

    return _result(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    """Elementwise product of equally shaped tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError("mul", f"operand shapes {a.shape} and {b.shape} differ")

    def bw(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _result(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    """Elementwise quotient; the divisor must be nonzero everywhere."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError("div", f"operand shapes {a.shape} and {b.shape} differ")
    if np.any(b.data == 0):
        raise ValueError("div: zero divisor")
    out = a.data / b.data

    def bw(g):
        _accum(a, g / b.data)
        _accum(b, -g * out / b.data)

    return _result(out, (a, b), bw, "div")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def bw(g):
        _accum(a, g * c)

    return _result(a.data * c, (a,), bw, "scale")


def add_scalar(a: Tensor, c: float) -> Tensor:
    def bw(g):
        _accum(a, g)

    return _result(a.data + float(c), (a,), bw, "add_scalar")


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a bias vector to every row of ``x`` (the only broadcast allowed)."""
    if b.data.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError("add_bias", f"bias {b.shape} does not match trailing dim of {x.shape}")

    def bw(g):
        _accum(x, g)
        _accum(b, g if g.ndim == 1 else g.sum(axis=0))

    return _result(x.data + b.data, (x, b), bw, "add_bias")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2):
        raise ShapeError("matmul", f"only 1-D/2-D operands supported, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError("matmul", f"inner dimensions differ: {a.shape} @ {b.shape}")

    def bw(g):
        ad, bd = a.data, b.data
        if a.requires_grad:
            if bd.ndim == 1:
                ga = np.outer(g, bd) if ad.ndim == 2 else g * bd
            else:
                ga = g @ bd.T
            _accum(a, ga)
        if b.requires_grad:
            if ad.ndim == 1:
                gb = np.outer(ad, g) if bd.ndim == 2 else g * ad
            else:
                gb = ad.T @ g
            _accum(b, gb)

    return _result(a.data @ b.data, (a, b), bw, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError("transpose", f"expected 2-D operand, got {a.shape}")

    def bw(g):
        _accum(a, g.T)

    return _result(a.data.T, (a,), bw, "transpose")


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` stored out x in.

    Fused matmul + bias-add: one tape node instead of three.
    """
    if weight.data.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError("linear", f"input {x.shape} does not match weight {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise ShapeError("linear", f"bias {bias.shape} does not match weight {weight.shape}")
    out = x.data @ weight.data.T
    out += bias.data

    def bw(g):
        if x.requires_grad:
            _accum(x, g @ weight.data)
        if weight.requires_grad:
            _accum(weight, np.outer(g, x.data) if g.ndim == 1 else g.T @ x.data)
        if bias.requires_grad:
            _accum(bias, g if g.ndim == 1 else g.sum(axis=0))

    return _result(out, (x, weight, bias), bw, "linear")


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat", "nothing to concatenate")
    nd = parts[0].data.ndim
    ax = axis % nd
    for p in parts[1:]:
        if p.data.ndim != nd or any(p.shape[k] != parts[0].shape[k] for k in range(nd) if k != ax):
            raise ShapeError("concat", f"incompatible shapes {[q.shape for q in parts]} on axis {axis}")
    sizes = [p.shape[ax] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            if p.requires_grad:
                idx = [slice(None)] * nd
                idx[ax] = slice(lo, hi)
                _accum(p, g[tuple(idx)])

    return _result(np.concatenate([p.data for p in parts], axis=ax), parts, bw, "concat")


# ---------------------------------------------------------------- elementwise

def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)
    _record_branch(a.data > 0)

    def bw(g):
        _accum(a, g * (out > 0))

    return _result(out, (a,), bw, "relu")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return expit(z)  # overflow-safe logistic


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)

    def bw(g):
        _accum(a, g * y * (1.0 - y))

    return _result(y, (a,), bw, "sigmoid")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def bw(g):
        _accum(a, g * (1.0 - y * y))

    return _result(y, (a,), bw, "tanh")


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise ValueError("log: non-positive argument")

    def bw(g):
        _accum(a, g / a.data)

    return _result(np.log(a.data), (a,), bw, "log")


def log1p(a: Tensor) -> Tensor:
    """``ln(1 + a)``, accurate for small ``a``."""
    if np.any(a.data <= -1):
        raise ValueError("log1p: argument <= -1")

    def bw(g):
        _accum(a, g / (1.0 + a.data))

    return _result(np.log1p(a.data), (a,), bw, "log1p")


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes only where the value was inside."""
    inside = (a.data >= lo) & (a.data <= hi)
    _record_branch(inside)

    def bw(g):
        _accum(a, g * inside)

    return _result(np.clip(a.data, lo, hi), (a,), bw, "clip")


# ---------------------------------------------------------------- reductions

def sum(a: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy
    def bw(g):
        if axis is None:
            _accum(a, np.full(a.shape, g, dtype=DTYPE))
        else:
            _accum(a, np.broadcast_to(np.expand_dims(g, axis), a.shape))

    return _result(np.sum(a.data, axis=axis), (a,), bw, "sum")


def min_reduce(a: Tensor) -> Tensor:
    """Minimum of a 1-D tensor; the subgradient goes to the first argmin."""
    if a.data.ndim != 1:
        raise ShapeError("min_reduce", f"expected 1-D operand, got {a.shape}")
    if a.shape[0] == 0:
        raise ShapeError("min_reduce", "empty operand has no minimum")
    k = int(np.argmin(a.data))
    _record_branch(k)

    def bw(g):
        ga = np.zeros(a.shape)
        ga[k] = g
        _accum(a, ga)

    return _result(a.data[k], (a,), bw, "min_reduce")


class Segments:
    """Assignment of rows to ``n`` output segments, cached as a sparse operator.

    Rows assigned to the same segment are summed in ascending row order, so
    callers control the reduction order by how they order the rows.
    """

    def __init__(self, ids: Iterable[int], n: int):
        self.ids = np.asarray(ids, dtype=np.int64)
        self.n = int(n)
        if self.ids.size and (self.ids.min() < 0 or self.ids.max() >= self.n):
            raise ValueError("segment id out of range")
        e = self.ids.size
        self.matrix = sp.csr_matrix(
            (np.ones(e), (self.ids, np.arange(e))), shape=(self.n, e))
        self.matrix.sort_indices()

    def __len__(self) -> int:
        return self.ids.size


def segment_sum(x: Tensor, seg: Segments) -> Tensor:
    """Sum rows of ``x`` into ``seg.n`` rows; empty segments yield zeros."""
    if x.shape[0] != len(seg):
        raise ShapeError("segment_sum", f"{x.shape[0]} rows but {len(seg)} segment ids")
    if len(seg) == 0:
        out = np.zeros((seg.n,) + x.shape[1:], dtype=x.data.dtype)
    else:
        out = np.asarray(seg.matrix @ x.data)

    def bw(g):
        _accum(x, g[seg.ids])

    return _result(out, (x,), bw, "segment_sum")


def segment_min(x: Tensor, seg: Segments) -> Tensor:
    """Per-segment minimum of the rows of a 1-column or 1-D tensor.

    The subgradient is routed to the first row attaining the minimum.
    """
    flat = x.data.reshape(len(seg), -1)
    if flat.shape[1] != 1:
        raise ShapeError("segment_min", f"expected one column, got {x.shape}")
    vals = flat[:, 0]
    order = np.lexsort((np.arange(vals.size), vals, seg.ids))
    counts = np.bincount(seg.ids, minlength=seg.n)
    if np.any(counts == 0):
        raise ShapeError("segment_min", "empty segment has no minimum")
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    winners = order[starts]
    _record_branch(winners)
    out = vals[winners].reshape((seg.n,) + x.shape[1:])

    def bw(g):
        ga = np.zeros(vals.size)
        ga[winners] = g.reshape(-1)
        _accum(x, ga.reshape(x.shape))

    return _result(out, (x,), bw, "segment_min")


def gather(x: Tensor, idx) -> Tensor:
    """Rows ``x[idx]``; an index of -1 yields a zero row."""
    idx = np.asarray(idx, dtype=np.int64)
    valid = idx >= 0
    if idx.size and idx.max(initial=-1) >= x.shape[0]:
        raise ShapeError("gather", f"index {idx.max()} out of range for {x.shape[0]} rows")
    if np.all(valid):
        out = x.data[idx]
    else:
        out = np.zeros((idx.size,) + x.shape[1:], dtype=x.data.dtype)
        out[valid] = x.data[idx[valid]]

    def bw(g):
        gx = np.zeros(x.shape)
        np.add.at(gx, idx[valid], g[valid])
        _accum(x, gx)

    return _result(out, (x,), bw, "gather")


# ---------------------------------------------------------------- backward

def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor, seed=None) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every leaf requiring grad.

    Intermediate gradients are released once consumed; each node's closure
    runs exactly once, in reverse topological order.
    """
    if seed is None:
        if root.data.size != 1:
            raise ShapeError("backward", f"seed required for non-scalar output {root.shape}")
        seed = np.ones(root.shape)
    seed = np.array(seed, dtype=DTYPE)  # leaf grads may alias it
    if seed.shape != root.shape:
        raise ShapeError("backward", f"seed shape {seed.shape} != output shape {root.shape}")
    if not root.requires_grad:
        return
    order = _topological(root)
    root.grad = seed.copy() if root.grad is None else root.grad + seed
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        node._backward(node.grad)
        node.grad = None  # interior node: free memory, leaves keep theirs


class CompGraph:
    """A reusable computation: ``fn`` maps named input tensors to one output.

    ``forward`` rebuilds the graph from fresh leaves each call; ``backward``
    then returns gradients for every input bound with ``requires_grad``.
    """

    def __init__(self, fn: Callable[..., Tensor]):
        self.fn = fn
        self._inputs: dict[str, Tensor] | None = None
        self._output: Tensor | None = None

    def forward(self, inputs: Mapping[str, np.ndarray | Tensor], wrt: Iterable[str] | None = None) -> Tensor:
        wrt = set(inputs) if wrt is None else set(wrt)
        leaves = {}
        for k, v in inputs.items():
            arr = v.data if isinstance(v, Tensor) else v
            leaves[k] = Tensor(np.array(arr, dtype=DTYPE), requires_grad=k in wrt, name=k)
        self._inputs = leaves
        self._output = self.fn(**leaves)
        return self._output

    def backward(self, seed=None) -> dict[str, np.ndarray]:
        if self._output is None:
            raise RuntimeError("backward called before forward")
        backward(self._output, seed)
        out = {}
        for k, leaf in self._inputs.items():
            if leaf.requires_grad:
                out[k] = leaf.grad if leaf.grad is not None else np.zeros(leaf.shape)
        self._output = None  # graph consumed
        return out


def _branches_equal(a: list, b: list) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def grad_check(fn: Callable[..., Tensor], inputs: Mapping[str, np.ndarray], h: float = 1e-6,
               n_coords: int = 100, wrt: Iterable[str] | None = None,
               rng: np.random.Generator | int | None = 0) -> float:
    """Max relative error between backprop and central differences,
    ``|a - n| / max(1e-12, |a| + |n|)`` over ``n_coords`` sampled coordinates.

    ``fn`` must return a scalar tensor.  Coordinates are drawn uniformly over
    all entries of the inputs named in ``wrt``.

    The reference differences are evaluated in extended precision: in
    float64 the roundoff of an O(10) objective divided by ``h`` already
    exceeds 1e-5 of the smaller gradient entries of a deep unrolled model.
    A coordinate whose +-h evaluations take a different branch of any
    piecewise op (ReLU, clip, min) than the base point straddles a kink,
    where the difference quotient is not a derivative; it is replaced by a
    fresh draw.
    """
    return grad_check_report(fn, inputs, h, n_coords, wrt, rng)[0]


def grad_check_report(fn, inputs, h=1e-6, n_coords=100, wrt=None, rng=0) -> tuple[float, int]:
    """``(max relative error, number of kink-straddling draws replaced)``."""
    global _branch_log
    if h <= 0:
        raise ValueError("h must be positive")
    rng = np.random.default_rng(rng)
    names = list(inputs) if wrt is None else list(wrt)
    graph = CompGraph(fn)
    graph.forward(inputs, wrt=names)
    analytic = graph.backward()

    ext = {k: np.array(v, dtype=EXTENDED) for k, v in inputs.items()}

    def evaluate():
        global _branch_log
        _branch_log = []
        try:
            value = fn(**{k: Tensor(v) for k, v in ext.items()}).data
            return EXTENDED(value.reshape(())), _branch_log
        finally:
            _branch_log = None

    _, base_branches = evaluate()
    sizes = np.array([ext[k].size for k in names])
    total = int(sizes.sum())
    bounds = np.cumsum(sizes)
    pool = list(rng.permutation(total)) if n_coords <= total else []
    worst, checked, skipped = 0.0, 0, 0
    while checked < n_coords:
        if skipped > 10 * n_coords:
            raise RuntimeError("grad_check: almost every coordinate straddles a kink")
        flat = int(pool.pop()) if pool else int(rng.integers(total))
        which = int(np.searchsorted(bounds, flat, side="right"))
        name = names[which]
        local = flat - (int(bounds[which - 1]) if which else 0)
        arr = ext[name]
        base = arr.flat[local]
        arr.flat[local] = base + EXTENDED(h)
        fp, bp = evaluate()
        arr.flat[local] = base - EXTENDED(h)
        fm, bm = evaluate()
        arr.flat[local] = base
        if not (_branches_equal(bp, base_branches) and _branches_equal(bm, base_branches)):
            skipped += 1
            continue
        num = float((fp - fm) / (2 * EXTENDED(h)))
        ana = float(analytic[name].flat[local])
        worst = max(worst, abs(ana - num) / max(1e-12, abs(ana) + abs(num)))
        checked += 1
    return worst, skipped
