"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every trainable component in the toolkit is built from the primitives in
this module. Ops compute eagerly on numpy arrays; when a ``GradientTape``
is active, each primitive appends a record (output, inputs, backward
closure) to the tape. Records are appended in execution order, which is a
topological order of the computation, so ``backward`` replays them in
reverse to accumulate gradients into the leaves.

Design constraints:
  - float64 only; desk-scale problems, so no fusion or GPU paths;
  - gradients accumulate additively when a tensor feeds several ops;
  - scatter/segment reductions over an empty bucket produce zeros.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "GradientTape",
    "backward",
    "add", "sub", "neg", "mul", "div", "power", "matmul", "transpose",
    "reshape", "exp", "log", "sqrt", "relu", "leaky_relu", "sigmoid",
    "softplus", "clip", "minimum", "maximum", "tsum", "tmean",
    "gather_rows", "take_cols", "take_per_row", "segment_sum",
    "segment_mean", "segment_max", "concat_rows", "tile_rows",
    "softmax_rows", "masked_softmax_rows", "cross_entropy_rows",
]


class Tensor:
    """A dense float64 array plus gradient metadata.

    ``requires_grad`` marks trainable leaves. Outputs of primitives set it
    automatically when any input requires grad. ``grad`` is populated by
    ``backward`` for watched leaves.
    """

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """A view of the same values that blocks gradient flow."""
        return Tensor(self.data, requires_grad=False)

    def copy(self) -> "Tensor":
        t = Tensor(self.data.copy(), requires_grad=self.requires_grad, name=self.name)
        return t

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar; constants are wrapped as non-grad tensors
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


class _Record:
    __slots__ = ("out", "inputs", "backward_fn")

    def __init__(self, out, inputs, backward_fn):
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn


_TAPE_STACK: list["GradientTape"] = []


class GradientTape:
    """Ordered record of primitive ops, enabling one reverse sweep.

    Use as a context manager around the forward computation::

        with GradientTape() as tape:
            loss = model_loss(...)
        grads = backward(tape, loss)

    The tape only records ops whose output requires grad, so constant
    subgraphs cost nothing. One tape is owned by one training loop; tensors
    may be read concurrently but never mutated while taped.
    """

    def __init__(self):
        self.records: list[_Record] = []
        self._watched: dict[int, Tensor] = {}
        self._produced: set[int] = set()

    def __enter__(self) -> "GradientTape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self

    def _add(self, record: _Record) -> None:
        self.records.append(record)
        self._produced.add(id(record.out))
        for t in record.inputs:
            if t.requires_grad and id(t) not in self._produced:
                self._watched[id(t)] = t

    def watch(self, tensor: Tensor) -> None:
        """Register a leaf so backward reports it even if unused."""
        self._watched[id(tensor)] = tensor

    def leaves(self) -> list[Tensor]:
        return [t for i, t in self._watched.items() if i not in self._produced]


def _active_tape() -> GradientTape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _emit(out_data, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(out_data)
    out.requires_grad = any(t.requires_grad for t in inputs)
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        tape._add(_Record(out, inputs, backward_fn))
    return out


def backward(tape: GradientTape, loss: Tensor, leaves=None):
    """Reverse sweep over the tape, returning a leaf -> gradient dict.

    ``loss`` must be scalar (size 1). Every requires-grad leaf seen by the
    tape receives dLoss/dLeaf in its ``.grad`` field and in the returned
    map; leaves passed explicitly but untouched by the computation map to
    zeros.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for rec in reversed(tape.records):
        g_out = grads.pop(id(rec.out), None)
        if g_out is None:
            continue
        for t, g in zip(rec.inputs, rec.backward_fn(g_out)):
            if g is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = np.asarray(g, dtype=np.float64)

    result: dict[Tensor, np.ndarray] = {}
    targets = list(tape.leaves())
    if leaves is not None:
        known = {id(t) for t in targets}
        targets.extend(t for t in leaves if id(t) not in known)
    for t in targets:
        g = grads.get(id(t))
        if g is None:
            g = np.zeros_like(t.data)
        else:
            g = np.broadcast_to(g, t.data.shape).astype(np.float64, copy=True) \
                if g.shape != t.data.shape else g
        t.grad = g
        result[t] = g
    return result


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise primitives (broadcasting, gradients unbroadcast back)
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _emit(a.data + b.data, (a, b), lambda g: (
        _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _emit(a.data - b.data, (a, b), lambda g: (
        _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def neg(a: Tensor) -> Tensor:
    return _emit(-a.data, (a,), lambda g: (-g,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _emit(a.data * b.data, (a, b), lambda g: (
        _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _emit(a.data / b.data, (a, b), lambda g: (
        _unbroadcast(g / b.data, a.shape),
        _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def power(a: Tensor, p: float) -> Tensor:
    p = float(p)
    out = a.data ** p
    if p == 0.0:
        return _emit(out, (a,), lambda g: (np.zeros_like(a.data),))
    return _emit(out, (a,), lambda g: (g * p * a.data ** (p - 1.0),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _emit(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _emit(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _emit(out, (a,), lambda g: (g * 0.5 / out,))


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)
    return _emit(out, (a,), lambda g: (g * (a.data > 0.0),))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    out = np.where(a.data > 0.0, a.data, slope * a.data)
    return _emit(out, (a,), lambda g: (g * np.where(a.data > 0.0, 1.0, slope),))


def sigmoid_values(x: np.ndarray) -> np.ndarray:
    """Overflow-safe logistic on raw arrays (no tape involvement)."""
    pos = x >= 0.0
    e = np.exp(np.where(pos, -x, x))
    return np.where(pos, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a: Tensor) -> Tensor:
    out = sigmoid_values(a.data)
    return _emit(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a: Tensor) -> Tensor:
    out = np.logaddexp(0.0, a.data)
    return _emit(out, (a,), lambda g: (g * sigmoid_values(a.data),))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    out = np.clip(a.data, lo, hi)
    inside = (a.data > lo) & (a.data < hi)
    return _emit(out, (a,), lambda g: (g * inside,))


def minimum(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    a_wins = a.data <= b.data  # ties route to the first argument
    return _emit(np.where(a_wins, a.data, b.data), (a, b), lambda g: (
        _unbroadcast(g * a_wins, a.shape), _unbroadcast(g * ~a_wins, b.shape)))


def maximum(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    a_wins = a.data >= b.data
    return _emit(np.where(a_wins, a.data, b.data), (a, b), lambda g: (
        _unbroadcast(g * a_wins, a.shape), _unbroadcast(g * ~a_wins, b.shape)))


# ---------------------------------------------------------------------------
# linear algebra and shape primitives
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return _emit(a.data @ b.data, (a, b), lambda g: (
        g @ b.data.T, a.data.T @ g))


def transpose(a: Tensor) -> Tensor:
    return _emit(a.data.T, (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _emit(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _emit(out, (a,), back)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.size if axis is None else a.shape[axis]

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy() / count,)

    return _emit(out, (a,), back)


# ---------------------------------------------------------------------------
# indexed primitives for graph aggregation
# ---------------------------------------------------------------------------

def gather_rows(a: Tensor, idx) -> Tensor:
    """Select rows ``a[idx]``; backward scatter-adds into the source."""
    idx = np.asarray(idx, dtype=np.intp)

    def back(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return _emit(a.data[idx], (a,), back)


def take_cols(a: Tensor, cols) -> Tensor:
    """Select columns ``a[:, cols]`` of a 2-D tensor."""
    cols = np.asarray(cols, dtype=np.intp).reshape(-1)

    def back(g):
        out = np.zeros_like(a.data)
        np.add.at(out.T, cols, g.T)
        return (out,)

    return _emit(a.data[:, cols], (a,), back)


def take_per_row(a: Tensor, cols) -> Tensor:
    """Pick one column per row: out[i] = a[i, cols[i]]."""
    cols = np.asarray(cols, dtype=np.intp)
    rows = np.arange(a.shape[0])

    def back(g):
        out = np.zeros_like(a.data)
        out[rows, cols] = g
        return (out,)

    return _emit(a.data[rows, cols], (a,), back)


def segment_sum(a: Tensor, seg, num_segments: int) -> Tensor:
    """Sum rows sharing a segment id; empty segments yield zero rows."""
    seg = np.asarray(seg, dtype=np.intp)
    out = np.zeros((num_segments,) + a.shape[1:], dtype=np.float64)
    np.add.at(out, seg, a.data)
    return _emit(out, (a,), lambda g: (g[seg],))


def segment_mean(a: Tensor, seg, num_segments: int) -> Tensor:
    """Mean of rows per segment id; empty segments yield zero rows."""
    seg = np.asarray(seg, dtype=np.intp)
    counts = np.bincount(seg, minlength=num_segments).astype(np.float64)
    safe = np.maximum(counts, 1.0)
    out = np.zeros((num_segments,) + a.shape[1:], dtype=np.float64)
    np.add.at(out, seg, a.data)
    out /= safe.reshape((-1,) + (1,) * (a.ndim - 1))

    def back(g):
        scale = safe.reshape((-1,) + (1,) * (a.ndim - 1))
        return ((g / scale)[seg],)

    return _emit(out, (a,), back)


def segment_max(a: Tensor, seg, num_segments: int) -> Tensor:
    """Per-segment column-wise max; empty segments yield zero rows.

    Gradient routes to the first row attaining the max in each segment
    (deterministic tie-break by row index).
    """
    seg = np.asarray(seg, dtype=np.intp)
    n, width = a.shape[0], int(np.prod(a.shape[1:], dtype=np.intp)) if a.ndim > 1 else 1
    flat = a.data.reshape(n, -1)
    out = np.full((num_segments, flat.shape[1]), -np.inf)
    np.maximum.at(out, seg, flat)
    empty = ~np.isin(np.arange(num_segments), seg)
    out[empty] = 0.0

    # first row index achieving the max, per (segment, column)
    winner = np.full((num_segments, flat.shape[1]), n, dtype=np.intp)
    hit_r, hit_c = np.nonzero(flat == out[seg])
    np.minimum.at(winner, (seg[hit_r], hit_c), hit_r)

    def back(g):
        g2 = g.reshape(num_segments, -1)
        grad = np.zeros_like(flat)
        seg_ids, col_ids = np.nonzero(winner < n)
        grad[winner[seg_ids, col_ids], col_ids] += g2[seg_ids, col_ids]
        return (grad.reshape(a.shape),)

    return _emit(out.reshape((num_segments,) + a.shape[1:]), (a,), back)


def concat_rows(tensors) -> Tensor:
    """Stack 2-D tensors along axis 0; backward splits the gradient."""
    tensors = [t if isinstance(t, Tensor) else _as_tensor(t) for t in tensors]
    sizes = [t.shape[0] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=0))

    return _emit(np.concatenate([t.data for t in tensors], axis=0), tuple(tensors), back)


def tile_rows(a: Tensor, reps: int) -> Tensor:
    """Repeat a (1, D) row ``reps`` times; backward sums over copies."""
    if a.ndim != 2 or a.shape[0] != 1:
        raise ValueError(f"tile_rows expects shape (1, D), got {a.shape}")
    return _emit(np.repeat(a.data, reps, axis=0), (a,),
                 lambda g: (g.sum(axis=0, keepdims=True),))


# ---------------------------------------------------------------------------
# composed row-wise softmax family
# ---------------------------------------------------------------------------

_MASK_OFF = -1e30  # large enough that exp underflows to exactly 0.0


def softmax_rows(logits: Tensor) -> Tensor:
    """Row-wise softmax; the max subtraction is treated as a constant."""
    shift = logits - Tensor(logits.data.max(axis=-1, keepdims=True))
    e = exp(shift)
    return div(e, tsum(e, axis=-1, keepdims=True))


def masked_softmax_rows(logits: Tensor, mask: np.ndarray) -> Tensor:
    """Row-wise softmax restricted to positions where ``mask`` is true.

    Masked positions get weight exactly 0.0 (the additive constant pushes
    them past float64 exp underflow), so they contribute nothing forward or
    backward. Every row must keep at least one admitted position.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=-1).all():
        raise ValueError("masked_softmax_rows: some row admits no position")
    shifted = add(logits, Tensor(np.where(mask, 0.0, _MASK_OFF)))
    rowmax = np.where(mask, shifted.data, -np.inf).max(axis=-1, keepdims=True)
    e = exp(shifted - Tensor(rowmax))
    return div(e, tsum(e, axis=-1, keepdims=True))


def cross_entropy_rows(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer labels under row softmax."""
    labels = np.asarray(labels, dtype=np.intp)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match {n} rows")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError("label index out of range")
    shift = logits - Tensor(logits.data.max(axis=1, keepdims=True))
    lse = log(tsum(exp(shift), axis=1))
    return tmean(lse - take_per_row(shift, labels))
