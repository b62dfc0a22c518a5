"""Dense reverse-mode automatic differentiation on float64 numpy arrays.

A small tape-based engine: each operation records its parents and a
vector-Jacobian closure, and ``Tensor.backward`` replays the tape in
reverse topological order. The op set covers exactly what the graph
models need: affine maps, pointwise nonlinearities, reductions with a
deterministic tie-break, classification losses, and structural ops
(concatenation, gathering, segment aggregation, sparse propagation).

Everything runs in 64-bit precision. Problems at this scale are small,
and exact gradient verification matters more than speed. Broadcasting
is deliberately restricted: a trailing bias vector, a scalar, and one
documented pair-mask pattern (see :func:`hadamard`). Anything else is
a shape error, which catches wiring bugs in the attention plumbing.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not line up for the requested operation."""


_debug_checks = False


def set_debug_checks(enabled: bool) -> None:
    """Toggle NaN/Inf screening of every op result (slow; meant for tests)."""
    global _debug_checks
    _debug_checks = bool(enabled)


class Tensor:
    """A float64 ndarray with an optional gradient and tape linkage.

    ``grad`` is populated by :meth:`backward` and accumulates across
    calls until cleared with :func:`zero_grad`; it always matches
    ``data`` in shape when present.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # -- arithmetic sugar ------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(neg(self), other)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def reshape(self, shape):
        return reshape(self, shape)

    def sum(self, axis=None):
        return reduce(self, "sum", axis)

    def mean(self, axis=None):
        return reduce(self, "mean", axis)

    def max(self, axis=None):
        return reduce(self, "max", axis)

    # -- reverse pass ----------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(tensor) into ``grad`` for every tensor
        on the tape that requires gradients. ``self`` must be scalar."""
        if self.data.ndim != 0:
            raise ShapeError(
                f"backward needs a scalar loss, got shape {self.data.shape}"
            )
        if not self.requires_grad:
            return
        order = _topo_order(self)
        pending = {id(self): np.ones((), dtype=np.float64)}
        for t in order:
            g = pending.pop(id(t), None)
            if g is None:
                continue
            t.grad = np.array(g, copy=True) if t.grad is None else t.grad + g
            if t._vjp is None:
                continue
            for parent, pg in zip(t._parents, t._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                prev = pending.get(key)
                pending[key] = pg if prev is None else prev + pg


def _topo_order(root: Tensor):
    """Tape order with the root first; visits only gradient-requiring nodes."""
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    order.reverse()
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def zero_grad(tensors) -> None:
    for t in tensors:
        t.grad = None


def _make(data: np.ndarray, parents: tuple, vjp) -> Tensor:
    if _debug_checks and not np.all(np.isfinite(data)):
        raise FloatingPointError("operation produced non-finite values")
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


# -- pointwise and affine ------------------------------------------------


def add(a, b) -> Tensor:
    """Elementwise sum. Besides equal shapes, two forms are allowed:
    a scalar operand, and a trailing bias vector added to every row."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape == b.data.shape:
        return _make(a.data + b.data, (a, b), lambda g: (g, g))
    if b.data.ndim == 0:
        return _make(a.data + b.data, (a, b), lambda g: (g, g.sum()))
    if a.data.ndim == 0:
        return _make(a.data + b.data, (a, b), lambda g: (g.sum(), g))
    if (
        b.data.ndim == 1
        and a.data.ndim >= 2
        and a.data.shape[-1] == b.data.shape[0]
    ):
        axes = tuple(range(a.data.ndim - 1))
        return _make(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=axes)))
    raise ShapeError(f"cannot add shapes {a.data.shape} and {b.data.shape}")


def neg(x: Tensor) -> Tensor:
    x = as_tensor(x)
    return _make(-x.data, (x,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    """Hadamard product of equal-shape tensors, or scaling by a scalar."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.data.shape == b.data.shape:
        return _make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))
    if b.data.ndim == 0:
        return _make(a.data * b.data, (a, b), lambda g: (g * b.data, (g * a.data).sum()))
    if a.data.ndim == 0:
        return _make(a.data * b.data, (a, b), lambda g: ((g * b.data).sum(), g * a.data))
    raise ShapeError(f"cannot multiply shapes {a.data.shape} and {b.data.shape}")


def hadamard(a: Tensor, b: Tensor, mask_axis: int | None = None) -> Tensor:
    """Hadamard product, plus the one sanctioned broadcast: an (m, C)
    mask applied across one pair axis of an (m, m, C) tensor.

    ``mask_axis=0`` indexes the mask by the first pair axis
    (out[i, j, c] = a[i, j, c] * b[i, c]); ``mask_axis=1`` by the second.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape == b.data.shape:
        return mul(a, b)
    if (
        a.data.ndim == 3
        and b.data.ndim == 2
        and a.data.shape[0] == a.data.shape[1] == b.data.shape[0]
        and a.data.shape[2] == b.data.shape[1]
    ):
        axis = 0 if mask_axis is None else mask_axis
        if axis not in (0, 1):
            raise ValueError("mask_axis must be 0 or 1")
        expanded = b.data[:, None, :] if axis == 0 else b.data[None, :, :]
        reduce_axis = 1 - axis

        def vjp(g):
            return g * expanded, (g * a.data).sum(axis=reduce_axis)

        return _make(a.data * expanded, (a, b), vjp)
    raise ShapeError(
        f"hadamard needs equal shapes or an (m,m,C)x(m,C) pair mask, "
        f"got {a.data.shape} and {b.data.shape}"
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(
            f"matmul takes 2-D operands, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul inner dims disagree: {a.data.shape} x {b.data.shape}"
        )

    def vjp(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), vjp)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    # Stable in both tails: exp is only ever taken of a non-positive value.
    e = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


# -- structural ----------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    orig = x.data.shape
    data = x.data.reshape(shape)
    return _make(data, (x,), lambda g: (g.reshape(orig),))


def concat_last(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the last axis; all leading dims must agree."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != b.data.ndim or a.data.shape[:-1] != b.data.shape[:-1]:
        raise ShapeError(
            f"concat_last leading dims disagree: {a.data.shape} vs {b.data.shape}"
        )
    split = a.data.shape[-1]

    def vjp(g):
        return g[..., :split], g[..., split:]

    return _make(np.concatenate([a.data, b.data], axis=-1), (a, b), vjp)


def gather_rows(x: Tensor, indices) -> Tensor:
    """Select rows of a 2-D tensor; backward scatter-adds into place."""
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"gather_rows takes a 2-D tensor, got {x.data.shape}")
    idx = np.asarray(indices, dtype=np.int64)

    def vjp(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _make(x.data[idx], (x,), vjp)


def expand_pair_source(x: Tensor) -> Tensor:
    """Tile (m, C) node rows into an (m, m, C) tensor indexed by source:
    out[i, j] = x[i]."""
    x = as_tensor(x)
    m, c = x.data.shape
    data = np.broadcast_to(x.data[:, None, :], (m, m, c)).copy()
    return _make(data, (x,), lambda g: (g.sum(axis=1),))


def expand_pair_target(x: Tensor) -> Tensor:
    """Tile (m, C) node rows into an (m, m, C) tensor indexed by target:
    out[i, j] = x[j]."""
    x = as_tensor(x)
    m, c = x.data.shape
    data = np.broadcast_to(x.data[None, :, :], (m, m, c)).copy()
    return _make(data, (x,), lambda g: (g.sum(axis=0),))


# -- reductions ----------------------------------------------------------


def reduce(x: Tensor, mode: str, axis: int | None = None) -> Tensor:
    """Reduce with ``sum``, ``mean``, or ``max``.

    ``max`` routes its gradient to the first argmax (lowest index), so
    ties break deterministically. An empty reduction is an error except
    for ``sum``, which yields zero.
    """
    x = as_tensor(x)
    if axis is not None and not -x.data.ndim <= axis < x.data.ndim:
        raise ShapeError(f"axis {axis} out of range for shape {x.data.shape}")
    extent = x.data.size if axis is None else x.data.shape[axis]
    if extent == 0 and mode != "sum":
        raise ValueError(f"cannot take {mode} over an empty axis")

    if mode == "sum":
        def vjp(g):
            if axis is None:
                return (np.broadcast_to(g, x.data.shape).copy(),)
            return (np.broadcast_to(np.expand_dims(g, axis), x.data.shape).copy(),)
        return _make(x.data.sum(axis=axis), (x,), vjp)

    if mode == "mean":
        def vjp(g):
            if axis is None:
                return (np.broadcast_to(g / extent, x.data.shape).copy(),)
            return (
                np.broadcast_to(
                    np.expand_dims(g / extent, axis), x.data.shape
                ).copy(),
            )
        return _make(x.data.mean(axis=axis), (x,), vjp)

    if mode == "max":
        if axis is None:
            flat_idx = int(x.data.argmax())  # first maximum in row-major order

            def vjp(g):
                gx = np.zeros_like(x.data)
                gx.reshape(-1)[flat_idx] = g
                return (gx,)

            return _make(x.data.max(), (x,), vjp)

        idx = x.data.argmax(axis=axis)  # argmax picks the lowest winning index

        def vjp(g):
            gx = np.zeros_like(x.data)
            np.put_along_axis(
                gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis
            )
            return (gx,)

        return _make(x.data.max(axis=axis), (x,), vjp)

    raise ValueError(f"unknown reduction mode {mode!r}")


def segment_reduce(
    x: Tensor, segment_ids, num_segments: int, mode: str = "mean"
) -> Tensor:
    """Aggregate rows of an (E, C) tensor into ``num_segments`` buckets.

    Empty segments yield zero rows in every mode (and receive no
    gradient). ``max`` breaks ties toward the lowest row index.
    """
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"segment_reduce takes a 2-D tensor, got {x.data.shape}")
    ids = np.asarray(segment_ids, dtype=np.int64)
    if ids.ndim != 1 or ids.shape[0] != x.data.shape[0]:
        raise ShapeError("segment ids must be one per row")
    if ids.size and (ids.min() < 0 or ids.max() >= num_segments):
        raise ValueError("segment id out of range")
    n_rows, n_cols = x.data.shape
    counts = np.bincount(ids, minlength=num_segments)

    if mode in ("sum", "mean"):
        out = np.zeros((num_segments, n_cols))
        np.add.at(out, ids, x.data)
        if mode == "mean":
            denom = np.maximum(counts, 1)[:, None]
            out = out / denom

            def vjp(g):
                return (g[ids] / denom[ids],)
        else:
            def vjp(g):
                return (g[ids],)
        return _make(out, (x,), vjp)

    if mode == "max":
        out = np.full((num_segments, n_cols), -np.inf)
        np.maximum.at(out, ids, x.data)
        empty = counts == 0
        out[empty] = 0.0
        # First-index tie-break: among rows achieving the segment maximum,
        # only the lowest row index receives gradient, per channel.
        achieved = x.data == out[ids]
        row_index = np.arange(n_rows)[:, None]
        candidate = np.where(achieved, row_index, n_rows)
        first = np.full((num_segments, n_cols), n_rows, dtype=np.int64)
        np.minimum.at(first, ids, candidate)
        winner = row_index == first[ids]

        def vjp(g):
            return (np.where(winner, g[ids], 0.0),)

        return _make(out, (x,), vjp)

    raise ValueError(f"unknown reduction mode {mode!r}")


def spmm(matrix, x: Tensor) -> Tensor:
    """Multiply a constant scipy sparse matrix with a dense tensor.

    The sparse operand carries no gradient; it is adjacency structure,
    not a parameter.
    """
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"spmm takes a 2-D dense operand, got {x.data.shape}")
    if matrix.shape[1] != x.data.shape[0]:
        raise ShapeError(
            f"spmm inner dims disagree: {matrix.shape} x {x.data.shape}"
        )
    transposed = matrix.T

    def vjp(g):
        return (np.asarray(transposed @ g),)

    return _make(np.asarray(matrix @ x.data), (x,), vjp)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when rate is 0. Consumes rng state, so
    reproducibility is up to the caller's seeding discipline."""
    x = as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    keep = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    return _make(x.data * keep, (x,), lambda g: (g * keep,))


# -- losses --------------------------------------------------------------


def softmax_cross_entropy(
    logits: Tensor, labels, ignore_label: int | None = None
) -> Tensor:
    """Mean negative log-likelihood over non-ignored rows.

    Stabilized by per-row max subtraction. Rows whose label equals
    ``ignore_label`` contribute neither loss nor gradient; ignoring
    every row is an error.
    """
    logits = as_tensor(logits)
    if logits.data.ndim != 2:
        raise ShapeError(f"logits must be 2-D, got {logits.data.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    n_rows, n_classes = logits.data.shape
    if labels.shape != (n_rows,):
        raise ShapeError(
            f"labels shape {labels.shape} does not match {n_rows} logit rows"
        )
    valid = np.ones(n_rows, dtype=bool)
    if ignore_label is not None:
        valid = labels != ignore_label
    if not valid.any():
        raise ValueError("softmax_cross_entropy: every row is ignored")
    checked = labels[valid]
    if checked.min() < 0 or checked.max() >= n_classes:
        raise ValueError("label out of range")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_probs = shifted - log_z[:, None]
    picked = np.where(valid, log_probs[np.arange(n_rows), np.where(valid, labels, 0)], 0.0)
    n_valid = int(valid.sum())
    loss = -picked.sum() / n_valid

    def vjp(g):
        grad = np.exp(log_probs)
        grad[np.arange(n_rows), np.where(valid, labels, 0)] -= 1.0
        grad[~valid] = 0.0
        return (grad * (g / n_valid),)

    return _make(np.float64(loss), (logits,), vjp)


def binary_cross_entropy_with_logits(scores: Tensor, targets) -> Tensor:
    """Mean binary cross entropy on raw scores, stable in both tails."""
    scores = as_tensor(scores)
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != scores.data.shape:
        raise ShapeError(
            f"targets shape {t.shape} does not match scores {scores.data.shape}"
        )
    s = scores.data
    n = max(s.size, 1)
    per = np.maximum(s, 0.0) - s * t + np.log1p(np.exp(-np.abs(s)))
    p = np.where(s >= 0, 1.0 / (1.0 + np.exp(-np.abs(s))),
                 np.exp(-np.abs(s)) / (1.0 + np.exp(-np.abs(s))))

    def vjp(g):
        return ((p - t) * (g / n),)

    return _make(np.float64(per.sum() / n), (scores,), vjp)


def sum_squares(x: Tensor) -> Tensor:
    """Sum of squared entries, the usual weight-decay building block."""
    x = as_tensor(x)
    return _make(np.float64((x.data ** 2).sum()), (x,), lambda g: (2.0 * x.data * g,))
