"""Dense real tensors with reverse-mode differentiation.

A small tape-based autodiff engine on top of numpy, providing exactly the
operations the model needs: affine maps, elementwise arithmetic, sigmoid,
ReLU, layer normalization, dropout, embedding lookup, masked/segment
reductions, and the two losses. Every op registers a backward rule; calling
``backward()`` on a scalar propagates exact reverse-mode gradients to all
reachable leaves.

Double precision is used throughout; forward values can be NaN/Inf-checked
by enabling debug mode (``set_debug(True)`` or the GRED_DEBUG env var).
"""

from __future__ import annotations

import os

import numpy as np
from scipy import sparse as _sparse

from .errors import ValidationError, shape_error

_DEBUG = bool(os.environ.get("GRED_DEBUG"))


def set_debug(flag: bool) -> None:
    """Enable finite-value checks after every forward op."""
    global _DEBUG
    _DEBUG = bool(flag)


def _check_finite(data: np.ndarray, op: str) -> None:
    if _DEBUG and not np.all(np.isfinite(data)):
        raise ValidationError(f"{op}: non-finite values in forward output")


class Tensor:
    """A numpy array plus the tape hooks needed for reverse mode."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    # Small amount of operator sugar; everything routes through the op
    # functions below so each op has exactly one backward rule.
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        """Reverse-mode pass from a scalar output to all reachable leaves."""
        if self.data.shape != ():
            raise ValidationError(
                f"backward requires a scalar, got shape {self.data.shape}"
            )
        order = []
        seen = set()
        stack = [(self, False)]
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
        self.grad = np.ones((), dtype=np.float64)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            # Free the tape as we go; leaves keep their grads.
            node._parents = ()
            node._backward = None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents, backward, op: str) -> Tensor:
    _check_finite(data, op)
    out = Tensor(data)
    if any(t.requires_grad or t._parents for t in parents):
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not (t.requires_grad or t._parents):
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward op."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and linear ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _make(data, (a, b), backward, "sub")


def neg(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        _accum(a, -g)

    return _make(-a.data, (a,), backward, "neg")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), backward, "mul")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        _accum(a, g * c)

    return _make(a.data * c, (a,), backward, "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise shape_error("matmul", a.data.shape, b.data.shape)
    data = a.data @ b.data

    def backward(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _make(data, (a, b), backward, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w (+ b), with x of shape (n, d_in) and w of shape (d_in, d_out)."""
    out = matmul(x, w)
    if b is not None:
        if b.data.shape != (w.data.shape[1],):
            raise shape_error("linear bias", b.data.shape, w.data.shape)
        out = add(out, b)
    return out


def sigmoid(a: Tensor) -> Tensor:
    a = as_tensor(a)
    data = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        _accum(a, g * data * (1.0 - data))

    return _make(data, (a,), backward, "sigmoid")


def relu(a: Tensor) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0

    def backward(g):
        _accum(a, g * mask)

    return _make(np.where(mask, a.data, 0.0), (a,), backward, "relu")


def tsum(a: Tensor, axis=None) -> Tensor:
    a = as_tensor(a)
    data = a.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape).copy())
        else:
            _accum(a, np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy())

    return _make(data, (a,), backward, "sum")


def tmean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return scale(tsum(a, axis=axis), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    a = as_tensor(a)
    old = a.data.shape

    def backward(g):
        _accum(a, g.reshape(old))

    return _make(a.data.reshape(shape), (a,), backward, "reshape")


def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Select rows of a 2-D tensor; backward scatter-adds."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)

    def backward(g):
        if a.requires_grad or a._parents:
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            _accum(a, full)

    return _make(a.data[idx], (a,), backward, "gather_rows")


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup into an embedding table of shape (vocab, d)."""
    ids = np.asarray(ids)
    if ids.min(initial=0) < 0 or (ids.size and ids.max() >= table.data.shape[0]):
        raise ValidationError(
            f"embedding ids out of range for vocab {table.data.shape[0]}"
        )
    return gather_rows(table, ids)


# ---------------------------------------------------------------------------
# normalization, dropout


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last (feature) axis, then apply gain and bias."""
    x = as_tensor(x)
    if gain.data.shape != (x.data.shape[-1],) or bias.data.shape != gain.data.shape:
        raise shape_error("layer_norm", x.data.shape, gain.data.shape, bias.data.shape)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (x.data - mu) * inv
    data = gain.data * y + bias.data

    def backward(g):
        _accum(gain, (g * y).reshape(-1, y.shape[-1]).sum(axis=0))
        _accum(bias, g.reshape(-1, y.shape[-1]).sum(axis=0))
        if x.requires_grad or x._parents:
            gy = g * gain.data
            m1 = gy.mean(axis=-1, keepdims=True)
            m2 = (gy * y).mean(axis=-1, keepdims=True)
            _accum(x, inv * (gy - m1 - y * m2))

    return _make(data, (x, gain, bias), backward, "layer_norm")


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout; identity when not training or rate == 0."""
    if not train or rate <= 0.0:
        return x
    if rng is None:
        raise ValidationError("dropout in train mode requires an rng")
    keep = 1.0 - rate
    mask = (rng.random(x.data.shape) < keep) / keep

    def backward(g):
        _accum(x, g * mask)

    return _make(x.data * mask, (x,), backward, "dropout")


# ---------------------------------------------------------------------------
# indexed reductions (masked sums over index sets, segment pooling)


def masked_row_sum(x: Tensor, mat: _sparse.csr_matrix, mat_t: _sparse.csr_matrix) -> Tensor:
    """Sum rows of x over index sets encoded as a sparse 0/1 matrix.

    ``mat`` has shape (n_sets, n_rows); output row i is the sum of x over the
    rows selected by set i. An empty set yields a zero row. ``mat_t`` must be
    the precomputed transpose (used by the backward rule).
    """
    x = as_tensor(x)
    if mat.shape[1] != x.data.shape[0]:
        raise shape_error("masked_row_sum", mat.shape, x.data.shape)
    data = mat @ x.data

    def backward(g):
        _accum(x, mat_t @ g)

    return _make(data, (x,), backward, "masked_row_sum")


def segment_mean(x: Tensor, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    """Mean of x rows per segment (used for graph-level average pooling)."""
    x = as_tensor(x)
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    counts = np.bincount(segment_ids, minlength=num_segments).astype(np.float64)
    if np.any(counts == 0):
        raise ValidationError("segment_mean: empty segment")
    sums = np.zeros((num_segments, x.data.shape[1]), dtype=np.float64)
    np.add.at(sums, segment_ids, x.data)
    data = sums / counts[:, None]

    def backward(g):
        _accum(x, g[segment_ids] / counts[segment_ids, None])

    return _make(data, (x,), backward, "segment_mean")


# ---------------------------------------------------------------------------
# losses


def cross_entropy(logits: Tensor, labels: np.ndarray, ignore_index: int = -1) -> Tensor:
    """Mean cross-entropy from raw logits; rows labeled ignore_index are skipped."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (logits.data.shape[0],):
        raise shape_error("cross_entropy", logits.data.shape, labels.shape)
    live = labels != ignore_index
    n = int(live.sum())
    if n == 0:
        raise ValidationError("cross_entropy: no labeled rows")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    picked = logp[live, labels[live]]
    data = np.asarray(-picked.sum() / n)

    def backward(g):
        if logits.requires_grad or logits._parents:
            grad = np.exp(logp)
            grad[live, labels[live]] -= 1.0
            grad[~live] = 0.0
            _accum(logits, grad * (float(g) / n))

    return _make(data, (logits,), backward, "cross_entropy")


def l1_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean absolute error against a constant target."""
    pred = as_tensor(pred)
    target = np.asarray(target, dtype=np.float64)
    if target.shape != pred.data.shape:
        raise shape_error("l1_loss", pred.data.shape, target.shape)
    diff = pred.data - target
    data = np.asarray(np.abs(diff).mean())

    def backward(g):
        _accum(pred, np.sign(diff) * (float(g) / diff.size))

    return _make(data, (pred,), backward, "l1_loss")


def glu(x: Tensor, w1: Tensor, w2: Tensor) -> Tensor:
    """Gated linear unit (w1 x) * sigmoid(w2 x), weights of shape (d, d)."""
    return mul(matmul(x, w1), sigmoid(matmul(x, w2)))
