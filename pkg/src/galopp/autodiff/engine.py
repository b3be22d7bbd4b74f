"""Reverse-mode automatic differentiation on float64 numpy arrays.

Implements exactly the operator set the monitoring policy network needs:
elementwise arithmetic, matrix products (plain and batched), 2-D
convolution, activations, reductions, concatenation and indexing. Every
op records its parents and a hand-written backward rule on the result
tensor; ``Tape.trace`` linearizes the graph and ``Tape.backward`` visits
each recorded node exactly once in reverse topological order.

No general broadcasting: binary elementwise ops require equal shapes or
a scalar operand. All values are float64 and must be finite; NaN or Inf
entering through any op boundary raises immediately.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes do not satisfy an op's contract."""


_grad_enabled = [True]


@contextlib.contextmanager
def no_grad():
    """Context manager that disables graph recording (inference mode)."""
    _grad_enabled.append(False)
    try:
        yield
    finally:
        _grad_enabled.pop()


def _asarray(values) -> np.ndarray:
    return np.asarray(values, dtype=np.float64)


class Tensor:
    """A float64 array plus the bookkeeping needed for backward passes.

    ``grad`` stays None until a backward pass deposits a gradient.
    Intermediate tensors are throwaway; parameters are long-lived tensors
    with ``requires_grad=True`` whose grads the optimizer consumes.
    """

    __slots__ = ("values", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False):
        v = _asarray(values)
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite values entering tensor op")
        self.values = v
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        return float(self.values)

    def detach(self) -> "Tensor":
        return Tensor(self.values)

    def backward(self, seed=None) -> int:
        """Run reverse-mode accumulation from this tensor.

        Returns the number of backward rules invoked (used by tests to
        assert the single-visit property).
        """
        return Tape.trace(self).backward(self, seed)

    # Operator sugar. Python scalars are wrapped as constant tensors.
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def tensor(values, requires_grad: bool = False) -> Tensor:
    return Tensor(values, requires_grad=requires_grad)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if g.shape != t.values.shape:
        raise ShapeError(
            f"gradient shape {g.shape} does not match tensor shape {t.values.shape}"
        )
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _record(values: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    """Build the result tensor, attaching the backward rule when recording."""
    track = _grad_enabled[-1] and any(p.requires_grad for p in parents)
    out = Tensor(values, requires_grad=track)
    if track:
        out._parents = tuple(parents)
        out._backward = backward
    return out


class Tape:
    """Topologically ordered list of recorded tensors reachable from a root.

    Ordering guarantees parents precede children, so one reverse sweep
    visits each node exactly once. Tapes are per-backward objects with no
    shared state, so concurrent traces never interfere.
    """

    __slots__ = ("nodes",)

    def __init__(self, nodes: list):
        self.nodes = nodes

    @classmethod
    def trace(cls, root: Tensor) -> "Tape":
        nodes: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                nodes.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        return cls(nodes)

    def backward(self, root: Tensor, seed=None) -> int:
        if seed is None:
            if root.values.size != 1:
                raise ShapeError("backward() without seed requires a scalar root")
            seed = np.ones_like(root.values)
        _accumulate(root, _asarray(seed))
        visits = 0
        for node in reversed(self.nodes):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                visits += 1
        return visits


def _binary_shapes(a: Tensor, b: Tensor) -> None:
    if a.values.shape == b.values.shape:
        return
    if a.values.size == 1 or b.values.size == 1:
        return
    raise ShapeError(f"operands have shapes {a.shape} and {b.shape}; "
                     "elementwise ops need equal shapes or a scalar")


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Collapse a gradient onto a scalar operand's shape."""
    if g.shape == shape:
        return g
    return np.sum(g).reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _binary_shapes(a, b)
    out_values = a.values + b.values

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _reduce_to(g, a.values.shape))
        if b.requires_grad:
            _accumulate(b, _reduce_to(g, b.values.shape))

    return _record(out_values, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _binary_shapes(a, b)
    out_values = a.values - b.values

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _reduce_to(g, a.values.shape))
        if b.requires_grad:
            _accumulate(b, _reduce_to(-g, b.values.shape))

    return _record(out_values, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _binary_shapes(a, b)
    out_values = a.values * b.values

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _reduce_to(g * b.values, a.values.shape))
        if b.requires_grad:
            _accumulate(b, _reduce_to(g * a.values, b.values.shape))

    return _record(out_values, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    a = _wrap(a)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, -g)

    return _record(-a.values, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.values.ndim != 2 or b.values.ndim != 2:
        raise ShapeError("matmul requires 2-D operands; use bmm for batched")
    if a.values.shape[1] != b.values.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out_values = a.values @ b.values

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g @ b.values.T)
        if b.requires_grad:
            _accumulate(b, a.values.T @ g)

    return _record(out_values, (a, b), backward)


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product: (B,n,k) @ (B,k,m) -> (B,n,m)."""
    a, b = _wrap(a), _wrap(b)
    if a.values.ndim != 3 or b.values.ndim != 3:
        raise ShapeError("bmm requires 3-D operands")
    if a.values.shape[0] != b.values.shape[0] or a.values.shape[2] != b.values.shape[1]:
        raise ShapeError(f"bmm shape mismatch: {a.shape} @ {b.shape}")
    out_values = np.einsum("bnk,bkm->bnm", a.values, b.values)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, np.einsum("bnm,bkm->bnk", g, b.values))
        if b.requires_grad:
            _accumulate(b, np.einsum("bnk,bnm->bkm", a.values, g))

    return _record(out_values, (a, b), backward)


def relu(a: Tensor) -> Tensor:
    a = _wrap(a)
    mask = a.values > 0.0
    out_values = np.where(mask, a.values, 0.0)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g * mask)

    return _record(out_values, (a,), backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically stabilized softmax along ``axis`` (max subtraction)."""
    a = _wrap(a)
    shifted = a.values - np.max(a.values, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_values = e / np.sum(e, axis=axis, keepdims=True)

    def backward(g):
        if a.requires_grad:
            inner = np.sum(g * out_values, axis=axis, keepdims=True)
            _accumulate(a, out_values * (g - inner))

    return _record(out_values, (a,), backward)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    """log of the softmax along ``axis``, computed as shifted logits
    minus logsumexp so it stays finite where the softmax itself would
    underflow to an exact zero."""
    a = _wrap(a)
    shifted = a.values - np.max(a.values, axis=axis, keepdims=True)
    out_values = shifted - np.log(np.sum(np.exp(shifted), axis=axis,
                                         keepdims=True))

    def backward(g):
        if a.requires_grad:
            total = np.sum(g, axis=axis, keepdims=True)
            _accumulate(a, g - np.exp(out_values) * total)

    return _record(out_values, (a,), backward)


def log(a: Tensor) -> Tensor:
    a = _wrap(a)
    out_values = np.log(a.values)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g / a.values)

    return _record(out_values, (a,), backward)


def exp(a: Tensor) -> Tensor:
    a = _wrap(a)
    out_values = np.exp(a.values)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g * out_values)

    return _record(out_values, (a,), backward)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise minimum; ties route the gradient to the first operand."""
    a, b = _wrap(a), _wrap(b)
    if a.values.shape != b.values.shape:
        raise ShapeError(f"minimum requires equal shapes, got {a.shape} and {b.shape}")
    take_a = a.values <= b.values
    out_values = np.where(take_a, a.values, b.values)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g * take_a)
        if b.requires_grad:
            _accumulate(b, g * ~take_a)

    return _record(out_values, (a, b), backward)


def clip(a: Tensor, low: float, high: float) -> Tensor:
    """Clamp to [low, high]; gradient passes only where the value is inside."""
    a = _wrap(a)
    if not low <= high:
        raise ValueError(f"clip bounds out of order: [{low}, {high}]")
    inside = (a.values >= low) & (a.values <= high)
    out_values = np.clip(a.values, low, high)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g * inside)

    return _record(out_values, (a,), backward)


def sum(a: Tensor, axis: Optional[int] = None) -> Tensor:  # noqa: A001
    a = _wrap(a)
    out_values = np.sum(a.values, axis=axis)

    def backward(g):
        if a.requires_grad:
            if axis is None:
                _accumulate(a, np.full_like(a.values, float(g)))
            else:
                _accumulate(a, np.broadcast_to(
                    np.expand_dims(g, axis), a.values.shape).copy())

    return _record(out_values, (a,), backward)


def mean(a: Tensor, axis: Optional[int] = None) -> Tensor:
    a = _wrap(a)
    out_values = np.mean(a.values, axis=axis)
    count = a.values.size if axis is None else a.values.shape[axis]

    def backward(g):
        if a.requires_grad:
            if axis is None:
                _accumulate(a, np.full_like(a.values, float(g) / count))
            else:
                _accumulate(a, np.broadcast_to(
                    np.expand_dims(g, axis), a.values.shape).copy() / count)

    return _record(out_values, (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    a = _wrap(a)
    out_values = a.values.reshape(shape)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g.reshape(a.values.shape))

    return _record(out_values, (a,), backward)


def flatten(a: Tensor) -> Tensor:
    """Collapse all but the leading (batch) axis: (m, ...) -> (m, k)."""
    a = _wrap(a)
    if a.values.ndim < 2:
        raise ShapeError("flatten requires at least 2 dims")
    return reshape(a, (a.values.shape[0], -1))


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = [_wrap(t) for t in tensors]
    if not parts:
        raise ShapeError("concat of empty sequence")
    out_values = np.concatenate([p.values for p in parts], axis=axis)
    sizes = [p.values.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(int(lo), int(hi))
                _accumulate(p, g[tuple(index)])

    return _record(out_values, tuple(parts), backward)


def take_rows(a: Tensor, indices) -> Tensor:
    """Gather rows along axis 0; backward scatter-adds (indices may repeat)."""
    a = _wrap(a)
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError("take_rows expects a 1-D index array")
    out_values = a.values[idx]

    def backward(g):
        if a.requires_grad:
            acc = np.zeros_like(a.values)
            np.add.at(acc, idx, g)
            _accumulate(a, acc)

    return _record(out_values, (a,), backward)


def select_columns(a: Tensor, indices) -> Tensor:
    """Pick one entry per row of a 2-D tensor: out[i] = a[i, indices[i]]."""
    a = _wrap(a)
    if a.values.ndim != 2:
        raise ShapeError("select_columns expects a 2-D tensor")
    idx = np.asarray(indices, dtype=np.intp)
    if idx.shape != (a.values.shape[0],):
        raise ShapeError("select_columns needs one index per row")
    rows = np.arange(a.values.shape[0])
    out_values = a.values[rows, idx]

    def backward(g):
        if a.requires_grad:
            acc = np.zeros_like(a.values)
            acc[rows, idx] = g
            _accumulate(a, acc)

    return _record(out_values, (a,), backward)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map x @ weight + bias for x of shape (m, d_in)."""
    x, weight = _wrap(x), _wrap(weight)
    if x.values.ndim != 2 or weight.values.ndim != 2:
        raise ShapeError("linear expects 2-D input and weight")
    if x.values.shape[1] != weight.values.shape[0]:
        raise ShapeError(f"linear dims differ: {x.shape} @ {weight.shape}")
    out_values = x.values @ weight.values
    parents = [x, weight]
    if bias is not None:
        bias = _wrap(bias)
        if bias.values.shape != (weight.values.shape[1],):
            raise ShapeError("bias shape must be (d_out,)")
        out_values = out_values + bias.values
        parents.append(bias)

    def backward(g):
        if x.requires_grad:
            _accumulate(x, g @ weight.values.T)
        if weight.requires_grad:
            _accumulate(weight, x.values.T @ g)
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g.sum(axis=0))

    return _record(out_values, tuple(parents), backward)


def _im2col(padded: np.ndarray, kh: int, kw: int, stride: int,
            out_h: int, out_w: int) -> np.ndarray:
    b, c = padded.shape[:2]
    cols = np.empty((b, c, kh, kw, out_h, out_w), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = padded[:, :, i:i + stride * out_h:stride,
                                      j:j + stride * out_w:stride]
    return cols.reshape(b, c * kh * kw, out_h * out_w)


def _col2im(dcols: np.ndarray, padded_shape, kh: int, kw: int, stride: int,
            out_h: int, out_w: int) -> np.ndarray:
    b, c = padded_shape[:2]
    dpadded = np.zeros(padded_shape, dtype=np.float64)
    dcols = dcols.reshape(b, c, kh, kw, out_h, out_w)
    for i in range(kh):
        for j in range(kw):
            dpadded[:, :, i:i + stride * out_h:stride,
                    j:j + stride * out_w:stride] += dcols[:, :, i, j]
    return dpadded


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding.

    x: (batch, in_channels, H, W); weight: (out_channels, in_channels, kh, kw);
    bias: (out_channels,) or None. Output spatial dims follow
    floor((H + 2*padding - kh) / stride) + 1 and must be positive.
    """
    x, weight = _wrap(x), _wrap(weight)
    if x.values.ndim != 4 or weight.values.ndim != 4:
        raise ShapeError("conv2d expects 4-D input and weight")
    b, c_in, h, w = x.values.shape
    c_out, c_in_w, kh, kw = weight.values.shape
    if c_in != c_in_w:
        raise ShapeError(f"conv2d channel mismatch: input {c_in}, weight {c_in_w}")
    if stride < 1 or padding < 0:
        raise ShapeError("conv2d needs stride >= 1 and padding >= 0")
    out_h = (h + 2 * padding - kh) // stride + 1
    out_w = (w + 2 * padding - kw) // stride + 1
    if h + 2 * padding < kh or w + 2 * padding < kw or out_h < 1 or out_w < 1:
        raise ShapeError(
            f"conv2d non-positive output dim for input {h}x{w}, "
            f"kernel {kh}x{kw}, stride {stride}, padding {padding}")

    padded = np.pad(x.values, ((0, 0), (0, 0), (padding, padding),
                               (padding, padding)))
    cols = _im2col(padded, kh, kw, stride, out_h, out_w)
    ckk, p = c_in * kh * kw, out_h * out_w
    # one GEMM over the whole batch: (c_out, ckk) @ (ckk, b*p)
    cols_flat = np.ascontiguousarray(cols.transpose(1, 0, 2)).reshape(ckk, b * p)
    w2 = weight.values.reshape(c_out, ckk)
    out_values = (w2 @ cols_flat).reshape(c_out, b, p) \
        .transpose(1, 0, 2).reshape(b, c_out, out_h, out_w)
    parents = [x, weight]
    if bias is not None:
        bias = _wrap(bias)
        if bias.values.shape != (c_out,):
            raise ShapeError("conv2d bias shape must be (out_channels,)")
        out_values = out_values + bias.values.reshape(1, -1, 1, 1)
        parents.append(bias)

    def backward(g):
        g_flat = g.reshape(b, c_out, p).transpose(1, 0, 2).reshape(c_out, b * p)
        if weight.requires_grad:
            _accumulate(weight,
                        (g_flat @ cols_flat.T).reshape(weight.values.shape))
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dcols = (w2.T @ g_flat).reshape(ckk, b, p).transpose(1, 0, 2)
            dpadded = _col2im(dcols, padded.shape, kh, kw, stride, out_h, out_w)
            if padding:
                dpadded = dpadded[:, :, padding:padding + h, padding:padding + w]
            _accumulate(x, dpadded)

    return _record(out_values, tuple(parents), backward)


def graph_conv(h: Tensor, adjacency: Tensor, weight: Tensor) -> Tensor:
    """One graph-convolution layer: relu(adjacency @ h @ weight).

    Gradients flow through all three factors; pass the adjacency as a
    constant tensor when it should stay fixed.
    """
    return relu(matmul(matmul(_wrap(adjacency), _wrap(h)), _wrap(weight)))
