"""Minimal reverse-mode autodiff over dense numpy arrays.

Covers exactly the primitives the panel model needs: affine maps, GELU/ReLU,
softmax / log-softmax, axis reductions, concatenation, zero-padded time
shifts and slices, causal depthwise convolution, dropout, unit-to-unit
attention, masked negative log-likelihood, and broadcasting elementwise
arithmetic.

Every forward call records its inputs on the produced node; ``backward()``
replays the executed-op record in reverse topological order exactly once.
Float32 and float64 are both supported; gradient checking runs in float64.

Training loops run inside an :class:`arena` context: op outputs and
gradients then come from a recycling buffer pool keyed by exact byte size,
which avoids the allocator round trips that otherwise dominate runtime on
large panels (the computation graph has identical shapes step after step).
Arrays drawn from the pool are recycled when the arena exits, so nothing
computed inside may be kept across steps without an explicit copy.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from . import kernels


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested primitive."""


class NumericError(RuntimeError):
    """A computation produced or would produce non-finite values."""


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


# ---------------------------------------------------------------------------
# Buffer pool
# ---------------------------------------------------------------------------

_POOL_ON = False
_POOL_FREE: dict[int, list[np.ndarray]] = {}
_POOL_ISSUED: dict[int, np.ndarray] = {}


def _new(shape, dtype) -> np.ndarray:
    """Uninitialized output array, recycled across steps inside an arena.

    Buffers are sized to powers of two so steps with slightly different
    shapes (e.g. varying sampled unit counts) share the same buckets and
    the pool's footprint stays bounded by the largest step's live set.
    """
    if not _POOL_ON:
        return np.empty(shape, dtype)
    dt = np.dtype(dtype)
    size = int(np.prod(shape, dtype=np.int64)) if shape else 1
    nbytes = max(size * dt.itemsize, 1)
    cap = 1 << (nbytes - 1).bit_length()
    bucket = _POOL_FREE.get(cap)
    buf = bucket.pop() if bucket else np.empty(cap, np.uint8)
    _POOL_ISSUED[id(buf)] = buf
    return buf[:nbytes].view(dt).reshape(shape)


def _new_zeros(shape, dtype) -> np.ndarray:
    out = _new(shape, dtype)
    out.fill(0)
    return out


def _release(arr: np.ndarray | None):
    """Return a pool-issued array's buffer to the free list."""
    if arr is None or not _POOL_ON:
        return
    base = arr
    while base.base is not None:
        base = base.base
    buf = _POOL_ISSUED.pop(id(base), None)
    if buf is not None:
        _POOL_FREE.setdefault(buf.nbytes, []).append(buf)


def pool_reset():
    for buf in _POOL_ISSUED.values():
        _POOL_FREE.setdefault(buf.nbytes, []).append(buf)
    _POOL_ISSUED.clear()


def pool_clear():
    """Drop all cached buffers (frees the memory to the allocator)."""
    pool_reset()
    _POOL_FREE.clear()


class arena:
    """Context manager enabling pooled allocation for one training step.

    Everything computed inside is invalid after exit unless copied out;
    extract scalars/parameters before leaving the block.
    """

    def __enter__(self):
        global _POOL_ON
        self._prev = _POOL_ON
        _POOL_ON = True
        return self

    def __exit__(self, exc_type, exc, tb):
        global _POOL_ON
        pool_reset()
        _POOL_ON = self._prev
        return False


_GRAD_ON = True


class no_grad:
    """Disable graph recording (inference forwards)."""

    def __enter__(self):
        global _GRAD_ON
        self._prev = _GRAD_ON
        _GRAD_ON = False
        return self

    def __exit__(self, exc_type, exc, tb):
        global _GRAD_ON
        _GRAD_ON = self._prev
        return False


class Tensor:
    """Array node in the computation record."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad = None
        self.requires_grad = _GRAD_ON and (
            bool(requires_grad) or any(p.requires_grad for p in parents))
        self._parents = tuple(parents) if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def _accumulate(self, g):
        if self.grad is None:
            out = _new(self.data.shape, self.data.dtype)
            np.copyto(out, g)
            self.grad = out
        else:
            self.grad += g

    def backward(self, free_graph: bool = True):
        """Reverse sweep from this scalar node.

        With ``free_graph`` (default) the graph is dismantled as it is
        consumed and non-leaf gradients are recycled immediately.
        """
        if self.data.ndim != 0:
            raise ShapeError(f"backward() starts from a scalar, got shape {self.shape}")
        order = _topo_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            produced_by_op = node._backward is not None
            if produced_by_op and node.grad is not None:
                node._backward(node.grad)
            if free_graph and node is not self:
                node._parents = ()
                node._backward = None
                if produced_by_op:
                    # op outputs' gradients have no readers once their
                    # closure ran; leaf (parameter) gradients are kept
                    _release(node.grad)
                    node.grad = None

    def zero_grad(self):
        self.grad = None

    # -- elementwise operator sugar -------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


def _topo_order(root: Tensor) -> list[Tensor]:
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
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def tensor(data, requires_grad=False, dtype=None):
    arr = np.asarray(data, dtype=dtype)
    t = Tensor(arr, requires_grad=requires_grad)
    return t


def parameter(data, dtype=None):
    t = tensor(data, requires_grad=True, dtype=dtype)
    return t


def input_tensor(data, dtype) -> Tensor:
    """Pool-backed contiguous copy of raw input data."""
    src = np.asarray(data)
    out = _new(src.shape, dtype)
    np.copyto(out, src)
    return Tensor(out)


def _lift(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    sa, sb = a.data.shape, b.data.shape
    if sa == sb or a.data.ndim == 0 or b.data.ndim == 0:
        return
    if a.data.ndim == b.data.ndim:
        ok = all(m == n or m == 1 or n == 1 for m, n in zip(sa, sb))
        if ok:
            return
    raise ShapeError(f"{op}: shapes {sa} and {sb} are not compatible "
                     "(same-rank broadcasting and scalars only)")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == ():
        return g.sum()
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _out_shape(a: Tensor, b: Tensor):
    return np.broadcast_shapes(a.data.shape, b.data.shape)


# -- elementwise arithmetic ----------------------------------------------


def _binary(a, b, op_name, ufunc, da, db):
    a = a if isinstance(a, Tensor) else _lift(a, None)
    b = _lift(b, a.dtype)
    _check_broadcast(a, b, op_name)
    val = ufunc(a.data, b.data, out=_new(_out_shape(a, b), a.data.dtype))
    out = Tensor(val, parents=(a, b))

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(da(g, a.data, b.data, val), a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(db(g, a.data, b.data, val), b.data.shape))

    out._backward = backward if out.requires_grad else None
    return out


def add(a, b):
    return _binary(a, b, "add", np.add,
                   lambda g, x, y, v: g,
                   lambda g, x, y, v: g)


def sub(a, b):
    return _binary(a, b, "sub", np.subtract,
                   lambda g, x, y, v: g,
                   lambda g, x, y, v: -g)


def mul(a, b):
    return _binary(a, b, "mul", np.multiply,
                   lambda g, x, y, v: g * y,
                   lambda g, x, y, v: g * x)


def div(a, b):
    return _binary(a, b, "div", np.divide,
                   lambda g, x, y, v: g / y,
                   lambda g, x, y, v: -g * v / y)


def neg(a):
    out = Tensor(np.negative(a.data, out=_new(a.data.shape, a.data.dtype)), parents=(a,))

    def backward(g):
        a._accumulate(-g)

    out._backward = backward if out.requires_grad else None
    return out


def abs_(a):
    """|a| with subgradient sign(0) = 0."""
    out = Tensor(np.abs(a.data, out=_new(a.data.shape, a.data.dtype)), parents=(a,))

    def backward(g):
        a._accumulate(g * np.sign(a.data))

    out._backward = backward if out.requires_grad else None
    return out


def sqrt(a):
    val = np.sqrt(a.data, out=_new(a.data.shape, a.data.dtype))
    out = Tensor(val, parents=(a,))

    def backward(g):
        a._accumulate(g * (0.5 / val))

    out._backward = backward if out.requires_grad else None
    return out


# -- dense layers ----------------------------------------------------------


def affine(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w + b over the trailing axis of x; w is (d_in, d_out)."""
    if w.data.ndim != 2 or x.data.shape[-1] != w.data.shape[0]:
        raise ShapeError(f"affine: x {x.data.shape} incompatible with w {w.data.shape}")
    if b is not None and b.data.shape != (w.data.shape[1],):
        raise ShapeError(f"affine: bias {b.data.shape} incompatible with w {w.data.shape}")
    lead = x.data.shape[:-1]
    d_out = w.data.shape[1]
    x2 = x.data.reshape(-1, x.data.shape[-1])
    val2 = np.matmul(x2, w.data, out=_new((x2.shape[0], d_out), x.data.dtype))
    if b is not None:
        val2 += b.data
    parents = (x, w) if b is None else (x, w, b)
    out = Tensor(val2.reshape(*lead, d_out), parents=parents)

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        if x.requires_grad:
            dx = np.matmul(g2, w.data.T, out=_new(x2.shape, x.data.dtype))
            x._accumulate(dx.reshape(x.data.shape))
            _release(dx)
        if w.requires_grad:
            w._accumulate(x2.T @ g2)
        if b is not None and b.requires_grad:
            b._accumulate(g2.sum(axis=0))

    out._backward = backward if out.requires_grad else None
    return out


def matmul2d(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul2d: {a.data.shape} @ {b.data.shape}")
    val = np.matmul(a.data, b.data, out=_new((a.data.shape[0], b.data.shape[1]), a.data.dtype))
    out = Tensor(val, parents=(a, b))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    out._backward = backward if out.requires_grad else None
    return out


def gram(p: Tensor) -> Tensor:
    """p @ p.T for a 2-d tensor."""
    if p.data.ndim != 2:
        raise ShapeError(f"gram: expected 2-d input, got {p.data.shape}")
    val = np.matmul(p.data, p.data.T, out=_new((p.data.shape[0],) * 2, p.data.dtype))
    out = Tensor(val, parents=(p,))

    def backward(g):
        p._accumulate((g + g.T) @ p.data)

    out._backward = backward if out.requires_grad else None
    return out


# -- nonlinearities ---------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0, out=_new(a.data.shape, a.data.dtype)), parents=(a,))

    def backward(g):
        a._accumulate(g * (a.data > 0))

    out._backward = backward if out.requires_grad else None
    return out


def gelu(a: Tensor) -> Tensor:
    x = a.data
    cdf = erf(x * a.data.dtype.type(_INV_SQRT2), out=_new(x.shape, x.dtype))
    cdf += 1.0
    cdf *= 0.5
    out = Tensor(np.multiply(x, cdf, out=_new(x.shape, x.dtype)), parents=(a,))

    def backward(g):
        pdf = np.multiply(x, x, out=_new(x.shape, x.dtype))
        pdf *= -0.5
        np.exp(pdf, out=pdf)
        pdf *= x.dtype.type(_INV_SQRT2PI)
        pdf *= x
        pdf += cdf
        pdf *= g
        a._accumulate(pdf)
        _release(pdf)

    out._backward = backward if out.requires_grad else None
    return out


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    val = _new(a.data.shape, a.data.dtype)
    np.subtract(a.data, a.data.max(axis=axis, keepdims=True), out=val)
    np.exp(val, out=val)
    val /= val.sum(axis=axis, keepdims=True)
    out = Tensor(val, parents=(a,))

    def backward(g):
        dot = (g * val).sum(axis=axis, keepdims=True)
        dx = np.subtract(g, dot, out=_new(g.shape, g.dtype))
        dx *= val
        a._accumulate(dx)
        _release(dx)

    out._backward = backward if out.requires_grad else None
    return out


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    val = _new(a.data.shape, a.data.dtype)
    np.subtract(a.data, a.data.max(axis=axis, keepdims=True), out=val)
    ex = np.exp(val, out=_new(a.data.shape, a.data.dtype))
    val -= np.log(ex.sum(axis=axis, keepdims=True))
    _release(ex)
    out = Tensor(val, parents=(a,))

    def backward(g):
        sm = np.exp(val, out=_new(val.shape, val.dtype))
        sm *= g.sum(axis=axis, keepdims=True)
        dx = np.subtract(g, sm, out=sm)
        a._accumulate(dx)
        _release(sm)

    out._backward = backward if out.requires_grad else None
    return out


# -- reductions, reshaping ---------------------------------------------------


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), parents=(a,))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.data.shape))

    out._backward = backward if out.requires_grad else None
    return out


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.data.shape[axis]
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims), parents=(a,))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        scaled = g / count
        a._accumulate(np.broadcast_to(scaled, a.data.shape))

    out._backward = backward if out.requires_grad else None
    return out


def concat(parts: list[Tensor], axis: int = -1) -> Tensor:
    base = list(parts[0].data.shape)
    for p in parts[1:]:
        s = list(p.data.shape)
        s[axis], base[axis] = 0, 0
        if s != base:
            raise ShapeError(f"concat: {parts[0].data.shape} vs {p.data.shape} on axis {axis}")
        base = list(parts[0].data.shape)
    shape = list(parts[0].data.shape)
    ax = axis if axis >= 0 else len(shape) + axis
    shape[ax] = sum(p.data.shape[ax] for p in parts)
    val = np.concatenate([p.data for p in parts], axis=ax,
                         out=_new(tuple(shape), parts[0].data.dtype))
    out = Tensor(val, parents=tuple(parts))
    sizes = [p.data.shape[ax] for p in parts]

    def backward(g):
        offset = 0
        for p, size in zip(parts, sizes):
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[ax] = slice(offset, offset + size)
                p._accumulate(g[tuple(idx)])
            offset += size

    out._backward = backward if out.requires_grad else None
    return out


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape), parents=(a,))

    def backward(g):
        a._accumulate(g.reshape(a.data.shape))

    out._backward = backward if out.requires_grad else None
    return out


def narrow(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice [start:stop) along one axis."""
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    view = a.data[idx]
    val = _new(view.shape, a.data.dtype)
    np.copyto(val, view)
    out = Tensor(val, parents=(a,))

    def backward(g):
        full = _new_zeros(a.data.shape, a.data.dtype)
        full[idx] = g
        a._accumulate(full)
        _release(full)

    out._backward = backward if out.requires_grad else None
    return out


def shift_time(a: Tensor, steps: int) -> Tensor:
    """Shift forward along the time axis (-2), zero-padding the start.

    Position t of the result holds position t - steps of the input.
    """
    if steps < 0:
        raise ShapeError("shift_time only shifts toward later positions")
    val = _new_zeros(a.data.shape, a.data.dtype)
    n_t = a.data.shape[-2]
    if steps < n_t:
        val[..., steps:, :] = a.data[..., : n_t - steps, :]
    out = Tensor(val, parents=(a,))

    def backward(g):
        full = _new_zeros(a.data.shape, a.data.dtype)
        if steps < n_t:
            full[..., : n_t - steps, :] = g[..., steps:, :]
        a._accumulate(full)
        _release(full)

    out._backward = backward if out.requires_grad else None
    return out


def broadcast_to_units(a: Tensor, m_units: int) -> Tensor:
    """(B, T, r) -> (B, M, T, r): repeat a shared series for every unit."""
    if a.data.ndim != 3:
        raise ShapeError(f"broadcast_to_units: expected (B, T, r), got {a.data.shape}")
    shape = (a.data.shape[0], m_units) + a.data.shape[1:]
    val = _new(shape, a.data.dtype)
    np.copyto(val, a.data[:, None, :, :])
    out = Tensor(val, parents=(a,))

    def backward(g):
        a._accumulate(g.sum(axis=1))

    out._backward = backward if out.requires_grad else None
    return out


# -- structured ops -----------------------------------------------------------


def causal_depthwise_conv(x: Tensor, ker: Tensor) -> Tensor:
    """Depthwise convolution along time: x (..., T, C), ker (C, K)."""
    if x.data.shape[-1] != ker.data.shape[0]:
        raise ShapeError(f"conv: channels {x.data.shape} vs kernel {ker.data.shape}")
    n_t, n_c = x.data.shape[-2:]
    dt = x.data.dtype
    x3 = x.data.reshape(-1, n_t, n_c)
    n_rows = x3.shape[0]
    # the kernels run channel-major for contiguous time loops
    x_cm = _new((n_rows, n_c, n_t), dt)
    np.copyto(x_cm, x3.transpose(0, 2, 1))
    y_cm = _new((n_rows, n_c, n_t), dt)
    kernels.conv_forward_cm_into(x_cm, ker.data, y_cm)
    val = _new(x3.shape, dt)
    np.copyto(val, y_cm.transpose(0, 2, 1))
    _release(y_cm)
    out = Tensor(val.reshape(x.data.shape), parents=(x, ker))
    k_len = ker.data.shape[1]

    def backward(g):
        g_cm = _new((n_rows, n_c, n_t), dt)
        np.copyto(g_cm, g.reshape(x3.shape).transpose(0, 2, 1))
        if x.requires_grad:
            du_cm = _new((n_rows, n_c, n_t), dt)
            kernels.conv_backward_input_cm_into(g_cm, ker.data, du_cm)
            du = _new(x3.shape, dt)
            np.copyto(du, du_cm.transpose(0, 2, 1))
            _release(du_cm)
            x._accumulate(du.reshape(x.data.shape))
            _release(du)
        if ker.requires_grad:
            ker._accumulate(kernels.conv_backward_kernel_cm(g_cm, x_cm, k_len))
        _release(g_cm)
        _release(x_cm)

    if out.requires_grad:
        out._backward = backward
    else:
        out._backward = None
        _release(x_cm)
    return out


def dropout(x: Tensor, p: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity when eval or p == 0."""
    if not train or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs an rng")
    keep = (rng.random(x.data.shape) >= p).astype(x.data.dtype)
    keep /= x.data.dtype.type(1.0 - p)
    out = Tensor(np.multiply(x.data, keep, out=_new(x.data.shape, x.data.dtype)), parents=(x,))

    def backward(g):
        a = np.multiply(g, keep, out=keep)  # keep is dead after this
        x._accumulate(a)

    out._backward = backward if out.requires_grad else None
    return out


def set_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Softmax attention across the unit axis, independently per period.

    q, k, v are (M, T, d); output (M, T, d). The full (T, M, M) attention
    probability array is kept for the backward pass, so cost and memory are
    quadratic in M by construction.
    """
    if q.data.shape != k.data.shape or q.data.shape != v.data.shape or q.data.ndim != 3:
        raise ShapeError(f"set_attention: q {q.data.shape}, k {k.data.shape}, v {v.data.shape}")
    m, t_len, d = q.data.shape
    dt = q.data.dtype
    scale = dt.type(1.0 / math.sqrt(d))

    def tize(t):
        out = _new((t_len, m, d), dt)
        np.copyto(out, np.swapaxes(t, 0, 1))
        return out

    qt, kt, vt = tize(q.data), tize(k.data), tize(v.data)
    probs = _new((t_len, m, m), dt)
    out_t = _new((t_len, m, d), dt)
    for t in range(t_len):
        s = probs[t]
        kernels.outer_scores(qt[t], kt[t], out=s)
        s *= scale
        s -= s.max(axis=1, keepdims=True)
        np.exp(s, out=s)
        s /= s.sum(axis=1, keepdims=True)
        np.matmul(s, vt[t], out=out_t[t])
    val = _new((m, t_len, d), dt)
    np.copyto(val, np.swapaxes(out_t, 0, 1))
    _release(out_t)
    out = Tensor(val, parents=(q, k, v))

    def backward(g):
        gt = tize(g)
        dq = _new((t_len, m, d), dt)
        dk = _new((t_len, m, d), dt)
        dv = _new((t_len, m, d), dt)
        da = _new((m, m), dt)
        tmp = _new((m, m), dt)
        for t in range(t_len):
            a = probs[t]
            kernels.outer_scores(gt[t], vt[t], out=da)
            np.multiply(da, a, out=tmp)
            da -= tmp.sum(axis=1, keepdims=True)
            da *= a
            da *= scale
            np.matmul(da, kt[t], out=dq[t])
            np.matmul(da.T, qt[t], out=dk[t])
            np.matmul(a.T, gt[t], out=dv[t])
        if q.requires_grad:
            q._accumulate(np.swapaxes(dq, 0, 1))
        if k.requires_grad:
            k._accumulate(np.swapaxes(dk, 0, 1))
        if v.requires_grad:
            v._accumulate(np.swapaxes(dv, 0, 1))
        for buf in (gt, dq, dk, dv, da, tmp, probs, qt, kt, vt):
            _release(buf)

    out._backward = backward if out.requires_grad else None
    return out


def gated_mix(g_matrix: Tensor, phi: Tensor) -> Tensor:
    """out[i] = sum_j G[i, j] * phi[j] for phi (M, T, P), G (M, M)."""
    if g_matrix.data.ndim != 2 or g_matrix.data.shape[1] != phi.data.shape[0]:
        raise ShapeError(f"gated_mix: G {g_matrix.data.shape} vs phi {phi.data.shape}")
    m = phi.data.shape[0]
    phi2 = phi.data.reshape(m, -1)
    val = np.matmul(g_matrix.data, phi2,
                    out=_new((g_matrix.data.shape[0], phi2.shape[1]), phi.data.dtype))
    out = Tensor(val.reshape(g_matrix.data.shape[0], *phi.data.shape[1:]),
                 parents=(g_matrix, phi))

    def backward(g):
        g2 = g.reshape(g.shape[0], -1)
        if g_matrix.requires_grad:
            g_matrix._accumulate(g2 @ phi2.T)
        if phi.requires_grad:
            dphi = np.matmul(g_matrix.data.T, g2, out=_new(phi2.shape, phi.data.dtype))
            phi._accumulate(dphi.reshape(phi.data.shape))
            _release(dphi)

    out._backward = backward if out.requires_grad else None
    return out


def l1_norm(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Sum of absolute values along an axis."""
    return sum_(abs_(a), axis=axis, keepdims=keepdims)


# -- losses -------------------------------------------------------------------


def nll_masked(log_probs: Tensor, labels: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean negative log-likelihood over masked cells.

    log_probs (..., C) log-probabilities, labels (...) ints, mask (...) bool.
    """
    if labels.shape != log_probs.data.shape[:-1] or mask.shape != labels.shape:
        raise ShapeError(
            f"nll_masked: log_probs {log_probs.data.shape}, labels {labels.shape}, mask {mask.shape}"
        )
    count = int(mask.sum())
    if count == 0:
        raise NumericError("nll_masked: empty mask")
    gathered = np.take_along_axis(log_probs.data, labels[..., None], axis=-1)[..., 0]
    val = -(gathered * mask).sum() / count
    out = Tensor(np.asarray(val, dtype=log_probs.data.dtype), parents=(log_probs,))

    def backward(g):
        dl = _new_zeros(log_probs.data.shape, log_probs.data.dtype)
        np.put_along_axis(dl, labels[..., None], (mask * (-g / count))[..., None].astype(dl.dtype),
                          axis=-1)
        log_probs._accumulate(dl)
        _release(dl)

    out._backward = backward if out.requires_grad else None
    return out


def masked_mean(x: Tensor, mask: np.ndarray) -> Tensor:
    """Mean of x over cells where mask is True."""
    if mask.shape != x.data.shape:
        raise ShapeError(f"masked_mean: x {x.data.shape} vs mask {mask.shape}")
    count = int(mask.sum())
    if count == 0:
        raise NumericError("masked_mean: empty mask")
    out = Tensor(np.asarray((x.data * mask).sum() / count, dtype=x.data.dtype), parents=(x,))

    def backward(g):
        x._accumulate(mask.astype(x.data.dtype) * (g / count))

    out._backward = backward if out.requires_grad else None
    return out


# -- gradient checking --------------------------------------------------------


def grad_check(f, params: dict[str, Tensor], eps: float = 1e-6,
               max_coords: int = 8, seed: int = 0) -> float:
    """Compare reverse-mode gradients of ``f()`` against central differences.

    ``f`` rebuilds the scalar loss from ``params`` on every call and must be
    deterministic (eval mode). Returns the max relative error
    |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|) over sampled coordinates.
    """
    for p in params.values():
        p.zero_grad()
    out = f()
    if not np.isfinite(out.data):
        raise NumericError(f"grad_check: non-finite objective {out.data}")
    out.backward()
    grads = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
             for k, p in params.items()}
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        coords = rng.choice(n, size=min(max_coords, n), replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            hi = float(f().data)
            flat[c] = orig - eps
            lo = float(f().data)
            flat[c] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise NumericError(f"grad_check: non-finite objective near {name}[{c}]")
            g_fd = (hi - lo) / (2.0 * eps)
            g_ad = float(grads[name].reshape(-1)[c])
            rel = abs(g_ad - g_fd) / max(1e-8, abs(g_ad) + abs(g_fd))
            worst = max(worst, rel)
    return worst
