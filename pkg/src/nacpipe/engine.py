"""Reverse-mode automatic differentiation over dense numpy arrays.

A small define-by-run graph engine: every operation returns a new
:class:`Tensor` whose backward closure scatters the incoming gradient to
its parents.  Calling :meth:`Tensor.backward` on a scalar loss walks the
graph in reverse topological order and accumulates gradients into every
reachable node that requires them.

Arrays are kept in whatever float dtype they arrive in (float32 for
training, float64 for finite-difference checks); operations never
silently promote.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """An operation received arrays of incompatible shape."""


class GraphError(RuntimeError):
    """Invalid use of the computation graph (non-scalar loss, etc.)."""


class NonFiniteError(FloatingPointError):
    """A tensor holds NaN or Inf, violating the finiteness contract."""


_FLOAT_DTYPES = (np.float32, np.float64)

_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _as_float_array(data, dtype=None):
    arr = np.asarray(data)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    elif arr.dtype not in _FLOAT_DTYPES:
        arr = arr.astype(np.float32)
    return arr


class Tensor:
    """A node in the computation graph: an ndarray plus backward plumbing.

    ``data`` is the forward value, ``grad`` (same shape, same dtype) is
    filled in by :meth:`backward`.  Leaf tensors created from external
    data are checked for NaN/Inf; intermediate results are trusted, and
    the training loop re-checks the loss each step.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None,
                 _check=True):
        self.data = _as_float_array(data)
        if _check and not _parents and not np.isfinite(self.data).all():
            raise NonFiniteError("tensor holds non-finite values")
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def detach(self):
        """Same values, cut off from the graph."""
        return Tensor(self.data, _check=False)

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Populate ``grad`` on every reachable tensor requiring it."""
        if self.data.size != 1:
            raise GraphError(
                f"backward requires a scalar loss, got shape {self.data.shape}")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # --- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _wrap(other, self.dtype))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return sub(self, _wrap(other, self.dtype))

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, _wrap(other, self.dtype))

    def __rtruediv__(self, other):
        return div(_wrap(other, self.dtype), self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


class Parameter(Tensor):
    """A trainable leaf tensor with a name path unique within a model."""

    __slots__ = ("name",)

    def __init__(self, data, name=""):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def const(data, dtype=None):
    """Wrap external values as a non-trainable leaf."""
    return Tensor(_as_float_array(data, dtype))


def _wrap(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(_as_float_array(x, dtype), _check=True)


def _make(data, parents, backward):
    """Build an op result, recording the closure only when needed."""
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents),
                      _backward=backward, _check=False)
    return Tensor(data, _check=False)


def _unbroadcast(g, shape):
    """Sum gradient ``g`` down to ``shape`` (inverse of broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# --- elementwise ops ----------------------------------------------------


def add(a, b):
    out = _make(a.data + b.data, (a, b), None)

    def backward():
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(out.grad, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(out.grad, b.data.shape))

    out._backward = backward
    return out


def sub(a, b):
    out = _make(a.data - b.data, (a, b), None)

    def backward():
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(out.grad, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-out.grad, b.data.shape))

    out._backward = backward
    return out


def mul(a, b):
    out = _make(a.data * b.data, (a, b), None)

    def backward():
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(out.grad * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(out.grad * a.data, b.data.shape))

    out._backward = backward
    return out


def div(a, b):
    out = _make(a.data / b.data, (a, b), None)

    def backward():
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(out.grad / b.data, a.data.shape))
        if b.requires_grad:
            gb = -out.grad * a.data / (b.data * b.data)
            b.accumulate_grad(_unbroadcast(gb, b.data.shape))

    out._backward = backward
    return out


def neg(a):
    out = _make(-a.data, (a,), None)

    def backward():
        if a.requires_grad:
            a.accumulate_grad(-out.grad)

    out._backward = backward
    return out


def power(a, p):
    p = float(p)
    out = _make(a.data ** p, (a,), None)

    def backward():
        if a.requires_grad:
            a.accumulate_grad(out.grad * p * a.data ** (p - 1.0))

    out._backward = backward
    return out


def exp(a):
    out = _make(np.exp(a.data), (a,), None)

    def backward():
        if a.requires_grad:
            a.accumulate_grad(out.grad * out.data)

    out._backward = backward
    return out


def log(a):
    out = _make(np.log(a.data), (a,), None)

    def backward():
        if a.requires_grad:
            a.accumulate_grad(out.grad / a.data)

    out._backward = backward
    return out


def sqrt(a):
    out = _make(np.sqrt(a.data), (a,), None)

    def backward():
        if a.requires_grad:
            a.accumulate_grad(out.grad / (2.0 * out.data))

    out._backward = backward
    return out


def tanh(a):
    out = _make(np.tanh(a.data), (a,), None)

    def backward():
        if a.requires_grad:
            a.accumulate_grad(out.grad * (1.0 - out.data * out.data))

    out._backward = backward
    return out


def sigmoid(a):
    s = 1.0 / (1.0 + np.exp(-a.data))
    out = _make(s, (a,), None)

    def backward():
        if a.requires_grad:
            a.accumulate_grad(out.grad * out.data * (1.0 - out.data))

    out._backward = backward
    return out


def absval(a):
    out = _make(np.abs(a.data), (a,), None)

    def backward():
        if a.requires_grad:
            a.accumulate_grad(out.grad * np.sign(a.data))

    out._backward = backward
    return out


def elu(a, alpha=1.0):
    pos = a.data > 0
    e = np.where(pos, a.data, alpha * np.expm1(np.minimum(a.data, 0.0)))
    out = _make(e, (a,), None)

    def backward():
        if a.requires_grad:
            a.accumulate_grad(out.grad * np.where(pos, 1.0, out.data + alpha))

    out._backward = backward
    return out


def leaky_relu(a, slope=0.1):
    pos = a.data > 0
    out = _make(np.where(pos, a.data, slope * a.data), (a,), None)

    def backward():
        if a.requires_grad:
            a.accumulate_grad(out.grad * np.where(pos, 1.0, slope))

    out._backward = backward
    return out


def relu(a):
    pos = a.data > 0
    out = _make(np.where(pos, a.data, 0.0), (a,), None)

    def backward():
        if a.requires_grad:
            a.accumulate_grad(out.grad * pos)

    out._backward = backward
    return out


# --- reductions and shape ops -------------------------------------------


def tsum(a, axis=None, keepdims=False):
    out = _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), None)

    def backward():
        if not a.requires_grad:
            return
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a.accumulate_grad(np.broadcast_to(g, a.data.shape).copy())

    out._backward = backward
    return out


def tmean(a, axis=None, keepdims=False):
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for ax in axes:
            count *= a.data.shape[ax]
    return tsum(a, axis, keepdims) * (1.0 / count)


def reshape(a, shape):
    out = _make(a.data.reshape(shape), (a,), None)

    def backward():
        if a.requires_grad:
            a.accumulate_grad(out.grad.reshape(a.data.shape))

    out._backward = backward
    return out


def transpose(a, axes):
    axes = tuple(axes)
    out = _make(a.data.transpose(axes), (a,), None)
    inv = tuple(np.argsort(axes))

    def backward():
        if a.requires_grad:
            a.accumulate_grad(out.grad.transpose(inv))

    out._backward = backward
    return out


def take(a, idx):
    """Basic slicing/indexing; gradient scatters back additively."""
    out = _make(a.data[idx], (a,), None)

    def backward():
        if a.requires_grad:
            g = np.zeros_like(a.data)
            np.add.at(g, idx, out.grad)
            a.accumulate_grad(g)

    out._backward = backward
    return out


def concat(tensors, axis=0):
    out = _make(np.concatenate([t.data for t in tensors], axis=axis),
                tuple(tensors), None)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward():
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * out.grad.ndim
                sl[axis] = slice(lo, hi)
                t.accumulate_grad(out.grad[tuple(sl)])

    out._backward = backward
    return out


def stack(tensors, axis=0):
    out = _make(np.stack([t.data for t in tensors], axis=axis),
                tuple(tensors), None)

    def backward():
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t.accumulate_grad(np.take(out.grad, i, axis=axis))

    out._backward = backward
    return out


def pad_last(a, left, right):
    """Zero-pad the last axis by (left, right)."""
    width = [(0, 0)] * (a.data.ndim - 1) + [(int(left), int(right))]
    out = _make(np.pad(a.data, width), (a,), None)
    n = a.data.shape[-1]

    def backward():
        if a.requires_grad:
            a.accumulate_grad(out.grad[..., left:left + n])

    out._backward = backward
    return out


def matmul(a, b):
    """``a @ b`` where ``a`` is (..., n, k) and ``b`` is a (k, m) matrix."""
    if b.data.ndim != 2:
        raise ShapeError(f"matmul expects a 2-D right operand, got {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul inner dims differ: {a.data.shape[-1]} vs {b.data.shape[0]}")
    out = _make(a.data @ b.data, (a, b), None)

    def backward():
        g = out.grad
        if a.requires_grad:
            a.accumulate_grad(g @ b.data.T)
        if b.requires_grad:
            k = a.data.shape[-1]
            a2 = a.data.reshape(-1, k)
            g2 = g.reshape(-1, b.data.shape[1])
            b.accumulate_grad(a2.T @ g2)

    out._backward = backward
    return out


def embedding(table, indices):
    """Row lookup ``table[indices]``, differentiable w.r.t. the table.

    ``indices`` is any integer array; a repeated row accumulates one
    gradient contribution per occurrence.
    """
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ShapeError("embedding indices must be integers")
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        bad = int(idx.min()) if idx.min() < 0 else int(idx.max())
        raise IndexError(
            f"embedding index {bad} out of range for table with "
            f"{table.data.shape[0]} rows")
    out = _make(table.data[idx], (table,), None)

    def backward():
        if table.requires_grad:
            g = np.zeros_like(table.data)
            np.add.at(g, idx, out.grad)
            table.accumulate_grad(g)

    out._backward = backward
    return out


def straight_through(quantized, pre):
    """Forward the quantized values, route the gradient to ``pre`` unchanged."""
    q = np.asarray(quantized, dtype=pre.data.dtype)
    if q.shape != pre.data.shape:
        raise ShapeError(
            f"straight_through shapes differ: {q.shape} vs {pre.data.shape}")
    out = _make(q, (pre,), None)

    def backward():
        if pre.requires_grad:
            pre.accumulate_grad(out.grad)

    out._backward = backward
    return out


# --- convolutions -------------------------------------------------------


def _pad_pair(padding):
    if isinstance(padding, (tuple, list)):
        left, right = padding
    else:
        left = right = padding
    return int(left), int(right)


def conv1d(x, w, b=None, stride=1, padding=0, dilation=1):
    """1-D convolution along the last axis.

    ``x`` is (C_in, T) or (B, C_in, T); ``w`` is (C_out, C_in, K).
    ``padding`` may be a single int (symmetric) or a (left, right) pair.
    Output length is ``floor((T + pad_l + pad_r - eff_k) / stride) + 1``
    with ``eff_k = (K - 1) * dilation + 1``.
    """
    squeeze = x.data.ndim == 2
    if squeeze:
        x = reshape(x, (1,) + x.data.shape)
    if x.data.ndim != 3 or w.data.ndim != 3:
        raise ShapeError(
            f"conv1d expects (B, C_in, T) input and (C_out, C_in, K) weights, "
            f"got {x.data.shape} and {w.data.shape}")
    if x.data.shape[1] != w.data.shape[1]:
        raise ShapeError(
            f"conv1d input channels {x.data.shape[1]} != weight "
            f"in-channels {w.data.shape[1]}")
    if stride < 1:
        raise ShapeError(f"conv1d stride must be >= 1, got {stride}")
    left, right = _pad_pair(padding)
    batch, c_in, t_in = x.data.shape
    c_out, _, k = w.data.shape
    eff = (k - 1) * dilation + 1
    t_pad = t_in + left + right
    if t_pad < eff:
        raise ShapeError(
            f"conv1d kernel (effective {eff}) does not fit input of "
            f"padded length {t_pad}")
    t_out = (t_pad - eff) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (left, right)))
    win = sliding_window_view(xp, eff, axis=2)[:, :, ::stride, ::dilation]
    # (B, C_in, T_out, K) -> (B*T_out, C_in*K) for one GEMM
    cols = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(
        batch * t_out, c_in * k)
    w2 = w.data.reshape(c_out, c_in * k)
    y = (cols @ w2.T).reshape(batch, t_out, c_out).transpose(0, 2, 1)
    if b is not None:
        y = y + b.data[None, :, None]

    parents = (x, w) if b is None else (x, w, b)
    out = _make(y, parents, None)

    def backward():
        g = out.grad
        g2 = np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(
            batch * t_out, c_out)
        if w.requires_grad:
            w.accumulate_grad((g2.T @ cols).reshape(c_out, c_in, k))
        if b is not None and b.requires_grad:
            b.accumulate_grad(g.sum(axis=(0, 2)))
        if x.requires_grad:
            gcols = (g2 @ w2).reshape(batch, t_out, c_in, k).transpose(0, 2, 1, 3)
            gxp = np.zeros((batch, c_in, t_pad), dtype=g.dtype)
            for j in range(k):
                pos = j * dilation
                gxp[:, :, pos:pos + stride * t_out:stride] += gcols[:, :, :, j]
            x.accumulate_grad(gxp[:, :, left:t_pad - right or None])

    out._backward = backward
    if squeeze:
        out = reshape(out, out.data.shape[1:])
    return out


def conv_transpose1d(x, w, b=None, stride=1, trim=(0, 0)):
    """Transposed 1-D convolution (fractionally-strided upsampling).

    ``x`` is (C_in, T) or (B, C_in, T); ``w`` is (C_in, C_out, K).
    ``trim`` removes (left, right) samples from the full output of
    length ``stride * (T - 1) + K``; symmetric trim by ``p`` on each side
    matches the usual "padding p" transposed-convolution convention.
    """
    squeeze = x.data.ndim == 2
    if squeeze:
        x = reshape(x, (1,) + x.data.shape)
    if x.data.shape[1] != w.data.shape[0]:
        raise ShapeError(
            f"conv_transpose1d input channels {x.data.shape[1]} != weight "
            f"in-channels {w.data.shape[0]}")
    if stride < 1:
        raise ShapeError(f"conv_transpose1d stride must be >= 1, got {stride}")
    left, right = _pad_pair(trim)
    batch, c_in, t_in = x.data.shape
    _, c_out, k = w.data.shape
    t_full = stride * (t_in - 1) + k
    if left + right >= t_full:
        raise ShapeError(
            f"conv_transpose1d trim ({left},{right}) consumes the whole "
            f"output of length {t_full}")

    x2 = np.ascontiguousarray(x.data.transpose(0, 2, 1)).reshape(
        batch * t_in, c_in)
    w2 = w.data.reshape(c_in, c_out * k)
    prod = (x2 @ w2).reshape(batch, t_in, c_out, k)
    yf = np.zeros((batch, c_out, t_full), dtype=x.data.dtype)
    for j in range(k):
        yf[:, :, j:j + stride * t_in:stride] += prod[:, :, :, j].transpose(0, 2, 1)
    y = yf[:, :, left:t_full - right or None]
    if b is not None:
        y = y + b.data[None, :, None]

    parents = (x, w) if b is None else (x, w, b)
    out = _make(y, parents, None)

    def backward():
        g = out.grad
        gf = np.zeros((batch, c_out, t_full), dtype=g.dtype)
        gf[:, :, left:t_full - right or None] = g
        gwin = sliding_window_view(gf, k, axis=2)[:, :, ::stride, :]
        gv2 = np.ascontiguousarray(gwin.transpose(0, 2, 1, 3)).reshape(
            batch * t_in, c_out * k)
        if x.requires_grad:
            x.accumulate_grad(
                (gv2 @ w2.T).reshape(batch, t_in, c_in).transpose(0, 2, 1))
        if w.requires_grad:
            w.accumulate_grad((x2.T @ gv2).reshape(c_in, c_out, k))
        if b is not None and b.requires_grad:
            b.accumulate_grad(g.sum(axis=(0, 2)))

    out._backward = backward
    if squeeze:
        out = reshape(out, out.data.shape[1:])
    return out


def frame_signal(x, frame_length, hop):
    """Slice (B, L) signals into (B, T, frame_length) overlapping frames."""
    squeeze = x.data.ndim == 1
    if squeeze:
        x = reshape(x, (1,) + x.data.shape)
    n = x.data.shape[-1]
    if n < frame_length:
        raise ShapeError(
            f"signal of length {n} shorter than frame length {frame_length}")
    t_out = 1 + (n - frame_length) // hop
    fr = sliding_window_view(x.data, frame_length, axis=1)[:, ::hop].copy()
    out = _make(fr, (x,), None)

    def backward():
        if x.requires_grad:
            g = np.zeros_like(x.data)
            for t in range(t_out):
                g[:, t * hop:t * hop + frame_length] += out.grad[:, t]
            x.accumulate_grad(g)

    out._backward = backward
    if squeeze:
        out = reshape(out, out.data.shape[1:])
    return out


# --- CTC ----------------------------------------------------------------


def _ctc_extended(labels, blank):
    ext = [blank]
    for lab in labels:
        ext.append(int(lab))
        ext.append(blank)
    return np.asarray(ext, dtype=np.int64)


def ctc_min_frames(labels):
    """Fewest frames able to emit ``labels`` (repeats need a blank gap)."""
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def ctc_loss(logits, labels, blank=0):
    """Negative log-likelihood of ``labels`` under the CTC alignment model.

    ``logits`` is a (T, V) tensor of unnormalized scores; ``labels`` a
    sequence of class ids (blank excluded).  The forward/backward lattice
    runs in float64 log-space regardless of input dtype; the analytic
    gradient w.r.t. the logits is ``softmax - alignment posterior``.
    """
    if logits.data.ndim != 2:
        raise ShapeError(f"ctc_loss expects (T, V) logits, got {logits.data.shape}")
    t_len, vocab = logits.data.shape
    labels = [int(x) for x in labels]
    for lab in labels:
        if not 0 <= lab < vocab or lab == blank:
            raise ValueError(f"ctc label {lab} invalid for vocab {vocab} "
                             f"with blank {blank}")
    if t_len < ctc_min_frames(labels):
        raise ValueError(
            f"label of length {len(labels)} cannot be emitted in {t_len} "
            f"frames (needs at least {ctc_min_frames(labels)})")

    ld = logits.data.astype(np.float64)
    logz = ld - ld.max(axis=1, keepdims=True)
    logz = logz - np.log(np.exp(logz).sum(axis=1, keepdims=True))

    ext = _ctc_extended(labels, blank)
    s_len = ext.size
    neg_inf = -np.inf

    # permitted diagonal transition s-2 -> s: only onto a fresh non-blank
    skip_ok = np.zeros(s_len, dtype=bool)
    for s in range(2, s_len):
        skip_ok[s] = ext[s] != blank and ext[s] != ext[s - 2]

    alpha = np.full((t_len, s_len), neg_inf)
    alpha[0, 0] = logz[0, ext[0]]
    if s_len > 1:
        alpha[0, 1] = logz[0, ext[1]]
    for t in range(1, t_len):
        prev = alpha[t - 1]
        best = prev.copy()
        best[1:] = np.logaddexp(best[1:], prev[:-1])
        if s_len > 2:
            best[2:] = np.where(skip_ok[2:],
                                np.logaddexp(best[2:], prev[:-2]),
                                best[2:])
        alpha[t] = best + logz[t, ext]

    if s_len > 1:
        log_p = np.logaddexp(alpha[-1, -1], alpha[-1, -2])
    else:
        log_p = alpha[-1, -1]
    loss_val = np.asarray(-log_p, dtype=logits.data.dtype)
    out = _make(loss_val, (logits,), None)

    def backward():
        if not logits.requires_grad:
            return
        beta = np.full((t_len, s_len), neg_inf)
        beta[-1, -1] = logz[-1, ext[-1]]
        if s_len > 1:
            beta[-1, -2] = logz[-1, ext[-2]]
        for t in range(t_len - 2, -1, -1):
            nxt = beta[t + 1]
            best = nxt.copy()
            best[:-1] = np.logaddexp(best[:-1], nxt[1:])
            if s_len > 2:
                best[:-2] = np.where(skip_ok[2:],
                                     np.logaddexp(best[:-2], nxt[2:]),
                                     best[:-2])
            beta[t] = best + logz[t, ext]

        # log P(paths through (t, s)); emission at t counted once
        gamma = alpha + beta - logz[:, ext]
        post = np.zeros((t_len, vocab))
        with np.errstate(over="ignore"):
            lik = np.exp(gamma - log_p)
        for s in range(s_len):
            post[:, ext[s]] += lik[:, s]
        grad = (np.exp(logz) - post) * float(out.grad)
        logits.accumulate_grad(grad.astype(logits.data.dtype))

    out._backward = backward
    return out


# --- convenience --------------------------------------------------------


def mean_abs_error(a, b):
    return tmean(absval(sub(a, b)))


def mean_sq_error(a, b):
    d = sub(a, b)
    return tmean(mul(d, d))
