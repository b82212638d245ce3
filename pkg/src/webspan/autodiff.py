"""Reverse-mode autodiff on numpy arrays, sized for desk-scale encoders.

A Tape records tensors in creation order, which is already a topological
order because graphs are built forward and never reused.  backward() walks
the list once in reverse.  Scatter-style adjoints (gathers, embedding
lookups) go through scipy.sparse COO matmuls, which are much faster than
np.add.at on a single core.
"""
from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy import special

from .errors import ConfigError, ShapeError, StaleTapeError

_DEBUG = False


def set_debug(flag: bool) -> None:
    """Enable per-op finiteness checks (slow; used by tests)."""
    global _DEBUG
    _DEBUG = bool(flag)


class Tensor:
    """A node on a tape: forward value plus an adjoint slot."""

    __slots__ = ("data", "grad", "tape", "_bwd")

    def __init__(self, data: np.ndarray, tape: "Tape", bwd=None):
        self.data = data
        self.grad: np.ndarray | None = None
        self.tape = tape
        self._bwd = bwd

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


class Tape:
    """Records one forward pass; consumed by a single backward()."""

    def __init__(self):
        self._nodes: list[Tensor] = []
        self._param_leaves: list[tuple["ParamStore", str, Tensor]] = []
        self._consumed = False

    def leaf(self, data: np.ndarray) -> Tensor:
        t = Tensor(np.asarray(data), self)
        self._nodes.append(t)
        return t

    def reset(self) -> None:
        """Drop all recorded nodes so the tape can be reused."""
        self._nodes.clear()
        self._param_leaves.clear()
        self._consumed = False

    def backward(self, loss: Tensor) -> None:
        """Seed d(loss)=1 and accumulate adjoints into every reachable node."""
        if self._consumed:
            raise StaleTapeError("backward() already ran on this tape; call reset()")
        if loss.tape is not self:
            raise ValueError("loss tensor does not belong to this tape")
        if loss.data.shape != ():
            raise ShapeError("backward", loss.data.shape, ())
        self._consumed = True
        loss.grad = np.ones((), dtype=loss.data.dtype)
        for t in reversed(self._nodes):
            if t.grad is not None and t._bwd is not None:
                t._bwd(t.grad)
        for store, name, leafT in self._param_leaves:
            if leafT.grad is not None:
                store.grads[name] += leafT.grad


def _record(tape: Tape, data: np.ndarray, bwd) -> Tensor:
    if _DEBUG and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value in forward op output")
    t = Tensor(data, tape, bwd)
    tape._nodes.append(t)
    return t


def _accum(t: Tensor, g: np.ndarray) -> None:
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back to the original operand shape."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _scatter_add(idx: np.ndarray, updates: np.ndarray, rows: int) -> np.ndarray:
    """Sum update rows into a (rows, D) array at idx (duplicates accumulate)."""
    r = idx.size
    upd = updates.reshape(r, -1)
    mat = sp.coo_matrix(
        (np.ones(r, dtype=upd.dtype), (idx.reshape(-1), np.arange(r))),
        shape=(rows, r),
    )
    return np.asarray(mat @ upd)


# ---------------------------------------------------------------- basic ops


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError("add", a.shape, b.shape)

    def bwd(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _record(a.tape, out, bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError("mul", a.shape, b.shape)

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _record(a.tape, out, bwd)


def scale(x: Tensor, s: float) -> Tensor:
    def bwd(g):
        _accum(x, g * s)

    return _record(x.tape, x.data * s, bwd)


def mul_const(x: Tensor, c: np.ndarray | float) -> Tensor:
    """Multiply by a non-differentiable constant (mask, scale array)."""
    def bwd(g):
        _accum(x, _unbroadcast(g * c, x.shape))

    return _record(x.tape, x.data * c, bwd)


def matmul(a: Tensor, w: Tensor) -> Tensor:
    """a (..., k) @ w (k, n); the usual projection shape."""
    if w.data.ndim != 2 or a.data.shape[-1] != w.data.shape[0]:
        raise ShapeError("matmul", a.shape, w.shape)
    out = a.data @ w.data

    def bwd(g):
        _accum(a, g @ w.data.T)
        k, n = w.data.shape
        _accum(w, a.data.reshape(-1, k).T @ g.reshape(-1, n))

    return _record(a.tape, out, bwd)


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matmul; leading dims must match exactly."""
    if (
        a.data.ndim != b.data.ndim
        or a.data.shape[:-2] != b.data.shape[:-2]
        or a.data.shape[-1] != b.data.shape[-2]
    ):
        raise ShapeError("bmm", a.shape, b.shape)
    out = a.data @ b.data

    def bwd(g):
        _accum(a, g @ b.data.swapaxes(-1, -2))
        _accum(b, a.data.swapaxes(-1, -2) @ g)

    return _record(a.tape, out, bwd)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        _accum(x, g.transpose(inv))

    return _record(x.tape, x.data.transpose(axes), bwd)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    orig = x.data.shape

    def bwd(g):
        _accum(x, g.reshape(orig))

    return _record(x.tape, x.data.reshape(tuple(shape)), bwd)


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)

    def bwd(g):
        _accum(x, _unbroadcast(g, x.data.shape))

    return _record(x.tape, np.broadcast_to(x.data, shape), bwd)


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    datas = [p.data for p in parts]
    base = list(datas[0].shape)
    for d in datas[1:]:
        other = list(d.shape)
        if len(other) != len(base) or any(
            i != axis and other[i] != base[i] for i in range(len(base))
        ):
            raise ShapeError("concat", datas[0].shape, d.shape)
    out = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accum(p, g[tuple(sl)])

    return _record(parts[0].tape, out, bwd)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    sl = [slice(None)] * x.data.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)

    def bwd(g):
        full = np.zeros_like(x.data)
        full[sl] = g
        _accum(x, full)

    return _record(x.tape, x.data[sl], bwd)


def sum_all(x: Tensor) -> Tensor:
    def bwd(g):
        _accum(x, np.full_like(x.data, g))

    return _record(x.tape, x.data.sum(), bwd)


# ------------------------------------------------------------- gather ops


def gather_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Embedding lookup: table (V, D), integer ids of any shape."""
    if table.data.ndim != 2:
        raise ShapeError("gather_rows", table.shape, ids.shape)
    v = table.data.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= v):
        raise IndexError(f"gather_rows: id out of range for table with {v} rows")
    out = table.data[ids]

    def bwd(g):
        _accum(table, _scatter_add(ids, g, v).reshape(table.data.shape))

    return _record(table.tape, out, bwd)


def gather_nodes(x: Tensor, idx: np.ndarray) -> Tensor:
    """Neighbor gather: x (B, N, D), idx (B, Q, S) -> (B, Q, S, D).

    Invalid slots must carry a safe index (0); their gradients are zero
    as long as downstream masks zero them out.
    """
    b, n, d = x.data.shape
    out = np.take_along_axis(x.data[:, None, :, :], idx[:, :, :, None], axis=2)

    def bwd(g):
        flat = (idx + (np.arange(b)[:, None, None] * n)).reshape(-1)
        gx = _scatter_add(flat, g.reshape(-1, d), b * n)
        _accum(x, gx.reshape(b, n, d))

    return _record(x.tape, out, bwd)


def pick_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Row select per batch element: x (B, N, D), idx (B,) -> (B, D)."""
    b, n, d = x.data.shape
    rows = np.arange(b)
    out = x.data[rows, idx]

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[rows, idx] = g
        _accum(x, gx)

    return _record(x.tape, out, bwd)


def shift_stack(x: Tensor, radius: int) -> Tensor:
    """Window stack: x (B, N, D) -> (B, N, 2r+1, D); slot s holds x[:, i+s-r].

    Out-of-range positions are zero; validity is the caller's mask problem.
    """
    b, n, d = x.data.shape
    s = 2 * radius + 1
    out = np.zeros((b, n, s, d), dtype=x.data.dtype)
    for off in range(-radius, radius + 1):
        lo, hi = max(0, -off), min(n, n - off)
        if lo < hi:
            out[:, lo:hi, off + radius] = x.data[:, lo + off : hi + off]

    def bwd(g):
        gx = np.zeros_like(x.data)
        for off in range(-radius, radius + 1):
            lo, hi = max(0, -off), min(n, n - off)
            if lo < hi:
                gx[:, lo + off : hi + off] += g[:, lo:hi, off + radius]
        _accum(x, gx)

    return _record(x.tape, out, bwd)


# ---------------------------------------------------------- nonlinear ops


def masked_softmax(logits: Tensor, mask: np.ndarray, axis: int = -1) -> Tensor:
    """Softmax over the index set marked True; all-masked rows give zeros.

    Masked slots get exactly zero weight and exactly zero gradient.
    """
    mask = np.broadcast_to(mask, logits.data.shape)
    neg = np.array(-np.inf, dtype=logits.data.dtype)
    xm = np.where(mask, logits.data, neg)
    m = xm.max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0)
    e = np.exp(xm - m)
    s = e.sum(axis=axis, keepdims=True)
    y = e / np.where(s > 0, s, 1)

    def bwd(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        _accum(logits, y * (g - inner))

    return _record(logits.tape, y, bwd)


def softmax_over_index_set(logits: Tensor, indices: Sequence[int]) -> Tensor:
    """1-D softmax normalized only over an explicit index list."""
    if logits.data.ndim != 1:
        raise ShapeError("softmax_over_index_set", logits.shape, (len(indices),))
    mask = np.zeros(logits.data.shape, dtype=bool)
    mask[list(indices)] = True
    return masked_softmax(logits, mask, axis=-1)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    d = x.data.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise ShapeError("layer_norm", x.shape, gamma.shape)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gamma.data * xhat + beta.data

    def bwd(g):
        _accum(gamma, (g * xhat).reshape(-1, d).sum(axis=0))
        _accum(beta, g.reshape(-1, d).sum(axis=0))
        gx = g * gamma.data
        gm = gx.mean(axis=-1, keepdims=True)
        gxh = (gx * xhat).mean(axis=-1, keepdims=True)
        _accum(x, inv * (gx - gm - xhat * gxh))

    return _record(x.tape, out, bwd)


def gelu(x: Tensor) -> Tensor:
    """Exact erf form of GELU."""
    cdf = 0.5 * (1.0 + special.erf(x.data / math.sqrt(2.0)))
    out = x.data * cdf

    def bwd(g):
        pdf = np.exp(-0.5 * x.data * x.data) / math.sqrt(2.0 * math.pi)
        _accum(x, g * (cdf + x.data * pdf))

    return _record(x.tape, out.astype(x.data.dtype, copy=False), bwd)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout: zero w.p. p and scale survivors by 1/(1-p) in train mode."""
    if not (0.0 <= p < 1.0):
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in train mode requires an rng")
    keep = (rng.random(x.data.shape) >= p).astype(x.data.dtype) / (1.0 - p)

    def bwd(g):
        _accum(x, g * keep)

    return _record(x.tape, x.data * keep, bwd)


def cross_entropy(logits: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean negative log-likelihood over rows, normalized over valid slots only.

    logits (B, N), integer targets (B,), bool mask (B, N).  Every target must
    be a valid slot; callers validate labels before building the loss.
    """
    b, n = logits.data.shape
    rows = np.arange(b)
    assert mask[rows, targets].all(), "cross_entropy: target outside valid mask"
    neg = np.array(-np.inf, dtype=logits.data.dtype)
    xm = np.where(mask, logits.data, neg)
    m = xm.max(axis=1, keepdims=True)
    e = np.exp(xm - m)
    s = e.sum(axis=1, keepdims=True)
    lse = np.log(s) + m
    nll = lse[rows, 0] - logits.data[rows, targets]
    out = np.asarray(nll.mean(), dtype=logits.data.dtype)

    def bwd(g):
        soft = e / s
        soft[rows, targets] -= 1.0
        _accum(logits, soft * (g / b))

    return _record(logits.tape, out, bwd)


# ------------------------------------------------------------- parameters


class ParamStore:
    """Named parameter arrays with gradient slots and Adam state."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._adam_m: dict[str, np.ndarray] = {}
        self._adam_v: dict[str, np.ndarray] = {}
        self._adam_t = 0

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.params:
            raise ConfigError(f"duplicate parameter {name!r}")
        arr = np.ascontiguousarray(value, dtype=self.dtype)
        self.params[name] = arr
        self.grads[name] = np.zeros_like(arr)

    def leaf(self, tape: Tape, name: str) -> Tensor:
        """Wrap a parameter as a tape leaf; backward adds into self.grads."""
        t = tape.leaf(self.params[name])
        tape._param_leaves.append((self, name, t))
        return t

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[...] = 0

    def adam_step(
        self,
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        """One bias-corrected Adam update; gradients are cleared afterwards."""
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        if not self._adam_m:
            for name, p in self.params.items():
                self._adam_m[name] = np.zeros_like(p)
                self._adam_v[name] = np.zeros_like(p)
        self._adam_t += 1
        t = self._adam_t
        c1 = 1.0 - beta1**t
        c2 = 1.0 - beta2**t
        for name in self.params:
            g = self.grads[name]
            m = self._adam_m[name]
            v = self._adam_v[name]
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * (g * g)
            self.params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
        self.zero_grads()

    def to_dtype(self, dtype) -> "ParamStore":
        """Copy with parameters cast (e.g. float64 for gradient checks)."""
        out = ParamStore(dtype)
        for name, p in self.params.items():
            out.add(name, p)
        return out

    def total_count(self) -> int:
        return sum(p.size for p in self.params.values())


def finite_diff_grad(
    loss_fn: Callable[[], float],
    store: ParamStore,
    name: str,
    flat_index: int,
    h: float = 1e-4,
) -> float:
    """Central difference d(loss)/d(param[flat_index]); restores the value."""
    flat = store.params[name].reshape(-1)
    orig = flat[flat_index].item()
    flat[flat_index] = orig + h
    lp = float(loss_fn())
    flat[flat_index] = orig - h
    lm = float(loss_fn())
    flat[flat_index] = orig
    return (lp - lm) / (2.0 * h)
