"""Dense float64 tensors with a reverse-mode tape.

Operations record themselves on the innermost active :class:`Tape`; outside a
tape they run as plain numpy (inference mode).  ``backward`` walks the tape in
exact reverse order of recording and sums gradients over shared uses.
"""

from __future__ import annotations

import threading
from typing import Iterable, Sequence

import numpy as np


class AutogradError(Exception):
    pass


class NotScalar(AutogradError):
    pass


class DetachedLoss(AutogradError):
    pass


class ShapeMismatch(AutogradError, ValueError):
    pass


class NonFiniteValue(AutogradError, ValueError):
    pass


class EmptyInput(AutogradError, ValueError):
    pass


class Tensor:
    """Immutable float64 array plus autograd bookkeeping."""

    __slots__ = ("data", "requires_grad", "__weakref__")

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteValue("tensor values must be finite")
        self.data = arr
        self.requires_grad = requires_grad

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = requires_grad
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def item(self) -> float:
        if self.data.size != 1:
            raise NotScalar(f"expected a single value, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, False)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None):
        return tsum(self, axis)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


# --------------------------------------------------------------------------
# tape


class _Node:
    __slots__ = ("outputs", "inputs", "backward")

    def __init__(self, outputs: tuple[Tensor, ...], inputs: tuple[Tensor, ...], backward):
        self.outputs = outputs
        self.inputs = inputs
        self.backward = backward


_local = threading.local()


def _stack() -> list:
    st = getattr(_local, "tapes", None)
    if st is None:
        st = _local.tapes = []
    return st


def active_tape() -> "Tape | None":
    st = _stack()
    return st[-1] if st else None


class Tape:
    """Ordered record of primitive applications.

    Single-owner: use one tape per thread.  Entering the context makes it the
    recording target for ops on the current thread.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        st = _stack()
        if not st or st[-1] is not self:
            raise AutogradError("tape stack corrupted")
        st.pop()
        return False

    def __len__(self) -> int:
        return len(self.nodes)


class no_tape:
    """Temporarily suspend recording (e.g. for value-only evaluation)."""

    def __enter__(self):
        self._saved = list(_stack())
        _stack().clear()
        return self

    def __exit__(self, *exc):
        _stack().extend(self._saved)
        return False


def _record(out_data, inputs: Sequence[Tensor], backward) -> Tensor:
    tape = active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(out_data, track)
    if track:
        tape.nodes.append(_Node((out,), tuple(inputs), backward))
    return out


def _record_multi(out_datas, inputs: Sequence[Tensor], backward) -> tuple[Tensor, ...]:
    tape = active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    outs = tuple(Tensor._wrap(d, track) for d in out_datas)
    if track:
        tape.nodes.append(_Node(outs, tuple(inputs), backward))
    return outs


def backward(loss: Tensor, tape: Tape, wrt: Iterable[Tensor] | None = None) -> dict[int, np.ndarray] | list[np.ndarray]:
    """Reverse pass from a scalar ``loss``.

    With ``wrt`` given, returns one gradient array per tensor (zeros for
    tensors the loss does not depend on).  Without it, returns the raw map from
    ``id(tensor)`` to gradient for every leaf reached.
    """
    if loss.data.size != 1:
        raise NotScalar(f"loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise DetachedLoss("loss was not computed from any recorded parameter")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        gouts = [grads.pop(id(o), None) for o in node.outputs]
        if all(g is None for g in gouts):
            continue
        if len(node.outputs) == 1:
            gin = node.backward(gouts[0])
        else:
            gouts = [np.zeros_like(o.data) if g is None else g for o, g in zip(node.outputs, gouts)]
            gin = node.backward(*gouts)
        for inp, g in zip(node.inputs, gin):
            if g is None or not inp.requires_grad:
                continue
            key = id(inp)
            prev = grads.get(key)
            if prev is None:
                grads[key] = np.array(g, dtype=np.float64, copy=True).reshape(inp.data.shape)
            else:
                prev += g
    if wrt is None:
        return grads
    return [grads.get(id(t), np.zeros_like(t.data)) for t in wrt]


# --------------------------------------------------------------------------
# primitives


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.data.shape, b.data.shape
    return _record(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.data.shape, b.data.shape
    return _record(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _record(ad * bd, (a, b), lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def neg(a: Tensor) -> Tensor:
    return _record(-a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, k: float) -> Tensor:
    return _record(a.data * k, (a,), lambda g: (g * k,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim == 0 or bd.ndim == 0 or ad.shape[-1] != bd.shape[0]:
        raise ShapeMismatch(f"matmul {ad.shape} @ {bd.shape}")
    out = ad @ bd

    def bw(g):
        if ad.ndim == 1 and bd.ndim == 1:
            return g * bd, g * ad
        if ad.ndim == 1:
            return bd @ g, np.outer(ad, g)
        if bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        return g @ bd.T, ad.T @ g

    return _record(out, (a, b), bw)


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return _record(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _record(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _record(a.data * mask, (a,), lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _record(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _record(np.log(ad), (a,), lambda g: (g / ad,))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _record(ad * ad, (a,), lambda g: (2.0 * g * ad,))


def tsum(a: Tensor, axis=None) -> Tensor:
    shape = a.data.shape
    out = a.data.sum(axis=axis)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape),)

    return _record(np.asarray(out), (a,), bw)


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return scale(tsum(a, axis), 1.0 / n)


def getitem(a: Tensor, idx) -> Tensor:
    shape = a.data.shape
    out = a.data[idx]

    basic = _is_basic_index(idx)

    def bw(g):
        full = np.zeros(shape)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _record(np.array(out), (a,), bw)


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def take_rows(a: Tensor, ids: Sequence[int]) -> Tensor:
    """Row gather (embedding lookup); gradients scatter-add back."""
    ids = np.asarray(ids, dtype=np.int64)
    shape = a.data.shape

    def bw(g):
        full = np.zeros(shape)
        np.add.at(full, ids, g)
        return (full,)

    return _record(a.data[ids], (a,), bw)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.data.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]
    out = np.concatenate([p.data for p in parts], axis=axis)
    return _record(out, parts, lambda g: tuple(np.split(g, cuts, axis=axis)))


def stack(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out = np.stack([p.data for p in parts], axis=axis)
    n = len(parts)
    return _record(out, parts, lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, shifted by the max for stability."""
    if x.data.shape[-1] == 0:
        raise EmptyInput("softmax of an empty vector")
    out = _softmax(x.data)

    def bw(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _record(out, (x,), bw)


def log_softmax(x: Tensor) -> Tensor:
    if x.data.shape[-1] == 0:
        raise EmptyInput("log_softmax of an empty vector")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return _record(out, (x,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, Wx: Tensor, Wh: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """Fused LSTM step with gate order (i, f, o, g).

    ``z = x @ Wx + h @ Wh + b``; ``c' = f*c + i*g``; ``h' = o*tanh(c')``.
    """
    H = h.data.shape[-1]
    if Wx.data.shape != (x.data.shape[-1], 4 * H) or Wh.data.shape != (H, 4 * H) or b.data.shape != (4 * H,):
        raise ShapeMismatch(
            f"lstm_cell: x{x.data.shape} h{h.data.shape} Wx{Wx.data.shape} Wh{Wh.data.shape} b{b.data.shape}"
        )
    if c.data.shape != h.data.shape:
        raise ShapeMismatch(f"lstm_cell: cell {c.data.shape} vs hidden {h.data.shape}")
    xd, hd, cd = x.data, h.data, c.data
    z = xd @ Wx.data + hd @ Wh.data + b.data
    i = _sigmoid(z[..., :H])
    f = _sigmoid(z[..., H : 2 * H])
    o = _sigmoid(z[..., 2 * H : 3 * H])
    gg = np.tanh(z[..., 3 * H :])
    c2 = f * cd + i * gg
    tc = np.tanh(c2)
    h2 = o * tc
    Whd, Wxd = Wh.data, Wx.data

    def bw(gh, gc):
        dc = gc + gh * o * (1.0 - tc * tc)
        dz = np.concatenate(
            [
                dc * gg * i * (1.0 - i),
                dc * cd * f * (1.0 - f),
                gh * tc * o * (1.0 - o),
                dc * i * (1.0 - gg * gg),
            ],
            axis=-1,
        )
        if dz.ndim == 1:
            gWx, gWh, gb = np.outer(xd, dz), np.outer(hd, dz), dz
        else:
            gWx, gWh, gb = xd.T @ dz, hd.T @ dz, dz.sum(axis=0)
        return dz @ Wxd.T, dz @ Whd.T, dc * f, gWx, gWh, gb

    h_out, c_out = _record_multi((h2, c2), (x, h, c, Wx, Wh, b), bw)
    return h_out, c_out


# --------------------------------------------------------------------------
# numpy helpers shared with non-differentiable code


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def softmax_np(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] == 0:
        raise EmptyInput("softmax of an empty vector")
    return _softmax(x)

