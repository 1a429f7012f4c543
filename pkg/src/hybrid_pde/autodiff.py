"""Minimal reverse-mode automatic differentiation over numpy arrays.

A :class:`Tape` records every :class:`Var` created from its leaves in
forward order; :meth:`Tape.gradient` walks that record backwards once.

Cotangent convention for complex intermediates: for ``z = x + iy`` the
stored cotangent is ``dL/dx + i dL/dy``. Under this convention the
cotangent of a linear map ``w = A z`` is ``A^H`` applied to the cotangent
of ``w``, and real parents simply keep the real part.

The free functions (:func:`roll`, :func:`fft`, :func:`conv1d_periodic`, ...)
accept plain arrays too and then reduce to the corresponding numpy call, so
solver code written against them runs eagerly or on a tape with identical
floating-point operations.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

Vjp = Callable[[np.ndarray], np.ndarray]


class ConstantLog:
    """Values the tape treats as constants (``alpha``, sub-step sizes).

    A fresh log records them during a forward pass; ``replay()`` returns a log
    that hands the same values back in order, so a perturbed re-evaluation
    (finite differences) uses identical constants.
    """

    def __init__(self, values=None):
        self.values = [] if values is None else list(values)
        self.replaying = values is not None
        self.cursor = 0

    def take(self, compute: Callable[[], object]):
        if self.replaying:
            v = self.values[self.cursor]
            self.cursor += 1
            return v
        v = compute()
        self.values.append(v)
        return v

    def replay(self) -> "ConstantLog":
        return ConstantLog(self.values)


class Tape:
    def __init__(self):
        self.nodes: list[Var] = []
        self.last_backward_order: list[int] = []

    def leaf(self, value) -> "Var":
        return Var(np.array(value, dtype=float, copy=True), self)

    def gradient(self, out: "Var", wrt: Sequence["Var"]) -> list[np.ndarray]:
        if out.tape is not self:
            raise ValueError("output was not recorded on this tape")
        if np.size(out.value) != 1 or np.iscomplexobj(out.value):
            raise ValueError("gradient needs a real scalar output")
        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        grads[out.index] = np.ones_like(out.value)
        keep = {w.index for w in wrt}
        order = []
        for node in reversed(self.nodes[: out.index + 1]):
            g = grads[node.index]
            if g is None:
                continue
            order.append(node.index)
            for parent, vjp in node.parents:
                pg = vjp(g)
                if np.iscomplexobj(pg) and not np.iscomplexobj(parent.value):
                    pg = pg.real
                pg = _unbroadcast(pg, parent.value.shape)
                prev = grads[parent.index]
                grads[parent.index] = pg if prev is None else prev + pg
            if node.parents and node.index not in keep:
                grads[node.index] = None
        self.last_backward_order = order
        result = []
        for w in wrt:
            g = grads[w.index]
            result.append(np.zeros_like(w.value) if g is None else g)
        return result


class Var:
    """An array value recorded on a tape."""

    __array_ufunc__ = None  # make numpy defer to the reflected operators
    __slots__ = ("value", "tape", "parents", "index")

    def __init__(self, value: np.ndarray, tape: Tape, parents: tuple = ()):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    shape = property(lambda self: self.value.shape)
    ndim = property(lambda self: self.value.ndim)
    dtype = property(lambda self: self.value.dtype)

    def __repr__(self):
        return f"Var(shape={self.value.shape}, index={self.index})"

    def __add__(self, other):
        return _binary(self, other, np.add, lambda g, a, b: g, lambda g, a, b: g)

    __radd__ = __add__

    def __sub__(self, other):
        return _binary(self, other, np.subtract, lambda g, a, b: g, lambda g, a, b: -g)

    def __rsub__(self, other):
        return _binary(other, self, np.subtract, lambda g, a, b: g, lambda g, a, b: -g)

    def __mul__(self, other):
        return _binary(
            self, other, np.multiply,
            lambda g, a, b: g * np.conj(b),
            lambda g, a, b: g * np.conj(a),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _binary(
            self, other, np.true_divide,
            lambda g, a, b: g / np.conj(b),
            lambda g, a, b: -g * np.conj(a / (b * b)),
        )

    def __rtruediv__(self, other):
        return _binary(
            other, self, np.true_divide,
            lambda g, a, b: g / np.conj(b),
            lambda g, a, b: -g * np.conj(a / (b * b)),
        )

    def __neg__(self):
        return Var(-self.value, self.tape, ((self, lambda g: -g),))

    def __pow__(self, p):
        if isinstance(p, Var):
            raise TypeError("only constant exponents are supported")
        x = self.value
        return Var(x ** p, self.tape, ((self, lambda g: g * np.conj(p * x ** (p - 1))),))

    def __getitem__(self, idx):
        shape = self.value.shape

        def vjp(g):
            out = np.zeros(shape, dtype=np.result_type(g, self.value))
            np.add.at(out, idx, g)
            return out

        return Var(self.value[idx], self.tape, ((self, vjp),))

    def reshape(self, *shape):
        old = self.value.shape
        return Var(self.value.reshape(*shape), self.tape, ((self, lambda g: g.reshape(old)),))


def _binary(a, b, fwd, vjp_a, vjp_b):
    va, vb = value(a), value(b)
    out = fwd(va, vb)
    parents = []
    if isinstance(a, Var):
        parents.append((a, lambda g: vjp_a(g, va, vb)))
    if isinstance(b, Var):
        parents.append((b, lambda g: vjp_b(g, va, vb)))
    tape = a.tape if isinstance(a, Var) else b.tape
    if isinstance(a, Var) and isinstance(b, Var) and a.tape is not b.tape:
        raise ValueError("operands live on different tapes")
    return Var(out, tape, tuple(parents))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def value(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x)


def is_var(x) -> bool:
    return isinstance(x, Var)


def _unary(x, out, vjp: Vjp):
    return Var(out, x.tape, ((x, vjp),))


def roll(x, shift: int):
    if not isinstance(x, Var):
        return np.roll(x, shift, axis=-1)
    return _unary(x, np.roll(x.value, shift, axis=-1), lambda g: np.roll(g, -shift, axis=-1))


def fft(x):
    if not isinstance(x, Var):
        return np.fft.fft(x, axis=-1)
    n = x.value.shape[-1]
    return _unary(x, np.fft.fft(x.value, axis=-1), lambda g: n * np.fft.ifft(g, axis=-1))


def ifft(x):
    if not isinstance(x, Var):
        return np.fft.ifft(x, axis=-1)
    n = x.value.shape[-1]
    return _unary(x, np.fft.ifft(x.value, axis=-1), lambda g: np.fft.fft(g, axis=-1) / n)


def real(x):
    if not isinstance(x, Var):
        return np.real(x)
    return _unary(x, np.real(x.value), lambda g: g.astype(complex))


def relu(x):
    if not isinstance(x, Var):
        return np.maximum(x, 0.0)
    mask = x.value > 0
    return _unary(x, np.maximum(x.value, 0.0), lambda g: g * mask)


def sum(x, axis=None, keepdims: bool = False):  # noqa: A001
    if not isinstance(x, Var):
        return np.sum(x, axis=axis, keepdims=keepdims)
    shape = x.value.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, shape).copy()

    return _unary(x, np.sum(x.value, axis=axis, keepdims=keepdims), vjp)


def mean(x, axis=None, keepdims: bool = False):
    v = value(x)
    count = v.size if axis is None else np.prod([v.shape[a] for a in np.atleast_1d(axis)])
    return sum(x, axis=axis, keepdims=keepdims) * (1.0 / count)


def _shift_stack(x: np.ndarray, width: int) -> np.ndarray:
    # out[..., j, i] = x[..., (i + half - j) mod n]
    half = width // 2
    return np.stack([np.roll(x, j - half, axis=-1) for j in range(width)], axis=-2)


def conv1d_periodic(x, weight, bias):
    """Periodic 1D convolution ``out[b,o,i] = bias[o] + sum_{c,j} W[o,c,j] x[b,c,i+h-j]``.

    ``x`` is ``(batch, c_in, n)``, ``weight`` is ``(c_out, c_in, width)`` with
    odd width and ``h = width // 2``; any argument may be a :class:`Var`.
    """
    xv, wv, bv = value(x), value(weight), value(bias)
    width = wv.shape[-1]
    xs = _shift_stack(xv, width)
    out = np.einsum("ocj,bcji->boi", wv, xs) + bv[None, :, None]
    if not any(isinstance(t, Var) for t in (x, weight, bias)):
        return out
    tape = next(t.tape for t in (x, weight, bias) if isinstance(t, Var))
    half = width // 2
    parents = []
    if isinstance(x, Var):
        def vjp_x(g):
            gs = np.einsum("ocj,boi->bcji", wv, g)
            return sum_rolls(gs, half)
        parents.append((x, vjp_x))
    if isinstance(weight, Var):
        parents.append((weight, lambda g: np.einsum("boi,bcji->ocj", g, xs)))
    if isinstance(bias, Var):
        parents.append((bias, lambda g: g.sum(axis=(0, 2))))
    return Var(out, tape, tuple(parents))


def sum_rolls(gs: np.ndarray, half: int) -> np.ndarray:
    total = np.roll(gs[..., 0, :], half, axis=-1)
    for j in range(1, gs.shape[-2]):
        total = total + np.roll(gs[..., j, :], half - j, axis=-1)
    return total
