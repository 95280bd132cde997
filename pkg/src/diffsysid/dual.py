"""Forward-mode dual numbers carrying a vector of partial derivatives.

A :class:`Dual` holds a value array of shape ``S`` and partials of shape
``S + (d,)``: ``partials[..., j]`` is the derivative of the value with
respect to flat parameter ``j``. A 0-d Dual is a dual scalar.

The rollout kernels in :mod:`diffsysid._kernels` use the same arithmetic
lowered to packed arrays; this class is the inspectable front end used to
seed parameters and map them into an effective model.
"""

from __future__ import annotations

import numpy as np


class Dual:
    __slots__ = ("value", "partials")
    __array_ufunc__ = None  # ndarray <op> Dual defers to the reflected Dual method

    def __init__(self, value, partials):
        value = np.asarray(value, dtype=float)
        partials = np.asarray(partials, dtype=float)
        if partials.shape[:-1] != value.shape:
            raise ValueError(f"partials shape {partials.shape} does not extend value shape {value.shape}")
        self.value = value
        self.partials = partials

    # -- construction ------------------------------------------------------

    @classmethod
    def constant(cls, value, d: int) -> "Dual":
        value = np.asarray(value, dtype=float)
        return cls(value, np.zeros(value.shape + (d,)))

    @classmethod
    def wrap(cls, x, d: int | None = None) -> "Dual":
        if isinstance(x, Dual):
            return x
        if d is None:
            raise ValueError("need the partial dimension to wrap a constant")
        return cls.constant(x, d)

    @property
    def d(self) -> int:
        return self.partials.shape[-1]

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Dual(value={self.value!r}, partials={self.partials!r})"

    def __getitem__(self, idx):
        if not isinstance(idx, tuple):
            idx = (idx,)
        return Dual(self.value[idx], self.partials[idx + (slice(None),)])

    def reshape(self, shape):
        shape = tuple(np.atleast_1d(shape)) if not isinstance(shape, tuple) else shape
        return Dual(self.value.reshape(shape), self.partials.reshape(shape + (self.d,)))

    def sum(self, axis=None):
        if axis is None:
            return Dual(self.value.sum(), self.partials.reshape(-1, self.d).sum(axis=0))
        axis = axis % self.ndim
        return Dual(self.value.sum(axis=axis), self.partials.sum(axis=axis))

    # -- arithmetic ------------------------------------------------------

    def _coerce(self, other):
        if isinstance(other, Dual):
            return other
        return Dual.constant(other, self.d)

    def __neg__(self):
        return Dual(-self.value, -self.partials)

    def __add__(self, other):
        o = self._coerce(other)
        v = self.value + o.value
        return Dual(v, _bcast(self.partials, v) + _bcast(o.partials, v))

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        o = self._coerce(other)
        v = self.value * o.value
        p = self.value[..., None] * o.partials + o.value[..., None] * self.partials
        return Dual(v, _bcast(p, v))

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._coerce(other)
        v = self.value / o.value
        p = (self.partials - v[..., None] * o.partials) / o.value[..., None]
        return Dual(v, _bcast(p, v))

    def __rtruediv__(self, other):
        return self._coerce(other) / self

    def __pow__(self, exponent):
        if isinstance(exponent, Dual):
            return exp(exponent * log(self))
        v = self.value**exponent
        return Dual(v, (exponent * self.value ** (exponent - 1))[..., None] * self.partials)

    def __matmul__(self, other):
        if isinstance(other, Dual):
            v = self.value @ other.value
            p = _matmul_partials(self.partials, other.value, left_dual=True) + _matmul_partials(
                other.partials, self.value, left_dual=False
            )
            return Dual(v, p)
        other = np.asarray(other, dtype=float)
        return Dual(self.value @ other, _matmul_partials(self.partials, other, left_dual=True))

    def __rmatmul__(self, other):
        other = np.asarray(other, dtype=float)
        return Dual(other @ self.value, _matmul_partials(self.partials, other, left_dual=False))


def _bcast(p, v):
    return np.broadcast_to(p, v.shape + (p.shape[-1],)).copy() if p.shape[:-1] != v.shape else p


def _matmul_partials(partials, const, *, left_dual):
    """Partials of ``X @ C`` (left_dual) or ``C @ X`` for a Dual ``X`` and constant ``C``."""
    if left_dual:
        # X (..., n) or (m, n); partials (..., n, d)
        if const.ndim == 1:
            return np.einsum("...nd,n->...d", partials, const)
        return np.einsum("...nd,nk->...kd", partials, const)
    # C (m, n) @ X (n, ...) ; partials (n, ..., d)
    return np.tensordot(const, partials, axes=([const.ndim - 1], [0]))


# -- elementary functions --------------------------------------------------


def _unary(x, f, df):
    if not isinstance(x, Dual):
        return f(x)
    return Dual(f(x.value), df(x.value)[..., None] * x.partials)


def sin(x):
    return _unary(x, np.sin, np.cos)


def cos(x):
    return _unary(x, np.cos, lambda v: -np.sin(v))


def tanh(x):
    return _unary(x, np.tanh, lambda v: 1.0 - np.tanh(v) ** 2)


def exp(x):
    return _unary(x, np.exp, np.exp)


def log(x):
    return _unary(x, np.log, lambda v: 1.0 / v)


def sqrt(x):
    return _unary(x, np.sqrt, lambda v: 0.5 / np.sqrt(v))


def solve(a, b):
    """Solve ``a @ x = b`` where either side may be Dual.

    Partials use the implicit-function rule ``dx = a^{-1} (db - da x)``
    instead of differentiating a factorization.
    """
    if not isinstance(a, Dual) and not isinstance(b, Dual):
        return np.linalg.solve(a, b)
    d = a.d if isinstance(a, Dual) else b.d
    a = Dual.wrap(a, d)
    b = Dual.wrap(b, d)
    x = np.linalg.solve(a.value, b.value)
    if x.ndim == 1:
        rhs = b.partials - np.einsum("ijd,j->id", a.partials, x)
        dx = np.linalg.solve(a.value, rhs)
    else:
        n, k = x.shape
        rhs = b.partials - np.einsum("ijd,jk->ikd", a.partials, x)
        dx = np.linalg.solve(a.value, rhs.reshape(n, k * d)).reshape(n, k, d)
    return Dual(x, dx)


def seed_matrix(dim: int, active=None) -> np.ndarray:
    """Rows are the seed partials of each flat entry; inactive rows are zero."""
    seeds = np.eye(dim)
    if active is not None:
        active = np.asarray(active, dtype=bool)
        seeds[~active] = 0.0
    return seeds


def lift_params(params, active=None):
    """Return ``params`` with every flat entry lifted to a Dual seeded by a unit vector.

    Entries outside ``active`` get zero partials, so any derivative with
    respect to them is exactly zero.
    """
    from .model import ModelParams

    flat = params.flatten()
    theta = Dual(flat, seed_matrix(flat.size, active))
    return ModelParams.unflatten(params.layout, theta)


def lift_vector(values, active=None) -> Dual:
    values = np.asarray(values, dtype=float)
    return Dual(values, seed_matrix(values.size, active))


def jets(x, columns=None) -> np.ndarray:
    """Pack a Dual (or constant) as ``(..., 1 + k)`` with the value in slot 0.

    ``columns`` selects which partial columns travel with the value.
    """
    if isinstance(x, Dual):
        p = x.partials if columns is None else x.partials[..., columns]
        return np.ascontiguousarray(np.concatenate([x.value[..., None], p], axis=-1))
    x = np.asarray(x, dtype=float)
    k = 0 if columns is None else int(np.count_nonzero(columns) if np.asarray(columns).dtype == bool else len(columns))
    out = np.zeros(x.shape + (1 + k,))
    out[..., 0] = x
    return out
