"""Dense tensors and the unfolding / folding index maps.

A tensor of order ``k`` over ``R^d`` is held as an ndarray of shape
``(d,) * k``.  Its flat representation uses the little-endian index map

    flat = i_1 + i_2 * d + ... + i_k * d**(k-1)        (0-based)

which is numpy's Fortran order.  Every reshape in this module goes through
``order="F"`` so that matricization, vectorization and tensorization stay
mutually consistent.
"""

from __future__ import annotations

import contextlib
import itertools
import math
import struct
from dataclasses import dataclass
from functools import reduce

import numpy as np

from .exceptions import ResourceLimitError

_MAX_ENTRIES = 10**7


def max_entries():
    return _MAX_ENTRIES


def set_max_entries(n):
    """Set the dense-allocation cap (number of float64 entries)."""
    global _MAX_ENTRIES
    if n < 1:
        raise ValueError("cap must be positive")
    _MAX_ENTRIES = int(n)


@contextlib.contextmanager
def entry_cap(n):
    """Temporarily change the dense-allocation cap."""
    old = _MAX_ENTRIES
    set_max_entries(n)
    try:
        yield
    finally:
        set_max_entries(old)


def check_cap(d, k):
    n = int(d) ** int(k)
    if n > _MAX_ENTRIES:
        raise ResourceLimitError(
            f"dense tensor with d={d}, k={k} needs {n} entries (cap {_MAX_ENTRIES})"
        )
    return n


@dataclass(frozen=True, eq=False)
class DenseTensor:
    """Order-``k`` real tensor over ``R^d``.

    ``array`` has shape ``(d,) * k``; ``data`` is the flat vector in the
    little-endian flattening order.
    """

    array: np.ndarray
    dim: int

    def __post_init__(self):
        arr = np.asarray(self.array, dtype=float)
        if arr.ndim and any(s != self.dim for s in arr.shape):
            raise ValueError(f"shape {arr.shape} is not ({self.dim},)*{arr.ndim}")
        object.__setattr__(self, "array", arr)

    @property
    def order(self):
        return self.array.ndim

    @property
    def data(self):
        return self.array.ravel(order="F")

    @classmethod
    def from_data(cls, data, dim, order):
        data = np.asarray(data, dtype=float).ravel()
        if data.size != dim**order:
            raise ValueError(f"expected {dim ** order} entries, got {data.size}")
        return cls(data.reshape((dim,) * order, order="F"), dim)

    @classmethod
    def zeros(cls, dim, order):
        check_cap(dim, order)
        return cls(np.zeros((dim,) * order), dim)

    def __getitem__(self, idx):
        return self.array[idx]

    def __add__(self, other):
        _check_same(self, other)
        return DenseTensor(self.array + other.array, self.dim)

    def __sub__(self, other):
        _check_same(self, other)
        return DenseTensor(self.array - other.array, self.dim)

    def __mul__(self, scalar):
        return DenseTensor(self.array * float(scalar), self.dim)

    __rmul__ = __mul__

    def to_bytes(self):
        """Binary dump: int64 LE header ``(d, k)`` then float64 LE data."""
        head = struct.pack("<qq", self.dim, self.order)
        return head + self.data.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, buf):
        d, k = struct.unpack_from("<qq", buf, 0)
        data = np.frombuffer(buf, dtype="<f8", offset=16)
        return cls.from_data(data, d, k)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def _check_same(a, b):
    if a.dim != b.dim or a.order != b.order:
        raise ValueError("tensor dim/order mismatch")


@dataclass(frozen=True, eq=False)
class UnfoldedMatrix:
    """A ``d**l x d**(k-l)`` matricization of an order-``k`` tensor."""

    matrix: np.ndarray
    dim: int
    order: int
    l: int

    @property
    def shape(self):
        return self.matrix.shape

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.matrix, dtype=dtype)


def outer(vs):
    """Product tensor ``vs[0] (x) vs[1] (x) ... (x) vs[-1]``."""
    vs = [np.asarray(v, dtype=float).ravel() for v in vs]
    if not vs:
        raise ValueError("need at least one vector")
    d = vs[0].size
    if any(v.size != d for v in vs):
        raise ValueError("all vectors must share the same dimension")
    check_cap(d, len(vs))
    return DenseTensor(reduce(np.multiply.outer, vs), d)


def sym(T):
    """Average of ``T`` over all index permutations."""
    k = T.order
    if k > 8:
        raise ValueError("sym supports order <= 8")
    if k <= 1:
        return DenseTensor(T.array.copy(), T.dim)
    acc = np.zeros_like(T.array)
    for perm in itertools.permutations(range(k)):
        acc += np.transpose(T.array, perm)
    return DenseTensor(acc / math.factorial(k), T.dim)


def inner(A, B):
    """Contract ``A`` (order k) against the first k indices of ``B``."""
    if A.dim != B.dim:
        raise ValueError("dimension mismatch")
    k, m = A.order, B.order
    if k > m:
        raise ValueError("order of A must not exceed order of B")
    out = np.tensordot(A.array, B.array, axes=(list(range(k)), list(range(k))))
    return DenseTensor(np.asarray(out), A.dim)


def matricize(T, l):
    """Unfold ``T`` into a ``d**l x d**(k-l)`` matrix."""
    k, d = T.order, T.dim
    if not 0 <= l <= k:
        raise ValueError(f"l={l} outside [0, {k}]")
    mat = T.array.reshape(d**l, d ** (k - l), order="F")
    return UnfoldedMatrix(np.ascontiguousarray(mat), d, k, l)


def unmatricize(M):
    """Inverse of :func:`matricize`."""
    d, k = M.dim, M.order
    return DenseTensor(np.asarray(M.matrix).reshape((d,) * k, order="F"), d)


def vectorize_power(w, l):
    """Flattened ``w^{(x) l}``; ``l = 0`` gives ``[1.0]``."""
    w = np.asarray(w, dtype=float).ravel()
    if l < 0:
        raise ValueError("l must be non-negative")
    if l == 0:
        return np.ones(1)
    return outer([w] * l).data


def power_rows(X, l):
    """Row-wise :func:`vectorize_power` for a batch ``X`` of shape (n, d)."""
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    check_cap(d, l)
    out = np.ones((n, 1))
    for _ in range(l):
        # new flat index = old_index * d + i, i.e. the fresh index varies fastest
        out = (out[:, :, None] * X[:, None, :]).reshape(n, -1)
    return out


def tensorize(v, l, d):
    """Reshape a vector of length ``d**l`` into an order-``l`` tensor."""
    v = np.asarray(v, dtype=float).ravel()
    if v.size != d**l:
        raise ValueError(f"length {v.size} != {d}**{l}")
    return DenseTensor(v.reshape((d,) * l, order="F"), d)


def fold_rows(v, d):
    """``d x d**(l-1)`` matrix whose first index is the fastest one of ``v``."""
    v = np.asarray(v, dtype=float).ravel()
    if v.size % d or v.size < d:
        raise ValueError(f"length {v.size} is not a positive multiple of d={d}")
    l = round(math.log(v.size, d)) if d > 1 else 1
    if d > 1 and d**l != v.size:
        raise ValueError(f"length {v.size} is not a power of d={d}")
    return v.reshape(d, v.size // d, order="F")


def frobenius(T):
    return float(np.linalg.norm(T.array.ravel()))
