"""Normalized probabilist's Hermite polynomials and Hermite tensors.

``he_k`` denotes the normalized polynomial, orthonormal under N(0, 1):
``E[he_j(z) he_k(z)] = 1{j == k}``.  ``He_k(x)`` is the order-k Hermite
tensor of ``x in R^d``; for a unit vector ``w``,
``<He_k(x), w^{(x)k}> = he_k(w . x)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaln, roots_hermitenorm, roots_legendre

from .tensors import DenseTensor, check_cap

MAX_DEGREE = 64


def _check_degree(k):
    if not 0 <= int(k) <= MAX_DEGREE or int(k) != k:
        raise ValueError(f"degree must be an integer in [0, {MAX_DEGREE}], got {k}")
    return int(k)


def he_table(K, z):
    """Stack ``he_0(z) .. he_K(z)`` along a new leading axis.

    Uses the normalized three-term recurrence
    ``sqrt(k+1) he_{k+1} = z he_k - sqrt(k) he_{k-1}``, which never forms a
    factorial.
    """
    K = _check_degree(K)
    z = np.asarray(z, dtype=float)
    out = np.empty((K + 1,) + z.shape)
    out[0] = 1.0
    if K >= 1:
        out[1] = z
    for k in range(1, K):
        out[k + 1] = (z * out[k] - math.sqrt(k) * out[k - 1]) / math.sqrt(k + 1)
    return out


def hermite_eval(k, z):
    """``he_k(z)``; ``z`` may be a scalar or an array."""
    val = he_table(k, z)[-1]
    return float(val) if val.ndim == 0 else val


@dataclass(frozen=True)
class HermiteSeries:
    max_degree: int
    values: np.ndarray

    def __getitem__(self, k):
        return self.values[k]

    def __len__(self):
        return self.max_degree + 1


def hermite_eval_all(K, z):
    """All of ``he_0(z) .. he_K(z)`` at a scalar point."""
    return HermiteSeries(_check_degree(K), he_table(K, float(z)))


def hermite_tensor_dense(x, k):
    """Materialize ``He_k(x)`` from the multiplicity formula.

    Entry ``(i_1..i_k)`` is ``sqrt(prod_j alpha_j! / k!) prod_j he_{alpha_j}(x_j)``
    with ``alpha_j`` the number of times ``j`` occurs among the indices.
    """
    x = np.asarray(x, dtype=float).ravel()
    d = x.size
    k = _check_degree(k)
    check_cap(d, k)
    if k == 0:
        return DenseTensor(np.array(1.0), d)
    idx = np.indices((d,) * k).reshape(k, -1).T  # C order, entries (i_1..i_k)
    counts = np.zeros((idx.shape[0], d), dtype=np.int64)
    rows = np.arange(idx.shape[0])
    for col in range(k):
        np.add.at(counts, (rows, idx[:, col]), 1)
    table = he_table(k, x)  # (k+1, d)
    vals = table[counts, np.arange(d)[None, :]].prod(axis=1)
    weight = np.exp(0.5 * (gammaln(counts + 1).sum(axis=1) - gammaln(k + 1)))
    return DenseTensor((weight * vals).reshape((d,) * k), d)


def contract_power(x, w, k):
    """``<He_k(x), w^{(x)k}>`` via ``|w|^k he_k(w.x / |w|)``.

    ``x`` may be a single point or a batch of shape (n, d).
    """
    k = _check_degree(k)
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float).ravel()
    r = float(np.linalg.norm(w))
    if r == 0.0:
        val = np.full(x.shape[:-1], 1.0 if k == 0 else 0.0)
    else:
        val = r**k * hermite_eval(k, x @ (w / r))
    return float(val) if np.ndim(val) == 0 else val


def contract_power_grad(x, w, k):
    """``<He_k(x), w^{(x)(k-1)}>``, a vector in ``R^d`` (batch: (n, d)).

    Closed form, with ``u = w / |w|`` and ``s = u . x``::

        |w|^(k-1) [ he_k(s) u + he_{k-1}(s) (x - s u) / sqrt(k) ]

    which equals ``(1/k) grad_w <He_k(x), w^{(x)k}>``.
    """
    k = _check_degree(k)
    if k == 0:
        raise ValueError("contract_power_grad needs k >= 1")
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float).ravel()
    r = float(np.linalg.norm(w))
    if r == 0.0:
        return x.copy() if k == 1 else np.zeros_like(x)
    u = w / r
    s = x @ u
    tab = he_table(k, s)
    hk, hk1 = tab[k], tab[k - 1]
    perp = x - np.multiply.outer(s, u)
    out = np.multiply.outer(hk, u) + (hk1 / math.sqrt(k))[..., None] * perp
    return r ** (k - 1) * out


@lru_cache(maxsize=None)
def pairings(k, j):
    """All ways to pick ``j`` disjoint unordered pairs from positions 0..k-1.

    Returns a tuple of ``(pairs, rest)`` with ``rest`` the sorted unpaired
    positions.
    """
    out = []

    def rec(avail, chosen, need):
        if need == 0:
            used = {p for pair in chosen for p in pair}
            out.append((tuple(chosen), tuple(p for p in range(k) if p not in used)))
            return
        for a_i, a in enumerate(avail):
            for b in avail[a_i + 1 :]:
                if chosen and (a, b) <= chosen[-1]:
                    continue
                rest = [p for p in avail if p not in (a, b)]
                rec(rest, chosen + [(a, b)], need - 1)

    rec(list(range(k)), [], j)
    return tuple(out)


def pairing_count(k, j):
    """``k! / (2^j j! (k-2j)!)``, the number of ``j``-pairings of ``k`` slots."""
    return math.factorial(k) // (2**j * math.factorial(j) * math.factorial(k - 2 * j))


def hermite_contract(X, A):
    """``<He_k(x_i), A>`` for every row of ``X`` (shape (n, d)).

    Works from the expansion of the unnormalized Hermite tensor as a signed
    sum over pairings of identity factors, applied to ``sym(A)`` through its
    partial traces, so the cost per sample is ``O(d^k)`` without building
    ``He_k(x_i)``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    k, d = A.order, A.dim
    if X.shape[1] != d:
        raise ValueError("dimension mismatch")
    if k == 0:
        return np.full(X.shape[0], float(A.array))
    from .tensors import sym

    S = sym(A).array
    total = np.zeros(X.shape[0])
    traced = S
    for j in range(k // 2 + 1):
        m = k - 2 * j
        coef = (-1) ** j * pairing_count(k, j)
        total += coef * _contract_rows(traced, X, m)
        if m >= 2:
            traced = np.trace(traced, axis1=0, axis2=1)
    return total / math.sqrt(math.factorial(k))


def _contract_rows(B, X, m):
    """``<x_i^{(x)m}, B>`` per row."""
    if m == 0:
        return np.full(X.shape[0], float(B))
    n, d = X.shape
    cur = X @ B.reshape(d, -1)  # contract first index
    for _ in range(m - 1):
        cur = np.einsum("ni,nij->nj", X, cur.reshape(n, d, -1))
    return cur.reshape(n)


def hermite_coefficients(link, K, quad_order=None, breakpoints=None, half_width=16.0):
    """``c_k = E[link(z) he_k(z)]`` for ``k = 0..K`` by quadrature.

    Smooth links use probabilists' Gauss-Hermite nodes for the weight
    ``exp(-z^2 / 2)``, with weights divided by ``sqrt(2 pi)``.  Links with kinks should pass their ``breakpoints``;
    the integral is then split there and each piece on
    ``[-half_width, half_width]`` gets its own Gauss-Legendre rule, which is
    exact to rounding for piecewise-polynomial links.
    """
    K = _check_degree(K)
    if quad_order is None:
        quad_order = max(2 * K + 2, 200)
    if quad_order < 2 * K + 2:
        raise ValueError(f"quad_order={quad_order} < 2K+2={2 * K + 2}")
    if breakpoints:
        z, wts = _composite_nodes(tuple(sorted(breakpoints)), int(quad_order), half_width)
    else:
        z, wts = _gauss_nodes(int(quad_order))
    fz = np.asarray(link(z), dtype=float)
    return he_table(K, z) @ (wts * fz)


@lru_cache(maxsize=32)
def _gauss_nodes(order):
    z, w = roots_hermitenorm(order)
    return z, w / math.sqrt(2 * math.pi)


@lru_cache(maxsize=32)
def _composite_nodes(breakpoints, order, half_width):
    t, wt = roots_legendre(order)
    edges = sorted({-half_width, half_width, *[b for b in breakpoints if abs(b) < half_width]})
    zs, ws = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        z = 0.5 * (b - a) * t + 0.5 * (a + b)
        zs.append(z)
        ws.append(wt * 0.5 * (b - a) * np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi))
    return np.concatenate(zs), np.concatenate(ws)


def hermite_coefficients_mc(link, K, n=10**6, rng=None, chunk=2**18):
    """Monte Carlo estimate of ``c_0..c_K`` with per-coefficient standard errors."""
    K = _check_degree(K)
    rng = np.random.default_rng(rng)
    s1 = np.zeros(K + 1)
    s2 = np.zeros(K + 1)
    left = int(n)
    while left > 0:
        m = min(chunk, left)
        z = rng.standard_normal(m)
        terms = he_table(K, z) * np.asarray(link(z), dtype=float)
        s1 += terms.sum(axis=1)
        s2 += (terms**2).sum(axis=1)
        left -= m
    mean = s1 / n
    var = np.maximum(s2 / n - mean**2, 0.0)
    return mean, np.sqrt(var / n)
