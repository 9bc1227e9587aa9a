"""Warm start from the unfolded degree-k Chow tensor.

The empirical Chow tensor ``(1/n) sum_i y_i He_k(x_i)`` is unfolded into a
``d**l x d**(k-l)`` matrix (``l = k // 2``).  Its top left singular vector is
folded into a ``d x d**(l-1)`` matrix whose own top left singular vector is
the initial direction.
"""

from __future__ import annotations

import json
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._parallel import chunk_bounds, ordered_map
from .evaluation import alignment as _alignment
from .exceptions import DegenerateInputError
from .hermite import contract_power, pairings
from .tensors import UnfoldedMatrix, check_cap, fold_rows, power_rows

FULL_SVD_LIMIT = 512
ACC_CHUNK = 4096
DRAW_CHUNK = 2**16


class ChowAccumulator:
    """Streaming estimate of the unfolded Chow matrix.

    Keeps the unfolded top-degree moment ``sum y x^{(x)k}`` and the lower
    moments ``sum y x^{(x)(k-2j)}``; the Hermite correction terms are added
    once in :meth:`matrix`.
    """

    def __init__(self, d, k, l=None, n_threads=None, chunk=ACC_CHUNK):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.d, self.k = int(d), int(k)
        self.l = k // 2 if l is None else int(l)
        if not 0 <= self.l <= k:
            raise ValueError("l out of range")
        if k >= 2:
            check_cap(d, k)
        else:
            check_cap(d, max(self.l, k - self.l))
        self.n_threads = n_threads
        self.chunk = chunk
        self.n = 0
        self.top = np.zeros((d**self.l, d ** (k - self.l)))
        self.lower = {k - 2 * j: np.zeros(d ** (k - 2 * j)) for j in range(1, k // 2 + 1)}

    def _partial(self, X, y):
        U = power_rows(X, self.l)
        V = power_rows(X, self.k - self.l) if self.k - self.l != self.l else U
        top = U.T @ (y[:, None] * V)
        low = {m: power_rows(X, m).T @ y for m in self.lower}
        return top, low

    def update(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float).ravel()
        if X.shape[0] != y.size or X.shape[1] != self.d:
            raise ValueError("X / y shape mismatch")
        parts = ordered_map(
            lambda b: self._partial(X[b[0] : b[1]], y[b[0] : b[1]]),
            chunk_bounds(y.size, self.chunk),
            self.n_threads,
        )
        for top, low in parts:
            self.top += top
            for m in low:
                self.lower[m] += low[m]
        self.n += y.size
        return self

    def matrix(self):
        if self.n == 0:
            raise DegenerateInputError("no samples accumulated")
        d, k, l = self.d, self.k, self.l
        mat = self.top / self.n
        if self.lower:
            corr = np.zeros((d,) * k)
            eye = np.eye(d)
            letters = "abcdefghijklmnopqrstuvwxyz"
            for j in range(1, k // 2 + 1):
                m = k - 2 * j
                S = (self.lower[m] / self.n).reshape((d,) * m, order="F")
                for pairs, rest in pairings(k, j):
                    ops = [S] + [eye] * j
                    subs = ["".join(letters[p] for p in rest)] + [letters[a] + letters[b] for a, b in pairs]
                    term = np.einsum(",".join(subs) + "->" + letters[:k], *ops)
                    corr += (-1) ** j * term
            mat = mat + corr.reshape(d**l, d ** (k - l), order="F")
        mat = mat / math.sqrt(math.factorial(k))
        return UnfoldedMatrix(np.ascontiguousarray(mat), d, k, l)


def chow_matrix(X, y, k, l=None, n_threads=None):
    """Unfolded empirical Chow matrix ``mat_l((1/n) sum_i y_i He_k(x_i))``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] == 0:
        raise DegenerateInputError("empty sample set")
    return ChowAccumulator(X.shape[1], k, l, n_threads).update(X, y).matrix()


def top_left_singular(M, method="auto", n_iter=200, seed=0):
    """Top left singular vector with the two leading singular values.

    The sign is fixed so the largest-magnitude coordinate is positive.
    ``method`` is ``"full"``, ``"power"`` or ``"auto"`` (full SVD when the
    smaller side is at most 512).
    """
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M[:, None]
    if not np.any(M):
        raise DegenerateInputError("zero matrix has no top singular vector")
    if method == "auto":
        method = "full" if min(M.shape) <= FULL_SVD_LIMIT else "power"
    if method == "full":
        U, s, _ = np.linalg.svd(M, full_matrices=False)
        v, s1 = U[:, 0], float(s[0])
        s2 = float(s[1]) if s.size > 1 else 0.0
    elif method == "power":
        v, s1 = _power(M, n_iter, np.random.default_rng(seed), None)
        if min(M.shape) > 1:
            _, s2 = _power(M, n_iter, np.random.default_rng(seed + 1), v)
        else:
            s2 = 0.0
    else:
        raise ValueError(f"unknown method {method!r}")
    v = v / np.linalg.norm(v)
    if v[np.argmax(np.abs(v))] < 0:
        v = -v
    return v, s1, s2


def _power(M, n_iter, rng, deflate):
    v = rng.standard_normal(M.shape[0])
    for _ in range(n_iter):
        if deflate is not None:
            v -= (v @ deflate) * deflate
        v = M @ (M.T @ v)
        nv = np.linalg.norm(v)
        if nv == 0:
            return v, 0.0
        v /= nv
    if deflate is not None:
        v -= (v @ deflate) * deflate
        v /= np.linalg.norm(v)
    return v, float(np.linalg.norm(M.T @ v))


@dataclass
class InitConfig:
    k: Optional[int] = None
    eps: float = 0.01
    eps0: Optional[float] = None
    n_override: Optional[int] = None
    sample_constant: float = 1.0
    svd: str = "auto"
    power_iters: int = 200
    seed: int = 0
    holdout: Optional[int] = None
    n_threads: Optional[int] = None

    def __post_init__(self):
        if self.eps <= 0 or (self.eps0 is not None and self.eps0 <= 0):
            raise ValueError("eps and eps0 must be positive")
        if self.k is not None and self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass
class InitReport:
    w0: np.ndarray
    v_hat: np.ndarray
    sigma1: float
    sigma2: float
    n_used: int
    alignment: Optional[float] = None
    wall_time: float = field(default=0.0, compare=False)

    def to_dict(self, timing=True):
        out = {
            "w0": [float(c) for c in self.w0],
            "sigma1": float(self.sigma1),
            "sigma2": float(self.sigma2),
            "n_used": int(self.n_used),
            "alignment": None if self.alignment is None else float(self.alignment),
        }
        if timing:
            out["wall_time"] = self.wall_time
        return out

    def to_json(self, timing=True):
        return json.dumps(self.to_dict(timing), sort_keys=True)


def default_eps0(link, k=None):
    k = link.k_star if k is None else k
    return abs(link.c_kstar) / (256 * k)


def init_sample_size(link, d, k=None, eps=0.01, eps0=None, sample_constant=1.0):
    """``e^k log^k(B_4/eps) d^(k-l) / eps0^2 + 1/eps``, times ``sample_constant``."""
    k = link.k_star if k is None else k
    eps0 = default_eps0(link, k) if eps0 is None else eps0
    l = k // 2
    logt = max(math.log(link.B4 / eps), 1.0)
    rate = math.e**k * logt**k * d ** (k - l) / eps0**2 + 1.0 / eps
    return max(1, int(math.ceil(sample_constant * rate)))


def _signed_truncated_loss(X, y, w, k, c_sign):
    return 2.0 * (1.0 - c_sign * float(np.mean(y * contract_power(X, w, k))))


def init_tensor_pca(sampler, cfg, link, w_star=None):
    """Run the Chow-tensor initializer against a sampler and report."""
    t0 = time.perf_counter()
    k = cfg.k or link.k_star
    d = sampler.dim
    n = cfg.n_override or init_sample_size(link, d, k, cfg.eps, cfg.eps0, cfg.sample_constant)
    acc = ChowAccumulator(d, k, n_threads=cfg.n_threads)
    left = int(n)
    while left > 0:
        m = min(DRAW_CHUNK, left)
        acc.update(*sampler.draw(m))
        left -= m
    M = acc.matrix()
    n_used = int(n)
    if k == 1:
        g = M.matrix.ravel()
        s1 = float(np.linalg.norm(g))
        if s1 == 0:
            raise DegenerateInputError("empirical Chow vector is zero")
        u, v_hat, s2 = g / s1, np.ones(1), 0.0
    else:
        v_hat, s1, s2 = top_left_singular(M.matrix, cfg.svd, cfg.power_iters, cfg.seed)
        u, _, _ = top_left_singular(fold_rows(v_hat, d), "full")
    if k % 2 == 1:
        # odd degree: +u and -u give different truncated losses
        n_hold = cfg.holdout or max(1000, n_used // 10)
        Xh, yh = sampler.draw(n_hold)
        n_used += n_hold
        c_sign = 1.0 if link.coeffs[k] >= 0 else -1.0
        if _signed_truncated_loss(Xh, yh, -u, k, c_sign) < _signed_truncated_loss(Xh, yh, u, k, c_sign):
            u = -u
    u = u / np.linalg.norm(u)
    al = None if w_star is None else _alignment(u, w_star, link)
    return InitReport(u, v_hat, s1, s2, n_used, al, time.perf_counter() - t0)


def pca_solve(sampler, link, eps, sample_constant=1.0, n_override=None, w_star=None, n_threads=None):
    """Use the initializer alone as a learner with ``eps0 = c_k* eps / 16``."""
    if eps > 1 / 64:
        warnings.warn(f"eps={eps} exceeds 1/64; the accuracy guarantee needs eps <= 1/64")
    cfg = InitConfig(
        k=link.k_star,
        eps=eps,
        eps0=abs(link.c_kstar) * eps / 16,
        n_override=n_override,
        sample_constant=sample_constant,
        n_threads=n_threads,
    )
    return init_tensor_pca(sampler, cfg, link, w_star).w0
