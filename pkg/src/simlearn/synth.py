"""Synthetic single-index problems with Gaussian marginals and label noise.

Labels are ``y = sigma(w* . x) + noise(x)`` where the noise model is built so
that ``E[noise^2] = Q`` exactly.  ``Q`` upper-bounds the best achievable
square loss and is what the experiments report in place of ``opt``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Union

import numpy as np

from ._parallel import chunk_bounds, ordered_map
from .hermite import hermite_contract, hermite_eval
from .links import LinkSpec, make_link
from .tensors import DenseTensor, check_cap, outer, sym

SHARD_SIZE = 8192


def _seedseq(seed, *key):
    """Child seed sequence ``key`` of ``seed`` (an int or a SeedSequence)."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + key)
    return np.random.SeedSequence(int(seed), spawn_key=key)


def orthogonal_unit(w, seed):
    """Seeded unit vector orthogonal to ``w`` (one Gram-Schmidt step)."""
    rng = np.random.default_rng(seed)
    w = np.asarray(w, dtype=float)
    if w.size < 2:
        raise ValueError("need d >= 2 for an orthogonal direction")
    g = rng.standard_normal(w.size)
    g -= (g @ w) * w
    g -= (g @ w) * w
    return g / np.linalg.norm(g)


def _check_perp(v, w_star):
    if abs(float(np.dot(v, w_star))) > 1e-10:
        raise ValueError("noise direction must be orthogonal to w*")


@dataclass(frozen=True)
class Realizable:
    Q: float = 0.0
    kind = "realizable"

    def noise(self, X, rng):
        return np.zeros(X.shape[0])

    def to_dict(self):
        return {"type": self.kind}


@dataclass(frozen=True, eq=False)
class OrthogonalHermite:
    """``sqrt(Q) he_m(v . x)`` with ``v`` orthogonal to ``w*``."""

    m: int
    v: np.ndarray
    Q: float
    kind = "orthogonal-hermite"

    def noise(self, X, rng):
        return math.sqrt(self.Q) * hermite_eval(self.m, X @ self.v)

    def to_dict(self):
        return {"type": self.kind, "m": self.m, "Q": self.Q}


@dataclass(frozen=True, eq=False)
class PartialTraceAdversary:
    """``(sqrt(Q) / Z) <He_k(x), I^{(x)(k-2)/2} (x) v (x) v>``, ``Z`` the norm of its symmetrization."""

    k: int
    v: np.ndarray
    Q: float
    kind = "partial-trace"

    def __post_init__(self):
        if self.k < 2 or self.k % 2:
            raise ValueError("partial-trace noise needs an even k >= 2")

    @cached_property
    def tensor(self):
        return partial_trace_tensor(self.k, self.v)

    @cached_property
    def normalizer(self):
        return noise_normalizer(self.k, self.v.size, self.v)

    def noise(self, X, rng):
        return math.sqrt(self.Q) / self.normalizer * hermite_contract(X, self.tensor)

    def to_dict(self):
        return {"type": self.kind, "k": self.k, "Q": self.Q}


@dataclass(frozen=True)
class BoundedRandom:
    """Independent ``+-sqrt(Q)`` with equal probability."""

    Q: float
    kind = "bounded-random"

    def noise(self, X, rng):
        return math.sqrt(self.Q) * rng.choice((-1.0, 1.0), size=X.shape[0])

    def to_dict(self):
        return {"type": self.kind, "Q": self.Q}


NoiseModel = Union[Realizable, OrthogonalHermite, PartialTraceAdversary, BoundedRandom]


def partial_trace_tensor(k, v):
    v = np.asarray(v, dtype=float)
    d = v.size
    check_cap(d, k)
    arr = np.multiply.outer(v, v)
    eye = np.eye(d)
    for _ in range((k - 2) // 2):
        arr = np.multiply.outer(eye, arr)
    return DenseTensor(arr, d)


def noise_normalizer(k, d, v):
    """``|| sym(I^{(x)(k-2)/2} (x) v (x) v) ||_F``, built densely."""
    if k < 2 or k % 2:
        raise ValueError("k must be even and >= 2")
    v = np.asarray(v, dtype=float)
    if v.size != d:
        raise ValueError("v has the wrong dimension")
    if k == 2:
        return float(np.linalg.norm(outer([v, v]).array))
    return float(np.linalg.norm(sym(partial_trace_tensor(k, v)).array))


def truncate_labels(y, B_y):
    """Symmetric clamp of labels to ``[-B_y, B_y]``."""
    if B_y <= 0:
        raise ValueError("B_y must be positive")
    out = np.clip(y, -B_y, B_y)
    return float(out) if np.ndim(out) == 0 else out


def label_cap_for(link, eps):
    """``sqrt(4 B_4 / eps)``: clamping there costs at most ``eps`` in square loss."""
    return math.sqrt(4.0 * link.B4 / eps)


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    dim: int
    w_star: np.ndarray
    link: LinkSpec
    noise: NoiseModel = field(default_factory=Realizable)
    label_cap: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        w = np.asarray(self.w_star, dtype=float)
        if w.shape != (self.dim,):
            raise ValueError("w_star has the wrong shape")
        if abs(np.linalg.norm(w) - 1.0) > 1e-12:
            raise ValueError("w_star must be a unit vector")
        if self.noise.Q < 0:
            raise ValueError("noise level must be non-negative")
        v = getattr(self.noise, "v", None)
        if v is not None:
            _check_perp(v, w)

    @property
    def noise_level(self):
        return float(self.noise.Q)

    def clean(self, X):
        return self.link(np.asarray(X) @ self.w_star)

    def to_dict(self):
        return {
            "dim": self.dim,
            "link": self.link.to_dict() if self.link.name not in _named_links() else self.link.name,
            "noise": self.noise.to_dict(),
            "noise_level": self.noise_level,
            "label_cap": self.label_cap,
            "seed": self.seed,
            "w_star": [float(c) for c in self.w_star],
        }

    @classmethod
    def from_dict(cls, doc):
        link = doc["link"]
        link = make_link(link) if not isinstance(link, LinkSpec) else link
        noise = dict(doc.get("noise", {"type": "realizable"}))
        if "Q" not in noise and "noise_level" in doc:
            noise["Q"] = doc["noise_level"]
        return make_instance(
            doc["dim"],
            link,
            noise=noise,
            seed=doc.get("seed", 0),
            label_cap=doc.get("label_cap"),
            w_star=doc.get("w_star"),
        )


def _named_links():
    from .links import builtin_names

    return set(builtin_names())


def make_instance(dim, link, noise="realizable", Q=0.0, seed=0, label_cap=None, w_star=None, **noise_kw):
    """Build a :class:`ProblemInstance`; ``w*`` and the noise direction come from ``seed``.

    ``noise`` is a variant name or a dict ``{"type": ..., "Q": ..., "m"/"k": ...}``.
    """
    if not isinstance(link, LinkSpec):
        link = make_link(link)
    if w_star is None:
        w_star = np.random.default_rng(_seedseq(seed, 0)).standard_normal(dim)
    w_star = np.asarray(w_star, dtype=float)
    w_star = w_star / np.linalg.norm(w_star)
    if isinstance(noise, dict):
        noise_kw = {**{k: v for k, v in noise.items() if k not in ("type", "Q")}, **noise_kw}
        Q = noise.get("Q", Q)
        noise = noise.get("type", "realizable")
    if isinstance(noise, str):
        noise = _build_noise(noise, float(Q), w_star, seed, link, **noise_kw)
    return ProblemInstance(dim, w_star, link, noise, label_cap, int(seed))


def _build_noise(kind, Q, w_star, seed, link, m=None, k=None):
    if kind == "realizable":
        return Realizable()
    if kind == "bounded-random":
        return BoundedRandom(Q)
    v = orthogonal_unit(w_star, _seedseq(seed, 1))
    if kind == "orthogonal-hermite":
        return OrthogonalHermite(int(m if m is not None else link.k_star), v, Q)
    if kind == "partial-trace":
        return PartialTraceAdversary(int(k if k is not None else max(2, link.k_star + link.k_star % 2)), v, Q)
    raise ValueError(f"unknown noise model {kind!r}")


def _sample_shard(instance, ss, m):
    rng = np.random.default_rng(ss)
    X = rng.standard_normal((m, instance.dim))
    y = instance.clean(X) + instance.noise.noise(X, rng)
    if instance.label_cap is not None:
        y = truncate_labels(y, instance.label_cap)
    return X, y


def sample_batch(instance, n, rng=0, n_threads=None):
    """Draw ``n`` labelled samples ``(X, y)``.

    The batch is cut into shards of ``SHARD_SIZE`` rows; shard ``i`` draws from
    the child seed sequence ``i`` of ``rng``, so output does not depend on the
    thread count.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    bounds = chunk_bounds(int(n), SHARD_SIZE)
    parts = ordered_map(
        lambda ib: _sample_shard(instance, _seedseq(rng, ib[0]), ib[1][1] - ib[1][0]),
        list(enumerate(bounds)),
        n_threads,
    )
    X = np.concatenate([p[0] for p in parts])
    y = np.concatenate([p[1] for p in parts])
    return X, y


class Sampler:
    """Stream of independent batches from an instance.

    Batch ``j`` uses the child seed sequence ``j`` of the sampler seed.
    """

    def __init__(self, instance, seed=0, n_threads=None):
        self.instance = instance
        self.seed = seed
        self.n_threads = n_threads
        self.n_calls = 0
        self.n_drawn = 0

    @property
    def dim(self):
        return self.instance.dim

    def draw(self, n):
        X, y = sample_batch(self.instance, n, _seedseq(self.seed, self.n_calls), self.n_threads)
        self.n_calls += 1
        self.n_drawn += int(n)
        return X, y


class ArraySampler:
    """Serve consecutive slices of a fixed dataset.

    When the data run out the rows are reshuffled (seeded) and reused; the
    ``n_passes`` counter tells callers that batches are no longer fresh.
    """

    def __init__(self, X, y, seed=0):
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=float).ravel()
        self._rng = np.random.default_rng(seed)
        self._pos = 0
        self._perm = np.arange(self.X.shape[0])
        self.n_drawn = 0
        self.n_passes = 0

    @property
    def dim(self):
        return self.X.shape[1]

    def draw(self, n):
        n = int(n)
        N = self.X.shape[0]
        take = []
        while n > 0:
            if self._pos >= N:
                self._perm = self._rng.permutation(N)
                self._pos = 0
                self.n_passes += 1
            m = min(n, N - self._pos)
            take.append(self._perm[self._pos : self._pos + m])
            self._pos += m
            n -= m
        idx = np.concatenate(take)
        self.n_drawn += idx.size
        return self.X[idx], self.y[idx]


def write_csv(path, X, y):
    """Dump a dataset: ``d`` feature columns then the label column."""
    X = np.asarray(X)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow([f"x{i}" for i in range(X.shape[1])] + ["y"])
        for row, lab in zip(X, y):
            wr.writerow([repr(float(v)) for v in row] + [repr(float(lab))])


def read_csv(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, :-1], data[:, -1]
