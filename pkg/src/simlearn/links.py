"""Link functions with their Hermite metadata.

Every link is centered (``c_0 = 0``) and scaled so that the stored
coefficients ``c_1..c_K`` have unit squared norm.  For links whose Hermite
expansion does not terminate at ``K`` the variance left beyond ``K`` is kept
in :attr:`LinkSpec.tail_mass`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import expit

from .exceptions import InvalidLinkError
from .hermite import he_table, hermite_coefficients

DEFAULT_K = 16
DEFAULT_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class LinkSpec:
    name: str
    coeffs: np.ndarray
    k_star: int
    B4: float
    tail_mass: float
    fn: Callable = field(repr=False)
    derivative: Optional[Callable] = field(default=None, repr=False)

    @property
    def c_kstar(self):
        return float(self.coeffs[self.k_star])

    @property
    def C_kstar(self):
        k = np.arange(self.coeffs.size)
        return float(np.sum(k * self.coeffs**2))

    @property
    def K(self):
        return self.coeffs.size - 1

    @property
    def has_odd_part(self):
        odd = self.coeffs[1::2]
        return bool(np.any(np.abs(odd) > DEFAULT_TOL))

    def __call__(self, z):
        return self.fn(z)

    def eval(self, z):
        return self.fn(z)

    def to_dict(self):
        return {"name": self.name, "coeffs": [float(c) for c in self.coeffs]}

    def __reduce__(self):
        # closures do not pickle; rebuild builtins by name, others from coefficients
        return (_rebuild, (self.name, self.coeffs.tolist()))


def _rebuild(name, coeffs):
    if name in builtin_names():
        return make_link(name, K=len(coeffs) - 1)
    return make_link(coeffs, K=len(coeffs) - 1, name=name)


def link_eval(link, z):
    return link.fn(z)


def info_exponent(coeffs, tol=DEFAULT_TOL):
    """Smallest ``k >= 1`` with ``|c_k| > tol``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    coeffs = np.asarray(coeffs, dtype=float)
    hits = np.flatnonzero(np.abs(coeffs[1:]) > tol)
    if hits.size == 0:
        raise InvalidLinkError("all Hermite coefficients of degree >= 1 are below tol")
    return int(hits[0]) + 1


# name -> (function, derivative, breakpoints)
_BUILTINS = {
    "linear": (lambda z: np.asarray(z, dtype=float), lambda z: np.ones_like(z), None),
    "phase-square": (lambda z: np.asarray(z, dtype=float) ** 2, lambda z: 2 * np.asarray(z), None),
    "relu": (lambda z: np.maximum(z, 0.0), lambda z: (np.asarray(z) > 0).astype(float), (0.0,)),
    "abs": (np.abs, np.sign, (0.0,)),
    "sigmoid-centered": (
        lambda z: expit(z) - 0.5,
        lambda z: expit(z) * (1 - expit(z)),
        None,
    ),
    "tanh": (np.tanh, lambda z: 1 - np.tanh(z) ** 2, None),
}


def builtin_names():
    return sorted(list(_BUILTINS) + [f"pure-he{k}" for k in range(1, 7)])


def make_link(source, K=DEFAULT_K, tol=DEFAULT_TOL, name=None, breakpoints=None):
    """Build a :class:`LinkSpec`.

    ``source`` is a builtin name, a dict ``{"builtin": ...}`` or
    ``{"coeffs": [...]}``, an explicit coefficient sequence, or a callable
    (pass ``breakpoints`` for kinks).
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    if isinstance(source, dict):
        if "builtin" in source:
            return make_link(source["builtin"], K=int(source.get("K", K)), tol=tol)
        if "coeffs" in source:
            return make_link(list(source["coeffs"]), K=K, tol=tol, name=source.get("name"))
        raise ValueError("link dict needs 'builtin' or 'coeffs'")
    if isinstance(source, str):
        if source.startswith("pure-he"):
            m = int(source[len("pure-he") :])
            if m > K:
                raise ValueError(f"K={K} too small for {source}")
            c = np.zeros(K + 1)
            c[m] = 1.0
            return _from_coeffs(c, source, tol)
        if source not in _BUILTINS:
            raise ValueError(f"unknown link {source!r}; known: {builtin_names()}")
        f, df, bps = _BUILTINS[source]
        return _from_function(f, K, tol, source, bps, df)
    if callable(source):
        return _from_function(source, K, tol, name or getattr(source, "__name__", "custom"), breakpoints, None)
    c = np.asarray(source, dtype=float).ravel()
    if c.size < K + 1:
        c = np.concatenate([c, np.zeros(K + 1 - c.size)])
    return _from_coeffs(c, name or "custom", tol)


def _from_coeffs(c, name, tol):
    c = c.copy()
    c[0] = 0.0
    norm = math.sqrt(float(np.sum(c**2)))
    if norm <= tol:
        raise InvalidLinkError("link has no non-constant Hermite component")
    c /= norm
    k_star = info_exponent(c, tol)
    K = c.size - 1

    def fn(z, _c=c):
        z = np.asarray(z, dtype=float)
        return np.tensordot(_c, he_table(K, z), axes=1)

    def dfn(z, _c=c):
        z = np.asarray(z, dtype=float)
        ks = np.arange(1, K + 1)
        return np.tensordot(_c[1:] * np.sqrt(ks), he_table(K - 1, z), axes=1)

    B4 = _quad_moment(fn, 4, None)
    return LinkSpec(name, c, k_star, B4, 0.0, fn, dfn)


def _from_function(f, K, tol, name, breakpoints, df):
    raw = hermite_coefficients(f, K, breakpoints=breakpoints)
    c0 = float(raw[0])
    scale = math.sqrt(float(np.sum(raw[1:] ** 2)))
    if scale <= tol:
        raise InvalidLinkError(f"{name}: no Hermite coefficient of degree 1..{K} above tol")
    coeffs = raw / scale
    coeffs[0] = 0.0
    k_star = info_exponent(coeffs, tol)

    def fn(z, _f=f, _c0=c0, _s=scale):
        return (np.asarray(_f(np.asarray(z, dtype=float)), dtype=float) - _c0) / _s

    dfn = None
    if df is not None:

        def dfn(z, _df=df, _s=scale):
            return np.asarray(_df(np.asarray(z, dtype=float)), dtype=float) / _s

    second = _quad_moment(fn, 2, breakpoints)
    B4 = _quad_moment(fn, 4, breakpoints)
    return LinkSpec(name, coeffs, k_star, B4, max(second - 1.0, 0.0), fn, dfn)


def _quad_moment(fn, p, breakpoints):
    # reuse the coefficient quadrature: c_0 of fn**p is E[fn**p]
    return float(hermite_coefficients(lambda z: fn(z) ** p, 0, quad_order=200, breakpoints=breakpoints)[0])


def load_link(doc, K=DEFAULT_K):
    """Load a link from a JSON path, JSON text, or an already parsed dict."""
    if isinstance(doc, str):
        stripped = doc.lstrip()
        if stripped.startswith("{"):
            doc = json.loads(doc)
        elif doc in _BUILTINS or doc.startswith("pure-he"):
            return make_link(doc, K=K)
        else:
            with open(doc) as fh:
                doc = json.load(fh)
    return make_link(doc, K=K)
