"""Riemannian minibatch SGD on the unit sphere for the truncated square loss.

The truncated loss keeps only the degree-``k*`` Hermite component of the link:

    L_phi(w) = 2 (1 - E[y <He_k*(x), w^{(x)k*}>])

and each step moves along the tangent-space projection of its gradient,
then renormalizes.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._parallel import chunk_bounds, ordered_map
from .evaluation import UNIT_TOL, sin_angle
from .exceptions import DegenerateInputError
from .hermite import contract_power, hermite_eval

GRAD_CHUNK = 8192
CONVENTIONS = ("riemannian", "algorithm")


def default_eta(link):
    return 9.0 / (40.0 * math.e * link.k_star * abs(link.c_kstar))


def default_T(link, eps):
    return max(1, int(math.ceil(8.0 * math.log(max(link.C_kstar / eps, math.e)))))


def gd_batch_size(link, d, eps=0.01, delta=0.1, sample_constant=1.0):
    """``C_k* d e^k* log^(k*+1)(B_4/eps) / (eps delta)``, times ``sample_constant``."""
    k = link.k_star
    logt = max(math.log(link.B4 / eps), 1.0)
    rate = link.C_kstar * d * math.e**k * logt ** (k + 1) / (eps * delta)
    return max(1, int(math.ceil(sample_constant * rate)))


def constant_regime_threshold(link):
    """Noise level above which any unit vector is already a constant-factor answer."""
    return (abs(link.c_kstar) / (64 * link.k_star)) ** 2


@dataclass
class GDConfig:
    eta: Optional[float] = None
    T: Optional[int] = None
    batch_n: Optional[int] = None
    delta: float = 0.1
    eps: float = 0.01
    seed: int = 0
    record_trace: bool = True
    grad_convention: str = "riemannian"
    gate: bool = True
    sample_constant: float = 1.0
    n_threads: Optional[int] = None

    def __post_init__(self):
        if self.eta is not None and self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.T is not None and self.T < 1:
            raise ValueError("T must be >= 1")
        if self.batch_n is not None and self.batch_n < 1:
            raise ValueError("batch_n must be >= 1")
        if self.grad_convention not in CONVENTIONS:
            raise ValueError(f"grad_convention must be one of {CONVENTIONS}")

    def resolved(self, link, d):
        """Copy with ``eta``, ``T`` and ``batch_n`` filled from their schedules."""
        out = GDConfig(**self.__dict__)
        if out.eta is None:
            out.eta = default_eta(link)
        if out.T is None:
            out.T = default_T(link, out.eps)
        if out.batch_n is None:
            out.batch_n = gd_batch_size(link, d, out.eps, out.delta, out.sample_constant)
        return out


@dataclass
class TrainReport:
    w_final: np.ndarray
    trace: list = field(default_factory=list)
    n_total: int = 0
    constant_regime: bool = False
    final_sin_theta: Optional[float] = None
    wall_time: float = 0.0

    def to_dict(self, timing=True):
        out = {
            "w_final": [float(c) for c in self.w_final],
            "n_total": int(self.n_total),
            "constant_regime": self.constant_regime,
            "final_sin_theta": self.final_sin_theta,
            "trace": self.trace,
        }
        if timing:
            out["wall_time"] = self.wall_time
        return out

    def to_json(self, timing=True):
        return json.dumps(self.to_dict(timing), sort_keys=True)

    def write_trace_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "sin_theta", "loss", "grad_norm"])
            for rec in self.trace:
                wr.writerow([rec["t"], rec.get("sin_theta"), rec["loss"], rec["grad_norm"]])


def _check_unit(w):
    if abs(np.linalg.norm(w) - 1.0) > UNIT_TOL:
        raise ValueError("w must be a unit vector")


def project_tangent(w, v):
    """``(I - w w^T) v``; ``v`` may be a batch of row vectors."""
    w = np.asarray(w, dtype=float)
    _check_unit(w)
    v = np.asarray(v, dtype=float)
    return v - np.multiply.outer(v @ w, w)


def _grad_sum(X, y, w, k):
    s = X @ w
    coef = y * hermite_eval(k - 1, s) / math.sqrt(k)
    # P_w <He_k(x), w^{(x)(k-1)}> = he_{k-1}(s) (x - s w) / sqrt(k) for unit w
    return coef @ X - (coef @ s) * w


def empirical_gradient(X, y, w, link, convention="riemannian", n_threads=None):
    """Minibatch Riemannian gradient of the truncated loss.

    ``"riemannian"`` estimates ``-2 k* E[y P_w <He_k*(x), w^{(x)(k*-1)}>]``
    (with the labels' sign flipped when ``c_k* < 0``), whose noiseless mean is
    ``-2 k* |c_k*| (w . w*)^(k*-1) (w*)^{perp w}``.  ``"algorithm"`` is the
    unsigned form ``k* c_k* mean(y P_w <...>)``, which points away from
    ``w*``; it is kept for comparison only.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if y.size == 0:
        raise ValueError("empty batch")
    w = np.asarray(w, dtype=float)
    _check_unit(w)
    k = link.k_star
    parts = ordered_map(
        lambda b: _grad_sum(X[b[0] : b[1]], y[b[0] : b[1]], w, k),
        chunk_bounds(y.size, GRAD_CHUNK),
        n_threads,
    )
    mean = np.sum(parts, axis=0) / y.size
    if convention == "riemannian":
        return -2.0 * k * math.copysign(1.0, link.c_kstar) * mean
    if convention == "algorithm":
        return k * link.c_kstar * mean
    raise ValueError(f"unknown convention {convention!r}")


def gradient_mc(X, y, w, link, project=None):
    """Mean and per-coordinate standard error of the ``"riemannian"`` gradient.

    With ``project`` (rows are directions) the standard errors of the
    projected mean ``mean @ p`` are returned as a third value.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if y.size < 2:
        raise ValueError("need at least two samples")
    w = np.asarray(w, dtype=float)
    _check_unit(w)
    P = None if project is None else np.atleast_2d(np.asarray(project, dtype=float))
    k = link.k_star
    scale = -2.0 * k * math.copysign(1.0, link.c_kstar) / math.sqrt(k)
    total = np.zeros(w.size)
    total_sq = np.zeros(w.size)
    proj = proj_sq = 0.0
    for a, b in chunk_bounds(y.size, GRAD_CHUNK):
        s = X[a:b] @ w
        G = (scale * y[a:b] * hermite_eval(k - 1, s))[:, None] * (X[a:b] - np.multiply.outer(s, w))
        total += G.sum(axis=0)
        total_sq += (G * G).sum(axis=0)
        if P is not None:
            GP = G @ P.T
            proj = proj + GP.sum(axis=0)
            proj_sq = proj_sq + (GP * GP).sum(axis=0)
    n = y.size

    def _se(sm, sq):
        mean = sm / n
        return mean, np.sqrt(np.maximum(sq / n - mean**2, 0.0) / (n - 1))

    mean, se = _se(total, total_sq)
    if P is None:
        return mean, se
    return mean, se, _se(proj, proj_sq)[1]


def riemannian_step(w, g, eta):
    u = np.asarray(w, dtype=float) - eta * np.asarray(g, dtype=float)
    nu = np.linalg.norm(u)
    if nu == 0 or not np.isfinite(nu):
        raise DegenerateInputError("step lands at the origin")
    return u / nu


def truncated_loss_empirical(X, y, w, link):
    y = np.asarray(y, dtype=float).ravel()
    if y.size == 0:
        raise ValueError("empty batch")
    return 2.0 * (1.0 - float(np.mean(y * contract_power(X, w, link.k_star))))


def train(sampler, w0, cfg, link, w_star=None, noise_level=None):
    """Run ``T`` Riemannian SGD steps from ``w0`` with a fresh batch per step.

    With ``cfg.gate`` set and a known ``noise_level`` above
    :func:`constant_regime_threshold`, no steps are taken and ``e_1`` is
    returned flagged as the constant regime.
    """
    t0 = time.perf_counter()
    w = np.asarray(w0, dtype=float).copy()
    _check_unit(w)
    d = w.size
    cfg = cfg.resolved(link, d)
    if cfg.gate and noise_level is not None and noise_level > constant_regime_threshold(link):
        e1 = np.zeros(d)
        e1[0] = 1.0
        return TrainReport(
            e1, [], 0, True, None if w_star is None else sin_angle(e1, w_star), time.perf_counter() - t0
        )
    trace = []
    n_total = 0
    for t in range(cfg.T):
        X, y = sampler.draw(cfg.batch_n)
        n_total += y.size
        g = empirical_gradient(X, y, w, link, cfg.grad_convention, cfg.n_threads)
        if cfg.record_trace:
            rec = {
                "t": t,
                "loss": truncated_loss_empirical(X, y, w, link),
                "grad_norm": float(np.linalg.norm(g)),
                "accepted": True,
            }
            if w_star is not None:
                rec["dot"] = float(w @ w_star)
                rec["sin_theta"] = sin_angle(w, w_star)
            trace.append(rec)
        w = riemannian_step(w, g, cfg.eta)
    return TrainReport(
        w,
        trace,
        n_total,
        False,
        None if w_star is None else sin_angle(w, w_star),
        time.perf_counter() - t0,
    )
