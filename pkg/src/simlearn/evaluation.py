"""Loss estimates, alignment metrics and closed-form population oracles."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

UNIT_TOL = 1e-8


def _check_unit(*vs):
    for v in vs:
        if abs(np.linalg.norm(v) - 1.0) > UNIT_TOL:
            raise ValueError("expected a unit vector")


@dataclass
class EvalReport:
    l2_loss_mc: float
    l2_loss_se: float
    noiseless_loss_closed: float
    alignment: float
    loss_upper_bound: float
    n_eval: int

    def to_dict(self):
        return {k: (int(v) if k == "n_eval" else float(v)) for k, v in self.__dict__.items()}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def l2_loss_mc(instance, w, n_eval=10**5, seed=0, n_threads=None):
    """Monte Carlo ``E[(sigma(w . x) - y)^2]`` and its standard error."""
    from .synth import sample_batch

    if n_eval < 1000:
        raise ValueError("n_eval must be at least 1000")
    X, y = sample_batch(instance, n_eval, seed, n_threads)
    r = (instance.link(X @ np.asarray(w, dtype=float)) - y) ** 2
    return float(r.mean()), float(r.std(ddof=1) / math.sqrt(r.size))


def noiseless_loss_closed(link, a):
    """``2 (1 - sum_k c_k^2 a^k)`` over the stored coefficients."""
    if abs(a) > 1 + 1e-12:
        raise ValueError("alignment must lie in [-1, 1]")
    a = float(np.clip(a, -1.0, 1.0))
    k = np.arange(link.coeffs.size)
    return float(2.0 * (1.0 - np.sum(link.coeffs**2 * a**k)))


def loss_upper_bound(link, Q, a):
    """``2 Q + 4 (1 - sum_k c_k^2 a^k)``."""
    if Q < 0:
        raise ValueError("Q must be non-negative")
    return 2.0 * Q + 2.0 * noiseless_loss_closed(link, a)


def alignment(w, w_star, link):
    """``w . w*``, or ``|w . w*|`` when the link is even (sign unidentifiable)."""
    w = np.asarray(w, dtype=float)
    w_star = np.asarray(w_star, dtype=float)
    _check_unit(w, w_star)
    a = float(w @ w_star)
    return a if link.has_odd_part else abs(a)


def population_g_star(link, w, w_star):
    """Noiseless Riemannian gradient ``-2 k* |c_k*| (w . w*)^(k*-1) (w*)^{perp w}``.

    The absolute value matches the descent convention of the trainer, which
    flips the label sign for a negative leading coefficient.
    """
    w = np.asarray(w, dtype=float)
    w_star = np.asarray(w_star, dtype=float)
    _check_unit(w, w_star)
    k = link.k_star
    a = float(w @ w_star)
    perp = w_star - a * w
    return -2.0 * k * abs(link.c_kstar) * a ** (k - 1) * perp


def sin_angle(w, w_star):
    a = float(np.clip(np.dot(w, w_star), -1.0, 1.0))
    return math.sqrt(max(0.0, 1.0 - a * a))


def evaluate(instance, w, n_eval=10**5, seed=0, n_threads=None):
    loss, se = l2_loss_mc(instance, w, n_eval, seed, n_threads)
    a_raw = float(np.dot(w, instance.w_star))
    return EvalReport(
        l2_loss_mc=loss,
        l2_loss_se=se,
        noiseless_loss_closed=noiseless_loss_closed(instance.link, a_raw),
        alignment=alignment(w, instance.w_star, instance.link),
        loss_upper_bound=loss_upper_bound(instance.link, instance.noise_level, a_raw),
        n_eval=n_eval,
    )
