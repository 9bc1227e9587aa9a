"""Acceptance suites with their thresholds.

Each check is seeded, returns the measured figure next to its threshold, and
never changes a tolerance based on the outcome.
"""

from __future__ import annotations

import math
import shutil
import tempfile
import time
from dataclasses import dataclass

import numpy as np

from .chow_pca import InitConfig, chow_matrix, init_tensor_pca, top_left_singular
from .evaluation import l2_loss_mc, population_g_star, sin_angle
from .hermite import contract_power, contract_power_grad, he_table, hermite_eval, hermite_tensor_dense
from .sphere_gd import GDConfig, constant_regime_threshold, default_eta, gradient_mc, train
from .synth import Sampler, _seedseq, make_instance, orthogonal_unit, sample_batch
from .tensors import DenseTensor, inner, matricize, outer, sym, tensorize, unmatricize


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: object
    threshold: object
    detail: str = ""
    seconds: float = 0.0

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.name}: measured {self.measured} vs {self.threshold} ({self.seconds:.1f}s) {self.detail}".rstrip()


def _unit(rng, d):
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


def _pair(rng, d, a):
    """``(w, w*)`` with ``w . w* = a``."""
    w_star = _unit(rng, d)
    v = orthogonal_unit(w_star, rng)
    return a * w_star + math.sqrt(1 - a * a) * v, w_star


def check_hermite(seed=0):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(200_000)
    H = he_table(6, z)
    gram_err = float(np.max(np.abs(H @ H.T / z.size - np.eye(7))))
    pts = np.linspace(-4, 4, 81)
    h = 1e-4
    rel = 0.0
    for k in range(1, 11):
        fd = (hermite_eval(k, pts + h) - hermite_eval(k, pts - h)) / (2 * h)
        exact = math.sqrt(k) * hermite_eval(k - 1, pts)
        rel = max(rel, float(np.max(np.abs(fd - exact)) / np.max(np.abs(exact))))
    ok = gram_err <= 0.02 and rel <= 1e-5
    return CheckResult("hermite", ok, (round(gram_err, 5), f"{rel:.2e}"), ("<= 0.02", "<= 1e-5"),
                       "orthonormality gap, derivative relative error")


def check_tensors(seed=0):
    rng = np.random.default_rng(seed)
    exact = True
    worst_mat = worst_sym = 0.0
    for d in range(1, 7):
        for k in range(1, 5):
            T = DenseTensor(rng.standard_normal((d,) * k), d)
            for l in range(k + 1):
                M = matricize(T, l)
                exact &= np.array_equal(unmatricize(M).array, T.array)
                v = rng.standard_normal(d**l)
                r = rng.standard_normal(d ** (k - l))
                lhs = v @ M.matrix @ r
                rhs = float(inner(T, outer_tensor(tensorize(v, l, d), tensorize(r, k - l, d))).array)
                worst_mat = max(worst_mat, abs(lhs - rhs) / max(1.0, abs(rhs)))
            w = rng.standard_normal(d)
            P = outer([w] * k)
            a, b = float(inner(P, sym(T)).array), float(inner(P, T).array)
            worst_sym = max(worst_sym, abs(a - b) / max(1.0, abs(b)))
    ok = exact and worst_mat <= 1e-12 and worst_sym <= 1e-12
    return CheckResult("tensors", ok, (exact, f"{worst_mat:.1e}", f"{worst_sym:.1e}"),
                       ("bit-exact", "<= 1e-12", "<= 1e-12"), "round trip, bilinear form, symmetrization")


def outer_tensor(A, B):
    return DenseTensor(np.multiply.outer(A.array, B.array), A.dim)


def check_contraction_oracle(seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(100):
        d = int(rng.integers(1, 9))
        k = int(rng.integers(1, 6))
        x = rng.standard_normal(d)
        w = rng.standard_normal(d) * rng.uniform(0.2, 2.0)
        He = hermite_tensor_dense(x, k)
        dense = float(inner(outer([w] * k), He).array)
        dense_g = inner(outer([w] * (k - 1)), He).array if k > 1 else He.array
        e1 = abs(contract_power(x, w, k) - dense) / max(1.0, abs(dense))
        e2 = np.max(np.abs(contract_power_grad(x, w, k) - dense_g)) / max(1.0, np.max(np.abs(dense_g)))
        worst = max(worst, e1, float(e2))
    return CheckResult("contraction-oracle", worst <= 1e-10, f"{worst:.1e}", "<= 1e-10")


def check_population_gradient(seed=0, n=10**6, d=10, pairs=20):
    rng = np.random.default_rng(seed)
    worst = 0.0
    misses = 0
    z_sq = []
    for i in range(pairs):
        w, w_star = _pair(rng, d, rng.uniform(0.5, 1.0))
        inst = make_instance(d, "pure-he2", w_star=w_star, seed=seed)
        X, y = sample_batch(inst, n, _seedseq(seed, 10, i))
        mean, se = gradient_mc(X, y, w, inst.link)
        z = np.abs(mean - population_g_star(inst.link, w, w_star)) / se
        worst = max(worst, float(z.max()))
        misses += int(np.sum(z > 3))
        z_sq.extend(z**2)
    return CheckResult("population-gradient", misses == 0, f"max |z| = {worst:.2f}", "<= 3",
                       f"{misses} of {pairs * d} coordinates beyond 3 SE, mean z^2 = {np.mean(z_sq):.3f}")


def check_noise_gradient(seed=0, n=10**6, d=10, Q=0.0025):
    rng = np.random.default_rng(seed)
    inst = make_instance(d, "pure-he2", noise="orthogonal-hermite", Q=Q, seed=seed)
    link, w_star, v = inst.link, inst.w_star, inst.noise.v
    k, c = link.k_star, link.c_kstar
    bound = 2 * k * c * math.sqrt(Q)
    s_min = 4 * math.e * math.sqrt(Q) + 0.05
    # unit direction orthogonal to both w* and the noise direction
    u = orthogonal_unit(w_star, rng)
    u -= (u @ v) * v
    u /= np.linalg.norm(u)
    worst_norm = worst_par = worst_sharp = -np.inf
    n_tested = 0
    for i, a in enumerate(np.linspace(1 - 1 / k, math.sqrt(1 - s_min**2), 6)):
        for phi in (0.0, math.pi / 4, math.pi / 2):
            perp = math.cos(phi) * v + math.sin(phi) * u
            w = a * w_star + math.sqrt(1 - a * a) * perp
            s = sin_angle(w, w_star)
            X, y = sample_batch(inst, n, _seedseq(seed, 20, i, int(phi * 100)))
            g_star = population_g_star(link, w, w_star)
            mean, _ = gradient_mc(X, y, w, link)
            xi = mean - g_star
            # delta-method SE of |xi| along its own direction, plus SE along w*
            direction = xi / np.linalg.norm(xi)
            _, _, (se_norm, se_par) = gradient_mc(X, y, w, link, project=[direction, w_star])
            worst_norm = max(worst_norm, float(np.linalg.norm(xi)) - bound - 3 * se_norm)
            worst_par = max(worst_par, abs(float(xi @ w_star)) - bound * s - 3 * se_par)
            worst_sharp = max(worst_sharp, float(mean @ w_star) + 0.5 * np.linalg.norm(g_star) * s - 3 * se_par)
            n_tested += 1
    ok = worst_norm <= 0 and worst_par <= 0 and worst_sharp <= 0
    return CheckResult("noise-gradient", ok, tuple(f"{x:.2e}" for x in (worst_norm, worst_par, worst_sharp)),
                       "all <= 0", f"slack of norm, parallel and sharpness bounds over {n_tested} points")


def _init_rate(link, d, n, Q, trials, seed, threshold=0.5):
    hits = 0
    for t in range(trials):
        noise = "orthogonal-hermite" if Q > 0 else "realizable"
        inst = make_instance(d, link, noise=noise, Q=Q, seed=seed + t)
        rep = init_tensor_pca(Sampler(inst, _seedseq(seed + t, 2)), InitConfig(n_override=n), inst.link, inst.w_star)
        hits += abs(float(rep.w0 @ inst.w_star)) >= threshold
    return hits


def check_init(seed=0, d=20, n=10**5, trials=10):
    from .links import make_link

    link = make_link("pure-he2")
    clean = _init_rate(link, d, n, 0.0, trials, seed)
    Q = 0.5 * constant_regime_threshold(link)
    noisy = _init_rate(link, d, n, Q, trials, seed)
    ok = clean >= 9 and noisy >= 8
    return CheckResult("init", ok, (f"{clean}/{trials}", f"{noisy}/{trials}"), (">= 9/10", ">= 8/10"),
                       f"|w0 . w*| >= 0.5, noisy run at Q = {Q:.3g}")


def _pipeline(d, Q, seed, n_init, batch, T, w0=None):
    noise = "orthogonal-hermite" if Q > 0 else "realizable"
    inst = make_instance(d, "pure-he2", noise=noise, Q=Q, seed=seed)
    sampler = Sampler(inst, _seedseq(seed, 2))
    if w0 is None:
        w0 = init_tensor_pca(sampler, InitConfig(n_override=n_init), inst.link, inst.w_star).w0
    cfg = GDConfig(eta=default_eta(inst.link), T=T, batch_n=batch, gate=False)
    return inst, train(sampler, w0, cfg, inst.link, inst.w_star, inst.noise_level)


def check_end_to_end(seed=0, d=20, n_init=10**5, batch=5 * 10**4, T=60, trials=10, Q=0.01):
    clean = 0
    for t in range(trials):
        _, rep = _pipeline(d, 0.0, seed + t, n_init, batch, T)
        clean += rep.final_sin_theta <= 0.05
    noisy = 0
    for t in range(trials):
        inst, rep = _pipeline(d, Q, seed + t, n_init, batch, T)
        loss, _ = l2_loss_mc(inst, rep.w_final, 10**5, _seedseq(seed + t, 3))
        noisy += loss <= 20 * Q + 0.05
    # contraction is measured from a controlled warm start w0 . w* = 0.5
    ratios = []
    for t in range(trials):
        inst = make_instance(d, "pure-he2", seed=seed + t)
        v = orthogonal_unit(inst.w_star, _seedseq(seed + t, 4))
        w0 = 0.5 * inst.w_star + math.sqrt(0.75) * v
        _, rep = _pipeline(d, 0.0, seed + t, n_init, batch, T, w0)
        dots = [r["dot"] for r in rep.trace] + [float(rep.w_final @ inst.w_star)]
        for a, b in zip(dots, dots[1:]):
            if math.sqrt(max(0.0, 1 - a * a)) >= 0.2:
                ratios.append((1 - b) / (1 - a))
    ratios = np.array(ratios)
    frac = float(np.mean(ratios <= 1)) if ratios.size else float("nan")
    med = float(np.median(ratios)) if ratios.size else float("nan")
    ok = clean >= 9 and noisy >= 8 and frac >= 0.95 and med <= 0.99
    return CheckResult(
        "end-to-end",
        ok,
        (f"{clean}/{trials}", f"{noisy}/{trials}", round(frac, 3), round(med, 4)),
        (">= 9/10", ">= 8/10", ">= 0.95", "<= 0.99"),
        f"sin <= 0.05, loss <= {20 * Q + 0.05:g}, non-expanding steps over {ratios.size}, median ratio",
    )


def check_degree_one(seed=0, d=20, n=10**6):
    inst = make_instance(d, "pure-he2", seed=seed)
    X, y = sample_batch(inst, n, _seedseq(seed, 30))
    first = float(np.linalg.norm(chow_matrix(X, y, 1).matrix))
    _, s1, _ = top_left_singular(chow_matrix(X, y, 2).matrix)
    ok = first <= 0.01 and s1 >= 0.9
    return CheckResult("degree-one", ok, (round(first, 5), round(s1, 4)), ("<= 0.01", ">= 0.9"),
                       "|E[y x]|, top singular value of the degree-2 Chow matrix")


def check_sample_trend(seed=0, d=20, ns=(10**3, 10**4, 10**5), trials=10, link="pure-he4"):
    from .links import make_link

    lk = make_link(link)
    rates = [_init_rate(lk, d, n, 0.0, trials, seed) / trials for n in ns]
    ok = all(a <= b for a, b in zip(rates, rates[1:]))
    return CheckResult("sample-trend", ok, rates, "non-decreasing", f"{link}, d = {d}, n = {list(ns)}")


REPRO_CONFIG = {
    "preset": "full-pipeline",
    "instance": {"dim": 8, "link": "pure-he2", "noise": {"type": "orthogonal-hermite", "Q": 0.01}},
    "init": {"n": 30000},
    "gd": {"T": 5, "batch_n": 20000, "gate": False},
    "eval": {"n_eval": 20000},
    "trials": 2,
    "master_seed": 7,
}


def check_reproducibility():
    import os

    from .harness import ExperimentConfig, run_experiment

    blobs = []
    tmp = tempfile.mkdtemp(prefix="simlearn-repro-")
    try:
        for threads in (1, 4):
            cfg = ExperimentConfig.from_dict({**REPRO_CONFIG, "n_threads": threads})
            out = os.path.join(tmp, f"t{threads}")
            run_experiment(cfg, out)
            names = sorted(f for f in os.listdir(out) if f.endswith(".json"))
            blobs.append({f: open(os.path.join(out, f), "rb").read() for f in names})
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    same = blobs[0] == blobs[1] and len(blobs[0]) > 0
    return CheckResult("reproducibility", same, same, True, f"{len(blobs[0])} reports, 1 vs 4 threads")


SUITES = {
    "hermite": check_hermite,
    "tensors": check_tensors,
    "contraction-oracle": check_contraction_oracle,
    "population-gradient": check_population_gradient,
    "noise-gradient": check_noise_gradient,
    "init": check_init,
    "end-to-end": check_end_to_end,
    "degree-one": check_degree_one,
    "sample-trend": check_sample_trend,
    "reproducibility": check_reproducibility,
}


def run_check(name):
    t0 = time.perf_counter()
    res = SUITES[name]()
    res.seconds = time.perf_counter() - t0
    return res


def run_selftest(filter_=None):
    return [run_check(n) for n in SUITES if filter_ is None or filter_ in n]
