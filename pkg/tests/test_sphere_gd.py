import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from simlearn.evaluation import population_g_star, sin_angle
from simlearn.exceptions import DegenerateInputError
from simlearn.hermite import hermite_eval, hermite_tensor_dense
from simlearn.links import make_link
from simlearn.sphere_gd import (
    GDConfig,
    constant_regime_threshold,
    default_eta,
    default_T,
    empirical_gradient,
    gd_batch_size,
    gradient_mc,
    project_tangent,
    riemannian_step,
    train,
    truncated_loss_empirical,
)
from simlearn.synth import Sampler, make_instance, orthogonal_unit, sample_batch
from simlearn.tensors import inner, outer


def _unit(v):
    return v / np.linalg.norm(v)


def _at_alignment(w_star, a, seed):
    u = orthogonal_unit(w_star, seed)
    return a * w_star + math.sqrt(1 - a * a) * u


class TestProjectTangent:
    def test_examples(self):
        e = np.eye(3)
        np.testing.assert_array_equal(project_tangent(e[0], e[0]), np.zeros(3))
        np.testing.assert_array_equal(project_tangent(e[0], e[1]), e[1])

    def test_random_pairs_orthogonal_and_idempotent(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            w = _unit(rng.standard_normal(6))
            v = rng.standard_normal(6)
            p = project_tangent(w, v)
            assert abs(p @ w) <= 1e-12
            np.testing.assert_allclose(project_tangent(w, p), p, atol=1e-14)

    def test_batch_rows(self):
        w = np.eye(2)[0]
        np.testing.assert_array_equal(project_tangent(w, np.array([[1.0, 2.0], [3.0, 4.0]])), [[0, 2], [0, 4]])

    def test_non_unit(self):
        with pytest.raises(ValueError):
            project_tangent(np.array([2.0, 0.0]), np.ones(2))


class TestRiemannianStep:
    def test_zero_gradient(self):
        e1 = np.eye(3)[0]
        np.testing.assert_array_equal(riemannian_step(e1, np.zeros(3), 5.0), e1)

    def test_unit_step(self):
        e = np.eye(2)
        np.testing.assert_allclose(riemannian_step(e[0], e[1], 1.0), (e[0] - e[1]) / math.sqrt(2))

    def test_tangent_identity(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            w = _unit(rng.standard_normal(5))
            g = project_tangent(w, rng.standard_normal(5))
            eta = rng.uniform(0.01, 3)
            out = riemannian_step(w, g, eta)
            assert out @ w == pytest.approx(1 / math.sqrt(1 + eta**2 * (g @ g)), abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(
        arrays(float, 4, elements=st.floats(-10, 10)),
        arrays(float, 4, elements=st.floats(-10, 10)),
        st.floats(1e-3, 10),
    )
    def test_output_is_unit(self, w, g, eta):
        if np.linalg.norm(w) < 1e-3:
            return
        w = _unit(w)
        if np.linalg.norm(w - eta * g) < 1e-6:
            return
        assert np.linalg.norm(riemannian_step(w, g, eta)) == pytest.approx(1.0, abs=1e-10)

    def test_degenerate(self):
        with pytest.raises(DegenerateInputError):
            riemannian_step(np.eye(2)[0], np.eye(2)[0], 1.0)


class TestTruncatedLoss:
    def test_at_w_star(self):
        inst = make_instance(5, "pure-he2", seed=0)
        X, y = sample_batch(inst, 10**6, 1)
        # he_2^2 has variance 14, so 0.01 is only about 1.3 standard errors here
        terms = 2 * y * hermite_eval(2, X @ inst.w_star)
        tol = max(0.01, 3 * terms.std(ddof=1) / math.sqrt(y.size))
        assert truncated_loss_empirical(X, y, inst.w_star, inst.link) == pytest.approx(0.0, abs=tol)

    def test_orthogonal(self):
        inst = make_instance(5, "pure-he2", seed=0)
        X, y = sample_batch(inst, 10**6, 2)
        w = orthogonal_unit(inst.w_star, 3)
        assert truncated_loss_empirical(X, y, w, inst.link) == pytest.approx(2.0, abs=0.01)

    def test_zero_labels(self):
        X = np.random.default_rng(0).standard_normal((10, 3))
        assert truncated_loss_empirical(X, np.zeros(10), np.eye(3)[0], make_link("relu")) == 2.0

    def test_empty(self):
        with pytest.raises(ValueError):
            truncated_loss_empirical(np.zeros((0, 2)), np.zeros(0), np.eye(2)[0], make_link("relu"))


class TestEmpiricalGradient:
    def test_zero_labels(self):
        g = empirical_gradient(np.ones((1, 3)), np.zeros(1), np.eye(3)[0], make_link("pure-he2"))
        np.testing.assert_array_equal(g, np.zeros(3))

    def test_empty(self):
        with pytest.raises(ValueError):
            empirical_gradient(np.zeros((0, 3)), np.zeros(0), np.eye(3)[0], make_link("pure-he2"))

    @pytest.mark.parametrize("link", ["relu", "pure-he2", "pure-he3", "pure-he4", [0, 0, -1.0]])
    def test_dense_tensor_oracle(self, link):
        link = make_link(link)
        k = link.k_star
        rng = np.random.default_rng(2)
        for _ in range(50):
            d = int(rng.integers(1, 9))
            n = int(rng.integers(1, 6))
            X = rng.standard_normal((n, d))
            y = rng.standard_normal(n)
            w = _unit(rng.standard_normal(d))
            wk = outer([w] * (k - 1)) if k > 1 else None
            raw = np.zeros(d)
            for x, t in zip(X, y):
                He = hermite_tensor_dense(x, k)
                raw += t * (He.array if k == 1 else inner(wk, He).array)
            raw = project_tangent(w, raw / n)
            ref = -2 * k * np.sign(link.c_kstar) * raw
            np.testing.assert_allclose(empirical_gradient(X, y, w, link), ref, atol=1e-10)
            alg = k * link.c_kstar * raw
            np.testing.assert_allclose(empirical_gradient(X, y, w, link, "algorithm"), alg, atol=1e-10)

    def test_tangent(self):
        inst = make_instance(6, "pure-he3", seed=0)
        X, y = sample_batch(inst, 1000, 0)
        w = _unit(np.ones(6))
        assert abs(empirical_gradient(X, y, w, inst.link) @ w) <= 1e-12

    def test_population_direction(self):
        inst = make_instance(10, "pure-he2", seed=0)
        X, y = sample_batch(inst, 10**5, 4)
        w = _at_alignment(inst.w_star, 0.6, 5)
        g = empirical_gradient(X, y, w, inst.link)
        perp = inst.w_star - (w @ inst.w_star) * w
        assert (g @ -perp) / (np.linalg.norm(g) * np.linalg.norm(perp)) >= 0.99

    def test_concentration_rate(self):
        inst = make_instance(8, "pure-he2", seed=0)
        w = _at_alignment(inst.w_star, 0.7, 1)
        g_pop = population_g_star(inst.link, w, inst.w_star)
        errs = []
        for i, n in enumerate((100, 1000, 10_000)):
            sq = [
                np.sum((empirical_gradient(*sample_batch(inst, n, 100 * i + r), w, inst.link) - g_pop) ** 2)
                for r in range(30)
            ]
            errs.append(math.sqrt(np.mean(sq)))
        for a, b in zip(errs, errs[1:]):
            assert math.sqrt(10) / 2 <= a / b <= 2 * math.sqrt(10)

    def test_thread_count_invariant(self):
        inst = make_instance(5, "pure-he2", seed=0)
        X, y = sample_batch(inst, 30_000, 0)
        w = _unit(np.arange(1.0, 6.0))
        a = empirical_gradient(X, y, w, inst.link, n_threads=1)
        b = empirical_gradient(X, y, w, inst.link, n_threads=3)
        assert np.array_equal(a, b)

    def test_unknown_convention(self):
        with pytest.raises(ValueError):
            empirical_gradient(np.ones((1, 2)), np.ones(1), np.eye(2)[0], make_link("relu"), "newton")


class TestGradientMC:
    def test_mean_matches_estimator(self):
        inst = make_instance(4, "pure-he3", seed=0)
        X, y = sample_batch(inst, 20_000, 0)
        w = _unit(np.ones(4))
        mean, se = gradient_mc(X, y, w, inst.link)
        np.testing.assert_allclose(mean, empirical_gradient(X, y, w, inst.link), atol=1e-12)
        assert np.all(se > 0)

    def test_projected_se(self):
        inst = make_instance(4, "pure-he2", seed=0)
        X, y = sample_batch(inst, 20_000, 1)
        w = _unit(np.ones(4))
        mean, se, pse = gradient_mc(X, y, w, inst.link, project=np.eye(4)[:2])
        np.testing.assert_allclose(pse, se[:2], rtol=1e-8)


class TestSchedules:
    def test_default_eta(self):
        assert default_eta(make_link("pure-he2")) == pytest.approx(9 / (80 * math.e))
        assert default_eta(make_link("pure-he2")) == pytest.approx(0.04138, abs=1e-5)

    def test_default_T(self):
        assert default_T(make_link("pure-he2"), 0.01) == math.ceil(8 * math.log(200))

    def test_batch_size(self):
        link = make_link("pure-he2")
        rate = 2 * 10 * math.e**2 * math.log(1500) ** 3 / (0.01 * 0.1)
        assert gd_batch_size(link, 10) == math.ceil(rate)

    def test_threshold(self):
        assert constant_regime_threshold(make_link("pure-he2")) == pytest.approx((1 / 128) ** 2)

    def test_config_validation(self):
        for kw in ({"eta": 0}, {"T": 0}, {"batch_n": 0}, {"grad_convention": "x"}):
            with pytest.raises(ValueError):
                GDConfig(**kw)

    def test_resolved_fills_defaults(self):
        link = make_link("pure-he2")
        cfg = GDConfig(batch_n=10).resolved(link, 4)
        assert cfg.eta == default_eta(link) and cfg.T == default_T(link, 0.01) and cfg.batch_n == 10


class TestTrain:
    def _setup(self, a=0.5, seed=0, d=10, **kw):
        inst = make_instance(d, "pure-he2", seed=seed, **kw)
        return inst, _at_alignment(inst.w_star, a, seed + 1)

    def test_converges_from_warm_start(self):
        inst, w0 = self._setup()
        rep = train(Sampler(inst, seed=1), w0, GDConfig(T=40, batch_n=20_000), inst.link, inst.w_star)
        assert rep.final_sin_theta <= 0.05
        assert np.linalg.norm(rep.w_final) == pytest.approx(1.0, abs=1e-10)

    def test_contraction_regime(self):
        inst, w0 = self._setup()
        rep = train(Sampler(inst, seed=2), w0, GDConfig(T=40, batch_n=20_000), inst.link, inst.w_star)
        dots = [abs(r["dot"]) for r in rep.trace] + [abs(rep.w_final @ inst.w_star)]
        ratios = [
            (1 - b) / (1 - a)
            for a, b, r in zip(dots, dots[1:], rep.trace)
            if r["sin_theta"] >= 0.2
        ]
        assert len(ratios) >= 3
        assert np.mean(np.array(ratios) <= 1) >= 0.95
        assert np.median(ratios) <= 0.99

    def test_trace(self, tmp_path):
        inst, w0 = self._setup(d=4)
        rep = train(Sampler(inst), w0, GDConfig(T=7, batch_n=500), inst.link, inst.w_star)
        assert len(rep.trace) == 7 and rep.n_total == 3500
        assert [r["t"] for r in rep.trace] == list(range(7))
        assert all(r["sin_theta"] == pytest.approx(sin_angle(_unit(w0), inst.w_star)) for r in rep.trace[:1])
        path = tmp_path / "trace.csv"
        rep.write_trace_csv(path)
        rows = list(csv.reader(path.open()))
        assert rows[0] == ["t", "sin_theta", "loss", "grad_norm"] and len(rows) == 8
        doc = json.loads(rep.to_json())
        assert doc["n_total"] == 3500 and len(doc["trace"]) == 7

    def test_no_trace(self):
        inst, w0 = self._setup(d=4)
        rep = train(Sampler(inst), w0, GDConfig(T=3, batch_n=100, record_trace=False), inst.link)
        assert rep.trace == [] and rep.final_sin_theta is None

    def test_deterministic(self):
        inst, w0 = self._setup(d=5)
        cfg = GDConfig(T=5, batch_n=1000)
        a = train(Sampler(inst, seed=3), w0, cfg, inst.link, inst.w_star)
        b = train(Sampler(inst, seed=3), w0, cfg, inst.link, inst.w_star)
        assert a.to_json(timing=False) == b.to_json(timing=False)

    def test_gate(self):
        inst, w0 = self._setup(d=4)
        Q = 2 * constant_regime_threshold(inst.link)
        rep = train(Sampler(inst), w0, GDConfig(T=3, batch_n=100), inst.link, noise_level=Q)
        assert rep.constant_regime and rep.n_total == 0
        np.testing.assert_array_equal(rep.w_final, np.eye(4)[0])
        rep = train(Sampler(inst), w0, GDConfig(T=3, batch_n=100, gate=False), inst.link, noise_level=Q)
        assert not rep.constant_regime and rep.n_total == 300

    def test_noisy_final_loss(self):
        from simlearn.evaluation import l2_loss_mc

        Q = 0.01
        inst, w0 = self._setup(noise="orthogonal-hermite", Q=Q, m=2)
        cfg = GDConfig(T=40, batch_n=20_000, gate=False)
        rep = train(Sampler(inst, seed=4), w0, cfg, inst.link, inst.w_star, noise_level=Q)
        loss, _ = l2_loss_mc(inst, rep.w_final, 10**5, seed=5)
        assert loss <= 20 * Q + 0.05

    def test_algorithm_convention_moves_away(self):
        # the unsigned estimator ascends the truncated loss for a positive leading coefficient
        inst, w0 = self._setup(a=0.8)
        start = sin_angle(w0, inst.w_star)
        cfg = dict(T=10, batch_n=10_000)
        good = train(Sampler(inst, seed=6), w0, GDConfig(**cfg), inst.link, inst.w_star)
        bad = train(Sampler(inst, seed=6), w0, GDConfig(grad_convention="algorithm", **cfg), inst.link, inst.w_star)
        assert good.final_sin_theta < start < bad.final_sin_theta

    def test_non_unit_start(self):
        inst, _ = self._setup(d=3)
        with pytest.raises(ValueError):
            train(Sampler(inst), np.ones(3), GDConfig(T=1, batch_n=10), inst.link)
