import csv
import json
import math

import pytest

from simlearn.harness import (
    EXIT_CONFIG,
    EXIT_FAILED,
    EXIT_OK,
    EXIT_RESOURCE,
    ConfigError,
    ExperimentConfig,
    describe,
    main,
    run,
    run_experiment,
    sweep_summary,
)

SMALL = {
    "preset": "full-pipeline",
    "instance": {"dim": 6, "link": "pure-he2"},
    "init": {"n": 5000},
    "gd": {"T": 8, "batch_n": 4000},
    "eval": {"n_eval": 2000},
    "trials": 3,
}


def _write(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    text = doc if isinstance(doc, str) else json.dumps(doc, indent=2)
    path.write_text(text)
    return str(path)


def _with_output(tmp_path, doc, sub="out"):
    return {**doc, "output_dir": str(tmp_path / sub)}


class TestConfig:
    def test_defaults_filled(self):
        cfg = ExperimentConfig.from_dict(SMALL)
        assert cfg.gd["eta"] is None and cfg.gd["delta"] == 0.1
        assert cfg.init["n"] == 5000 and cfg.eval["success_alignment"] == 0.5

    def test_json_roundtrip(self):
        cfg = ExperimentConfig.from_dict(SMALL)
        assert ExperimentConfig.from_json(cfg.to_json()) == cfg

    def test_schema_error_has_line_number(self):
        text = '{\n  "preset": "full-pipeline",\n  "instance": {"dim": 4, "link": "relu"},\n  "trials": 0\n}\n'
        with pytest.raises(ConfigError) as err:
            ExperimentConfig.from_json(text)
        assert err.value.line == 4
        assert err.value.format("x.json").startswith("x.json:4: trials")

    def test_invalid_json_line(self):
        with pytest.raises(ConfigError) as err:
            ExperimentConfig.from_json('{\n  "preset": \n}')
        assert err.value.line == 3

    def test_unknown_link(self):
        doc = {**SMALL, "instance": {"dim": 4, "link": "no-such-link"}}
        with pytest.raises(ConfigError, match="instance/link"):
            ExperimentConfig.from_dict(doc)

    def test_sweep_required(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({**SMALL, "preset": "noise-sweep"})

    def test_instance_required(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"preset": "init-only"})

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({**SMALL, "bogus": 1})

    def test_trial_seeds(self):
        cfg = ExperimentConfig.from_dict({**SMALL, "master_seed": 10})
        assert [cfg.trial_seed(t) for t in range(3)] == [10, 11, 12]


class TestDescribe:
    def test_pure_he2(self, capsys, tmp_path):
        assert main(["describe", _write(tmp_path, SMALL)]) == EXIT_OK
        out = capsys.readouterr().out
        assert "k* = 2" in out and "c_k* = 1" in out
        eta = float(out.split("eta = ")[1].split()[0])
        assert eta == pytest.approx(0.04138, abs=1e-5)

    def test_eta_override_verbatim(self):
        cfg = ExperimentConfig.from_dict({**SMALL, "gd": {"eta": 0.123456789}})
        assert "eta = 0.123456789  [override]" in describe(cfg)

    def test_schedules_printed(self):
        doc = {**SMALL, "init": {}, "gd": {}}
        text = describe(ExperimentConfig.from_dict(doc))
        assert "n_init = " in text and "batch_n = " in text and "T = 43" in text

    def test_missing_link_exit_code(self, capsys, tmp_path):
        doc = {**SMALL, "instance": {"dim": 4, "link": "missing"}}
        assert main(["describe", _write(tmp_path, doc)]) == EXIT_CONFIG
        assert "instance/link" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert main(["describe", str(tmp_path / "nope.json")]) == EXIT_CONFIG

    def test_gate_reported(self):
        doc = {**SMALL, "instance": {"dim": 4, "link": "pure-he2", "noise": {"type": "bounded-random", "Q": 0.1}}}
        assert "GD skipped" in describe(ExperimentConfig.from_dict(doc))


class TestRun:
    def test_full_pipeline_artifacts(self, tmp_path):
        path = _write(tmp_path, _with_output(tmp_path, SMALL))
        assert run(path) == EXIT_OK
        out = tmp_path / "out"
        rows = list(csv.DictReader((out / "aggregate.csv").open()))
        assert [r["trial"] for r in rows] == ["0", "1", "2"]
        assert list(rows[0]) == ["trial", "seed", "n_init", "n_gd", "alignment", "final_loss", "wall_ms"]
        rep = json.loads((out / "trial_000.json").read_text())
        assert rep["n_gd"] == 8 * 4000 and len(rep["train"]["trace"]) == 8
        assert rep["success"] is True

    def test_reruns_are_byte_identical(self, tmp_path):
        cfg = ExperimentConfig.from_dict(SMALL)
        run_experiment(cfg, str(tmp_path / "a"))
        run_experiment(cfg, str(tmp_path / "b"))
        for t in range(3):
            name = f"trial_{t:03d}.json"
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_resource_limit_exit(self, tmp_path, capsys):
        path = _write(tmp_path, _with_output(tmp_path, {**SMALL, "max_samples": 1000}))
        assert run(path) == EXIT_RESOURCE
        assert "resource limit" in capsys.readouterr().err

    def test_schema_violation_exit(self, tmp_path, capsys):
        path = _write(tmp_path, {**SMALL, "trials": "many"})
        assert main(["run", path]) == EXIT_CONFIG
        assert ":" in capsys.readouterr().err

    def test_realizable_d20_pipeline(self, tmp_path):
        doc = {
            "preset": "full-pipeline",
            "instance": {"dim": 20, "link": "pure-he2"},
            "init": {"n": 20_000},
            "gd": {"T": 40, "batch_n": 20_000},
            "eval": {"n_eval": 2000},
            "trials": 10,
        }
        reports = run_experiment(ExperimentConfig.from_dict(doc), str(tmp_path / "d20"))
        assert sum(r["final_sin_theta"] <= 0.05 for r in reports) >= 9
        assert len(list(csv.DictReader((tmp_path / "d20" / "aggregate.csv").open()))) == 10

    def test_sample_sweep(self, tmp_path):
        doc = {
            "preset": "sample-sweep",
            "instance": {"dim": 10, "link": "pure-he4"},
            "sweep": [300, 3000, 30_000],
            "eval": {"n_eval": 1000, "success_alignment": 0.9},
            "trials": 5,
        }
        reports = run_experiment(ExperimentConfig.from_dict(doc), str(tmp_path / "s"))
        rows = list(csv.DictReader((tmp_path / "s" / "sweep.csv").open()))
        assert [float(r["n"]) for r in rows] == [300, 3000, 30_000]
        rates = [float(r["success_rate"]) for r in rows]
        assert rates == sorted(rates)
        assert [r[1] for r in sweep_summary(reports)] == rates

    def test_noise_sweep_gates_large_noise(self, tmp_path):
        doc = {**SMALL, "preset": "noise-sweep", "sweep": [0.0, 0.5], "trials": 1}
        reports = run_experiment(ExperimentConfig.from_dict(doc), str(tmp_path / "n"))
        assert reports[0]["train"]["constant_regime"] is False
        assert reports[1]["train"]["constant_regime"] is True
        assert (tmp_path / "n" / "sweep.csv").read_text().startswith("Q,success_rate")

    def test_warm_start(self, tmp_path):
        doc = {**SMALL, "init": {"warm_start_alignment": 0.5}, "trials": 1}
        rep = run_experiment(ExperimentConfig.from_dict(doc), str(tmp_path / "w"))[0]
        assert rep["n_init"] == 0
        assert rep["init"]["alignment"] == pytest.approx(0.5)
        assert rep["train"]["trace"][0]["sin_theta"] == pytest.approx(math.sqrt(0.75))


class TestSelftestCommand:
    def test_filter_runs_one_suite(self, capsys):
        assert main(["selftest", "--filter", "tensors"]) == EXIT_OK
        out = capsys.readouterr().out.strip().splitlines()
        assert len(out) == 1 and out[0].startswith("[PASS] tensors")

    def test_unknown_filter(self):
        assert main(["selftest", "--filter", "zzz"]) == EXIT_CONFIG

    def test_selftest_preset_via_run(self, tmp_path, capsys):
        path = _write(tmp_path, {"preset": "selftest", "filter": "contraction"})
        assert run(path) in (EXIT_OK, EXIT_FAILED)
        assert "contraction-oracle" in capsys.readouterr().out
