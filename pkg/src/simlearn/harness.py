"""Experiment configuration, presets, persistence and the command line."""

from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import os
import re
import sys
import time
from dataclasses import dataclass, field
from typing import Optional

import jsonschema
import numpy as np

from .chow_pca import InitConfig, InitReport, default_eps0, init_sample_size, init_tensor_pca
from .evaluation import alignment, evaluate, sin_angle
from .exceptions import InvalidLinkError, ResourceLimitError
from .links import load_link
from .sphere_gd import (
    GDConfig,
    constant_regime_threshold,
    default_eta,
    default_T,
    gd_batch_size,
    train,
)
from .synth import Sampler, _seedseq, label_cap_for, make_instance, orthogonal_unit
from .tensors import entry_cap, max_entries

EXIT_OK = 0
EXIT_FAILED = 2
EXIT_CONFIG = 64
EXIT_RESOURCE = 70

PRESETS = ("init-only", "full-pipeline", "noise-sweep", "sample-sweep", "selftest")
NOISE_TYPES = ("realizable", "orthogonal-hermite", "partial-trace", "bounded-random")
DEFAULT_MAX_SAMPLES = 10**8

_POS_INT = {"type": "integer", "minimum": 1}
_POS_NUM = {"type": "number", "exclusiveMinimum": 0}
_OPT_POS_INT = {"type": ["integer", "null"], "minimum": 1}
_OPT_POS_NUM = {"type": ["number", "null"], "exclusiveMinimum": 0}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["preset"],
    "additionalProperties": False,
    "properties": {
        "preset": {"enum": list(PRESETS)},
        "instance": {
            "type": "object",
            "required": ["dim", "link"],
            "additionalProperties": False,
            "properties": {
                "dim": {"type": "integer", "minimum": 2},
                "link": {"type": ["string", "object", "array"]},
                "noise": {
                    "type": "object",
                    "required": ["type"],
                    "additionalProperties": False,
                    "properties": {
                        "type": {"enum": list(NOISE_TYPES)},
                        "Q": {"type": "number", "minimum": 0},
                        "m": {"type": "integer", "minimum": 0},
                        "k": {"type": "integer", "minimum": 2},
                    },
                },
            },
        },
        "init": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n": _OPT_POS_INT,
                "k": _OPT_POS_INT,
                "eps": _POS_NUM,
                "eps0": _OPT_POS_NUM,
                "sample_constant": _POS_NUM,
                "svd": {"enum": ["auto", "full", "power"]},
                "power_iters": _POS_INT,
                "warm_start_alignment": {"type": ["number", "null"], "minimum": -1, "maximum": 1},
            },
        },
        "gd": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "eta": _OPT_POS_NUM,
                "T": _OPT_POS_INT,
                "batch_n": _OPT_POS_INT,
                "delta": _POS_NUM,
                "eps": _POS_NUM,
                "sample_constant": _POS_NUM,
                "grad_convention": {"enum": ["riemannian", "algorithm"]},
                "gate": {"type": "boolean"},
                "label_truncation": {"type": "boolean"},
                "record_trace": {"type": "boolean"},
            },
        },
        "eval": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_eval": {"type": "integer", "minimum": 1000},
                "success_alignment": {"type": "number"},
            },
        },
        "sweep": {"type": "array", "minItems": 1, "items": {"type": "number", "minimum": 0}},
        "trials": _POS_INT,
        "master_seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
        "n_threads": _OPT_POS_INT,
        "max_samples": _POS_INT,
        "max_entries": _POS_INT,
        "filter": {"type": ["string", "null"]},
    },
    "allOf": [
        {
            "if": {"properties": {"preset": {"not": {"const": "selftest"}}}},
            "then": {"required": ["instance"]},
        },
        {
            "if": {"properties": {"preset": {"enum": ["noise-sweep", "sample-sweep"]}}},
            "then": {"required": ["sweep"]},
        },
    ],
}

DEFAULTS = {
    "init": {"n": None, "k": None, "eps": 0.01, "eps0": None, "sample_constant": 1.0, "svd": "auto",
             "power_iters": 200, "warm_start_alignment": None},
    "gd": {"eta": None, "T": None, "batch_n": None, "delta": 0.1, "eps": 0.01, "sample_constant": 1.0,
           "grad_convention": "riemannian", "gate": True, "label_truncation": True, "record_trace": True},
    "eval": {"n_eval": 10**5, "success_alignment": 0.5},
}


class ConfigError(ValueError):
    """Invalid configuration; ``line`` points into the source text when known."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line

    def format(self, source="config"):
        where = f"{source}:{self.line}" if self.line else source
        return f"{where}: {self}"


def _line_of(text, path):
    """Best-effort line number of the JSON value at ``path`` in ``text``."""
    if text is None:
        return None
    pos = 0
    for key in path:
        if isinstance(key, int):
            continue
        m = re.compile(r'"' + re.escape(str(key)) + r'"\s*:').search(text, pos)
        if m is None:
            break
        pos = m.start()
    return text.count("\n", 0, pos) + 1


@dataclass
class ExperimentConfig:
    preset: str
    instance: Optional[dict] = None
    init: dict = field(default_factory=dict)
    gd: dict = field(default_factory=dict)
    eval: dict = field(default_factory=dict)
    sweep: Optional[list] = None
    trials: int = 1
    master_seed: int = 0
    output_dir: str = "simlearn-out"
    n_threads: Optional[int] = None
    max_samples: int = DEFAULT_MAX_SAMPLES
    max_entries: Optional[int] = None
    filter: Optional[str] = None

    @classmethod
    def from_dict(cls, doc, text=None):
        try:
            jsonschema.validate(doc, CONFIG_SCHEMA)
        except jsonschema.ValidationError as err:
            path = list(err.absolute_path)
            where = "/".join(str(p) for p in path) or "<root>"
            raise ConfigError(f"{where}: {err.message}", _line_of(text, path)) from None
        doc = copy.deepcopy(doc)
        for sect, defaults in DEFAULTS.items():
            doc[sect] = {**defaults, **doc.get(sect, {})}
        cfg = cls(**doc)
        if cfg.instance is not None:
            try:
                cfg.link_spec()
            except (InvalidLinkError, ValueError, OSError) as err:
                raise ConfigError(f"instance/link: {err}", _line_of(text, ["instance", "link"])) from None
        return cfg

    @classmethod
    def from_json(cls, text):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as err:
            raise ConfigError(f"invalid JSON: {err.msg}", err.lineno) from None
        return cls.from_dict(doc, text)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(fh.read())

    def to_dict(self):
        out = {k: copy.deepcopy(v) for k, v in self.__dict__.items() if v is not None}
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def link_spec(self):
        return load_link(self.instance["link"])

    @property
    def noise(self):
        return (self.instance or {}).get("noise", {"type": "realizable"})

    def trial_seed(self, trial):
        return self.master_seed + trial


def build_instance(cfg, seed, Q=None):
    link = cfg.link_spec()
    noise = dict(cfg.noise)
    if Q is not None:
        noise["Q"] = Q
        if noise["type"] == "realizable":
            noise["type"] = "orthogonal-hermite"
    cap = label_cap_for(link, cfg.gd["eps"]) if cfg.gd["label_truncation"] else None
    return make_instance(cfg.instance["dim"], link, noise=noise, seed=seed, label_cap=cap)


def init_config(cfg, seed, n=None):
    ic = cfg.init
    return InitConfig(
        k=ic["k"],
        eps=ic["eps"],
        eps0=ic["eps0"],
        n_override=n if n is not None else ic["n"],
        sample_constant=ic["sample_constant"],
        svd=ic["svd"],
        power_iters=ic["power_iters"],
        seed=seed,
        n_threads=cfg.n_threads,
    )


def gd_config(cfg, seed):
    g = cfg.gd
    return GDConfig(
        eta=g["eta"],
        T=g["T"],
        batch_n=g["batch_n"],
        delta=g["delta"],
        eps=g["eps"],
        seed=seed,
        record_trace=g["record_trace"],
        grad_convention=g["grad_convention"],
        gate=g["gate"],
        sample_constant=g["sample_constant"],
        n_threads=cfg.n_threads,
    )


def _check_budget(cfg, n_init, n_gd):
    total = n_init + n_gd
    if total > cfg.max_samples:
        raise ResourceLimitError(
            f"trial needs {total} samples (init {n_init}, gd {n_gd}); cap is {cfg.max_samples}"
        )


def run_trial(cfg, trial, sweep_value=None):
    """One isolated trial; returns ``(canonical_report, wall_ms)``."""
    t0 = time.perf_counter()
    seed = cfg.trial_seed(trial)
    Q = sweep_value if cfg.preset == "noise-sweep" else None
    n_init = sweep_value if cfg.preset == "sample-sweep" else None
    instance = build_instance(cfg, seed, Q)
    link = instance.link
    sampler = Sampler(instance, seed=_seedseq(seed, 2), n_threads=cfg.n_threads)
    icfg = init_config(cfg, seed, None if n_init is None else int(n_init))
    do_gd = cfg.preset in ("full-pipeline", "noise-sweep")
    gcfg = gd_config(cfg, seed).resolved(link, instance.dim)
    planned_init = icfg.n_override or init_sample_size(
        link, instance.dim, icfg.k, icfg.eps, icfg.eps0, icfg.sample_constant
    )
    if cfg.init["warm_start_alignment"] is not None:
        planned_init = 0
    _check_budget(cfg, planned_init, gcfg.T * gcfg.batch_n if do_gd else 0)

    a0 = cfg.init["warm_start_alignment"]
    if a0 is not None:
        v = orthogonal_unit(instance.w_star, _seedseq(seed, 4))
        w0 = a0 * instance.w_star + math.sqrt(1 - a0 * a0) * v
        init = InitReport(w0, np.ones(1), 0.0, 0.0, 0, alignment(w0, instance.w_star, link))
    else:
        init = init_tensor_pca(sampler, icfg, link, instance.w_star)
    report = {
        "preset": cfg.preset,
        "trial": trial,
        "seed": seed,
        "instance": instance.to_dict(),
        "init": init.to_dict(timing=False),
    }
    if sweep_value is not None:
        report["sweep_value"] = sweep_value
    w = init.w0
    n_gd = 0
    if do_gd:
        tr = train(sampler, init.w0, gcfg, link, instance.w_star, instance.noise_level)
        report["train"] = tr.to_dict(timing=False)
        w, n_gd = tr.w_final, tr.n_total
    ev = evaluate(instance, w, cfg.eval["n_eval"], _seedseq(seed, 3), cfg.n_threads)
    report["eval"] = ev.to_dict()
    report["n_init"] = init.n_used
    report["n_gd"] = n_gd
    report["final_sin_theta"] = sin_angle(w, instance.w_star)
    report["success"] = bool(ev.alignment >= cfg.eval["success_alignment"])
    return report, (time.perf_counter() - t0) * 1e3


def canonical_json(report):
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


AGG_FIELDS = ["trial", "seed", "n_init", "n_gd", "alignment", "final_loss", "wall_ms"]


def run_experiment(cfg, output_dir=None):
    """Execute a non-selftest preset; returns the per-trial reports."""
    out = output_dir or cfg.output_dir
    os.makedirs(out, exist_ok=True)
    values = cfg.sweep if cfg.preset in ("noise-sweep", "sample-sweep") else [None]
    cap = cfg.max_entries or max_entries()
    reports, rows = [], []
    with entry_cap(cap):
        for vi, value in enumerate(values):
            for trial in range(cfg.trials):
                rep, wall = run_trial(cfg, trial, value)
                name = f"trial_{trial:03d}.json" if value is None else f"trial_{vi:02d}_{trial:03d}.json"
                with open(os.path.join(out, name), "w") as fh:
                    fh.write(canonical_json(rep))
                row = {
                    "trial": trial,
                    "seed": rep["seed"],
                    "n_init": rep["n_init"],
                    "n_gd": rep["n_gd"],
                    "alignment": rep["eval"]["alignment"],
                    "final_loss": rep["eval"]["l2_loss_mc"],
                    "wall_ms": round(wall, 3),
                }
                if value is not None:
                    row["sweep_value"] = value
                rows.append(row)
                reports.append(rep)
    fields = AGG_FIELDS + (["sweep_value"] if values != [None] else [])
    with open(os.path.join(out, "aggregate.csv"), "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=fields)
        wr.writeheader()
        wr.writerows(rows)
    if values != [None]:
        write_sweep_summary(os.path.join(out, "sweep.csv"), cfg.preset, reports)
    return reports


def sweep_summary(reports):
    """``(value, success_rate, mean_alignment, mean_final_loss)`` per sweep value, in order."""
    groups = {}
    for rep in reports:
        groups.setdefault(rep["sweep_value"], []).append(rep)
    out = []
    for value, reps in groups.items():
        out.append(
            (
                value,
                float(np.mean([r["success"] for r in reps])),
                float(np.mean([r["eval"]["alignment"] for r in reps])),
                float(np.mean([r["eval"]["l2_loss_mc"] for r in reps])),
            )
        )
    return out


def write_sweep_summary(path, preset, reports):
    label = "n" if preset == "sample-sweep" else "Q"
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow([label, "success_rate", "mean_alignment", "mean_final_loss"])
        wr.writerows(sweep_summary(reports))


def describe(cfg):
    """Resolved parameters and schedules as text."""
    lines = [f"preset: {cfg.preset}"]
    if cfg.instance is None:
        lines.append(f"filter: {cfg.filter}")
        return "\n".join(lines) + "\n"
    link = cfg.link_spec()
    d = cfg.instance["dim"]
    k = link.k_star
    noise = cfg.noise
    Q = float(noise.get("Q", 0.0))
    g, ic = cfg.gd, cfg.init
    lines += [
        f"dimension: d = {d}",
        f"link: {link.name}  k* = {k}  c_k* = {link.c_kstar:.6g}  C_k* = {link.C_kstar:.6g}  "
        f"B4 = {link.B4:.6g}  tail_mass = {link.tail_mass:.3g}",
        f"noise: {noise['type']}  Q = {Q:.6g}",
    ]
    if g["eta"] is None:
        lines.append(f"eta = {default_eta(link):.6g}  [9/(40 e k* c_k*)]")
    else:
        lines.append(f"eta = {g['eta']!r}  [override]")
    if g["T"] is None:
        lines.append(f"T = {default_T(link, g['eps'])}  [ceil(8 log(C_k*/eps)), eps = {g['eps']}]")
    else:
        lines.append(f"T = {g['T']}  [override]")
    if g["batch_n"] is None:
        bn = gd_batch_size(link, d, g["eps"], g["delta"], g["sample_constant"])
        lines.append(
            f"batch_n = {bn}  [{g['sample_constant']} * C_k* d e^k* log^(k*+1)(B4/eps) / (eps delta), "
            f"delta = {g['delta']}]"
        )
    else:
        lines.append(f"batch_n = {g['batch_n']}  [override]")
    eps0 = ic["eps0"] if ic["eps0"] is not None else default_eps0(link, ic["k"])
    if ic["warm_start_alignment"] is not None:
        lines.append(f"init: warm start at w0 . w* = {ic['warm_start_alignment']}")
    elif ic["n"] is None:
        n0 = init_sample_size(link, d, ic["k"], ic["eps"], ic["eps0"], ic["sample_constant"])
        lines.append(
            f"n_init = {n0}  [{ic['sample_constant']} * e^k log^k(B4/eps) d^(k-l) / eps0^2 + 1/eps, "
            f"eps0 = {eps0:.6g}]"
        )
    else:
        lines.append(f"n_init = {ic['n']}  [override]")
    thr = constant_regime_threshold(link)
    gated = g["gate"] and Q > thr
    lines.append(
        f"constant-regime threshold: (c_k*/(64 k*))^2 = {thr:.6g}  gate = {g['gate']}"
        + ("  -> GD skipped" if gated else "")
    )
    if g["label_truncation"]:
        lines.append(f"label cap: sqrt(4 B4 / eps) = {label_cap_for(link, g['eps']):.6g}")
    lines.append(f"gradient convention: {g['grad_convention']}")
    if cfg.sweep is not None:
        lines.append(f"sweep: {cfg.sweep}")
    lines.append(
        f"trials: {cfg.trials}  seeds {cfg.trial_seed(0)}..{cfg.trial_seed(cfg.trials - 1)}  "
        f"output_dir: {cfg.output_dir}"
    )
    return "\n".join(lines) + "\n"


def _selftest(filter_=None, stream=None):
    from .selftest import run_selftest

    stream = stream or sys.stdout
    results = run_selftest(filter_)
    for r in results:
        print(r.line(), file=stream)
    if not results:
        print(f"no suite matches {filter_!r}", file=stream)
        return EXIT_CONFIG
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILED


def run(path, stream=None):
    """``simlearn run``: returns an exit code."""
    stream = stream or sys.stdout
    try:
        cfg = ExperimentConfig.load(path)
    except ConfigError as err:
        print(err.format(path), file=sys.stderr)
        return EXIT_CONFIG
    except OSError as err:
        print(f"{path}: {err}", file=sys.stderr)
        return EXIT_CONFIG
    if cfg.preset == "selftest":
        return _selftest(cfg.filter, stream)
    try:
        reports = run_experiment(cfg)
    except ResourceLimitError as err:
        print(f"resource limit: {err}", file=sys.stderr)
        return EXIT_RESOURCE
    ok = sum(r["success"] for r in reports)
    print(f"{len(reports)} trials, {ok} successful; reports in {cfg.output_dir}", file=stream)
    return EXIT_OK


def main(argv=None):
    parser = argparse.ArgumentParser(prog="simlearn", description="Single-index model learning experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("config")
    p_desc = sub.add_parser("describe", help="print resolved parameters of a config")
    p_desc.add_argument("config")
    p_self = sub.add_parser("selftest", help="run the acceptance suites")
    p_self.add_argument("--filter", default=None, help="substring of suite names to run")
    args = parser.parse_args(argv)

    if args.command == "run":
        return run(args.config)
    if args.command == "describe":
        try:
            cfg = ExperimentConfig.load(args.config)
        except ConfigError as err:
            print(err.format(args.config), file=sys.stderr)
            return EXIT_CONFIG
        except OSError as err:
            print(f"{args.config}: {err}", file=sys.stderr)
            return EXIT_CONFIG
        sys.stdout.write(describe(cfg))
        return EXIT_OK
    return _selftest(args.filter)
