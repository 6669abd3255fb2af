"""Orchestration behind the CLI subcommands: build, run, write artifacts.

Every run directory receives a manifest echoing the configuration, the
package version and all seeds, which is sufficient to reproduce the run
exactly. CSV outputs use 17 significant digits and a stable column order so
repeated runs are byte-identical; wall-clock timings go to a separate
timings file to keep the result CSVs deterministic.
"""
from __future__ import annotations

import json
import os
import time

import numpy as np

from . import __version__
from .config import (
    ExperimentConfig,
    build_dual_baseline,
    build_model,
    build_two_step,
)
from .metrics import ScoreReport, score_run
from .models import NetworkModel, rng_for
from .simulate import load_dataset, make_dataset, save_dataset
from .topology import roc_sweep


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _write_matrix_csv(path, matrix):
    with open(path, "w") as fh:
        for row in np.atleast_2d(np.asarray(matrix, dtype=float)):
            fh.write(",".join(f"{v:.17g}" for v in row))
            fh.write("\n")


def _write_table_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            cells = [f"{v:.17g}" if isinstance(v, float) else str(v) for v in row]
            fh.write(",".join(cells) + "\n")


def _run_manifest(cfg: ExperimentConfig, extra=None) -> dict:
    manifest = {
        "koopnet_version": __version__,
        "config": cfg.to_dict(),
    }
    if extra:
        manifest.update(extra)
    return manifest


def run_simulate(cfg: ExperimentConfig, out_dir) -> dict:
    """Build the ground-truth model and dataset; write both."""
    os.makedirs(out_dir, exist_ok=True)
    model = build_model(cfg)
    d = cfg.dataset
    data = make_dataset(
        model,
        n_samples=d.n_samples,
        t_sample=d.t_sample,
        state_box=(d.state_low, d.state_high),
        input_box=(d.input_low, d.input_high),
        noise_sigma=d.noise_sigma,
        seed=d.seed,
        max_step=d.max_step,
        sigma_is_variance=d.sigma_is_variance,
    )
    dataset_dir = os.path.join(out_dir, "dataset")
    save_dataset(data, dataset_dir)
    _write_json(os.path.join(out_dir, "model.json"), model.to_manifest())
    _write_json(os.path.join(out_dir, "manifest.json"), _run_manifest(cfg))
    return {"dataset": dataset_dir, "model": os.path.join(out_dir, "model.json")}


def _load_truth(data_dir):
    candidates = [
        os.path.join(data_dir, "..", "model.json"),
        os.path.join(data_dir, "model.json"),
    ]
    for path in candidates:
        if os.path.exists(path):
            with open(path) as fh:
                return NetworkModel.from_manifest(json.load(fh))
    return None


def _parameters_payload(est) -> dict:
    def table(d):
        return {text: [repr(float(v)) for v in vec] for text, vec in d.items()}

    return {
        "local": [table(t) for t in est.local],
        "coupling": [
            {str(k): table(t) for k, t in sorted(node.items())} for node in est.coupling
        ],
        "inputs": [
            {str(k): table(t) for k, t in sorted(node.items())} for node in est.inputs
        ],
        "failed_nodes": list(est.failed_nodes),
    }


def _write_identify_outputs(out_dir, ident, truth, cfg, method: str):
    os.makedirs(out_dir, exist_ok=True)
    lam = ident.weights_.state_weights if hasattr(ident, "weights_") else ident.state_weights_
    delta = ident.weights_.input_weights if hasattr(ident, "weights_") else ident.input_weights_
    _write_matrix_csv(os.path.join(out_dir, "lambda.csv"), lam)
    if delta.size:
        _write_matrix_csv(os.path.join(out_dir, "delta.csv"), delta)
    topo = ident.topology_
    _write_json(
        os.path.join(out_dir, "topology.json"),
        {
            "threshold": topo.threshold,
            "neighbors": topo.neighbors,
            "inputs": topo.inputs,
            "meta": topo.meta,
        },
    )
    _write_json(
        os.path.join(out_dir, "parameters.json"), _parameters_payload(ident.parameters_)
    )
    if getattr(ident, "global_", None) is not None:
        _write_matrix_csv(os.path.join(out_dir, "global_A.csv"), ident.global_.A)
        if ident.global_.B.size:
            _write_matrix_csv(os.path.join(out_dir, "global_B.csv"), ident.global_.B)

    report = None
    roc = None
    if truth is not None:
        sweep_vals = cfg.topology.threshold_sweep
        roc = roc_sweep(lam, truth, thresholds=sweep_vals)
        _write_matrix_csv(os.path.join(out_dir, "roc.csv"), roc.points)
        report = score_run(
            truth,
            topo,
            ident.parameters_,
            roc=roc,
            count_self_loops=cfg.metrics.count_self_loops,
        )
        _write_table_csv(
            os.path.join(out_dir, "score.csv"),
            ScoreReport.CSV_COLUMNS,
            [[float(v) if not isinstance(v, int) else v for v in report.to_csv_row()]],
        )
        with open(os.path.join(out_dir, "score.txt"), "w") as fh:
            fh.write(report.to_text() + "\n")
    failures = dict(getattr(ident, "failures_", {}))
    extra = {
        "method": method,
        "scored": truth is not None,
        "node_failures": {str(k): v for k, v in failures.items()},
        "diagnostics": getattr(ident.dual_, "operator_").diagnostics,
        "selected_gamma": getattr(ident.dual_, "gamma_", None),
    }
    _write_json(os.path.join(out_dir, "manifest.json"), _run_manifest(cfg, extra))
    return report, failures


def run_identify(cfg: ExperimentConfig, data_dir, out_dir, method: str = "two_step"):
    """Identify from a stored dataset; scoring happens when truth is present."""
    data = load_dataset(data_dir)
    truth = _load_truth(data_dir)
    model_for_dicts = truth if truth is not None else build_model(cfg)
    if method == "two_step":
        ident = build_two_step(cfg, model_for_dicts)
    else:
        ident = build_dual_baseline(cfg, model_for_dicts)
    ident.fit(data)
    return _write_identify_outputs(out_dir, ident, truth, cfg, method)


def run_score(truth_path, params_path, topology_path, out_dir, cfg=None):
    """Score previously written parameter and topology files."""
    from .local import ParameterEstimate

    with open(truth_path) as fh:
        truth = NetworkModel.from_manifest(json.load(fh))
    with open(params_path) as fh:
        raw = json.load(fh)

    def untable(d):
        return {text: np.array([float(v) for v in vec]) for text, vec in d.items()}

    est = ParameterEstimate(
        local=[untable(t) for t in raw["local"]],
        coupling=[{int(k): untable(t) for k, t in node.items()} for node in raw["coupling"]],
        inputs=[{int(k): untable(t) for k, t in node.items()} for node in raw["inputs"]],
        failed_nodes=raw.get("failed_nodes", []),
    )
    with open(topology_path) as fh:
        traw = json.load(fh)

    class _Topo:
        neighbors = traw["neighbors"]
        inputs = traw["inputs"]

    count_self = cfg.metrics.count_self_loops if cfg is not None else False
    report = score_run(truth, _Topo, est, count_self_loops=count_self)
    os.makedirs(out_dir, exist_ok=True)
    _write_table_csv(
        os.path.join(out_dir, "score.csv"),
        ScoreReport.CSV_COLUMNS,
        [report.to_csv_row()],
    )
    with open(os.path.join(out_dir, "score.txt"), "w") as fh:
        fh.write(report.to_text() + "\n")
    return report


SWEEP_COLUMNS = (
    "axis", "value", "repeat", "method", "model_seed", "dataset_seed",
    "rmse", "max_error", "min_error", "std_error", "rmse_strict",
    "rmse_extended", "tpr", "fpr", "auroc",
)


def _apply_axis(cfg_dict: dict, axis: str, value):
    target = dict(cfg_dict)
    if axis in ("n_nodes", "edge_prob"):
        target["model"] = {**target["model"], axis: value}
    elif axis in ("n_samples", "noise_sigma", "t_sample"):
        target["dataset"] = {**target["dataset"], axis: value}
    elif axis == "threshold":
        target["topology"] = {**target["topology"], axis: value}
    elif axis == "gamma":
        target["dual"] = {**target["dual"], axis: value}
    else:
        raise ValueError(f"unknown sweep axis {axis}")
    return target


def run_sweep_point(cfg: ExperimentConfig, method: str):
    """One (config, method) evaluation: simulate, identify, score."""
    model = build_model(cfg)
    d = cfg.dataset
    data = make_dataset(
        model,
        n_samples=d.n_samples,
        t_sample=d.t_sample,
        state_box=(d.state_low, d.state_high),
        input_box=(d.input_low, d.input_high),
        noise_sigma=d.noise_sigma,
        seed=d.seed,
        max_step=d.max_step,
        sigma_is_variance=d.sigma_is_variance,
    )
    ident = (
        build_two_step(cfg, model) if method == "two_step" else build_dual_baseline(cfg, model)
    )
    ident.fit(data)
    lam = ident.weights_.state_weights if hasattr(ident, "weights_") else ident.state_weights_
    roc = roc_sweep(lam, model, thresholds=cfg.topology.threshold_sweep)
    report = score_run(
        model,
        ident.topology_,
        ident.parameters_,
        roc=roc,
        count_self_loops=cfg.metrics.count_self_loops,
    )
    return report


def run_sweep(cfg: ExperimentConfig, out_dir):
    """Vary exactly one axis; one CSV row per (value, repeat, method)."""
    from .config import config_from_dict

    if cfg.sweep is None:
        raise ValueError("config has no sweep section")
    sweep = cfg.sweep
    methods = ["two_step", "dual_baseline"] if sweep.method == "both" else [sweep.method]
    os.makedirs(out_dir, exist_ok=True)
    base = cfg.to_dict()
    base.pop("sweep", None)
    rows = []
    timings = []
    for vi, value in enumerate(sweep.values):
        for rep in range(sweep.repeats):
            point_dict = _apply_axis(base, sweep.axis, value)
            seeds = rng_for(cfg.model.seed, "sweep", vi, rep).integers(0, 2**31 - 1, size=2)
            point_dict["model"] = {**point_dict["model"], "seed": int(seeds[0])}
            point_dict["dataset"] = {**point_dict["dataset"], "seed": int(seeds[1])}
            point = config_from_dict(point_dict)
            for method in methods:
                started = time.perf_counter()
                report = run_sweep_point(point, method)
                elapsed = time.perf_counter() - started
                rows.append([
                    sweep.axis, float(value), rep, method,
                    point.model.seed, point.dataset.seed,
                    report.rmse, report.max_error, report.min_error,
                    report.std_error, report.rmse_strict, report.rmse_extended,
                    report.tpr, report.fpr, report.auroc,
                ])
                timings.append([sweep.axis, float(value), rep, method, elapsed])
    _write_table_csv(os.path.join(out_dir, "sweep.csv"), SWEEP_COLUMNS, rows)
    _write_table_csv(
        os.path.join(out_dir, "timings.csv"),
        ("axis", "value", "repeat", "method", "wall_time_s"),
        timings,
    )
    summary = []
    for method in methods:
        for value in sweep.values:
            sel = [
                r for r in rows
                if r[3] == method and r[1] == float(value) and np.isfinite(r[6])
            ]
            if not sel:
                continue
            rmses = np.array([r[6] for r in sel])
            aurocs = np.array([r[14] for r in sel])
            summary.append([
                sweep.axis, float(value), method, len(sel),
                float(np.median(rmses)),
                float(np.percentile(rmses, 25)), float(np.percentile(rmses, 75)),
                float(np.median(aurocs)) if np.isfinite(aurocs).all() else float("nan"),
            ])
    _write_table_csv(
        os.path.join(out_dir, "summary.csv"),
        ("axis", "value", "method", "n", "rmse_median", "rmse_q25", "rmse_q75", "auroc_median"),
        summary,
    )
    _write_json(os.path.join(out_dir, "manifest.json"), _run_manifest(cfg))
    return rows
