"""Experiment-matrix orchestration: expand cells, run them in a bounded
worker pool, and join the results into aggregates and paired comparisons."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__, analysis, data, engine, estimation
from . import acquisition as acq_mod
from . import selection as sel_mod


@dataclass
class MatrixConfig:
    dataset: data.DatasetSpec
    acquisition: acq_mod.AcquisitionKind
    selection: sel_mod.SelectionConfig
    estimators: list[str]
    cycles: int
    seeds: int = 8
    base_seed: int = 0
    epochs_per_cycle: int = 30
    exact_z: bool = False
    ssrs_smooth: bool = False
    hidden_dims: list[int] | None = None
    out_dir: str = "out"
    workers: int = 1
    timings_in_curve: bool = False

    def group_name(self) -> str:
        return (f"{self.dataset.name.replace(':', '_')}_{self.acquisition.tag}"
                f"_{self.selection.strategy}_k{self.selection.k}"
                f"_b{self.selection.beta:g}")


@dataclass
class Cell:
    estimator: str
    seed: int
    rel_dir: str
    config: engine.ExperimentConfig


@dataclass
class CellOutcome:
    estimator: str
    seed: int
    rel_dir: str
    status: str                 # ok | skipped | failed
    final_test_acc: float | None = None
    error: str | None = None


@dataclass
class MatrixReport:
    out_dir: str
    group: str
    cells: list[CellOutcome] = field(default_factory=list)
    comparison: dict | None = None

    @property
    def failed(self) -> bool:
        return any(c.status == "failed" for c in self.cells)


def experiment_config(matrix: MatrixConfig, estimator: str) -> engine.ExperimentConfig:
    est = estimation.EstimatorConfig(
        estimator=estimator,
        include_z=matrix.exact_z,
        epochs_per_cycle=matrix.epochs_per_cycle,
        ssrs_rank_mode="smooth" if matrix.ssrs_smooth else "hard")
    return engine.ExperimentConfig(
        dataset=replace(matrix.dataset),
        acquisition=matrix.acquisition,
        selection=matrix.selection,
        estimator=est,
        cycles=matrix.cycles,
        hidden_dims=matrix.hidden_dims,
        emit_log_z=matrix.exact_z)


def expand(matrix: MatrixConfig) -> list[Cell]:
    group = matrix.group_name()
    cells = []
    for estimator in matrix.estimators:
        for offset in range(matrix.seeds):
            seed = matrix.base_seed + offset
            cells.append(Cell(estimator, seed, f"{group}/{estimator}/s{seed}",
                              experiment_config(matrix, estimator)))
    return cells


def _cell_is_complete(cell_dir: Path, manifest: dict) -> bool:
    path = cell_dir / "manifest.json"
    if not path.exists() or not (cell_dir / "curve.csv").exists():
        return False
    try:
        existing = json.loads(path.read_text())
    except json.JSONDecodeError:
        return False
    return (existing.get("config") == manifest["config"]
            and existing.get("seed") == manifest["seed"]
            and existing.get("status") == "ok")


def run_cell(payload: tuple) -> CellOutcome:
    """Execute one (config, seed) cell and write its run directory."""
    cell, out_root, timings_in_curve = payload
    cell_dir = Path(out_root) / cell.rel_dir
    manifest = engine.config_manifest(cell.config, cell.seed)
    if _cell_is_complete(cell_dir, manifest):
        existing = json.loads((cell_dir / "manifest.json").read_text())
        return CellOutcome(cell.estimator, cell.seed, cell.rel_dir, "skipped",
                           existing.get("final_test_acc"))
    try:
        result = engine.run_active_learning(cell.config, cell.seed)
    except Exception as exc:  # config errors, data errors
        return CellOutcome(cell.estimator, cell.seed, cell.rel_dir, "failed",
                           error=f"{type(exc).__name__}: {exc}")
    engine.write_run_outputs(cell_dir, cell.config, cell.seed, result,
                             __version__, timings_in_curve)
    if result.status != "ok":
        return CellOutcome(cell.estimator, cell.seed, cell.rel_dir, "failed",
                           error=result.error)
    return CellOutcome(cell.estimator, cell.seed, cell.rel_dir, "ok",
                       result.curve[-1].test_acc)


def read_curve_accuracies(path) -> np.ndarray:
    lines = Path(path).read_text().strip().splitlines()
    if not lines or lines[0] != engine.CURVE_HEADER:
        raise ValueError(f"{path}: unexpected curve header")
    return np.array([float(line.split(",")[2]) for line in lines[1:]])


def _write_aggregate(est_dir: Path, curves: list[np.ndarray]):
    agg = analysis.aggregate_curves(curves)
    lines = ["cycle,mean_acc,std_acc,n_seeds"]
    for cycle, (m, s) in enumerate(zip(agg.mean, agg.std)):
        lines.append(f"{cycle},{repr(float(m))},{repr(float(s))},{agg.n_seeds}")
    (est_dir / "aggregate.csv").write_text("\n".join(lines) + "\n")


def run_matrix(matrix: MatrixConfig) -> MatrixReport:
    """Run every cell (bounded parallelism), then join aggregates and the
    DMLE-vs-IMLE comparison; cell failures are recorded, not fatal."""
    out_root = Path(matrix.out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    cells = expand(matrix)
    payloads = [(cell, str(out_root), matrix.timings_in_curve) for cell in cells]
    if matrix.workers <= 1:
        outcomes = [run_cell(p) for p in payloads]
    else:
        # cells are pure functions of (config, seed) writing disjoint dirs,
        # so a thread pool parallelises them without changing any output
        with ThreadPoolExecutor(max_workers=matrix.workers) as pool:
            outcomes = list(pool.map(run_cell, payloads))

    report = MatrixReport(out_dir=str(out_root), group=matrix.group_name(),
                          cells=outcomes)
    group_dir = out_root / matrix.group_name()

    final_accs: dict[str, dict[int, float]] = {}
    for estimator in matrix.estimators:
        est_outcomes = [o for o in outcomes
                        if o.estimator == estimator and o.status != "failed"]
        curves = []
        finals = {}
        for o in est_outcomes:
            accs = read_curve_accuracies(out_root / o.rel_dir / "curve.csv")
            curves.append(accs)
            finals[o.seed] = float(accs[-1])
        if curves:
            _write_aggregate(group_dir / estimator, curves)
        final_accs[estimator] = finals

    if "dmle" in final_accs and "imle" in final_accs:
        shared = sorted(set(final_accs["dmle"]) & set(final_accs["imle"]))
        if shared:
            pairs = [(final_accs["dmle"][s], final_accs["imle"][s]) for s in shared]
            wil = analysis.wilcoxon_exact(pairs)
            report.comparison = {
                "seeds": shared,
                "dmle_final_acc": [final_accs["dmle"][s] for s in shared],
                "imle_final_acc": [final_accs["imle"][s] for s in shared],
                "mean_gap": float(np.mean([a - b for a, b in pairs])),
                "w_statistic": wil.w_statistic,
                "n_effective": wil.n_effective,
                "p_value": wil.p_value,
            }
            (group_dir / "comparison.json").write_text(
                json.dumps(report.comparison, indent=2, sort_keys=True))

    summary = {
        "group": report.group,
        "code_version": __version__,
        "cells": [{"estimator": o.estimator, "seed": o.seed, "dir": o.rel_dir,
                   "status": o.status, "final_test_acc": o.final_test_acc,
                   "error": o.error} for o in outcomes],
    }
    (out_root / f"{report.group}.summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True))
    return report
