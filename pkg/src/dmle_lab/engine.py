"""The active-learning loop: score the pool, select, ask the oracle,
retrain with the configured estimator, evaluate, and log every cycle.

A run is a deterministic function of (config, seed): every random draw
comes from a counter-based stream keyed by purpose and cycle, so pool
scoring order, worker counts, and re-runs never shift the results.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import acquisition as acq_mod
from . import analysis, data, estimation, mlp, selection
from .rng import stream

CURVE_HEADER = "cycle,n_labeled,test_acc,nll,dependency,sum_logZ,acq_s,sel_s,train_s"


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class PoolState:
    """Disjoint labeled/unlabeled index sets over the train split."""

    labeled: list[int]
    unlabeled: np.ndarray  # sorted

    @classmethod
    def fresh(cls, train_indices: np.ndarray) -> "PoolState":
        return cls(labeled=[], unlabeled=np.sort(np.asarray(train_indices)))

    def mark_labeled(self, indices: np.ndarray):
        chosen = set(int(i) for i in indices)
        if not chosen <= set(self.unlabeled.tolist()):
            raise ValueError("labeling an index outside the unlabeled pool")
        self.labeled.extend(int(i) for i in indices)
        self.unlabeled = self.unlabeled[~np.isin(self.unlabeled, list(chosen))]


@dataclass
class ExperimentConfig:
    dataset: data.DatasetSpec
    acquisition: acq_mod.AcquisitionKind
    selection: selection.SelectionConfig
    estimator: estimation.EstimatorConfig
    cycles: int
    hidden_dims: list[int] | None = None
    adam_lr: float = 0.001
    emit_log_z: bool = False   # per-cycle cumulative ln Z in the curve

    def validate_against(self, dataset: data.Dataset):
        n_train = dataset.splits["train"].size
        need = 1 + self.cycles * self.selection.k
        if need > n_train:
            raise ConfigError(
                f"1 + cycles*k = {need} exceeds the train split ({n_train})")


@dataclass
class CycleLog:
    cycle: int
    n_labeled: int
    test_acc: float
    nll: float
    dependency: float
    sum_log_z: float | None
    acq_s: float
    sel_s: float
    train_s: float


@dataclass
class RunResult:
    curve: list[CycleLog]
    ledger: estimation.DependencyLedger
    params: mlp.MlpParams | None
    dataset: data.Dataset
    status: str = "ok"
    error: str | None = None


def default_architecture(name: str, d_x: int, n_classes: int,
                         hidden_dims: list[int] | None = None) -> tuple[list[int], str]:
    hidden = hidden_dims if hidden_dims is not None else {
        "iris": [16], "two-arcs": [16], "mnist": [64], "digits": [32],
    }.get(name, [16])
    activation = "tanh" if name == "two-arcs" else "relu"
    return [d_x, *hidden, n_classes], activation


def run_active_learning(config: ExperimentConfig, seed: int,
                        dataset: data.Dataset | None = None) -> RunResult:
    """Execute one seeded run; oracle labels come from the dataset only."""
    if dataset is None:
        dataset = data.build_dataset(config.dataset)
    config.validate_against(dataset)
    train_idx = dataset.splits["train"]
    x_test, y_test = dataset.split_arrays("test")

    dims, activation = default_architecture(config.dataset.name,
                                            dataset.n_features,
                                            dataset.n_classes,
                                            config.hidden_dims)
    dropout = 0.25 if config.acquisition.tag == "bald" else 0.0
    params = mlp.init_params(dims, activation, stream(seed, "init", 0),
                             dropout_rate=dropout)
    adam = mlp.AdamState.for_params(params, lr=config.adam_lr)

    pool = PoolState.fresh(train_idx)
    ledger = estimation.DependencyLedger()
    curve: list[CycleLog] = []

    # cycle 0: one uniformly random labeled sample
    first = int(stream(seed, "initial_pick").choice(pool.unlabeled))
    ledger.append(selection.SelectionRecord(
        cycle=0, ordered_selected=[first], pool_snapshot=pool.unlabeled.copy(),
        labeled_snapshot=[], strategy=config.selection.strategy,
        beta=config.selection.beta, random_seed_event=True,
        score_floor=config.selection.score_floor))
    pool.mark_labeled(np.array([first]))

    def train_and_log(cycle: int, acq_s: float, sel_s: float) -> None:
        nonlocal params, adam
        labeled = np.asarray(pool.labeled)
        x_lab = dataset.x[labeled]
        y_lab = dataset.y[labeled]  # oracle-revealed subset only
        t0 = time.perf_counter()
        try:
            params, adam, rows = estimation.train_cycle(
                params, adam, x_lab, y_lab, dataset.x, ledger,
                config.acquisition, config.estimator, root_seed=seed,
                cycle=cycle, init_dims=dims, activation=activation)
        except estimation.TrainingDiverged as exc:
            curve.append(CycleLog(cycle, labeled.size, float("nan"), float("nan"),
                                  float("nan"), None, acq_s, sel_s,
                                  time.perf_counter() - t0))
            raise exc
        train_s = time.perf_counter() - t0
        acc = analysis.test_accuracy(params, x_test, y_test)
        if rows:
            nll, dep = rows[-1].nll, rows[-1].dependency
        else:
            nll, dep = float("nan"), 0.0
        sum_log_z = None
        if config.emit_log_z:
            trace = estimation.log_z_trace(params, dataset.x, ledger,
                                           config.acquisition, config.estimator,
                                           root_seed=seed)
            sum_log_z = float(trace[-1]) if trace.size else 0.0
        curve.append(CycleLog(cycle, labeled.size, acc, nll, dep, sum_log_z,
                              acq_s, sel_s, train_s))

    try:
        train_and_log(0, 0.0, 0.0)
        for cycle in range(1, config.cycles + 1):
            t0 = time.perf_counter()
            context = rng = None
            if config.acquisition.tag == "coreset":
                context = acq_mod.coreset_context(params,
                                                  dataset.x[np.asarray(pool.labeled)])
            elif config.acquisition.tag == "bald":
                rng = stream(seed, "bald", cycle)
            scores = acq_mod.score(config.acquisition, params,
                                   dataset.x[pool.unlabeled], context=context,
                                   rng=rng, indices=pool.unlabeled,
                                   theta_version=cycle)
            acq_s = time.perf_counter() - t0

            t0 = time.perf_counter()
            record = selection.select(config.selection, scores,
                                      stream(seed, "gumbel", cycle), cycle=cycle,
                                      labeled_snapshot=np.asarray(pool.labeled))
            sel_s = time.perf_counter() - t0

            ledger.append(record)           # oracle reveals these labels
            pool.mark_labeled(record.ordered_selected)
            train_and_log(cycle, acq_s, sel_s)
    except estimation.TrainingDiverged as exc:
        return RunResult(curve, ledger, None, dataset, status="failed",
                         error=str(exc))
    return RunResult(curve, ledger, params, dataset)


# -- artifacts -----------------------------------------------------------

def _cell(value) -> str:
    if value is None:
        return ""
    return repr(float(value))


def curve_csv_text(curve: list[CycleLog], timings_in_curve: bool = False) -> str:
    """Deterministic text of the per-cycle curve.

    Timing cells stay empty by default so repeated runs of the same
    (config, seed) serialize byte-identically; measured timings always
    live in the manifest.
    """
    lines = [CURVE_HEADER]
    for row in curve:
        timing = [_cell(row.acq_s), _cell(row.sel_s), _cell(row.train_s)] \
            if timings_in_curve else ["", "", ""]
        lines.append(",".join([
            str(row.cycle), str(row.n_labeled), _cell(row.test_acc),
            _cell(row.nll), _cell(row.dependency), _cell(row.sum_log_z),
            *timing]))
    return "\n".join(lines) + "\n"


def config_manifest(config: ExperimentConfig, seed: int) -> dict:
    blob = asdict(config)
    blob["dataset"]["fractions"] = list(config.dataset.resolved_fractions())
    return {"config": blob, "seed": seed}


def run_manifest(config: ExperimentConfig, seed: int, result: RunResult,
                 params_ref: str | None, version: str) -> dict:
    dataset = result.dataset
    return {
        **config_manifest(config, seed),
        "status": result.status,
        "error": result.error,
        "code_version": version,
        "dataset_provenance": {
            "name": config.dataset.name,
            "provenance": dataset.provenance,
            "seed": dataset.seed,
            "n_samples": int(dataset.n_samples),
            "n_features": int(dataset.n_features),
            "n_classes": int(dataset.n_classes),
            "split_sizes": {k: int(v.size) for k, v in dataset.splits.items()},
        },
        "final_params": params_ref,
        "final_test_acc": result.curve[-1].test_acc if result.curve else None,
        "timings_s": {
            "acq": [row.acq_s for row in result.curve],
            "sel": [row.sel_s for row in result.curve],
            "train": [row.train_s for row in result.curve],
            "total": sum(row.acq_s + row.sel_s + row.train_s
                         for row in result.curve),
        },
    }


def write_run_outputs(out_dir, config: ExperimentConfig, seed: int,
                      result: RunResult, version: str,
                      timings_in_curve: bool = False) -> None:
    from pathlib import Path
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "curve.csv").write_text(curve_csv_text(result.curve, timings_in_curve))
    params_ref = None
    if result.params is not None:
        params_ref = "params.json"
        (out / params_ref).write_text(json.dumps(result.params.to_json()))
    manifest = run_manifest(config, seed, result, params_ref, version)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
