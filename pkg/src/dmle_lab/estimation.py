"""Training objectives: independent (IMLE) and dependency-aware (DMLE).

The independent objective is the plain negative log-likelihood of the
labeled set. The dependency-aware objective adds, for every past
selection event, the log-probability that the current model would have
drawn those samples: softmax form beta*a(x), power form beta*ln a(x),
soft-rank form -beta*ln r(x), each re-evaluated under the current
parameters. Top-k selections use the softmax form. The per-step log
normalisers Z are neglected by default and can be included exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import acquisition as acq_mod
from . import mlp, selection
from .autodiff import Graph, NonFiniteError, Tensor
from .rng import stream

ESTIMATORS = ("imle", "dmle")


@dataclass(frozen=True)
class EstimatorConfig:
    estimator: str = "imle"
    include_z: bool = False
    epochs_per_cycle: int = 30
    warm_start: bool = True
    ssrs_rank_mode: str = "hard"
    smooth_temperature: float = 0.1

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}; valid: {ESTIMATORS}")
        if self.ssrs_rank_mode not in ("hard", "smooth"):
            raise ValueError("ssrs_rank_mode must be hard or smooth")
        if self.epochs_per_cycle < 0:
            raise ValueError("epochs_per_cycle must be >= 0")
        if self.smooth_temperature <= 0:
            raise ValueError("smooth_temperature must be > 0")


@dataclass
class DependencyLedger:
    """Ordered selection events; the data behind the dependency term."""

    records: list[selection.SelectionRecord] = field(default_factory=list)

    def append(self, record: selection.SelectionRecord):
        if self.records and record.cycle <= self.records[-1].cycle:
            raise ValueError("ledger cycles must be strictly increasing")
        self.records.append(record)

    def active(self) -> list[selection.SelectionRecord]:
        """Records that contribute to the objective (initial random draw excluded)."""
        return [r for r in self.records if not r.random_seed_event]

    def labeled_union(self) -> np.ndarray:
        parts = [r.ordered_selected for r in self.records]
        return np.concatenate(parts) if parts else np.array([], dtype=np.intp)


@dataclass
class DependencyTermResult:
    total: Tensor
    per_cycle_logprob: np.ndarray
    per_cycle_log_z: np.ndarray | None = None

    @property
    def value(self) -> float:
        return float(self.total.data)


def dependency_form(strategy: str) -> str:
    """Top-k batches contribute through the softmax form."""
    return "ssms" if strategy == "topk" else strategy


def imle_loss(graph: Graph, leaves: dict[str, Tensor], params: mlp.MlpParams,
              x: np.ndarray, y: np.ndarray) -> Tensor:
    """Negative sum of ln P(y|x; theta) over the labeled set."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] == 0:
        raise ValueError("empty labeled set")
    z = mlp.logits_nodes(graph, leaves, params, x)
    return z.softmax_cross_entropy(np.asarray(y)).sum()


def _clamp_floor(t: Tensor, floor: float) -> Tensor:
    # max(t, floor) via relu keeps the graph clamp differentiable above the floor
    return (t - floor).relu() + floor


def _positions(rows: np.ndarray) -> dict[int, int]:
    return {int(v): i for i, v in enumerate(rows)}


def _smooth_rank(scores: Tensor, pos: int, temperature: float) -> Tensor:
    """Differentiable descending rank 1 + sum_{j!=i} sigmoid((a_j - a_i)/T)."""
    diff = (scores - scores.index_select(np.array([pos]))) * (1.0 / temperature)
    # sigmoid(0)=0.5 at j=i; subtracting it recovers hard ranks as T -> 0
    return diff.sigmoid().sum() + 0.5


def _stack_lse(nodes: list[Tensor]) -> Tensor:
    """Max-shifted log-sum-exp over a list of scalar nodes."""
    m = max(float(v.data) for v in nodes)
    acc = None
    for v in nodes:
        e = (v - m).exp()
        acc = e if acc is None else acc + e
    return acc.log() + m


def _record_scores(graph: Graph, leaves: dict[str, Tensor], params: mlp.MlpParams,
                   dataset_x: np.ndarray, record: selection.SelectionRecord,
                   acquisition: acq_mod.AcquisitionKind, rows: np.ndarray,
                   root_seed: int) -> Tensor:
    """Differentiable acquisition scores for the given dataset rows of one record."""
    if acquisition.tag == "bald":
        masks = acq_mod.replay_bald_masks(
            params, acquisition.bald_samples, stream(root_seed, "bald", record.cycle))
        return acq_mod.score_nodes(acquisition, graph, leaves, params,
                                   dataset_x[rows], bald_masks=masks)
    if acquisition.tag == "coreset":
        context = acq_mod.CoresetContext(dataset_x[record.labeled_snapshot], None)
        return acq_mod.score_nodes(acquisition, graph, leaves, params,
                                   dataset_x[rows], context=context)
    return acq_mod.score_nodes(acquisition, graph, leaves, params, dataset_x[rows])


def _record_contribution(rec: selection.SelectionRecord, picked: Tensor) -> Tensor:
    """Selected-row log-weights for the softmax/power forms as one node."""
    form = dependency_form(rec.strategy)
    if form == "ssms":
        return (picked * rec.beta).sum()
    if form == "sps":
        return (_clamp_floor(picked, rec.score_floor).log() * rec.beta).sum()
    raise ValueError(form)  # pragma: no cover - ssrs handled by callers


def _hard_rank_constant(params: mlp.MlpParams, dataset_x: np.ndarray,
                        rec: selection.SelectionRecord,
                        acquisition: acq_mod.AcquisitionKind,
                        root_seed: int) -> float:
    """Soft-rank log-weights of the selected rows; constant within a step."""
    snap_scores = _plain_scores(params, dataset_x, rec, acquisition, root_seed)
    ranks = selection.rank_descending(snap_scores)
    pos = _positions(rec.pool_snapshot)
    sel = [pos[int(j)] for j in rec.ordered_selected]
    return float(-rec.beta * np.log(ranks[sel].astype(np.float64)).sum())


def _batched_fast_path(graph: Graph, leaves: dict[str, Tensor],
                       params: mlp.MlpParams, dataset_x: np.ndarray,
                       records: list[selection.SelectionRecord],
                       acquisition: acq_mod.AcquisitionKind,
                       root_seed: int) -> DependencyTermResult:
    """No-normaliser path: contributions reduce to weighted sums over the
    selected rows, so the theta-only acquisitions (entropy, least
    confidence) collapse the whole ledger into one score build and one
    weighted sum per gradient step."""
    per_logprob: dict[int, float] = {}
    contributions: list[Tensor] = []
    constant = 0.0
    theta_only = acquisition.tag in ("entropy", "least_confidence")

    graph_recs = []
    for i, rec in enumerate(records):
        if dependency_form(rec.strategy) == "ssrs":
            value = _hard_rank_constant(params, dataset_x, rec, acquisition,
                                        root_seed)
            per_logprob[i] = value
            constant += value
        else:
            graph_recs.append((i, rec))

    if graph_recs and theta_only:
        sel_rows = np.concatenate([r.ordered_selected for _, r in graph_recs])
        sizes = [r.ordered_selected.size for _, r in graph_recs]
        rows = np.unique(sel_rows)
        scores = _record_scores(graph, leaves, params, dataset_x,
                                graph_recs[0][1], acquisition, rows, root_seed)
        lookup = _positions(rows)
        picked = scores.index_select(
            np.array([lookup[int(i)] for i in sel_rows], dtype=np.intp))
        forms = np.repeat([dependency_form(r.strategy) for _, r in graph_recs],
                          sizes)
        betas = np.repeat([r.beta for _, r in graph_recs], sizes)
        floors = np.repeat([r.score_floor for _, r in graph_recs], sizes)
        if np.any(forms == "ssms"):
            w = np.where(forms == "ssms", betas, 0.0)
            contributions.append((picked * w).sum())
        if np.any(forms == "sps"):
            w = np.where(forms == "sps", betas, 0.0)
            contributions.append((_clamp_floor(picked, floors).log() * w).sum())
        offset = 0
        for (i, rec), size in zip(graph_recs, sizes):
            chunk = picked.data[offset:offset + size]
            if dependency_form(rec.strategy) == "ssms":
                per_logprob[i] = float(rec.beta * chunk.sum())
            else:
                per_logprob[i] = float(rec.beta * np.log(
                    np.maximum(chunk, rec.score_floor)).sum())
            offset += size
    else:
        for i, rec in graph_recs:
            picked = _record_scores(graph, leaves, params, dataset_x, rec,
                                    acquisition, rec.ordered_selected, root_seed)
            contrib = _record_contribution(rec, picked)
            per_logprob[i] = float(contrib.data)
            contributions.append(contrib)

    total = graph.constant(constant)
    for c in contributions:
        total = total + c
    return DependencyTermResult(
        total, np.array([per_logprob[i] for i in range(len(records))]), None)


def _plain_scores(params: mlp.MlpParams, dataset_x: np.ndarray,
                  rec: selection.SelectionRecord,
                  acquisition: acq_mod.AcquisitionKind, root_seed: int,
                  rows: np.ndarray | None = None) -> np.ndarray:
    rows = rec.pool_snapshot if rows is None else rows
    if acquisition.tag == "bald":
        return acq_mod.score(acquisition, params, dataset_x[rows],
                             rng=stream(root_seed, "bald", rec.cycle)).scores
    if acquisition.tag == "coreset":
        ctx = acq_mod.coreset_context(params, dataset_x[rec.labeled_snapshot])
        return acq_mod.score(acquisition, params, dataset_x[rows],
                             context=ctx).scores
    return acq_mod.score(acquisition, params, dataset_x[rows]).scores


def dependency_term(graph: Graph, leaves: dict[str, Tensor], params: mlp.MlpParams,
                    dataset_x: np.ndarray, ledger: DependencyLedger,
                    acquisition: acq_mod.AcquisitionKind, config: EstimatorConfig,
                    root_seed: int = 0) -> DependencyTermResult:
    """Sum over past cycles of the selection log-weights under current theta."""
    records = ledger.active()
    if not records:
        return DependencyTermResult(graph.constant(0.0), np.zeros(0),
                                    np.zeros(0) if config.include_z else None)

    smooth_needed = config.ssrs_rank_mode == "smooth" and any(
        dependency_form(r.strategy) == "ssrs" for r in records)
    if not config.include_z and not smooth_needed:
        return _batched_fast_path(graph, leaves, params, dataset_x, records,
                                  acquisition, root_seed)

    shared_lookup = shared_scores = None
    if acquisition.tag in ("entropy", "least_confidence"):
        needed = []
        for rec in records:
            form = dependency_form(rec.strategy)
            wide = config.include_z or form == "ssrs"
            needed.append(rec.pool_snapshot if wide else rec.ordered_selected)
        shared_rows = np.unique(np.concatenate(needed))
        shared_lookup = _positions(shared_rows)
        shared_scores = _record_scores(graph, leaves, params, dataset_x,
                                       records[0], acquisition, shared_rows, root_seed)

    per_logprob, per_log_z, contributions = [], [], []
    for rec in records:
        form = dependency_form(rec.strategy)
        wide = config.include_z or form == "ssrs"
        rows = rec.pool_snapshot if wide else rec.ordered_selected
        if shared_scores is not None:
            scores = shared_scores.index_select(
                np.array([shared_lookup[int(i)] for i in rows], dtype=np.intp))
        else:
            scores = _record_scores(graph, leaves, params, dataset_x, rec,
                                    acquisition, rows, root_seed)
        pos = _positions(rows)
        sel_pos = np.array([pos[int(i)] for i in rec.ordered_selected], dtype=np.intp)

        smooth = form == "ssrs" and config.ssrs_rank_mode == "smooth"
        if form == "ssms":
            util = scores * rec.beta
        elif form == "sps":
            util = _clamp_floor(scores, rec.score_floor).log() * rec.beta
        elif smooth:
            # one scalar log-weight node per needed snapshot position
            want = range(rows.size) if config.include_z else sel_pos
            util = {int(p): _smooth_rank(scores, int(p),
                                         config.smooth_temperature).log() * (-rec.beta)
                    for p in want}
        else:  # hard ranks: piecewise constant in theta within a step
            ranks = selection.rank_descending(scores.data)
            util = graph.constant(-rec.beta * np.log(ranks.astype(np.float64)))

        if smooth:
            contrib = util[int(sel_pos[0])]
            for p in sel_pos[1:]:
                contrib = contrib + util[int(p)]
        else:
            contrib = util.index_select(sel_pos).sum()
        per_logprob.append(float(contrib.data))
        contributions.append(contrib)

        if config.include_z:
            z_total = None
            remaining = np.ones(rows.size, dtype=bool)
            for p in sel_pos:
                live = np.flatnonzero(remaining)
                if smooth:
                    step = _stack_lse([util[int(i)] for i in live])
                else:
                    step = util.index_select(live).logsumexp()
                z_total = step if z_total is None else z_total + step
                remaining[p] = False
            per_log_z.append(float(z_total.data))
            contributions.append(z_total * (-1.0))

    total = contributions[0]
    for c in contributions[1:]:
        total = total + c
    return DependencyTermResult(total, np.array(per_logprob),
                                np.array(per_log_z) if config.include_z else None)


@dataclass
class LossParts:
    loss: Tensor
    nll: float
    dependency: float
    sum_log_z: float | None


def dmle_loss(graph: Graph, leaves: dict[str, Tensor], params: mlp.MlpParams,
              x: np.ndarray, y: np.ndarray, dataset_x: np.ndarray,
              ledger: DependencyLedger, acquisition: acq_mod.AcquisitionKind,
              config: EstimatorConfig, root_seed: int = 0) -> LossParts:
    """Minimisation form: nll minus the dependency term."""
    nll = imle_loss(graph, leaves, params, x, y)
    dep = dependency_term(graph, leaves, params, dataset_x, ledger,
                          acquisition, config, root_seed)
    loss = nll + dep.total * (-1.0)
    sum_log_z = float(np.sum(dep.per_cycle_log_z)) if config.include_z else None
    return LossParts(loss, float(nll.data), dep.value, sum_log_z)


def log_z_trace(params: mlp.MlpParams, dataset_x: np.ndarray,
                ledger: DependencyLedger, acquisition: acq_mod.AcquisitionKind,
                config: EstimatorConfig, root_seed: int = 0) -> np.ndarray:
    """Cumulative sum over cycles of the per-record ln Z under current theta."""
    records = ledger.active()
    per_record = []
    for rec in records:
        rows = rec.pool_snapshot
        if acquisition.tag == "bald":
            values = acq_mod.score(
                acquisition, params, dataset_x[rows],
                rng=stream(root_seed, "bald", rec.cycle)).scores
        elif acquisition.tag == "coreset":
            ctx = acq_mod.coreset_context(params, dataset_x[rec.labeled_snapshot])
            values = acq_mod.score(acquisition, params, dataset_x[rows],
                                   context=ctx).scores
        else:
            values = acq_mod.score(acquisition, params, dataset_x[rows]).scores
        pos = _positions(rows)
        sel_pos = [pos[int(i)] for i in rec.ordered_selected]
        per_record.append(selection.sequence_log_z(
            dependency_form(rec.strategy), values, sel_pos, rec.beta,
            rec.score_floor))
    trace = np.cumsum(per_record) if per_record else np.zeros(0)
    if trace.size and not np.all(np.isfinite(trace)):
        raise ValueError("non-finite log-Z trace")
    return trace


class TrainingDiverged(RuntimeError):
    """Raised when a training loss stops being finite; carries diagnostics."""


@dataclass
class TrainLogRow:
    cycle: int
    epoch: int
    nll: float
    dependency: float
    total_loss: float
    sum_log_z: float | None


def train_cycle(params: mlp.MlpParams, adam_state: mlp.AdamState,
                x_labeled: np.ndarray, y_labeled: np.ndarray,
                dataset_x: np.ndarray, ledger: DependencyLedger,
                acquisition: acq_mod.AcquisitionKind, config: EstimatorConfig,
                root_seed: int = 0, cycle: int = 0,
                init_dims: list[int] | None = None,
                activation: str = "relu") -> tuple[mlp.MlpParams, mlp.AdamState,
                                                   list[TrainLogRow]]:
    """Full-batch gradient steps of the configured loss for one cycle."""
    if x_labeled.shape[0] == 0:
        raise ValueError("empty labeled set")
    if not config.warm_start:
        dims = init_dims or params.layer_dims
        params = mlp.init_params(dims, activation, stream(root_seed, "init", cycle),
                                 dropout_rate=params.dropout_rate)
        adam_state = mlp.AdamState.for_params(params, lr=adam_state.lr)
    rows: list[TrainLogRow] = []
    for epoch in range(config.epochs_per_cycle):
        graph = Graph()
        leaves = mlp.param_leaves(graph, params)
        try:
            if config.estimator == "dmle":
                parts = dmle_loss(graph, leaves, params, x_labeled, y_labeled,
                                  dataset_x, ledger, acquisition, config, root_seed)
            else:
                nll = imle_loss(graph, leaves, params, x_labeled, y_labeled)
                parts = LossParts(nll, float(nll.data), 0.0, None)
            graph.backward(parts.loss)
        except NonFiniteError as exc:
            raise TrainingDiverged(
                f"non-finite loss at cycle {cycle} epoch {epoch}: {exc}") from exc
        grads = {name: leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
                 for name, leaf in leaves.items()}
        params, adam_state = mlp.adam_step(params, grads, adam_state)
        rows.append(TrainLogRow(cycle, epoch, parts.nll, parts.dependency,
                                float(parts.loss.data), parts.sum_log_z))
    return params, adam_state, rows
