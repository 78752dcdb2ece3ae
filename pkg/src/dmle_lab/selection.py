"""Batch selection: deterministic top-k and Gumbel-perturbed sampling.

The stochastic strategies add i.i.d. standard Gumbel(0,1) noise to a
modified utility (softmax: beta*a, power: beta*ln a, soft-rank:
-beta*ln r) and keep the k largest perturbed values. That realises
sampling without replacement from the corresponding distribution, and
sequence_log_prob gives the exact log-probability of an ordered draw,
so the two can be cross-checked by Monte Carlo.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .rng import gumbel

STRATEGIES = ("topk", "ssms", "sps", "ssrs")
STOCHASTIC = ("ssms", "sps", "ssrs")


@dataclass(frozen=True)
class SelectionConfig:
    strategy: str
    k: int
    beta: float = 1.0
    score_floor: float = 1e-12

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; valid: {STRATEGIES}")
        if self.k < 1:
            raise ValueError("batch size k must be >= 1")
        if self.beta < 0:
            raise ValueError("coldness beta must be >= 0")


@dataclass
class SelectionRecord:
    """One selection event with the snapshots needed to re-evaluate it."""

    cycle: int
    ordered_selected: np.ndarray
    pool_snapshot: np.ndarray
    labeled_snapshot: np.ndarray
    strategy: str
    beta: float
    random_seed_event: bool = False
    score_floor: float = 1e-12

    def __post_init__(self):
        self.ordered_selected = np.asarray(self.ordered_selected, dtype=np.intp)
        self.pool_snapshot = np.asarray(self.pool_snapshot, dtype=np.intp)
        self.labeled_snapshot = np.asarray(self.labeled_snapshot, dtype=np.intp)
        sel = set(self.ordered_selected.tolist())
        if len(sel) != self.ordered_selected.size:
            raise ValueError("duplicate indices in ordered_selected")
        if not sel <= set(self.pool_snapshot.tolist()):
            raise ValueError("selected indices not contained in pool snapshot")
        if set(self.pool_snapshot.tolist()) & set(self.labeled_snapshot.tolist()):
            raise ValueError("pool and labeled snapshots overlap")


def rank_descending(scores: np.ndarray) -> np.ndarray:
    """Ranks 1..n, rank 1 for the highest score, ties by ascending index."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("empty score vector")
    if np.isnan(scores).any():
        raise ValueError("NaN in scores")
    order = np.argsort(-scores, kind="stable")
    ranks = np.empty(scores.size, dtype=np.intp)
    ranks[order] = np.arange(1, scores.size + 1)
    return ranks


def modified_utilities(strategy: str, scores: np.ndarray, beta: float,
                       score_floor: float = 1e-12) -> np.ndarray:
    """The log-weights that Gumbel perturbation turns into Table-style sampling."""
    scores = np.asarray(scores, dtype=np.float64)
    if strategy == "ssms" or strategy == "topk":
        return beta * scores
    if strategy == "sps":
        if (scores < 0).any():
            raise ValueError("power sampling requires nonnegative scores")
        return beta * np.log(np.maximum(scores, score_floor))
    if strategy == "ssrs":
        return -beta * np.log(rank_descending(scores).astype(np.float64))
    raise ValueError(f"unknown strategy {strategy!r}")


def _ordered_topk(keys: np.ndarray, k: int) -> np.ndarray:
    """Positions of the k largest keys, descending, ties by ascending position."""
    return np.argsort(-keys, kind="stable")[:k]


def select(config: SelectionConfig, scores, rng: np.random.Generator, *,
           cycle: int, labeled_snapshot) -> SelectionRecord:
    """Draw the next batch; scores is a ScoreVector (or bare array)."""
    values = np.asarray(getattr(scores, "scores", scores), dtype=np.float64)
    indices = np.asarray(getattr(scores, "indices", np.arange(values.size)),
                         dtype=np.intp)
    if values.size == 0:
        raise ValueError("empty pool")
    if config.k > values.size:
        raise ValueError(f"k={config.k} exceeds pool size {values.size}")
    if np.isnan(values).any():
        raise ValueError("NaN in scores")
    if config.strategy == "topk":
        picked = _ordered_topk(values, config.k)
    else:
        util = modified_utilities(config.strategy, values, config.beta,
                                  config.score_floor)
        picked = _ordered_topk(util + gumbel(rng, values.size), config.k)
    return SelectionRecord(cycle=cycle,
                           ordered_selected=indices[picked],
                           pool_snapshot=indices,
                           labeled_snapshot=np.asarray(labeled_snapshot, dtype=np.intp),
                           strategy=config.strategy,
                           beta=config.beta,
                           score_floor=config.score_floor)


def sequence_log_prob(strategy: str, scores: np.ndarray, sequence, beta: float,
                      score_floor: float = 1e-12,
                      indices: np.ndarray | None = None) -> float:
    """Exact ln P of drawing this ordered sequence without replacement.

    scores align with the pool snapshot; sequence holds positions into it,
    or snapshot sample indices when indices is given.
    """
    scores = np.asarray(scores, dtype=np.float64)
    sequence = np.asarray(sequence, dtype=np.intp)
    if indices is not None:
        lookup = {int(v): i for i, v in enumerate(np.asarray(indices))}
        sequence = np.array([lookup[int(s)] for s in sequence], dtype=np.intp)
    if len(set(sequence.tolist())) != sequence.size:
        raise ValueError("duplicate element in sequence")
    if sequence.size and (sequence.min() < 0 or sequence.max() >= scores.size):
        raise ValueError("sequence element outside the pool snapshot")
    util = modified_utilities(strategy, scores, beta, score_floor)
    remaining = np.ones(scores.size, dtype=bool)
    total = 0.0
    for pos in sequence:
        live = util[remaining]
        m = live.max()
        total += util[pos] - (m + np.log(np.sum(np.exp(live - m))))
        remaining[pos] = False
    return float(total)


def sequence_log_z(strategy: str, scores: np.ndarray, sequence, beta: float,
                   score_floor: float = 1e-12) -> float:
    """Sum of the per-step log normalisers ln Z_i for an ordered sequence."""
    scores = np.asarray(scores, dtype=np.float64)
    sequence = np.asarray(sequence, dtype=np.intp)
    util = modified_utilities(strategy, scores, beta, score_floor)
    remaining = np.ones(scores.size, dtype=bool)
    total = 0.0
    for pos in sequence:
        live = util[remaining]
        m = live.max()
        total += m + np.log(np.sum(np.exp(live - m)))
        remaining[pos] = False
    return float(total)


# -- Monte Carlo verification helpers -----------------------------------

def ordered_sequences(n: int, k: int):
    return itertools.permutations(range(n), k)


def exact_sequence_distribution(strategy: str, scores: np.ndarray, k: int,
                                beta: float, score_floor: float = 1e-12) -> dict:
    """exp(sequence_log_prob) for every ordered k-sequence of the pool."""
    return {seq: np.exp(sequence_log_prob(strategy, scores, seq, beta, score_floor))
            for seq in ordered_sequences(len(scores), k)}


def sample_sequence_counts(strategy: str, scores: np.ndarray, k: int, beta: float,
                           n_draws: int, rng: np.random.Generator,
                           score_floor: float = 1e-12,
                           batch: int = 50_000) -> dict:
    """Empirical counts of ordered k-sequences over n_draws Gumbel draws."""
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.size
    util = modified_utilities(strategy, scores, beta, score_floor)
    counts: dict[tuple, int] = {}
    left = n_draws
    while left > 0:
        b = min(batch, left)
        left -= b
        u = np.clip(rng.random((b, n)), np.finfo(np.float64).tiny, None)
        pert = util[None, :] + (-np.log(-np.log(u)))
        picked = np.argsort(-pert, axis=1, kind="stable")[:, :k]
        # encode each ordered tuple as one integer for fast counting
        code = np.zeros(b, dtype=np.int64)
        for j in range(k):
            code = code * n + picked[:, j]
        vals, cnts = np.unique(code, return_counts=True)
        for v, c in zip(vals.tolist(), cnts.tolist()):
            seq = []
            for _ in range(k):
                seq.append(v % n)
                v //= n
            counts[tuple(reversed(seq))] = counts.get(tuple(reversed(seq)), 0) + c
    return counts


def tv_distance(empirical_counts: dict, exact_probs: dict, n_draws: int) -> float:
    keys = set(empirical_counts) | set(exact_probs)
    return 0.5 * sum(abs(empirical_counts.get(s, 0) / n_draws - exact_probs.get(s, 0.0))
                     for s in keys)
