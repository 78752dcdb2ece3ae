"""Metrics, seed aggregation, exact Wilcoxon test, and the two numerical
theorem checks (Fisher-information ordering, KL decomposition)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import mlp


def test_accuracy(params: mlp.MlpParams, x: np.ndarray, y: np.ndarray) -> float:
    """Fraction of argmax-correct predictions; ties pick the lowest class."""
    if x.shape[0] == 0:
        raise ValueError("empty evaluation split")
    probs = mlp.mlp_forward(params, x)
    return float(np.mean(np.argmax(probs, axis=1) == np.asarray(y)))


@dataclass
class AggregateCurve:
    mean: np.ndarray
    std: np.ndarray
    n_seeds: int


def aggregate_curves(curves: list) -> AggregateCurve:
    """Per-cycle mean and population (divisor n) standard deviation."""
    if not curves:
        raise ValueError("need at least one curve")
    arr = [np.asarray(c, dtype=np.float64) for c in curves]
    length = arr[0].size
    if any(a.size != length for a in arr):
        raise ValueError("curves have mismatched lengths")
    stacked = np.stack(arr)
    return AggregateCurve(stacked.mean(axis=0), stacked.std(axis=0), len(arr))


# -- Wilcoxon signed-rank ------------------------------------------------

@dataclass
class WilcoxonResult:
    w_statistic: float
    n_effective: int
    p_value: float


def _midranks(values: np.ndarray) -> np.ndarray:
    """Ranks 1..n with ties sharing their average rank."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _exact_two_sided_p(ranks: np.ndarray, w: float) -> float:
    """Enumerate the sign-assignment null through a subset-sum table."""
    doubled = np.round(2.0 * ranks).astype(np.int64)
    total = int(doubled.sum())
    ways = np.zeros(total + 1, dtype=np.float64)
    ways[0] = 1.0
    for r in doubled:
        ways[r:] = ways[r:] + ways[:total + 1 - r]
    n_assignments = 2.0 ** len(ranks)
    w2 = int(round(2.0 * w))
    p_le = ways[:w2 + 1].sum() / n_assignments
    p_ge = ways[w2:].sum() / n_assignments
    return min(1.0, 2.0 * min(p_le, p_ge))


def _normal_two_sided_p(ranks: np.ndarray, w: float) -> float:
    n = len(ranks)
    mu = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    # tie correction over groups of equal |difference|
    _, counts = np.unique(ranks, return_counts=True)
    var -= np.sum(counts ** 3 - counts) / 48.0
    sd = math.sqrt(var)
    z = (w - mu - 0.5 * np.sign(w - mu)) / sd if sd > 0 else 0.0
    phi = 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))
    return min(1.0, 2.0 * min(phi, 1.0 - phi))


def wilcoxon_exact(pairs) -> WilcoxonResult:
    """Two-sided signed-rank test; exact null for n <= 25, normal above."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("need at least one pair")
    diffs = np.array([float(a) - float(b) for a, b in pairs])
    diffs = diffs[diffs != 0.0]
    n = diffs.size
    if n == 0:
        return WilcoxonResult(0.0, 0, 1.0)
    ranks = _midranks(np.abs(diffs))
    w = float(ranks[diffs > 0].sum())
    if n <= 25:
        p = _exact_two_sided_p(ranks, w)
    else:
        p = _normal_two_sided_p(ranks, w)
    return WilcoxonResult(w, int(n), max(p, np.nextafter(0.0, 1.0)))


# -- Theorem checks ------------------------------------------------------

@dataclass
class FisherReport:
    i_label: np.ndarray
    i_selection: np.ndarray
    i_combined: np.ndarray
    min_eig_selection: float
    min_eig_gap: float
    mc_samples: int
    max_standard_error: float


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def fisher_gap_check(theta: np.ndarray, pool_x: np.ndarray, beta: float,
                     mc_samples: int, rng: np.random.Generator) -> FisherReport:
    """Monte Carlo check that the selection-induced information is PSD.

    Small binary logistic model over a fixed pool with entropy scores:
    the label information is the average score outer product of
    ln P(y|x; theta); the selection information is the same for the
    softmax selection distribution over the pool. Their sum dominates
    the label information exactly when the selection part is PSD.
    """
    theta = np.asarray(theta, dtype=np.float64)
    pool_x = np.asarray(pool_x, dtype=np.float64)
    if pool_x.ndim != 2 or pool_x.shape[0] < 2:
        raise ValueError("pool must hold at least two samples")
    d_theta = theta.size
    if pool_x.shape[1] + 1 != d_theta:
        raise ValueError("theta must have one entry per feature plus a bias")
    if d_theta > 10:
        raise ValueError("intended for small parametric models (d_theta <= 10)")
    if mc_samples < 1:
        raise ValueError("mc_samples must be >= 1")
    xt = np.hstack([pool_x, np.ones((pool_x.shape[0], 1))])
    p = _sigmoid(xt @ theta)
    if np.any(p <= 0) or np.any(p >= 1):
        raise ValueError("degenerate predictive probabilities in the pool")

    # entropy scores and their exact parameter gradients
    scores = -(p * np.log(p) + (1 - p) * np.log(1 - p))
    grad_a = (np.log((1 - p) / p) * p * (1 - p))[:, None] * xt

    # selection distribution and per-sample selection scores
    logits = beta * scores
    sel = np.exp(logits - logits.max())
    sel /= sel.sum()
    mean_grad = (sel[:, None] * beta * grad_a).sum(axis=0)
    score_x = beta * grad_a - mean_grad

    n = pool_x.shape[0]
    counts_x = rng.multinomial(mc_samples, sel)
    i_x = np.zeros((d_theta, d_theta))
    sq_x = np.zeros_like(i_x)
    for i in range(n):
        if counts_x[i]:
            outer = np.outer(score_x[i], score_x[i])
            i_x += counts_x[i] * outer
            sq_x += counts_x[i] * outer * outer
    i_x /= mc_samples
    sq_x /= mc_samples

    # labels: x uniform over the pool, y ~ Bernoulli(p)
    cell_probs = np.concatenate([(1 - p) / n, p / n])
    counts_y = rng.multinomial(mc_samples, cell_probs)
    i_y = np.zeros_like(i_x)
    for i in range(n):
        for y, c in ((0, counts_y[i]), (1, counts_y[n + i])):
            if c:
                s = (y - p[i]) * xt[i]
                i_y += c * np.outer(s, s)
    i_y /= mc_samples

    i_combined = i_y + i_x
    se = np.sqrt(np.maximum(sq_x - i_x * i_x, 0.0) / mc_samples)
    return FisherReport(
        i_label=i_y, i_selection=i_x, i_combined=i_combined,
        min_eig_selection=float(np.linalg.eigvalsh(i_x).min()),
        min_eig_gap=float(np.linalg.eigvalsh(i_combined - i_y).min()),
        mc_samples=mc_samples,
        max_standard_error=float(se.max()))


@dataclass
class KlReport:
    expected_loglik: float
    kl_conditional: float
    kl_marginal: float
    h_y_given_x: float
    h_x: float
    residual: float


def kl_decomposition_check(true_joint: np.ndarray, model_conditional: np.ndarray,
                           model_marginal: np.ndarray) -> KlReport:
    """Exact check of E[ln L] = -KL(y|x) - KL(x) - H(y|x) - H(x).

    All distributions are enumerable tables: true_joint[x, y] sums to 1,
    model_conditional rows sum to 1, model_marginal sums to 1.
    """
    pj = np.asarray(true_joint, dtype=np.float64)
    qc = np.asarray(model_conditional, dtype=np.float64)
    qm = np.asarray(model_marginal, dtype=np.float64)
    if pj.ndim != 2 or qc.shape != pj.shape or qm.shape != (pj.shape[0],):
        raise ValueError("table shapes disagree")
    if pj.size > 10_000:
        raise ValueError("enumeration intended for |X|*|Y| <= 1e4")
    if abs(pj.sum() - 1.0) > 1e-9:
        raise ValueError("true joint does not sum to 1")
    if np.any((pj > 0) & ((qc <= 0) | (qm[:, None] <= 0))):
        raise ValueError("model assigns probability 0 where truth is positive")

    px = pj.sum(axis=1)
    safe_px = np.where(px > 0, px, 1.0)
    p_cond = np.where(px[:, None] > 0, pj / safe_px[:, None], 0.0)

    def xlogy(a, b):
        return np.where(a > 0, a * np.log(np.where(a > 0, b, 1.0)), 0.0)

    expected = float(np.sum(xlogy(pj, qc)) + np.sum(xlogy(px, qm)))
    kl_cond = float(np.sum(xlogy(pj, p_cond)) - np.sum(xlogy(pj, qc)))
    kl_marg = float(np.sum(xlogy(px, px)) - np.sum(xlogy(px, qm)))
    h_cond = float(-np.sum(xlogy(pj, p_cond)))
    h_marg = float(-np.sum(xlogy(px, px)))
    residual = abs(expected - (-kl_cond - kl_marg - h_cond - h_marg))
    return KlReport(expected, kl_cond, kl_marg, h_cond, h_marg, residual)
