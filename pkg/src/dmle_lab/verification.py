"""Self-contained verification suites behind `verify`: sampling
distribution checks, gradient checks, and the two theorem checks.

Every suite runs on fixed internal seeds and formats measured values with
fixed precision, so repeated reports are byte-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import acquisition as acq_mod
from . import analysis, estimation, mlp, selection
from .autodiff import Graph, grad_check
from .rng import stream

SUITES = ("gumbel", "gradients", "theorems", "all")


@dataclass
class SuiteReport:
    name: str
    passed: bool
    lines: list[str]

    def text(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        body = "\n".join(self.lines)
        return f"[{status}] suite {self.name}\n{body}"


def _line(ok: bool, label: str, value: float, bound: str) -> tuple[bool, str]:
    mark = "ok " if ok else "FAIL"
    return ok, f"  {mark} {label}: {value:.3e} ({bound})"


def verify_gumbel(n_draws: int = 200_000) -> SuiteReport:
    """Empirical Gumbel-top-k draws match the exact sequence probabilities."""
    scores4 = np.array([0.1, 0.4, 0.7, 1.0])
    scores5 = np.array([0.05, 0.3, 0.55, 0.8, 1.05])
    lines, ok_all = [], True
    for i, strategy in enumerate(selection.STOCHASTIC):
        counts = selection.sample_sequence_counts(
            strategy, scores4, k=2, beta=1.0, n_draws=n_draws,
            rng=stream(1234, "mc", i))
        exact = selection.exact_sequence_distribution(strategy, scores4, 2, 1.0)
        tv = selection.tv_distance(counts, exact, n_draws)
        ok, line = _line(tv < 0.01, f"{strategy} TV distance, pool 4, k=2", tv,
                         "< 0.01")
        ok_all &= ok
        lines.append(line)
    for strategy in selection.STOCHASTIC:
        total = sum(selection.exact_sequence_distribution(
            strategy, scores5, 2, 1.0).values())
        ok, line = _line(abs(total - 1.0) < 1e-10,
                         f"{strategy} ordered-sequence normalization, pool 5",
                         abs(total - 1.0), "< 1e-10")
        ok_all &= ok
        lines.append(line)
    return SuiteReport("gumbel", ok_all, lines)


def _toy_ledger(n_pool: int, strategy: str, beta: float, k: int = 2,
                cycles: int = 3) -> estimation.DependencyLedger:
    """A synthetic ledger shaped like a short run over indices 0..n_pool-1."""
    ledger = estimation.DependencyLedger()
    pool = list(range(n_pool))
    ledger.append(selection.SelectionRecord(
        cycle=0, ordered_selected=[pool[0]], pool_snapshot=pool,
        labeled_snapshot=[], strategy=strategy, beta=beta,
        random_seed_event=True))
    labeled = [pool[0]]
    remaining = pool[1:]
    for cycle in range(1, cycles + 1):
        take, remaining = remaining[:k], remaining[k:]
        ledger.append(selection.SelectionRecord(
            cycle=cycle, ordered_selected=take, pool_snapshot=remaining + take,
            labeled_snapshot=list(labeled), strategy=strategy, beta=beta))
        labeled.extend(take)
    return ledger


def _loss_builder(params, x, y, ledger, acquisition, config, root_seed=0):
    def build(vals):
        g = Graph()
        p = params.copy()
        leaves = {}
        for i in range(p.n_layers):
            p.weights[i] = vals[f"W{i}"]
            p.biases[i] = vals[f"b{i}"]
            leaves[f"W{i}"] = g.leaf(vals[f"W{i}"], f"W{i}")
            leaves[f"b{i}"] = g.leaf(vals[f"b{i}"], f"b{i}")
        return estimation.dmle_loss(g, leaves, p, x[:5], y[:5], x, ledger,
                                    acquisition, config, root_seed).loss
    return build


def _param_values(params) -> dict[str, np.ndarray]:
    vals = {}
    for i in range(params.n_layers):
        vals[f"W{i}"] = params.weights[i]
        vals[f"b{i}"] = params.biases[i]
    return vals


def verify_gradients(trials: int = 20) -> SuiteReport:
    """Finite-difference checks of the dependency-aware losses, and the
    coldness-zero reduction to the independent loss."""
    lines, ok_all = [], True
    rng = stream(777, "mc")
    x = rng.normal(size=(12, 2))
    y = rng.integers(0, 3, size=12)

    worst = {"ssms": 0.0, "sps": 0.0}
    for t in range(trials):
        params = mlp.init_params([2, 8, 3], "relu", stream(900 + t, "init"))
        for strategy in ("ssms", "sps"):
            ledger = _toy_ledger(12, strategy, beta=1.0)
            cfg = estimation.EstimatorConfig(estimator="dmle")
            build = _loss_builder(params, x, y, ledger,
                                  acq_mod.AcquisitionKind("entropy"), cfg)
            err = grad_check(build, _param_values(params))
            worst[strategy] = max(worst[strategy], err)
    for strategy, err in worst.items():
        ok, line = _line(err < 1e-4,
                         f"dmle-{strategy} grad check worst of {trials} trials",
                         err, "< 1e-4, h=1e-5")
        ok_all &= ok
        lines.append(line)

    # coldness zero: gradients of both objectives agree for every
    # strategy/acquisition pairing on a 3-cycle ledger
    params = mlp.init_params([2, 8, 3], "relu", stream(55, "init"),
                             dropout_rate=0.25)
    worst_gap = 0.0
    for strategy in selection.STRATEGIES:
        for tag in acq_mod.KINDS:
            kind = acq_mod.AcquisitionKind(tag, bald_samples=4)
            ledger = _toy_ledger(12, strategy, beta=0.0)
            cfg = estimation.EstimatorConfig(estimator="dmle")
            g = Graph()
            leaves = mlp.param_leaves(g, params)
            parts = estimation.dmle_loss(g, leaves, params, x[:5], y[:5], x,
                                         ledger, kind, cfg, root_seed=3)
            g.backward(parts.loss)
            dmle_grads = {k: v.grad.copy() for k, v in leaves.items()}
            g2 = Graph()
            leaves2 = mlp.param_leaves(g2, params)
            nll = estimation.imle_loss(g2, leaves2, params, x[:5], y[:5])
            g2.backward(nll)
            gap = max(np.max(np.abs(dmle_grads[k] - leaves2[k].grad))
                      for k in dmle_grads)
            worst_gap = max(worst_gap, gap)
    ok, line = _line(worst_gap < 1e-10,
                     "coldness-zero gradient gap over strategies x acquisitions",
                     worst_gap, "< 1e-10")
    ok_all &= ok
    lines.append(line)
    return SuiteReport("gradients", ok_all, lines)


def verify_theorems(mc_samples: int = 100_000, kl_models: int = 100) -> SuiteReport:
    lines, ok_all = [], True
    rng = stream(4242, "mc")
    pool_x = rng.normal(size=(10, 2))
    theta = np.array([0.8, -0.5, 0.2])
    report = analysis.fisher_gap_check(theta, pool_x, beta=1.0,
                                       mc_samples=mc_samples,
                                       rng=stream(4242, "mc", 1))
    ok, line = _line(report.min_eig_selection >= -1e-8,
                     "min eigenvalue of selection information",
                     report.min_eig_selection, ">= -1e-8")
    ok_all &= ok
    lines.append(line)
    ok, line = _line(report.min_eig_gap >= -1e-8,
                     "min eigenvalue of combined minus label information",
                     report.min_eig_gap, ">= -1e-8")
    ok_all &= ok
    lines.append(line)

    worst = 0.0
    krng = stream(4242, "mc", 2)
    for _ in range(kl_models):
        truth = krng.random((4, 3)) + 0.05
        truth /= truth.sum()
        cond = krng.random((4, 3)) + 0.05
        cond /= cond.sum(axis=1, keepdims=True)
        marg = krng.random(4) + 0.05
        marg /= marg.sum()
        worst = max(worst, analysis.kl_decomposition_check(truth, cond, marg).residual)
    ok, line = _line(worst < 1e-10,
                     f"log-likelihood decomposition residual, {kl_models} models",
                     worst, "< 1e-10")
    ok_all &= ok
    lines.append(line)
    return SuiteReport("theorems", ok_all, lines)


def run_suite(name: str) -> list[SuiteReport]:
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; valid: {SUITES}")
    if name == "gumbel":
        return [verify_gumbel()]
    if name == "gradients":
        return [verify_gradients()]
    if name == "theorems":
        return [verify_theorems()]
    return [verify_gumbel(), verify_gradients(), verify_theorems()]


def report_text(reports: list[SuiteReport]) -> str:
    overall = "PASS" if all(r.passed for r in reports) else "FAIL"
    parts = [r.text() for r in reports]
    return "\n".join(parts + [f"overall: {overall}"]) + "\n"
