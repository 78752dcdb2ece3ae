import pytest

from dmle_lab import estimation, mlp, selection
from dmle_lab.rng import stream


@pytest.fixture
def small_mlp():
    """A 2-8-3 relu network with deterministic init."""
    return mlp.init_params([2, 8, 3], "relu", stream(11, "init"))


@pytest.fixture
def toy_batch():
    rng = stream(21, "mc")
    x = rng.normal(size=(12, 2))
    y = rng.integers(0, 3, size=12)
    return x, y


def build_ledger(n_pool: int, strategy: str, beta: float, k: int = 2,
                 cycles: int = 3) -> estimation.DependencyLedger:
    """A consistent synthetic ledger over dataset indices 0..n_pool-1."""
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


def loss_builder(params, x, y, ledger, acquisition, config, root_seed=0,
                 n_labeled=5):
    """grad_check-compatible builder for the dependency-aware loss."""
    def build(vals):
        from dmle_lab.autodiff import Graph
        g = Graph()
        p = params.copy()
        leaves = {}
        for i in range(p.n_layers):
            p.weights[i] = vals[f"W{i}"]
            p.biases[i] = vals[f"b{i}"]
            leaves[f"W{i}"] = g.leaf(vals[f"W{i}"], f"W{i}")
            leaves[f"b{i}"] = g.leaf(vals[f"b{i}"], f"b{i}")
        return estimation.dmle_loss(g, leaves, p, x[:n_labeled], y[:n_labeled],
                                    x, ledger, acquisition, config,
                                    root_seed).loss
    return build


def param_values(params) -> dict:
    vals = {}
    for i in range(params.n_layers):
        vals[f"W{i}"] = params.weights[i]
        vals[f"b{i}"] = params.biases[i]
    return vals
