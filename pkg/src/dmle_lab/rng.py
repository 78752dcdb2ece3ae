"""Counter-based random streams keyed by (root seed, purpose, cycle).

Every source of randomness in a run draws from its own stream, so
re-ordering or parallelising pool evaluation never shifts the draws of
another phase. Streams are numpy Generators seeded through SeedSequence
with a fixed (purpose, cycle) spawn key.
"""

from __future__ import annotations

import numpy as np

PURPOSE_CODES = {
    "init": 0,          # weight initialisation
    "initial_pick": 1,  # the single random sample opening a run
    "gumbel": 2,        # selection noise, keyed per cycle
    "bald": 3,          # MC-dropout masks for scoring, keyed per cycle
    "dropout": 8,       # generic dropout masks outside the scoring path
    "data": 4,          # synthetic data generation
    "splits": 5,        # train/val/test shuffling
    "subsample": 6,     # dataset subsampling
    "mc": 7,            # Monte Carlo verification draws
}


def stream(root_seed: int, purpose: str, cycle: int = 0) -> np.random.Generator:
    """Independent Generator for (root_seed, purpose, cycle)."""
    if purpose not in PURPOSE_CODES:
        raise ValueError(f"unknown rng purpose {purpose!r}")
    seq = np.random.SeedSequence(entropy=int(root_seed),
                                 spawn_key=(PURPOSE_CODES[purpose], int(cycle)))
    return np.random.default_rng(seq)


def gumbel(rng: np.random.Generator, n: int) -> np.ndarray:
    """Standard Gumbel(0,1) noise via -ln(-ln U), U uniform in (0,1)."""
    u = rng.random(n)
    # rng.random lies in [0,1); clip away an exact 0 so -ln(-ln U) stays finite
    u = np.clip(u, np.finfo(np.float64).tiny, None)
    return -np.log(-np.log(u))
