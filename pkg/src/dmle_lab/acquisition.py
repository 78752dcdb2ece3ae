"""Acquisition scores: entropy, BALD, least confidence, core-set distance.

Each score comes in two forms that must agree at identical parameters:
plain numpy values for pool scoring, and graph nodes whose gradients
flow into the model parameters for the dependency term of the
dependency-aware objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Graph, Tensor
from . import mlp

KINDS = ("entropy", "bald", "least_confidence", "coreset")


@dataclass(frozen=True)
class AcquisitionKind:
    tag: str
    bald_samples: int = 10

    def __post_init__(self):
        if self.tag not in KINDS:
            raise ValueError(f"unknown acquisition {self.tag!r}; valid: {KINDS}")


@dataclass
class CoresetContext:
    """Current center set: features plus their embeddings under current theta."""

    center_features: np.ndarray
    center_embeddings: np.ndarray | None = None


def coreset_context(params: mlp.MlpParams, center_x: np.ndarray) -> CoresetContext:
    center_x = np.asarray(center_x, dtype=np.float64)
    if center_x.shape[0] == 0:
        raise ValueError("core-set context requires at least one center")
    return CoresetContext(center_x, mlp.mlp_embed(params, center_x))


@dataclass
class ScoreVector:
    scores: np.ndarray
    indices: np.ndarray
    kind: AcquisitionKind
    theta_version: int = 0


def entropy_of(probs: np.ndarray) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    terms = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)
    return -np.sum(terms, axis=-1)


def _nearest_center(emb: np.ndarray, centers: np.ndarray,
                    chunk: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Exact nearest-center index and distance (0 for a center itself)."""
    n = emb.shape[0]
    nearest = np.empty(n, dtype=np.intp)
    dist = np.empty(n)
    for lo in range(0, n, chunk):
        d = emb[lo:lo + chunk, None, :] - centers[None, :, :]
        d2 = np.sum(d * d, axis=2)
        nearest[lo:lo + chunk] = np.argmin(d2, axis=1)
        dist[lo:lo + chunk] = np.sqrt(d2[np.arange(d2.shape[0]), nearest[lo:lo + chunk]])
    return nearest, dist


def score(kind: AcquisitionKind, params: mlp.MlpParams, x: np.ndarray, *,
          context: CoresetContext | None = None,
          rng: np.random.Generator | None = None,
          indices: np.ndarray | None = None,
          theta_version: int = 0) -> ScoreVector:
    """Plain acquisition values for a batch of samples."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] == 0:
        raise ValueError("empty sample set")
    if kind.tag == "entropy":
        values = entropy_of(mlp.mlp_forward(params, x))
    elif kind.tag == "least_confidence":
        values = 1.0 - np.max(mlp.mlp_forward(params, x), axis=1)
    elif kind.tag == "bald":
        if rng is None:
            raise ValueError("bald requires an rng stream")
        if kind.bald_samples < 2:
            raise ValueError("bald requires at least 2 posterior samples")
        preds = mlp.mc_dropout_predict(params, x, kind.bald_samples, rng)
        mean_p = np.mean(preds, axis=0)
        values = entropy_of(mean_p) - np.mean([entropy_of(p) for p in preds], axis=0)
    elif kind.tag == "coreset":
        if context is None:
            raise ValueError("coreset requires a center context")
        centers = context.center_embeddings
        if centers is None:
            centers = mlp.mlp_embed(params, context.center_features)
        _, values = _nearest_center(mlp.mlp_embed(params, x), centers)
    else:  # pragma: no cover - guarded by AcquisitionKind
        raise ValueError(kind.tag)
    if indices is None:
        indices = np.arange(x.shape[0])
    return ScoreVector(values, np.asarray(indices), kind, theta_version)


# -- differentiable form -------------------------------------------------

def _log_probs(z: Tensor) -> Tensor:
    return z - z.logsumexp(axis=1, keepdims=True)


def entropy_nodes(z: Tensor) -> Tensor:
    """Per-row predictive entropy from a logits node."""
    logp = _log_probs(z)
    p = logp.exp()
    return -(p * logp).sum(axis=1)


def score_nodes(kind: AcquisitionKind, graph: Graph, leaves: dict[str, Tensor],
                params: mlp.MlpParams, x: np.ndarray, *,
                context: CoresetContext | None = None,
                bald_masks: list[list[np.ndarray]] | None = None) -> Tensor:
    """Graph twin of score(); gradients flow into the parameter leaves.

    BALD replays the exact masks recorded at scoring time (bald_masks,
    one list of per-layer masks for each posterior sample). Core-set
    recomputes the center embeddings from context.center_features so the
    centers also move with theta.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] == 0:
        raise ValueError("empty sample set")
    if kind.tag == "entropy":
        return entropy_nodes(mlp.logits_nodes(graph, leaves, params, x))
    if kind.tag == "least_confidence":
        z = mlp.logits_nodes(graph, leaves, params, x)
        top = np.argmax(z.data, axis=1)  # constant within a gradient step
        p_max = _log_probs(z).gather_rows(top).exp()
        return 1.0 - p_max
    if kind.tag == "bald":
        if bald_masks is None:
            raise ValueError("bald in differentiable mode requires replayed masks")
        per_pass_logp, per_pass_p = [], []
        for masks in bald_masks:
            logp = _log_probs(mlp.logits_nodes(graph, leaves, params, x, masks))
            per_pass_logp.append(logp)
            per_pass_p.append(logp.exp())
        m = len(bald_masks)
        mean_p = per_pass_p[0] * (1.0 / m)
        for p in per_pass_p[1:]:
            mean_p = mean_p + p * (1.0 / m)
        h_mean = -mean_p.xlogx().sum(axis=1)
        mean_h = None
        for logp, p in zip(per_pass_logp, per_pass_p):
            h = -(p * logp).sum(axis=1) * (1.0 / m)
            mean_h = h if mean_h is None else mean_h + h
        return h_mean - mean_h
    if kind.tag == "coreset":
        if context is None:
            raise ValueError("coreset requires a center context")
        emb = mlp.embed_nodes(graph, leaves, params, x)
        centers = mlp.embed_nodes(graph, leaves, params, context.center_features)
        # nearest center chosen from current values; constant within a step
        nearest, _ = _nearest_center(emb.data, centers.data)
        diff = emb - centers.index_select(nearest)
        return (diff * diff).sum(axis=1).sqrt()
    raise ValueError(kind.tag)  # pragma: no cover


def replay_bald_masks(params: mlp.MlpParams, m: int,
                      rng: np.random.Generator) -> list[list[np.ndarray]]:
    """The mask sequence mc_dropout_predict would draw from the same stream."""
    return [mlp.dropout_masks(params, rng) for _ in range(m)]
