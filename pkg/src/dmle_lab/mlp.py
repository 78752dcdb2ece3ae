"""MLP classifier: predictive distribution, embeddings, MC dropout, Adam.

The plain (numpy) forward pass is the fast path used for scoring and
evaluation; graph building via logits_nodes feeds the training losses
and the differentiable acquisition scores. Both paths share the same
arithmetic so their values agree to float64 round-off.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Graph, Tensor

ACTIVATIONS = ("relu", "tanh")


@dataclass
class MlpParams:
    """Learnable state of the classifier: one weight/bias pair per layer."""

    layer_dims: list[int]
    hidden_activation: str = "relu"
    dropout_rate: float = 0.0
    weights: list[np.ndarray] = field(default_factory=list)
    biases: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.hidden_activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.hidden_activation!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            want = (self.layer_dims[i], self.layer_dims[i + 1])
            if w.shape != want or b.shape != (want[1],):
                raise ValueError(f"layer {i} shapes inconsistent with layer_dims")

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def n_classes(self) -> int:
        return self.layer_dims[-1]

    def copy(self) -> "MlpParams":
        return replace(self, weights=[w.copy() for w in self.weights],
                       biases=[b.copy() for b in self.biases])

    def to_json(self) -> dict:
        return {
            "layer_dims": list(self.layer_dims),
            "activation": self.hidden_activation,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MlpParams":
        return cls(layer_dims=list(obj["layer_dims"]),
                   hidden_activation=obj["activation"],
                   weights=[np.asarray(w, dtype=np.float64) for w in obj["weights"]],
                   biases=[np.asarray(b, dtype=np.float64) for b in obj["biases"]])


def init_params(layer_dims, activation: str, rng: np.random.Generator,
                dropout_rate: float = 0.0) -> MlpParams:
    """Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases."""
    weights, biases = [], []
    for d_in, d_out in zip(layer_dims[:-1], layer_dims[1:]):
        bound = np.sqrt(6.0 / (d_in + d_out))
        weights.append(rng.uniform(-bound, bound, size=(d_in, d_out)))
        biases.append(np.zeros(d_out))
    return MlpParams(layer_dims=list(layer_dims), hidden_activation=activation,
                     dropout_rate=dropout_rate, weights=weights, biases=biases)


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _check_features(params: MlpParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.layer_dims[0]:
        raise ValueError(
            f"expected features [batch, {params.layer_dims[0]}], got {x.shape}")
    return x


def dropout_masks(params: MlpParams, rng: np.random.Generator) -> list[np.ndarray]:
    """Inverted-dropout masks for the hidden layers, shared across a batch."""
    rate = params.dropout_rate
    masks = []
    for d in params.layer_dims[1:-1]:
        keep = rng.random(d) >= rate
        masks.append(keep.astype(np.float64) / (1.0 - rate))
    return masks


def logits(params: MlpParams, x: np.ndarray,
           masks: list[np.ndarray] | None = None) -> np.ndarray:
    x = _check_features(params, x)
    h = x
    for i in range(params.n_layers):
        z = h @ params.weights[i] + params.biases[i]
        if i < params.n_layers - 1:
            h = _activate(z, params.hidden_activation)
            if masks is not None:
                h = h * masks[i]
        else:
            h = z
    return h


def softmax(z: np.ndarray) -> np.ndarray:
    m = np.max(z, axis=1, keepdims=True)
    e = np.exp(z - m)
    return e / np.sum(e, axis=1, keepdims=True)


def mlp_forward(params: MlpParams, x: np.ndarray, mode: str = "eval",
                rng: np.random.Generator | None = None) -> np.ndarray:
    """Predictive distribution, one probability row per sample."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be train or eval, got {mode!r}")
    masks = None
    if mode == "train" and params.dropout_rate > 0.0:
        if rng is None:
            raise ValueError("train mode with dropout requires an rng stream")
        masks = dropout_masks(params, rng)
    return softmax(logits(params, x, masks))


def mlp_embed(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Penultimate-layer activations (post-activation, no dropout)."""
    if params.n_layers < 2:
        raise ValueError("no embedding layer: model has no hidden layer")
    x = _check_features(params, x)
    h = x
    for i in range(params.n_layers - 1):
        h = _activate(h @ params.weights[i] + params.biases[i],
                      params.hidden_activation)
    return h


def mc_dropout_predict(params: MlpParams, x: np.ndarray, m: int,
                       rng: np.random.Generator) -> list[np.ndarray]:
    """m stochastic forward passes with independent dropout masks."""
    if m < 1:
        raise ValueError("sample count must be >= 1")
    return [mlp_forward(params, x, mode="train", rng=rng)
            if params.dropout_rate > 0.0 else mlp_forward(params, x)
            for _ in range(m)]


# -- graph-mode forward ------------------------------------------------

def param_leaves(graph: Graph, params: MlpParams) -> dict[str, Tensor]:
    """Named differentiable leaves for every weight and bias tensor."""
    leaves = {}
    for i in range(params.n_layers):
        leaves[f"W{i}"] = graph.leaf(params.weights[i], f"W{i}")
        leaves[f"b{i}"] = graph.leaf(params.biases[i], f"b{i}")
    return leaves


def logits_nodes(graph: Graph, leaves: dict[str, Tensor], params: MlpParams,
                 x: np.ndarray, masks: list[np.ndarray] | None = None) -> Tensor:
    """Graph twin of logits(); x enters as a non-differentiable constant."""
    h = graph.constant(_check_features(params, x))
    for i in range(params.n_layers):
        z = h @ leaves[f"W{i}"] + leaves[f"b{i}"]
        if i < params.n_layers - 1:
            h = z.relu() if params.hidden_activation == "relu" else z.tanh()
            if masks is not None:
                h = h * masks[i]
        else:
            h = z
    return h


def embed_nodes(graph: Graph, leaves: dict[str, Tensor], params: MlpParams,
                x: np.ndarray) -> Tensor:
    if params.n_layers < 2:
        raise ValueError("no embedding layer: model has no hidden layer")
    h = graph.constant(_check_features(params, x))
    for i in range(params.n_layers - 1):
        z = h @ leaves[f"W{i}"] + leaves[f"b{i}"]
        h = z.relu() if params.hidden_activation == "relu" else z.tanh()
    return h


# -- Adam --------------------------------------------------------------

@dataclass
class AdamState:
    """Moment accumulators mirroring the parameter tensors."""

    m_weights: list[np.ndarray]
    v_weights: list[np.ndarray]
    m_biases: list[np.ndarray]
    v_biases: list[np.ndarray]
    t: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: MlpParams, lr: float = 0.001) -> "AdamState":
        return cls(m_weights=[np.zeros_like(w) for w in params.weights],
                   v_weights=[np.zeros_like(w) for w in params.weights],
                   m_biases=[np.zeros_like(b) for b in params.biases],
                   v_biases=[np.zeros_like(b) for b in params.biases],
                   lr=lr)


def adam_step(params: MlpParams, grads: dict[str, np.ndarray],
              state: AdamState) -> tuple[MlpParams, AdamState]:
    """One bias-corrected Adam update; returns fresh params and state."""
    new = params.copy()
    st = AdamState(m_weights=[a.copy() for a in state.m_weights],
                   v_weights=[a.copy() for a in state.v_weights],
                   m_biases=[a.copy() for a in state.m_biases],
                   v_biases=[a.copy() for a in state.v_biases],
                   t=state.t + 1, lr=state.lr, beta1=state.beta1,
                   beta2=state.beta2, eps=state.eps)
    c1 = 1.0 - st.beta1 ** st.t
    c2 = 1.0 - st.beta2 ** st.t
    for i in range(params.n_layers):
        for kind, target, m, v in (("W", new.weights, st.m_weights, st.v_weights),
                                   ("b", new.biases, st.m_biases, st.v_biases)):
            g = grads[f"{kind}{i}"]
            if g.shape != target[i].shape:
                raise ValueError(f"gradient shape mismatch for {kind}{i}")
            m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g
            v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g * g
            target[i] = target[i] - st.lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + st.eps)
    return new, st
