"""Reverse-mode differentiation over dense float64 arrays.

A Graph is an append-only tape of primitive operations. Ops evaluate
eagerly (each node caches its forward value) and register a closure
that routes the upstream gradient to the node's operands. backward()
walks the tape in exact reverse creation order once, accumulating
gradients additively where a node feeds several consumers.

Everything is float64. Softmax-like quantities are always computed
through max-shifted log-sum-exp; raw exponentials of logits are never
materialised.
"""

from __future__ import annotations

import numpy as np


class GraphError(Exception):
    """Structural problem in a graph (shape mismatch, wrong graph, ...)."""


class NonFiniteError(GraphError):
    """A forward value or gradient stopped being finite; carries the op name."""


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad over the axes numpy broadcasting added or stretched."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """One node of a Graph: cached forward value plus a backward closure."""

    __slots__ = ("graph", "data", "grad", "op", "_parents", "_backward")

    def __init__(self, graph: "Graph", data, op: str, parents=(), backward=None):
        self.graph = graph
        self.data = _as_array(data)
        self.grad = None
        self.op = op
        self._parents = parents
        self._backward = backward
        if graph.check_finite and not np.all(np.isfinite(self.data)):
            raise NonFiniteError(f"non-finite forward value at node {op!r}")
        graph._tape.append(self)

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.data.shape})"

    # -- helpers -------------------------------------------------------

    def _sibling(self, other) -> "Tensor | None":
        """Return other as a Tensor of the same graph, or None for constants."""
        if isinstance(other, Tensor):
            if other.graph is not self.graph:
                raise GraphError(f"operands of {self.op!r} belong to different graphs")
            return other
        return None

    @staticmethod
    def _combine(op: str, fn):
        try:
            return fn()
        except ValueError as exc:
            raise GraphError(f"shape mismatch at node {op!r}: {exc}") from exc

    def _accum(self, node: "Tensor", g: np.ndarray):
        g = _unbroadcast(g, node.data.shape)
        node.grad = g if node.grad is None else node.grad + g

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other):
        o = self._sibling(other)
        if o is not None:
            data = self._combine("add", lambda: self.data + o.data)
            out = Tensor(self.graph, data, "add", (self, o))

            def back(g, a=self, b=o, out=out):
                out._accum(a, g)
                out._accum(b, g)
        else:
            c = _as_array(other)
            data = self._combine("add", lambda: self.data + c)
            out = Tensor(self.graph, data, "add", (self,))

            def back(g, a=self, out=out):
                out._accum(a, g)
        out._backward = back
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(self.graph, -self.data, "neg", (self,))

        def back(g, a=self, out=out):
            out._accum(a, -g)
        out._backward = back
        return out

    def __sub__(self, other):
        o = self._sibling(other)
        if o is not None:
            return self + (-o)
        return self + (-_as_array(other))

    def __rsub__(self, other):
        return (-self) + _as_array(other)

    def __mul__(self, other):
        o = self._sibling(other)
        if o is not None:
            data = self._combine("mul", lambda: self.data * o.data)
            out = Tensor(self.graph, data, "mul", (self, o))

            def back(g, a=self, b=o, out=out):
                out._accum(a, g * b.data)
                out._accum(b, g * a.data)
        else:
            c = _as_array(other)
            data = self._combine("mul", lambda: self.data * c)
            out = Tensor(self.graph, data, "mul", (self,))

            def back(g, a=self, c=c, out=out):
                out._accum(a, g * c)
        out._backward = back
        return out

    __rmul__ = __mul__

    def __matmul__(self, other):
        o = self._sibling(other)
        if o is None:
            raise GraphError("matmul requires two graph tensors")
        if self.data.ndim != 2 or o.data.ndim != 2 or self.data.shape[1] != o.data.shape[0]:
            raise GraphError(
                f"matmul shape mismatch {self.data.shape} @ {o.data.shape}")
        with np.errstate(over="ignore"):  # inf is caught by the finite check
            out = Tensor(self.graph, self.data @ o.data, "matmul", (self, o))

        def back(g, a=self, b=o, out=out):
            out._accum(a, g @ b.data.T)
            out._accum(b, a.data.T @ g)
        out._backward = back
        return out

    # -- elementwise ---------------------------------------------------

    def exp(self):
        with np.errstate(over="ignore"):  # inf is caught by the finite check
            out = Tensor(self.graph, np.exp(self.data), "exp", (self,))

        def back(g, a=self, out=out):
            out._accum(a, g * out.data)
        out._backward = back
        return out

    def log(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            out = Tensor(self.graph, np.log(self.data), "log", (self,))

        def back(g, a=self, out=out):
            out._accum(a, g / a.data)
        out._backward = back
        return out

    def sqrt(self):
        with np.errstate(invalid="ignore"):
            out = Tensor(self.graph, np.sqrt(self.data), "sqrt", (self,))

        def back(g, a=self, out=out):
            # subgradient 0 at exactly 0 keeps gradients finite
            d = np.where(a.data > 0.0, 0.5 / np.sqrt(np.where(a.data > 0.0, a.data, 1.0)), 0.0)
            out._accum(a, g * d)
        out._backward = back
        return out

    def tanh(self):
        out = Tensor(self.graph, np.tanh(self.data), "tanh", (self,))

        def back(g, a=self, out=out):
            out._accum(a, g * (1.0 - out.data * out.data))
        out._backward = back
        return out

    def relu(self):
        out = Tensor(self.graph, np.maximum(self.data, 0.0), "relu", (self,))

        def back(g, a=self, out=out):
            out._accum(a, g * (a.data > 0.0))
        out._backward = back
        return out

    def sigmoid(self):
        # exp of -|x| only: stable on both tails
        x = self.data
        s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                     np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        out = Tensor(self.graph, s, "sigmoid", (self,))

        def back(g, a=self, out=out):
            out._accum(a, g * out.data * (1.0 - out.data))
        out._backward = back
        return out

    def xlogx(self):
        """x * ln(x) with the 0 ln 0 := 0 convention (entropy terms)."""
        x = self.data
        safe = np.where(x > 0.0, x, 1.0)
        out = Tensor(self.graph, np.where(x > 0.0, x * np.log(safe), 0.0),
                     "xlogx", (self,))

        def back(g, a=self, safe=safe, out=out):
            d = np.where(a.data > 0.0, np.log(safe) + 1.0, 0.0)
            out._accum(a, g * d)
        out._backward = back
        return out

    # -- reductions ----------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.graph, np.sum(self.data, axis=axis, keepdims=keepdims),
                     "sum", (self,))

        def back(g, a=self, axis=axis, keepdims=keepdims, out=out):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            out._accum(a, np.broadcast_to(g, a.data.shape).copy())
        out._backward = back
        return out

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def logsumexp(self, axis=None, keepdims=False):
        """Max-shifted log-sum-exp; finite for inputs up to +-700."""
        m = np.max(self.data, axis=axis, keepdims=True)
        m = np.where(np.isfinite(m), m, 0.0)
        shifted = np.exp(self.data - m)
        total = np.sum(shifted, axis=axis, keepdims=True)
        val = np.log(total) + m
        if not keepdims and axis is not None:
            val = np.squeeze(val, axis=axis)
        elif not keepdims and axis is None:
            val = val.reshape(())
        out = Tensor(self.graph, val, "logsumexp", (self,))
        softmax = shifted / total

        def back(g, a=self, softmax=softmax, axis=axis, keepdims=keepdims, out=out):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            out._accum(a, g * softmax)
        out._backward = back
        return out

    # -- indexing ------------------------------------------------------

    def index_select(self, rows):
        """Rows of a matrix (or entries of a vector) by integer index."""
        rows = np.asarray(rows, dtype=np.intp)
        out = Tensor(self.graph, self.data[rows], "index_select", (self,))

        def back(g, a=self, rows=rows, out=out):
            full = np.zeros_like(a.data)
            np.add.at(full, rows, g)
            out._accum(a, full)
        out._backward = back
        return out

    def gather_rows(self, cols):
        """out[i] = self[i, cols[i]] for a 2-d tensor."""
        if self.data.ndim != 2:
            raise GraphError("gather_rows expects a 2-d tensor")
        cols = np.asarray(cols, dtype=np.intp)
        n = self.data.shape[0]
        idx = np.arange(n)
        out = Tensor(self.graph, self.data[idx, cols], "gather_rows", (self,))

        def back(g, a=self, idx=idx, cols=cols, out=out):
            full = np.zeros_like(a.data)
            np.add.at(full, (idx, cols), g)
            out._accum(a, full)
        out._backward = back
        return out

    def softmax_cross_entropy(self, labels):
        """Per-row negative log-likelihood of integer labels under softmax logits."""
        if self.data.ndim != 2:
            raise GraphError("softmax_cross_entropy expects [batch, classes] logits")
        labels = np.asarray(labels, dtype=np.intp)
        if labels.shape != (self.data.shape[0],):
            raise GraphError(
                f"labels shape {labels.shape} does not match batch {self.data.shape[0]}")
        z = self.data
        m = np.max(z, axis=1, keepdims=True)
        shifted = np.exp(z - m)
        total = np.sum(shifted, axis=1, keepdims=True)
        lse = np.log(total)[:, 0] + m[:, 0]
        picked = z[np.arange(z.shape[0]), labels]
        out = Tensor(self.graph, lse - picked, "softmax_cross_entropy", (self,))
        softmax = shifted / total

        def back(g, a=self, softmax=softmax, labels=labels, out=out):
            d = softmax.copy()
            d[np.arange(d.shape[0]), labels] -= 1.0
            out._accum(a, d * g[:, None])
        out._backward = back
        return out


class Graph:
    """Append-only tape of Tensor nodes with a reverse-order backward pass."""

    def __init__(self, check_finite: bool = True):
        self._tape: list[Tensor] = []
        self.check_finite = check_finite

    def leaf(self, data, name: str | None = None) -> Tensor:
        return Tensor(self, data, name or "leaf")

    def constant(self, data) -> Tensor:
        return Tensor(self, data, "const")

    def __len__(self):
        return len(self._tape)

    def backward(self, output: Tensor) -> None:
        """Gradient of a scalar output w.r.t. every tape node, in .grad."""
        if output.graph is not self:
            raise GraphError("output does not belong to this graph")
        if output.data.shape != ():
            raise GraphError(
                f"gradients require a scalar output, got shape {output.data.shape}")
        for node in self._tape:
            node.grad = None
        output.grad = np.ones(())
        for node in reversed(self._tape):
            if node.grad is None or node._backward is None:
                continue
            if self.check_finite and not np.all(np.isfinite(node.grad)):
                raise NonFiniteError(f"non-finite gradient at node {node.op!r}")
            node._backward(node.grad)


def eval_graph(output: Tensor, inputs: dict[str, Tensor]):
    """Forward value and gradients of a scalar output w.r.t. named leaves."""
    output.graph.backward(output)
    grads = {}
    for name, leaf in inputs.items():
        if leaf.graph is not output.graph:
            raise GraphError(f"input {name!r} belongs to a different graph")
        grads[name] = np.zeros_like(leaf.data) if leaf.grad is None else leaf.grad
    return float(output.data), grads


def grad_check(build, inputs: dict[str, np.ndarray], h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    build maps {name: ndarray} to the scalar output Tensor of a fresh
    graph whose differentiable leaves carry those names. The numeric side
    re-runs build at perturbed inputs, so it never reuses the analytic path.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    arrays = {k: _as_array(v) for k, v in inputs.items()}

    def forward(vals) -> float:
        out = build(vals)
        return float(out.data)

    out = build(arrays)
    leaves = {name: t for name, t in _named_leaves(out.graph).items() if name in arrays}
    missing = set(arrays) - set(leaves)
    if missing:
        raise GraphError(f"build() did not create leaves for {sorted(missing)}")
    _, grads = eval_graph(out, leaves)

    worst = 0.0
    for name, base in arrays.items():
        for i in range(base.size):
            center = base.flat[i]
            bumped = {k: v.copy() for k, v in arrays.items()}
            bumped[name].flat[i] = center + h
            f_plus = forward(bumped)
            bumped[name].flat[i] = center - h
            f_minus = forward(bumped)
            numeric = (f_plus - f_minus) / (2.0 * h)
            analytic = grads[name].flat[i]
            err = abs(analytic - numeric) / max(1.0, abs(analytic))
            worst = max(worst, err)
    return worst


def _named_leaves(graph: Graph) -> dict[str, Tensor]:
    named = {}
    for node in graph._tape:
        if node._backward is None and node.op not in ("const", "leaf"):
            named[node.op] = node
    return named
