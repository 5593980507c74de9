"""Minimal reverse-mode differentiation over the operators the model needs.

Values are float64 numpy arrays on a dynamic tape. The operator set is
deliberately small: affine, relu, concat, row gather/stack, means, sums,
scaling, softmax cross-entropy and mean squared error. Every op checks its
output for non-finite values and names itself in the failure.
"""

from __future__ import annotations

import itertools

import numpy as np


class NonFiniteError(ArithmeticError):
    def __init__(self, op: str):
        self.op = op
        super().__init__(f"non-finite intermediate produced by op {op!r}")


class Tensor:
    __slots__ = ("value", "grad", "op", "_parents", "_backward")

    def __init__(self, value, op="leaf", parents=(), backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(self.value)):
            raise NonFiniteError(op)
        self.grad = np.zeros_like(self.value)
        self.op = op
        self._parents = tuple(parents)
        self._backward = backward

    def backward(self) -> None:
        """Accumulate gradients of a scalar output into every leaf."""
        if self.value.shape != ():
            raise ValueError("backward() requires a scalar tensor")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b; x may be a vector or a (rows, in) matrix."""
    value = x.value @ w.value + b.value

    def backward(g):
        if x.value.ndim == 1:
            x.grad += w.value @ g
            w.grad += np.outer(x.value, g)
            b.grad += g
        else:
            x.grad += g @ w.value.T
            w.grad += x.value.T @ g
            b.grad += g.sum(axis=0)

    return Tensor(value, "affine", (x, w, b), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.value > 0

    def backward(g):
        x.grad += g * mask

    return Tensor(x.value * mask, "relu", (x,), backward)


def concat(xs: list[Tensor]) -> Tensor:
    value = np.concatenate([x.value for x in xs])
    sizes = [x.value.shape[0] for x in xs]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for x, lo, hi in zip(xs, offsets[:-1], offsets[1:]):
            x.grad += g[lo:hi]

    return Tensor(value, "concat", tuple(xs), backward)


def gather_concat(xs: list[Tensor], orderings: list[tuple[int, ...]]) -> Tensor:
    """Stack one row per ordering, each the concatenation of the selected
    vectors. Used to evaluate a relation net on all orderings at once."""
    dim = xs[0].value.shape[0]
    value = np.empty((len(orderings), dim * len(orderings[0])))
    for r, ordering in enumerate(orderings):
        for c, idx in enumerate(ordering):
            value[r, c * dim : (c + 1) * dim] = xs[idx].value

    def backward(g):
        for r, ordering in enumerate(orderings):
            for c, idx in enumerate(ordering):
                xs[idx].grad += g[r, c * dim : (c + 1) * dim]

    return Tensor(value, "gather_concat", tuple(xs), backward)


def mean_rows(x: Tensor) -> Tensor:
    rows = x.value.shape[0]

    def backward(g):
        x.grad += np.broadcast_to(g / rows, x.value.shape)

    return Tensor(x.value.mean(axis=0), "mean_rows", (x,), backward)


def mean_stack(xs: list[Tensor]) -> Tensor:
    n = len(xs)

    def backward(g):
        for x in xs:
            x.grad += g / n

    return Tensor(np.mean([x.value for x in xs], axis=0), "mean_stack", tuple(xs), backward)


def add_n(xs: list[Tensor]) -> Tensor:
    def backward(g):
        for x in xs:
            x.grad += g

    value = xs[0].value.copy()
    for x in xs[1:]:
        value = value + x.value
    return Tensor(value, "add_n", tuple(xs), backward)


def scale(x: Tensor, c: float) -> Tensor:
    def backward(g):
        x.grad += c * g

    return Tensor(x.value * c, "scale", (x,), backward)


def softmax_cross_entropy(logits: Tensor, target_probs: np.ndarray) -> Tensor:
    """Cross-entropy of softmax(logits) against a target distribution."""
    z = logits.value - logits.value.max()
    log_probs = z - np.log(np.exp(z).sum())
    value = -(target_probs * log_probs).sum()
    probs = np.exp(log_probs)

    def backward(g):
        logits.grad += g * (probs - target_probs)

    return Tensor(value, "softmax_cross_entropy", (logits,), backward)


def mse(pred: Tensor, target: np.ndarray) -> Tensor:
    diff = pred.value - target
    n = diff.size

    def backward(g):
        pred.grad += g * (2.0 / n) * diff

    return Tensor((diff**2).mean(), "mse", (pred,), backward)


def softmax(values: np.ndarray) -> np.ndarray:
    """Plain (non-tape) softmax, for reporting normalized scores."""
    z = np.asarray(values, dtype=np.float64)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def all_orderings(indices: tuple[int, ...]) -> list[tuple[int, ...]]:
    return sorted(itertools.permutations(indices))
