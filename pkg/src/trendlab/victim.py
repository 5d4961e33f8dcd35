"""Victim node classifiers: a two-layer GCN with hand-written backprop and
the closed-form linear GCN."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ArgumentError, NumericError, ValidationError
from .numerics import least_squares_weights, rng_stream, softmax


def _mat(C):
    return getattr(C, "matrix", C)


@dataclass(frozen=True, eq=False)
class GcnParams:
    W1: np.ndarray
    W2: np.ndarray

    @property
    def hidden(self):
        return self.W1.shape[1]

    def flat(self):
        return np.concatenate([self.W1.ravel(), self.W2.ravel()])

    def unflat(self, vec):
        k = self.W1.size
        return GcnParams(vec[:k].reshape(self.W1.shape), vec[k:].reshape(self.W2.shape))

    def to_dict(self):
        return {"kind": "gcn", "W1": _matrix_doc(self.W1), "W2": _matrix_doc(self.W2)}


@dataclass(frozen=True, eq=False)
class LinearGcnParams:
    """Per-class least-squares weights ``W`` of shape ``(d, num_classes)``."""

    W: np.ndarray
    damping: float = 0.0

    def flat(self):
        return self.W.ravel().copy()

    def unflat(self, vec):
        return LinearGcnParams(vec.reshape(self.W.shape), self.damping)

    def to_dict(self):
        return {"kind": "linear", "W": _matrix_doc(self.W), "damping": format(self.damping, ".17g")}


def _matrix_doc(M):
    M = np.atleast_2d(M)
    return {"shape": list(M.shape), "values": [format(float(v), ".17g") for v in M.ravel()]}


def _matrix_from_doc(doc):
    return np.asarray([float(v) for v in doc["values"]], dtype=float).reshape(doc["shape"])


def params_to_json(params) -> str:
    return json.dumps(params.to_dict(), sort_keys=True)


def params_from_json(text):
    doc = json.loads(text) if isinstance(text, str) else text
    if doc.get("kind") == "gcn":
        return GcnParams(_matrix_from_doc(doc["W1"]), _matrix_from_doc(doc["W2"]))
    if doc.get("kind") == "linear":
        return LinearGcnParams(_matrix_from_doc(doc["W"]), float(doc.get("damping", 0.0)))
    raise ValidationError(f"unknown parameter kind {doc.get('kind')!r}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 0.01
    weight_decay: float = 5e-4
    hidden: int = 16
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ArgumentError("epochs must be >= 1")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ArgumentError("learning_rate and weight_decay must be non-negative")


class Adam:
    """Adam with L2 penalty folded into the gradient (``grad + wd * theta``)."""

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.lr, self.beta1, self.beta2, self.eps, self.wd = lr, beta1, beta2, eps, weight_decay
        self.m = self.v = None
        self.t = 0

    def step(self, theta, grad):
        if self.wd:
            grad = grad + self.wd * theta
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        return theta - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_gcn(feature_dim, hidden, num_classes, seed):
    rng = rng_stream(seed, "victim-init")
    return GcnParams(glorot(rng, feature_dim, hidden), glorot(rng, hidden, num_classes))


# ---------------------------------------------------------------- GCN

def _check_shapes(g, C, params):
    C = _mat(C)
    if C.shape != (g.num_nodes, g.num_nodes):
        raise ArgumentError(f"propagation matrix is {C.shape}, graph has {g.num_nodes} nodes")
    if params.W1.shape[0] != g.feature_dim:
        raise ArgumentError(f"W1 expects {params.W1.shape[0]} features, graph has {g.feature_dim}")
    if params.W1.shape[1] != params.W2.shape[0]:
        raise ArgumentError("W1 and W2 hidden sizes disagree")
    return C


def _gcn_cache(g, C, params):
    C = _check_shapes(g, C, params)
    CX = C @ g.features
    Z1 = CX @ params.W1
    H1 = np.maximum(Z1, 0.0)
    CH = C @ H1
    logits = CH @ params.W2
    return CX, Z1, CH, logits


def gcn_forward(g, C, params: GcnParams) -> np.ndarray:
    """Row-wise class probabilities ``softmax(C relu(C X W1) W2)``."""
    return softmax(_gcn_cache(g, C, params)[3])


def gcn_loss_and_grad(g, C, params, nodes=None, weight_decay=0.0, reduction="mean", labels=None):
    """Cross-entropy over ``nodes`` (default: train mask) plus ``wd/2 * ||theta||^2``.

    Returns ``(loss, GcnParams_of_gradients)``.
    """
    Cm = _check_shapes(g, C, params)
    idx = np.flatnonzero(g.train_mask) if nodes is None else np.asarray(nodes, dtype=np.int64)
    y = g.labels if labels is None else labels
    CX, Z1, CH, logits = _gcn_cache(g, Cm, params)
    P = softmax(logits)
    scale = 1.0 / max(idx.size, 1) if reduction == "mean" else 1.0
    loss = -scale * np.sum(np.log(np.clip(P[idx, y[idx]], 1e-300, None)))
    dlogits = np.zeros_like(P)
    dlogits[idx] = P[idx]
    dlogits[idx, y[idx]] -= 1.0
    dlogits *= scale
    dW2 = CH.T @ dlogits
    dH1 = Cm.T @ (dlogits @ params.W2.T)
    dZ1 = dH1 * (Z1 > 0)
    dW1 = CX.T @ dZ1
    if weight_decay:
        loss += 0.5 * weight_decay * (np.sum(params.W1 ** 2) + np.sum(params.W2 ** 2))
        dW1 = dW1 + weight_decay * params.W1
        dW2 = dW2 + weight_decay * params.W2
    return float(loss), GcnParams(np.asarray(dW1), np.asarray(dW2))


def _check_trainable(g):
    # a partition side may hold only a few nodes of some class, none of them in
    # the train mask; the output layer keeps all num_classes so posteriors from
    # different sides stay comparable, and only total class starvation is fatal
    trained = np.unique(g.labels[g.train_mask])
    if trained.size < 2:
        raise ValidationError(f"training needs train-mask nodes from at least two classes, got {trained.tolist()}")


def gcn_train(g, C, cfg: TrainConfig = TrainConfig(), history=None) -> GcnParams:
    """Full-batch Adam on the masked cross-entropy for ``cfg.epochs`` steps.

    If ``history`` is a list, the loss before every step is appended to it.
    """
    _check_trainable(g)
    params = init_gcn(g.feature_dim, cfg.hidden, g.num_classes, cfg.seed)
    opt = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps, weight_decay=cfg.weight_decay)
    theta = params.flat()
    for epoch in range(1, cfg.epochs + 1):
        p = params.unflat(theta)
        loss, grad = gcn_loss_and_grad(g, C, p)
        if not np.isfinite(loss):
            raise NumericError(f"training loss diverged at epoch {epoch}")
        if history is not None:
            history.append(loss + 0.5 * cfg.weight_decay * float(theta @ theta))
        theta = opt.step(theta, grad.flat())
    return params.unflat(theta)


def accuracy(P, labels, mask=None):
    pred = np.argmax(P, axis=1)
    hit = pred == labels
    return float(hit[mask].mean() if mask is not None else hit.mean())


# ---------------------------------------------------------------- linear GCN

def linear_targets(g, signed_binary=False):
    """One-hot class targets, or a single ``+-1`` column for ``signed_binary``."""
    if signed_binary:
        if g.num_classes != 2:
            raise ArgumentError("signed_binary targets need exactly two classes")
        return np.where(g.labels == 1, 1.0, -1.0)
    Y = np.zeros((g.num_nodes, g.num_classes))
    Y[np.arange(g.num_nodes), g.labels] = 1.0
    return Y


def linear_gcn_fit(g, C, damping=1e-6, targets=None) -> LinearGcnParams:
    """Closed-form least squares of ``C X W`` on the labeled rows.

    ``targets`` defaults to one-hot labels; a vector gives a single column.
    """
    rows = np.flatnonzero(g.train_mask)
    Y = linear_targets(g) if targets is None else np.asarray(targets, dtype=float)
    Z = np.asarray(_mat(C) @ g.features)
    W = least_squares_weights(Z[rows], Y[rows], damping=damping)
    return LinearGcnParams(W.reshape(g.feature_dim, -1), damping)


def linear_scores(g, C, params: LinearGcnParams):
    return np.asarray(_mat(C) @ g.features) @ params.W


def linear_forward(g, C, params: LinearGcnParams):
    """Class probabilities as a softmax over the per-class linear scores."""
    return softmax(linear_scores(g, C, params))


def linear_loss_and_grad(g, C, params, nodes=None, targets=None):
    """``0.5 * ||Y - C X W||^2`` over ``nodes`` (default: train mask)."""
    idx = np.flatnonzero(g.train_mask) if nodes is None else np.asarray(nodes, dtype=np.int64)
    Y = linear_targets(g) if targets is None else np.asarray(targets, dtype=float).reshape(g.num_nodes, -1)
    Z = np.asarray(_mat(C) @ g.features)[idx]
    R = Z @ params.W - Y[idx]
    return 0.5 * float(np.sum(R ** 2)), LinearGcnParams(Z.T @ R)


def predict_proba(g, C, params):
    if isinstance(params, GcnParams):
        return gcn_forward(g, C, params)
    return linear_forward(g, C, params)


def confidence(p):
    """Max class probability (per row for a matrix)."""
    return np.max(np.asarray(p, dtype=float), axis=-1)
