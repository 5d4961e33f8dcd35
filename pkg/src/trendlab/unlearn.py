"""Approximate edge unlearning (GIF, CEU, gradient ascent) and exact retraining."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import partial

import numpy as np

from .errors import ArgumentError, NumericError, ValidationError
from .graph import EdgeSet, Graph, build_propagation, remove_edges
from .influence import weight_influence
from .numerics import rng_stream
from .victim import (GcnParams, LinearGcnParams, TrainConfig, gcn_loss_and_grad, gcn_train,
                     linear_gcn_fit, linear_loss_and_grad, linear_targets)

METHODS = ("gif", "ceu", "ga", "retrain")
DEFAULT_LAMBDA_SMALL = 500.0
DEFAULT_LAMBDA_LARGE = 1000.0


@dataclass(frozen=True)
class UnlearnRequest:
    """Which edges to forget and how.

    ``scale_lambda=None`` starts at 500 (1000 for graphs of 5k+ nodes) and
    multiplies by 10 until the Neumann iteration stops diverging.
    """

    delta: EdgeSet
    method: str = "gif"
    scale_lambda: float = None
    estimation_iters: int = 100
    damping: float = 0.0
    noise_std: float = 0.01
    ga_epochs: int = 1
    ga_magnitude: float = 0.5
    ga_scope: str = "endpoints"
    seed: int = 0
    ga_reduction: str = "mean"

    def __post_init__(self):
        if not isinstance(self.delta, EdgeSet):
            object.__setattr__(self, "delta", EdgeSet(tuple(map(tuple, self.delta))))
        if len(self.delta) == 0:
            raise ArgumentError("unlearning request needs at least one edge")
        if self.method not in METHODS:
            raise ArgumentError(f"unknown unlearning method {self.method!r}; choose from {METHODS}")
        if self.scale_lambda is not None and self.scale_lambda <= 0:
            raise ArgumentError("scale_lambda must be positive")
        if self.estimation_iters < 1 or self.ga_epochs < 0:
            raise ArgumentError("estimation_iters must be >= 1 and ga_epochs >= 0")
        if self.damping < 0 or self.noise_std < 0 or self.ga_magnitude < 0:
            raise ArgumentError("damping, noise_std and ga_magnitude must be non-negative")
        if self.ga_scope not in ("endpoints", "train"):
            raise ArgumentError("ga_scope must be 'endpoints' or 'train'")
        if self.ga_reduction not in ("sum", "mean"):
            raise ArgumentError("ga_reduction must be 'sum' or 'mean'")

    def to_dict(self):
        d = asdict(self)
        d["delta"] = [list(p) for p in self.delta]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["delta"] = EdgeSet(tuple(tuple(p) for p in d["delta"]))
        return cls(**d)


@dataclass(frozen=True, eq=False)
class UnlearnedModel:
    params: object
    graph: Graph
    propagation: object
    request: UnlearnRequest = field(default=None)


def propagation_builder(kind="one_gcn", k=2, alpha=0.1):
    return partial(build_propagation, kind=kind, k=k, alpha=alpha)


# ---------------------------------------------------------------- Neumann

def neumann_inverse(hvp, v, scale_lambda, iters, damping=0.0):
    """Truncated Neumann estimate of ``H^{-1} v``.

    Iterates ``h <- v + (1 - damping) h - H h / lambda`` and returns
    ``h / lambda``.  The partial sum grows roughly linearly even when the
    series converges, so divergence is judged on the series term
    ``h_t - h_{t-1}``: once it exceeds ten times its smallest norm so far
    (which covers any tenfold growth over ten steps, and slow compounding
    growth too) :class:`NumericError` is raised.
    """
    h = v.copy()
    smallest = np.linalg.norm(h)
    for it in range(iters):
        prev = h
        h = v + (1.0 - damping) * h - hvp(h) / scale_lambda
        nrm = np.linalg.norm(h - prev)
        if not np.all(np.isfinite(h)):
            raise NumericError(f"Neumann iteration produced non-finite values at step {it + 1}; "
                               f"increase scale_lambda (now {scale_lambda:g})")
        smallest = min(smallest, nrm)
        if nrm > 10 * smallest and nrm > 1e-3 * np.linalg.norm(v):
            raise NumericError(f"Neumann iteration diverging at step {it + 1}; "
                               f"increase scale_lambda (now {scale_lambda:g})")
    return h / scale_lambda


def _fd_hvp(grad_fn, theta):
    eps0 = 1e-3 * (1.0 + np.max(np.abs(theta)))

    def hvp(v):
        nv = np.linalg.norm(v)
        if nv == 0:
            return np.zeros_like(v)
        d = v / nv
        return (grad_fn(theta + eps0 * d) - grad_fn(theta - eps0 * d)) * (nv / (2 * eps0))

    return hvp


def _lambda_schedule(request, num_nodes):
    if request.scale_lambda is not None:
        return [request.scale_lambda]
    start = DEFAULT_LAMBDA_SMALL if num_nodes < 5000 else DEFAULT_LAMBDA_LARGE
    return [start * 10 ** i for i in range(7)]


def _neumann_with_schedule(hvp, v, request, num_nodes):
    schedule = _lambda_schedule(request, num_nodes)
    for i, lam in enumerate(schedule):
        try:
            return neumann_inverse(hvp, v, lam, request.estimation_iters, request.damping)
        except NumericError:
            if i == len(schedule) - 1:
                raise


# ---------------------------------------------------------------- methods

def _gcn_grad_fn(g, C, params, nodes=None):
    def f(theta):
        return gcn_loss_and_grad(g, C, params.unflat(theta), nodes=nodes, reduction="sum")[1].flat()
    return f


def _linear_delta(params, g_orig, C, C_un):
    """Closed-form first-order weight change along ``C_un - C`` (train rows)."""
    rows = np.flatnonzero(g_orig.train_mask)
    xi = C_un.dense() - C.dense() if hasattr(C_un, "dense") else C_un - C
    return weight_influence(C, g_orig.features, linear_targets(g_orig), params.W, xi,
                            damping=params.damping, rows=rows)


def linear_neumann_delta(params, g_orig, C, C_un, scale_lambda, iters, damping):
    """Same linear update, with ``H^{-1}`` replaced by the Neumann iteration."""
    rows = np.flatnonzero(g_orig.train_mask)
    Cd = C.dense()[rows]
    xi = (C_un.dense() - C.dense())[rows]
    X = g_orig.features
    Y = linear_targets(g_orig)[rows]
    Z = Cd @ X
    W = params.W
    rhs = X.T @ (xi.T @ Y) - X.T @ (xi.T @ (Z @ W)) - Z.T @ (xi @ (X @ W))
    H = Z.T @ Z + params.damping * np.eye(Z.shape[1])
    cols = [neumann_inverse(lambda v: H @ v, rhs[:, c], scale_lambda, iters, damping)
            for c in range(rhs.shape[1])]
    return np.stack(cols, axis=1)


def _train_fresh(g, C, cfg, arch, linear_damping):
    if arch == "linear":
        return linear_gcn_fit(g, C, damping=linear_damping)
    return gcn_train(g, C, cfg)


def retrain(g_orig, c_builder, delta, cfg=TrainConfig(), arch="gcn", linear_damping=1e-6, request=None):
    """Gold standard: drop ``delta`` and train from scratch with ``cfg.seed``."""
    g_un = remove_edges(g_orig, delta)
    C_un = c_builder(g_un)
    return UnlearnedModel(_train_fresh(g_un, C_un, cfg, arch, linear_damping), g_un, C_un, request)


def unlearn_gif(params, g_orig, C, delta, c_builder, scale_lambda=None, estimation_iters=100,
                damping=0.0, request=None):
    """Influence-function update ``theta + H^{-1} (grad_orig - grad_un)``.

    For the GCN the gradients are summed cross-entropy over train nodes and
    ``H`` is applied through finite-difference Hessian-vector products.
    The linear victim uses the closed-form weight influence along the
    propagation change ``C_un - C``.
    """
    if request is None:
        request = UnlearnRequest(delta, "gif", scale_lambda, estimation_iters, damping)
    g_un = remove_edges(g_orig, request.delta)
    C_un = c_builder(g_un)
    if isinstance(params, LinearGcnParams):
        W = params.W + _linear_delta(params, g_orig, C, C_un)
        return UnlearnedModel(LinearGcnParams(W, params.damping), g_un, C_un, request)
    theta = params.flat()
    grad_orig = _gcn_grad_fn(g_orig, C, params)
    grad_un = _gcn_grad_fn(g_un, C_un, params)
    v = grad_orig(theta) - grad_un(theta)
    step = _neumann_with_schedule(_fd_hvp(grad_orig, theta), v, request, g_orig.num_nodes)
    return UnlearnedModel(params.unflat(theta + step), g_un, C_un, request)


def unlearn_ceu(params, g_orig, C, delta, c_builder, scale_lambda=None, estimation_iters=100,
                damping=0.0, noise_std=0.01, seed=0, request=None):
    """GIF update followed by seeded Gaussian noise on every parameter."""
    if request is None:
        request = UnlearnRequest(delta, "ceu", scale_lambda, estimation_iters, damping, noise_std, seed=seed)
    model = unlearn_gif(params, g_orig, C, request.delta, c_builder, request=request)
    theta = model.params.flat()
    if request.noise_std > 0:
        theta = theta + request.noise_std * rng_stream(request.seed, "ceu-noise").standard_normal(theta.size)
    return UnlearnedModel(model.params.unflat(theta), model.graph, model.propagation, request)


def _ga_nodes(g, delta, scope):
    if scope == "train":
        return np.flatnonzero(g.train_mask)
    ends = delta.endpoints()
    return ends[g.train_mask[ends]]


def unlearn_ga(params, g_orig, C, delta, c_builder, ga_epochs=1, ga_magnitude=0.5, scope="endpoints",
               request=None):
    """Gradient ascent on the loss of the removed edges' labeled endpoints.

    Ascent uses the original graph; the edges are removed afterwards.
    """
    if request is None:
        request = UnlearnRequest(delta, "ga", ga_epochs=ga_epochs, ga_magnitude=ga_magnitude, ga_scope=scope)
    nodes = _ga_nodes(g_orig, request.delta, request.ga_scope)
    theta = params.flat()
    for _ in range(request.ga_epochs):
        if nodes.size == 0 or request.ga_magnitude == 0:
            break
        p = params.unflat(theta)
        if isinstance(p, LinearGcnParams):
            _, grad = linear_loss_and_grad(g_orig, C, p, nodes=nodes)
        else:
            _, grad = gcn_loss_and_grad(g_orig, C, p, nodes=nodes, reduction="sum")
        step = grad.flat() / (nodes.size if request.ga_reduction == "mean" else 1.0)
        theta = theta + request.ga_magnitude * step
        if not np.all(np.isfinite(theta)):
            raise NumericError("gradient ascent produced non-finite parameters")
    g_un = remove_edges(g_orig, request.delta)
    return UnlearnedModel(params.unflat(theta), g_un, c_builder(g_un), request)


def unlearn(params, g_orig, C, c_builder, request: UnlearnRequest, cfg=TrainConfig(), arch=None):
    """Dispatch on ``request.method``."""
    missing = [p for p in request.delta if p not in g_orig.edge_set]
    if missing:
        raise ValidationError(f"edges not present in graph: {missing[:10]}")
    if request.method == "retrain":
        arch = arch or ("linear" if isinstance(params, LinearGcnParams) else "gcn")
        damping = params.damping if isinstance(params, LinearGcnParams) else 1e-6
        return retrain(g_orig, c_builder, request.delta, cfg, arch, damping, request)
    if request.method == "gif":
        return unlearn_gif(params, g_orig, C, request.delta, c_builder, request=request)
    if request.method == "ceu":
        return unlearn_ceu(params, g_orig, C, request.delta, c_builder, request=request)
    return unlearn_ga(params, g_orig, C, request.delta, c_builder, request=request)


def request_to_json(request: UnlearnRequest) -> str:
    return json.dumps(request.to_dict(), sort_keys=True)


def request_from_json(text) -> UnlearnRequest:
    return UnlearnRequest.from_dict(json.loads(text))
