"""Linear algebra, probability helpers and the seeded RNG contract."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import ArgumentError, NumericError

DEFAULT_CG_TOL = 1e-10


@dataclass(frozen=True)
class CGResult:
    x: np.ndarray
    converged: bool
    iterations: int
    residual_norm: float


def _as_operator(H):
    if callable(H) and not isinstance(H, np.ndarray) and not sp.issparse(H):
        return H, None
    if sp.issparse(H):
        H = H.tocsr()
        asym = abs(H - H.T).max() if H.nnz else 0.0
    else:
        H = np.asarray(H, dtype=float)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise ArgumentError(f"H must be square, got shape {H.shape}")
        if not np.all(np.isfinite(H)):
            raise NumericError("H contains non-finite entries")
        asym = np.max(np.abs(H - H.T)) if H.size else 0.0
    if asym > 1e-8:
        raise ArgumentError(f"H is not symmetric (max asymmetry {asym:.3e})")
    return (lambda v: H @ v), H.shape[0]


def solve_spd(H, b, damping=0.0, tol=DEFAULT_CG_TOL, max_iter=None) -> CGResult:
    """Conjugate-gradient solve of ``(H + damping*I) x = b``.

    ``H`` may be a dense array, a scipy sparse matrix, or a callable that
    returns ``H @ v`` (no symmetry check is possible in that case).
    Stops when ``||r|| <= tol*||b||``; otherwise returns the iterate with
    the smallest residual seen and ``converged=False``.
    """
    if damping < 0:
        raise ArgumentError("damping must be non-negative")
    b = np.asarray(b, dtype=float)
    if b.ndim != 1:
        raise ArgumentError("b must be a vector")
    if not np.all(np.isfinite(b)):
        raise NumericError("right-hand side contains NaN or inf")
    matvec, n = _as_operator(H)
    if n is not None and n != b.shape[0]:
        raise ArgumentError(f"dimension mismatch: H is {n}x{n}, b has {b.shape[0]}")
    dim = b.shape[0]
    if max_iter is None:
        max_iter = 10 * max(dim, 1)

    def apply(v):
        out = np.asarray(matvec(v), dtype=float)
        return out + damping * v if damping else out

    bnorm = np.linalg.norm(b)
    x = np.zeros(dim)
    if bnorm == 0.0:
        return CGResult(x, True, 0, 0.0)
    target = tol * bnorm
    r = b.copy()
    d = r.copy()
    rr = r @ r
    best_x, best_res = x.copy(), np.sqrt(rr)
    for it in range(1, max_iter + 1):
        Ad = apply(d)
        dAd = d @ Ad
        if not np.isfinite(dAd):
            raise NumericError(f"NaN encountered in conjugate gradient at iteration {it}")
        if dAd <= 0:
            # not positive definite along d; the best iterate is all we have
            break
        step = rr / dAd
        x = x + step * d
        r = r - step * Ad
        rr_new = r @ r
        res = np.sqrt(rr_new)
        if res < best_res:
            best_x, best_res = x.copy(), res
        if res <= target:
            # recompute the true residual to guard against drift
            true_res = np.linalg.norm(b - apply(x))
            if true_res <= target:
                return CGResult(x, True, it, float(true_res))
            r = b - apply(x)
            rr_new = r @ r
            d = r.copy()
            rr = rr_new
            continue
        d = r + (rr_new / rr) * d
        rr = rr_new
    return CGResult(best_x, False, max_iter, float(best_res))


def cholesky_solve(H, b, damping=0.0):
    """Dense direct solve of ``(H + damping*I) x = b``; used as a test oracle."""
    H = np.asarray(H.toarray() if sp.issparse(H) else H, dtype=float)
    A = H + damping * np.eye(H.shape[0])
    try:
        factor = scipy.linalg.cho_factor(A)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"matrix is not positive definite: {exc}") from exc
    return scipy.linalg.cho_solve(factor, b)


def least_squares_weights(Z, y, damping=0.0, tol=DEFAULT_CG_TOL):
    """Minimiser of ``0.5*||y - Z w||^2 + 0.5*damping*||w||^2``.

    Solves the normal equations with :func:`solve_spd`.  ``y`` may be a
    vector or a matrix with one target per column; ``w`` has the same
    number of columns.
    """
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=float)
    if Z.ndim != 2:
        raise ArgumentError("Z must be a matrix")
    if y.shape[0] != Z.shape[0]:
        raise ArgumentError(f"Z has {Z.shape[0]} rows but y has {y.shape[0]}")
    if damping == 0 and np.linalg.matrix_rank(Z) < Z.shape[1]:
        raise NumericError("design matrix is rank deficient; pass a positive damping")
    G = Z.T @ Z
    rhs = Z.T @ y
    if rhs.ndim == 1:
        return _checked_solve(G, rhs, damping, tol)
    cols = [_checked_solve(G, rhs[:, c], damping, tol) for c in range(rhs.shape[1])]
    return np.stack(cols, axis=1) if cols else np.zeros((Z.shape[1], 0))


def _checked_solve(G, rhs, damping, tol):
    res = solve_spd(G, rhs, damping=damping, tol=tol)
    if not res.converged:
        # ill-conditioned normal equations: fall back to a direct factorisation
        return cholesky_solve(G, rhs, damping)
    return res.x


def softmax(logits):
    """Max-shifted softmax along the last axis."""
    z = np.asarray(logits, dtype=float)
    if np.isnan(z).any():
        raise NumericError("softmax received NaN logits")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def xlogy2(p, q):
    """Elementwise ``p * log2(q)`` with the ``0 * log 0 = 0`` convention."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    out = np.zeros(np.broadcast(p, q).shape)
    nz = p > 0
    out[nz] = p[nz] * np.log2(np.broadcast_to(q, out.shape)[nz])
    return out


def kl2(p, q):
    """Base-2 Kullback-Leibler divergence along the last axis."""
    return np.sum(xlogy2(p, p) - xlogy2(p, q), axis=-1)


def js_similarity(p, q):
    """``1 - JS(p, q)`` with base-2 logs, so the value lies in [0, 1].

    Works on single distributions or on stacked rows.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ArgumentError(f"dimension mismatch: {p.shape} vs {q.shape}")
    m = 0.5 * (p + q)
    sim = 1.0 - 0.5 * (kl2(p, m) + kl2(q, m))
    sim = np.clip(sim, 0.0, 1.0)
    return float(sim) if np.ndim(sim) == 0 else sim


def entropy(p):
    """Shannon entropy in nats along the last axis."""
    p = np.asarray(p, dtype=float)
    out = np.zeros(p.shape)
    nz = p > 0
    out[nz] = p[nz] * np.log(p[nz])
    return -out.sum(axis=-1)


def rng_stream(seed, label="") -> np.random.Generator:
    """Independent generator derived from a root seed and a stream label.

    The label is hashed into the spawn key, so ``rng_stream(1, "negatives")``
    always yields the same stream regardless of what else was drawn.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    digest = hashlib.sha256(label.encode()).digest()
    key = tuple(int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4))
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))
