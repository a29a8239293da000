"""Entropy, KL and the batch mutual-information estimator on the simplex.

Rows of an ``n x C`` array are treated as categorical distributions. The MI
between two prediction batches ``P`` and ``Q`` is the MI of the empirical joint
``J = P^T Q / n`` (averaged outer products), which is exact discrete MI when
the rows are one-hot.
"""

from __future__ import annotations

import math

import numpy as np

from . import numerics as nx
from .numerics import LOG_FLOOR, Tensor

SIMPLEX_TOL = 1e-9


def check_simplex(p, what: str = "distribution") -> np.ndarray:
    """Validate that every row of ``p`` lies on the probability simplex."""
    arr = p.data if isinstance(p, Tensor) else np.asarray(p, dtype=np.float64)
    if arr.ndim not in (1, 2) or arr.shape[-1] < 2:
        raise ValueError(f"{what}: need at least 2 classes along the last axis, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what}: non-finite entries")
    if np.any(arr < 0):
        raise ValueError(f"{what}: negative probability {arr.min():.3g}")
    err = np.abs(arr.sum(axis=-1) - 1.0)
    if np.any(err > SIMPLEX_TOL):
        raise ValueError(f"{what}: rows must sum to 1 (max deviation {err.max():.3g})")
    return arr


def entropy(p) -> Tensor:
    """Shannon entropy in nats; one value per row (scalar for a 1-d input)."""
    check_simplex(p, "entropy")
    p = nx.as_tensor(p)
    return -(p * nx.log(p)).sum(axis=-1)


def entropy_np(p: np.ndarray) -> np.ndarray:
    """Untraced row entropies, for pseudo-label weighting and diagnostics."""
    p = np.asarray(p, dtype=np.float64)
    return -(p * np.log(np.maximum(p, LOG_FLOOR))).sum(axis=-1)


def kl(p, q) -> Tensor:
    """KL(p || q) per row, with q floored at 1e-12 inside the log."""
    check_simplex(p, "kl(p)")
    check_simplex(q, "kl(q)")
    p, q = nx.as_tensor(p), nx.as_tensor(q)
    if p.shape[-1] != q.shape[-1]:
        raise ValueError(f"kl: dimension mismatch {p.shape} vs {q.shape}")
    return (p * (nx.log(p) - nx.log(q))).sum(axis=-1)


def js_divergence(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Jensen-Shannon divergence per row (nats), untraced."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    m = 0.5 * (p + q)

    def _kl(a, b):
        return (a * (np.log(np.maximum(a, LOG_FLOOR)) - np.log(np.maximum(b, LOG_FLOOR)))).sum(axis=-1)

    return np.maximum(0.5 * _kl(p, m) + 0.5 * _kl(q, m), 0.0)


def _as_batch(x, what: str) -> Tensor:
    t = nx.as_tensor(x)
    if t.ndim == 1:
        t = nx.reshape(t, (1, t.shape[0]))
    if t.ndim != 2:
        raise ValueError(f"{what}: expected an n x C batch, got shape {t.shape}")
    return t


def mutual_information(P, Q) -> Tensor:
    """Batch MI between paired prediction rows; differentiable in both."""
    P = _as_batch(P, "mutual_information(P)")
    Q = _as_batch(Q, "mutual_information(Q)")
    if P.shape[0] == 0:
        raise ValueError("mutual_information: empty batch")
    if P.shape[0] != Q.shape[0]:
        raise ValueError(f"mutual_information: row counts differ ({P.shape[0]} vs {Q.shape[0]})")
    n = P.shape[0]
    joint = nx.scale(P.T @ Q, 1.0 / n)
    row = joint.sum(axis=1)
    col = joint.sum(axis=0)
    log_row = nx.reshape(nx.log(row), (row.shape[0], 1))
    log_col = nx.reshape(nx.log(col), (1, col.shape[0]))
    return (joint * (nx.log(joint) - log_row - log_col)).sum()


def mi_oracle(P, Q) -> float:
    """Reference MI with plain nested loops over Python floats."""
    P = [list(map(float, r)) for r in np.atleast_2d(np.asarray(P, dtype=np.float64))]
    Q = [list(map(float, r)) for r in np.atleast_2d(np.asarray(Q, dtype=np.float64))]
    n = len(P)
    if n == 0:
        raise ValueError("mi_oracle: empty batch")
    if len(Q) != n:
        raise ValueError("mi_oracle: row counts differ")
    ca, cb = len(P[0]), len(Q[0])
    J = [[0.0] * cb for _ in range(ca)]
    for i in range(n):
        for a in range(ca):
            for b in range(cb):
                J[a][b] += P[i][a] * Q[i][b] / n
    ra = [sum(J[a][b] for b in range(cb)) for a in range(ca)]
    cbm = [sum(J[a][b] for a in range(ca)) for b in range(cb)]
    total = 0.0
    for a in range(ca):
        for b in range(cb):
            total += J[a][b] * (math.log(max(J[a][b], LOG_FLOOR))
                                - math.log(max(ra[a], LOG_FLOOR))
                                - math.log(max(cbm[b], LOG_FLOOR)))
    return total
