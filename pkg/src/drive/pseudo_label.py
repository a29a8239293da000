"""Entropy-weighted pseudo-labels and the per-sample consistency cache.

Pseudo-labels are plain numpy arrays: they are training targets and never
carry gradients back into either model.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .distributions import check_simplex, entropy_np, js_divergence

log = logging.getLogger(__name__)


@dataclass
class PseudoLabel:
    dist: np.ndarray  # n x C
    weight_target: np.ndarray  # n
    weight_prior: np.ndarray  # n
    stage: int = 1


def entropy_weights(s_v, s_t, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Mixing weights for (target, prior) given prior entropy, target entropy and bias.

    Each model's weight grows with the *other* model's entropy; ``lam`` moves
    weight toward the prior. The two weights share a denominator and sum to 1.
    """
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    s_v = np.atleast_1d(np.asarray(s_v, dtype=np.float64))
    s_t = np.atleast_1d(np.asarray(s_t, dtype=np.float64))
    denom = s_v + s_t + lam
    degenerate = denom <= 0.0
    if np.any(degenerate):
        log.warning("entropy weights: %d sample(s) with zero entropies and lambda=0; using 0.5/0.5",
                    int(degenerate.sum()))
    w_t = np.where(degenerate, 0.5, s_v / np.where(degenerate, 1.0, denom))
    return w_t, 1.0 - w_t


def combine(p_t, p_v, lam: float, stage: int = 1, fixed: bool = False) -> PseudoLabel:
    """Mix target and prior predictions row-wise.

    ``fixed=True`` ignores the entropies and mixes 0.5/0.5 (ablation switch).
    """
    p_t = check_simplex(np.asarray(p_t, dtype=np.float64), "combine(p_t)")
    p_v = check_simplex(np.asarray(p_v, dtype=np.float64), "combine(p_v)")
    if p_t.shape != p_v.shape:
        raise ValueError(f"combine: shape mismatch {p_t.shape} vs {p_v.shape}")
    squeeze = p_t.ndim == 1
    p_t, p_v = np.atleast_2d(p_t), np.atleast_2d(p_v)
    if fixed:
        w_t = np.full(len(p_t), 0.5)
        w_v = 1.0 - w_t
    else:
        w_t, w_v = entropy_weights(entropy_np(p_v), entropy_np(p_t), lam)
    dist = w_t[:, None] * p_t + w_v[:, None] * p_v
    if squeeze:
        return PseudoLabel(dist[0], w_t, w_v, stage)
    return PseudoLabel(dist, w_t, w_v, stage)


def stage2_pseudo(p_t, p_v_star, lam: float, fixed: bool = False) -> PseudoLabel:
    """Stage-2 pseudo-label: same mixing, with the prior run under the tuned context."""
    return combine(p_t, p_v_star, lam, stage=2, fixed=fixed)


class ConsistencyCache:
    """Per-sample Stage-1 inconsistency scores for one epoch."""

    def __init__(self, n: int, epoch: int = 0):
        self.scores = np.zeros(n)
        self._seen = np.zeros(n, dtype=bool)
        self.epoch = epoch

    def __len__(self) -> int:
        return len(self.scores)

    def record(self, index, p_t_clean, p_v_clean, p_v_perturbed, beta: float) -> np.ndarray:
        """Store ``JS(p_t, p_v) + beta * JS(p_v, p_v_perturbed)`` for each index."""
        index = np.atleast_1d(np.asarray(index))
        score = consistency_score(p_t_clean, p_v_clean, p_v_perturbed, beta)
        if np.any(self._seen[index]):
            raise ValueError(f"consistency cache: index recorded twice in epoch {self.epoch}")
        self.scores[index] = score
        self._seen[index] = True
        return score

    @property
    def complete(self) -> bool:
        return bool(self._seen.all())

    @property
    def coverage(self) -> np.ndarray:
        return self._seen.copy()


def consistency_score(p_t_clean, p_v_clean, p_v_perturbed, beta: float) -> np.ndarray:
    p_t = np.atleast_2d(p_t_clean)
    p_v = np.atleast_2d(p_v_clean)
    p_p = np.atleast_2d(p_v_perturbed)
    return js_divergence(p_t, p_v) + beta * js_divergence(p_v, p_p)


def record_consistency(cache: ConsistencyCache, index, p_t_clean, p_v_clean,
                       p_v_perturbed, beta: float) -> np.ndarray:
    return cache.record(index, p_t_clean, p_v_clean, p_v_perturbed, beta)
