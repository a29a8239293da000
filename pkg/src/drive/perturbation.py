"""L2-bounded PGD perturbations, data-directed initialisation and the dynamic
initialisation-magnitude schedule."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .numerics import Tape, Tensor

log = logging.getLogger(__name__)

NORM_SLACK = 1e-9


@dataclass
class PgdConfig:
    steps: int = 5
    radius: float = 1.0
    step_sizes: list[float] | None = None  # default: constant 2R/P
    eta0: float = 1.0
    eta_clip: tuple[float, float] = (0.1, 10.0)

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"pgd.steps must be >= 1, got {self.steps}")
        if self.radius <= 0:
            raise ValueError(f"pgd.radius must be positive, got {self.radius}")
        if self.eta0 <= 0:
            raise ValueError(f"pgd.eta0 must be positive, got {self.eta0}")
        lo, hi = self.eta_clip
        if not 0 < lo <= hi:
            raise ValueError(f"pgd.eta_clip must satisfy 0 < lo <= hi, got {self.eta_clip}")
        if self.step_sizes is not None:
            if len(self.step_sizes) != self.steps:
                raise ValueError("pgd.step_sizes must have one entry per step")
            if any(g < 0 for g in self.step_sizes):
                raise ValueError("pgd.step_sizes must be non-negative")

    def gammas(self) -> list[float]:
        if self.step_sizes is not None:
            return list(self.step_sizes)
        return [2.0 * self.radius / self.steps] * self.steps


@dataclass
class Perturbation:
    delta: np.ndarray
    radius: float
    stage: int
    iterations: int = 0
    trajectory: list[float] = field(default_factory=list)
    clipped: list[bool] = field(default_factory=list)


def project(delta, radius: float) -> np.ndarray:
    """Radial projection onto the L2 ball; 2-d inputs are projected row by row."""
    d = np.asarray(delta, dtype=np.float64)
    if radius <= 0:
        raise ValueError(f"project: radius must be positive, got {radius}")
    if d.ndim <= 1:
        norm = float(np.sqrt(np.sum(d * d)))
        return d if norm <= radius else d * (radius / norm)
    norms = np.sqrt(np.sum(d * d, axis=-1, keepdims=True))
    over = norms > radius
    if not over.any():
        return d
    return np.where(over, d * (radius / np.where(over, norms, 1.0)), d)


def init_delta(batch, anchor: int, eta: float, radius: float,
               rng: np.random.Generator) -> np.ndarray:
    """Start point for one sample: ``eta * (x_j - x_i)`` toward another batch sample."""
    X = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if eta < 0:
        raise ValueError(f"init_delta: eta must be non-negative, got {eta}")
    n = len(X)
    if n < 2:
        log.warning("init_delta: single-sample batch, using a random Gaussian direction")
        g = rng.normal(size=X.shape[1])
        return project(g * (eta * radius / max(np.linalg.norm(g), 1e-300)), radius)
    j = int(rng.integers(n - 1))
    j = j + 1 if j >= anchor else j
    return project(eta * (X[j] - X[anchor]), radius)


def partner_indices(n: int, rng: np.random.Generator) -> np.ndarray:
    """One partner per sample, never itself, all partners distinct.

    Neighbours along a random cyclic ordering of the batch.
    """
    order = rng.permutation(n)
    partner = np.empty(n, dtype=np.int64)
    partner[order] = np.roll(order, -1)
    return partner


def init_batch_delta(batch, etas, radius: float, rng: np.random.Generator) -> np.ndarray:
    X = np.asarray(batch, dtype=np.float64)
    etas = np.broadcast_to(np.asarray(etas, dtype=np.float64), (len(X),))
    if len(X) < 2:
        return np.stack([init_delta(X, 0, float(etas[0]), radius, rng)])
    partner = partner_indices(len(X), rng)
    return project(etas[:, None] * (X[partner] - X), radius)


def pgd_attack(objective: Callable[[Tensor], Tensor], init, cfg: PgdConfig,
               stage: int = 1) -> Perturbation:
    """Projected gradient *ascent* on ``objective`` starting from ``init``."""
    delta = project(np.array(init, dtype=np.float64), cfg.radius)
    traj, clipped = [], []
    for p, gamma in enumerate(cfg.gammas()):
        d = Tensor(delta, requires_grad=True)
        with Tape() as tape:
            val = objective(d)
        traj.append(val.item())
        if gamma == 0.0:
            clipped.append(False)
            continue
        grad = tape.backward(val)[d] if val.requires_grad else np.zeros_like(delta)
        if not np.all(np.isfinite(grad)):
            raise FloatingPointError(f"pgd_attack: non-finite gradient at step {p}")
        stepped = delta + gamma * grad
        delta = project(stepped, cfg.radius)
        clipped.append(delta is not stepped)
        _assert_in_ball(delta, cfg.radius, p)
    traj.append(objective(Tensor(delta)).item())
    return Perturbation(delta, cfg.radius, stage, cfg.steps, traj, clipped)


def _assert_in_ball(delta: np.ndarray, radius: float, step: int) -> None:
    norms = np.sqrt(np.sum(np.atleast_2d(delta) ** 2, axis=-1))
    if np.any(norms > radius + NORM_SLACK):
        raise AssertionError(f"pgd_attack: step {step} left the ball ({norms.max():.6g} > {radius})")


@dataclass
class EtaSchedule:
    eta: np.ndarray
    lo: float
    hi: float

    def summary(self) -> dict[str, float]:
        if len(self.eta) == 0:
            return {"min": 0.0, "mean": 0.0, "max": 0.0}
        return {"min": float(self.eta.min()), "mean": float(self.eta.mean()),
                "max": float(self.eta.max())}


def dynamic_eta(scores, eta0: float, clip: tuple[float, float] = (0.1, 10.0)) -> EtaSchedule:
    """Per-sample start magnitudes proportional to Stage-1 inconsistency.

    ``eta_i = clamp(eta0 * s_i / mean(s), lo * eta0, hi * eta0)``; if every score
    is zero, all samples get ``eta0``.
    """
    s = np.asarray(getattr(scores, "scores", scores), dtype=np.float64)
    lo, hi = clip[0] * eta0, clip[1] * eta0
    mean = float(s.mean()) if len(s) else 0.0
    if not mean > 0.0:
        return EtaSchedule(np.full(len(s), float(eta0)), lo, hi)
    # equal scores are exactly the mean; skip the division so rounding can't leak in
    if s.min() == s.max():
        return EtaSchedule(np.full(len(s), float(np.clip(eta0, lo, hi))), lo, hi)
    return EtaSchedule(np.clip(eta0 * (s / mean), lo, hi), lo, hi)


def default_radius(X, rng: np.random.Generator, subsample: int = 256) -> float:
    """Half the median pairwise distance of a target subsample."""
    X = np.asarray(X, dtype=np.float64)
    idx = rng.choice(len(X), size=min(subsample, len(X)), replace=False)
    S = X[idx]
    sq = np.sum(S * S, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * S @ S.T, 0.0)
    iu = np.triu_indices(len(S), k=1)
    if len(iu[0]) == 0:
        return 1.0
    return 0.5 * float(np.median(np.sqrt(d2[iu])))
