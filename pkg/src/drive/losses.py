"""Training objectives for both stages and their weighted totals.

All MI-based losses are negated batch MI, so they lie in ``[-log C, 0]``.
Targets passed as numpy arrays (pseudo-labels, frozen-prior predictions)
are constants on the tape.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .distributions import kl, mutual_information
from .numerics import Tensor

STAGE1_COMPONENTS = ("tsv", "mic1")
STAGE2_COMPONENTS = ("mce", "pc", "mic2")


def _const(x) -> Tensor:
    """Gradient-blocked view of a target."""
    if isinstance(x, Tensor):
        return Tensor(x.data)
    return Tensor(np.asarray(x, dtype=np.float64))


def _rows(x) -> int:
    return (x.data if isinstance(x, Tensor) else np.asarray(x)).shape[0]


def _check_pair(a, b, what: str) -> None:
    if _rows(a) == 0:
        raise ValueError(f"{what}: empty batch")
    if _rows(a) != _rows(b):
        raise ValueError(f"{what}: batch sizes differ ({_rows(a)} vs {_rows(b)})")


def loss_tsv(prior_probs: Tensor, pseudo) -> Tensor:
    """Negative MI between prior predictions and (constant) pseudo-labels."""
    _check_pair(prior_probs, pseudo, "loss_tsv")
    return -mutual_information(prior_probs, _const(pseudo))


def adversarial_objective(probs: Tensor, pseudo) -> Tensor:
    """PGD ascent target: negative MI between perturbed predictions and pseudo-labels."""
    _check_pair(probs, pseudo, "adversarial_objective")
    return -mutual_information(probs, _const(pseudo))


def loss_mic_stage1(clean: Tensor, perturbed: Tensor) -> Tensor:
    """Negative MI between the prior's clean and perturbed predictions."""
    _check_pair(clean, perturbed, "loss_mic_stage1")
    return -mutual_information(clean, perturbed)


def loss_mic_stage2(clean: Tensor, perturbed: Tensor) -> Tensor:
    """Negative MI between the target model's clean and perturbed predictions."""
    _check_pair(clean, perturbed, "loss_mic_stage2")
    return -mutual_information(clean, perturbed)


def balance_term(target_probs: Tensor) -> Tensor:
    """KL from the batch-mean prediction to the uniform distribution."""
    C = target_probs.shape[1]
    return kl(target_probs.mean(axis=0), np.full(C, 1.0 / C))


def loss_pc(target_probs: Tensor, prior_probs, alpha_balance: float) -> tuple[Tensor, Tensor]:
    """Predictive consistency with the tuned prior plus the class-balance term.

    Returns ``(loss, balance)`` where ``loss = -MI + alpha_balance * balance``.
    """
    _check_pair(target_probs, prior_probs, "loss_pc")
    bal = balance_term(target_probs)
    loss = -mutual_information(target_probs, _const(prior_probs))
    if alpha_balance:
        loss = loss + nx.scale(bal, alpha_balance)
    return loss, bal


def top_n_indices(pseudo: np.ndarray, n_top: int) -> np.ndarray:
    """Indices of the ``n_top`` largest entries per row; ties go to the lower index."""
    pseudo = np.asarray(pseudo, dtype=np.float64)
    # stable sort on the negated values keeps lower indices first among ties
    return np.argsort(-pseudo, axis=1, kind="stable")[:, :n_top]


def loss_mce(probs: Tensor, pseudo, n_top: int, tau: float) -> Tensor:
    """Category attention calibration on softmax probabilities.

    Per sample: ``-a/tau + log sum_{j not in M} exp(b * l_j / tau)`` where M is
    the top-``n_top`` set of the pseudo-label, ``a`` the product and ``b`` the
    sum of the probabilities on M. Returns the batch mean.
    """
    probs = nx.as_tensor(probs)
    pseudo = pseudo.data if isinstance(pseudo, Tensor) else np.asarray(pseudo, dtype=np.float64)
    _check_pair(probs, pseudo, "loss_mce")
    C = probs.shape[1]
    if not 1 <= n_top < C:
        raise ValueError(f"loss_mce: need 1 <= N < C, got N={n_top}, C={C}")
    if tau <= 0:
        raise ValueError(f"loss_mce: tau must be positive, got {tau}")
    top = top_n_indices(pseudo, n_top)
    picked = nx.take_rows(probs, top)
    a = nx.prod_rows(picked)
    b = picked.sum(axis=1)
    rest = np.ones_like(probs.data)
    np.put_along_axis(rest, top, 0.0, axis=1)
    z = nx.scale(nx.reshape(b, (b.shape[0], 1)) * probs, 1.0 / tau)
    log_den = nx.log((nx.exp(z) * rest).sum(axis=1))
    return (log_den - nx.scale(a, 1.0 / tau)).mean()


@dataclass
class LossBreakdown:
    stage: int
    components: dict[str, float]
    total: float
    weights: dict[str, float] = field(default_factory=dict)

    def as_dict(self) -> dict[str, float]:
        return {**self.components, "total": self.total}


def weighted_total(components: dict, stage: int, beta: float = 1.0,
                   xi1: float = 1.0, xi2: float = 0.5):
    """Stage total from named components (floats or tensors)."""
    required = STAGE1_COMPONENTS if stage == 1 else STAGE2_COMPONENTS
    if stage not in (1, 2):
        raise ValueError(f"unknown stage {stage}")
    for name in required:
        if name not in components:
            raise KeyError(f"stage {stage} total: missing component {name!r}")
    if stage == 1:
        return components["tsv"] + beta * components["mic1"]
    return components["mce"] + xi1 * components["pc"] + xi2 * components["mic2"]


def stage_totals(components: dict, stage: int, beta: float = 1.0, xi1: float = 1.0,
                 xi2: float = 0.5) -> LossBreakdown:
    vals = {k: float(v.item() if isinstance(v, Tensor) else v) for k, v in components.items()}
    total = float(weighted_total(vals, stage, beta, xi1, xi2))
    weights = {"beta": beta} if stage == 1 else {"xi1": xi1, "xi2": xi2}
    return LossBreakdown(stage, vals, total, weights)
