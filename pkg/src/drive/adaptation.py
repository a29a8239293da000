"""Two-stage source-free adaptation loop.

Each epoch runs Stage 1 (tune the prior's prompt context ``v`` against
entropy-weighted pseudo-labels, with the target model frozen) and then
Stage 2 (adapt the target model against the tuned prior, with ``v`` frozen).
Stage-1 per-sample inconsistency sets the Stage-2 PGD start magnitudes.
"""

from __future__ import annotations

import copy
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import losses as L
from .data import LabeledSet
from .models import DenseNet, PriorModel, accuracy, params_digest
from .numerics import Tape, Tensor
from .perturbation import (EtaSchedule, PgdConfig, dynamic_eta, init_batch_delta,
                           pgd_attack)
from .pseudo_label import ConsistencyCache, combine, stage2_pseudo

log = logging.getLogger(__name__)


@dataclass
class AdaptationConfig:
    lam: float = 0.1
    beta: float = 1.0
    xi1: float = 1.0
    xi2: float = 0.5
    alpha_balance: float = 1.0
    tau: float = 0.07
    n_top: int = 1
    pgd: PgdConfig = field(default_factory=PgdConfig)
    epochs: int = 10
    batch_size: int = 64
    lr_v: float = 0.01
    lr_t: float = 0.01
    seed: int = 0
    # ablation switches
    entropy_weighting: bool = True
    perturb: bool = True
    dynamic_eta: bool = True

    def validate(self, n_classes: int | None = None) -> None:
        for name in ("lam", "beta", "xi1", "xi2", "alpha_balance", "lr_v", "lr_t"):
            if getattr(self, name) < 0:
                raise ValueError(f"adapt.{name} must be >= 0, got {getattr(self, name)}")
        if self.tau <= 0:
            raise ValueError(f"adapt.tau must be positive, got {self.tau}")
        if self.epochs < 0:
            raise ValueError("adapt.epochs must be >= 0")
        if self.batch_size < 2:
            raise ValueError("adapt.batch_size must be >= 2")
        if self.n_top < 1 or (n_classes is not None and self.n_top >= n_classes):
            raise ValueError(f"adapt.n_top must be in [1, C-1], got {self.n_top}")

    @property
    def effective_beta(self) -> float:
        return self.beta if self.perturb else 0.0

    @property
    def effective_xi2(self) -> float:
        return self.xi2 if self.perturb else 0.0


VARIANTS = {
    "all-off": dict(entropy_weighting=False, perturb=False, dynamic_eta=False),
    "entropy": dict(entropy_weighting=True, perturb=False, dynamic_eta=False),
    "entropy+perturb": dict(entropy_weighting=True, perturb=True, dynamic_eta=False),
    "all-on": dict(entropy_weighting=True, perturb=True, dynamic_eta=True),
}


def apply_variant(cfg: AdaptationConfig, variant: str) -> AdaptationConfig:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
    return replace(cfg, **VARIANTS[variant])


@dataclass
class AdaptState:
    target: DenseNet
    prior: PriorModel
    cfg: AdaptationConfig
    rng: np.random.Generator

    @property
    def v(self):
        return self.prior.prompt


@dataclass
class EpochRecord:
    epoch: int
    stage1: L.LossBreakdown
    stage2: L.LossBreakdown
    acc_after_stage1: float
    acc_after_stage2: float
    eta: dict[str, float]
    ms_stage1: float = 0.0
    ms_stage2: float = 0.0


@dataclass
class AdaptationReport:
    source_accuracy: float
    epochs: list[EpochRecord]
    target: DenseNet
    prompt: np.ndarray
    hashes: list[dict[str, str]] = field(default_factory=list)

    @property
    def final_accuracy(self) -> float:
        return self.epochs[-1].acc_after_stage2 if self.epochs else self.source_accuracy

    @property
    def accuracies(self) -> list[float]:
        return [e.acc_after_stage2 for e in self.epochs]


def _mean_breakdown(parts: list[dict[str, float]], stage: int, cfg: AdaptationConfig,
                    names) -> L.LossBreakdown:
    if parts:
        comps = {k: float(np.mean([p[k] for p in parts])) for k in parts[0]}
    else:
        comps = {k: 0.0 for k in names}
    return L.stage_totals(comps, stage, cfg.effective_beta, cfg.xi1, cfg.effective_xi2)


def stage1_epoch(state: AdaptState, X: np.ndarray, batches: list[np.ndarray],
                 epoch: int = 0) -> tuple[ConsistencyCache, L.LossBreakdown]:
    """Tune ``v`` for one pass over the target batches; the target model is read-only."""
    cfg, prior, v = state.cfg, state.prior, state.prior.prompt
    beta = cfg.effective_beta
    cache = ConsistencyCache(len(X), epoch)
    parts = []
    for idx in batches:
        xb = X[idx]
        p_t = state.target.predict(xb)[1].data
        p_v_now = prior.predict(xb).data
        pseudo = combine(p_t, p_v_now, cfg.lam, stage=1, fixed=not cfg.entropy_weighting).dist

        if cfg.perturb:
            v_const = Tensor(v.data)
            init = init_batch_delta(xb, 1.0, cfg.pgd.radius, state.rng)
            adv = pgd_attack(
                lambda d: L.adversarial_objective(prior.predict(xb + d, v_const), pseudo),
                init, cfg.pgd, stage=1)
            delta = adv.delta
        else:
            delta = None

        with Tape() as tape:
            p_v = prior.predict(xb)
            tsv = L.loss_tsv(p_v, pseudo)
            comps = {"tsv": tsv}
            if delta is not None:
                p_v_pert = prior.predict(xb + delta)
                comps["mic1"] = L.loss_mic_stage1(p_v, p_v_pert)
            else:
                p_v_pert = p_v
                comps["mic1"] = Tensor(0.0)
            total = L.weighted_total(comps, 1, beta=beta)
        if not np.isfinite(total.item()):
            raise FloatingPointError(f"stage 1, epoch {epoch}: non-finite loss")
        if total.requires_grad:
            v.step(tape.backward(total)[v], cfg.lr_v)
        cache.record(idx, p_t, p_v.data, p_v_pert.data, beta)
        parts.append({k: c.item() for k, c in comps.items()})
    return cache, _mean_breakdown(parts, 1, cfg, L.STAGE1_COMPONENTS)


def stage2_epoch(state: AdaptState, X: np.ndarray, batches: list[np.ndarray],
                 schedule: EtaSchedule, epoch: int = 0) -> L.LossBreakdown:
    """Adapt the target model for one pass; the prompt context is read-only."""
    cfg, net, prior = state.cfg, state.target, state.prior
    v_star = Tensor(prior.prompt.data)
    xi2 = cfg.effective_xi2
    parts = []
    for idx in batches:
        xb = X[idx]
        p_v_star = prior.predict(xb, v_star).data
        p_t_now = net.predict(xb)[1].data
        pseudo = stage2_pseudo(p_t_now, p_v_star, cfg.lam, fixed=not cfg.entropy_weighting).dist

        delta = None
        if cfg.perturb:
            frozen = net.copy()
            for p in frozen.params:
                p.requires_grad = False
            init = init_batch_delta(xb, schedule.eta[idx], cfg.pgd.radius, state.rng)
            adv = pgd_attack(
                lambda d: L.adversarial_objective(frozen.predict(xb + d)[1], pseudo),
                init, cfg.pgd, stage=2)
            delta = adv.delta

        with Tape() as tape:
            _, probs = net.predict(xb)
            mce = L.loss_mce(probs, pseudo, cfg.n_top, cfg.tau)
            pc, bal = L.loss_pc(probs, p_v_star, cfg.alpha_balance)
            if delta is not None:
                mic2 = L.loss_mic_stage2(probs, net.predict(xb + delta)[1])
            else:
                mic2 = Tensor(0.0)
            comps = {"mce": mce, "pc": pc, "mic2": mic2}
            total = L.weighted_total(comps, 2, xi1=cfg.xi1, xi2=xi2)
        if not np.isfinite(total.item()):
            raise FloatingPointError(f"stage 2, epoch {epoch}: non-finite loss")
        grads = tape.backward(total)
        for p in net.params:
            p.step(grads[p], cfg.lr_t)
        part = {k: c.item() for k, c in comps.items()}
        part["balance"] = bal.item()
        parts.append(part)
    return _mean_breakdown(parts, 2, cfg, L.STAGE2_COMPONENTS)


def make_batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Seeded shuffle split into batches; a trailing singleton joins the previous batch."""
    order = rng.permutation(n)
    batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) < 2:
        tail = batches.pop()
        batches[-1] = np.concatenate([batches[-1], tail])
    return batches


class FreezeViolation(RuntimeError):
    pass


def _check(before: str, after: str, what: str, epoch: int) -> None:
    if before != after:
        raise FreezeViolation(f"epoch {epoch}: {what} changed")


def run(source: DenseNet, prior: PriorModel, target: LabeledSet,
        cfg: AdaptationConfig) -> AdaptationReport:
    """Adapt a copy of ``source`` to the unlabelled ``target`` set.

    Neither ``source`` nor ``prior`` is modified; target labels are read only
    to report accuracy.
    """
    cfg.validate(source.widths[-1])
    if prior.n_classes != source.widths[-1]:
        raise ValueError("prior and source model disagree on the number of classes")
    X = target.features
    y = target.eval_labels()
    state = AdaptState(source.copy(), copy.deepcopy(prior), cfg, np.random.default_rng(cfg.seed))
    state.prior.freeze()
    src_acc = accuracy(state.target.predict(X)[1], y)
    prior_hash = params_digest(state.prior.frozen_params)
    records, hashes = [], []
    for epoch in range(cfg.epochs):
        batches = make_batches(len(X), cfg.batch_size, state.rng)
        h_t = params_digest(state.target.params)
        t0 = time.perf_counter()
        cache, b1 = stage1_epoch(state, X, batches, epoch)
        ms1 = 1000.0 * (time.perf_counter() - t0)
        _check(h_t, params_digest(state.target.params), "target model during stage 1", epoch)
        acc1 = accuracy(state.target.predict(X)[1], y)

        if cfg.perturb and cfg.dynamic_eta:
            schedule = dynamic_eta(cache, cfg.pgd.eta0, cfg.pgd.eta_clip)
        else:
            schedule = EtaSchedule(np.full(len(X), cfg.pgd.eta0),
                                   cfg.pgd.eta_clip[0] * cfg.pgd.eta0,
                                   cfg.pgd.eta_clip[1] * cfg.pgd.eta0)
        h_v = params_digest([state.prior.prompt])
        t0 = time.perf_counter()
        b2 = stage2_epoch(state, X, batches, schedule, epoch)
        ms2 = 1000.0 * (time.perf_counter() - t0)
        _check(h_v, params_digest([state.prior.prompt]), "prompt context during stage 2", epoch)
        _check(prior_hash, params_digest(state.prior.frozen_params), "frozen prior", epoch)
        acc2 = accuracy(state.target.predict(X)[1], y)
        hashes.append({"target_before_stage1": h_t, "prompt_before_stage2": h_v,
                       "prior": prior_hash})
        records.append(EpochRecord(epoch, b1, b2, acc1, acc2, schedule.summary(), ms1, ms2))
        log.info("epoch %d: stage1 %.4f stage2 %.4f acc %.4f", epoch, b1.total, b2.total, acc2)
    return AdaptationReport(src_acc, records, state.target, state.prior.prompt.data.copy(), hashes)
