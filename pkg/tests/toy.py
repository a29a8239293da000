"""The small two-class problem shared by the adaptation tests."""

from dataclasses import replace

import numpy as np

from drive.adaptation import AdaptationConfig
from drive.data import ShiftSpec, generate
from drive.models import DenseNet, PriorModel, pretrain_prior, pretrain_source
from drive.perturbation import PgdConfig, default_radius

SEED = 7
# 2 classes x 32 target samples = 64; the rotation is wide enough that the
# source model makes mistakes on the target domain
SPEC = ShiftSpec(n_classes=2, d=2, n_per_class=32, rotation=70.0, seed=SEED)


def toy_problem(**cfg_overrides):
    src, tgt, broad = generate(SPEC)
    net, _ = pretrain_source(DenseNet([2, 8, 2], np.random.default_rng(SEED)),
                             src.features, src.labels, epochs=20, seed=SEED, batch_size=16)
    prior, _ = pretrain_prior(PriorModel.create(2, 2, hidden=8, k=4, seed=SEED),
                              broad.features, broad.labels, epochs=60, seed=SEED, batch_size=16)
    radius = default_radius(tgt.features, np.random.default_rng(SEED))
    cfg = AdaptationConfig(epochs=10, batch_size=16, seed=SEED, pgd=PgdConfig(radius=radius))
    return net, prior, tgt, replace(cfg, **cfg_overrides)
