"""Synthetic covariate-shift benchmarks and a CSV loader."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SPLITS = ("source", "target", "broad", "eval")


@dataclass
class LabeledSet:
    features: np.ndarray
    _labels: np.ndarray = field(repr=False)
    split: str = "source"
    n_classes: int | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self._labels = np.asarray(self._labels, dtype=np.int64)
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")
        if self.features.ndim != 2 or len(self.features) < 1:
            raise ValueError("LabeledSet needs a non-empty n x d feature matrix")
        if len(self._labels) != len(self.features):
            raise ValueError("features and labels differ in length")
        if self.n_classes is None:
            self.n_classes = int(self._labels.max()) + 1
        if self._labels.min() < 0 or self._labels.max() >= self.n_classes:
            raise ValueError(f"labels outside [0, {self.n_classes})")

    def __len__(self) -> int:
        return len(self.features)

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def labels(self) -> np.ndarray:
        """Training labels; refused for target data, which is unlabelled during adaptation."""
        if self.split == "target":
            raise PermissionError("target labels are only available through eval_labels()")
        return self._labels

    def eval_labels(self) -> np.ndarray:
        return self._labels


@dataclass
class ShiftSpec:
    family: str = "gaussian-blobs"
    n_classes: int = 5
    d: int = 8
    rotation: float = 50.0  # degrees
    translation: list[float] = field(default_factory=lambda: [1.5])
    noise_ratio: float = 1.3
    n_per_class: int = 400
    seed: int = 0
    radius: float = 4.0
    noise: float = 1.0

    def validate(self) -> None:
        if self.family not in ("gaussian-blobs", "two-moons"):
            raise ValueError(f"data.family: unknown family {self.family!r}")
        if self.family == "two-moons" and self.n_classes != 2:
            raise ValueError("data.n_classes: two-moons has exactly 2 classes")
        if self.n_classes < 2:
            raise ValueError("data.n_classes must be >= 2")
        if self.d < 2:
            raise ValueError("data.d must be >= 2")
        if not 0.0 <= self.rotation <= 180.0:
            raise ValueError(f"data.rotation must be in [0, 180], got {self.rotation}")
        if not self.noise_ratio > 0:
            raise ValueError("data.noise_ratio must be positive")
        if self.n_per_class < 1:
            raise ValueError("data.n_per_class must be >= 1")
        if len(self.translation) > self.d:
            raise ValueError("data.translation has more entries than data.d")

    def translation_vector(self) -> np.ndarray:
        t = np.zeros(self.d)
        t[: len(self.translation)] = self.translation
        return t


def _rotation(d: int, degrees: float) -> np.ndarray:
    th = np.deg2rad(degrees)
    R = np.eye(d)
    R[:2, :2] = [[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]]
    return R


def _blob_domain(spec: ShiftSpec, shifted: bool, n_per_class: int, rng):
    C, d = spec.n_classes, spec.d
    angles = 2 * np.pi * np.arange(C) / C
    means = np.zeros((C, d))
    means[:, 0] = spec.radius * np.cos(angles)
    means[:, 1] = spec.radius * np.sin(angles)
    sigma = spec.noise
    if shifted:
        means = means @ _rotation(d, spec.rotation).T + spec.translation_vector()
        sigma = spec.noise * spec.noise_ratio
    y = np.repeat(np.arange(C), n_per_class)
    X = means[y] + sigma * rng.normal(size=(len(y), d))
    return X, y


def _moons_domain(spec: ShiftSpec, shifted: bool, n_per_class: int, rng):
    t = rng.uniform(0.0, np.pi, size=(2, n_per_class))
    upper = np.stack([np.cos(t[0]), np.sin(t[0])], axis=1)
    lower = np.stack([1.0 - np.cos(t[1]), 0.5 - np.sin(t[1])], axis=1)
    base = np.concatenate([upper, lower]) * (spec.radius / 2.0)
    y = np.repeat([0, 1], n_per_class)
    X = np.zeros((len(y), spec.d))
    X[:, :2] = base
    sigma = 0.1 * spec.radius * spec.noise
    if shifted:
        X = X @ _rotation(spec.d, spec.rotation).T + spec.translation_vector()
        sigma *= spec.noise_ratio
    X = X + sigma * rng.normal(size=X.shape)
    return X, y


def generate(spec: ShiftSpec) -> tuple[LabeledSet, LabeledSet, LabeledSet]:
    """Source, target and broad splits for one seed.

    The broad split mixes samples from both domains and is only used to
    pretrain the prior model.
    """
    spec.validate()
    make = _blob_domain if spec.family == "gaussian-blobs" else _moons_domain
    root = np.random.SeedSequence(spec.seed)
    rs, rt, rb1, rb2, rp = (np.random.default_rng(s) for s in root.spawn(5))
    Xs, ys = make(spec, False, spec.n_per_class, rs)
    Xt, yt = make(spec, True, spec.n_per_class, rt)
    half = max(1, spec.n_per_class // 2)
    Xa, ya = make(spec, False, half, rb1)
    Xb, yb = make(spec, True, spec.n_per_class - half if spec.n_per_class > 1 else 1, rb2)
    Xbr = np.concatenate([Xa, Xb])
    ybr = np.concatenate([ya, yb])
    perm = rp.permutation(len(Xbr))
    C = spec.n_classes
    return (LabeledSet(Xs, ys, "source", C), LabeledSet(Xt, yt, "target", C),
            LabeledSet(Xbr[perm], ybr[perm], "broad", C))


def load_csv(path, split: str = "target", n_classes: int | None = None) -> LabeledSet:
    """Read ``f0,...,f{d-1},label`` rows; errors carry the 1-based line number."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        d = len(header) - 1
        expected = [f"f{i}" for i in range(d)] + ["label"]
        if d < 1 or [h.strip() for h in header] != expected:
            raise ValueError(f"{path}:1: header must be f0,...,f{{d-1}},label")
        feats, labels = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 1:
                raise ValueError(f"{path}:{line_no}: expected {d + 1} fields, got {len(row)}")
            try:
                feats.append([float(v) for v in row[:d]])
                label = int(row[d])
            except ValueError as e:
                raise ValueError(f"{path}:{line_no}: {e}") from None
            if label < 0 or (n_classes is not None and label >= n_classes):
                raise ValueError(f"{path}:{line_no}: label {label} out of range")
            labels.append(label)
    if not feats:
        raise ValueError(f"{path}: no data rows")
    return LabeledSet(np.array(feats), np.array(labels), split, n_classes)


def write_csv(path, data: LabeledSet) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow([f"f{i}" for i in range(data.d)] + ["label"])
        for x, y in zip(data.features, data.eval_labels()):
            w.writerow([repr(float(v)) for v in x] + [int(y)])
