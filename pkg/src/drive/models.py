"""Target classifier and the frozen prior model with a learnable prompt context."""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .numerics import Tape, Tensor

log = logging.getLogger(__name__)


NORM_EPS = 1e-12


class FrozenParameterError(RuntimeError):
    pass


class Parameter(Tensor):
    """A named leaf tensor that refuses updates once frozen."""

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True, name=name)
        self.frozen = False

    def freeze(self) -> None:
        self.frozen = True
        self.requires_grad = False

    def step(self, grad: np.ndarray, lr: float) -> None:
        if self.frozen:
            raise FrozenParameterError(f"parameter {self.name!r} is frozen")
        self.data -= lr * grad


def params_digest(params) -> str:
    h = hashlib.sha256()
    for p in params:
        h.update(p.name.encode())
        h.update(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    return h.hexdigest()


class DenseNet:
    """Fully connected net: tanh hidden layers, linear (or tanh) output layer."""

    def __init__(self, widths: list[int], rng: np.random.Generator | None = None,
                 out_activation: str | None = None, prefix: str = "net"):
        if len(widths) < 2 or min(widths) < 1:
            raise ValueError(f"DenseNet: bad layer widths {widths}")
        if out_activation not in (None, "tanh"):
            raise ValueError(f"DenseNet: unknown output activation {out_activation!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.widths = list(widths)
        self.out_activation = out_activation
        self.weights: list[Parameter] = []
        self.biases: list[Parameter] = []
        for k, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))
            self.weights.append(Parameter(w, f"{prefix}.w{k}"))
            self.biases.append(Parameter(np.zeros(fan_out), f"{prefix}.b{k}"))

    @property
    def params(self) -> list[Parameter]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def forward(self, x) -> Tensor:
        x = nx.as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.widths[0]:
            raise ValueError(f"DenseNet: input width {x.shape[-1] if x.ndim else None} "
                             f"does not match expected {self.widths[0]}")
        h = x
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if k < last or self.out_activation == "tanh":
                h = nx.tanh(h)
        return h

    def predict(self, x) -> tuple[Tensor, Tensor]:
        logits = self.forward(x)
        return logits, nx.softmax(logits)

    def copy(self) -> "DenseNet":
        other = DenseNet.__new__(DenseNet)
        other.widths = list(self.widths)
        other.out_activation = self.out_activation
        other.weights = [Parameter(w.data.copy(), w.name) for w in self.weights]
        other.biases = [Parameter(b.data.copy(), b.name) for b in self.biases]
        return other

    def freeze(self) -> None:
        for p in self.params:
            p.freeze()


def classifier_predict(net: DenseNet, x) -> tuple[Tensor, Tensor]:
    return net.predict(x)


@dataclass
class PriorModel:
    """Frozen encoder and class embeddings.

    Class scores are ``<f(x), (e_c + v) / |e_c + v|> / T``: the prompt context
    shifts every class embedding before it is normalised.
    """

    encoder: DenseNet
    class_embeddings: Parameter
    prompt: Parameter
    temperature: float = 0.5

    @classmethod
    def create(cls, d: int, n_classes: int, hidden: int = 32, k: int = 16,
               temperature: float = 0.5, seed: int = 0) -> "PriorModel":
        rng = np.random.default_rng(seed)
        enc = DenseNet([d, hidden, k], rng, out_activation="tanh", prefix="prior.enc")
        emb = Parameter(rng.normal(0.0, 1.0, size=(n_classes, k)), "prior.emb")
        return cls(enc, emb, Parameter(np.zeros(k), "prior.v"), temperature)

    @property
    def n_classes(self) -> int:
        return self.class_embeddings.shape[0]

    @property
    def frozen_params(self) -> list[Parameter]:
        return self.encoder.params + [self.class_embeddings]

    def features(self, x) -> Tensor:
        return self.encoder.forward(x)

    def prompted_embeddings(self, v) -> Tensor:
        """Unit-norm rows of ``E + v``.

        Without the normalisation ``v`` would add the same ``<f(x), v>`` to
        every class score and the softmax would ignore it entirely.
        """
        shifted = self.class_embeddings + v
        norms = nx.sqrt((shifted * shifted).sum(axis=1) + NORM_EPS)
        return shifted / nx.reshape(norms, (norms.shape[0], 1))

    def predict(self, x, v=None) -> Tensor:
        v = self.prompt if v is None else nx.as_tensor(v)
        k = self.class_embeddings.shape[1]
        if v.shape != (k,):
            raise ValueError(f"prior_predict: prompt context has shape {v.shape}, expected ({k},)")
        if self.temperature <= 0:
            raise ValueError("prior_predict: temperature must be positive")
        feats = self.features(x)
        scores = feats @ self.prompted_embeddings(v).T
        return nx.softmax(nx.scale(scores, 1.0 / self.temperature))

    def freeze(self) -> None:
        for p in self.frozen_params:
            p.freeze()


def prior_predict(prior: PriorModel, x, v=None) -> Tensor:
    return prior.predict(x, v)


def accuracy(probs, labels) -> float:
    probs = probs.data if isinstance(probs, Tensor) else np.asarray(probs)
    return float(np.mean(probs.argmax(axis=1) == np.asarray(labels)))


def _cross_entropy(probs: Tensor, onehot: np.ndarray) -> Tensor:
    return -(nx.log(probs) * onehot).sum(axis=1).mean()


def _sgd(params, forward, X, y, n_classes, epochs, lr, seed, batch_size):
    rng = np.random.default_rng(seed)
    onehot = np.eye(n_classes)[y]
    for _ in range(epochs):
        order = rng.permutation(len(X))
        for start in range(0, len(X), batch_size):
            idx = order[start:start + batch_size]
            with Tape() as tape:
                loss = _cross_entropy(forward(X[idx]), onehot[idx])
            grads = tape.backward(loss)
            for p in params:
                p.step(grads[p], lr)


def pretrain_source(net: DenseNet, X, y, epochs: int = 30, lr: float = 0.05,
                    seed: int = 0, batch_size: int = 64) -> tuple[DenseNet, float]:
    """Cross-entropy training on labelled source data; returns (net, train accuracy)."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if len(X) == 0:
        raise ValueError("pretrain_source: empty source data")
    n_classes = net.widths[-1]
    _sgd(net.params, lambda xb: net.predict(xb)[1], X, y, n_classes, epochs, lr, seed, batch_size)
    acc = accuracy(net.predict(X)[1], y)
    log.info("source model: train accuracy %.4f", acc)
    return net, acc


def pretrain_prior(prior: PriorModel, X, y, epochs: int = 30, lr: float = 0.05,
                   seed: int = 0, batch_size: int = 64) -> tuple[PriorModel, float]:
    """Train encoder and class embeddings with v = 0, then freeze them."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if len(X) == 0:
        raise ValueError("pretrain_prior: empty broad data")
    prior.prompt.data[:] = 0.0
    zero = Tensor(np.zeros_like(prior.prompt.data))
    _sgd(prior.frozen_params, lambda xb: prior.predict(xb, zero), X, y, prior.n_classes,
         epochs, lr, seed, batch_size)
    prior.freeze()
    acc = accuracy(prior.predict(X, zero), y)
    log.info("prior model: train accuracy %.4f", acc)
    return prior, acc


# checkpoints
#
# layout: magic (8 bytes) | header length (uint64 LE) | JSON header | payload
# The header lists every tensor's name, shape, byte offset and frozen flag;
# the payload is the concatenation of float64 little-endian buffers.

MAGIC = b"DRVCKPT1"


def save_checkpoint(path, tensors: dict[str, Parameter], meta: dict | None = None) -> None:
    entries, chunks, offset = [], [], 0
    for name, p in tensors.items():
        buf = np.ascontiguousarray(p.data, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(p.shape), "offset": offset,
                        "frozen": bool(getattr(p, "frozen", False))})
        chunks.append(buf)
        offset += len(buf)
    header = json.dumps({"tensors": entries, "meta": meta or {}}, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for c in chunks:
            f.write(c)


def load_checkpoint(path) -> tuple[dict[str, Parameter], dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen])
    base = 16 + hlen
    out = {}
    for e in header["tensors"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        start = base + e["offset"]
        arr = np.frombuffer(raw[start:start + 8 * n], dtype="<f8").astype(np.float64)
        p = Parameter(arr.reshape(e["shape"]), e["name"])
        if e["frozen"]:
            p.freeze()
        out[e["name"]] = p
    return out, header["meta"]


def net_tensors(net: DenseNet) -> dict[str, Parameter]:
    return {p.name: p for p in net.params}


def prior_tensors(prior: PriorModel) -> dict[str, Parameter]:
    out = {p.name: p for p in prior.frozen_params}
    out[prior.prompt.name] = prior.prompt
    return out
