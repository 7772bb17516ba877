"""Supervised linear baseline: multinomial logistic regression over
averaged token vectors.

Token vectors come from either a seeded random lookup table built over the
training vocabulary or an external text table; sentences are featurized as
the mean of their token vectors (or just the target token's vector).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Instance, WordDataset, write_text_atomic
from .errors import CwsdError, TrainingError

SENTENCE_MEAN = "sentence_mean"
TARGET_TOKEN = "target_token"
FEATURE_MODES = (SENTENCE_MEAN, TARGET_TOKEN)


def derive_seed(seed: int, *parts) -> int:
    """Stable 64-bit stream seed from a base seed and string parts.

    Uses a keyed hash rather than Python's salted hash() so schedules
    survive interpreter restarts, and so adding words to an experiment
    never perturbs the streams of existing words.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(seed)).encode())
    for part in parts:
        h.update(b"\x1f")
        h.update(str(part).encode())
    return int.from_bytes(h.digest(), "little")


class RandomLookupSource:
    """Seeded uniform(-0.5/d, 0.5/d) vectors over a fixed vocabulary.

    The table is built over the sorted vocabulary so iteration order of
    the caller never changes the vectors.
    """

    kind = "random_init_lookup"

    def __init__(self, vocabulary, dim: int = 300, seed: int = 0):
        self.dim = int(dim)
        self.seed = int(seed)
        vocab = sorted(set(vocabulary))
        rng = np.random.default_rng(derive_seed(seed, "token-table"))
        half = 0.5 / self.dim
        table = rng.uniform(-half, half, size=(len(vocab), self.dim))
        self._vectors = {tok: table[i] for i, tok in enumerate(vocab)}

    @classmethod
    def from_train_split(cls, ds: WordDataset, subset=None, dim: int = 300, seed: int = 0):
        vocab = set()
        for inst in ds.train:
            if subset is None or inst.instance_id in subset:
                vocab.update(inst.tokens)
        return cls(vocab, dim=dim, seed=seed)

    def get(self, token: str):
        return self._vectors.get(token)

    def describe(self) -> str:
        return f"{self.kind}(dim={self.dim}, seed={self.seed})"


class ExternalTableSource:
    """Text vector table: first line 'count dim', then 'token v1 .. vd'."""

    kind = "external_table"

    def __init__(self, vectors: dict, dim: int, origin: str = "<memory>"):
        self.dim = int(dim)
        self.origin = origin
        self._vectors = vectors

    @classmethod
    def load(cls, path) -> "ExternalTableSource":
        path = Path(path)
        with path.open(encoding="utf-8") as f:
            header = f.readline().split()
            if len(header) != 2:
                raise CwsdError(f"{path}: first line must be 'count dim'")
            count, dim = int(header[0]), int(header[1])
            vectors = {}
            for i, line in enumerate(f):
                parts = line.rstrip("\n").split()
                if len(parts) != dim + 1:
                    raise CwsdError(
                        f"{path}, line {i + 2}: expected token + {dim} values, "
                        f"got {len(parts)} fields"
                    )
                vectors[parts[0]] = np.array([float(x) for x in parts[1:]])
        if len(vectors) != count:
            raise CwsdError(
                f"{path}: header declares {count} tokens, found {len(vectors)}"
            )
        return cls(vectors, dim, origin=str(path))

    def get(self, token: str):
        return self._vectors.get(token)

    def describe(self) -> str:
        return f"{self.kind}({self.origin})"


@dataclass
class FeaturizeStats:
    unknown_tokens: int = 0
    total_tokens: int = 0


def featurize(inst: Instance, source, mode: str = SENTENCE_MEAN, stats: FeaturizeStats | None = None):
    """Instance -> feature vector. Unknown tokens map to zero and are counted."""
    if mode not in FEATURE_MODES:
        raise CwsdError(f"unknown feature mode {mode!r}")
    if not inst.tokens:
        raise CwsdError(f"{inst.instance_id}: empty sentence")
    if mode == TARGET_TOKEN:
        tokens = [inst.target_token]
    else:
        tokens = list(inst.tokens)
    acc = np.zeros(source.dim, dtype=np.float64)
    unknown = 0
    for tok in tokens:
        vec = source.get(tok)
        if vec is None:
            unknown += 1
        else:
            acc += vec
    if stats is not None:
        stats.unknown_tokens += unknown
        stats.total_tokens += len(tokens)
    if mode == SENTENCE_MEAN:
        acc /= len(tokens)
    return acc


@dataclass
class Hyper:
    """Gradient-descent settings. Defaults are package defaults, not tuned."""

    lr: float = 0.1
    epochs: int = 25
    l2: float = 1e-4
    seed: int = 0
    batch_size: int = 32
    shuffle: bool = True


@dataclass
class LinearModel:
    weights: np.ndarray  # k x d
    bias: np.ndarray  # k
    feature_mode: str
    vector_source: str

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def to_json(self) -> dict:
        return {
            "weights": self.weights.reshape(-1).tolist(),  # row-major
            "bias": self.bias.tolist(),
            "n_classes": self.n_classes,
            "dim": self.dim,
            "feature_mode": self.feature_mode,
            "vector_source": self.vector_source,
        }

    @classmethod
    def from_json(cls, payload) -> "LinearModel":
        k, d = int(payload["n_classes"]), int(payload["dim"])
        return cls(
            weights=np.array(payload["weights"], dtype=np.float64).reshape(k, d),
            bias=np.array(payload["bias"], dtype=np.float64),
            feature_mode=payload["feature_mode"],
            vector_source=payload["vector_source"],
        )

    def save(self, path) -> None:
        write_text_atomic(path, json.dumps(self.to_json()) + "\n")

    @classmethod
    def load(cls, path) -> "LinearModel":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def loss_and_grad(weights, bias, x, y, l2: float):
    """Mean cross-entropy + (l2/2)*||W||^2 and its analytic gradient.

    x is (m, d), y an int vector of length m. The l2 penalty applies to
    the weights only, not the bias.
    """
    m = x.shape[0]
    probs = softmax(x @ weights.T + bias)
    log_probs = np.log(np.clip(probs[np.arange(m), y], 1e-300, None))
    loss = -log_probs.mean() + 0.5 * l2 * float((weights**2).sum())
    delta = probs
    delta[np.arange(m), y] -= 1.0
    grad_w = delta.T @ x / m + l2 * weights
    grad_b = delta.mean(axis=0)
    return loss, grad_w, grad_b


def train_linear(
    ds: WordDataset,
    source,
    mode: str = SENTENCE_MEAN,
    hyper: Hyper | None = None,
    subset=None,
) -> LinearModel:
    """Mini-batch gradient descent from zero initialization.

    The shuffle schedule is a pure function of the seed, so identical
    settings reproduce identical parameters. Zero epochs return the
    untouched initialization.
    """
    hyper = hyper or Hyper()
    instances = [
        inst for inst in ds.train if subset is None or inst.instance_id in subset
    ]
    if not instances:
        raise TrainingError(f"{ds.word}: empty train set")
    k = ds.polysemy
    x = np.stack([featurize(inst, source, mode) for inst in instances])
    y = np.array([inst.gold for inst in instances], dtype=np.int64)
    weights = np.zeros((k, source.dim), dtype=np.float64)
    bias = np.zeros(k, dtype=np.float64)
    rng = np.random.default_rng(derive_seed(hyper.seed, ds.word, "shuffle"))
    n = len(instances)
    for epoch in range(hyper.epochs):
        order = rng.permutation(n) if hyper.shuffle else np.arange(n)
        for start in range(0, n, hyper.batch_size):
            batch = order[start : start + hyper.batch_size]
            loss, grad_w, grad_b = loss_and_grad(
                weights, bias, x[batch], y[batch], hyper.l2
            )
            if not np.isfinite(loss):
                raise TrainingError(
                    f"{ds.word}: non-finite loss at epoch {epoch}, "
                    f"batch {start // hyper.batch_size}"
                )
            weights -= hyper.lr * grad_w
            bias -= hyper.lr * grad_b
    return LinearModel(
        weights=weights,
        bias=bias,
        feature_mode=mode,
        vector_source=source.describe(),
    )


def mean_loss(model: LinearModel, instances, source, l2: float = 0.0) -> float:
    """Full-set objective value, for convergence monitoring and tests."""
    x = np.stack([featurize(inst, source, model.feature_mode) for inst in instances])
    y = np.array([inst.gold for inst in instances], dtype=np.int64)
    loss, _, _ = loss_and_grad(model.weights, model.bias, x, y, l2)
    return loss


def predict_linear(model: LinearModel, inst: Instance, source):
    """-> (argmax class, probability vector)."""
    vec = featurize(inst, source, model.feature_mode)
    if vec.shape[0] != model.dim:
        raise CwsdError(
            f"feature dim {vec.shape[0]} != model dim {model.dim}"
        )
    probs = softmax(model.weights @ vec + model.bias)
    return int(np.argmax(probs)), probs
