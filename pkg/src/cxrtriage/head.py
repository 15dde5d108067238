"""Trainable classification head: fully connected layer + softmax.

This is the retrained replacement for a backbone's final layers.  Two
classes, ordered (POSITIVE, NEGATIVE): probs[0] is always the positive
(COVID-19) probability.  Training is plain mini-batch SGD on mean
cross-entropy; all math runs in float64.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DivergenceError, TrainingError
from .extractor import FeatureMatrix
from .manifest import Label

CLASS_ORDER: tuple[Label, Label] = (Label.POSITIVE, Label.NEGATIVE)


@dataclass
class SoftmaxHead:
    """2 x D weight matrix plus biases; row order matches CLASS_ORDER."""

    weights: np.ndarray
    bias: np.ndarray
    init_seed: int

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.weights.shape[0] != 2:
            raise TrainingError(f"weights must be 2 x D, got {self.weights.shape}")
        if self.bias.shape != (2,):
            raise TrainingError(f"bias must have length 2, got {self.bias.shape}")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise TrainingError("head parameters must be finite")

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def save(self, path: str | Path, train_config: "TrainConfig | None" = None,
             final_loss: float | None = None) -> None:
        payload = {
            "dim": self.dim,
            "class_order": [c.value for c in CLASS_ORDER],
            "weights": self.weights.reshape(-1).tolist(),
            "bias": self.bias.tolist(),
            "init_seed": self.init_seed,
            "train_config": train_config.as_dict() if train_config else None,
            "final_loss": final_loss,
        }
        Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "SoftmaxHead":
        d = json.loads(Path(path).read_text())
        expected = [c.value for c in CLASS_ORDER]
        if d.get("class_order") != expected:
            raise TrainingError(f"unsupported class order {d.get('class_order')}, expected {expected}")
        dim = d["dim"]
        weights = np.array(d["weights"], dtype=np.float64).reshape(2, dim)
        return cls(weights=weights, bias=np.array(d["bias"]), init_seed=d["init_seed"])


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 15
    batch_size: int = 8
    learning_rate: float = 5e-5
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise TrainingError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise TrainingError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise TrainingError(f"learning_rate must be > 0, got {self.learning_rate}")

    def as_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "seed": self.seed,
            "shuffle": self.shuffle,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass(frozen=True)
class Prediction:
    """Per-sample output: probs over CLASS_ORDER, argmax label, positive score.

    Ties at (0.5, 0.5) resolve to POSITIVE; triage favors sensitivity.
    """

    sample_id: str
    probs: tuple[float, float]
    label: Label
    score: float


def init_head(dim: int, seed: int) -> SoftmaxHead:
    """Glorot-uniform weights in +-sqrt(6 / (dim + 2)), zero bias."""
    if dim <= 0:
        raise TrainingError(f"feature dim must be positive, got {dim}")
    bound = np.sqrt(6.0 / (dim + 2))
    rng = np.random.default_rng(seed)
    weights = rng.uniform(-bound, bound, size=(2, dim))
    return SoftmaxHead(weights=weights, bias=np.zeros(2), init_seed=seed)


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def _check_features(head: SoftmaxHead, features: FeatureMatrix) -> np.ndarray:
    x = np.asarray(features.values, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != head.dim:
        raise TrainingError(
            f"feature dim mismatch: head expects {head.dim}, features are {x.shape}"
        )
    return x


def forward(head: SoftmaxHead, features: FeatureMatrix) -> list[Prediction]:
    """Softmax probabilities for each row, with max-subtraction for stability."""
    x = _check_features(head, features)
    probs = _softmax_rows(x @ head.weights.T + head.bias)
    out = []
    for sid, p in zip(features.sample_ids, probs):
        p_pos, p_neg = float(p[0]), float(p[1])
        label = Label.POSITIVE if p_pos >= p_neg else Label.NEGATIVE
        out.append(Prediction(sample_id=sid, probs=(p_pos, p_neg), label=label, score=p_pos))
    return out


def _encode_labels(labels: list[Label]) -> np.ndarray:
    """Class indices into CLASS_ORDER (0 = POSITIVE, 1 = NEGATIVE)."""
    return np.array([CLASS_ORDER.index(lab) for lab in labels])


def loss_and_grad(
    head: SoftmaxHead, features: FeatureMatrix, labels: list[Label]
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy over the batch and its analytic gradient.

    Returns (loss, d_weights, d_bias) with gradients shaped like the
    parameters.
    """
    x = _check_features(head, features)
    if len(labels) != x.shape[0]:
        raise TrainingError(f"{x.shape[0]} feature rows but {len(labels)} labels")
    idx = _encode_labels(labels)
    n = x.shape[0]
    logits = x @ head.weights.T + head.bias
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-log_probs[np.arange(n), idx].mean())
    probs = np.exp(log_probs)
    delta = probs
    delta[np.arange(n), idx] -= 1.0
    delta /= n
    return loss, delta.T @ x, delta.sum(axis=0)


def train(
    features: FeatureMatrix,
    labels: list[Label],
    cfg: TrainConfig,
    init_seed: int = 0,
) -> tuple[SoftmaxHead, list[float]]:
    """Mini-batch SGD from a fresh Glorot init.

    Returns the trained head and the per-epoch loss trace (sample-weighted
    mean of batch losses).  (init_seed, cfg.seed) fully determine the
    result for fixed data.  Raises DivergenceError on a non-finite loss.
    """
    x = np.asarray(features.values, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise TrainingError(f"features must be a non-empty matrix, got shape {x.shape}")
    if len(labels) != x.shape[0]:
        raise TrainingError(f"{x.shape[0]} feature rows but {len(labels)} labels")
    present = set(labels)
    if len(present) < 2:
        import warnings

        warnings.warn("training set contains a single class", stacklevel=2)

    head = init_head(x.shape[1], init_seed)
    idx_all = np.arange(x.shape[0])
    shuffle_rng = np.random.default_rng(cfg.seed)
    trace: list[float] = []
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(idx_all) if cfg.shuffle else idx_all
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            fm = FeatureMatrix(
                values=x[batch],
                sample_ids=[features.sample_ids[i] for i in batch],
            )
            loss, d_w, d_b = loss_and_grad(head, fm, [labels[i] for i in batch])
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, batch offset {start}; "
                    "lower the learning rate"
                )
            head.weights -= cfg.learning_rate * d_w
            head.bias -= cfg.learning_rate * d_b
            epoch_loss += loss * len(batch)
        trace.append(epoch_loss / len(order))
    return head, trace
