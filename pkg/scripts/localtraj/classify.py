"""One-vs-rest linear max-margin classifier with calibrated posteriors."""

import concurrent.futures
import dataclasses
import logging
import struct
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize, special

from .exceptions import (
    ArchiveFormatError,
    DegenerateLabelsError,
    ParameterError,
    ShapeError,
    TruncatedFileError,
)
from .utils import atomic_write, derive_rng

log = logging.getLogger(__name__)

MODEL_MAGIC = b"TLMD"
MODEL_VERSION = 1


@dataclass
class TrainConfig:
    """Classifier settings.

    Attributes:
        C: Weight of the mean hinge loss against half the squared weight norm.
            The objective does not depend on the training set size.
        epochs: Passes over the training set per one-vs-rest problem.
        seed: Seed of the sample order; None means the pipeline seed.
    """

    C: float = 1.0
    epochs: int = 200
    seed: Optional[int] = None

    def __post_init__(self):
        if not self.C > 0 or self.epochs < 1:
            raise ParameterError(f"Bad train config: {self}")


@dataclass(eq=False)
class LinearModel:
    classes: List[str]
    weights: np.ndarray  # (classes, dim)
    biases: np.ndarray
    slopes: np.ndarray
    intercepts: np.ndarray
    objective_history: List[List[float]] = field(default_factory=list)

    def __post_init__(self):
        if self.weights.shape[0] != len(self.classes):
            raise ShapeError(f"{len(self.classes)} classes but {self.weights.shape[0]} weight rows")

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def decision_function(self, histograms: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(histograms, dtype=float))
        if X.shape[1] != self.dim:
            raise ShapeError(f"Histogram dimension {X.shape[1]} does not match model dimension {self.dim}")
        return X @ self.weights.T + self.biases

    def posteriors(self, histograms: np.ndarray) -> np.ndarray:
        """Calibrated per-class probabilities, normalized to sum to one per row."""
        z = self.decision_function(histograms) * self.slopes + self.intercepts
        return special.softmax(-np.logaddexp(0.0, -z), axis=1)


@dataclass
class EvalReport:
    classes: List[str]
    confusion: np.ndarray  # rows true, columns predicted
    accuracy: float
    per_class_accuracy: List[float]

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "classes": list(self.classes),
            "per_class_accuracy": dict(zip(self.classes, self.per_class_accuracy)),
            "confusion": self.confusion.tolist(),
        }


def _objective(w: np.ndarray, X: np.ndarray, y: np.ndarray, lam: float) -> float:
    hinge = np.maximum(0.0, 1.0 - y * (X @ w))
    return float(0.5 * lam * w @ w + hinge.mean())


def _pegasos(task) -> Tuple[np.ndarray, List[float]]:
    """Projected stochastic subgradient descent on the primal, averaged iterates.

    The bias is the weight of a constant feature appended to X. Duplicating
    every sample leaves the objective unchanged.
    """
    X, y, C, epochs, seed, index = task
    rng = derive_rng(seed, index)
    n = len(X)
    lam = 1.0 / C
    radius = 1.0 / np.sqrt(lam)
    w = np.zeros(X.shape[1])
    average = np.zeros(X.shape[1])
    history = []
    t = 0
    for _ in range(epochs):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (lam * t)
            margin = y[i] * (X[i] @ w)
            w *= 1.0 - eta * lam
            if margin < 1.0:
                w += eta * y[i] * X[i]
            norm = np.linalg.norm(w)
            if norm > radius:
                w *= radius / norm
            average += (w - average) / t
        history.append(_objective(average, X, y, lam))
    return average, history


def _platt(scores: np.ndarray, positive: np.ndarray) -> Tuple[float, float]:
    """Logistic fit p = expit(slope * s + intercept) against smoothed 0/1 targets."""
    n_pos = int(positive.sum())
    n_neg = len(positive) - n_pos
    target = np.where(positive, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))

    def loss(params):
        slope, intercept = params
        z = slope * scores + intercept
        value = np.sum(target * np.logaddexp(0.0, -z) + (1 - target) * np.logaddexp(0.0, z))
        residual = special.expit(z) - target
        return value, np.array([residual @ scores, residual.sum()])

    start = np.array([1.0, np.log((n_pos + 1.0) / (n_neg + 1.0))])
    result = optimize.minimize(loss, start, jac=True, method="L-BFGS-B")
    return float(result.x[0]), float(result.x[1])


def train(
    histograms: np.ndarray,
    labels: Sequence[str],
    cfg: TrainConfig = None,
    seed: int = 0,
    jobs: int = 1,
) -> LinearModel:
    """Train one hinge-loss model per class against the rest, then calibrate each."""
    cfg = cfg or TrainConfig()
    seed = seed if cfg.seed is None else cfg.seed
    X = np.asarray(histograms, dtype=float)
    if X.ndim != 2 or len(X) != len(labels):
        raise ShapeError(f"{len(labels)} labels for histograms of shape {X.shape}")
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise DegenerateLabelsError(f"Training needs at least two classes, got {classes}")
    labels = np.asarray(labels)
    augmented = np.hstack([X, np.ones((len(X), 1))])
    tasks = [
        (augmented, np.where(labels == c, 1.0, -1.0), cfg.C, cfg.epochs, seed, index)
        for index, c in enumerate(classes)
    ]
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as executor:
            results = list(executor.map(_pegasos, tasks))
    else:
        results = [_pegasos(task) for task in tasks]
    model = LinearModel(
        classes,
        np.array([w[:-1] for w, _ in results]),
        np.array([w[-1] for w, _ in results]),
        np.ones(len(classes)),
        np.zeros(len(classes)),
        [h for _, h in results],
    )
    log.info(f"Trained {len(classes)} one-vs-rest models on {len(X)} histograms of dimension {X.shape[1]}")
    return calibrate(model, X, labels)


def calibrate(model: LinearModel, histograms: np.ndarray, labels: Sequence[str]) -> LinearModel:
    """Refit the per-class logistic calibration on the model's scores of labelled histograms."""
    scores = model.decision_function(histograms)
    labels = np.asarray(labels)
    calibration = [_platt(scores[:, i], labels == c) for i, c in enumerate(model.classes)]
    return dataclasses.replace(
        model,
        slopes=np.array([a for a, _ in calibration]),
        intercepts=np.array([b for _, b in calibration]),
    )


def predict(model: LinearModel, histogram: np.ndarray) -> Tuple[str, np.ndarray]:
    posteriors = model.posteriors(histogram)[0]
    return model.classes[int(np.argmax(posteriors))], posteriors


def predict_many(model: LinearModel, histograms: np.ndarray) -> List[str]:
    if not len(histograms):
        return []
    return [model.classes[i] for i in np.argmax(model.posteriors(histograms), axis=1)]


def true_class_posteriors(model: LinearModel, histograms: np.ndarray, labels: Sequence[str]) -> np.ndarray:
    if not len(labels):
        return np.zeros(0)
    index = [model.classes.index(label) for label in labels]
    return model.posteriors(histograms)[np.arange(len(index)), index]


def evaluate(model: LinearModel, histograms: np.ndarray, labels: Sequence[str]) -> EvalReport:
    unknown = set(labels) - set(model.classes)
    if unknown:
        raise ParameterError(f"Labels {sorted(unknown)} are unknown to the model")
    n = len(model.classes)
    confusion = np.zeros((n, n), dtype=int)
    for truth, guess in zip(labels, predict_many(model, histograms)):
        confusion[model.classes.index(truth), model.classes.index(guess)] += 1
    total = confusion.sum()
    row_sums = confusion.sum(axis=1)
    per_class = [float(confusion[i, i] / row_sums[i]) if row_sums[i] else 0.0 for i in range(n)]
    accuracy = float(np.trace(confusion) / total) if total else 0.0
    return EvalReport(list(model.classes), confusion, accuracy, per_class)


def write_model(path: str, model: LinearModel):
    with atomic_write(path) as f:
        f.write(MODEL_MAGIC + struct.pack("<III", MODEL_VERSION, len(model.classes), model.dim))
        for i, label in enumerate(model.classes):
            encoded = label.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)) + encoded)
            f.write(np.asarray(model.weights[i], dtype="<f4").tobytes())
            f.write(struct.pack("<fff", model.biases[i], model.slopes[i], model.intercepts[i]))


def read_model(path: str) -> LinearModel:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MODEL_MAGIC:
        raise ArchiveFormatError(f"{path}: not a model file")
    if len(data) < 16:
        raise TruncatedFileError(f"{path}: truncated header")
    version, count, dim = struct.unpack_from("<III", data, 4)
    if version != MODEL_VERSION:
        raise ArchiveFormatError(f"{path}: unsupported model version {version}")
    offset = 16
    classes, weights, params = [], [], []
    try:
        for _ in range(count):
            (length,) = struct.unpack_from("<I", data, offset)
            offset += 4
            classes.append(data[offset : offset + length].decode("utf-8"))
            offset += length
            if len(data) < offset + 4 * dim + 12:
                raise TruncatedFileError(f"{path}: truncated class entry")
            weights.append(np.frombuffer(data, dtype="<f4", count=dim, offset=offset).astype(np.float64))
            offset += 4 * dim
            params.append(struct.unpack_from("<fff", data, offset))
            offset += 12
    except struct.error as e:
        raise TruncatedFileError(f"{path}: truncated model") from e
    except UnicodeDecodeError as e:
        raise ArchiveFormatError(f"{path}: bad class label") from e
    params = np.array(params, dtype=np.float64).reshape(-1, 3)
    return LinearModel(
        classes, np.array(weights).reshape(count, dim), params[:, 0], params[:, 1], params[:, 2]
    )
