"""Pixel-wise multilayer perceptron classifier and accuracy metrics."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .datamodel import DimensionError, LabelMap, SpectralCube

logger = logging.getLogger(__name__)

DEFAULT_HIDDEN = (10,) * 10
PROB_EPS = 1e-12


class SplitError(ValueError):
    """A class has too few labeled pixels to split."""


class TrainingDivergenceError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class MlpNetwork:
    """Fully connected ReLU network with a softmax output layer.

    ``weights[i]`` has shape ``(fan_in, fan_out)``. Inputs are standardized
    with ``(s - input_mean) / input_scale`` before the first layer.
    """

    weights: tuple
    biases: tuple
    input_mean: np.ndarray
    input_scale: np.ndarray

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise DimensionError("weights and biases must be non-empty and of equal length")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise DimensionError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise DimensionError(f"layer {i} input {w.shape[0]} != previous output {self.weights[i - 1].shape[1]}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise TrainingDivergenceError(f"layer {i} has non-finite parameters")
        if self.input_mean.shape != (self.input_dim,) or self.input_scale.shape != (self.input_dim,):
            raise DimensionError("standardization vectors must match the input dimension")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def class_count(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def layer_sizes(self) -> tuple:
        return (self.input_dim,) + tuple(w.shape[1] for w in self.weights)

    def parameters(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


def init_network(input_dim: int, hidden=DEFAULT_HIDDEN, class_count: int = 2, seed: int = 0) -> MlpNetwork:
    """Random network; weights ~ U(-a, a) with ``a = sqrt(6 / fan_in)``, zero biases."""
    sizes = (int(input_dim),) + tuple(int(h) for h in hidden) + (int(class_count),)
    if min(sizes) < 1:
        raise DimensionError(f"all layer sizes must be >= 1, got {sizes}")
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        a = math.sqrt(6.0 / fan_in)
        ws.append(rng.uniform(-a, a, size=(fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    return MlpNetwork(tuple(ws), tuple(bs), np.zeros(sizes[0]), np.ones(sizes[0]))


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _forward_all(net: MlpNetwork, S: np.ndarray):
    """Pre-activations and activations of every layer for a batch ``S``."""
    a = (S - net.input_mean) / net.input_scale
    acts, pres = [a], []
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w + b
        pres.append(z)
        a = _softmax(z) if i == last else np.maximum(z, 0.0)
        acts.append(a)
    return pres, acts


def forward(net: MlpNetwork, s) -> np.ndarray:
    """Class probabilities for one feature vector or a batch (rows)."""
    s = np.asarray(s, dtype=np.float64)
    if s.shape[-1] != net.input_dim:
        raise DimensionError(f"expected {net.input_dim} features, got {s.shape[-1]}")
    return _forward_all(net, np.atleast_2d(s))[1][-1].reshape(s.shape[:-1] + (net.class_count,))


def cross_entropy(net: MlpNetwork, S, labels, reduction: str = "sum") -> float:
    """``-sum_n log p_n[label_n]``; labels are 0-based class indices."""
    P = forward(net, np.atleast_2d(S))
    labels = np.asarray(labels)
    ll = -np.log(np.maximum(P[np.arange(labels.size), labels], PROB_EPS))
    return float(ll.sum() if reduction == "sum" else ll.mean())


def backprop(net: MlpNetwork, S, labels, reduction: str = "sum"):
    """Loss and gradients ``[(dW_0, db_0), ...]`` of :func:`cross_entropy`."""
    S = np.atleast_2d(np.asarray(S, dtype=np.float64))
    labels = np.asarray(labels)
    pres, acts = _forward_all(net, S)
    P = acts[-1]
    n = labels.size
    loss = -np.log(np.maximum(P[np.arange(n), labels], PROB_EPS))
    scale = 1.0 if reduction == "sum" else 1.0 / n
    delta = P.copy()
    delta[np.arange(n), labels] -= 1.0
    delta *= scale
    grads = [None] * len(net.weights)
    for i in reversed(range(len(net.weights))):
        grads[i] = (acts[i].T @ delta, delta.sum(axis=0))
        if i:
            delta = (delta @ net.weights[i].T) * (pres[i - 1] > 0)
    total = float(loss.sum() * scale)
    return total, grads


@dataclass(frozen=True, eq=False)
class TrainTestSplit:
    train_rows: np.ndarray
    train_cols: np.ndarray
    train_labels: np.ndarray  # 1-based class labels
    test_rows: np.ndarray
    test_cols: np.ndarray
    test_labels: np.ndarray
    rate: float
    seed: int
    class_count: int = 0
    train_counts: dict = field(default_factory=dict)


def split_train_test(gt: LabelMap, rate: float, seed: int) -> TrainTestSplit:
    """Stratified random split: ``round(rate * n_c)`` training pixels per class (at least 1)."""
    if not 0 < rate < 1:
        raise ValueError(f"training rate must lie in (0, 1), got {rate}")
    rng = np.random.default_rng(seed)
    tr, te = [], []
    counts = {}
    for c in range(1, gt.class_count + 1):
        idx = np.flatnonzero(gt.labels.ravel(order="F") == c)
        if idx.size == 0:
            continue
        if idx.size < 2:
            raise SplitError(f"class {c} has {idx.size} labeled pixel(s); at least 2 are needed")
        n_train = min(max(1, int(math.floor(rate * idx.size + 0.5))), idx.size - 1)
        perm = rng.permutation(idx)
        tr.append(np.sort(perm[:n_train]))
        te.append(np.sort(perm[n_train:]))
        counts[c] = n_train
    tr = np.concatenate(tr)
    te = np.concatenate(te)
    M = gt.rows
    flat = gt.labels.ravel(order="F")
    return TrainTestSplit(
        tr % M, tr // M, flat[tr], te % M, te // M, flat[te], float(rate), int(seed), gt.class_count, counts
    )


def _pixels(features: SpectralCube, rows, cols) -> np.ndarray:
    return features.data[rows, cols, :]


def standardized(net: MlpNetwork, S: np.ndarray) -> MlpNetwork:
    """Copy of ``net`` with per-band z-scoring fitted on samples ``S``."""
    mean = S.mean(axis=0)
    std = S.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return replace(net, input_mean=mean, input_scale=std)


def train(
    net: MlpNetwork,
    split: TrainTestSplit,
    features: SpectralCube,
    epochs: int = 300,
    learning_rate: float = 1e-2,
    batch_size: int = 64,
    seed: int = 0,
    standardize: bool = True,
):
    """Mini-batch gradient descent on the mean cross-entropy.

    Returns ``(trained_network, per_epoch_loss)``.
    """
    if features.bands != net.input_dim:
        raise DimensionError(f"features have {features.bands} bands, network expects {net.input_dim}")
    S = _pixels(features, split.train_rows, split.train_cols)
    labels = split.train_labels - 1
    if labels.max() >= net.class_count:
        raise DimensionError("training labels exceed the network's class count")
    if standardize:
        net = standardized(net, S)
    ws = [w.copy() for w in net.weights]
    bs = [b.copy() for b in net.biases]
    rng = np.random.default_rng(seed)
    n = labels.size
    trace = []
    for epoch in range(int(epochs)):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            sel = order[start:start + batch_size]
            cur = replace(net, weights=tuple(ws), biases=tuple(bs))
            loss, grads = backprop(cur, S[sel], labels[sel], reduction="mean")
            if not math.isfinite(loss):
                raise TrainingDivergenceError(f"non-finite loss at epoch {epoch + 1}")
            total += loss * sel.size
            for i, (gw, gb) in enumerate(grads):
                ws[i] -= learning_rate * gw
                bs[i] -= learning_rate * gb
        trace.append(total / n)
    out = replace(net, weights=tuple(ws), biases=tuple(bs))
    out.__post_init__()
    return out, trace


def predict_map(net: MlpNetwork, features: SpectralCube) -> LabelMap:
    """Argmax label per pixel (ties go to the lowest class index)."""
    if features.bands != net.input_dim:
        raise DimensionError(f"features have {features.bands} bands, network expects {net.input_dim}")
    P = forward(net, features.data.reshape(-1, features.bands))
    lab = np.argmax(P, axis=1).reshape(features.rows, features.cols) + 1
    return LabelMap(lab, net.class_count)


@dataclass
class Metrics:
    overall_accuracy: float
    average_accuracy: float
    kappa: float
    per_class: dict
    confusion: np.ndarray  # rows = reference class, cols = predicted class

    def as_dict(self) -> dict:
        return {
            "overall_accuracy": self.overall_accuracy,
            "average_accuracy": self.average_accuracy,
            "kappa": self.kappa,
            "per_class": {int(k): v for k, v in self.per_class.items()},
            "confusion": self.confusion.tolist(),
        }


def metrics_from_confusion(cm) -> Metrics:
    cm = np.asarray(cm, dtype=np.float64)
    n = cm.sum()
    if n <= 0:
        raise ValueError("confusion matrix is empty")
    oa = float(np.trace(cm) / n)
    support = cm.sum(axis=1)
    per_class = {c + 1: float(cm[c, c] / support[c]) for c in range(cm.shape[0]) if support[c] > 0}
    aa = float(np.mean(list(per_class.values())))
    pe = float(support @ cm.sum(axis=0) / n ** 2)
    kappa = 1.0 if pe == 1.0 else (oa - pe) / (1.0 - pe)
    return Metrics(oa, aa, float(kappa), per_class, cm.astype(np.int64))


def metrics(pred: LabelMap, gt: LabelMap, mask=None) -> Metrics:
    """OA, AA, Cohen's kappa and per-class accuracy over ground-truth-labeled pixels.

    ``mask`` optionally restricts evaluation further (e.g. to test pixels).
    """
    if pred.labels.shape != gt.labels.shape:
        raise DimensionError(f"prediction {pred.labels.shape} and reference {gt.labels.shape} differ in shape")
    sel = gt.labels > 0
    if mask is not None:
        sel &= np.asarray(mask, dtype=bool)
    if not np.any(sel):
        raise ValueError("no labeled pixels to evaluate")
    C = max(gt.class_count, pred.class_count)
    ref = gt.labels[sel] - 1
    hat = pred.labels[sel]
    cm = np.zeros((C, C), dtype=np.int64)
    ok = hat > 0
    np.add.at(cm, (ref[ok], hat[ok] - 1), 1)
    m = metrics_from_confusion(cm) if ok.any() else None
    if m is None or not ok.all():
        # unassigned predictions (label 0) are errors with no confusion column
        total = int(sel.sum())
        m = m or Metrics(0.0, 0.0, 0.0, {}, cm)
        m.overall_accuracy = float(np.trace(cm) / total)
    return m


def split_mask(split: TrainTestSplit, shape) -> np.ndarray:
    m = np.zeros(shape, dtype=bool)
    m[split.test_rows, split.test_cols] = True
    return m
