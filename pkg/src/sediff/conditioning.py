"""Noise encodings: class labels from a small spectral classifier, or the
classifier's hidden layer as a latent embedding.

The classifier works on pooled log-Mel statistics (per-band mean, deviation,
and mean frame-to-frame delta), standardized and fed through a one-hidden-
layer perceptron. That is deliberately small: the four synthetic noise classes
are separated by their spectral envelopes, not by anything temporal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .dsp import N_MELS, Waveform, stft_mel
from .nn.optim import Adam

FEATURE_DIM = 3 * N_MELS


class ConditioningError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseEncoding:
    """Global condition: exactly one of class_index / latent is present."""

    kind: str                        # "class" | "latent"
    class_index: int | None = None
    n_classes: int | None = None
    latent: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "class":
            if self.class_index is None or self.n_classes is None or self.latent is not None:
                raise ConditioningError("class encoding needs class_index and n_classes only")
            if not (0 <= self.class_index < self.n_classes):
                raise ConditioningError(
                    f"label {self.class_index} out of range 0..{self.n_classes - 1}"
                )
        elif self.kind == "latent":
            if self.latent is None or self.class_index is not None:
                raise ConditioningError("latent encoding needs a latent vector only")
        else:
            raise ConditioningError(f"unknown encoding kind {self.kind!r}")

    @property
    def dim(self) -> int:
        return self.n_classes if self.kind == "class" else len(self.latent)

    def vector(self) -> np.ndarray:
        """The vector handed to the model's encoding projection (one-hot or latent)."""
        if self.kind == "class":
            v = np.zeros(self.n_classes)
            v[self.class_index] = 1.0
            return v
        return np.asarray(self.latent, dtype=np.float64)


def encode_class(label: int, n_classes: int) -> NoiseEncoding:
    return NoiseEncoding(kind="class", class_index=int(label), n_classes=int(n_classes))


def noise_features(noisy: Waveform) -> np.ndarray:
    """Pooled spectral statistics: per-band mean, std, and mean |delta|."""
    mel = stft_mel(noisy).data                      # (F, 80)
    mean = mel.mean(axis=0)
    std = mel.std(axis=0)
    delta = np.abs(np.diff(mel, axis=0)).mean(axis=0) if mel.shape[0] > 1 \
        else np.zeros(N_MELS)
    return np.concatenate([mean, std, delta])


class NoiseClassifier:
    """Standardizer + one-hidden-layer MLP over pooled spectral features."""

    def __init__(self, n_classes: int, hidden: int = 64, seed: int = 0):
        if n_classes < 2:
            raise ConditioningError("need at least 2 classes")
        rng = np.random.default_rng(seed)
        self.n_classes = n_classes
        self.hidden = hidden
        self.mu = np.zeros(FEATURE_DIM)
        self.sd = np.ones(FEATURE_DIM)
        self.w1 = rng.standard_normal((hidden, FEATURE_DIM)) / np.sqrt(FEATURE_DIM)
        self.b1 = np.zeros(hidden)
        self.w2 = rng.standard_normal((n_classes, hidden)) / np.sqrt(hidden)
        self.b2 = np.zeros(n_classes)
        self.trained = False
        self.accuracy = float("nan")

    # -- core math ---------------------------------------------------------

    def _standardize(self, feats: np.ndarray) -> np.ndarray:
        return (feats - self.mu[:, None]) / self.sd[:, None]

    def _forward(self, feats_std: np.ndarray):
        z1 = self.w1 @ feats_std + self.b1[:, None]
        a1 = np.tanh(z1)
        z2 = self.w2 @ a1 + self.b2[:, None]
        z2 = z2 - z2.max(axis=0, keepdims=True)
        expz = np.exp(z2)
        probs = expz / expz.sum(axis=0, keepdims=True)
        return a1, probs

    def predict_proba(self, noisy: Waveform) -> np.ndarray:
        self._require_trained()
        feats = self._standardize(noise_features(noisy)[:, None])
        _, probs = self._forward(feats)
        return probs[:, 0]

    def hidden_activation(self, noisy: Waveform) -> np.ndarray:
        self._require_trained()
        feats = self._standardize(noise_features(noisy)[:, None])
        a1, _ = self._forward(feats)
        return a1[:, 0]

    def _require_trained(self):
        if not self.trained:
            raise ConditioningError("classifier is not trained")

    # -- persistence ---------------------------------------------------------

    def save(self, path) -> None:
        header = {"arch": "noise_classifier", "n_classes": self.n_classes,
                  "hidden": self.hidden, "accuracy": repr(self.accuracy)}
        params = {"mu": self.mu, "sd": self.sd, "w1": self.w1, "b1": self.b1,
                  "w2": self.w2, "b2": self.b2}
        save_checkpoint(path, header, params)

    @classmethod
    def load(cls, path) -> "NoiseClassifier":
        header, params = load_checkpoint(path)
        if header.get("arch") != "noise_classifier":
            raise ConditioningError(f"{path} is not a classifier checkpoint")
        clf = cls(int(header["n_classes"]), hidden=int(header["hidden"]))
        clf.mu = params["mu"].astype(np.float64)
        clf.sd = params["sd"].astype(np.float64)
        clf.w1 = params["w1"].astype(np.float64)
        clf.b1 = params["b1"].astype(np.float64)
        clf.w2 = params["w2"].astype(np.float64)
        clf.b2 = params["b2"].astype(np.float64)
        clf.trained = True
        clf.accuracy = float(header.get("accuracy", "nan"))
        return clf


@dataclass(frozen=True)
class ClassifierTrainConfig:
    lr: float = 1e-2
    epochs: int = 300
    hidden: int = 64
    seed: int = 0
    holdout_fraction: float = 0.2


def train_classifier(
    dataset: list[tuple[Waveform, int]],
    hyper: ClassifierTrainConfig = ClassifierTrainConfig(),
    val_dataset: list[tuple[Waveform, int]] | None = None,
) -> NoiseClassifier:
    """Full-batch Adam on softmax cross-entropy; deterministic per seed.

    Held-out accuracy comes from val_dataset when given, otherwise from a
    stratified tail split of the training data (no utterance overlap).
    """
    labels = sorted({label for _, label in dataset})
    if len(labels) < 2:
        raise ConditioningError("single-class dataset")
    n_classes = max(labels) + 1

    if val_dataset is None:
        by_class: dict[int, list] = {}
        for item in dataset:
            by_class.setdefault(item[1], []).append(item)
        train_items, val_items = [], []
        for cls_items in by_class.values():
            k = max(1, int(round(len(cls_items) * hyper.holdout_fraction)))
            val_items.extend(cls_items[-k:])
            train_items.extend(cls_items[:-k])
    else:
        train_items, val_items = list(dataset), list(val_dataset)
    if not train_items or not val_items:
        raise ConditioningError("not enough data to split")

    feats = np.stack([noise_features(w) for w, _ in train_items], axis=1)
    y = np.array([label for _, label in train_items])
    clf = NoiseClassifier(n_classes, hidden=hyper.hidden, seed=hyper.seed)
    clf.mu = feats.mean(axis=1)
    clf.sd = np.maximum(feats.std(axis=1), 1e-8)
    x = clf._standardize(feats)
    onehot = np.zeros((n_classes, y.size))
    onehot[y, np.arange(y.size)] = 1.0

    params = {"w1": clf.w1, "b1": clf.b1, "w2": clf.w2, "b2": clf.b2}
    adam = Adam(params, lr=hyper.lr)
    n = y.size
    for _ in range(hyper.epochs):
        a1, probs = clf._forward(x)
        dz2 = (probs - onehot) / n
        dw2 = dz2 @ a1.T
        db2 = dz2.sum(axis=1)
        da1 = clf.w2.T @ dz2
        dz1 = da1 * (1.0 - a1**2)
        dw1 = dz1 @ x.T
        db1 = dz1.sum(axis=1)
        adam.step({"w1": dw1, "b1": db1, "w2": dw2, "b2": db2})

    clf.trained = True
    correct = sum(1 for w, label in val_items if classify(clf, w) == label)
    clf.accuracy = correct / len(val_items)
    return clf


def classify(classifier: NoiseClassifier, noisy: Waveform) -> int:
    """Argmax label; ties break toward the lowest index (np.argmax semantics)."""
    return int(np.argmax(classifier.predict_proba(noisy)))


def encode_latent(noisy: Waveform, classifier: NoiseClassifier) -> NoiseEncoding:
    """Last-hidden-layer activations as an open-domain noise embedding."""
    return NoiseEncoding(kind="latent", latent=classifier.hidden_activation(noisy))
