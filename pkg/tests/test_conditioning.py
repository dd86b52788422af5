"""Noise encodings and the spectral-statistics classifier."""

import numpy as np
import pytest

from sediff.conditioning import (
    ClassifierTrainConfig,
    ConditioningError,
    NoiseClassifier,
    NoiseEncoding,
    classify,
    encode_class,
    encode_latent,
    train_classifier,
)
from sediff.dataset import mix_at_snr, synth_clean, synth_noise
from sediff.dsp import Waveform


def _make_dataset(n_per_class=10, duration=0.6, seed=0, n_classes=4):
    rng = np.random.default_rng(seed)
    data = []
    for cls in range(n_classes):
        for i in range(n_per_class):
            clean = synth_clean(["harmonic", "chirp", "am_tone"][i % 3], duration,
                                seed=int(rng.integers(1 << 30)))
            noise = synth_noise(cls, duration, seed=int(rng.integers(1 << 30)))
            noisy, _ = mix_at_snr(clean, noise, float(rng.choice([0.0, 5.0, 10.0, 15.0])))
            data.append((noisy, cls))
    return data


@pytest.fixture(scope="module")
def trained():
    train_data = _make_dataset(n_per_class=12, seed=1)
    val_data = _make_dataset(n_per_class=5, seed=2)
    clf = train_classifier(train_data, ClassifierTrainConfig(epochs=250, seed=3),
                           val_dataset=val_data)
    return clf, val_data


class TestEncodings:
    def test_one_hot_vectors(self):
        assert encode_class(0, 4).vector().tolist() == [1.0, 0.0, 0.0, 0.0]
        assert encode_class(3, 4).vector().tolist() == [0.0, 0.0, 0.0, 1.0]

    def test_twelve_classes_supported(self):
        enc = encode_class(7, 12)
        assert enc.dim == 12
        assert enc.vector()[7] == 1.0

    def test_out_of_range_label_rejected(self):
        with pytest.raises(ConditioningError):
            encode_class(4, 4)
        with pytest.raises(ConditioningError):
            encode_class(-1, 4)

    def test_exactly_one_payload(self):
        with pytest.raises(ConditioningError):
            NoiseEncoding(kind="class", class_index=1, n_classes=4,
                          latent=np.zeros(3))
        with pytest.raises(ConditioningError):
            NoiseEncoding(kind="latent")


class TestClassifier:
    def test_holdout_accuracy_at_least_90pct(self, trained):
        clf, _ = trained
        assert clf.accuracy >= 0.90

    def test_probabilities_form_a_simplex(self, trained):
        clf, val_data = trained
        for noisy, _ in val_data[:8]:
            probs = clf.predict_proba(noisy)
            assert probs.shape == (4,)
            assert np.all(probs >= 0)
            assert abs(probs.sum() - 1.0) < 1e-6

    def test_permuted_labels_score_chance(self):
        rng = np.random.default_rng(9)
        train_data = _make_dataset(n_per_class=10, seed=5)
        labels = [cls for _, cls in train_data]
        rng.shuffle(labels)
        shuffled = [(w, l) for (w, _), l in zip(train_data, labels)]
        val_data = _make_dataset(n_per_class=6, seed=6)
        clf = train_classifier(shuffled, ClassifierTrainConfig(epochs=120, seed=7),
                               val_dataset=val_data)
        assert clf.accuracy < 0.6

    def test_silence_input_returns_a_label(self, trained):
        clf, _ = trained
        silence = Waveform(np.zeros(9600))
        label = classify(clf, silence)
        assert 0 <= label < 4

    def test_argmax_ties_break_low(self):
        assert int(np.argmax(np.array([0.25, 0.25, 0.25, 0.25]))) == 0

    def test_untrained_classifier_rejected(self):
        clf = NoiseClassifier(n_classes=4)
        with pytest.raises(ConditioningError):
            classify(clf, Waveform(np.zeros(9600)))

    def test_single_class_dataset_rejected(self):
        data = [(Waveform(np.random.default_rng(0).normal(size=9600)), 2)
                for _ in range(6)]
        with pytest.raises(ConditioningError):
            train_classifier(data)

    def test_determinism_per_seed(self):
        train_data = _make_dataset(n_per_class=6, seed=11)
        val_data = _make_dataset(n_per_class=3, seed=12)
        a = train_classifier(train_data, ClassifierTrainConfig(epochs=60, seed=13),
                             val_dataset=val_data)
        b = train_classifier(train_data, ClassifierTrainConfig(epochs=60, seed=13),
                             val_dataset=val_data)
        np.testing.assert_array_equal(a.w1, b.w1)
        assert a.accuracy == b.accuracy

    def test_checkpoint_roundtrip(self, trained, tmp_path):
        clf, val_data = trained
        path = tmp_path / "clf.ckpt"
        clf.save(path)
        restored = NoiseClassifier.load(path)
        for noisy, _ in val_data[:4]:
            assert classify(restored, noisy) == classify(clf, noisy)
        # float32 serialization perturbs probabilities only marginally
        np.testing.assert_allclose(restored.predict_proba(val_data[0][0]),
                                   clf.predict_proba(val_data[0][0]), atol=1e-4)


class TestLatentEncoding:
    def test_deterministic_and_fixed_width(self, trained):
        clf, val_data = trained
        noisy = val_data[0][0]
        a = encode_latent(noisy, clf)
        b = encode_latent(noisy, clf)
        assert a.kind == "latent"
        assert a.dim == clf.hidden
        np.testing.assert_array_equal(a.vector(), b.vector())
        longer = Waveform(np.concatenate([noisy.samples, noisy.samples]))
        assert encode_latent(longer, clf).dim == clf.hidden

    def test_same_class_closer_than_cross_class(self, trained):
        """Average cosine similarity within a noise class must beat the
        cross-class average (the embedding reflects noise character)."""
        clf, val_data = trained
        by_class: dict[int, list] = {}
        for noisy, cls in val_data:
            v = encode_latent(noisy, clf).vector()
            by_class.setdefault(cls, []).append(v / np.linalg.norm(v))
        within, across = [], []
        classes = sorted(by_class)
        for ci in classes:
            vs = by_class[ci]
            for i in range(len(vs)):
                for j in range(i + 1, len(vs)):
                    within.append(float(vs[i] @ vs[j]))
            for cj in classes:
                if cj <= ci:
                    continue
                for a in by_class[ci]:
                    for b in by_class[cj]:
                        across.append(float(a @ b))
        assert np.mean(within) > np.mean(across)
