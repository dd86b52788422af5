"""Synthetic corpus: signal contracts, SNR mixing, manifest hygiene."""

import numpy as np
import pytest

from sediff.dataset import (
    NUM_NOISE_CLASSES,
    TEST_SNRS,
    TRAIN_SNRS,
    CorpusConfig,
    DatasetError,
    Manifest,
    build_corpus,
    mix_at_snr,
    synth_clean,
    synth_noise,
)
from sediff.dsp import SAMPLE_RATE, Waveform, read_wav


def _band_energies_db(x, n_bands=16):
    """Welch-style mean power per log-spaced band, in dB."""
    seg = 2048
    hops = range(0, len(x) - seg + 1, seg // 2)
    window = np.hanning(seg)
    psd = np.zeros(seg // 2 + 1)
    for start in hops:
        spec = np.fft.rfft(x[start:start + seg] * window)
        psd += np.abs(spec) ** 2
    psd /= len(list(hops))
    freqs = np.fft.rfftfreq(seg, d=1.0 / SAMPLE_RATE)
    edges = np.geomspace(50.0, 8000.0, n_bands + 1)
    out = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        mask = (freqs >= lo) & (freqs < hi)
        out.append(10 * np.log10(psd[mask].mean()))
    return np.array(out), edges


class TestSynthClean:
    @pytest.mark.parametrize("kind", ["harmonic", "chirp", "am_tone"])
    def test_peak_is_half_exactly(self, kind):
        wf = synth_clean(kind, 0.6, seed=5)
        assert np.abs(wf.samples).max() == 0.5

    def test_deterministic_per_seed(self):
        a = synth_clean("harmonic", 0.6, seed=9)
        b = synth_clean("harmonic", 0.6, seed=9)
        assert np.array_equal(a.samples, b.samples)
        c = synth_clean("harmonic", 0.6, seed=10)
        assert not np.array_equal(a.samples, c.samples)

    def test_harmonic_spectral_peaks(self):
        wf = synth_clean("harmonic", 1.0, seed=123)
        spec = np.abs(np.fft.rfft(wf.samples))
        freqs = np.fft.rfftfreq(len(wf), d=1.0 / SAMPLE_RATE)
        f_peak = freqs[np.argmax(spec)]
        # The strongest line sits on a low harmonic of some f0 in [120, 320].
        assert 100.0 < f_peak < 1000.0

    def test_too_short_rejected(self):
        with pytest.raises(DatasetError):
            synth_clean("harmonic", 0.2, seed=0)

    def test_unknown_kind(self):
        with pytest.raises(DatasetError):
            synth_clean("violin", 0.6, seed=0)


class TestSynthNoise:
    @pytest.mark.parametrize("class_id", range(NUM_NOISE_CLASSES))
    def test_unit_rms(self, class_id):
        wf = synth_noise(class_id, 1.0, seed=3)
        rms = np.sqrt(np.mean(wf.samples**2))
        assert rms == pytest.approx(1.0, abs=1e-6)

    def test_white_is_flat(self):
        wf = synth_noise(0, 4.0, seed=17)
        bands, _ = _band_energies_db(wf.samples)
        # Flat within +-3 dB across bands (estimator noise included).
        assert bands.max() - bands.min() < 6.0

    def test_pink_slope(self):
        wf = synth_noise(1, 4.0, seed=29)
        bands, edges = _band_energies_db(wf.samples)
        octaves = np.log2(np.sqrt(edges[:-1] * edges[1:]))
        slope = np.polyfit(octaves, bands, 1)[0]
        assert slope == pytest.approx(-3.0, abs=1.0)

    def test_unknown_class(self):
        with pytest.raises(DatasetError):
            synth_noise(7, 1.0, seed=0)


class TestMixAtSnr:
    def test_zero_snr_power_balance(self):
        clean = synth_clean("harmonic", 0.6, seed=1)
        noise = synth_noise(0, 0.6, seed=2)
        noisy, gain = mix_at_snr(clean, noise, 0.0)
        p_clean = np.mean(clean.samples**2)
        p_noise = np.mean((gain * noise.samples) ** 2)
        assert p_noise == pytest.approx(p_clean, rel=1e-9)

    def test_closed_form_gain(self):
        n = 8000
        clean = Waveform(np.full(n, 1.0))
        t = np.arange(n)
        noise = Waveform(np.sqrt(2.0) * np.sin(2 * np.pi * 997 * t / SAMPLE_RATE))
        p_noise = np.mean(noise.samples**2)
        _, gain = mix_at_snr(clean, noise, 10.0)
        assert gain == pytest.approx(np.sqrt(1.0 / (p_noise * 10.0)), rel=1e-12)

    def test_high_snr_approaches_clean(self):
        clean = synth_clean("am_tone", 0.6, seed=4)
        noise = synth_noise(0, 0.6, seed=5)
        noisy, _ = mix_at_snr(clean, noise, 90.0)
        assert np.max(np.abs(noisy.samples - clean.samples)) < 1e-3

    def test_zero_power_rejected(self):
        z = Waveform(np.zeros(1000))
        n = Waveform(np.ones(1000))
        with pytest.raises(DatasetError):
            mix_at_snr(z, n, 0.0)
        with pytest.raises(DatasetError):
            mix_at_snr(n, z, 0.0)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    config = CorpusConfig(root=str(root), train_count=24, val_count=8,
                          test_count=8, duration_s=0.5, seed=77)
    manifest = build_corpus(config)
    return config, manifest


class TestBuildCorpus:
    def test_split_sizes_and_disjoint_ids(self, corpus):
        _, manifest = corpus
        assert len(manifest.split("train")) == 24
        assert len(manifest.split("val")) == 8
        assert len(manifest.split("test")) == 8
        ids = [r.utt_id for r in manifest.records]
        assert len(ids) == len(set(ids))

    def test_snr_set_membership(self, corpus):
        _, manifest = corpus
        for rec in manifest.records:
            allowed = TEST_SNRS if rec.split == "test" else TRAIN_SNRS
            assert rec.snr_db in allowed

    def test_class_balance_within_one(self, corpus):
        _, manifest = corpus
        for split in ("train", "val", "test"):
            counts = np.bincount(
                [r.noise_class for r in manifest.split(split)], minlength=NUM_NOISE_CLASSES
            )
            assert counts.max() - counts.min() <= 1

    def test_achieved_snr_matches_manifest(self, corpus):
        _, manifest = corpus
        for rec in manifest.records[:8]:
            clean = read_wav(manifest.resolve(rec.clean_path))
            noisy = read_wav(manifest.resolve(rec.noisy_path))
            residual = noisy.samples - clean.samples
            achieved = 10 * np.log10(
                np.mean(clean.samples**2) / np.mean(residual**2)
            )
            assert achieved == pytest.approx(rec.snr_db, abs=0.01)

    def test_rebuild_is_byte_identical(self, corpus, tmp_path):
        config, manifest = corpus
        other = CorpusConfig(root=str(tmp_path / "again"), train_count=24, val_count=8,
                             test_count=8, duration_s=0.5, seed=77)
        manifest2 = build_corpus(other)
        original = (manifest.root / "manifest.csv").read_bytes()
        rebuilt = (manifest2.root / "manifest.csv").read_bytes()
        assert original == rebuilt
        for rec in manifest.records[:4]:
            a = manifest.resolve(rec.noisy_path).read_bytes()
            b = manifest2.resolve(rec.noisy_path).read_bytes()
            assert a == b

    def test_manifest_roundtrip(self, corpus):
        _, manifest = corpus
        loaded = Manifest.load(manifest.root / "manifest.csv")
        assert loaded.records == manifest.records
