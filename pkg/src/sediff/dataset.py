"""Synthetic desk-scale corpus: clean signal synthesis, parametric noise
classes, SNR mixing, and manifest-driven corpus construction.

Clean signals are band-limited deterministic tones (harmonic stacks, chirps,
AM tones) peak-normalized to 0.5. Noise comes in four parametric classes with
distinct spectral signatures: white, pink (1/f), mains hum plus harmonics, and
an amplitude-modulated babble proxy. Train/val utterances mix at SNRs
{0, 5, 10, 15} dB and test utterances at {2.5, 7.5, 12.5, 17.5} dB.

An external corpus can be imported by writing WAV triplets and a manifest in
the same schema; nothing downstream cares where the files came from.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsp import SAMPLE_RATE, Waveform, read_wav, write_wav

TRAIN_SNRS = (0.0, 5.0, 10.0, 15.0)
TEST_SNRS = (2.5, 7.5, 12.5, 17.5)
CLEAN_KINDS = ("harmonic", "chirp", "am_tone")
NUM_NOISE_CLASSES = 4
NOISE_CLASS_NAMES = ("white", "pink", "hum", "babble")


class DatasetError(ValueError):
    pass


def _edge_ramp(n: int, ramp: int = 80) -> np.ndarray:
    """Raised-cosine fade-in/out to avoid clicks at utterance edges."""
    env = np.ones(n)
    r = np.minimum(ramp, n // 2)
    ramp_curve = 0.5 - 0.5 * np.cos(np.pi * np.arange(r) / r)
    env[:r] = ramp_curve
    env[n - r:] = ramp_curve[::-1]
    return env


def _peak_normalize(x: np.ndarray, peak: float = 0.5) -> np.ndarray:
    top = np.abs(x).max()
    if top == 0.0:
        raise DatasetError("cannot normalize an all-zero signal")
    # x / top is exactly 1.0 at the extremal sample, so the peak is exact.
    return x / top * peak


def synth_clean(kind: str, duration_s: float, seed: int) -> Waveform:
    """Deterministic band-limited clean signal, peak 0.5."""
    if duration_s < 0.5:
        raise DatasetError(f"duration must be >= 0.5 s, got {duration_s}")
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE

    if kind == "harmonic":
        f0 = rng.uniform(120.0, 320.0)
        n_harm = min(20, int(7600.0 / f0))
        decay = rng.uniform(0.6, 1.4)
        x = np.zeros(n)
        for k in range(1, n_harm + 1):
            x += np.sin(2 * np.pi * k * f0 * t + rng.uniform(0, 2 * np.pi)) / k**decay
    elif kind == "chirp":
        f_lo = rng.uniform(200.0, 500.0)
        f_hi = rng.uniform(1500.0, 4000.0)
        # log sweep: phase = 2*pi * f_lo * (exp(t/tau)-1) * tau
        tau = duration_s / np.log(f_hi / f_lo)
        phase = 2 * np.pi * f_lo * tau * (np.exp(t / tau) - 1.0)
        x = np.sin(phase + rng.uniform(0, 2 * np.pi))
    elif kind == "am_tone":
        fc = rng.uniform(400.0, 2000.0)
        fm = rng.uniform(2.0, 8.0)
        depth = rng.uniform(0.5, 0.9)
        x = (1.0 + depth * np.sin(2 * np.pi * fm * t + rng.uniform(0, 2 * np.pi))) \
            * np.sin(2 * np.pi * fc * t + rng.uniform(0, 2 * np.pi))
    else:
        raise DatasetError(f"unknown clean kind {kind!r}")

    return Waveform(_peak_normalize(x * _edge_ramp(n)))


def _rms_normalize(x: np.ndarray) -> np.ndarray:
    rms = float(np.sqrt(np.mean(np.square(x))))
    if rms == 0.0:
        raise DatasetError("cannot normalize an all-zero signal")
    return x / rms


def synth_noise(class_id: int, duration_s: float, seed: int) -> Waveform:
    """Unit-RMS noise with the class's spectral signature."""
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE

    if class_id == 0:  # white
        x = rng.standard_normal(n)
    elif class_id == 1:  # pink: power ~ 1/f, -3 dB/octave band energy
        spec = np.fft.rfft(rng.standard_normal(n))
        freqs = np.fft.rfftfreq(n, d=1.0 / SAMPLE_RATE)
        scale = np.zeros_like(freqs)
        scale[1:] = 1.0 / np.sqrt(freqs[1:])
        x = np.fft.irfft(spec * scale, n=n)
    elif class_id == 2:  # mains hum: 50 Hz harmonics + faint broadband floor
        x = np.zeros(n)
        for k in range(1, 17):
            x += np.sin(2 * np.pi * 50.0 * k * t + rng.uniform(0, 2 * np.pi)) / k
        x = _rms_normalize(x) + 10 ** (-35.0 / 20.0) * rng.standard_normal(n)
    elif class_id == 3:  # babble proxy: band-passed noise with slow AM envelope
        spec = np.fft.rfft(rng.standard_normal(n))
        freqs = np.fft.rfftfreq(n, d=1.0 / SAMPLE_RATE)
        band = np.exp(-0.5 * ((np.log(np.maximum(freqs, 1.0)) - np.log(900.0)) / 0.8) ** 2)
        carrier = np.fft.irfft(spec * band, n=n)
        env_spec = np.fft.rfft(rng.standard_normal(n))
        env_mask = freqs < 6.0
        env = np.fft.irfft(env_spec * env_mask, n=n)
        env = 1.0 + 0.9 * env / max(np.abs(env).max(), 1e-12)
        x = carrier * np.maximum(env, 0.05)
    else:
        raise DatasetError(f"unknown noise class {class_id}")

    return Waveform(_rms_normalize(x))


def mix_at_snr(clean: Waveform, noise: Waveform, snr_db: float) -> tuple[Waveform, float]:
    """Return (clean + g*noise, g) with g set so the power ratio is snr_db."""
    if len(clean) != len(noise):
        raise DatasetError(f"length mismatch: {len(clean)} vs {len(noise)}")
    p_clean = float(np.mean(np.square(clean.samples)))
    p_noise = float(np.mean(np.square(noise.samples)))
    if p_clean == 0.0 or p_noise == 0.0:
        raise DatasetError("zero-power input")
    gain = float(np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0))))
    return Waveform(clean.samples + gain * noise.samples), gain


@dataclass(frozen=True)
class ManifestRecord:
    utt_id: str
    split: str
    clean_path: str
    noisy_path: str
    noise_class: int
    snr_db: float


@dataclass
class Manifest:
    root: Path
    records: list[ManifestRecord] = field(default_factory=list)

    def resolve(self, rel_path: str) -> Path:
        return self.root / rel_path

    def split(self, name: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.split == name]

    def save(self, path=None) -> Path:
        path = Path(path) if path is not None else self.root / "manifest.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "split", "clean_path", "noisy_path", "noise_class", "snr_db"])
            for r in self.records:
                writer.writerow([r.utt_id, r.split, r.clean_path, r.noisy_path,
                                 r.noise_class, repr(r.snr_db)])
        return path

    @classmethod
    def load(cls, path) -> "Manifest":
        path = Path(path)
        manifest = cls(root=path.parent)
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            expected = ["id", "split", "clean_path", "noisy_path", "noise_class", "snr_db"]
            if header != expected:
                raise DatasetError(f"bad manifest header {header}")
            for row in reader:
                manifest.records.append(
                    ManifestRecord(row[0], row[1], row[2], row[3], int(row[4]), float(row[5]))
                )
        return manifest


@dataclass(frozen=True)
class CorpusConfig:
    root: str
    train_count: int = 400
    val_count: int = 50
    test_count: int = 50
    duration_s: float = 0.7
    seed: int = 2024


def build_corpus(config: CorpusConfig) -> Manifest:
    """Generate WAV pairs and the manifest; deterministic per seed.

    Noise classes and clean kinds are assigned round-robin so per-class counts
    are balanced within 1; SNRs cycle through the split's allowed set.
    """
    root = Path(config.root)
    (root / "clean").mkdir(parents=True, exist_ok=True)
    (root / "noisy").mkdir(parents=True, exist_ok=True)
    seed_seq = np.random.SeedSequence(config.seed)
    manifest = Manifest(root=root)

    splits = (
        ("train", config.train_count, TRAIN_SNRS),
        ("val", config.val_count, TRAIN_SNRS),
        ("test", config.test_count, TEST_SNRS),
    )
    utt_seeds = seed_seq.spawn(sum(count for _, count, _ in splits))
    cursor = 0
    for split, count, snr_set in splits:
        for i in range(count):
            child = utt_seeds[cursor]
            cursor += 1
            utt_id = f"{split}_{i:04d}"
            kind = CLEAN_KINDS[i % len(CLEAN_KINDS)]
            noise_class = i % NUM_NOISE_CLASSES
            snr_db = snr_set[(i // NUM_NOISE_CLASSES) % len(snr_set)]
            clean_seed, noise_seed = (int(s) for s in child.generate_state(2))
            clean = synth_clean(kind, config.duration_s, clean_seed)
            noise = synth_noise(noise_class, config.duration_s, noise_seed)
            noisy, _ = mix_at_snr(clean, noise, snr_db)
            # Common rescale keeps the pair inside 16-bit range without
            # touching the SNR; low-SNR mixes would otherwise clip.
            headroom = 0.99 / max(float(np.abs(noisy.samples).max()), 0.99)
            clean = Waveform(clean.samples * headroom)
            noisy = Waveform(noisy.samples * headroom)
            clean_rel = f"clean/{utt_id}.wav"
            noisy_rel = f"noisy/{utt_id}.wav"
            write_wav(root / clean_rel, clean)
            write_wav(root / noisy_rel, noisy)
            manifest.records.append(
                ManifestRecord(utt_id, split, clean_rel, noisy_rel, noise_class, snr_db)
            )
    manifest.save()
    return manifest


def load_pairs(manifest: Manifest, split: str) -> list[tuple[Waveform, Waveform, int, float]]:
    """Load (clean, noisy, noise_class, snr_db) tuples for a split."""
    out = []
    for rec in manifest.split(split):
        clean = read_wav(manifest.resolve(rec.clean_path))
        noisy = read_wav(manifest.resolve(rec.noisy_path))
        out.append((clean, noisy, rec.noise_class, rec.snr_db))
    return out
