"""Audio I/O, STFT, 80-band log-Mel analysis, and condition upsampling.

Fixed conventions (the pipeline depends on them, so they are constants, not
knobs): 16 kHz mono 16-bit PCM WAV; Hann window of 1024 samples, hop 256,
truncation framing (no padding inside stft_mel); 80 HTK-style triangular Mel
filters spanning 0-8000 Hz; natural log with floor 1e-5.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np

SAMPLE_RATE = 16000
WINDOW = 1024
HOP = 256
N_MELS = 80
FMIN = 0.0
FMAX = 8000.0
LOG_FLOOR = 1e-5


class AudioFormatError(ValueError):
    """Raised for WAV files that are not 16-bit PCM mono at 16 kHz."""


class DspError(ValueError):
    """Raised for out-of-contract DSP inputs (too short, not covered, ...)."""


@dataclass
class Waveform:
    """Mono sample sequence, amplitudes nominally in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise DspError(f"waveform must be 1-D, got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise DspError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return self.samples.shape[0]


@dataclass
class MelSpectrogram:
    """frames x 80 matrix of log-Mel energies."""

    data: np.ndarray
    hop: int = HOP
    window: int = WINDOW

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[1] != N_MELS:
            raise DspError(f"mel matrix must be (frames, {N_MELS}), got {self.data.shape}")

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    def to_csv(self, path) -> None:
        np.savetxt(path, self.data, delimiter=",", fmt="%.8e")


def read_wav(path) -> Waveform:
    """Read a 16-bit PCM mono 16 kHz WAV file. No implicit resampling."""
    with wave.open(str(path), "rb") as wav:
        if wav.getnchannels() != 1:
            raise AudioFormatError(
                f"{path}: expected mono, got {wav.getnchannels()} channels"
            )
        if wav.getsampwidth() != 2:
            raise AudioFormatError(
                f"{path}: expected 16-bit PCM, got {8 * wav.getsampwidth()}-bit"
            )
        if wav.getframerate() != SAMPLE_RATE:
            raise AudioFormatError(
                f"{path}: expected {SAMPLE_RATE} Hz, got {wav.getframerate()} Hz"
            )
        raw = wav.readframes(wav.getnframes())
    ints = np.frombuffer(raw, dtype="<i2")
    return Waveform(ints.astype(np.float64) / 32768.0)


def write_wav(path, waveform: Waveform) -> None:
    """Write 16-bit PCM mono. Round-trip error is bounded by 1/32768."""
    if waveform.sample_rate != SAMPLE_RATE:
        raise AudioFormatError(
            f"expected {SAMPLE_RATE} Hz waveform, got {waveform.sample_rate} Hz"
        )
    quantized = np.clip(np.rint(waveform.samples * 32768.0), -32768, 32767)
    data = quantized.astype("<i2").tobytes()
    with wave.open(str(path), "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(SAMPLE_RATE)
        wav.writeframes(data)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(
    n_mels: int = N_MELS, n_fft: int = WINDOW, sample_rate: int = SAMPLE_RATE,
    fmin: float = FMIN, fmax: float = FMAX,
) -> np.ndarray:
    """HTK-style triangular filters on the rFFT bin grid, shape (n_mels, n_fft//2+1)."""
    mel_points = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    hz_points = mel_to_hz(mel_points)
    bin_freqs = np.arange(n_fft // 2 + 1) * (sample_rate / n_fft)
    left = hz_points[:-2, None]
    center = hz_points[1:-1, None]
    right = hz_points[2:, None]
    rising = (bin_freqs[None, :] - left) / (center - left)
    falling = (right - bin_freqs[None, :]) / (right - center)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    return fb


_HANN = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(WINDOW) / WINDOW)
_MEL_FB = mel_filterbank()


def frame_count(num_samples: int) -> int:
    """Frames produced by truncation framing: floor((len - window)/hop) + 1."""
    if num_samples < WINDOW:
        raise DspError(f"need at least {WINDOW} samples, got {num_samples}")
    return (num_samples - WINDOW) // HOP + 1


def covering_length(num_samples: int) -> int:
    """Smallest padded length whose frame grid covers num_samples.

    Condition upsampling needs frames*hop >= target length; truncation framing
    of the bare signal falls short by up to window-hop samples, so pipeline
    callers zero-pad to this length before stft_mel.
    """
    needed_frames = -(-num_samples // HOP)
    return (needed_frames - 1) * HOP + WINDOW


def stft_magnitude(x: np.ndarray) -> np.ndarray:
    """Hann-windowed magnitude STFT, shape (frames, n_fft//2+1)."""
    n = frame_count(x.shape[0])
    idx = np.arange(WINDOW)[None, :] + HOP * np.arange(n)[:, None]
    frames = x[idx] * _HANN[None, :]
    return np.abs(np.fft.rfft(frames, axis=1))


def stft_mel(x: Waveform) -> MelSpectrogram:
    """80-band log-Mel spectrogram of a waveform (truncation framing)."""
    mag = stft_magnitude(x.samples)
    mel = mag @ _MEL_FB.T
    return MelSpectrogram(np.log(np.maximum(mel, LOG_FLOOR)))


def mel_for_length(x: np.ndarray, target_len: int) -> MelSpectrogram:
    """Log-Mel of x zero-padded so the frame grid covers target_len samples."""
    if x.shape[0] < target_len:
        raise DspError("waveform shorter than target length")
    padded_len = covering_length(target_len)
    if x.shape[0] >= padded_len:
        padded = x[:padded_len]
    else:
        padded = np.concatenate([x, np.zeros(padded_len - x.shape[0])])
    return stft_mel(Waveform(padded))


def upsample_condition(
    mel: MelSpectrogram, target_len: int, mode: str = "repeat"
) -> np.ndarray:
    """Expand frame-rate features to sample rate, shape (target_len, 80).

    mode="repeat" holds each frame for one hop; mode="linear" interpolates
    between frame values placed at multiples of the hop (so the midpoint
    between two frames is their average).
    """
    frames = mel.num_frames
    if target_len > frames * mel.hop:
        raise DspError(
            f"coverage shortfall: {frames} frames * hop {mel.hop} < {target_len} samples"
        )
    if mode == "repeat":
        idx = np.arange(target_len) // mel.hop
        return mel.data[idx]
    if mode == "linear":
        pos = np.arange(target_len) / mel.hop
        lo = np.clip(np.floor(pos).astype(int), 0, frames - 1)
        hi = np.clip(lo + 1, 0, frames - 1)
        w = (pos - lo)[:, None]
        return (1.0 - w) * mel.data[lo] + w * mel.data[hi]
    raise DspError(f"unknown upsampling mode {mode!r}")
