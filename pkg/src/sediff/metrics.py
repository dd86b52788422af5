"""Objective evaluation: SNR, SI-SDR, Mel-domain L1, and corpus-level reports.

SI-SDR follows the standard projection definition (Le Roux et al.): the
estimate is decomposed into a scaled copy of the reference plus a residual,
and the ratio of the two energies is reported in dB. Values are capped to
[-100, 100] dB so that exact reconstructions stay finite and comparable.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsp import Waveform, mel_for_length, read_wav

SDR_CAP_DB = 100.0


class MetricError(ValueError):
    pass


class MissingFilesError(FileNotFoundError):
    """Raised when evaluate_corpus cannot find enhanced files; lists them all."""

    def __init__(self, missing: list[str]):
        self.missing = list(missing)
        super().__init__("missing enhanced files: " + ", ".join(self.missing))


def _cap_db(num: float, den: float) -> float:
    if den <= 0.0 or num / den >= 10.0 ** (SDR_CAP_DB / 10.0):
        return SDR_CAP_DB
    if num <= 0.0 or num / den <= 10.0 ** (-SDR_CAP_DB / 10.0):
        return -SDR_CAP_DB
    return float(10.0 * np.log10(num / den))


def si_sdr(reference: Waveform, estimate: Waveform) -> float:
    """Scale-invariant signal-to-distortion ratio in dB, capped at +/-100."""
    ref = reference.samples
    est = estimate.samples
    if ref.shape != est.shape:
        raise MetricError(f"length mismatch: {ref.shape} vs {est.shape}")
    ref_energy = float(np.dot(ref, ref))
    if ref_energy == 0.0:
        raise MetricError("zero-energy reference")
    scaling = float(np.dot(ref, est)) / ref_energy
    projection = scaling * ref
    residual = est - projection
    return _cap_db(float(np.dot(projection, projection)), float(np.dot(residual, residual)))


def snr(reference: Waveform, estimate: Waveform) -> float:
    """Plain signal-to-noise ratio of the estimate against the reference, in dB."""
    ref = reference.samples
    est = estimate.samples
    if ref.shape != est.shape:
        raise MetricError(f"length mismatch: {ref.shape} vs {est.shape}")
    ref_energy = float(np.dot(ref, ref))
    if ref_energy == 0.0:
        raise MetricError("zero-energy reference")
    err = est - ref
    return _cap_db(ref_energy, float(np.dot(err, err)))


def mel_l1(reference: Waveform, estimate: Waveform) -> float:
    """Mean absolute log-Mel difference between two equal-length waveforms."""
    if len(reference) != len(estimate):
        raise MetricError("length mismatch")
    ref_mel = mel_for_length(reference.samples, len(reference)).data
    est_mel = mel_for_length(estimate.samples, len(estimate)).data
    return float(np.mean(np.abs(ref_mel - est_mel)))


@dataclass
class EvalRow:
    utt_id: str
    noise_class: int
    snr_db: float
    si_sdr_db: float
    snr_out_db: float
    mel_l1: float
    delta_si_sdr_db: float
    delta_snr_db: float


@dataclass
class EvalReport:
    """Per-utterance rows plus aggregate means; aggregates are arithmetic means."""

    rows: list[EvalRow] = field(default_factory=list)

    def mean(self, attr: str) -> float:
        return float(np.mean([getattr(r, attr) for r in self.rows]))

    def group_means(self, key: str, attr: str) -> dict:
        groups: dict = {}
        for r in self.rows:
            groups.setdefault(getattr(r, key), []).append(getattr(r, attr))
        return {k: float(np.mean(v)) for k, v in sorted(groups.items())}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["id", "noise_class", "snr_db", "si_sdr_db", "snr_out_db",
                 "mel_l1", "delta_si_sdr_db", "delta_snr_db"]
            )
            for r in self.rows:
                writer.writerow(
                    [r.utt_id, r.noise_class, repr(r.snr_db), repr(r.si_sdr_db),
                     repr(r.snr_out_db), repr(r.mel_l1),
                     repr(r.delta_si_sdr_db), repr(r.delta_snr_db)]
                )
            writer.writerow(
                ["mean", "", "", repr(self.mean("si_sdr_db")), repr(self.mean("snr_out_db")),
                 repr(self.mean("mel_l1")), repr(self.mean("delta_si_sdr_db")),
                 repr(self.mean("delta_snr_db"))]
            )
            for snr_val, mean_si in self.group_means("snr_db", "si_sdr_db").items():
                writer.writerow([f"mean_snr_{snr_val:g}", "", repr(snr_val), repr(mean_si),
                                 "", "", "", ""])
            for cls, mean_si in self.group_means("noise_class", "si_sdr_db").items():
                writer.writerow([f"mean_class_{cls}", cls, "", repr(mean_si),
                                 "", "", "", ""])


def evaluate_corpus(manifest, enhanced_dir, split: str = "test") -> EvalReport:
    """Score every manifest row of the given split against enhanced_dir/<id>.wav.

    Missing files are collected and raised together, never silently skipped.
    Rows are sorted by utterance id so reports are order-independent.
    """
    enhanced_dir = Path(enhanced_dir)
    records = [r for r in manifest.records if r.split == split]
    records.sort(key=lambda r: r.utt_id)
    if not records:
        raise MetricError(f"no records in split {split!r}")
    missing = [str(enhanced_dir / f"{r.utt_id}.wav")
               for r in records if not (enhanced_dir / f"{r.utt_id}.wav").exists()]
    if missing:
        raise MissingFilesError(missing)

    report = EvalReport()
    for rec in records:
        clean = read_wav(manifest.resolve(rec.clean_path))
        noisy = read_wav(manifest.resolve(rec.noisy_path))
        enhanced = read_wav(enhanced_dir / f"{rec.utt_id}.wav")
        base_si = si_sdr(clean, noisy)
        base_snr = snr(clean, noisy)
        got_si = si_sdr(clean, enhanced)
        got_snr = snr(clean, enhanced)
        report.rows.append(
            EvalRow(
                utt_id=rec.utt_id,
                noise_class=rec.noise_class,
                snr_db=rec.snr_db,
                si_sdr_db=got_si,
                snr_out_db=got_snr,
                mel_l1=mel_l1(clean, enhanced),
                delta_si_sdr_db=got_si - base_si,
                delta_snr_db=got_snr - base_snr,
            )
        )
    return report
