"""Forward diffusion, the anchor point, and the anchor-based reverse sampler.

The forward process (see schedule.py) drifts the clean signal toward the
noisy one while injecting Gaussian noise; the reverse sampler starts from
N(sqrt(abar_T) y, delta_bar_T I) and walks the exact Gaussian posterior chain
driven by the model's combined-noise prediction. Interpolation modes:

    none      pure reverse chain.
    original  one final blend x0 <- (1-r) x0 + r y; r is the noisy fraction
              (the lineage convention; 20% noisy for r=0.2).
    improved  in the last t0 reverse steps, blend the fresh state with an
              anchor m_t sqrt(abar_t) y + sqrt(dbar_t) eps using linearly
              annealed ratios, largest first.

All chain math is float64; trajectory snapshots are stored float32.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .dsp import MelSpectrogram, Waveform
from .schedule import ScheduleTable, anneal_ratios


class DiffusionError(ValueError):
    pass


@dataclass
class DiffusionState:
    x_t: np.ndarray
    t: int


@dataclass(frozen=True)
class SamplerOptions:
    mode: str = "improved"           # none | original | improved
    r: float = 0.1
    t0: int = 5
    record_trajectory: bool = False

    def validate(self, num_steps: int) -> None:
        if self.mode not in ("none", "original", "improved"):
            raise DiffusionError(f"unknown sampler mode {self.mode!r}")
        if not (0.0 <= self.r <= 1.0):
            raise DiffusionError(f"r must be in [0, 1], got {self.r}")
        if not (0 <= self.t0 <= num_steps):
            raise DiffusionError(f"t0 must be in [0, {num_steps}], got {self.t0}")


def _check_t(table: ScheduleTable, t: int) -> None:
    if not (1 <= t <= table.num_steps):
        raise DiffusionError(f"t must be in [1, {table.num_steps}], got {t}")


def forward_sample(x0: Waveform, y: Waveform, t: int, table: ScheduleTable, rng) -> DiffusionState:
    """Draw x_t ~ q(x_t | x0, y) = N(sqrt(abar)((1-m)x0 + m y), dbar I)."""
    _check_t(table, t)
    if len(x0) != len(y):
        raise DiffusionError(f"length mismatch: {len(x0)} vs {len(y)}")
    eps = rng.standard_normal(len(x0))
    mean = np.sqrt(table.alpha_bar[t]) * (
        (1.0 - table.m[t]) * x0.samples + table.m[t] * y.samples
    )
    return DiffusionState(mean + np.sqrt(table.delta_bar[t]) * eps, t)


def vanilla_forward_sample(x0: Waveform, t: int, table: ScheduleTable, rng) -> DiffusionState:
    """Plain DDPM marginal: sqrt(abar) x0 + sqrt(1-abar) eps (m identically 0)."""
    _check_t(table, t)
    eps = rng.standard_normal(len(x0))
    x_t = np.sqrt(table.alpha_bar[t]) * x0.samples \
        + np.sqrt(1.0 - table.alpha_bar[t]) * eps
    return DiffusionState(x_t, t)


def anchor_point(y: Waveform, t: int, table: ScheduleTable, rng) -> Waveform:
    """Anchor m_t sqrt(abar_t) y + sqrt(dbar_t) eps built from the noisy signal."""
    _check_t(table, t)
    eps = rng.standard_normal(len(y))
    return Waveform(table.mean_coeff_y(t) * y.samples + np.sqrt(table.delta_bar[t]) * eps)


@dataclass
class Trajectory:
    """Reverse-chain snapshots: states[i] is the state index of snapshot i."""

    states: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)

    def append(self, state_index: int, x: np.ndarray) -> None:
        self.states.append(state_index)
        self.snapshots.append(x.astype(np.float32).copy())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["state", "rms", "peak"])
            for s, x in zip(self.states, self.snapshots):
                writer.writerow([s, repr(float(np.sqrt(np.mean(x**2)))),
                                 repr(float(np.abs(x).max()))])


def _pad_multiple(x: np.ndarray, multiple: int) -> np.ndarray:
    if multiple <= 1 or len(x) % multiple == 0:
        return x
    pad = multiple - len(x) % multiple
    return np.concatenate([x, np.zeros(pad, dtype=x.dtype)])


def _mel_array(mel) -> np.ndarray | None:
    if mel is None:
        return None
    if isinstance(mel, MelSpectrogram):
        return mel.data[None]
    return np.asarray(mel)


def reverse_enhance_batch(
    ys: list[Waveform],
    denoiser,
    mels,
    encs,
    table: ScheduleTable,
    opts: SamplerOptions,
    rngs,
):
    """Run the reverse chain for several equal-length utterances in one pass.

    Each utterance owns its rng stream, so the result is bit-identical to
    running reverse_enhance per utterance (the model forward is batched but
    column-wise deterministic). Returns (list of Waveform, list of Trajectory
    or None).
    """
    opts.validate(table.num_steps)
    T = table.num_steps
    B = len(ys)
    length = len(ys[0])
    if any(len(y) != length for y in ys):
        raise DiffusionError("batched utterances must share a length")
    if len(rngs) != B:
        raise DiffusionError("one rng per utterance required")

    pad_to = getattr(denoiser, "pad_to", 1)
    y_mat = np.stack([_pad_multiple(y.samples, pad_to) for y in ys])
    L = y_mat.shape[1]

    mel_arr = None
    if mels is not None:
        hop = getattr(denoiser, "hop", 256)
        mel_list = [m.data if isinstance(m, MelSpectrogram) else np.asarray(m) for m in mels]
        frames = min(m.shape[0] for m in mel_list)
        min_needed = -(-L // hop)
        if frames < min_needed:
            raise DiffusionError("mel frames do not cover the waveform length")
        mel_arr = np.stack([m[:min_needed] for m in mel_list])
    enc_arr = np.stack(encs) if encs is not None else None

    bound = denoiser.bind(mel=mel_arr, enc=enc_arr)
    ratios = anneal_ratios(opts.t0, opts.r) if opts.t0 > 0 else []

    sqrt_pv = np.sqrt(table.posterior_var)
    x = np.empty((B, L))
    for i in range(B):
        eps0 = rngs[i].standard_normal(L)
        x[i] = np.sqrt(table.alpha_bar[T]) * y_mat[i] + np.sqrt(table.delta_bar[T]) * eps0

    trajectories = [Trajectory() for _ in range(B)] if opts.record_trajectory else None
    if trajectories is not None:
        for i in range(B):
            trajectories[i].append(T, x[i])

    for s in range(T, 0, -1):
        eps_hat = bound.predict(x, s)
        x = table.coeff_x[s] * x + table.coeff_y[s] * y_mat + table.coeff_eps[s] * eps_hat
        if s > 1:
            for i in range(B):
                x[i] += sqrt_pv[s] * rngs[i].standard_normal(L)
        if not np.all(np.isfinite(x)):
            bad = int(np.argmax(~np.all(np.isfinite(x), axis=1)))
            raise DiffusionError(
                f"non-finite state at reverse step t={s} (utterance {bad})"
            )
        if opts.mode == "improved" and s <= opts.t0:
            ratio = ratios[opts.t0 - s]
            anchor_mean = table.mean_coeff_y(s) * y_mat
            anchor_std = np.sqrt(table.delta_bar[s])
            for i in range(B):
                anchor = anchor_mean[i] + anchor_std * rngs[i].standard_normal(L)
                x[i] = ratio * anchor + (1.0 - ratio) * x[i]
        if trajectories is not None:
            for i in range(B):
                trajectories[i].append(s - 1, x[i])

    if opts.mode == "original":
        x = (1.0 - opts.r) * x + opts.r * y_mat

    outs = [Waveform(x[i, :length].copy()) for i in range(B)]
    return outs, trajectories


def reverse_enhance(
    y: Waveform,
    denoiser,
    mel,
    enc,
    table: ScheduleTable,
    opts: SamplerOptions,
    rng,
):
    """Enhance one utterance; returns (Waveform, Trajectory or None)."""
    mels = [mel] if mel is not None else None
    encs = [np.asarray(enc, dtype=np.float64)] if enc is not None else None
    outs, trajs = reverse_enhance_batch([y], denoiser, mels, encs, table, opts, [rng])
    return outs[0], (trajs[0] if trajs is not None else None)


# -- forward-drift study ----------------------------------------------------


def forward_drift_stats(
    clean_set: list[MelSpectrogram],
    noisy_set: list[MelSpectrogram],
    table: ScheduleTable,
    num_samples: int = 1500,
    seed: int = 0,
    frames: int = 62,
    clip_floor: float = -4.0,
    feature_scale: float = 0.2,
):
    """Per-step drift statistics of both forward processes in Mel space.

    Features are the paired Mel matrices cropped to a fixed frame count,
    floor-clipped (spectrogram dynamic-range compression), flattened,
    standardized per dimension over the pooled sets, and scaled by
    feature_scale so the injected unit-variance noise dominates the retained
    signal at large t (the regime a low-dimensional embedding of the cloud
    overlap shows). Common random numbers are used across all t and both
    processes, so per-step curves are directly comparable.

    Emitted per (process, t):
      dist_clean / dist_noisy   mean Euclidean distance of diffused samples
                                to the raw clean-/noisy-set centroids.
      dist_clean_paired /       distance to the same-t image of each centroid
      dist_noisy_paired         diffused with the sample's own noise draw, so
                                the injected noise cancels and the curve
                                isolates the mean drift; the adapted process
                                converges to the noisy cluster in exactly
                                this trajectory-paired sense.
      kurtosis                  mean excess kurtosis over dimensions.

    Returns a list of dict rows.
    """
    if not clean_set or len(clean_set) != len(noisy_set):
        raise DiffusionError("need equal-size, paired clean/noisy sets")
    for m in (*clean_set, *noisy_set):
        if m.num_frames < frames:
            raise DiffusionError(f"need >= {frames} mel frames, got {m.num_frames}")

    x0 = np.stack([np.maximum(m.data[:frames], clip_floor).ravel() for m in clean_set])
    yy = np.stack([np.maximum(m.data[:frames], clip_floor).ravel() for m in noisy_set])
    pooled = np.concatenate([x0, yy])
    mu = pooled.mean(axis=0)
    sd = np.maximum(pooled.std(axis=0), 1e-8)
    x0 = (x0 - mu) / sd * feature_scale
    yy = (yy - mu) / sd * feature_scale
    c_clean = x0.mean(axis=0)
    c_noisy = yy.mean(axis=0)

    rng = np.random.default_rng(seed)
    idx = rng.integers(0, x0.shape[0], size=num_samples)
    eps = rng.standard_normal((num_samples, x0.shape[1]))
    base_x0 = x0[idx]
    base_y = yy[idx]

    def mean_dist(x, ref):
        return float(np.mean(np.linalg.norm(x - ref, axis=1)))

    def kurtosis(x):
        centered = x - x.mean(axis=0)
        var = np.mean(centered**2, axis=0)
        fourth = np.mean(centered**4, axis=0)
        return float(np.mean(fourth / np.maximum(var**2, 1e-24) - 3.0))

    rows = []
    for t in range(table.num_steps + 1):
        coeff_x0 = np.sqrt(table.alpha_bar[t]) * (1.0 - table.m[t])
        coeff_y = table.mean_coeff_y(t)
        scale = np.sqrt(table.alpha_bar[t])
        for process in ("adapted", "vanilla"):
            if process == "adapted":
                noise = np.sqrt(table.delta_bar[t])
                x = coeff_x0 * base_x0 + coeff_y * base_y + noise * eps
                # Set centroids pushed through the same process with the same
                # noise draw: a clean utterance diffuses toward its paired
                # noisy signal, a noisy utterance toward itself.
                ref_clean = coeff_x0 * c_clean + coeff_y * c_noisy + noise * eps
                ref_noisy = scale * c_noisy + noise * eps
            else:
                noise = np.sqrt(1.0 - table.alpha_bar[t])
                x = scale * base_x0 + noise * eps
                ref_clean = scale * c_clean + noise * eps
                ref_noisy = scale * c_noisy + noise * eps
            rows.append({
                "process": process,
                "t": t,
                "dist_clean": mean_dist(x, c_clean),
                "dist_noisy": mean_dist(x, c_noisy),
                "dist_clean_paired": mean_dist(x, ref_clean),
                "dist_noisy_paired": mean_dist(x, ref_noisy),
                "kurtosis": kurtosis(x),
            })
    return rows


_DRIFT_COLUMNS = ["dist_clean", "dist_noisy", "dist_clean_paired",
                  "dist_noisy_paired", "kurtosis"]


def drift_stats_to_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["process", "t"] + _DRIFT_COLUMNS)
        for row in rows:
            writer.writerow([row["process"], row["t"]]
                            + [repr(row[c]) for c in _DRIFT_COLUMNS])
