"""Corpus-level glue: assemble training items per stage, run two-stage
training, and enhance manifest splits with a trained model.

Stage conventions (mirroring the two-stage conditioning scheme):
    pretrain  the Mel condition comes from the clean signal.
    finetune  the Mel condition comes from the noisy signal (or from the
              Mel enhancer when one is supplied).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .conditioning import NoiseClassifier, encode_class, encode_latent
from .dataset import NUM_NOISE_CLASSES, Manifest, load_pairs
from .denoiser import DenoiserModel, TrainConfig, TrainItem, TrainResult, train_denoiser
from .diffusion import SamplerOptions
from .dsp import Waveform, mel_for_length, write_wav
from .enhancer import MelEnhancer
from .schedule import ScheduleTable
from .variants import enhance_utterances


class PipelineError(ValueError):
    pass


def encoding_for(
    enc_mode: str,
    noise_class: int,
    noisy: Waveform,
    classifier: NoiseClassifier | None,
    n_classes: int = NUM_NOISE_CLASSES,
):
    """Resolve one utterance's encoding under the given mode.

    Modes: "none", "class" (ground-truth label), "class_pred" (classifier
    label), "latent" (classifier hidden layer).
    """
    if enc_mode == "none":
        return None
    if enc_mode == "class":
        return encode_class(noise_class, n_classes)
    if enc_mode == "class_pred":
        if classifier is None:
            raise PipelineError("class_pred encoding needs a classifier")
        from .conditioning import classify

        return encode_class(classify(classifier, noisy), n_classes)
    if enc_mode == "latent":
        if classifier is None:
            raise PipelineError("latent encoding needs a classifier")
        return encode_latent(noisy, classifier)
    raise PipelineError(f"unknown encoding mode {enc_mode!r}")


def make_train_items(
    manifest: Manifest,
    stage: str,
    enc_mode: str = "none",
    classifier: NoiseClassifier | None = None,
    enhancer: MelEnhancer | None = None,
    split: str = "train",
) -> list[TrainItem]:
    """Load a split into memory as TrainItems with stage-appropriate Mel."""
    if stage not in ("pretrain", "finetune"):
        raise PipelineError(f"unknown stage {stage!r}")
    items = []
    for clean, noisy, noise_class, _snr in load_pairs(manifest, split):
        if stage == "pretrain":
            mel = mel_for_length(clean.samples, len(clean))
        else:
            mel = mel_for_length(noisy.samples, len(noisy))
            if enhancer is not None:
                mel = enhancer.enhance(mel)
        enc = encoding_for(enc_mode, noise_class, noisy, classifier)
        items.append(
            TrainItem(
                x0=clean.samples.astype(np.float32),
                y=noisy.samples.astype(np.float32),
                mel=mel.data.astype(np.float32),
                enc=None if enc is None else enc.vector().astype(np.float32),
            )
        )
    return items


@dataclass
class StageResult:
    stage: str
    result: TrainResult


def train_two_stage(
    model: DenoiserModel,
    manifest: Manifest,
    table: ScheduleTable,
    pretrain: TrainConfig,
    finetune: TrainConfig,
    enc_mode: str = "none",
    classifier: NoiseClassifier | None = None,
    enhancer: MelEnhancer | None = None,
) -> list[StageResult]:
    """Clean-Mel pretraining followed by degraded-Mel fine-tuning."""
    results = []
    if pretrain.steps > 0:
        items = make_train_items(manifest, "pretrain", enc_mode, classifier)
        results.append(StageResult("pretrain", train_denoiser(model, items, table, pretrain)))
    if finetune.steps > 0:
        items = make_train_items(manifest, "finetune", enc_mode, classifier, enhancer)
        results.append(StageResult("finetune", train_denoiser(model, items, table, finetune)))
    return results


def enhance_split(
    model: DenoiserModel,
    manifest: Manifest,
    table: ScheduleTable,
    opts: SamplerOptions,
    enc_mode: str = "none",
    classifier: NoiseClassifier | None = None,
    enhancer: MelEnhancer | None = None,
    split: str = "test",
    seed: int = 0,
    out_dir=None,
    limit: int | None = None,
    mel_source: str = "noisy",
) -> dict:
    """Enhance a manifest split; optionally write <id>.wav files to out_dir.

    mel_source: "noisy" (default), "clean" (oracle condition for bound
    studies), or "enhanced" (Mel enhancer applied to the noisy Mel).
    Returns {utt_id: Waveform}.
    """
    records = manifest.split(split)[:limit]
    if not records:
        raise PipelineError(f"no records in split {split!r}")
    pairs = load_pairs(manifest, split)[:limit]
    cleans = [p[0] for p in pairs]
    noisys = [p[1] for p in pairs]

    if mel_source == "clean":
        mels = [mel_for_length(c.samples, len(c)) for c in cleans]
    else:
        mels = [mel_for_length(n.samples, len(n)) for n in noisys]
        if mel_source == "enhanced":
            if enhancer is None:
                raise PipelineError("enhanced mel_source needs an enhancer")
            mels = [enhancer.enhance(m) for m in mels]
        elif mel_source != "noisy":
            raise PipelineError(f"unknown mel_source {mel_source!r}")
    if not model.config.mel_bands:
        mels = None

    encs = None
    if model.config.enc_dim:
        encs = [
            encoding_for(enc_mode, rec.noise_class, noisy, classifier)
            for rec, noisy in zip(records, noisys)
        ]
        if any(e is None for e in encs):
            raise PipelineError(f"encoding mode {enc_mode!r} yields no vectors")

    outs = enhance_utterances(model, noisys, mels, encs, table, opts, seed)
    result = {}
    for rec, wf in zip(records, outs):
        clipped = Waveform(np.clip(wf.samples, -1.0, 1.0))
        result[rec.utt_id] = clipped
        if out_dir is not None:
            out_dir = Path(out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            write_wav(out_dir / f"{rec.utt_id}.wav", clipped)
    return result
