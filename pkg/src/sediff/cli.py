"""Command-line entry point.

Subcommands: gen-data, train-denoiser, train-classifier, train-enhancer,
enhance, simulate-forward, eval. Every subcommand takes a config file plus
flag overrides (flags win), writes all artifacts under --out, and drops the
effective config and a produced-files manifest next to them. Exit codes:
0 success, 1 validation, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .conditioning import ClassifierTrainConfig, NoiseClassifier, train_classifier
from .config import ConfigError, RunConfig, load_config
from .dataset import (
    NOISE_CLASS_NAMES,
    CorpusConfig,
    Manifest,
    build_corpus,
    load_pairs,
)
from .denoiser import DenoiserConfig, DenoiserModel, TrainConfig
from .diffusion import SamplerOptions, drift_stats_to_csv, forward_drift_stats, reverse_enhance
from .dsp import mel_for_length, read_wav, write_wav
from .enhancer import EnhancerConfig, EnhancerTrainConfig, MelEnhancer, train_enhancer
from .metrics import MissingFilesError, evaluate_corpus
from .pipeline import encoding_for, enhance_split, make_train_items, train_two_stage
from .schedule import build_schedule
from .variants import PipelineVariant, run_variant


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems with the validation exit code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


class RuntimeFailure(RuntimeError):
    pass


def _finish_run(out_dir: Path, config: RunConfig) -> None:
    config.save(out_dir / "effective_config.ini")
    produced = sorted(
        str(p.relative_to(out_dir))
        for p in out_dir.rglob("*")
        if p.is_file() and p.name != "produced_files.txt"
    )
    (out_dir / "produced_files.txt").write_text("\n".join(produced) + "\n")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_manifest(path) -> Manifest:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.csv"
    if not path.exists():
        raise RuntimeFailure(f"manifest not found: {path}")
    return Manifest.load(path)


def _denoiser_config(config: RunConfig) -> DenoiserConfig:
    return DenoiserConfig(
        blocks=config.model.blocks,
        channels=config.model.channels,
        enc_dim=config.enc_dim(),
        temb_dim=config.model.temb_dim,
        init_seed=config.model.init_seed,
    )


def _maybe_classifier(args) -> NoiseClassifier | None:
    if getattr(args, "classifier", None):
        return NoiseClassifier.load(args.classifier)
    return None


def cmd_gen_data(args, config: RunConfig) -> None:
    out = _out_dir(args)
    corpus_cfg = CorpusConfig(
        root=str(out / "corpus"),
        train_count=config.data.train_count,
        val_count=config.data.val_count,
        test_count=config.data.test_count,
        duration_s=config.data.duration_s,
        seed=config.data.seed,
    )
    manifest = build_corpus(corpus_cfg)
    print(f"wrote {len(manifest.records)} utterances under {corpus_cfg.root}")
    _finish_run(out, config)


def cmd_train_denoiser(args, config: RunConfig) -> None:
    out = _out_dir(args)
    manifest = _load_manifest(args.manifest)
    table = build_schedule(config.schedule_config())
    classifier = _maybe_classifier(args)
    enhancer = MelEnhancer.load(args.enhancer) if args.enhancer else None
    enc_mode = config.model.encoding if config.model.encoding != "latent" else "latent"

    if args.init:
        model = DenoiserModel.load(args.init)
    else:
        model = DenoiserModel(_denoiser_config(config))

    stages = {"pretrain": (config.train.pretrain_steps, 0),
              "finetune": (0, config.train.finetune_steps),
              "both": (config.train.pretrain_steps, config.train.finetune_steps)}
    pre_steps, fine_steps = stages[args.stage]
    results = train_two_stage(
        model, manifest, table,
        pretrain=TrainConfig(lr=config.train.lr, batch=config.train.batch,
                             steps=pre_steps, seed=config.train.seed,
                             crop_frames=config.train.crop_frames),
        finetune=TrainConfig(lr=config.train.lr, batch=config.train.batch,
                             steps=fine_steps, seed=config.train.seed + 1,
                             crop_frames=config.train.crop_frames),
        enc_mode=enc_mode, classifier=classifier, enhancer=enhancer,
    )
    for stage_result in results:
        stage_result.result.save_curve(out / f"loss_{stage_result.stage}.csv")
        if stage_result.result.aborted:
            raise RuntimeFailure(f"{stage_result.stage} diverged (non-finite loss)")
        print(f"{stage_result.stage}: final loss {stage_result.result.final_loss:.6f}")
    model.save(out / "denoiser.ckpt")
    _finish_run(out, config)


def cmd_train_classifier(args, config: RunConfig) -> None:
    out = _out_dir(args)
    manifest = _load_manifest(args.manifest)
    train_data = [(noisy, cls) for _, noisy, cls, _ in load_pairs(manifest, "train")]
    val_data = [(noisy, cls) for _, noisy, cls, _ in load_pairs(manifest, "val")]
    clf = train_classifier(
        train_data,
        ClassifierTrainConfig(lr=config.classifier.lr, epochs=config.classifier.epochs,
                              hidden=config.classifier.hidden, seed=config.classifier.seed),
        val_dataset=val_data,
    )
    clf.save(out / "classifier.ckpt")
    (out / "labels.txt").write_text(
        "".join(f"{i} {name}\n" for i, name in enumerate(NOISE_CLASS_NAMES))
    )
    print(f"held-out accuracy: {clf.accuracy:.4f}")
    _finish_run(out, config)


def cmd_train_enhancer(args, config: RunConfig) -> None:
    out = _out_dir(args)
    manifest = _load_manifest(args.manifest)
    pairs = []
    for clean, noisy, _, _ in load_pairs(manifest, "train"):
        noisy_mel = mel_for_length(noisy.samples, len(noisy)).data
        clean_mel = mel_for_length(clean.samples, len(clean)).data
        pairs.append((noisy_mel, clean_mel))
    enhancer = MelEnhancer(EnhancerConfig(channels=config.enhancer.channels,
                                          layers=config.enhancer.layers))
    result = train_enhancer(
        enhancer, pairs,
        EnhancerTrainConfig(lr=config.enhancer.lr, batch=config.enhancer.batch,
                            steps=config.enhancer.steps, seed=config.enhancer.seed,
                            crop_frames=config.enhancer.crop_frames),
    )
    result.save_curve(out / "loss_enhancer.csv")
    if result.aborted:
        raise RuntimeFailure("enhancer training diverged")
    enhancer.save(out / "enhancer.ckpt")
    print(f"final L1 loss: {result.final_loss:.6f}")
    _finish_run(out, config)


def cmd_enhance(args, config: RunConfig) -> None:
    out = _out_dir(args)
    table = build_schedule(config.schedule_config())
    opts = SamplerOptions(
        mode=args.mode or config.schedule.mode,
        r=args.r if args.r is not None else config.schedule.r,
        t0=args.t0 if args.t0 is not None else config.schedule.t0,
    )
    classifier = _maybe_classifier(args)
    enhancer = MelEnhancer.load(args.enhancer) if args.enhancer else None

    enc_mode = "none"
    if config.model.encoding == "class":
        enc_mode = "class_pred" if classifier is not None else "class"
    elif config.model.encoding == "latent":
        enc_mode = "latent"

    if args.variant:
        if not args.generator:
            raise RuntimeFailure("--variant requires --generator")
        variant = PipelineVariant(args.variant, args.generator, args.enhancer)
        if not args.input:
            raise RuntimeFailure("--variant works on a single --input wav")
        noisy = read_wav(args.input)
        enc = None
        if config.model.encoding != "none":
            enc = encoding_for(enc_mode, 0, noisy, classifier)
        rng = np.random.default_rng(np.random.SeedSequence(
            entropy=(config.eval.seed, 0, 0)))
        result = run_variant(variant, noisy, enc, table, opts, rng)
        write_wav(out / (Path(args.input).stem + "_enhanced.wav"), result)
    elif args.input:
        if not args.generator:
            raise RuntimeFailure("enhance requires --generator")
        model = DenoiserModel.load(args.generator)
        noisy = read_wav(args.input)
        mel = mel_for_length(noisy.samples, len(noisy))
        if enhancer is not None:
            mel = enhancer.enhance(mel)
        enc_vec = None
        if model.config.enc_dim:
            enc = encoding_for(enc_mode, 0, noisy, classifier)
            enc_vec = enc.vector()
        rng = np.random.default_rng(np.random.SeedSequence(
            entropy=(config.eval.seed, 0, 0)))
        result, _ = reverse_enhance(
            noisy, model, mel if model.config.mel_bands else None,
            enc_vec, table, opts, rng)
        from .dsp import Waveform

        write_wav(out / (Path(args.input).stem + "_enhanced.wav"),
                  Waveform(np.clip(result.samples, -1.0, 1.0)))
    else:
        if not args.generator:
            raise RuntimeFailure("enhance requires --generator")
        model = DenoiserModel.load(args.generator)
        manifest = _load_manifest(args.manifest)
        limit = config.eval.limit or None
        enhance_split(
            model, manifest, table, opts,
            enc_mode=enc_mode, classifier=classifier, enhancer=enhancer,
            split=config.eval.split, seed=config.eval.seed,
            out_dir=out / "enhanced", limit=limit,
            mel_source="enhanced" if enhancer is not None else "noisy",
        )
    _finish_run(out, config)


def cmd_simulate_forward(args, config: RunConfig) -> None:
    out = _out_dir(args)
    table = build_schedule(config.schedule_config())
    manifest = _load_manifest(args.manifest)
    frames = args.frames
    min_len = (frames - 1) * 256 + 1024
    mels_clean, mels_noisy = [], []
    for clean, noisy, _, _ in load_pairs(manifest, config.eval.split):
        if len(clean) < min_len:
            continue
        mels_clean.append(mel_for_length(clean.samples, len(clean)))
        mels_noisy.append(mel_for_length(noisy.samples, len(noisy)))
    if not mels_clean:
        raise RuntimeFailure(
            f"no utterances long enough for {frames} frames "
            f"(need >= {min_len} samples); generate a corpus with "
            f"duration_s >= {min_len / 16000:.2f}"
        )
    rows = forward_drift_stats(mels_clean, mels_noisy, table,
                               num_samples=args.samples, seed=config.eval.seed,
                               frames=frames)
    drift_stats_to_csv(rows, out / "drift_stats.csv")
    print(f"wrote drift stats over {len(mels_clean)} utterances")
    _finish_run(out, config)


def cmd_eval(args, config: RunConfig) -> None:
    out = _out_dir(args)
    manifest = _load_manifest(args.manifest)
    report = evaluate_corpus(manifest, args.enhanced, split=config.eval.split)
    report.to_csv(out / "eval_report.csv")
    print(f"mean SI-SDR {report.mean('si_sdr_db'):.3f} dB "
          f"(delta {report.mean('delta_si_sdr_db'):+.3f} dB) "
          f"over {len(report.rows)} utterances")
    _finish_run(out, config)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sediff", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("-c", "--config", default=None, help="INI config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a config value (repeatable; flags win)")

    p = sub.add_parser("gen-data", help="generate the synthetic corpus")
    common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-denoiser", help="train the diffusion denoiser")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--stage", choices=("pretrain", "finetune", "both"), default="both")
    p.add_argument("--init", default=None, help="checkpoint to start from")
    p.add_argument("--classifier", default=None, help="classifier checkpoint (latent encoding)")
    p.add_argument("--enhancer", default=None, help="Mel-enhancer checkpoint (finetune condition)")
    p.set_defaults(func=cmd_train_denoiser)

    p = sub.add_parser("train-classifier", help="train the noise classifier")
    common(p)
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_train_classifier)

    p = sub.add_parser("train-enhancer", help="train the Mel enhancer")
    common(p)
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_train_enhancer)

    p = sub.add_parser("enhance", help="enhance a wav file or a manifest split")
    common(p)
    p.add_argument("--input", default=None, help="single wav to enhance")
    p.add_argument("--manifest", default=None)
    p.add_argument("--generator", default=None, help="denoiser checkpoint")
    p.add_argument("--classifier", default=None)
    p.add_argument("--enhancer", default=None)
    p.add_argument("--mode", choices=("none", "original", "improved"), default=None)
    p.add_argument("--r", type=float, default=None)
    p.add_argument("--t0", type=int, default=None)
    p.add_argument("--variant", choices=("coarse_and_refine", "coarse_and_finetune",
                                         "coarse_and_scratch"), default=None)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("simulate-forward", help="forward-drift statistics (CSV)")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--frames", type=int, default=62)
    p.add_argument("--samples", type=int, default=1500)
    p.set_defaults(func=cmd_simulate_forward)

    p = sub.add_parser("eval", help="score enhanced files against a manifest split")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--enhanced", required=True, help="directory of <id>.wav files")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        overrides = {}
        for item in args.set:
            dotted, sep, value = item.partition("=")
            if not sep:
                raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
            overrides[dotted.strip()] = value.strip()
        config = load_config(args.config, overrides)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1
    try:
        args.func(args, config)
    except MissingFilesError as err:
        print(f"runtime error: {err}", file=sys.stderr)
        return 2
    except (RuntimeFailure, OSError, ValueError) as err:
        print(f"runtime error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
