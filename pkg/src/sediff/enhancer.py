"""Mel-spectrogram preprocessor: a small residual conv net that regresses the
clean log-Mel matrix from the noisy one (the "coarse" stage of the pipeline
variants). L1 loss; the final conv is zero-initialized so an untrained
enhancer is exactly the identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .dsp import N_MELS, MelSpectrogram
from .nn import ops
from .nn.optim import Adam


class EnhancerError(ValueError):
    pass


@dataclass(frozen=True)
class EnhancerConfig:
    channels: int = 32
    layers: int = 4
    dtype: str = "float32"
    init_seed: int = 99


class MelEnhancer:
    """(B, F, 80) -> (B, F, 80), shape-preserving, out = mel + convnet(mel)."""

    def __init__(self, config: EnhancerConfig = EnhancerConfig()):
        if config.layers < 2:
            raise EnhancerError("need at least input and output conv layers")
        self.config = config
        dtype = np.dtype(config.dtype)
        rng = np.random.default_rng(config.init_seed)
        ch = config.channels

        def init(co, ci):
            return (rng.standard_normal((co, ci, 3, 3)) / np.sqrt(ci * 9.0)).astype(dtype)

        p: dict[str, np.ndarray] = {}
        p["c0.w"] = init(ch, 1)
        p["c0.b"] = np.zeros(ch, dtype)
        for k in range(1, config.layers - 1):
            p[f"c{k}.w"] = init(ch, ch)
            p[f"c{k}.b"] = np.zeros(ch, dtype)
        last = config.layers - 1
        p[f"c{last}.w"] = np.zeros((1, ch, 3, 3), dtype)
        p[f"c{last}.b"] = np.zeros(1, dtype)
        self.params = p

    @property
    def dtype(self):
        return np.dtype(self.config.dtype)

    def param_count(self) -> int:
        return sum(v.size for v in self.params.values())

    def forward(self, mel: np.ndarray, want_cache: bool = False):
        """mel (B, F, 80) -> (B, F, 80)."""
        cfg = self.config
        x = np.ascontiguousarray(mel, dtype=self.dtype)[None]   # (1, B, F, 80)
        caches = []
        h = x
        for k in range(cfg.layers - 1):
            z = ops.conv2d3x3_fwd(self.params[f"c{k}.w"], self.params[f"c{k}.b"], h)
            a = ops.relu_fwd(z)
            if want_cache:
                caches.append((h, z))
            h = a
        last = cfg.layers - 1
        out = ops.conv2d3x3_fwd(self.params[f"c{last}.w"], self.params[f"c{last}.b"], h)
        result = x[0] + out[0]
        cache = {"caches": caches, "h_last": h} if want_cache else None
        return result, cache

    def backward(self, cache: dict, dout: np.ndarray) -> dict:
        cfg = self.config
        grads: dict[str, np.ndarray] = {}
        d = dout.astype(self.dtype)[None]
        last = cfg.layers - 1
        dw, db, dh = ops.conv2d3x3_bwd(self.params[f"c{last}.w"], cache["h_last"], d)
        grads[f"c{last}.w"], grads[f"c{last}.b"] = dw, db
        for k in reversed(range(cfg.layers - 1)):
            h_in, z = cache["caches"][k]
            dz = ops.relu_bwd(z, dh)
            dw, db, dh = ops.conv2d3x3_bwd(
                self.params[f"c{k}.w"], h_in, dz, need_dx=(k > 0)
            )
            grads[f"c{k}.w"], grads[f"c{k}.b"] = dw, db
        return grads

    def loss_and_grads(self, noisy_mel: np.ndarray, clean_mel: np.ndarray):
        """Mean absolute error and its (sub)gradients."""
        out, cache = self.forward(noisy_mel, want_cache=True)
        diff = out.astype(np.float64) - np.asarray(clean_mel, dtype=np.float64)
        loss = float(np.mean(np.abs(diff)))
        dout = np.sign(diff) / diff.size
        return loss, self.backward(cache, dout)

    def enhance(self, mel: MelSpectrogram) -> MelSpectrogram:
        out, _ = self.forward(mel.data[None])
        return MelSpectrogram(out[0].astype(np.float64), hop=mel.hop, window=mel.window)

    # -- persistence -------------------------------------------------------

    def save(self, path) -> None:
        header = {"arch": "mel_enhancer", "channels": self.config.channels,
                  "layers": self.config.layers}
        save_checkpoint(path, header, self.params)

    @classmethod
    def load(cls, path) -> "MelEnhancer":
        header, params = load_checkpoint(path)
        if header.get("arch") != "mel_enhancer":
            raise EnhancerError(f"{path} is not an enhancer checkpoint")
        enh = cls(EnhancerConfig(channels=int(header["channels"]),
                                 layers=int(header["layers"])))
        for k in enh.params:
            enh.params[k] = params[k].astype(enh.dtype)
        return enh


class IdentityEnhancer:
    """Lower-bound stand-in: passes the noisy Mel through untouched."""

    def enhance(self, mel: MelSpectrogram) -> MelSpectrogram:
        return mel


@dataclass(frozen=True)
class EnhancerTrainConfig:
    lr: float = 1e-3
    batch: int = 8
    steps: int = 2000
    seed: int = 0
    crop_frames: int = 24
    log_every: int = 25
    snapshot_every: int = 250


@dataclass
class EnhancerTrainResult:
    loss_curve: list = field(default_factory=list)
    aborted: bool = False
    final_loss: float = float("nan")

    def save_curve(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "loss"])
            for step, loss in self.loss_curve:
                writer.writerow([step, repr(loss)])


def train_enhancer(
    enhancer: MelEnhancer,
    pairs: list[tuple[np.ndarray, np.ndarray]],
    hyper: EnhancerTrainConfig = EnhancerTrainConfig(),
) -> EnhancerTrainResult:
    """Minimize L1(enhanced, clean Mel) over random frame crops."""
    if not pairs:
        raise EnhancerError("empty training set")
    crop = hyper.crop_frames
    for noisy_mel, clean_mel in pairs:
        if noisy_mel.shape != clean_mel.shape:
            raise EnhancerError("paired mels must share a shape")
        if noisy_mel.shape[0] < crop:
            raise EnhancerError(f"need >= {crop} frames, got {noisy_mel.shape[0]}")
    rng = np.random.default_rng(hyper.seed)
    adam = Adam(enhancer.params, lr=hyper.lr)
    result = EnhancerTrainResult()
    snapshot = {k: v.copy() for k, v in enhancer.params.items()}

    for step in range(1, hyper.steps + 1):
        idx = rng.integers(0, len(pairs), size=hyper.batch)
        noisy = np.empty((hyper.batch, crop, N_MELS))
        clean = np.empty((hyper.batch, crop, N_MELS))
        for j, i in enumerate(idx):
            noisy_mel, clean_mel = pairs[int(i)]
            f0 = int(rng.integers(0, noisy_mel.shape[0] - crop + 1))
            noisy[j] = noisy_mel[f0:f0 + crop]
            clean[j] = clean_mel[f0:f0 + crop]
        loss, grads = enhancer.loss_and_grads(noisy, clean)
        if not np.isfinite(loss):
            for k, v in snapshot.items():
                enhancer.params[k] = v.copy()
            result.aborted = True
            break
        adam.step(grads)
        if step % hyper.log_every == 0 or step == 1 or step == hyper.steps:
            result.loss_curve.append((step, loss))
        if step % hyper.snapshot_every == 0:
            snapshot = {k: v.copy() for k, v in enhancer.params.items()}
        result.final_loss = loss
    return result
