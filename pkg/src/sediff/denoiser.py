"""The noise predictor: a dilated-convolution network with gated residual
blocks, conditioned locally on Mel frames and globally on a noise encoding,
plus an exact oracle variant used to verify the sampler.

The training target is the *combined* noise of the drifting forward process,

    target_t = (m_t sqrt(abar_t) (y - x0) + sqrt(dbar_t) eps) / sqrt(1 - abar_t),

i.e. the Gaussian injection plus the background-noise component, normalized so
that substituting the exact target into the reverse-mean coefficients
reproduces the exact Gaussian posterior mean (see schedule.py). With y == x0
it reduces to a scaled eps, and with m == 0 to the plain DDPM target.

All network math runs in (channels, batch, length) layout; see nn/ops.py.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .nn import ops
from .nn.optim import Adam
from .schedule import ScheduleTable


class DenoiserError(ValueError):
    pass


def combined_target(x0, y, eps, t, table: ScheduleTable):
    """Training target for timestep(s) t; x0/y/eps are (..., L), t scalar or (B,)."""
    t = np.asarray(t)
    if np.any((t < 1) | (t > table.num_steps)):
        raise DenoiserError(f"t out of range 1..{table.num_steps}")
    shape = (-1,) + (1,) * (np.asarray(x0).ndim - 1) if t.ndim else ()
    b_t = (table.m[t] * np.sqrt(table.alpha_bar[t])).reshape(shape) if t.ndim \
        else table.m[t] * np.sqrt(table.alpha_bar[t])
    s_t = np.sqrt(table.delta_bar[t]).reshape(shape) if t.ndim else np.sqrt(table.delta_bar[t])
    norm = table.norm[t].reshape(shape) if t.ndim else table.norm[t]
    return (b_t * (np.asarray(y) - np.asarray(x0)) + s_t * np.asarray(eps)) / norm


def diffuse_batch(x0, y, eps, t, table: ScheduleTable):
    """Vectorized forward marginal x_t for per-sample timesteps t (B,)."""
    t = np.asarray(t)
    shape = (-1,) + (1,) * (np.asarray(x0).ndim - 1)
    sqrt_ab = np.sqrt(table.alpha_bar[t]).reshape(shape)
    m = table.m[t].reshape(shape)
    s = np.sqrt(table.delta_bar[t]).reshape(shape)
    return sqrt_ab * ((1.0 - m) * x0 + m * y) + s * eps


@dataclass(frozen=True)
class DenoiserConfig:
    blocks: int = 8
    channels: int = 32
    mel_bands: int = 80          # 0 disables the Mel condition
    enc_dim: int = 0             # 0 disables the noise-encoding condition
    temb_dim: int = 128
    hop: int = 256
    dilation_cycle: tuple = (1, 2, 4, 8)
    dtype: str = "float32"
    init_seed: int = 1234

    def dilations(self) -> list[int]:
        cyc = self.dilation_cycle
        return [cyc[i % len(cyc)] for i in range(self.blocks)]

    def header_fields(self) -> dict:
        return {
            "arch": "denoiser",
            "blocks": self.blocks,
            "channels": self.channels,
            "mel_bands": self.mel_bands,
            "enc_dim": self.enc_dim,
            "temb_dim": self.temb_dim,
            "hop": self.hop,
            "dilation_cycle": ",".join(str(d) for d in self.dilation_cycle),
        }

    @classmethod
    def from_header(cls, fields: dict, **overrides) -> "DenoiserConfig":
        return cls(
            blocks=int(fields["blocks"]),
            channels=int(fields["channels"]),
            mel_bands=int(fields["mel_bands"]),
            enc_dim=int(fields["enc_dim"]),
            temb_dim=int(fields["temb_dim"]),
            hop=int(fields["hop"]),
            dilation_cycle=tuple(int(d) for d in fields["dilation_cycle"].split(",")),
            **overrides,
        )


class DenoiserModel:
    """Parameter container plus hand-rolled forward/backward."""

    def __init__(self, config: DenoiserConfig):
        self.config = config
        dtype = np.dtype(config.dtype)
        rng = np.random.default_rng(config.init_seed)
        C, Td = config.channels, config.temb_dim

        def norm_init(*shape, fan_in):
            return (rng.standard_normal(shape) / np.sqrt(fan_in)).astype(dtype)

        p: dict[str, np.ndarray] = {}
        p["in.w"] = norm_init(C, 1, fan_in=1)
        p["in.b"] = np.zeros(C, dtype)
        p["temb.w1"] = norm_init(Td, Td, fan_in=Td)
        p["temb.b1"] = np.zeros(Td, dtype)
        p["temb.w2"] = norm_init(Td, Td, fan_in=Td)
        p["temb.b2"] = np.zeros(Td, dtype)
        for k in range(config.blocks):
            p[f"b{k}.conv.w"] = norm_init(3, 2 * C, C, fan_in=3 * C)
            p[f"b{k}.conv.b"] = np.zeros(2 * C, dtype)
            if config.mel_bands:
                p[f"b{k}.mel.w"] = norm_init(2 * C, config.mel_bands, fan_in=config.mel_bands)
                p[f"b{k}.mel.b"] = np.zeros(2 * C, dtype)
            if config.enc_dim:
                p[f"b{k}.enc.w"] = norm_init(2 * C, config.enc_dim, fan_in=config.enc_dim)
                p[f"b{k}.enc.b"] = np.zeros(2 * C, dtype)
            p[f"b{k}.t.w"] = norm_init(C, Td, fan_in=Td)
            p[f"b{k}.t.b"] = np.zeros(C, dtype)
            p[f"b{k}.out.w"] = norm_init(2 * C, C, fan_in=C)
            p[f"b{k}.out.b"] = np.zeros(2 * C, dtype)
        p["head.w1"] = norm_init(C, C, fan_in=C)
        p["head.b1"] = np.zeros(C, dtype)
        # Zero-initialized output projection: a fresh model predicts 0.
        p["head.w2"] = np.zeros((1, C), dtype)
        p["head.b2"] = np.zeros(1, dtype)
        self.params = p
        self._freqs = np.exp(
            -np.log(10000.0) * np.arange(Td // 2) / max(Td // 2 - 1, 1)
        ).astype(dtype)

    # -- basics ----------------------------------------------------------

    @property
    def dtype(self):
        return np.dtype(self.config.dtype)

    @property
    def hop(self) -> int:
        return self.config.hop

    @property
    def pad_to(self) -> int:
        """Sampler inputs must be padded to this multiple (frame alignment)."""
        return self.config.hop if self.config.mel_bands else 1

    def param_count(self) -> int:
        return sum(v.size for v in self.params.values())

    def clone_params(self) -> dict:
        return {k: v.copy() for k, v in self.params.items()}

    def load_params(self, params: dict) -> None:
        for k, v in self.params.items():
            if k not in params:
                raise DenoiserError(f"missing parameter {k}")
            if params[k].shape != v.shape:
                raise DenoiserError(
                    f"shape mismatch for {k}: {params[k].shape} vs {v.shape}"
                )
            self.params[k] = params[k].astype(self.dtype)

    def _timestep_embedding(self, t: np.ndarray) -> np.ndarray:
        """Sinusoidal embedding, (temb_dim, B)."""
        ang = self._freqs[:, None] * np.asarray(t, dtype=self.dtype)[None, :]
        return np.concatenate([np.sin(ang), np.cos(ang)], axis=0)

    def save(self, path) -> None:
        from .checkpoint import save_checkpoint

        save_checkpoint(path, self.config.header_fields(), self.params)

    @classmethod
    def load(cls, path, dtype: str = "float32") -> "DenoiserModel":
        from .checkpoint import load_checkpoint

        header, params = load_checkpoint(path)
        if header.get("arch") != "denoiser":
            raise DenoiserError(f"{path} is not a denoiser checkpoint")
        config = DenoiserConfig.from_header(header, dtype=dtype)
        model = cls(config)
        model.load_params(params)
        return model

    # -- forward ---------------------------------------------------------

    def _prep_mel(self, mel: np.ndarray | None) -> np.ndarray | None:
        """(B, F, bands) -> (bands, B, F) in model dtype.

        Log-Mel values span roughly [-11.5, 4]; the fixed affine map
        (mel + 4) / 4 keeps the conditioning projections in a range that does
        not saturate the gated units at initialization.
        """
        if not self.config.mel_bands:
            return None
        if mel is None:
            raise DenoiserError("model expects a Mel condition")
        melT = np.ascontiguousarray(np.transpose(mel, (2, 0, 1)), dtype=self.dtype)
        melT += np.asarray(4.0, dtype=self.dtype)
        melT *= np.asarray(0.25, dtype=self.dtype)
        return melT

    def _prep_enc(self, enc: np.ndarray | None) -> np.ndarray | None:
        if not self.config.enc_dim:
            return None
        if enc is None:
            raise DenoiserError("model expects a noise encoding")
        return np.ascontiguousarray(enc.T, dtype=self.dtype)

    def forward(self, x_t, t, mel=None, enc=None, want_cache: bool = False):
        """x_t (B, L), t (B,) or scalar, mel (B, F, bands), enc (B, E).

        Returns (out (B, L), cache). L must be a multiple of hop when the Mel
        condition is active.
        """
        p = self.params
        cfg = self.config
        C = cfg.channels
        x_t = np.asarray(x_t)
        if x_t.ndim != 2:
            raise DenoiserError(f"x_t must be (B, L), got {x_t.shape}")
        B, L = x_t.shape
        t = np.broadcast_to(np.asarray(t), (B,))
        x = x_t.astype(self.dtype)[None]              # (1, B, L)
        melT = self._prep_mel(mel)
        if melT is not None and L % cfg.hop != 0:
            raise DenoiserError(f"length {L} not a multiple of hop {cfg.hop}")
        if melT is not None and melT.shape[2] * cfg.hop < L:
            raise DenoiserError("mel frames do not cover the input length")
        encT = self._prep_enc(enc)

        temb0 = self._timestep_embedding(t)
        e1 = ops.linear_fwd(p["temb.w1"], p["temb.b1"], temb0)
        s1 = ops.swish_fwd(e1)
        e2 = ops.linear_fwd(p["temb.w2"], p["temb.b2"], s1)
        temb = ops.swish_fwd(e2)                      # (Td, B)

        h_pre = ops.pointwise_fwd(p["in.w"], p["in.b"], x)
        h = ops.relu_fwd(h_pre)
        skip_sum = np.zeros_like(h)
        inv_sqrt2 = np.float32(1.0 / np.sqrt(2.0))

        blocks_cache = []
        for k, dil in enumerate(cfg.dilations()):
            tproj = ops.linear_fwd(p[f"b{k}.t.w"], p[f"b{k}.t.b"], temb)  # (C, B)
            y = h + tproj[:, :, None]
            pre = ops.dilated_conv_fwd(p[f"b{k}.conv.w"], p[f"b{k}.conv.b"], y, dil)
            melproj = None
            if melT is not None:
                frames_needed = L // cfg.hop
                mel_flat = melT[:, :, :frames_needed]
                melproj = ops.pointwise_fwd(p[f"b{k}.mel.w"], p[f"b{k}.mel.b"], mel_flat)
                ops.frame_cond_add(pre, melproj, cfg.hop)
            if encT is not None:
                encproj = ops.linear_fwd(p[f"b{k}.enc.w"], p[f"b{k}.enc.b"], encT)
                pre += encproj[:, :, None]
            g, ta, sig = ops.gated_fwd(pre)
            o = ops.pointwise_fwd(p[f"b{k}.out.w"], p[f"b{k}.out.b"], g)
            h_next = (h + o[:C]) * inv_sqrt2
            skip_sum += o[C:]
            if want_cache:
                blocks_cache.append((y, ta, sig, g))
            h = h_next

        inv_sqrt_blocks = np.float32(1.0 / np.sqrt(cfg.blocks))
        s = skip_sum * inv_sqrt_blocks
        relu_s = ops.relu_fwd(s)
        h2 = ops.pointwise_fwd(p["head.w1"], p["head.b1"], relu_s)
        relu_h2 = ops.relu_fwd(h2)
        out = ops.pointwise_fwd(p["head.w2"], p["head.b2"], relu_h2)  # (1, B, L)

        cache = None
        if want_cache:
            cache = {
                "x": x, "temb0": temb0, "e1": e1, "s1": s1, "e2": e2, "temb": temb,
                "h_pre": h_pre, "blocks": blocks_cache, "melT": melT, "encT": encT,
                "s": s, "relu_s": relu_s, "h2": h2, "relu_h2": relu_h2, "L": L,
            }
        return out[0], cache

    def predict(self, x_t, t, mel=None, enc=None) -> np.ndarray:
        """Inference-path forward; returns float64 (B, L)."""
        out, _ = self.forward(x_t, t, mel=mel, enc=enc, want_cache=False)
        return out.astype(np.float64)

    # -- backward --------------------------------------------------------

    def backward(self, cache: dict, dout: np.ndarray) -> dict:
        """Gradients of a scalar loss given d(out) of shape (B, L)."""
        p = self.params
        cfg = self.config
        C = cfg.channels
        grads: dict[str, np.ndarray] = {}
        do = dout.astype(self.dtype)[None]            # (1, B, L)

        dW2, db2, drelu_h2 = ops.pointwise_bwd(p["head.w2"], cache["relu_h2"], do)
        grads["head.w2"], grads["head.b2"] = dW2, db2
        dh2 = ops.relu_bwd(cache["h2"], drelu_h2)
        dW1, db1, drelu_s = ops.pointwise_bwd(p["head.w1"], cache["relu_s"], dh2)
        grads["head.w1"], grads["head.b1"] = dW1, db1
        ds = ops.relu_bwd(cache["s"], drelu_s)
        inv_sqrt_blocks = np.float32(1.0 / np.sqrt(cfg.blocks))
        dskip = ds * inv_sqrt_blocks

        inv_sqrt2 = np.float32(1.0 / np.sqrt(2.0))
        dh = np.zeros_like(dskip)
        dtemb = np.zeros_like(cache["temb"])
        melT, encT = cache["melT"], cache["encT"]
        L = cache["L"]

        do_blk = np.empty((2 * C,) + dskip.shape[1:], dtype=dskip.dtype)
        do_blk[C:] = dskip
        for k in reversed(range(cfg.blocks)):
            y, ta, sig, g = cache["blocks"][k]
            dil = cfg.dilations()[k]
            np.multiply(dh, inv_sqrt2, out=do_blk[:C])
            dow, dob, dg = ops.pointwise_bwd(p[f"b{k}.out.w"], g, do_blk)
            grads[f"b{k}.out.w"], grads[f"b{k}.out.b"] = dow, dob
            dpre = ops.gated_bwd(ta, sig, dg)
            if melT is not None:
                dmelproj = ops.frame_cond_bwd(dpre, cfg.hop)
                mel_flat = melT[:, :, :L // cfg.hop]
                dmw, dmb, _ = ops.pointwise_bwd(p[f"b{k}.mel.w"], mel_flat, dmelproj,
                                                need_dx=False)
                grads[f"b{k}.mel.w"], grads[f"b{k}.mel.b"] = dmw, dmb
            if encT is not None:
                dencproj = dpre.sum(axis=2)
                dew, deb, _ = ops.linear_bwd(p[f"b{k}.enc.w"], encT, dencproj,
                                             need_dx=False)
                grads[f"b{k}.enc.w"], grads[f"b{k}.enc.b"] = dew, deb
            dcw, dcb, dy = ops.dilated_conv_bwd(p[f"b{k}.conv.w"], y, dpre, dil)
            grads[f"b{k}.conv.w"], grads[f"b{k}.conv.b"] = dcw, dcb
            dtproj = dy.sum(axis=2)
            dtw, dtb, dtemb_k = ops.linear_bwd(p[f"b{k}.t.w"], cache["temb"], dtproj)
            grads[f"b{k}.t.w"], grads[f"b{k}.t.b"] = dtw, dtb
            dtemb += dtemb_k
            dh = dh * inv_sqrt2 + dy

        dh_pre = ops.relu_bwd(cache["h_pre"], dh)
        diw, dib, _ = ops.pointwise_bwd(p["in.w"], cache["x"], dh_pre, need_dx=False)
        grads["in.w"], grads["in.b"] = diw, dib

        de2 = ops.swish_bwd(cache["e2"], dtemb)
        dw2t, db2t, ds1 = ops.linear_bwd(p["temb.w2"], cache["s1"], de2)
        grads["temb.w2"], grads["temb.b2"] = dw2t, db2t
        de1 = ops.swish_bwd(cache["e1"], ds1)
        dw1t, db1t, _ = ops.linear_bwd(p["temb.w1"], cache["temb0"], de1, need_dx=False)
        grads["temb.w1"], grads["temb.b1"] = dw1t, db1t
        return grads

    def loss_and_grads(self, x_t, t, target, mel=None, enc=None):
        """MSE loss against the combined-noise target plus its gradients."""
        out, cache = self.forward(x_t, t, mel=mel, enc=enc, want_cache=True)
        diff = out.astype(np.float64) - np.asarray(target, dtype=np.float64)
        loss = float(np.mean(diff * diff))
        dout = (2.0 / diff.size) * diff
        return loss, self.backward(cache, dout)

    # -- sampler adapter --------------------------------------------------

    def bind(self, mel=None, enc=None) -> "BoundDenoiser":
        return BoundDenoiser(self, mel, enc)


class BoundDenoiser:
    """Denoiser with frozen conditions: precomputes per-block condition
    projections once so the 50-step reverse loop only pays for the convs."""

    def __init__(self, model: DenoiserModel, mel, enc):
        self.model = model
        cfg = model.config
        p = model.params
        self.melproj: list = [None] * cfg.blocks
        self.encproj: list = [None] * cfg.blocks
        self.frames = None
        melT = model._prep_mel(mel)
        encT = model._prep_enc(enc)
        for k in range(cfg.blocks):
            if melT is not None:
                self.melproj[k] = ops.pointwise_fwd(p[f"b{k}.mel.w"], p[f"b{k}.mel.b"], melT)
            if encT is not None:
                self.encproj[k] = ops.linear_fwd(p[f"b{k}.enc.w"], p[f"b{k}.enc.b"], encT)
        if melT is not None:
            self.frames = melT.shape[2]

    def predict(self, x_t: np.ndarray, t: int) -> np.ndarray:
        """x_t (B, L) -> predicted combined noise, float64 (B, L)."""
        model = self.model
        p = model.params
        cfg = model.config
        C = cfg.channels
        B, L = x_t.shape
        if self.frames is not None:
            if L % cfg.hop != 0:
                raise DenoiserError(f"length {L} not a multiple of hop {cfg.hop}")
            if self.frames * cfg.hop < L:
                raise DenoiserError("bound mel frames do not cover the input")
        x = x_t.astype(model.dtype)[None]
        temb0 = model._timestep_embedding(np.full(B, t))
        s1 = ops.swish_fwd(ops.linear_fwd(p["temb.w1"], p["temb.b1"], temb0))
        temb = ops.swish_fwd(ops.linear_fwd(p["temb.w2"], p["temb.b2"], s1))

        h = ops.relu_fwd(ops.pointwise_fwd(p["in.w"], p["in.b"], x))
        skip_sum = np.zeros_like(h)
        inv_sqrt2 = np.float32(1.0 / np.sqrt(2.0))
        for k, dil in enumerate(cfg.dilations()):
            tproj = ops.linear_fwd(p[f"b{k}.t.w"], p[f"b{k}.t.b"], temb)
            y = h + tproj[:, :, None]
            pre = ops.dilated_conv_fwd(p[f"b{k}.conv.w"], p[f"b{k}.conv.b"], y, dil)
            if self.melproj[k] is not None:
                ops.frame_cond_add(pre, self.melproj[k][:, :, :L // cfg.hop], cfg.hop)
            if self.encproj[k] is not None:
                pre += self.encproj[k][:, :, None]
            g, _, _ = ops.gated_fwd(pre)
            o = ops.pointwise_fwd(p[f"b{k}.out.w"], p[f"b{k}.out.b"], g)
            h = (h + o[:C]) * inv_sqrt2
            skip_sum += o[C:]
        s = ops.relu_fwd(skip_sum * np.float32(1.0 / np.sqrt(cfg.blocks)))
        h2 = ops.relu_fwd(ops.pointwise_fwd(p["head.w1"], p["head.b1"], s))
        out = ops.pointwise_fwd(p["head.w2"], p["head.b2"], h2)
        return out[0].astype(np.float64)


class OracleDenoiser:
    """Perfect predictor for sampler verification: solves the combined-noise
    target exactly from the queried state and the true clean signal."""

    pad_to = 1

    def __init__(self, x0: np.ndarray, table: ScheduleTable):
        self.x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
        self.table = table

    def bind(self, mel=None, enc=None) -> "OracleDenoiser":
        return self

    def predict(self, x_t: np.ndarray, t: int) -> np.ndarray:
        table = self.table
        return (x_t - np.sqrt(table.alpha_bar[t]) * self.x0) / table.norm[t]


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 2e-4
    batch: int = 4
    steps: int = 20000
    seed: int = 0
    crop_frames: int = 8
    log_every: int = 50
    snapshot_every: int = 250


@dataclass
class TrainItem:
    """One utterance prepared for training: waveforms, frame-rate Mel
    condition (already chosen per stage), optional encoding vector."""

    x0: np.ndarray
    y: np.ndarray
    mel: np.ndarray | None
    enc: np.ndarray | None


@dataclass
class TrainResult:
    loss_curve: list = field(default_factory=list)   # (step, loss) pairs
    aborted: bool = False
    final_loss: float = float("nan")

    def save_curve(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "loss"])
            for step, loss in self.loss_curve:
                writer.writerow([step, repr(loss)])


def train_denoiser(
    model: DenoiserModel,
    items: list[TrainItem],
    table: ScheduleTable,
    hyper: TrainConfig,
) -> TrainResult:
    """Minimize MSE(predict, combined_target) with t ~ U{1..T} per sample.

    Deterministic per seed. On divergence (non-finite loss) restores the last
    snapshot and returns with aborted=True.
    """
    if not items:
        raise DenoiserError("empty training set")
    cfg = model.config
    hop = cfg.hop
    crop_len = hyper.crop_frames * hop
    for it in items:
        if len(it.x0) < crop_len:
            raise DenoiserError(f"utterance shorter than crop {crop_len}")
    rng = np.random.default_rng(hyper.seed)
    adam = Adam(model.params, lr=hyper.lr)
    result = TrainResult()
    snapshot = model.clone_params()
    T = table.num_steps

    for step in range(1, hyper.steps + 1):
        idx = rng.integers(0, len(items), size=hyper.batch)
        t_batch = rng.integers(1, T + 1, size=hyper.batch)
        x0 = np.empty((hyper.batch, crop_len))
        y = np.empty((hyper.batch, crop_len))
        mel = np.empty((hyper.batch, hyper.crop_frames, cfg.mel_bands)) \
            if cfg.mel_bands else None
        enc = np.empty((hyper.batch, cfg.enc_dim)) if cfg.enc_dim else None
        for j, i in enumerate(idx):
            item = items[int(i)]
            max_f0 = len(item.x0) // hop - hyper.crop_frames
            f0 = int(rng.integers(0, max_f0 + 1))
            lo = f0 * hop
            x0[j] = item.x0[lo:lo + crop_len]
            y[j] = item.y[lo:lo + crop_len]
            if mel is not None:
                mel[j] = item.mel[f0:f0 + hyper.crop_frames]
            if enc is not None:
                enc[j] = item.enc
        eps = rng.standard_normal((hyper.batch, crop_len))
        x_t = diffuse_batch(x0, y, eps, t_batch, table)
        target = combined_target(x0, y, eps, t_batch, table)

        loss, grads = model.loss_and_grads(x_t, t_batch, target, mel=mel, enc=enc)
        if not np.isfinite(loss):
            model.load_params(snapshot)
            result.aborted = True
            break
        adam.step(grads)
        if step % hyper.log_every == 0 or step == 1 or step == hyper.steps:
            result.loss_curve.append((step, loss))
        if step % hyper.snapshot_every == 0:
            snapshot = model.clone_params()
        result.final_loss = loss

    return result
