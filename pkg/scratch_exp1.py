"""Scratch: desk-scale learning-quality probe (deleted before delivery)."""
import time

import numpy as np

from sediff.dataset import CorpusConfig, build_corpus, load_pairs
from sediff.denoiser import DenoiserConfig, DenoiserModel, TrainConfig
from sediff.diffusion import SamplerOptions
from sediff.metrics import si_sdr
from sediff.pipeline import enhance_split, train_two_stage
from sediff.schedule import ScheduleConfig, build_schedule

t_start = time.time()
table = build_schedule(ScheduleConfig())
corpus = build_corpus(CorpusConfig(root="/tmp/exp1_corpus", train_count=240,
                                   val_count=24, test_count=24, duration_s=0.7, seed=11))
print(f"corpus built {time.time()-t_start:.0f}s", flush=True)

model = DenoiserModel(DenoiserConfig(blocks=8, channels=32, enc_dim=4, init_seed=7))
res = train_two_stage(
    model, corpus, table,
    pretrain=TrainConfig(steps=2600, batch=4, crop_frames=4, seed=1),
    finetune=TrainConfig(steps=1400, batch=4, crop_frames=4, seed=2),
    enc_mode="class",
)
for sr in res:
    print(sr.stage, "final loss", sr.result.final_loss, flush=True)
print(f"trained {time.time()-t_start:.0f}s", flush=True)

pairs = load_pairs(corpus, "test")
cleans = {rec.utt_id: p[0] for rec, p in zip(corpus.split("test"), pairs)}
noisy_si = np.mean([si_sdr(p[0], p[1]) for p in pairs])
print("unprocessed mean SI-SDR:", noisy_si, flush=True)

for mode, r, t0 in (("none", 0.0, 0), ("original", 0.2, 0), ("improved", 0.1, 5)):
    opts = SamplerOptions(mode=mode, r=r, t0=t0)
    outs = enhance_split(model, corpus, table, opts, enc_mode="class", seed=3)
    vals = [si_sdr(cleans[uid], wf) for uid, wf in outs.items()]
    print(f"mode={mode}: mean SI-SDR {np.mean(vals):.2f} dB (delta {np.mean(vals)-noisy_si:+.2f})",
          flush=True)
print(f"total {time.time()-t_start:.0f}s", flush=True)
