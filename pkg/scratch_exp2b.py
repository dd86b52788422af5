"""Scratch: resume exp2 from the pretrain checkpoint (deleted before delivery)."""
import time

import numpy as np

from sediff.conditioning import encode_class
from sediff.dataset import CorpusConfig, build_corpus, load_pairs
from sediff.denoiser import DenoiserModel, TrainConfig, train_denoiser
from sediff.diffusion import SamplerOptions
from sediff.metrics import si_sdr
from sediff.pipeline import enhance_split, make_train_items
from sediff.schedule import ScheduleConfig, build_schedule
from sediff.variants import bound_study

t_start = time.time()
table = build_schedule(ScheduleConfig())
corpus = build_corpus(CorpusConfig(root="/tmp/exp2_corpus", train_count=240,
                                   val_count=24, test_count=24, duration_s=0.7, seed=11))
model = DenoiserModel.load("/tmp/exp2_pretrain.ckpt")

pairs = load_pairs(corpus, "test")
cleans = {rec.utt_id: p[0] for rec, p in zip(corpus.split("test"), pairs)}
noisy_si = np.mean([si_sdr(p[0], p[1]) for p in pairs])
print("unprocessed mean SI-SDR:", round(noisy_si, 2), flush=True)

encs = [encode_class(rec.noise_class, 4) for rec in corpus.split("test")]
opts_imp = SamplerOptions(mode="improved", r=0.1, t0=5)
upper, lower = bound_study(model, corpus, table, opts_imp, encs=encs, seed=3)
print(f"bounds on pretrain model: upper {upper['mean_si_sdr']:.2f} "
      f"lower {lower['mean_si_sdr']:.2f}  ({time.time()-t_start:.0f}s)", flush=True)

items_fine = make_train_items(corpus, "finetune", "class")
res_fine = train_denoiser(model, items_fine, table,
                          TrainConfig(lr=2e-4, steps=7000, batch=4, crop_frames=4, seed=2))
print(f"finetune loss {res_fine.final_loss:.4f}  ({time.time()-t_start:.0f}s)", flush=True)
model.save("/tmp/exp2_final.ckpt")

for mode, r, t0 in (("none", 0.0, 0), ("original", 0.2, 0), ("improved", 0.1, 5)):
    opts = SamplerOptions(mode=mode, r=r, t0=t0)
    vals = []
    for seed in (3, 4, 5):
        outs = enhance_split(model, corpus, table, opts, enc_mode="class", seed=seed)
        vals.append(np.mean([si_sdr(cleans[uid], wf) for uid, wf in outs.items()]))
    print(f"mode={mode}: per-seed {[round(v,2) for v in vals]} mean {np.mean(vals):.2f} "
          f"(delta {np.mean(vals)-noisy_si:+.2f})", flush=True)
print(f"total {time.time()-t_start:.0f}s", flush=True)
