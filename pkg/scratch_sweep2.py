"""Scratch: receptive-field sweep (deleted before delivery)."""
import time

import numpy as np

from sediff.dataset import CorpusConfig, build_corpus, load_pairs
from sediff.denoiser import DenoiserConfig, DenoiserModel, TrainConfig, train_denoiser
from sediff.diffusion import SamplerOptions
from sediff.metrics import si_sdr
from sediff.pipeline import enhance_split, make_train_items
from sediff.schedule import ScheduleConfig, build_schedule

table = build_schedule(ScheduleConfig())
corpus = build_corpus(CorpusConfig(root="/tmp/exp2_corpus", train_count=240,
                                   val_count=24, test_count=24, duration_s=0.7, seed=11))
records = corpus.split("test")
pairs = load_pairs(corpus, "test")
cleans = {rec.utt_id: p[0] for rec, p in zip(records, pairs)}
snrs = {rec.utt_id: rec.snr_db for rec in records}
noisy_si = {rec.utt_id: si_sdr(p[0], p[1]) for rec, p in zip(records, pairs)}
base = np.mean(list(noisy_si.values()))
print(f"unprocessed {base:.2f}", flush=True)

WIDE = (1, 2, 4, 8, 16, 32, 64, 128)
configs = [
    ("F wide-dil lr2e-4 crop4", 2e-4, 4, WIDE),
    ("G wide-dil lr4e-4 crop4", 4e-4, 4, WIDE),
    ("H wide-dil lr4e-4 crop6", 4e-4, 6, WIDE),
]
items_pre = make_train_items(corpus, "pretrain", "class")
items_fine = make_train_items(corpus, "finetune", "class")

for name, lr, crop, cycle in configs:
    t0 = time.time()
    model = DenoiserModel(DenoiserConfig(blocks=8, channels=32, enc_dim=4,
                                         dilation_cycle=cycle, init_seed=7))
    r1 = train_denoiser(model, items_pre, table,
                        TrainConfig(lr=lr, steps=2600, batch=4, crop_frames=crop, seed=1))
    r2 = train_denoiser(model, items_fine, table,
                        TrainConfig(lr=lr, steps=1400, batch=4, crop_frames=crop, seed=2))
    outs = enhance_split(model, corpus, table, SamplerOptions(mode="none"),
                         enc_mode="class", seed=3)
    per = {uid: si_sdr(cleans[uid], wf) for uid, wf in outs.items()}
    mean_si = np.mean(list(per.values()))
    by_snr = {}
    for uid, v in per.items():
        by_snr.setdefault(snrs[uid], []).append(v - noisy_si[uid])
    snr_str = " ".join(f"{k}:{np.mean(v):+.2f}" for k, v in sorted(by_snr.items()))
    print(f"{name}: loss {r1.final_loss:.4f}/{r2.final_loss:.4f} none {mean_si:.2f} "
          f"(d{mean_si-base:+.2f}) perSNR[{snr_str}] ({time.time()-t0:.0f}s)", flush=True)
