"""Calibration run for the toy experiment: measures everything the fixtures freeze."""

import json
import sys
import time
from pathlib import Path

import numpy as np
import torch

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from noisedirs import (
    EditSet,
    EditSpec,
    LatentState,
    TrainConfig,
    TrainerConfig,
    discover,
    edit_real,
    generated_pipeline,
    init_bank,
    make_schedule,
    rescore,
    sample_edited,
    train_denoiser,
    train_factor_probe,
)
from noisedirs.data import default_factor_spec, gen_synthetic_factors
from noisedirs.evaluation import diversity_report, probe_accuracy


def main():
    t0 = time.time()
    images, labels = gen_synthetic_factors(default_factor_spec(count=512, seed=0))
    probe = train_factor_probe(images, labels.binary, labels.names, seed=0)
    print("probe acc:", probe_accuracy(probe, images, labels.binary), flush=True)

    schedule = make_schedule(1000, 1e-4, 0.02)
    dn_t0 = time.time()
    res = train_denoiser(images, schedule, TrainConfig(steps=5000, batch_size=32), seed=0)
    model = res.model
    print(f"denoiser: init {res.initial_loss:.4f} final {res.final_loss:.4f} wall {time.time()-dn_t0:.0f}s", flush=True)

    # sampling sanity: do samples look like blobs to the probe?
    sample = sample_edited(model, schedule, 0, eval_steps=50)
    print("sample range", float(sample.x.min()), float(sample.x.max()), flush=True)

    # inversion round trip at several grids
    for ev in (50, 100, 200):
        mses = []
        for seed in range(5):
            img = sample_edited(model, schedule, seed, eval_steps=50).x
            rec = edit_real(model, schedule, LatentState(img, 0), EditSet(), eval_steps=ev)
            mses.append(float((rec.x - img).pow(2).mean()))
        print(f"inversion eval_steps={ev}: mse mean {np.mean(mses):.2e} max {np.max(mses):.2e}", flush=True)

    disc_t0 = time.time()
    cfg = TrainerConfig(N=100, subset_images=6, subset_dirs=8, tau=0.5, lr=1e-3, steps=3000, seed=0, batch=6)
    bank, manifest = discover(model, images, cfg, K=8, init_scale=0.01)
    print(f"discover wall {time.time()-disc_t0:.0f}s loss head {manifest.loss_trace[:3]} tail {manifest.loss_trace[-3:]}", flush=True)
    model.attach_bank(bank)

    report = diversity_report(bank, model, images[:16], seed=0)
    print("self-consistency:", np.round(report.self_consistency, 3), flush=True)
    print("mean cross |cos|:", round(report.mean_cross(), 3), "mean self:", round(report.mean_self(), 3), flush=True)

    # rescore all directions x both signs at a few scales/windows
    seeds = list(range(32))
    for window in [(1.0, 0.0), (0.5, 0.0)]:
        for scale in (2.0, 4.0):
            edits = []
            for k in range(8):
                edits.append(EditSpec(k, scale, window))
                edits.append(EditSpec(k, -scale, window))
            pipeline = generated_pipeline(model, schedule, eval_steps=50)
            mat = rescore(edits, seeds, probe, pipeline)
            print(f"window {window} scale {scale}:", flush=True)
            for r, label in enumerate(mat.row_labels):
                print(f"  {label:>10}: {np.round(mat.values[r], 1)}", flush=True)

    print(f"total wall {time.time()-t0:.0f}s")


if __name__ == "__main__":
    main()
