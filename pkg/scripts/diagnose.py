"""Measurements on the built toy fixtures: edit strength, monotonicity, inversion."""

import json
import sys
import time
from pathlib import Path

import numpy as np
import torch

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from noisedirs import (
    Condition,
    EditSet,
    EditSpec,
    LatentState,
    edit_real,
    forward_noise,
    generated_pipeline,
    interpolation_strip,
    load_bank,
    load_model,
    rescore,
    sample_edited,
    train_factor_probe,
)
from noisedirs.cli import Workspace
from noisedirs.denoiser import predict_noise_batch
from noisedirs.editing import stacked_init

FIX = REPO / "tests" / "fixtures" / "toy"


def main():
    ws = Workspace(FIX)
    model = load_model(FIX / "model.bin")
    bank = load_bank(FIX / "bank.bin")
    model.attach_bank(bank)
    schedule = ws.schedule()
    images, labels = ws.dataset(with_labels=True)
    probe = ws.probe()

    print("embedding norms:", np.round(bank.embeddings.norm(dim=1).numpy(), 3), flush=True)

    # divergence strength vs prediction strength across t
    x = images[:6]
    for t in (250, 500, 750):
        eps = torch.randn(x.shape, generator=torch.Generator().manual_seed(0))
        x_t = forward_noise(LatentState(x, 0), t, eps, schedule).x
        with torch.no_grad():
            null_pred = predict_noise_batch(model, x_t, t, torch.zeros(6, model.cond_dim))
            ratios = []
            for k in range(bank.K):
                emb = bank.embeddings[k][None].expand(6, -1)
                pred = predict_noise_batch(model, x_t, t, emb)
                ratios.append(float((pred - null_pred).norm() / null_pred.norm()))
        print(f"t={t}: |dEps|/|eps| per direction:", np.round(ratios, 4), flush=True)

    # rescore sweep over scales
    seeds = list(range(32))
    pipeline = generated_pipeline(model, schedule, eval_steps=50)
    for scale in (2.0, 5.0, 10.0, 20.0, 40.0):
        edits = []
        for k in range(bank.K):
            edits.append(EditSpec(k, scale))
            edits.append(EditSpec(k, -scale))
        t0 = time.time()
        mat = rescore(edits, seeds, probe, pipeline)
        print(f"scale {scale} ({time.time()-t0:.0f}s):", flush=True)
        for r, label in enumerate(mat.row_labels):
            marks = " <-- " if np.abs(mat.values[r]).max() > 20 else ""
            print(f"  {label:>10}: {np.round(mat.values[r], 1)}{marks}", flush=True)

    print("total done")


if __name__ == "__main__":
    main()
