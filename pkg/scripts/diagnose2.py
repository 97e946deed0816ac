"""Second-stage measurements: inversion, monotonicity, composition, coherence."""

import json
import sys
import time
from pathlib import Path

import numpy as np
import torch

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from noisedirs import (
    EditSet,
    EditSpec,
    LatentState,
    edit_real,
    generated_pipeline,
    interpolation_strip,
    load_bank,
    load_model,
    perceptual_distance,
    rescore,
    sample_edited,
)
from noisedirs.cli import Workspace
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

    # 1. inversion round trip on dataset images
    for ev in (100, 200, 400):
        t0 = time.time()
        batch = images[:20]
        rec = edit_real(model, schedule, LatentState(batch, 0), EditSet(), eval_steps=ev)
        mses = (rec.x - batch).pow(2).mean(dim=(1, 2, 3))
        print(f"inversion@{ev}: mean {mses.mean():.2e} max {mses.max():.2e} ({time.time()-t0:.0f}s)", flush=True)

    # candidate factor-aligned edits from the diagnosis
    pos_edit = (5, -10.0)   # moves position-right probability up
    bright_edit = (2, 10.0)  # moves brightness-dim probability up (bright down)

    # 2. monotonicity across [-2,-1,0,1,2] scaled by |edit scale|/2 per seed
    for (k, lam) in (pos_edit, bright_edit):
        unit = lam / 2.0
        scales = [-2 * unit, -1 * unit, 0.0, 1 * unit, 2 * unit]
        scales = sorted(scales)
        mono = 0
        for seed in range(20):
            strip = interpolation_strip(model, schedule, seed, k, scales, window=(1.0, 0.0), eval_steps=50)
            probs = [probe.classify(s.x) for s in strip]
            for attr in range(2):
                seq = [p[attr] for p in probs]
                inc = all(b >= a for a, b in zip(seq, seq[1:]))
                dec = all(b <= a for a, b in zip(seq, seq[1:]))
                if attr == (0 if k == 5 else 1):
                    mono += inc or dec
        print(f"direction {k} scaled strip: monotone {mono}/20", flush=True)

    # 2b. literal [-2,-1,0,1,2] strips
    for (k, attr) in ((5, 0), (2, 1)):
        mono = 0
        for seed in range(20):
            strip = interpolation_strip(model, schedule, seed, k, [-2, -1, 0, 1, 2], window=(1.0, 0.0), eval_steps=50)
            seq = [probe.classify(s.x)[attr] for s in strip]
            inc = all(b >= a for a, b in zip(seq, seq[1:]))
            dec = all(b <= a for a, b in zip(seq, seq[1:]))
            mono += inc or dec
        print(f"direction {k} literal [-2..2]: monotone {mono}/20", flush=True)

    # 3. composition: both edits together vs single
    seeds = list(range(20))
    pipeline = generated_pipeline(model, schedule, eval_steps=50)
    base = np.stack([probe.classify(x) for x in pipeline(seeds, EditSet())])
    single_pos = np.stack([probe.classify(x) for x in pipeline(seeds, EditSet([EditSpec(*pos_edit)]))])
    single_bright = np.stack([probe.classify(x) for x in pipeline(seeds, EditSet([EditSpec(*bright_edit)]))])
    both = np.stack([
        probe.classify(x)
        for x in pipeline(seeds, EditSet([EditSpec(*pos_edit), EditSpec(*bright_edit)]))
    ])
    d_pos_single = (single_pos - base).mean(0) * 100
    d_bright_single = (single_bright - base).mean(0) * 100
    d_both = (both - base).mean(0) * 100
    print("single pos:", np.round(d_pos_single, 1), "single bright:", np.round(d_bright_single, 1),
          "both:", np.round(d_both, 1), flush=True)
    print("ratios: pos", d_both[0] / d_pos_single[0], "bright", d_both[1] / d_bright_single[1], flush=True)

    # 4. coherence: distance grows with |lambda|; discovered vs random at matched delta
    k, lam = pos_edit
    for mult in (0.0, 0.5, 1.0, 2.0):
        dists = []
        for seed in range(10):
            plain = sample_edited(model, schedule, seed, eval_steps=50).x
            edited = sample_edited(model, schedule, seed,
                                   edit_set=EditSet([EditSpec(k, lam * mult)]), eval_steps=50).x
            dists.append(perceptual_distance(plain, edited, probe))
        print(f"coherence |lam|x{mult}: mean dist {np.mean(dists):.4f}", flush=True)

    # random-direction comparison at matched probe delta
    gen = torch.Generator().manual_seed(123)
    rand_vec = torch.randn(model.cond_dim, generator=gen)
    rand_vec = rand_vec / rand_vec.norm() * bank.embeddings[k].norm()
    import noisedirs.bank as bank_mod

    rbank = bank_mod.DirectionBank(embeddings=torch.cat([bank.embeddings, rand_vec[None]]), init_seed=0)
    rbank.freeze()
    model.attach_bank(rbank)
    ridx = rbank.K - 1
    target = abs(d_pos_single[0])
    print("target |delta|:", target, flush=True)
    for rl in (10.0, 20.0, 40.0, 80.0, 160.0):
        after = np.stack([probe.classify(x) for x in pipeline(seeds[:10], EditSet([EditSpec(ridx, rl)]))])
        delta = (after - base[:10]).mean(0) * 100
        dists = []
        for seed in range(10):
            plain = sample_edited(model, schedule, seed, eval_steps=50).x
            edited = sample_edited(model, schedule, seed, edit_set=EditSet([EditSpec(ridx, rl)]), eval_steps=50).x
            dists.append(perceptual_distance(plain, edited, probe))
        print(f"random@{rl}: delta {np.round(delta,1)} dist {np.mean(dists):.4f}", flush=True)


if __name__ == "__main__":
    main()
