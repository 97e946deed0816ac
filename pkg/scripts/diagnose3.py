"""Composition tuning: window assignments and scales for the two factor edits."""

import sys
import time
from pathlib import Path

import numpy as np
import torch

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from noisedirs import EditSet, EditSpec, generated_pipeline, load_bank, load_model
from noisedirs.cli import Workspace

FIX = REPO / "tests" / "fixtures" / "toy"


def main():
    ws = Workspace(FIX)
    model = load_model(FIX / "model.bin")
    bank = load_bank(FIX / "bank.bin")
    model.attach_bank(bank)
    schedule = ws.schedule()
    probe = ws.probe()
    seeds = list(range(20))
    pipeline = generated_pipeline(model, schedule, eval_steps=50)
    base = np.stack([probe.classify(x) for x in pipeline(seeds, EditSet())])

    def deltas(edit_set):
        after = np.stack([probe.classify(x) for x in pipeline(seeds, edit_set)])
        return (after - base).mean(0) * 100

    combos = [
        ("full/full lam 10/10", EditSpec(5, -10.0), EditSpec(2, 10.0)),
        ("full/full lam 6/6", EditSpec(5, -6.0), EditSpec(2, 6.0)),
        ("early-pos late-bright", EditSpec(5, -10.0, (1.0, 0.5)), EditSpec(2, 10.0, (0.5, 0.0))),
        ("early-pos late-bright 14/14", EditSpec(5, -14.0, (1.0, 0.5)), EditSpec(2, 14.0, (0.5, 0.0))),
        ("coarse-pos fine-bright", EditSpec(5, -20.0, (0.9, 0.8)), EditSpec(2, 10.0, (0.5, 0.0))),
        ("full-pos fine-bright", EditSpec(5, -10.0), EditSpec(2, 10.0, (0.5, 0.0))),
    ]
    for name, pos, bright in combos:
        d_pos = deltas(EditSet([pos]))
        d_bright = deltas(EditSet([bright]))
        d_both = deltas(EditSet([pos, bright]))
        r_pos = d_both[0] / d_pos[0] if d_pos[0] != 0 else float("nan")
        r_bright = d_both[1] / d_bright[1] if d_bright[1] != 0 else float("nan")
        print(f"{name:28s} pos {np.round(d_pos,1)} bright {np.round(d_bright,1)} "
              f"both {np.round(d_both,1)} ratios ({r_pos:.2f}, {r_bright:.2f})", flush=True)


if __name__ == "__main__":
    main()
