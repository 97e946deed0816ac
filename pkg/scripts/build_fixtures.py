"""Build the committed toy-experiment fixtures: trained model, bank, measurements.

Writes tests/fixtures/toy/{config.yaml, model.bin, bank.bin, fixture_manifest.json,
loss_trace.json}. The manifest freezes measured values (losses, wall clocks,
artifact hashes) that the test suite asserts against.
"""

import json
import sys
import time
from pathlib import Path

import numpy as np
import torch

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from noisedirs import TrainConfig, discover, save_bank, save_model, train_denoiser
from noisedirs.cli import Workspace
from noisedirs.manifest import file_sha256

TOY_CONFIG = """\
domain: synthetic-blobs
K: 8
init_scale: 0.01
latent_shape: [1, 8, 8]
seed: 0
dataset:
  source: synthetic
  synthetic:
    count: 512
schedule:
  T: 1000
  beta_start: 0.0001
  beta_end: 0.02
  kind: linear
  deterministic: true
denoiser:
  base_channels: 32
  cond_dim: 64
  time_dim: 128
  steps: 5000
  lr: 0.0001
  batch_size: 32
  use_labels: true
  uncond_prob: 0.5
trainer:
  N: 100
  subset_images: 6
  subset_dirs: 8
  tau: 0.5
  lr: 0.001
  steps: 3000
  seed: 0
  batch: 6
edit:
  eval_steps: 50
  invert_steps: 200
  guidance_scale: 7.5
  default_scale: 10.0
eval:
  eval_size: 32
  eval_seed: 0
"""


def combo_labels(binary: np.ndarray) -> torch.Tensor:
    combo = np.zeros(binary.shape[0], dtype=np.int64)
    for col in range(binary.shape[1]):
        combo = combo * 2 + binary[:, col]
    return torch.from_numpy(combo)


def main():
    out_dir = REPO / "tests" / "fixtures" / "toy"
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.yaml").write_text(TOY_CONFIG)

    ws = Workspace(out_dir)
    cfg = ws.config
    images, labels = ws.dataset(with_labels=True)
    schedule = ws.schedule()

    t0 = time.time()
    result = train_denoiser(
        images,
        schedule,
        TrainConfig(
            steps=cfg.denoiser.steps,
            lr=cfg.denoiser.lr,
            batch_size=cfg.denoiser.batch_size,
            uncond_prob=cfg.denoiser.uncond_prob,
        ),
        seed=cfg.seed,
        labels=combo_labels(labels.binary) if cfg.denoiser.use_labels else None,
        base_channels=cfg.denoiser.base_channels,
        cond_dim=cfg.denoiser.cond_dim,
        time_dim=cfg.denoiser.time_dim,
    )
    pretrain_wall = time.time() - t0
    model = result.model
    save_model(model, out_dir / "model.bin")
    print(f"pretrain: {result.initial_loss:.4f} -> {result.final_loss:.4f} in {pretrain_wall:.0f}s", flush=True)

    t0 = time.time()
    bank, run_manifest = discover(
        model, images, cfg.trainer, K=cfg.K, init_scale=cfg.init_scale, config_hash=ws.config_hash
    )
    discover_wall = time.time() - t0
    save_bank(bank, out_dir / "bank.bin")
    print(f"discover: {discover_wall:.0f}s, loss {run_manifest.loss_trace[0]:.3f} -> "
          f"{np.mean(run_manifest.loss_trace[-50:]):.3f}", flush=True)

    manifest = {
        "config_hash": ws.config_hash,
        "pretrain_wall_s": pretrain_wall,
        "pretrain_initial_loss": result.initial_loss,
        "pretrain_final_loss": result.final_loss,
        "discover_wall_s": discover_wall,
        "discover_loss_first": run_manifest.loss_trace[0],
        "discover_loss_last50_mean": float(np.mean(run_manifest.loss_trace[-50:])),
        "model_sha256": file_sha256(out_dir / "model.bin"),
        "bank_sha256": file_sha256(out_dir / "bank.bin"),
        "embedding_norms": bank.embeddings.norm(dim=1).tolist(),
    }
    (out_dir / "fixture_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    (out_dir / "loss_trace.json").write_text(json.dumps(run_manifest.loss_trace))
    print(json.dumps({k: v for k, v in manifest.items() if "sha" not in k}, indent=2))


if __name__ == "__main__":
    main()
