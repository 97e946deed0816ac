"""Contrastive discovery of directions in the noise-prediction space.

For a batch of images noised to a shared level t, each candidate direction's
signature is the divergence between its conditioned noise prediction and the
null-conditioned one. The loss attracts one direction's divergences across
images and repels different directions' divergences on the same image; only
the direction embeddings receive gradient, the denoiser stays frozen.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .bank import DirectionBank, init_bank, require_unfrozen, sample_subset, save_bank
from .denoiser import DenoiserModel, predict_noise_batch
from .errors import DegenerateInputError
from .manifest import RunManifest
from .rng import np_stream, torch_stream
from .schedule import LatentState, NoiseSchedule, forward_noise

NORM_GUARD = 1e-8  # floor on divergence norms; near-null init makes early divergences tiny


@dataclass
class TrainerConfig:
    """Hyperparameters of a discovery run."""

    N: int = 100               # training image pool size
    subset_images: int = 6     # images drawn per step (one positive pair minimum)
    subset_dirs: int = 20      # directions drawn per step (one negative minimum)
    tau: float = 0.5
    lr: float = 1e-3
    steps: int = 3000
    seed: int = 0
    batch: int = 6             # micro-batch of images per forward sweep
    t_sampling: str = "uniform"
    grad_clip: float = 1.0
    denominator_includes_positives: bool = False  # off: verbatim loss; on: standard variant
    checkpoint_every: int = 0

    def validate(self) -> None:
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.subset_images < 2:
            raise ValueError(f"subset_images must be >= 2, got {self.subset_images}")
        if self.subset_dirs < 2:
            raise ValueError(f"subset_dirs must be >= 2, got {self.subset_dirs}")
        if self.t_sampling != "uniform":
            raise ValueError(f"unsupported t_sampling {self.t_sampling!r}")


@dataclass
class DivergenceSet:
    """Flattened divergence vectors for a set of images x directions at one timestep."""

    values: torch.Tensor  # (n_images, n_dirs, latent_size)
    t: int
    dir_indices: list[int]
    image_indices: list[int]

    @property
    def n_images(self) -> int:
        return self.values.shape[0]

    @property
    def n_dirs(self) -> int:
        return self.values.shape[1]


def cosine_sim(u: torch.Tensor, v: torch.Tensor) -> float:
    """Cosine similarity of two nonzero vectors; raises on zero-norm input."""
    u = u.reshape(-1).double()
    v = v.reshape(-1).double()
    nu, nv = float(u.norm()), float(v.norm())
    if nu == 0.0 or nv == 0.0:
        raise DegenerateInputError("cosine similarity of a zero-norm vector is undefined")
    return float(torch.dot(u, v) / (nu * nv))


def compute_divergences(
    model: DenoiserModel,
    images: torch.Tensor,
    t: int,
    bank: DirectionBank,
    dir_indices: Sequence[int],
    eps: torch.Tensor,
    micro_batch: int = 6,
) -> DivergenceSet:
    """Divergence of each direction's prediction from the null prediction.

    Every direction is evaluated against the same noised latent per image
    (``eps`` is shared across directions), so the divergence isolates the
    effect of the condition. Gradients flow to the bank rows when the caller
    computes under grad; the denoiser weights never receive gradient.
    """
    n = images.shape[0]
    if eps.shape != images.shape:
        raise ValueError(f"eps shape {tuple(eps.shape)} must match images {tuple(images.shape)}")
    dir_indices = [int(i) for i in dir_indices]
    x_t = forward_noise(LatentState(images, 0), t, eps, model.schedule()).x

    k = len(dir_indices)
    rows = bank.embeddings[dir_indices]  # (k, cond_dim), differentiable view
    null_row = model.null_embedding[None, :]
    # rows + null evaluated jointly per image chunk
    embeddings = torch.cat([rows, null_row], dim=0)  # (k+1, cond_dim)

    outputs = []
    for start in range(0, n, max(1, micro_batch)):
        chunk = x_t[start : start + micro_batch]  # (m, C, H, W)
        m = chunk.shape[0]
        x_rep = chunk[:, None].expand(m, k + 1, *chunk.shape[1:]).reshape(m * (k + 1), *chunk.shape[1:])
        emb_rep = embeddings[None].expand(m, k + 1, -1).reshape(m * (k + 1), -1)
        preds = predict_noise_batch(model, x_rep, t, emb_rep).reshape(m, k + 1, -1)
        outputs.append(preds[:, :k, :] - preds[:, k:, :])
    values = torch.cat(outputs, dim=0)
    return DivergenceSet(values=values, t=t, dir_indices=dir_indices, image_indices=list(range(n)))


def _guarded_unit(values: torch.Tensor) -> torch.Tensor:
    return values / values.norm(dim=-1, keepdim=True).clamp_min(NORM_GUARD)


def _loss_from_sims(
    pos_sims: torch.Tensor,
    neg_sims: torch.Tensor,
    tau: float,
    include_positives_in_denominator: bool = False,
) -> torch.Tensor:
    """-log of (sum over off-diagonal positive pairs) / (sum over negatives).

    pos_sims: (n, n) similarities of one direction's divergences across images;
    only a != b entries contribute. neg_sims: (n, k-1) similarities against the
    other directions on the same image.
    """
    n = pos_sims.shape[0]
    off = ~torch.eye(n, dtype=torch.bool)
    pos_terms = (pos_sims[off] / tau).reshape(-1)
    neg_terms = (neg_sims / tau).reshape(-1)
    if include_positives_in_denominator:
        neg_terms = torch.cat([neg_terms, pos_terms])
    return -(torch.logsumexp(pos_terms, dim=0) - torch.logsumexp(neg_terms, dim=0))


def contrastive_loss(
    divs: DivergenceSet,
    j: int,
    tau: float,
    include_positives_in_denominator: bool = False,
) -> torch.Tensor:
    """Contrastive objective for positive direction slot ``j`` within ``divs``.

    Numerator: exp(sim/tau) over ordered image pairs a != b of direction j's
    divergences. Denominator: exp(sim/tau) between direction j's divergence and
    every other direction's divergence on the same image. As printed the
    denominator excludes positive pairs, so the value can be negative; the
    flag switches in the standard variant that includes them.
    """
    if divs.n_images < 2:
        raise ValueError(f"need at least 2 images, got {divs.n_images}")
    if divs.n_dirs < 2:
        raise ValueError(f"need at least 2 directions, got {divs.n_dirs}")
    if not 0 <= j < divs.n_dirs:
        raise ValueError(f"positive slot {j} out of range [0, {divs.n_dirs})")
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    unit = _guarded_unit(divs.values)  # (n, k, D)
    anchor = unit[:, j, :]  # (n, D)
    pos_sims = anchor @ anchor.T  # (n, n)
    neg_all = torch.einsum("ad,aid->ai", anchor, unit)  # (n, k)
    keep = [i for i in range(divs.n_dirs) if i != j]
    neg_sims = neg_all[:, keep]
    return _loss_from_sims(pos_sims, neg_sims, tau, include_positives_in_denominator)


def step_loss(
    divs: DivergenceSet, tau: float, include_positives_in_denominator: bool = False
) -> torch.Tensor:
    """Mean of the contrastive loss over every direction slot acting as positive."""
    losses = [
        contrastive_loss(divs, j, tau, include_positives_in_denominator)
        for j in range(divs.n_dirs)
    ]
    return torch.stack(losses).mean()


class DirectionTrainer:
    """Owns one discovery run: subset sampling, loss, and bank updates."""

    def __init__(self, model: DenoiserModel, images_pool: torch.Tensor, bank: DirectionBank, config: TrainerConfig):
        config.validate()
        require_unfrozen(bank)
        if config.subset_images > images_pool.shape[0]:
            raise ValueError(
                f"subset_images {config.subset_images} exceeds pool size {images_pool.shape[0]}"
            )
        if config.subset_dirs > bank.K:
            raise ValueError(f"subset_dirs {config.subset_dirs} exceeds bank size {bank.K}")
        model.freeze()
        self.model = model
        self.images_pool = images_pool
        self.bank = bank
        self.config = config
        self.schedule = model.schedule()
        bank.embeddings = bank.embeddings.detach().clone().requires_grad_(True)
        self.optimizer = torch.optim.AdamW([bank.embeddings], lr=config.lr)
        self.index_rng = np_stream(config.seed, "trainer-subsets")
        self.noise_rng = torch_stream(config.seed, "trainer-noise")
        self.loss_trace: list[float] = []

    def train_step(self) -> float:
        """One update: sample X', D' and t, compute divergences, step the bank."""
        require_unfrozen(self.bank)
        cfg = self.config
        img_idx = self.index_rng.choice(self.images_pool.shape[0], size=cfg.subset_images, replace=False)
        dir_idx = sample_subset(self.bank, cfg.subset_dirs, self.index_rng)
        t = int(self.index_rng.integers(1, self.schedule.T + 1))
        images = self.images_pool[torch.from_numpy(np.asarray(img_idx))]
        eps = torch.randn(images.shape, generator=self.noise_rng, dtype=images.dtype)

        divs = compute_divergences(
            self.model, images, t, self.bank, dir_idx, eps, micro_batch=cfg.batch
        )
        loss = step_loss(divs, cfg.tau, cfg.denominator_includes_positives)
        self.optimizer.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_([self.bank.embeddings], cfg.grad_clip)
        self.optimizer.step()
        value = float(loss.item())
        self.loss_trace.append(value)
        return value


def train_step(
    model: DenoiserModel, images_pool: torch.Tensor, bank: DirectionBank, config: TrainerConfig
) -> tuple[DirectionBank, float]:
    """Single standalone update (fresh optimizer state); loops should use DirectionTrainer."""
    trainer = DirectionTrainer(model, images_pool, bank, config)
    loss = trainer.train_step()
    return bank, loss


def discover(
    model: DenoiserModel,
    dataset: torch.Tensor,
    config: TrainerConfig,
    bank: Optional[DirectionBank] = None,
    K: int = 100,
    init_scale: float = 0.01,
    config_hash: str = "",
    checkpoint_dir: Optional[Path] = None,
) -> tuple[DirectionBank, RunManifest]:
    """Full discovery run: returns the frozen bank and its run manifest."""
    config.validate()
    if dataset.shape[0] < config.N:
        raise ValueError(f"dataset has {dataset.shape[0]} samples but config.N = {config.N}")
    if dataset.shape[0] > config.N:
        pool_idx = np_stream(config.seed, "discover-pool").choice(
            dataset.shape[0], size=config.N, replace=False
        )
        pool = dataset[torch.from_numpy(np.sort(pool_idx))]
    else:
        pool = dataset

    if bank is None:
        bank = init_bank(K, model.cond_dim, config.seed, model.null_embedding, init_scale)
    bank.config_hash = config_hash

    manifest = RunManifest(config_hash=config_hash, command="discover")
    manifest.seeds = {"global": config.seed}
    checksum_before = model.param_checksum()

    trainer = DirectionTrainer(model, pool, bank, config)
    started = time.time()
    for step in range(config.steps):
        trainer.train_step()
        if (
            checkpoint_dir is not None
            and config.checkpoint_every > 0
            and (step + 1) % config.checkpoint_every == 0
        ):
            ckpt = Path(checkpoint_dir) / f"bank_step{step + 1:06d}.bin"
            snapshot = DirectionBank(
                embeddings=bank.embeddings.detach().clone(),
                init_seed=bank.init_seed,
                frozen=False,
                labels=dict(bank.labels),
                config_hash=config_hash,
            )
            save_bank(snapshot, ckpt)
            manifest.add_checkpoint(ckpt)

    if model.param_checksum() != checksum_before:
        raise RuntimeError("denoiser weights changed during discovery; this is a bug")

    bank.freeze()
    manifest.loss_trace = list(trainer.loss_trace)
    manifest.wall_clock_s = time.time() - started
    return bank, manifest
