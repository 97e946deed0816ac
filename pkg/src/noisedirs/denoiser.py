"""The conditional noise predictor: model wrapper, training loop, and guidance.

The null condition is a fixed all-zero embedding, so a direction equal to it
produces exactly zero divergence. Direction conditions resolve against the
bank attached to the model; raw conditions carry their own embedding.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F

from . import containers
from .errors import FormatError
from .rng import torch_stream
from .schedule import LatentState, NoiseSchedule, forward_noise, make_schedule
from .unet import CondUNet

MODEL_MAGIC = b"NDMODL01"
MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Condition:
    """A resolvable conditioning input: the null embedding, a bank slot, or a raw vector."""

    kind: str  # "null" | "direction" | "raw"
    index: Optional[int] = None
    embedding: Optional[torch.Tensor] = None

    @staticmethod
    def null() -> "Condition":
        return Condition(kind="null")

    @staticmethod
    def direction(index: int) -> "Condition":
        return Condition(kind="direction", index=int(index))

    @staticmethod
    def raw(embedding: torch.Tensor) -> "Condition":
        return Condition(kind="raw", embedding=embedding)


@dataclass
class TrainConfig:
    """Hyperparameters for denoiser pretraining."""

    steps: int = 5000
    lr: float = 1e-4
    batch_size: int = 32
    uncond_prob: float = 0.2  # chance a labeled sample trains against the null embedding


class DenoiserModel:
    """A trained noise predictor plus its conditioning space.

    ``class_embeddings`` (optional) are probe conditions learned from dataset
    labels during pretraining; they exist to exercise guidance, not discovery.
    """

    def __init__(
        self,
        net: CondUNet,
        latent_shape: tuple[int, int, int],
        schedule_params: dict,
        class_embeddings: Optional[torch.Tensor] = None,
    ):
        self.net = net
        self.latent_shape = tuple(latent_shape)
        self.cond_dim = net.cond_dim
        self.schedule_params = dict(schedule_params)
        self.class_embeddings = class_embeddings
        self.active_bank = None  # set via attach_bank
        self.net.eval()

    def attach_bank(self, bank) -> None:
        if bank is not None and bank.cond_dim != self.cond_dim:
            raise ValueError(
                f"bank cond_dim {bank.cond_dim} does not match model cond_dim {self.cond_dim}"
            )
        self.active_bank = bank

    @property
    def null_embedding(self) -> torch.Tensor:
        return torch.zeros(self.cond_dim)

    def schedule(self) -> NoiseSchedule:
        return make_schedule(**self.schedule_params)

    def resolve(self, cond: Condition) -> torch.Tensor:
        if cond.kind == "null":
            return self.null_embedding
        if cond.kind == "raw":
            if cond.embedding is None or cond.embedding.shape != (self.cond_dim,):
                raise ValueError(f"raw condition must carry a ({self.cond_dim},) embedding")
            return cond.embedding
        if cond.kind == "direction":
            if self.active_bank is None:
                raise ValueError("no direction bank attached to the model")
            return self.active_bank.row(cond.index)
        raise ValueError(f"unknown condition kind {cond.kind!r}")

    def param_checksum(self) -> str:
        """Content hash over all weights; changes iff any weight changes."""
        digest = hashlib.sha256()
        state = self.net.state_dict()
        for key in sorted(state):
            digest.update(key.encode())
            digest.update(state[key].detach().cpu().numpy().tobytes())
        if self.class_embeddings is not None:
            digest.update(b"class_embeddings")
            digest.update(self.class_embeddings.detach().cpu().numpy().tobytes())
        return digest.hexdigest()

    def freeze(self) -> None:
        for p in self.net.parameters():
            p.requires_grad_(False)


def predict_noise(model: DenoiserModel, x_t: LatentState, cond: Condition) -> torch.Tensor:
    """Evaluate eps(x_t, t, cond). Accepts a single latent or a leading batch dim."""
    x = x_t.x
    batched = x.dim() == 4
    if tuple(x.shape[-3:]) != model.latent_shape:
        raise ValueError(f"latent shape {tuple(x.shape)} does not match model {model.latent_shape}")
    if not batched:
        x = x[None]
    emb = model.resolve(cond).to(x.dtype)[None].expand(x.shape[0], -1)
    t = torch.full((x.shape[0],), x_t.t, dtype=torch.long)
    out = model.net(x, t, emb)
    return out if batched else out[0]


def predict_noise_batch(
    model: DenoiserModel, x: torch.Tensor, t: int, embeddings: torch.Tensor
) -> torch.Tensor:
    """Batched raw-embedding evaluation used by the trainer and editors.

    x: (B, C, H, W), embeddings: (B, cond_dim); gradients flow to embeddings.
    """
    t_vec = torch.full((x.shape[0],), t, dtype=torch.long)
    return model.net(x, t_vec, embeddings.to(x.dtype))


def cfg_predict(
    model: DenoiserModel, x_t: LatentState, cond: Condition, guidance_scale: float
) -> torch.Tensor:
    """Guided prediction eps(phi) + g * (eps(cond) - eps(phi)).

    Collapses to the unconditional prediction at g = 0 and to the conditional
    one at g = 1; affine in g in between.
    """
    eps_null = predict_noise(model, x_t, Condition.null())
    if cond.kind == "null":
        return eps_null
    eps_cond = predict_noise(model, x_t, cond)
    return eps_null + guidance_scale * (eps_cond - eps_null)


def _eval_loss(model: DenoiserModel, schedule: NoiseSchedule, data: torch.Tensor, seed: int) -> float:
    """Mean squared noise-prediction error on a fixed seeded evaluation grid."""
    gen = torch_stream(seed, "denoiser-eval")
    total, count = 0.0, 0
    with torch.no_grad():
        for t in np.linspace(1, schedule.T, num=8).astype(int):
            eps = torch.randn(data.shape, generator=gen, dtype=data.dtype)
            x_t = forward_noise(LatentState(data, 0), int(t), eps, schedule)
            emb = torch.zeros(data.shape[0], model.cond_dim)
            pred = predict_noise_batch(model, x_t.x, int(t), emb)
            total += F.mse_loss(pred, eps, reduction="sum").item()
            count += eps.numel()
    return total / count


@dataclass
class DenoiserTrainResult:
    model: DenoiserModel
    loss_trace: list[float] = field(default_factory=list)
    final_loss: float = 0.0
    initial_loss: float = 0.0


def train_denoiser(
    dataset: torch.Tensor,
    schedule: NoiseSchedule,
    config: TrainConfig,
    seed: int,
    labels: Optional[torch.Tensor] = None,
    base_channels: int = 32,
    cond_dim: int = 64,
    time_dim: int = 128,
) -> DenoiserTrainResult:
    """Pretrain the noise predictor on clean latents.

    Training conditions on the null embedding; when integer ``labels`` are
    given, a per-class probe embedding is learned jointly and dropped to null
    with probability ``uncond_prob`` so guidance is exercised later.
    Deterministic for a fixed (dataset, config, seed).
    """
    if dataset.dim() != 4 or dataset.shape[0] == 0:
        raise ValueError("dataset must be a non-empty (N, C, H, W) tensor")
    latent_shape = tuple(dataset.shape[1:])

    torch.manual_seed(seed)
    net = CondUNet(in_ch=latent_shape[0], base=base_channels, cond_dim=cond_dim, time_dim=time_dim)
    net.train()

    class_embeddings = None
    params = list(net.parameters())
    if labels is not None:
        n_classes = int(labels.max().item()) + 1
        class_embeddings = torch.zeros(n_classes, cond_dim).normal_(
            0.0, 0.1, generator=torch_stream(seed, "class-emb")
        ).requires_grad_(True)
        params = params + [class_embeddings]

    opt = torch.optim.AdamW(params, lr=config.lr)
    data_rng = torch_stream(seed, "denoiser-batches")
    noise_rng = torch_stream(seed, "denoiser-noise")

    model = DenoiserModel(net, latent_shape, schedule.describe(), class_embeddings)
    initial_loss = _eval_loss(model, schedule, dataset[: min(64, len(dataset))], seed)

    net.train()
    trace: list[float] = []
    n = dataset.shape[0]
    for _ in range(config.steps):
        idx = torch.randint(0, n, (min(config.batch_size, n),), generator=data_rng)
        x0 = dataset[idx]
        t = int(torch.randint(1, schedule.T + 1, (1,), generator=data_rng).item())
        eps = torch.randn(x0.shape, generator=noise_rng, dtype=x0.dtype)
        x_t = forward_noise(LatentState(x0, 0), t, eps, schedule).x

        emb = torch.zeros(x0.shape[0], cond_dim)
        if class_embeddings is not None:
            keep = torch.rand(x0.shape[0], generator=data_rng) >= config.uncond_prob
            emb = torch.where(keep[:, None], class_embeddings[labels[idx]], emb)

        pred = net(x_t, torch.full((x0.shape[0],), t, dtype=torch.long), emb)
        loss = F.mse_loss(pred, eps)
        opt.zero_grad()
        loss.backward()
        opt.step()
        trace.append(float(loss.item()))

    net.eval()
    model.freeze()
    if class_embeddings is not None:
        class_embeddings.requires_grad_(False)
    final_loss = _eval_loss(model, schedule, dataset[: min(64, len(dataset))], seed)
    return DenoiserTrainResult(model=model, loss_trace=trace, final_loss=final_loss, initial_loss=initial_loss)


def save_model(model: DenoiserModel, path: str | Path) -> None:
    """Write the model to a versioned container with an embedded weight checksum."""
    state = model.net.state_dict()
    arrays = {f"net.{k}": state[k].detach().cpu().numpy() for k in sorted(state)}
    if model.class_embeddings is not None:
        arrays["class_embeddings"] = model.class_embeddings.detach().cpu().numpy()
    header = {
        "format_version": MODEL_FORMAT_VERSION,
        "latent_shape": list(model.latent_shape),
        "cond_dim": model.cond_dim,
        "base_channels": model.net.base,
        "time_dim": model.net.time_dim,
        "schedule": model.schedule_params,
        "param_checksum": model.param_checksum(),
    }
    containers.write_container(path, MODEL_MAGIC, header, arrays)


def load_model(path: str | Path) -> DenoiserModel:
    header, arrays = containers.read_container(path, MODEL_MAGIC)
    if header.get("format_version") != MODEL_FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported model format version {header.get('format_version')}")
    latent_shape = tuple(header["latent_shape"])
    net = CondUNet(
        in_ch=latent_shape[0],
        base=header["base_channels"],
        cond_dim=header["cond_dim"],
        time_dim=header["time_dim"],
    )
    state = {k[len("net."):]: torch.from_numpy(v.copy()) for k, v in arrays.items() if k.startswith("net.")}
    net.load_state_dict(state)
    class_embeddings = None
    if "class_embeddings" in arrays:
        class_embeddings = torch.from_numpy(arrays["class_embeddings"].copy())
    model = DenoiserModel(net, latent_shape, header["schedule"], class_embeddings)
    model.freeze()
    if model.param_checksum() != header["param_checksum"]:
        raise FormatError(f"{path}: weight checksum does not match header")
    return model
