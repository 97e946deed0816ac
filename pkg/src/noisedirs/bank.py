"""Storage, initialization, subsetting, and persistence of direction embeddings."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from . import containers
from .errors import ContractViolation, FormatError
from .rng import torch_stream

BANK_MAGIC = b"NDBANK01"
BANK_FORMAT_VERSION = 1


@dataclass
class DirectionBank:
    """K learnable embeddings in the denoiser's condition space.

    Labels are post-hoc human annotations; nothing computes with them.
    Freezing is one-way: once frozen, the embeddings are never written again.
    """

    embeddings: torch.Tensor  # (K, cond_dim)
    init_seed: int
    frozen: bool = False
    labels: dict[int, str] = field(default_factory=dict)
    config_hash: str = ""

    @property
    def K(self) -> int:
        return self.embeddings.shape[0]

    @property
    def cond_dim(self) -> int:
        return self.embeddings.shape[1]

    def row(self, index: int) -> torch.Tensor:
        if not 0 <= int(index) < self.K:
            raise ValueError(f"direction index {index} out of range [0, {self.K})")
        return self.embeddings[int(index)]

    def freeze(self) -> None:
        self.frozen = True
        self.embeddings = self.embeddings.detach().clone()
        self.embeddings.requires_grad_(False)

    def label(self, index: int, name: str) -> None:
        self.row(index)  # bounds check
        self.labels[int(index)] = name


def init_bank(
    K: int,
    cond_dim: int,
    seed: int,
    null_embedding: Optional[torch.Tensor] = None,
    init_scale: float = 0.01,
) -> DirectionBank:
    """Initialize K directions as small seeded Gaussian offsets from the null embedding."""
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    if init_scale <= 0:
        raise ValueError(f"init_scale must be positive, got {init_scale}")
    if null_embedding is None:
        null_embedding = torch.zeros(cond_dim)
    if null_embedding.shape != (cond_dim,):
        raise ValueError(f"null_embedding must have shape ({cond_dim},)")
    noise = torch.randn(K, cond_dim, generator=torch_stream(seed, "bank-init"))
    embeddings = null_embedding[None, :] + init_scale * noise
    return DirectionBank(embeddings=embeddings, init_seed=seed)


def sample_subset(bank: DirectionBank, size: int, rng: np.random.Generator) -> list[int]:
    """Draw ``size`` distinct direction indices uniformly, in generator order."""
    if not 1 <= size <= bank.K:
        raise ValueError(f"subset size must be in [1, {bank.K}], got {size}")
    return [int(i) for i in rng.choice(bank.K, size=size, replace=False)]


def save_bank(bank: DirectionBank, path: str | Path) -> None:
    header = {
        "format_version": BANK_FORMAT_VERSION,
        "K": bank.K,
        "cond_dim": bank.cond_dim,
        "init_seed": bank.init_seed,
        "frozen": bank.frozen,
        "config_hash": bank.config_hash,
        "labels": {str(k): v for k, v in bank.labels.items()},
    }
    arrays = {"embeddings": bank.embeddings.detach().cpu().numpy()}
    containers.write_container(path, BANK_MAGIC, header, arrays)


def load_bank(path: str | Path) -> DirectionBank:
    header, arrays = containers.read_container(path, BANK_MAGIC)
    if header.get("format_version") != BANK_FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported bank format version {header.get('format_version')}")
    embeddings = torch.from_numpy(arrays["embeddings"].copy())
    if embeddings.shape != (header["K"], header["cond_dim"]):
        raise FormatError(f"{path}: embedding payload shape mismatch")
    bank = DirectionBank(
        embeddings=embeddings,
        init_seed=header["init_seed"],
        frozen=header["frozen"],
        labels={int(k): v for k, v in header.get("labels", {}).items()},
        config_hash=header.get("config_hash", ""),
    )
    if bank.frozen:
        bank.embeddings.requires_grad_(False)
    return bank


def require_unfrozen(bank: DirectionBank) -> None:
    if bank.frozen:
        raise ContractViolation("bank is frozen; training may not modify it")
