"""Dataset ingestion: image folders, synthetic factor data, and model samples.

Folder ingestion is deterministic: lexicographic file order, then a seeded
subsample of the requested size. The synthetic generator renders a Gaussian
blob whose named factors (horizontal position, brightness, ...) are sampled
independently, with labels returned for probe training only.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from .errors import IngestionError
from .rng import np_stream, torch_stream

log = logging.getLogger(__name__)

RASTER_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff", ".webp"}

RENDER_RULES = ("x_pos", "y_pos", "brightness", "size")


@dataclass(frozen=True)
class Factor:
    """One independent generative factor with its rendering rule."""

    name: str
    low: float
    high: float
    render: str  # one of RENDER_RULES

    def __post_init__(self):
        if self.render not in RENDER_RULES:
            raise ValueError(f"unknown render rule {self.render!r}; choose from {RENDER_RULES}")
        if not self.high > self.low:
            raise ValueError(f"factor {self.name!r} has degenerate range [{self.low}, {self.high}]")


@dataclass(frozen=True)
class FactorSpec:
    factors: tuple[Factor, ...]
    count: int = 512
    seed: int = 0
    latent_shape: tuple[int, int, int] = (1, 8, 8)

    def __init__(self, factors, count: int = 512, seed: int = 0, latent_shape=(1, 8, 8)):
        object.__setattr__(self, "factors", tuple(factors))
        object.__setattr__(self, "count", count)
        object.__setattr__(self, "seed", seed)
        object.__setattr__(self, "latent_shape", tuple(latent_shape))
        if len(self.factors) == 0:
            raise ValueError("at least one factor is required")
        if self.count < 1:
            raise ValueError(f"count must be >= 1, got {self.count}")


@dataclass
class FactorLabels:
    """Per-sample factor values plus midpoint binarizations (probe training only)."""

    names: list[str]
    values: np.ndarray  # (N, F) raw factor values
    binary: np.ndarray  # (N, F) value > midpoint

    def correlation(self) -> np.ndarray:
        return np.corrcoef(self.values, rowvar=False)


def default_factor_spec(count: int = 512, seed: int = 0) -> FactorSpec:
    """Two-factor blob world: horizontal position and brightness."""
    return FactorSpec(
        factors=[
            Factor("position", 2.0, 5.0, "x_pos"),
            Factor("brightness", 0.35, 1.0, "brightness"),
        ],
        count=count,
        seed=seed,
    )


def _render_blob(params: dict[str, float], shape: tuple[int, int, int]) -> np.ndarray:
    _, h, w = shape
    cx = params.get("x_pos", (w - 1) / 2.0)
    cy = params.get("y_pos", (h - 1) / 2.0)
    amp = params.get("brightness", 1.0)
    sigma = params.get("size", 1.2)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    blob = amp * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2.0 * sigma**2))
    img = -1.0 + 2.0 * np.clip(blob, 0.0, 1.0)
    return np.broadcast_to(img[None, :, :], shape).copy()


def gen_synthetic_factors(spec: FactorSpec) -> tuple[torch.Tensor, FactorLabels]:
    """Render ``spec.count`` samples with independently drawn factor values.

    Labels are for probe training only; discovery never sees them.
    """
    rng = np_stream(spec.seed, "synthetic-factors")
    values = np.stack(
        [rng.uniform(f.low, f.high, size=spec.count) for f in spec.factors], axis=1
    )
    images = np.empty((spec.count, *spec.latent_shape), dtype=np.float32)
    for i in range(spec.count):
        params = {f.render: values[i, j] for j, f in enumerate(spec.factors)}
        images[i] = _render_blob(params, spec.latent_shape)
    mids = np.array([(f.low + f.high) / 2.0 for f in spec.factors])
    labels = FactorLabels(
        names=[f.name for f in spec.factors],
        values=values,
        binary=(values > mids[None, :]).astype(np.int64),
    )
    return torch.from_numpy(images), labels


def _load_one(path: Path, latent_shape: tuple[int, int, int]) -> np.ndarray:
    c, h, w = latent_shape
    with Image.open(path) as img:
        img = img.convert("L" if c == 1 else "RGB")
        # center crop to square, then area resize
        side = min(img.size)
        left = (img.width - side) // 2
        top = (img.height - side) // 2
        img = img.crop((left, top, left + side, top + side))
        img = img.resize((w, h), resample=Image.BOX)
        arr = np.asarray(img, dtype=np.float32) / 255.0
    if c == 1:
        arr = arr[None, :, :]
    else:
        arr = arr.transpose(2, 0, 1)
    return arr * 2.0 - 1.0


def load_image_folder(
    path: str | Path,
    latent_shape: tuple[int, int, int],
    limit: int,
    seed: int = 0,
    skip_threshold: int = 16,
) -> torch.Tensor:
    """Load ``limit`` images from a folder as normalized latents in [-1, 1].

    Files are ordered lexicographically, unreadable ones are skipped with a
    warning (up to ``skip_threshold``), and a seeded subsample of exactly
    ``limit`` is returned. Source files are never modified.
    """
    folder = Path(path)
    if not folder.is_dir():
        raise IngestionError(f"{folder} is not a directory")
    files = sorted(p for p in folder.iterdir() if p.suffix.lower() in RASTER_SUFFIXES)
    loaded: list[np.ndarray] = []
    skipped = 0
    for f in files:
        try:
            loaded.append(_load_one(f, latent_shape))
        except (OSError, UnidentifiedImageError, ValueError) as exc:
            skipped += 1
            log.warning("skipping unreadable image %s: %s", f, exc)
            if skipped > skip_threshold:
                raise IngestionError(
                    f"{folder}: {skipped} unreadable images exceeds threshold {skip_threshold}"
                ) from exc
    if len(loaded) < limit:
        raise IngestionError(f"{folder}: {len(loaded)} usable images < requested {limit}")
    rng = np_stream(seed, "folder-subsample")
    idx = np.sort(rng.choice(len(loaded), size=limit, replace=False))
    stack = np.stack([loaded[i] for i in idx]).astype(np.float32)
    return torch.from_numpy(stack)


def sample_dataset_from_model(model, schedule, count: int, seed: int = 0, eval_steps: int = 50) -> torch.Tensor:
    """Draw a training pool from the model itself (the generated-data source option)."""
    from .editing import sample_edited  # deferred: editing imports nothing from here

    samples = []
    for i in range(count):
        state = sample_edited(model, schedule, init=seed * 100003 + i, eval_steps=eval_steps)
        samples.append(state.x)
    return torch.stack(samples)


def to_uint8(latent: torch.Tensor) -> np.ndarray:
    """Map a [-1, 1] latent (C, H, W) to an (H, W[, 3]) uint8 image array."""
    arr = latent.detach().cpu().numpy()
    arr = np.clip((arr + 1.0) / 2.0, 0.0, 1.0)
    arr = np.round(arr * 255.0).astype(np.uint8)
    if arr.shape[0] == 1:
        return arr[0]
    return arr.transpose(1, 2, 0)


def save_latent_png(latent: torch.Tensor, path: str | Path) -> None:
    Image.fromarray(to_uint8(latent)).save(path, format="PNG")


def load_latent_png(path: str | Path, latent_shape: tuple[int, int, int]) -> torch.Tensor:
    arr = _load_one(Path(path), latent_shape)
    return torch.from_numpy(arr.astype(np.float32))
