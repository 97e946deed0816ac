"""Seed derivation for named random streams.

Every random draw in the package comes from a generator seeded with
``stream_seed(global_seed, label)`` so that runs are reproducible and
streams never collide or alias across subsystems.
"""

from __future__ import annotations

import hashlib

import numpy as np
import torch


def stream_seed(seed: int, label: str) -> int:
    """Derive a 63-bit child seed for the stream named ``label``."""
    digest = hashlib.sha256(f"{seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & ((1 << 63) - 1)


def np_stream(seed: int, label: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(stream_seed(seed, label)))


def torch_stream(seed: int, label: str) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(stream_seed(seed, label))
    return gen
