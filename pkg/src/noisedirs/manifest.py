"""Run manifests: an append-only record of what a run produced."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ContractViolation


def file_sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class RunManifest:
    """Append-only during a run; finalized exactly once."""

    config_hash: str
    command: str = ""
    seeds: dict[str, int] = field(default_factory=dict)
    loss_trace: list[float] = field(default_factory=list)
    checkpoints: list[str] = field(default_factory=list)
    artifacts: dict[str, dict[str, str]] = field(default_factory=dict)
    figures: list[dict[str, str]] = field(default_factory=list)
    tables: list[dict[str, str]] = field(default_factory=list)
    wall_clock_s: float = 0.0
    started_at: float = field(default_factory=time.time)
    finalized: bool = False

    def _writable(self) -> None:
        if self.finalized:
            raise ContractViolation("manifest already finalized")

    def add_artifact(self, name: str, path: str | Path) -> None:
        self._writable()
        self.artifacts[name] = {"path": str(path), "sha256": file_sha256(path)}

    def add_checkpoint(self, path: str | Path) -> None:
        self._writable()
        self.checkpoints.append(str(path))

    def add_figure(self, name: str, path: str | Path) -> None:
        self._writable()
        self.figures.append({"name": name, "path": str(path)})

    def add_table(self, name: str, path: str | Path) -> None:
        self._writable()
        self.tables.append({"name": name, "path": str(path)})

    def finalize(self) -> None:
        self._writable()
        self.wall_clock_s = time.time() - self.started_at
        self.finalized = True

    def to_dict(self) -> dict[str, Any]:
        return {
            "config_hash": self.config_hash,
            "command": self.command,
            "seeds": self.seeds,
            "loss_trace": self.loss_trace,
            "checkpoints": self.checkpoints,
            "artifacts": self.artifacts,
            "figures": self.figures,
            "tables": self.tables,
            "wall_clock_s": self.wall_clock_s,
            "started_at": self.started_at,
            "finalized": self.finalized,
        }


def write_manifest(manifest: RunManifest, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True))


def read_manifest(path: str | Path) -> dict[str, Any]:
    return json.loads(Path(path).read_text())
