"""Edit quality and disentanglement measurement against pluggable probes.

A probe maps images to per-attribute probabilities and to a feature vector.
The desk-scale probe is a small supervised classifier trained on the synthetic
factor labels; anything satisfying the same contract (a large pretrained
scorer included) can be slotted in without touching the protocols here.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np
import torch
import torch.nn.functional as F

from .bank import DirectionBank
from .denoiser import DenoiserModel
from .editing import EditSet, EditSpec
from .errors import EvaluationError
from .rng import torch_stream
from .trainer import compute_divergences


@dataclass
class AttributeProbe:
    """Deterministic image scorer: per-attribute probabilities and features.

    Each attribute is a binary group (p, 1-p), so group probabilities sum to
    one by construction.
    """

    attributes: list[str]
    classify: Callable[[torch.Tensor], np.ndarray]  # (C,H,W) -> (n_attr,) probs in [0,1]
    features: Callable[[torch.Tensor], np.ndarray]  # (C,H,W) -> fixed-length vector
    probe_id: str = "probe"


class _ProbeNet(torch.nn.Module):
    def __init__(self, in_dim: int, hidden: int, n_attr: int):
        super().__init__()
        self.body = torch.nn.Sequential(torch.nn.Linear(in_dim, hidden), torch.nn.Tanh())
        self.head = torch.nn.Linear(hidden, n_attr)

    def forward(self, x):
        feats = self.body(x)
        return self.head(feats), feats


def train_factor_probe(
    images: torch.Tensor,
    binary_labels: np.ndarray,
    attribute_names: Sequence[str],
    seed: int = 0,
    hidden: int = 32,
    steps: int = 400,
    lr: float = 0.05,
) -> AttributeProbe:
    """Fit the desk-scale probe on labeled synthetic images.

    Full-batch training with a fixed seed, so the probe is a pure function of
    its inputs. The penultimate activations provide ``features``.
    """
    n, flat = images.shape[0], int(np.prod(images.shape[1:]))
    x = images.reshape(n, flat).float()
    y = torch.from_numpy(np.asarray(binary_labels)).float()
    torch.manual_seed(seed)
    net = _ProbeNet(flat, hidden, len(attribute_names))
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    for _ in range(steps):
        logits, _ = net(x)
        loss = F.binary_cross_entropy_with_logits(logits, y)
        opt.zero_grad()
        loss.backward()
        opt.step()
    net.eval()
    for p in net.parameters():
        p.requires_grad_(False)

    def classify(image: torch.Tensor) -> np.ndarray:
        with torch.no_grad():
            logits, _ = net(image.reshape(1, flat).float())
            return torch.sigmoid(logits)[0].numpy().astype(np.float64)

    def features(image: torch.Tensor) -> np.ndarray:
        with torch.no_grad():
            _, feats = net(image.reshape(1, flat).float())
            return feats[0].numpy().astype(np.float64)

    return AttributeProbe(
        attributes=list(attribute_names),
        classify=classify,
        features=features,
        probe_id=f"factor-mlp-h{hidden}-s{seed}",
    )


def probe_accuracy(probe: AttributeProbe, images: torch.Tensor, binary_labels: np.ndarray) -> np.ndarray:
    """Per-attribute hold-in accuracy of the probe's hard decisions."""
    preds = np.stack([probe.classify(img) for img in images]) > 0.5
    return (preds == (np.asarray(binary_labels) > 0)).mean(axis=0)


@dataclass
class RescoreMatrix:
    """Edits x attributes matrix of mean classification-probability changes.

    Entries are percentage points of mean(prob_after - prob_before) over a
    shared evaluation set; they lie in [-100, 100].
    """

    row_labels: list[str]
    col_labels: list[str]
    values: np.ndarray  # (R, C)
    metadata: dict = field(default_factory=dict)

    def row_annotations(self) -> list[dict]:
        """Largest-magnitude off-diagonal entry per row (bias interactions are reported, not corrected)."""
        notes = []
        for r in range(self.values.shape[0]):
            off = [(abs(self.values[r, c]), c) for c in range(self.values.shape[1]) if c != r]
            if off:
                _, c = max(off)
                notes.append({"row": self.row_labels[r], "max_offdiag_col": self.col_labels[c],
                              "max_offdiag_value": float(self.values[r, c])})
        return notes

    def to_delimited(self) -> str:
        lines = []
        for key in sorted(self.metadata):
            lines.append(f"# {key}: {self.metadata[key]}")
        for note in self.row_annotations():
            lines.append(
                f"# row {note['row']} max_offdiag: {note['max_offdiag_col']}="
                f"{note['max_offdiag_value']:.4f}"
            )
        lines.append("edit," + ",".join(self.col_labels))
        for r, label in enumerate(self.row_labels):
            lines.append(label + "," + ",".join(f"{v:.6f}" for v in self.values[r]))
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_delimited())


EvalItem = Union[int, torch.Tensor]
EditPipeline = Callable[[Sequence[EvalItem], EditSet], list[torch.Tensor]]


def rescore(
    edits: Sequence[EditSpec],
    eval_set: Sequence[EvalItem],
    probe: AttributeProbe,
    edit_pipeline: EditPipeline,
    row_labels: Optional[Sequence[str]] = None,
    metadata: Optional[dict] = None,
) -> RescoreMatrix:
    """Mean per-attribute probability change for each edit over the eval set.

    The unedited baseline is rendered once per item and shared across all
    edits, so rows are paired comparisons. ``edit_pipeline`` renders a list of
    eval items under one edit set.
    """
    if len(eval_set) == 0:
        raise ValueError("eval_set must be non-empty")
    if len(probe.attributes) == 0:
        raise ValueError("probe has no attributes")

    def probs_of(images: Sequence[torch.Tensor]) -> np.ndarray:
        rows = []
        for item, image in zip(eval_set, images):
            try:
                rows.append(probe.classify(image))
            except Exception as exc:
                raise EvaluationError(f"probe failed for item {item!r}: {exc}") from exc
        return np.stack(rows)

    before = probs_of(edit_pipeline(eval_set, EditSet()))
    values = np.zeros((len(edits), len(probe.attributes)))
    for r, spec in enumerate(edits):
        after = probs_of(edit_pipeline(eval_set, EditSet([spec])))
        values[r] = (after - before).mean(axis=0) * 100.0

    labels = list(row_labels) if row_labels is not None else [
        f"d{spec.direction}@{spec.scale:+g}" for spec in edits
    ]
    meta = dict(metadata or {})
    meta.setdefault("probe_id", probe.probe_id)
    meta.setdefault("n_eval", len(eval_set))
    return RescoreMatrix(labels, list(probe.attributes), values, meta)


def generated_pipeline(
    model: DenoiserModel,
    schedule,
    guidance_scale: float = 7.5,
    eval_steps: int = 50,
    cond=None,
) -> EditPipeline:
    """Pipeline over seeds: one batched trajectory per edit set."""
    from .editing import sample_edited, stacked_init

    def pipeline(items: Sequence[EvalItem], edit_set: EditSet) -> list[torch.Tensor]:
        if not all(isinstance(i, int) for i in items):
            raise ValueError("generated pipeline expects integer seeds")
        init = stacked_init(model, schedule, list(items))
        out = sample_edited(
            model, schedule, init, cond_c=cond, guidance_scale=guidance_scale,
            edit_set=edit_set, eval_steps=eval_steps,
        )
        return list(out.x.unbind(0))

    return pipeline


def real_pipeline(model: DenoiserModel, schedule, eval_steps: int = 50) -> EditPipeline:
    """Pipeline over clean latents: batched inversion, then regeneration with edits."""
    from .editing import edit_real
    from .schedule import LatentState

    def pipeline(items: Sequence[EvalItem], edit_set: EditSet) -> list[torch.Tensor]:
        if not all(isinstance(i, torch.Tensor) for i in items):
            raise ValueError("real pipeline expects image tensors")
        batch = torch.stack(list(items))
        out = edit_real(model, schedule, LatentState(batch, 0), edit_set, eval_steps)
        return list(out.x.unbind(0))

    return pipeline


def perceptual_distance(before: torch.Tensor, after: torch.Tensor, probe: AttributeProbe) -> float:
    """Feature-space incoherence in [0, 2]: 1 - cos(features(a), features(b))."""
    if before.shape != after.shape:
        raise ValueError(f"image shapes differ: {tuple(before.shape)} vs {tuple(after.shape)}")
    fa = probe.features(before)
    fb = probe.features(after)
    na, nb = np.linalg.norm(fa), np.linalg.norm(fb)
    if na == 0.0 or nb == 0.0:
        raise EvaluationError("probe produced a zero feature vector")
    if np.array_equal(fa, fb):
        return 0.0
    d = 1.0 - float(np.dot(fa, fb) / (na * nb))
    return min(max(d, 0.0), 2.0)


@dataclass
class DiversityReport:
    """Self-consistency and cross-direction similarity of a bank's divergences."""

    self_consistency: np.ndarray  # (K,) mean cos across image pairs, same direction
    cross_similarity: np.ndarray  # (K, K) |cos| between mean divergence vectors
    duplicate_pairs: list[tuple[int, int, float]]
    threshold: float
    t_grid: list[int]

    def mean_cross(self) -> float:
        k = self.cross_similarity.shape[0]
        off = ~np.eye(k, dtype=bool)
        return float(np.abs(self.cross_similarity[off]).mean())

    def mean_self(self) -> float:
        return float(self.self_consistency.mean())

    def to_dict(self) -> dict:
        return {
            "self_consistency": self.self_consistency.tolist(),
            "cross_similarity": self.cross_similarity.tolist(),
            "duplicate_pairs": [[a, b, float(s)] for a, b, s in self.duplicate_pairs],
            "threshold": self.threshold,
            "t_grid": self.t_grid,
        }


def diversity_report(
    bank: DirectionBank,
    model: DenoiserModel,
    images: torch.Tensor,
    t_grid: Optional[Sequence[int]] = None,
    threshold: float = 0.9,
    seed: int = 0,
) -> DiversityReport:
    """Diagnose how distinct the discovered directions are.

    Self-consistency: mean cosine between one direction's divergences on
    different images. Cross-similarity: |cos| between per-direction mean
    divergence vectors. Pairs above ``threshold`` are flagged as near-duplicates.
    """
    schedule = model.schedule()
    if t_grid is None:
        t_grid = [int(round(schedule.T * f)) for f in (0.25, 0.5, 0.75)]
    t_grid = [max(1, min(schedule.T, int(t))) for t in t_grid]
    gen = torch_stream(seed, "diversity-eps")
    K = bank.K
    n = images.shape[0]

    self_acc = np.zeros(K)
    mean_vecs = []
    with torch.no_grad():
        per_t_units = []
        for t in t_grid:
            eps = torch.randn(images.shape, generator=gen, dtype=images.dtype)
            divs = compute_divergences(model, images, t, bank, list(range(K)), eps, micro_batch=8)
            v = divs.values  # (n, K, D)
            unit = v / (v.norm(dim=-1, keepdim=True) + 1e-12)
            per_t_units.append(unit)
        units = torch.stack(per_t_units)  # (T', n, K, D)

    # self-consistency: cos across image pairs, averaged over t
    for k in range(K):
        sims = []
        for ut in units:
            g = ut[:, k, :] @ ut[:, k, :].T
            off = ~torch.eye(n, dtype=torch.bool)
            sims.append(g[off].mean().item())
        self_acc[k] = float(np.mean(sims))

    # cross-direction: |cos| between mean divergence vectors (images and t pooled)
    pooled = units.mean(dim=(0, 1))  # (K, D)
    pooled = pooled / (pooled.norm(dim=-1, keepdim=True) + 1e-12)
    cross = (pooled @ pooled.T).numpy()
    np.fill_diagonal(cross, 1.0)

    duplicates = [
        (a, b, float(cross[a, b]))
        for a in range(K)
        for b in range(a + 1, K)
        if cross[a, b] >= threshold
    ]
    return DiversityReport(
        self_consistency=self_acc,
        cross_similarity=cross,
        duplicate_pairs=duplicates,
        threshold=threshold,
        t_grid=list(t_grid),
    )
