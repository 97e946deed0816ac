"""Applying discovered directions: single edits, compositions, real-image edits.

An edit adds a scaled divergence term to the sampling-time noise prediction
inside a timestep window. Windows are given in normalized time (fractions of
T, high end first) and mapped to the sampling grid by rounding outward, so a
window never loses a boundary step to discretization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

import torch

from .bank import DirectionBank
from .denoiser import Condition, DenoiserModel, cfg_predict, predict_noise
from .errors import ContractViolation
from .rng import torch_stream
from .schedule import (
    LatentState,
    NoiseSchedule,
    ddim_invert,
    ddim_step,
    sampling_grid,
)

FINE_WINDOW = (0.5, 0.0)    # detail edits: active from half-time down to clean
COARSE_WINDOW = (0.9, 0.8)  # coarse-structure edits: active early in denoising


@dataclass(frozen=True)
class EditSpec:
    """One direction applied at a signed scale inside a timestep window."""

    direction: int
    scale: float
    window: tuple[float, float] = (1.0, 0.0)  # (hi, lo) in normalized time

    def __post_init__(self):
        hi, lo = self.window
        if not (0.0 <= lo <= hi <= 1.0):
            raise ValueError(f"window must satisfy 0 <= lo <= hi <= 1, got {self.window}")

    def active_at(self, t: int, T: int) -> bool:
        hi, lo = self.window
        return math.floor(lo * T) <= t <= math.ceil(hi * T)


@dataclass(frozen=True)
class EditSet:
    """A list of edits; the result never depends on their order."""

    edits: tuple[EditSpec, ...] = ()

    def __init__(self, edits: Iterable[EditSpec] = ()):
        object.__setattr__(self, "edits", tuple(edits))

    def active(self, t: int, T: int) -> list[EditSpec]:
        """Contributing specs at timestep t, in canonical accumulation order."""
        live = [e for e in self.edits if e.active_at(t, T) and e.scale != 0.0]
        return sorted(live, key=lambda e: (e.direction, e.scale, e.window))

    def __len__(self) -> int:
        return len(self.edits)


def _direction_divergence(model: DenoiserModel, x_t: LatentState, direction: int) -> torch.Tensor:
    eps_dir = predict_noise(model, x_t, Condition.direction(direction))
    eps_null = predict_noise(model, x_t, Condition.null())
    return eps_dir - eps_null


def edit_term_single(
    model: DenoiserModel,
    x_t: LatentState,
    cond_c: Condition,
    guidance_scale: float,
    spec: EditSpec,
) -> torch.Tensor:
    """Guided prediction plus one scaled divergence: eps~(x,c) + s*(eps(d) - eps(phi))."""
    base = cfg_predict(model, x_t, cond_c, guidance_scale)
    if spec.scale == 0.0:
        return base
    return base + spec.scale * _direction_divergence(model, x_t, spec.direction)


def edit_term_multi(model: DenoiserModel, x_t: LatentState, edit_set: EditSet) -> torch.Tensor:
    """Sum of scaled divergences over the specs active at x_t.t (no base term)."""
    total = torch.zeros_like(x_t.x)
    active = edit_set.active(x_t.t, model.schedule_params["T"])
    if not active:
        return total
    eps_null = predict_noise(model, x_t, Condition.null())
    cache: dict[int, torch.Tensor] = {}
    for spec in active:
        if spec.direction not in cache:
            eps_dir = predict_noise(model, x_t, Condition.direction(spec.direction))
            cache[spec.direction] = eps_dir - eps_null
        total = total + spec.scale * cache[spec.direction]
    return total


InitSource = Union[int, LatentState]


def _initial_latent(model: DenoiserModel, schedule: NoiseSchedule, init: InitSource) -> LatentState:
    if isinstance(init, LatentState):
        if init.t != schedule.T:
            raise ValueError(f"initial latent must be at t=T={schedule.T}, got t={init.t}")
        return init
    gen = torch_stream(int(init), "sample-init")
    x_T = torch.randn(model.latent_shape, generator=gen)
    return LatentState(x=x_T, t=schedule.T)


def stacked_init(model: DenoiserModel, schedule: NoiseSchedule, seeds: Sequence[int]) -> LatentState:
    """Batch of per-seed initial latents; row i equals the single-seed draw for seeds[i]."""
    rows = [_initial_latent(model, schedule, int(s)).x for s in seeds]
    return LatentState(x=torch.stack(rows), t=schedule.T)


def sample_edited(
    model: DenoiserModel,
    schedule: NoiseSchedule,
    init: InitSource,
    cond_c: Optional[Condition] = None,
    guidance_scale: float = 7.5,
    edit_set: EditSet = EditSet(),
    eval_steps: Optional[int] = 50,
) -> LatentState:
    """Full reverse trajectory with edit terms added inside their windows.

    ``init`` is either a seed (draws x_T from it) or an explicit x_T state.
    A zero-scale or out-of-window spec contributes nothing, bit-for-bit.
    """
    if not schedule.deterministic:
        raise ContractViolation("edited sampling requires a deterministic schedule")
    cond_c = cond_c if cond_c is not None else Condition.null()
    state = _initial_latent(model, schedule, init)
    grid = sampling_grid(schedule, eval_steps)
    x = state.x
    with torch.no_grad():
        for t_src, t_tgt in zip(grid[:-1], grid[1:]):
            at = LatentState(x=x, t=t_src)
            eps_bar = cfg_predict(model, at, cond_c, guidance_scale)
            active = edit_set.active(t_src, schedule.T)
            if active:
                eps_bar = eps_bar + edit_term_multi(model, at, EditSet(active))
            x = ddim_step(x, eps_bar, t_src, t_tgt, schedule)
    return LatentState(x=x, t=0)


def edit_real(
    model: DenoiserModel,
    schedule: NoiseSchedule,
    image: LatentState,
    edit_set: EditSet = EditSet(),
    eval_steps: Optional[int] = 50,
) -> LatentState:
    """Edit a real image: invert deterministically, then re-generate with edits.

    The regenerated trajectory is conditioned by the inverted x_T alone, so the
    base prediction is the null-conditioned one and edits add their divergence
    sum on top.
    """
    if image.t != 0:
        raise ValueError(f"edit_real expects a clean input (t=0), got t={image.t}")
    if tuple(image.x.shape[-3:]) != model.latent_shape:
        raise ValueError(
            f"image shape {tuple(image.x.shape)} does not match model latent {model.latent_shape}"
        )
    with torch.no_grad():
        def null_predict(x: torch.Tensor, t: int) -> torch.Tensor:
            return predict_noise(model, LatentState(x=x, t=t), Condition.null())

        x_T = ddim_invert(image, null_predict, schedule, eval_steps)
    return sample_edited(
        model, schedule, x_T, cond_c=Condition.null(), guidance_scale=0.0,
        edit_set=edit_set, eval_steps=eval_steps,
    )


def interpolation_strip(
    model: DenoiserModel,
    schedule: NoiseSchedule,
    init: InitSource,
    direction: int,
    scales: Sequence[float],
    window: tuple[float, float] = FINE_WINDOW,
    cond_c: Optional[Condition] = None,
    guidance_scale: float = 7.5,
    eval_steps: Optional[int] = 50,
) -> list[LatentState]:
    """One edited sample per scale, sharing the same init so only the scale varies."""
    if len(scales) == 0:
        raise ValueError("scales must be non-empty")
    if any(b < a for a, b in zip(scales, scales[1:])):
        raise ValueError(f"scales must be sorted ascending, got {list(scales)}")
    state = _initial_latent(model, schedule, init)
    return [
        sample_edited(
            model,
            schedule,
            state,
            cond_c=cond_c,
            guidance_scale=guidance_scale,
            edit_set=EditSet([EditSpec(direction, float(s), window)]),
            eval_steps=eval_steps,
        )
        for s in scales
    ]
