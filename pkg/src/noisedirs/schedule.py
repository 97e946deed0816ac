"""Noise schedules, forward noising, reverse steps, and deterministic inversion.

Timesteps are 1-based: t in {1, ..., T} indexes the noised variables and
t = 0 is clean data. Per-step coefficient arrays are indexed by t - 1.

A unit reverse step is

    x_{t-1} = a_t * x_t - gamma_t * eps_hat + sigma_t * z

where ``gamma_t`` (``step_size``) multiplies the predicted noise and
``sigma_t`` scales fresh noise. The leading coefficient ``a_t``
(``x_scale``) is the posterior rescaling of the running variable,
1/sqrt(alpha_t) for stochastic steps and sqrt(abar_{t-1}/abar_t) for
deterministic ones; it is within O(beta_t) of 1 and the two-term form is
recovered exactly when a_t = 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .errors import ContractViolation

PredictFn = Callable[[torch.Tensor, int], torch.Tensor]


@dataclass(frozen=True)
class NoiseSchedule:
    """Discretized noise levels and the coefficients derived from them."""

    T: int
    betas: np.ndarray        # (T,) per-step variances, in (0, 1)
    alphas: np.ndarray       # (T,) 1 - beta_t
    alpha_bars: np.ndarray   # (T,) running products, strictly decreasing in (0, 1]
    sigmas: np.ndarray       # (T,) reverse-process noise scales, all zero if deterministic
    step_size: np.ndarray    # (T,) gamma_t of a unit reverse step
    x_scale: np.ndarray      # (T,) a_t of a unit reverse step
    deterministic: bool
    kind: str = "linear"
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def alpha_bar(self, t: int) -> float:
        """Cumulative signal coefficient at timestep t, with alpha_bar(0) = 1."""
        if t == 0:
            return 1.0
        return float(self.alpha_bars[t - 1])

    def describe(self) -> dict:
        """Serializable construction parameters (the arrays are derived)."""
        return {
            "T": self.T,
            "beta_start": self.beta_start,
            "beta_end": self.beta_end,
            "kind": self.kind,
            "deterministic": self.deterministic,
        }


@dataclass(frozen=True)
class LatentState:
    """A latent array tagged with its diffusion timestep.

    ``t = 0`` is a clean sample, ``t = T`` the fully noised variable.
    """

    x: torch.Tensor
    t: int

    def __post_init__(self):
        if self.t < 0:
            raise ValueError(f"timestep must be >= 0, got {self.t}")


def _cosine_alpha_bars(T: int, s: float = 0.008) -> np.ndarray:
    grid = np.arange(T + 1, dtype=np.float64)
    f = np.cos((grid / T + s) / (1 + s) * math.pi / 2.0) ** 2
    return f[1:] / f[0]


def make_schedule(
    T: int,
    beta_start: float = 1e-4,
    beta_end: float = 0.02,
    kind: str = "linear",
    deterministic: bool = True,
) -> NoiseSchedule:
    """Build a noise schedule with all derived coefficient arrays.

    ``deterministic=True`` zeroes every sigma and uses the deterministic
    reverse coefficients; otherwise sigmas are the posterior noise scales.
    """
    if not isinstance(T, int) or T < 1:
        raise ValueError(f"T must be a positive integer, got {T!r}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(
            f"beta bounds must satisfy 0 < beta_start <= beta_end < 1, "
            f"got ({beta_start}, {beta_end})"
        )
    if kind == "linear":
        betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
        alpha_bars = np.cumprod(1.0 - betas)
    elif kind == "cosine":
        alpha_bars = _cosine_alpha_bars(T)
        prev = np.concatenate(([1.0], alpha_bars[:-1]))
        betas = np.clip(1.0 - alpha_bars / prev, 1e-8, 0.999)
        alpha_bars = np.cumprod(1.0 - betas)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")

    alphas = 1.0 - betas
    prev_bars = np.concatenate(([1.0], alpha_bars[:-1]))

    if deterministic:
        sigmas = np.zeros(T, dtype=np.float64)
        x_scale = np.sqrt(prev_bars / alpha_bars)
        step_size = x_scale * np.sqrt(1.0 - alpha_bars) - np.sqrt(1.0 - prev_bars)
    else:
        posterior_var = (1.0 - prev_bars) / (1.0 - alpha_bars) * betas
        sigmas = np.sqrt(posterior_var)
        x_scale = 1.0 / np.sqrt(alphas)
        step_size = betas / (np.sqrt(alphas) * np.sqrt(1.0 - alpha_bars))

    return NoiseSchedule(
        T=T,
        betas=betas,
        alphas=alphas,
        alpha_bars=alpha_bars,
        sigmas=sigmas,
        step_size=step_size,
        x_scale=x_scale,
        deterministic=deterministic,
        kind=kind,
        beta_start=float(beta_start),
        beta_end=float(beta_end),
    )


def _check_latent_shapes(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape {tuple(b.shape)} does not match latent shape {tuple(a.shape)}")


def forward_noise(x0: LatentState, t: int, eps: torch.Tensor, schedule: NoiseSchedule) -> LatentState:
    """Noise a clean sample to level t: x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps."""
    if x0.t != 0:
        raise ValueError(f"forward_noise expects a clean sample (t=0), got t={x0.t}")
    if not 1 <= t <= schedule.T:
        raise ValueError(f"t must be in [1, {schedule.T}], got {t}")
    _check_latent_shapes(x0.x, eps, "eps")
    abar = schedule.alpha_bar(t)
    x_t = math.sqrt(abar) * x0.x + math.sqrt(1.0 - abar) * eps
    return LatentState(x=x_t, t=t)


def predict_x0(x_t: LatentState, eps: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    """Closed-form reconstruction of x_0 from x_t and the noise that produced it."""
    abar = schedule.alpha_bar(x_t.t)
    return (x_t.x - math.sqrt(1.0 - abar) * eps) / math.sqrt(abar)


def reverse_step(
    x_t: LatentState,
    eps_hat: torch.Tensor,
    schedule: NoiseSchedule,
    noise: Optional[torch.Tensor] = None,
) -> LatentState:
    """One reverse step: x_{t-1} = a_t x_t - gamma_t eps_hat + sigma_t noise."""
    t = x_t.t
    if t < 1:
        raise ValueError(f"reverse_step needs t >= 1, got t={t}")
    _check_latent_shapes(x_t.x, eps_hat, "eps_hat")
    sigma = float(schedule.sigmas[t - 1])
    if sigma > 0.0 and noise is None:
        raise ContractViolation(f"sigma_{t} = {sigma} > 0 requires a noise array")
    x_prev = float(schedule.x_scale[t - 1]) * x_t.x - float(schedule.step_size[t - 1]) * eps_hat
    if sigma > 0.0:
        _check_latent_shapes(x_t.x, noise, "noise")
        x_prev = x_prev + sigma * noise
    return LatentState(x=x_prev, t=t - 1)


def ddim_step(
    x: torch.Tensor,
    eps_hat: torch.Tensor,
    t_src: int,
    t_tgt: int,
    schedule: NoiseSchedule,
) -> torch.Tensor:
    """Deterministic transfer between arbitrary levels, in either direction.

    Moves x from level t_src to t_tgt along the trajectory implied by eps_hat:
    x_tgt = sqrt(abar_tgt) x0_hat + sqrt(1 - abar_tgt) eps_hat.
    """
    abar_src = schedule.alpha_bar(t_src)
    abar_tgt = schedule.alpha_bar(t_tgt)
    a = math.sqrt(abar_tgt / abar_src)
    gamma = a * math.sqrt(1.0 - abar_src) - math.sqrt(1.0 - abar_tgt)
    return a * x - gamma * eps_hat


def sampling_grid(schedule: NoiseSchedule, eval_steps: Optional[int] = None) -> list[int]:
    """Descending timestep grid [T, ..., 0] with ``eval_steps`` transitions."""
    if eval_steps is None:
        eval_steps = schedule.T
    if not 1 <= eval_steps <= schedule.T:
        raise ValueError(f"eval_steps must be in [1, {schedule.T}], got {eval_steps}")
    grid = np.unique(np.round(np.linspace(0, schedule.T, eval_steps + 1)).astype(int))
    return [int(t) for t in grid[::-1]]


def reverse_trajectory(
    x_T: LatentState,
    predict: PredictFn,
    schedule: NoiseSchedule,
    eval_steps: Optional[int] = None,
    noise_gen: Optional[torch.Generator] = None,
) -> LatentState:
    """Run the full reverse process from x_T down to a clean sample.

    ``predict(x, t) -> eps_hat`` is evaluated at every grid node. Deterministic
    schedules may subsample the grid; stochastic ones require the unit grid
    and a seeded generator for the per-step noise.
    """
    if x_T.t != schedule.T:
        raise ValueError(f"trajectory must start at t=T={schedule.T}, got t={x_T.t}")
    if schedule.deterministic:
        grid = sampling_grid(schedule, eval_steps)
        x = x_T.x
        for t_src, t_tgt in zip(grid[:-1], grid[1:]):
            x = ddim_step(x, predict(x, t_src), t_src, t_tgt, schedule)
        return LatentState(x=x, t=0)
    if eval_steps not in (None, schedule.T):
        raise ContractViolation("stochastic sampling supports only the unit-step grid")
    if noise_gen is None:
        raise ContractViolation("stochastic sampling requires a seeded noise generator")
    state = x_T
    for t in range(schedule.T, 0, -1):
        eps_hat = predict(state.x, t)
        noise = None
        if float(schedule.sigmas[t - 1]) > 0.0:
            noise = torch.randn(state.x.shape, generator=noise_gen, dtype=state.x.dtype)
        state = reverse_step(state, eps_hat, schedule, noise)
    return state


def ddim_invert(
    x0: LatentState,
    predict: PredictFn,
    schedule: NoiseSchedule,
    eval_steps: Optional[int] = None,
) -> LatentState:
    """Deterministically map a clean sample to the x_T that regenerates it.

    Each ascending transition evaluates the predictor at the target level with
    the current (less noisy) latent; running ``reverse_trajectory`` from the
    result with the same predictor reconstructs x0 up to that approximation.
    """
    if not schedule.deterministic:
        raise ContractViolation("inversion requires a deterministic schedule (all sigma_t = 0)")
    if x0.t != 0:
        raise ValueError(f"inversion starts from a clean sample (t=0), got t={x0.t}")
    grid = sampling_grid(schedule, eval_steps)[::-1]  # ascending: 0, ..., T
    x = x0.x
    for t_src, t_tgt in zip(grid[:-1], grid[1:]):
        x = ddim_step(x, predict(x, t_tgt), t_src, t_tgt, schedule)
    return LatentState(x=x, t=schedule.T)
