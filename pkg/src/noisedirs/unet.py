"""A small two-resolution U-Net noise predictor with feature-wise conditioning.

The timestep enters through a sinusoidal embedding added to each block's
features; the condition embedding enters through feature-wise modulation
(per-channel scale and shift) at every block, so gradients flow from the
output back to the condition vector everywhere in the network.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """t: (B,) -> (B, dim) sin/cos features."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / (half - 1))
    angles = t.double()[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)
    return emb.to(t.device, torch.get_default_dtype() if not t.is_floating_point() else t.dtype)


class ModulatedBlock(nn.Module):
    """Residual conv block: timestep added, condition applied as (1+g)*h + b."""

    def __init__(self, in_ch: int, out_ch: int, time_dim: int, cond_hidden: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(8, in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, out_ch)
        self.cond_proj = nn.Linear(cond_hidden, 2 * out_ch)
        self.norm2 = nn.GroupNorm(8, out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: torch.Tensor, t_emb: torch.Tensor, c_emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time_proj(t_emb)[:, :, None, None]
        gain, bias = self.cond_proj(c_emb).chunk(2, dim=-1)
        h = h * (1.0 + gain[:, :, None, None]) + bias[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class CondUNet(nn.Module):
    """Noise predictor eps(x_t, t, c) over (in_ch, H, W) latents, H and W divisible by 2."""

    def __init__(self, in_ch: int = 1, base: int = 32, cond_dim: int = 64, time_dim: int = 128):
        super().__init__()
        self.in_ch = in_ch
        self.base = base
        self.cond_dim = cond_dim
        self.time_dim = time_dim
        self.time_mlp = nn.Sequential(
            nn.Linear(time_dim, time_dim), nn.SiLU(), nn.Linear(time_dim, time_dim)
        )
        self.cond_mlp = nn.Sequential(
            nn.Linear(cond_dim, time_dim), nn.SiLU(), nn.Linear(time_dim, time_dim)
        )
        ch2 = base * 2
        self.in_conv = nn.Conv2d(in_ch, base, 3, padding=1)
        self.enc1 = ModulatedBlock(base, base, time_dim, time_dim)
        self.enc2 = ModulatedBlock(base, base, time_dim, time_dim)
        self.down = nn.Conv2d(base, ch2, 3, stride=2, padding=1)
        self.mid1 = ModulatedBlock(ch2, ch2, time_dim, time_dim)
        self.mid2 = ModulatedBlock(ch2, ch2, time_dim, time_dim)
        self.up_conv = nn.Conv2d(ch2, base, 3, padding=1)
        self.dec1 = ModulatedBlock(2 * base, base, time_dim, time_dim)
        self.dec2 = ModulatedBlock(base, base, time_dim, time_dim)
        self.out_norm = nn.GroupNorm(8, base)
        self.out_conv = nn.Conv2d(base, in_ch, 3, padding=1)

    def forward(self, x: torch.Tensor, t: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        """x: (B, C, H, W); t: (B,) timestep indices; cond: (B, cond_dim)."""
        t_emb = self.time_mlp(sinusoidal_embedding(t, self.time_dim).to(x.dtype))
        c_emb = self.cond_mlp(cond)
        h0 = self.in_conv(x)
        h1 = self.enc2(self.enc1(h0, t_emb, c_emb), t_emb, c_emb)
        h2 = self.mid2(self.mid1(self.down(h1), t_emb, c_emb), t_emb, c_emb)
        h3 = self.up_conv(F.interpolate(h2, scale_factor=2, mode="nearest"))
        h = self.dec1(torch.cat([h3, h1], dim=1), t_emb, c_emb)
        h = self.dec2(h, t_emb, c_emb)
        return self.out_conv(F.silu(self.out_norm(h)))
