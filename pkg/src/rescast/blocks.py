"""Joint refinement of paired energy/weather latent tensors.

Each block runs one temporal U-Net per modality, then transfers temporal
patterns from the refined weather latents to the refined energy latents via
spatio-temporal attention with a residual connection.  Shapes are preserved,
so blocks stack to any depth.
"""

from __future__ import annotations

import torch.nn as nn
from torch import Tensor

from .attention import MultiKernelSTAttention
from .unet import TemporalUNet

__all__ = ["JointBlock"]


class JointBlock(nn.Module):
    """One refinement stage over (energy, weather) latent pairs.

    energy: [L_E, T, C], weather: [L_W, T, C], site_mix: [L_E, L_W]
    -> (energy_out, weather_out) with unchanged shapes.  The weather path is
    the raw U-Net output (no residual); the energy path is the attention
    transfer from weather plus the U-Net residual.
    """

    def __init__(
        self,
        channels: int,
        levels: int,
        kernel_sizes: tuple[int, ...],
        head_dim: int,
        dropout: float = 0.1,
    ):
        super().__init__()
        self.energy_unet = TemporalUNet(channels, levels, dropout)
        self.weather_unet = TemporalUNet(channels, levels, dropout)
        self.attention = MultiKernelSTAttention(channels, head_dim, kernel_sizes)

    def forward(self, energy: Tensor, weather: Tensor, site_mix: Tensor) -> tuple[Tensor, Tensor]:
        if site_mix.shape != (energy.shape[0], weather.shape[0]):
            raise ValueError(
                f"site mixing shape {tuple(site_mix.shape)} does not match "
                f"{energy.shape[0]} energy x {weather.shape[0]} weather sites"
            )
        energy_u = self.energy_unet(energy)
        weather_out = self.weather_unet(weather)
        energy_out = self.attention(weather_out, weather_out, energy_u, site_mix) + energy_u
        return energy_out, weather_out
