"""U-shaped temporal convolutional auto-encoder.

Refines a [sites x time x channels] latent tensor independently per site
across multiple temporal resolutions: a pooling pyramid extracts
progressively coarser context, and a mirrored upsampling path merges it back
with skip connections so the output keeps the input's shape.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor

__all__ = ["TemporalUNet"]


class TemporalUNet(nn.Module):
    """Pyramid of ``levels`` temporal resolutions over [L, T, C] tensors.

    Encoder: ``levels - 1`` stages of (width-3 conv, ReLU, width-2 max pool),
    then a bottom conv stage; dropout after each encoder stage.  Decoder:
    ``levels - 1`` stages of (x2 nearest upsampling, concatenation with the
    matching encoder skip, width-3 conv mapping 2C -> C, ReLU).  Odd lengths
    are right-padded by edge replication before pooling and trimmed after the
    paired upsample, so skip shapes always match and output length equals
    input length for any T >= 1.
    """

    def __init__(self, channels: int, levels: int, dropout: float = 0.1):
        super().__init__()
        if levels < 1:
            raise ValueError(f"levels must be >= 1, got {levels}")
        self.channels = channels
        self.levels = levels
        self.down_convs = nn.ModuleList(
            nn.Conv1d(channels, channels, 3, padding=1) for _ in range(levels - 1)
        )
        self.bottom_conv = nn.Conv1d(channels, channels, 3, padding=1)
        self.up_convs = nn.ModuleList(
            nn.Conv1d(2 * channels, channels, 3, padding=1) for _ in range(levels - 1)
        )
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: Tensor) -> Tensor:
        if x.dim() != 3 or x.shape[-1] != self.channels:
            raise ValueError(
                f"expected [L, T, {self.channels}] input, got {tuple(x.shape)}"
            )
        if x.shape[1] == 0:
            raise ValueError("time axis must be non-empty")

        h = x.transpose(1, 2)  # [L, C, T]
        skips = []
        for conv in self.down_convs:
            s = F.relu(conv(h))
            skips.append(s)
            if s.shape[-1] % 2 == 1:
                s = F.pad(s, (0, 1), mode="replicate")
            h = self.dropout(F.max_pool1d(s, kernel_size=2, stride=2))
        h = self.dropout(F.relu(self.bottom_conv(h)))
        for conv, skip in zip(reversed(self.up_convs), reversed(skips)):
            up = F.interpolate(h, scale_factor=2, mode="nearest")
            up = up[..., : skip.shape[-1]]
            h = F.relu(conv(torch.cat([up, skip], dim=1)))
        return h.transpose(1, 2)
