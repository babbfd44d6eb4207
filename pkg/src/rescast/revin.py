"""Reversible per-instance normalization of the target history.

Each sample's energy history is z-scored with its own per-site statistics
(plus a learnable per-site affine), and predictions are mapped back through
the inverse transform.  This counters distribution shift between training
and deployment periods.
"""

from __future__ import annotations

from typing import NamedTuple

import torch
import torch.nn as nn
from torch import Tensor

__all__ = ["RevinState", "RevIN"]


class RevinState(NamedTuple):
    """Per-sample statistics captured at normalization time."""

    mean: Tensor  # [L_E, 1, 1]
    std: Tensor  # [L_E, 1, 1]


class RevIN(nn.Module):
    """Reversible instance normalization over [L_E, T, 1] energy tensors."""

    def __init__(self, num_sites: int, min_std: float = 1e-5):
        super().__init__()
        self.num_sites = num_sites
        self.min_std = min_std
        self.scale = nn.Parameter(torch.ones(num_sites, 1, 1))
        self.shift = nn.Parameter(torch.zeros(num_sites, 1, 1))

    def apply(self, history: Tensor) -> tuple[Tensor, RevinState]:
        """Z-score a history window with its own per-site statistics."""
        if history.shape[0] != self.num_sites:
            raise ValueError(f"expected {self.num_sites} sites, got {history.shape[0]}")
        mean = history.mean(dim=1, keepdim=True).detach()
        std = history.std(dim=1, keepdim=True, unbiased=False).detach()
        std = std.clamp_min(self.min_std)
        normalized = (history - mean) / std * self.scale + self.shift
        return normalized, RevinState(mean, std)

    def invert(self, prediction: Tensor, state: RevinState) -> Tensor:
        """Reverse the affine, then undo the z-score."""
        return (prediction - self.shift) / self.scale * state.std + state.mean
