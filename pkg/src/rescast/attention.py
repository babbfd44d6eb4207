"""Attention mechanisms for cross-site temporal pattern transfer.

Building blocks, from simplest to most specific:

- ``bmm`` / ``scaled_dot_attention``: plain batched matmul and scaled
  dot-product attention.
- ``MultiHeadAttention``: classic multi-head attention with per-head linear
  query/key/value projections.
- ``conv_project``: 1-D convolution along the time axis, used to replace the
  linear query/key projections so that matching uses local temporal context.
- ``MultiKernelAttention``: one head per convolution kernel width, widths
  differ across heads.
- ``st_attention`` / ``MultiKernelSTAttention``: the spatio-temporal variants.
  Per-site temporal attention matrices are mixed across sites by a
  row-stochastic site-relation matrix, then applied to the values.
- ``SpatialRelation``: computes that site-relation matrix from learned site
  encodings; it depends only on parameters, so it is fixed after training.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor

__all__ = [
    "bmm",
    "row_softmax",
    "scaled_dot_attention",
    "conv_project",
    "st_attention",
    "check_site_mixing",
    "MultiHeadAttention",
    "MultiKernelAttention",
    "MultiKernelSTAttention",
    "SpatialRelation",
]

# Runtime guard on row sums of externally supplied mixing matrices.  Looser
# than the 1e-6 the softmax itself achieves, so float32 never trips it.
SITE_MIX_ATOL = 1e-4


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batch matrix multiplication: out[i] = a[i] @ b[i].

    a: [N1, N2, N3], b: [N1, N3, N4] -> [N1, N2, N4].
    """
    if a.dim() != 3 or b.dim() != 3:
        raise ValueError(f"bmm expects 3-axis tensors, got {a.dim()} and {b.dim()}")
    if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ValueError(f"bmm shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return torch.bmm(a, b)


def row_softmax(scores: Tensor) -> Tensor:
    """Softmax over the last axis with per-row max subtraction for stability."""
    shifted = scores - scores.amax(dim=-1, keepdim=True)
    weights = torch.exp(shifted)
    return weights / weights.sum(dim=-1, keepdim=True)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Scaled dot-product attention.

    q: [N_Q, D_K], k: [N_K, D_K], v: [N_K, D_V] -> [N_Q, D_V].  Attention
    weights are row_softmax(q @ k.T / sqrt(D_K)); every weight row sums to 1.
    """
    if q.shape[-1] != k.shape[-1]:
        raise ValueError(f"query/key dim mismatch: {q.shape[-1]} vs {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise ValueError(f"key/value count mismatch: {k.shape[-2]} vs {v.shape[-2]}")
    scores = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    return row_softmax(scores) @ v


def conv_project(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per-site 1-D convolution along the time axis.

    x: [L, T, D_in], weight: [D_out, D_in, c] with odd c.  Zero padding of
    (c - 1) / 2 on each end keeps the output time length equal to T.
    """
    c = weight.shape[-1]
    if c % 2 == 0:
        raise ValueError(f"kernel width must be odd, got {c}")
    out = F.conv1d(x.transpose(1, 2), weight, bias, padding=(c - 1) // 2)
    return out.transpose(1, 2)


def check_site_mixing(site_mix: Tensor, atol: float = SITE_MIX_ATOL) -> None:
    """Validate a site-relation matrix: non-negative, rows sum to 1."""
    if site_mix.dim() != 2:
        raise ValueError(f"site mixing matrix must be 2-axis, got {site_mix.dim()}")
    if (site_mix < -atol).any():
        raise ValueError("site mixing matrix has negative entries")
    row_sums = site_mix.sum(dim=-1)
    err = (row_sums - 1.0).abs().max().item()
    if err > atol:
        raise ValueError(f"site mixing rows must sum to 1 (max deviation {err:.3g})")


def st_attention(q: Tensor, k: Tensor, v: Tensor, site_mix: Tensor) -> Tensor:
    """Spatio-temporal attention.

    q: [L_K, T_Q, D], k: [L_K, T_K, D], v: [L_V, T_K, D_v],
    site_mix: [L_V, L_K] row-stochastic -> [L_V, T_Q, D_v].

    A temporal attention matrix M[i] = row_softmax(q[i] @ k[i].T / sqrt(D))
    is computed per key site, mixed across sites into B[j] = sum_i
    site_mix[j, i] * M[i], and applied to the values: out = B (x) v.  Each
    B[j] row remains a convex combination of softmax rows, so it sums to 1.
    """
    check_site_mixing(site_mix)
    if q.shape[0] != k.shape[0]:
        raise ValueError(f"query/key site count mismatch: {q.shape[0]} vs {k.shape[0]}")
    if site_mix.shape != (v.shape[0], k.shape[0]):
        raise ValueError(
            f"site mixing shape {tuple(site_mix.shape)} does not match "
            f"value sites {v.shape[0]} x key sites {k.shape[0]}"
        )
    scores = q @ k.transpose(1, 2) / math.sqrt(q.shape[-1])  # [L_K, T_Q, T_K]
    temporal = row_softmax(scores)
    mixed = torch.tensordot(site_mix, temporal, dims=1)  # [L_V, T_Q, T_K]
    return bmm(mixed, v)


def _init_projection(param: Tensor, fan_in: int) -> None:
    bound = 1.0 / math.sqrt(fan_in)
    nn.init.uniform_(param, -bound, bound)


class MultiHeadAttention(nn.Module):
    """Multi-head attention with per-head linear query/key/value projections.

    Queries, keys and values carry ``model_dim`` features; each of the
    ``heads`` attention computations runs on an independent
    ``model_dim / heads``-dimensional projection, and the concatenated head
    outputs are projected back to ``model_dim``.
    """

    def __init__(self, model_dim: int, heads: int):
        super().__init__()
        if model_dim % heads != 0:
            raise ValueError(f"model_dim {model_dim} not divisible by heads {heads}")
        self.model_dim = model_dim
        self.heads = heads
        self.head_dim = model_dim // heads
        self.query_proj = nn.Parameter(torch.empty(heads, model_dim, self.head_dim))
        self.key_proj = nn.Parameter(torch.empty(heads, model_dim, self.head_dim))
        self.value_proj = nn.Parameter(torch.empty(heads, model_dim, self.head_dim))
        self.out_proj = nn.Parameter(torch.empty(model_dim, model_dim))
        for p in (self.query_proj, self.key_proj, self.value_proj, self.out_proj):
            _init_projection(p, model_dim)

    def forward(self, q: Tensor, k: Tensor, v: Tensor) -> Tensor:
        outputs = [
            scaled_dot_attention(q @ self.query_proj[i], k @ self.key_proj[i], v @ self.value_proj[i])
            for i in range(self.heads)
        ]
        return torch.cat(outputs, dim=-1) @ self.out_proj


class _MultiKernelParams(nn.Module):
    """Shared parameter layout for the multi-kernel attention variants.

    One head per kernel width: query/key projections are 1-D convolutions of
    ``head_dim`` filters along time, values get an independent linear
    projection per head, and the concatenated heads share one output
    projection.  The output projection starts at zero so that surrounding
    residual paths dominate at initialization.
    """

    def __init__(self, model_dim: int, head_dim: int, kernel_sizes: tuple[int, ...]):
        super().__init__()
        kernel_sizes = tuple(int(c) for c in kernel_sizes)
        if not kernel_sizes:
            raise ValueError("at least one kernel size required")
        if any(c <= 0 or c % 2 == 0 for c in kernel_sizes):
            raise ValueError(f"kernel sizes must be odd and positive, got {kernel_sizes}")
        if len(kernel_sizes) * head_dim != model_dim:
            raise ValueError(
                f"heads x head_dim must equal model_dim: "
                f"{len(kernel_sizes)} x {head_dim} != {model_dim}"
            )
        self.model_dim = model_dim
        self.head_dim = head_dim
        self.kernel_sizes = kernel_sizes
        self.query_convs = nn.ModuleList(
            nn.Conv1d(model_dim, head_dim, c, padding=(c - 1) // 2) for c in kernel_sizes
        )
        self.key_convs = nn.ModuleList(
            nn.Conv1d(model_dim, head_dim, c, padding=(c - 1) // 2) for c in kernel_sizes
        )
        self.value_proj = nn.Parameter(torch.empty(len(kernel_sizes), model_dim, head_dim))
        _init_projection(self.value_proj, model_dim)
        self.out_proj = nn.Parameter(torch.zeros(len(kernel_sizes) * head_dim, model_dim))


class MultiKernelAttention(_MultiKernelParams):
    """Attention whose heads use 1-D convolutions of differing widths.

    Flat variant: q [T_Q, model_dim], k [T_K, model_dim], v [T_K, model_dim]
    -> [T_Q, model_dim].  Kernel widths differ, so heads are computed one
    after the other in ascending width order.
    """

    def forward(self, q: Tensor, k: Tensor, v: Tensor) -> Tensor:
        q3, k3 = q.unsqueeze(0), k.unsqueeze(0)
        heads = []
        for i, _ in enumerate(self.kernel_sizes):
            qc = conv_project(q3, self.query_convs[i].weight, self.query_convs[i].bias)[0]
            kc = conv_project(k3, self.key_convs[i].weight, self.key_convs[i].bias)[0]
            heads.append(scaled_dot_attention(qc, kc, v @ self.value_proj[i]))
        return torch.cat(heads, dim=-1) @ self.out_proj


class MultiKernelSTAttention(_MultiKernelParams):
    """Spatio-temporal attention with multi-width convolutional heads.

    q: [L_K, T_Q, model_dim], k: [L_K, T_K, model_dim],
    v: [L_V, T_K, model_dim], site_mix: [L_V, L_K] -> [L_V, T_Q, model_dim].
    The output projection is shared across value sites.
    """

    def forward(self, q: Tensor, k: Tensor, v: Tensor, site_mix: Tensor) -> Tensor:
        heads = []
        for i, _ in enumerate(self.kernel_sizes):
            qc = conv_project(q, self.query_convs[i].weight, self.query_convs[i].bias)
            kc = conv_project(k, self.key_convs[i].weight, self.key_convs[i].bias)
            heads.append(st_attention(qc, kc, v @ self.value_proj[i], site_mix))
        return torch.cat(heads, dim=-1) @ self.out_proj


class SpatialRelation(nn.Module):
    """Row-stochastic relation matrix between energy and weather sites.

    Projects the two site-encoding sets into a shared ``relation_dim`` space
    and row-softmaxes their scaled match scores.  The result depends only on
    parameters and encodings, so it is constant across samples and fixed
    once training ends.
    """

    def __init__(self, latent_dim: int, relation_dim: int):
        super().__init__()
        if relation_dim <= 0:
            raise ValueError(f"relation_dim must be positive, got {relation_dim}")
        self.relation_dim = relation_dim
        self.energy_proj = nn.Parameter(torch.empty(latent_dim, relation_dim))
        self.weather_proj = nn.Parameter(torch.empty(latent_dim, relation_dim))
        _init_projection(self.energy_proj, latent_dim)
        _init_projection(self.weather_proj, latent_dim)

    def forward(self, energy_enc: Tensor, weather_enc: Tensor) -> Tensor:
        lam_e = energy_enc @ self.energy_proj  # [L_E, relation_dim]
        lam_w = weather_enc @ self.weather_proj  # [L_W, relation_dim]
        scores = lam_e @ lam_w.T / math.sqrt(self.relation_dim)
        return row_softmax(scores)
