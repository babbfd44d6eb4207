"""End-to-end multi-site forecaster.

Pipeline per sample: project raw energy/weather inputs to a shared latent
width, add projected one-hot site encodings, compute the site-relation
matrix, bootstrap future energy latents by attention from weather, refine
the concatenated past+future latents through a stack of joint blocks, apply
a final attention transfer with residual, and map latents to one output
value per site and hour.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn
from torch import Tensor

from .attention import MultiKernelSTAttention, SpatialRelation
from .blocks import JointBlock
from .revin import RevIN

__all__ = [
    "ModelConfig",
    "Forecaster",
    "NonFiniteError",
    "predict_batch",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_FORMAT_VERSION",
]

CHECKPOINT_FORMAT_VERSION = 1


class NonFiniteError(RuntimeError):
    """A forward-pass intermediate contained NaN or Inf."""

    def __init__(self, stage: str):
        super().__init__(f"non-finite values at stage '{stage}'")
        self.stage = stage


@dataclass
class ModelConfig:
    """Architecture hyperparameters plus the dataset dimensions they bind to."""

    num_energy_sites: int
    num_weather_sites: int
    history: int  # past window length, hours
    horizon: int  # forecast window length, hours
    weather_dim: int  # weather variables per location (incl. any time features)
    latent_dim: int = 48
    head_dim: int = 16
    kernel_sizes: tuple[int, ...] = (3, 5, 7)
    pyramid_levels: int = 4
    num_blocks: int = 3
    relation_dim: int = 16
    dropout: float = 0.1
    use_revin: bool = True

    def __post_init__(self):
        self.kernel_sizes = tuple(int(c) for c in self.kernel_sizes)
        if len(self.kernel_sizes) * self.head_dim != self.latent_dim:
            raise ValueError(
                f"len(kernel_sizes) x head_dim must equal latent_dim: "
                f"{len(self.kernel_sizes)} x {self.head_dim} != {self.latent_dim}"
            )
        if any(c <= 0 or c % 2 == 0 for c in self.kernel_sizes):
            raise ValueError(f"kernel sizes must be odd and positive: {self.kernel_sizes}")
        for name in ("num_energy_sites", "num_weather_sites", "history", "horizon",
                     "weather_dim", "pyramid_levels", "num_blocks", "relation_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def encoding_dim(self) -> int:
        """Width of the one-hot pseudo-spatial encodings."""
        return self.num_energy_sites + self.num_weather_sites

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kernel_sizes"] = list(self.kernel_sizes)
        return d


class Forecaster(nn.Module):
    """Deterministic multi-site, multi-step generation forecaster.

    ``forward`` consumes one sample's raw tensors (energy history
    [L_E, T_h, 1], weather history [L_W, T_h, D_W], weather forecast
    [L_W, T_f, D_W]) and returns predictions [L_E, T_f, 1].  ``predict``
    additionally wraps the forward pass in reversible instance
    normalization of the energy history when the config enables it.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c = config
        self.energy_in = nn.Linear(1, c.latent_dim)
        self.weather_in = nn.Linear(c.weather_dim, c.latent_dim)
        self.site_embed = nn.Linear(c.encoding_dim, c.latent_dim)
        self.register_buffer("site_onehot", torch.eye(c.encoding_dim))
        self.spatial = SpatialRelation(c.latent_dim, c.relation_dim)
        self.bootstrap_attn = MultiKernelSTAttention(c.latent_dim, c.head_dim, c.kernel_sizes)
        self.blocks = nn.ModuleList(
            JointBlock(c.latent_dim, c.pyramid_levels, c.kernel_sizes, c.head_dim, c.dropout)
            for _ in range(c.num_blocks)
        )
        self.final_attn = MultiKernelSTAttention(c.latent_dim, c.head_dim, c.kernel_sizes)
        self.head = nn.Linear(c.latent_dim, 1)
        self.input_dropout = nn.Dropout(c.dropout)
        self.revin = RevIN(c.num_energy_sites) if c.use_revin else None

    def _check(self, x: Tensor, stage: str) -> Tensor:
        if not torch.isfinite(x).all():
            raise NonFiniteError(stage)
        return x

    def _validate_shapes(self, e_h: Tensor, w_h: Tensor, w_f: Tensor) -> None:
        c = self.config
        expect = {
            "energy history": (e_h, (c.num_energy_sites, c.history, 1)),
            "weather history": (w_h, (c.num_weather_sites, c.history, c.weather_dim)),
            "weather forecast": (w_f, (c.num_weather_sites, c.horizon, c.weather_dim)),
        }
        for name, (t, shape) in expect.items():
            if tuple(t.shape) != shape:
                raise ValueError(f"{name} shape {tuple(t.shape)}, expected {shape}")

    def site_encodings(self) -> tuple[Tensor, Tensor]:
        """Projected one-hot encodings for energy and weather sites."""
        s = self.site_embed(self.site_onehot)
        return s[: self.config.num_energy_sites], s[self.config.num_energy_sites:]

    def spatial_weights(self) -> Tensor:
        """Site-relation matrix [L_E, L_W]; constant for fixed parameters."""
        energy_enc, weather_enc = self.site_encodings()
        return self.spatial(energy_enc, weather_enc)

    def forward(self, e_h: Tensor, w_h: Tensor, w_f: Tensor) -> Tensor:
        self._validate_shapes(e_h, w_h, w_f)
        self._check(e_h, "energy history input")
        self._check(w_h, "weather history input")
        self._check(w_f, "weather forecast input")
        t_h = self.config.history

        energy_enc, weather_enc = self.site_encodings()
        eh = self.input_dropout(self.energy_in(e_h) + energy_enc[:, None, :])
        wh = self.input_dropout(self.weather_in(w_h) + weather_enc[:, None, :])
        wf = self.input_dropout(self.weather_in(w_f) + weather_enc[:, None, :])
        self._check(eh, "input projections")

        site_mix = self.spatial(energy_enc, weather_enc)
        ef = self.bootstrap_attn(wf, wh, eh, site_mix)
        self._check(ef, "future-latent bootstrap")

        energy = torch.cat([eh, ef], dim=1)
        weather = torch.cat([wh, wf], dim=1)
        for i, block in enumerate(self.blocks):
            energy, weather = block(energy, weather, site_mix)
            self._check(energy, f"joint block {i}")

        eh_ref, ef_ref = energy[:, :t_h], energy[:, t_h:]
        wh_ref, wf_ref = weather[:, :t_h], weather[:, t_h:]
        out = self.final_attn(wf_ref, wh_ref, eh_ref, site_mix) + ef_ref
        self._check(out, "final attention")
        return self._check(self.head(out), "output head")

    def predict(self, e_h: Tensor, w_h: Tensor, w_f: Tensor) -> Tensor:
        """Forward pass wrapped in reversible instance normalization."""
        if self.revin is None:
            return self.forward(e_h, w_h, w_f)
        normalized, state = self.revin.apply(e_h)
        prediction = self.forward(normalized, w_h, w_f)
        return self.revin.invert(prediction, state)


def predict_batch(model: Forecaster, samples) -> tuple[list[Tensor], list[float]]:
    """Eval-mode predictions for a sample batch, clipped to [0, 1].

    Returns per-sample predictions in input order plus per-sample wall
    seconds.  A shape mismatch aborts the whole batch, naming the offending
    sample index.
    """
    if len(samples) == 0:
        raise ValueError("empty batch")
    was_training = model.training
    model.eval()
    predictions, seconds = [], []
    try:
        with torch.no_grad():
            for idx, sample in enumerate(samples):
                start = time.perf_counter()
                try:
                    pred = model.predict(
                        torch.as_tensor(sample.e_h, dtype=torch.float32),
                        torch.as_tensor(sample.w_h, dtype=torch.float32),
                        torch.as_tensor(sample.w_f, dtype=torch.float32),
                    )
                except ValueError as exc:
                    raise ValueError(f"sample {idx}: {exc}") from exc
                predictions.append(pred.clamp(0.0, 1.0))
                seconds.append(time.perf_counter() - start)
    finally:
        model.train(was_training)
    return predictions, seconds


def save_checkpoint(path, model: Forecaster, site_ids=None, location_ids=None, extra=None) -> None:
    """Write a self-describing checkpoint; load_checkpoint round-trips bit-exactly."""
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": model.config.to_dict(),
        "state": model.state_dict(),
        "site_ids": list(site_ids) if site_ids is not None else None,
        "location_ids": list(location_ids) if location_ids is not None else None,
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path) -> tuple[Forecaster, dict]:
    """Rebuild a Forecaster from a checkpoint; returns (model, metadata)."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version: {version}")
    config = dict(payload["config"])
    config["kernel_sizes"] = tuple(config["kernel_sizes"])
    model = Forecaster(ModelConfig(**config))
    model.load_state_dict(payload["state"])
    meta = {
        "site_ids": payload.get("site_ids"),
        "location_ids": payload.get("location_ids"),
        "extra": payload.get("extra", {}),
    }
    return model, meta
