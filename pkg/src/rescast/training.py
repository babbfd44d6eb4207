"""Model fitting: MSE loss, Adam with plateau schedule, early stopping.

Also hosts the finite-difference gradient checker used to validate that
autograd gradients of the full model (and its sub-blocks) are correct.
"""

from __future__ import annotations

import copy
import logging
import math
import time
from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor

from .revin import RevIN, RevinState  # noqa: F401  (re-exported)

logger = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "EpochRecord",
    "TrainingDiverged",
    "mse_loss",
    "fit",
    "finite_difference_error",
    "gradient_check",
    "RevIN",
    "RevinState",
]


class TrainingDiverged(RuntimeError):
    """Raised when the training loss becomes non-finite."""

    def __init__(self, epoch: int, batch: int):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass
class TrainConfig:
    learning_rate: float = 5e-4
    batch_size: int = 8
    plateau_factor: float = 0.5
    plateau_patience: int = 5
    min_learning_rate: float = 1e-6
    early_stop_patience: int = 15
    max_epochs: int = 100
    seed: int = 0

    def __post_init__(self):
        for name in ("learning_rate", "batch_size", "plateau_factor", "plateau_patience",
                     "min_learning_rate", "early_stop_patience", "max_epochs"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    seconds: float


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean over sites and steps of squared error."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    return ((pred - target) ** 2).mean()


def _sample_tensors(samples, dtype=torch.float32):
    out = []
    for s in samples:
        if s.target is None:
            raise ValueError("training/validation samples must carry targets")
        out.append(tuple(
            torch.as_tensor(a, dtype=dtype) for a in (s.e_h, s.w_h, s.w_f, s.target)
        ))
    return out


def _validation_loss(model, tensors) -> float:
    model.eval()
    with torch.no_grad():
        losses = [mse_loss(model.predict(e, wh, wf), t) for e, wh, wf, t in tensors]
    return float(torch.stack(losses).mean())


def fit(split, model, config: TrainConfig, on_epoch=None):
    """Train ``model`` on a dataset split; returns (best_state, log).

    Adam steps over seed-shuffled batches; after each epoch the validation
    MSE drives a reduce-on-plateau learning-rate schedule and early
    stopping.  The model is left loaded with the parameters of the best
    validation epoch (earliest epoch wins ties), which are also returned.
    ``on_epoch`` is called with each EpochRecord as it is produced.
    """
    if not split.train or not split.validation:
        raise ValueError("fit requires non-empty train and validation sets")

    torch.manual_seed(config.seed)
    train = _sample_tensors(split.train)
    val = _sample_tensors(split.validation)

    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    scheduler = torch.optim.lr_scheduler.ReduceLROnPlateau(
        optimizer,
        factor=config.plateau_factor,
        patience=config.plateau_patience,
        min_lr=config.min_learning_rate,
    )
    shuffler = torch.Generator().manual_seed(config.seed)

    log: list[EpochRecord] = []
    best_loss = math.inf
    best_state = copy.deepcopy(model.state_dict())
    best_epoch = -1

    for epoch in range(config.max_epochs):
        started = time.perf_counter()
        model.train()
        order = torch.randperm(len(train), generator=shuffler).tolist()
        batch_losses = []
        for b in range(0, len(order), config.batch_size):
            batch = [train[i] for i in order[b: b + config.batch_size]]
            optimizer.zero_grad()
            loss = torch.stack(
                [mse_loss(model.predict(e, wh, wf), t) for e, wh, wf, t in batch]
            ).mean()
            if not torch.isfinite(loss):
                raise TrainingDiverged(epoch, b // config.batch_size)
            loss.backward()
            optimizer.step()
            batch_losses.append(float(loss))

        val_loss = _validation_loss(model, val)
        if not math.isfinite(val_loss):
            raise TrainingDiverged(epoch, -1)
        lr = optimizer.param_groups[0]["lr"]
        scheduler.step(val_loss)

        record = EpochRecord(
            epoch=epoch,
            train_loss=float(np.mean(batch_losses)),
            val_loss=val_loss,
            lr=lr,
            seconds=time.perf_counter() - started,
        )
        log.append(record)
        if on_epoch is not None:
            on_epoch(record)

        if val_loss < best_loss:
            best_loss = val_loss
            best_state = copy.deepcopy(model.state_dict())
            best_epoch = epoch
        elif epoch - best_epoch >= config.early_stop_patience:
            logger.info("early stop at epoch %d (best epoch %d)", epoch, best_epoch)
            break

    model.load_state_dict(best_state)
    return best_state, log


def finite_difference_error(
    scalar_fn,
    parameters,
    epsilon: float = 1e-4,
    max_coords: int = 200,
    fraction: float = 1.0,
    seed: int = 0,
) -> float:
    """Max relative error between autograd and central finite differences.

    ``scalar_fn`` re-evaluates the scalar under test; ``parameters`` is an
    iterable of tensors whose coordinates are sampled (``fraction`` of the
    total, capped at ``max_coords``).  Central differences use step
    ``epsilon`` on the parameters' own dtype, so callers should pass a
    float64 model.  Relative error floors the denominator at 1e-4 so that
    near-zero gradients are compared absolutely.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    params = [p for p in parameters]
    for p in params:
        p.grad = None
    scalar = scalar_fn()
    scalar.backward()
    analytic = [
        p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
        for p in params
    ]

    sizes = [p.numel() for p in params]
    total = int(sum(sizes))
    count = min(max(1, int(round(fraction * total))), max_coords, total)
    rng = np.random.default_rng(seed)
    flat_indices = rng.choice(total, size=count, replace=False)

    offsets = np.cumsum([0] + sizes)
    max_err = 0.0
    with torch.no_grad():
        for flat in sorted(flat_indices.tolist()):
            pi = int(np.searchsorted(offsets, flat, side="right")) - 1
            local = flat - offsets[pi]
            view = params[pi].view(-1)
            original = view[local].item()

            view[local] = original + epsilon
            f_plus = float(scalar_fn())
            view[local] = original - epsilon
            f_minus = float(scalar_fn())
            view[local] = original

            fd = (f_plus - f_minus) / (2.0 * epsilon)
            a = float(analytic[pi].view(-1)[local])
            err = abs(a - fd) / max(abs(a), abs(fd), 1e-4)
            max_err = max(max_err, err)
    return max_err


def gradient_check(model, sample, epsilon: float = 1e-4, fraction: float = 0.01,
                   max_coords: int = 200, seed: int = 0) -> float:
    """Finite-difference check of the full prediction path on one sample.

    Runs in float64 on a deep copy of the model with dropout disabled;
    returns the max relative error over the sampled parameter coordinates.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    probe = copy.deepcopy(model).double().eval()
    e_h = torch.as_tensor(sample.e_h, dtype=torch.float64)
    w_h = torch.as_tensor(sample.w_h, dtype=torch.float64)
    w_f = torch.as_tensor(sample.w_f, dtype=torch.float64)

    def scalar():
        return probe.predict(e_h, w_h, w_f).sum()

    return finite_difference_error(
        scalar, probe.parameters(), epsilon=epsilon,
        max_coords=max_coords, fraction=fraction, seed=seed,
    )
