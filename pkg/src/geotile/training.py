"""Loss kernels, EMA and schedule math, and length-sorted batch re-binning.

No optimizer or network lives here; these are the numeric pieces a trainer
calls.  Every kernel is padding-aware: PAD tokens are excluded before any
arithmetic, so adding padding never moves a result even in the last bit.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .seeds import rng_for

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossConfig:
    smooth_l1_beta: float = 2.0
    vicreg_beta: float = 0.05
    variance_target: float = 1.0
    variance_eps: float = 1e-4

    def __post_init__(self):
        if self.smooth_l1_beta <= 0:
            raise ValueError("smooth_l1_beta must be positive")
        if self.vicreg_beta < 0:
            raise ValueError("vicreg_beta must be non-negative")


def huber_masked(
    pred: np.ndarray,
    target: np.ndarray,
    valid: np.ndarray,
    beta: float = 2.0,
    per_token: bool = False,
) -> float:
    """Smooth-L1 over valid tokens only.

    Sum of elementwise losses divided by valid_tokens × feature_dim, or by
    valid_tokens alone with per_token.  Valid tokens are compressed out
    before any arithmetic, which is what makes padding invariance exact
    rather than merely within rounding.
    """
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    z_pred = pred[valid]
    z_target = target[valid]
    n_tokens = z_pred.shape[0]
    if n_tokens == 0:
        log.warning("huber_masked called with zero valid tokens")
        return 0.0
    d = np.abs(z_pred.astype(np.float64) - z_target.astype(np.float64))
    loss = np.where(d < beta, 0.5 * d * d / beta, d - 0.5 * beta)
    denom = n_tokens if per_token else n_tokens * pred.shape[-1]
    return float(loss.sum() / denom)


def vicreg_var_cov(
    tokens: np.ndarray,
    valid: np.ndarray,
    gamma: float = 1.0,
    eps: float = 1e-4,
) -> tuple[float, float]:
    """Variance hinge and squared off-diagonal covariance over valid tokens.

    All valid tokens across the batch form one N×d matrix; both statistics
    use the N−1 divisor.  N < 2 is an error (a single token has no variance).
    """
    z = tokens[valid].astype(np.float64)
    n = z.shape[0]
    if n < 2:
        raise ValueError(f"need at least 2 valid tokens, got {n}")
    d = z.shape[1]
    std = np.sqrt(z.var(axis=0, ddof=1) + eps)
    var_loss = float(np.maximum(0.0, gamma - std).mean())
    centered = z - z.mean(axis=0)
    cov = (centered.T @ centered) / (n - 1)
    cov_sq = cov * cov
    cov_loss = float((cov_sq.sum() - np.trace(cov_sq)) / d)
    return var_loss, cov_loss


def total_loss(huber: float, var: float, cov: float, vicreg_beta: float = 0.05) -> float:
    return huber + vicreg_beta * (var + cov)


def ema_update(target: np.ndarray, online: np.ndarray, momentum: float) -> np.ndarray:
    """θ̄ ← m·θ̄ + (1−m)·θ, elementwise; returns a new array."""
    if target.shape != online.shape:
        raise ValueError(f"shape mismatch: {target.shape} vs {online.shape}")
    return momentum * target + (1.0 - momentum) * online


# -------------------------------------------------------------- schedules


@dataclass(frozen=True)
class ScheduleConfig:
    total_steps: int
    lr_warmup_frac: float = 0.1
    lr_base: float = 1e-3
    lr_end: float = 1e-6
    weight_decay_init: float = 0.04
    weight_decay_end: float = 0.4
    momentum_init: float = 0.997
    momentum_end: float = 1.0
    weight_decay_shape: str = "cosine"  # or "linear"

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError("total_steps must be positive")
        if not 0.0 < self.lr_warmup_frac < 1.0:
            raise ValueError("lr_warmup_frac must lie in (0, 1)")
        if self.lr_end > self.lr_base:
            raise ValueError("lr_end must not exceed lr_base")
        if self.weight_decay_shape not in ("cosine", "linear"):
            raise ValueError("weight_decay_shape must be cosine or linear")


def momentum_at(step: int, cfg: ScheduleConfig) -> float:
    t = min(max(step, 0), cfg.total_steps) / cfg.total_steps
    return cfg.momentum_init + (cfg.momentum_end - cfg.momentum_init) * t


def lr_at(step: int, cfg: ScheduleConfig) -> float:
    step = min(max(step, 0), cfg.total_steps)
    warmup = round(cfg.lr_warmup_frac * cfg.total_steps)
    if warmup and step <= warmup:
        return cfg.lr_base * step / warmup
    t = (step - warmup) / (cfg.total_steps - warmup)
    return cfg.lr_end + 0.5 * (cfg.lr_base - cfg.lr_end) * (1.0 + math.cos(math.pi * t))


def wd_at(step: int, cfg: ScheduleConfig) -> float:
    t = min(max(step, 0), cfg.total_steps) / cfg.total_steps
    if cfg.weight_decay_shape == "linear":
        return cfg.weight_decay_init + (cfg.weight_decay_end - cfg.weight_decay_init) * t
    lo, hi = cfg.weight_decay_init, cfg.weight_decay_end
    return hi + 0.5 * (lo - hi) * (1.0 + math.cos(math.pi * t))


def schedule_table(cfg: ScheduleConfig) -> str:
    """CSV `step,lr,wd,momentum` for steps 0..total_steps inclusive."""
    lines = ["step,lr,wd,momentum"]
    for step in range(cfg.total_steps + 1):
        lines.append(f"{step},{lr_at(step, cfg)!r},{wd_at(step, cfg)!r},{momentum_at(step, cfg)!r}")
    return "\n".join(lines) + "\n"


# -------------------------------------------------------------- re-binning


def length_sorted_rebin(
    lengths: Sequence[int],
    batch_size: int,
    group_size: int,
    seed: int | None = None,
) -> tuple[list[list[int]], list[list[int]]]:
    """Sort each window of group_size·batch_size samples by length, then bin.

    Returns (batches, groups): batches hold original sample indices in
    ascending-length order; groups list the batch numbers whose gradients
    belong to one accumulation step, exactly the batches of one window.
    With a seed the incoming order is shuffled first, standing in for the
    upstream loader; without one the given order is consumed as-is.
    """
    if batch_size < 1 or group_size < 1:
        raise ValueError("batch_size and group_size must be at least 1")
    order = list(range(len(lengths)))
    if seed is not None:
        rng_for(seed, "rebin").shuffle(order)
    window = batch_size * group_size
    batches: list[list[int]] = []
    groups: list[list[int]] = []
    for start in range(0, len(order), window):
        chunk = order[start : start + window]
        chunk.sort(key=lambda i: (lengths[i], i))
        first_batch = len(batches)
        for b in range(0, len(chunk), batch_size):
            batches.append(chunk[b : b + batch_size])
        groups.append(list(range(first_batch, len(batches))))
    return batches, groups


def padded_cells(batches: Sequence[Sequence[int]], lengths: Sequence[int]) -> int:
    """Total allocated cells: Σ per batch |batch| · max length in the batch."""
    return sum(len(b) * max(lengths[i] for i in b) for b in batches if b)
