"""Reverse-chain sampling of forecasts from a trained denoiser."""

from __future__ import annotations

import numpy as np

from .diffusion import NoiseSchedule, restrict_schedule, reverse_step
from .exceptions import DimensionError
from .model import DTCAModel
from .tensor import Tensor
from .tokenizer import TokenBatch, patchify


def _as_token_batch(values: np.ndarray, model: DTCAModel,
                    frames_cond: int, frames_pred: int) -> TokenBatch:
    cfg = model.cfg
    tokens = patchify(Tensor(values.astype(np.float32)), cfg.patch)
    return TokenBatch(tokens, frames_cond, frames_pred, cfg.patch, cfg.grid)


def sample_prediction(
    model: DTCAModel,
    sched: NoiseSchedule,
    cond_norm: np.ndarray,
    rng: np.random.Generator,
    steps: int | None = None,
) -> np.ndarray:
    """Run the reverse chain once; returns normalized ``(B, F_n, H, W)``.

    ``cond_norm`` holds the normalized condition frames ``(B, F_c, H, W)``.
    ``steps`` strides the chain (None = all timesteps).
    """
    cfg = model.cfg
    cond_norm = np.asarray(cond_norm, dtype=np.float32)
    if cond_norm.ndim != 4 or cond_norm.shape[1] != cfg.frames_cond:
        raise DimensionError(
            f"conditions must be (B, {cfg.frames_cond}, H, W), got {cond_norm.shape}"
        )
    batch = cond_norm.shape[0]
    cond_tb = _as_token_batch(cond_norm, model, cfg.frames_cond, 0)

    if steps is None or steps >= sched.timesteps:
        sub, t_orig = sched, np.arange(1, sched.timesteps + 1)
    else:
        sub, t_orig = restrict_schedule(sched, steps)

    x = Tensor(
        rng.standard_normal(
            (batch, cfg.frames_pred, cfg.height, cfg.width)
        ).astype(np.float32)
    )
    for k in range(sub.timesteps, 0, -1):
        noised_tb = _as_token_batch(x.data, model, 0, cfg.frames_pred)
        eps = model(noised_tb, cond_tb, np.full(batch, t_orig[k - 1]))
        if k > 1:
            z = Tensor(rng.standard_normal(x.shape).astype(np.float32))
        else:
            z = Tensor(np.zeros(x.shape, dtype=np.float32))
        x = reverse_step(x, eps, k, z, sub)
    return x.data


def ensemble_forecast(
    model: DTCAModel,
    sched: NoiseSchedule,
    cond_norm_single: np.ndarray,
    n_members: int,
    seed_parts: tuple[int, ...],
    steps: int | None = None,
) -> np.ndarray:
    """Sample ``n_members`` forecasts for one condition set.

    Members are generated independently (each from its own
    ``(…, member_index)``-seeded stream), so member ``j`` is identical no
    matter how many members are requested.
    """
    members = []
    for j in range(n_members):
        rng = np.random.default_rng([*seed_parts, j])
        members.append(
            sample_prediction(model, sched, cond_norm_single[None], rng, steps)[0]
        )
    return np.stack(members)
