"""Forward/reverse denoising-diffusion processes and the training loss.

The forward chain follows the standard DDPM construction: per-step
Gaussian corruption with variances ``beta[t]``, closed-form marginal
``x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps``, and a
reverse update driven by a predicted noise ``eps_theta`` with
``sigma_t = sqrt(beta_t)`` reverse-step noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .exceptions import DimensionError, ParameterError
from .tensor import Tensor


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step variance tables for a T-step diffusion chain.

    Arrays are indexed ``t - 1`` for ``t`` in ``1..T``. ``alpha_bar`` is
    the running product of ``alpha`` and is strictly decreasing.
    """

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    posterior_sigma: np.ndarray

    @property
    def timesteps(self) -> int:
        return len(self.beta)

    def check_t(self, t) -> np.ndarray:
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.timesteps):
            raise ParameterError(
                f"timestep {t} outside 1..{self.timesteps}"
            )
        return t


def make_schedule(timesteps: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    """Linear beta schedule with precomputed derived tables."""
    if timesteps < 1:
        raise ParameterError(f"timesteps must be >= 1, got {timesteps}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ParameterError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    beta = np.linspace(beta_start, beta_end, timesteps, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return NoiseSchedule(
        beta=beta,
        alpha=alpha,
        alpha_bar=alpha_bar,
        posterior_sigma=np.sqrt(beta),
    )


def restrict_schedule(
    sched: NoiseSchedule, steps: int
) -> tuple[NoiseSchedule, np.ndarray]:
    """Subsample the chain to ``steps`` timesteps for strided sampling.

    Returns the restricted schedule plus the original timestep of each of
    its steps (ascending). The restricted marginals coincide with the
    originals at the retained timesteps, so a chain run on the restricted
    schedule is a coarse traversal of the same process.
    """
    if not 1 <= steps <= sched.timesteps:
        raise ParameterError(
            f"steps must be in 1..{sched.timesteps}, got {steps}"
        )
    t_orig = np.unique(
        np.linspace(1, sched.timesteps, steps).round().astype(np.int64)
    )
    bar = sched.alpha_bar[t_orig - 1]
    prev = np.concatenate(([1.0], bar[:-1]))
    beta = 1.0 - bar / prev
    return (
        NoiseSchedule(
            beta=beta,
            alpha=1.0 - beta,
            alpha_bar=bar,
            posterior_sigma=np.sqrt(beta),
        ),
        t_orig,
    )


def _per_sample(coef: np.ndarray, t, shape, dtype) -> Tensor:
    """Lift a per-timestep coefficient to a broadcastable constant tensor."""
    t = np.asarray(t)
    vals = coef[t - 1]
    if t.ndim == 0:
        return T.expand(Tensor(np.asarray(vals, dtype=dtype)), shape)
    if len(vals) != shape[0]:
        raise DimensionError(
            f"per-sample t has length {len(vals)}, batch is {shape[0]}"
        )
    target = (len(vals),) + (1,) * (len(shape) - 1)
    return T.expand(Tensor(vals.reshape(target).astype(dtype)), shape)


def q_sample(x0: Tensor, t, eps: Tensor, sched: NoiseSchedule) -> Tensor:
    """Draw from the closed-form forward marginal at timestep ``t``.

    ``t`` is a single timestep or one per leading-batch entry.
    """
    if x0.shape != eps.shape:
        raise DimensionError(f"x0 {x0.shape} and eps {eps.shape} differ")
    t = sched.check_t(t)
    dtype = x0.dtype
    a = _per_sample(np.sqrt(sched.alpha_bar), t, x0.shape, dtype)
    b = _per_sample(np.sqrt(1.0 - sched.alpha_bar), t, x0.shape, dtype)
    return T.add(T.mul(x0, a), T.mul(eps, b))


def reverse_step(
    xt: Tensor, eps_pred: Tensor, t: int, z: Tensor, sched: NoiseSchedule
) -> Tensor:
    """One reverse update from ``x_t`` to ``x_{t-1}``.

    ``x_{t-1} = (x_t - (1-alpha_t)/sqrt(1-alpha_bar_t) * eps) / sqrt(alpha_t)
    + sigma_t * z``; no noise is added at ``t = 1`` regardless of ``z``.
    """
    if xt.shape != eps_pred.shape:
        raise DimensionError(f"xt {xt.shape} and eps_pred {eps_pred.shape} differ")
    t_arr = sched.check_t(t)
    dtype = xt.dtype
    coef = _per_sample(
        (1.0 - sched.alpha) / np.sqrt(1.0 - sched.alpha_bar), t_arr, xt.shape, dtype
    )
    inv_sqrt_a = _per_sample(1.0 / np.sqrt(sched.alpha), t_arr, xt.shape, dtype)
    mean = T.mul(T.sub(xt, T.mul(eps_pred, coef)), inv_sqrt_a)
    if np.all(np.asarray(t_arr) == 1):
        return mean
    if z.shape != xt.shape:
        raise DimensionError(f"z {z.shape} and xt {xt.shape} differ")
    sigma = _per_sample(
        np.where(np.arange(1, sched.timesteps + 1) == 1, 0.0, sched.posterior_sigma),
        t_arr,
        xt.shape,
        dtype,
    )
    return T.add(mean, T.mul(z, sigma))


def train_loss(model, batch, sched: NoiseSchedule, rng: np.random.Generator,
               t=None, eps: np.ndarray | None = None) -> Tensor:
    """Noise-prediction MSE on the prediction frames of a token batch.

    ``batch`` is a :class:`~dtca.tokenizer.TokenBatch` of clean patch
    tokens covering all ``F_c + F_n`` frames. A timestep per sample and a
    full-frame noise field are drawn from ``rng`` unless supplied. The
    condition frames are passed through clean and the noise over them
    never enters the loss.
    """
    tokens = batch.tokens
    n_batch = tokens.shape[0]
    if t is None:
        t = rng.integers(1, sched.timesteps + 1, size=n_batch)
    if eps is None:
        eps = rng.standard_normal(tokens.shape)
    eps = np.asarray(eps, dtype=tokens.dtype)
    if eps.shape != tokens.shape:
        raise DimensionError(f"eps {eps.shape} must match tokens {tokens.shape}")

    cond = batch.condition()
    target = batch.prediction()
    eps_pred_frames = Tensor(eps[:, :, batch.frames_cond:, :])
    noised = target.with_tokens(q_sample(target.tokens, t, eps_pred_frames, sched))

    out = model(noised, cond, t)
    from .tokenizer import patchify  # local import to avoid a cycle

    pred_tokens = patchify(out, batch.patch)
    diff = T.sub(pred_tokens, eps_pred_frames)
    return T.tmean(T.mul(diff, diff))
