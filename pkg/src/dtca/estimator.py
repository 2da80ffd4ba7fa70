"""Scikit-learn style estimator wrapping training and ensemble sampling.

``DTCAForecaster`` exposes the usual ``fit`` / ``predict`` /
``get_params`` surface so the forecaster drops into sklearn pipelines,
grid searches and ``clone``. ``fit`` takes rainfall sequences in mm/h;
``predict`` takes condition frames and returns the ensemble-mean
forecast (use :meth:`predict_ensemble` for the members).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .config import RunConfig
from .data import denormalize, normalize
from .diffusion import make_schedule, train_loss
from .exceptions import DimensionError
from .sampling import ensemble_forecast
from .tensor import ComputationRecord, Tensor
from .tokenizer import TokenBatch, patchify
from .training import Adam, build_model


def _validate_sequences(X, frames_min: int, name: str) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4:
        raise DimensionError(
            f"{name} must be (n_sequences, frames, height, width), got {X.shape}"
        )
    if X.shape[1] < frames_min:
        raise DimensionError(
            f"{name} needs at least {frames_min} frames, got {X.shape[1]}"
        )
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite values")
    if np.any(X < 0):
        raise ValueError(f"{name} contains negative rain rates")
    return X


class DTCAForecaster(BaseEstimator):
    """Generative nowcaster: fit on sequences, predict future frames.

    Parameters mirror the run configuration; see :class:`dtca.RunConfig`
    for semantics. All randomness is derived from ``seed``.
    """

    def __init__(
        self,
        *,
        height: int = 16,
        width: int = 16,
        patch: int = 2,
        frames_cond: int = 2,
        frames_pred: int = 4,
        embed_dim: int = 64,
        depth: int = 4,
        num_heads: int = 4,
        variant: str = "fst",
        shift: int = 4,
        causal: bool = True,
        timesteps: int = 1000,
        beta_start: float = 1e-4,
        beta_end: float = 0.02,
        train_steps: int = 500,
        batch_size: int = 8,
        learning_rate: float = 1e-4,
        ensemble: int = 4,
        sample_steps: int = 25,
        rain_cap: float = 32.0,
        seed: int = 0,
    ):
        self.height = height
        self.width = width
        self.patch = patch
        self.frames_cond = frames_cond
        self.frames_pred = frames_pred
        self.embed_dim = embed_dim
        self.depth = depth
        self.num_heads = num_heads
        self.variant = variant
        self.shift = shift
        self.causal = causal
        self.timesteps = timesteps
        self.beta_start = beta_start
        self.beta_end = beta_end
        self.train_steps = train_steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.ensemble = ensemble
        self.sample_steps = sample_steps
        self.rain_cap = rain_cap
        self.seed = seed

    def _run_config(self) -> RunConfig:
        cfg = RunConfig()
        for key in (
            "height", "width", "patch", "frames_cond", "frames_pred",
            "embed_dim", "depth", "num_heads", "variant", "shift", "causal",
            "timesteps", "beta_start", "beta_end", "train_steps", "batch_size",
            "learning_rate", "ensemble", "sample_steps", "rain_cap", "seed",
        ):
            setattr(cfg, key, getattr(self, key))
        return cfg

    def fit(self, X, y=None):
        """Train the denoiser on sequences ``(n, frames, H, W)`` in mm/h."""
        frames = self.frames_cond + self.frames_pred
        X = _validate_sequences(X, frames, "X")
        if X.shape[2] != self.height or X.shape[3] != self.width:
            raise DimensionError(
                f"fields are {X.shape[2]}x{X.shape[3]}, expected "
                f"{self.height}x{self.width}"
            )
        cfg = self._run_config()
        norm = normalize(X[:, :frames], self.rain_cap).astype(np.float32)
        sched = make_schedule(self.timesteps, self.beta_start, self.beta_end)
        model = build_model(cfg)
        opt = Adam(model.named_parameters(), lr=self.learning_rate)
        losses = []
        grid = self.height // self.patch
        for step in range(self.train_steps):
            rng = np.random.default_rng([self.seed, 1, step])
            idx = rng.integers(0, norm.shape[0], size=self.batch_size)
            tokens = patchify(Tensor(norm[idx]), self.patch)
            batch = TokenBatch(tokens, self.frames_cond, self.frames_pred,
                               self.patch, grid)
            with ComputationRecord() as record:
                loss = train_loss(model, batch, sched, rng)
            record.backward(loss)
            opt.step()
            opt.zero_grad()
            losses.append(loss.item())
        self.model_ = model
        self.schedule_ = sched
        self.loss_history_ = losses
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit before predict")

    def predict_ensemble(self, X) -> np.ndarray:
        """Forecast members ``(n, ensemble, frames_pred, H, W)`` in mm/h."""
        self._check_fitted()
        X = _validate_sequences(X, self.frames_cond, "X")
        steps = self.sample_steps if self.sample_steps else None
        out = []
        for i in range(X.shape[0]):
            cond = normalize(X[i, : self.frames_cond], self.rain_cap)
            members = ensemble_forecast(
                self.model_, self.schedule_, cond, self.ensemble,
                seed_parts=(self.seed, 3, i), steps=steps,
            )
            out.append(denormalize(members, self.rain_cap))
        return np.stack(out)

    def predict(self, X) -> np.ndarray:
        """Ensemble-mean forecast ``(n, frames_pred, H, W)`` in mm/h."""
        return self.predict_ensemble(X).mean(axis=1)
