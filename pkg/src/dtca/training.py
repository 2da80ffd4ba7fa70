"""Optimizer, training loop, and checkpoint round-trips.

Randomness is derived per step from ``(seed, stream, step)`` seed
sequences, so a resumed run draws exactly the batches, timesteps and
noise the uninterrupted run would have drawn.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig, config_from_dict, write_resolved
from .data import load_sequence, normalize
from .diffusion import NoiseSchedule, make_schedule, train_loss
from .exceptions import ParameterError
from .model import DTCAModel, load_checkpoint, save_checkpoint
from .tensor import ComputationRecord, Tensor
from .tokenizer import TokenBatch, patchify

_INIT_STREAM = 0
_STEP_STREAM = 1


class Adam:
    """Adam moment estimation over a named parameter dict."""

    def __init__(self, params, lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.step_count += 1
        c1 = 1.0 - self.beta1**self.step_count
        c2 = 1.0 - self.beta2**self.step_count
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            g = g.astype(p.data.dtype, copy=False)
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            update = (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)
            p.data = p.data - np.asarray(self.lr * update, dtype=p.data.dtype)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"opt.m.{k}": v for k, v in self.m.items()}
        out.update({f"opt.v.{k}": v for k, v in self.v.items()})
        out["opt.step"] = np.asarray(float(self.step_count), dtype=np.float32)
        return out

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for name in self.params:
            self.m[name] = np.asarray(arrays[f"opt.m.{name}"]).copy()
            self.v[name] = np.asarray(arrays[f"opt.v.{name}"]).copy()
        self.step_count = int(arrays["opt.step"])


def load_dataset(data_dir, cfg: RunConfig) -> np.ndarray:
    """Stack every .rseq file under ``data_dir`` into ``(n, F, H, W)`` mm/h."""
    paths = sorted(Path(data_dir).glob("*.rseq"))
    if not paths:
        raise ParameterError(f"no .rseq files under {data_dir}")
    frames = cfg.frames_cond + cfg.frames_pred
    stacked = []
    for path in paths:
        seq = load_sequence(path)
        if seq.height != cfg.height or seq.width != cfg.width:
            raise ParameterError(
                f"{path}: field {seq.height}x{seq.width} does not match config "
                f"{cfg.height}x{cfg.width}"
            )
        if seq.frames < frames:
            raise ParameterError(
                f"{path}: {seq.frames} frames < required {frames}"
            )
        stacked.append(seq.values[:frames])
    return np.stack(stacked)


@dataclass
class TrainResult:
    checkpoint_path: Path
    losses: list[float]
    start_step: int


def _token_batch(norm_values: np.ndarray, cfg: RunConfig) -> TokenBatch:
    tokens = patchify(Tensor(norm_values.astype(np.float32)), cfg.patch)
    return TokenBatch(
        tokens, cfg.frames_cond, cfg.frames_pred, cfg.patch,
        cfg.height // cfg.patch,
    )


def _checkpoint_arrays(model: DTCAModel, opt: Adam) -> dict[str, np.ndarray]:
    return {**model.state_arrays(), **opt.state_arrays()}


def build_model(cfg: RunConfig, dtype=np.float32) -> DTCAModel:
    rng = np.random.default_rng([cfg.seed, _INIT_STREAM])
    return DTCAModel(cfg.model_config(), rng, dtype=dtype)


def restore(path) -> tuple[RunConfig, DTCAModel, dict[str, np.ndarray], int]:
    """Rebuild (config, model, optimizer arrays, step) from a checkpoint."""
    raw_cfg, arrays = load_checkpoint(path)
    cfg = config_from_dict(raw_cfg)
    model = build_model(cfg)
    model.load_state({k: v for k, v in arrays.items() if not k.startswith("opt.")})
    opt_arrays = {k: v for k, v in arrays.items() if k.startswith("opt.")}
    step = int(opt_arrays.get("opt.step", 0.0))
    return cfg, model, opt_arrays, step


def train_run(cfg: RunConfig, data_dir, out_dir, resume=None,
              progress=None) -> TrainResult:
    """Train per the config; emits checkpoints and a step,loss CSV log."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, out)

    values = load_dataset(data_dir, cfg)
    norm = normalize(values, cfg.rain_cap).astype(np.float32)
    sched = make_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end)

    model = build_model(cfg)
    opt = Adam(model.named_parameters(), lr=cfg.learning_rate)
    start_step = 0
    if resume is not None:
        chk_cfg, model, opt_arrays, start_step = restore(resume)
        if chk_cfg.model_config() != cfg.model_config():
            raise ParameterError(
                "checkpoint model configuration does not match the run config"
            )
        opt = Adam(model.named_parameters(), lr=cfg.learning_rate)
        if opt_arrays:
            opt.load_state(opt_arrays)

    losses: list[float] = []
    log_rows: list[tuple[int, float]] = []
    for step in range(start_step, cfg.train_steps):
        rng = np.random.default_rng([cfg.seed, _STEP_STREAM, step])
        idx = rng.integers(0, norm.shape[0], size=cfg.batch_size)
        batch = _token_batch(norm[idx], cfg)
        with ComputationRecord() as record:
            loss = train_loss(model, batch, sched, rng)
        record.backward(loss)
        opt.step()
        opt.zero_grad()
        value = loss.item()
        losses.append(value)
        if cfg.log_every and (step + 1) % cfg.log_every == 0:
            log_rows.append((step + 1, value))
        if progress is not None:
            progress(step + 1, value)
        if cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(
                out / f"checkpoint_{step + 1:06d}.dtca",
                _checkpoint_arrays(model, opt),
                cfg.to_dict(),
            )

    final_path = out / "checkpoint.dtca"
    save_checkpoint(final_path, _checkpoint_arrays(model, opt), cfg.to_dict())
    with open(out / "loss_log.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss"])
        for step, value in log_rows:
            writer.writerow([step, repr(value)])
    return TrainResult(final_path, losses, start_step)
