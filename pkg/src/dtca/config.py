"""Flat key=value run configuration shared by all CLI commands."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .data import BlobParams
from .exceptions import ParameterError
from .model import ModelConfig


@dataclass
class RunConfig:
    """Every knob of a run, resolvable from defaults + file + overrides."""

    # geometry
    height: int = 16
    width: int = 16
    patch: int = 2
    frames_cond: int = 2
    frames_pred: int = 4
    # model
    embed_dim: int = 64
    depth: int = 4
    num_heads: int = 4
    variant: str = "fst"
    shift: int = 4
    causal: bool = True
    query_scope: str = "all"
    isolate_samples: bool = False
    # diffusion schedule
    timesteps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    # training
    train_steps: int = 2000
    batch_size: int = 8
    learning_rate: float = 1e-4
    seed: int = 0
    checkpoint_every: int = 500
    log_every: int = 1
    # sampling
    ensemble: int = 4
    sample_steps: int = 0  # 0 = full chain
    # evaluation
    thresholds: str = "1.0,8.0"
    fss_window: int = 3
    # synthetic data
    blob_count: int = 3
    amp_min: float = 4.0
    amp_max: float = 24.0
    radius_min: float = 1.5
    radius_max: float = 3.5
    speed_min: float = 0.5
    speed_max: float = 2.0
    growth_rate: float = 0.05
    noise_floor: float = 0.1
    timestep_minutes: float = 5.0
    # normalization
    rain_cap: float = 32.0
    # default locations (flags take precedence)
    data_dir: str = ""
    out_dir: str = ""

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            height=self.height,
            width=self.width,
            patch=self.patch,
            frames_cond=self.frames_cond,
            frames_pred=self.frames_pred,
            embed_dim=self.embed_dim,
            depth=self.depth,
            num_heads=self.num_heads,
            variant=self.variant,
            shift=self.shift,
            causal=self.causal,
            query_scope=self.query_scope,
            isolate_samples=self.isolate_samples,
        )

    def blob_params(self) -> BlobParams:
        return BlobParams(
            count=self.blob_count,
            amp_min=self.amp_min,
            amp_max=self.amp_max,
            radius_min=self.radius_min,
            radius_max=self.radius_max,
            speed_min=self.speed_min,
            speed_max=self.speed_max,
            growth_rate=self.growth_rate,
            noise_floor=self.noise_floor,
        )

    def threshold_list(self) -> tuple[float, ...]:
        try:
            values = tuple(
                float(part) for part in self.thresholds.split(",") if part.strip()
            )
        except ValueError as exc:
            raise ParameterError(
                f"thresholds {self.thresholds!r} is not a comma-separated float list"
            ) from exc
        if not values:
            raise ParameterError("thresholds list is empty")
        return values

    def to_text(self) -> str:
        lines = []
        for field in fields(self):
            value = getattr(self, field.name)
            text = str(value).lower() if isinstance(value, bool) else str(value)
            lines.append(f"{field.name}={text}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict[str, str]:
        return {
            key: (str(v).lower() if isinstance(v, bool) else str(v))
            for key, v in asdict(self).items()
        }


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    if kind == "bool":
        lowered = raw.lower()
        if lowered in ("true", "1", "yes"):
            return True
        if lowered in ("false", "0", "no"):
            return False
        raise ParameterError(f"config key {key!r}: {raw!r} is not a boolean")
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError as exc:
        raise ParameterError(f"config key {key!r}: {raw!r} is not a {kind}") from exc
    return raw


def apply_pairs(cfg: RunConfig, pairs: list[tuple[str, str]]) -> RunConfig:
    for key, raw in pairs:
        if key not in _FIELD_TYPES:
            raise ParameterError(f"unknown config key {key!r}")
        setattr(cfg, key, _parse_value(key, raw))
    return cfg


def parse_pairs_text(text: str) -> list[tuple[str, str]]:
    pairs = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ParameterError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, value = stripped.partition("=")
        pairs.append((key.strip(), value))
    return pairs


def load_config(path=None, overrides: list[str] | None = None) -> RunConfig:
    """Defaults, then the config file, then repeated ``--set key=value``."""
    cfg = RunConfig()
    if path is not None:
        text = Path(path).read_text()
        apply_pairs(cfg, parse_pairs_text(text))
    for item in overrides or []:
        if "=" not in item:
            raise ParameterError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        apply_pairs(cfg, [(key.strip(), value)])
    return cfg


def config_from_dict(values: dict[str, str]) -> RunConfig:
    """Rebuild a RunConfig from checkpoint config text."""
    cfg = RunConfig()
    apply_pairs(cfg, [(k, v) for k, v in values.items() if k in _FIELD_TYPES])
    return cfg


def write_resolved(cfg: RunConfig, outdir) -> Path:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    path = outdir / "resolved_config.txt"
    path.write_text(cfg.to_text())
    return path
