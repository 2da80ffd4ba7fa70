"""Synthetic rainfall sequences, normalization, and RSEQ file I/O.

Synthetic fields are sums of advected anisotropic Gaussian blobs on a
wrap-around domain, with optional per-frame growth/decay and a clipped
noise floor. Values are rain rates in mm/h; everything is deterministic
per seed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .exceptions import (
    BadMagicError,
    BadVersionError,
    ParameterError,
    TruncatedFileError,
)

RSEQ_MAGIC = b"RSEQ"
RSEQ_VERSION = 1


@dataclass
class RadarSequence:
    """A (frames, height, width) rain-rate sequence in mm/h."""

    values: np.ndarray
    timestep_minutes: float = 5.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 3:
            raise ParameterError(
                f"expected (frames, height, width), got {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ParameterError("sequence contains non-finite values")
        if np.any(self.values < 0):
            raise ParameterError("rain rates must be non-negative")

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class BlobParams:
    """Sampling ranges for the synthetic blob generator."""

    count: int = 3
    amp_min: float = 4.0
    amp_max: float = 24.0
    radius_min: float = 1.5
    radius_max: float = 3.5
    speed_min: float = 0.5
    speed_max: float = 2.0
    growth_rate: float = 0.05
    noise_floor: float = 0.1

    def __post_init__(self):
        pairs = (
            ("amp", self.amp_min, self.amp_max),
            ("radius", self.radius_min, self.radius_max),
            ("speed", self.speed_min, self.speed_max),
        )
        for name, lo, hi in pairs:
            if lo <= 0 or hi < lo:
                raise ParameterError(
                    f"{name} range ({lo}, {hi}) must be positive and ordered"
                )
        if self.count < 0:
            raise ParameterError(f"blob count must be >= 0, got {self.count}")
        if self.growth_rate < 0 or self.noise_floor < 0:
            raise ParameterError("growth rate and noise floor must be >= 0")


@dataclass(frozen=True)
class Blob:
    """One advected anisotropic Gaussian rain cell."""

    center: tuple[float, float]       # (x, y) in pixels at frame 0
    velocity: tuple[float, float]     # (vx, vy) pixels per frame
    radii: tuple[float, float]        # (rx, ry) Gaussian sigmas in pixels
    angle: float                      # orientation of the x-radius, radians
    amplitude: float                  # peak rain rate, mm/h
    growth: float = 0.0               # per-frame log growth/decay rate


def _wrapped_delta(coord: np.ndarray, center: float, size: int) -> np.ndarray:
    return (coord - center + size / 2.0) % size - size / 2.0


def render_sequence(
    blobs: list[Blob],
    frames: int,
    height: int,
    width: int,
    noise_floor: float = 0.0,
    noise_rng: np.random.Generator | None = None,
    timestep_minutes: float = 5.0,
) -> RadarSequence:
    """Rasterize blobs over a wrap-around domain, one frame per step."""
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    out = np.zeros((frames, height, width), dtype=np.float64)
    for t in range(frames):
        field = out[t]
        for blob in blobs:
            cx = blob.center[0] + t * blob.velocity[0]
            cy = blob.center[1] + t * blob.velocity[1]
            dx = _wrapped_delta(xs, cx % width, width)
            dy = _wrapped_delta(ys, cy % height, height)
            ca, sa = np.cos(blob.angle), np.sin(blob.angle)
            u = ca * dx + sa * dy
            v = -sa * dx + ca * dy
            amp = blob.amplitude * np.exp(blob.growth * t)
            field += amp * np.exp(
                -0.5 * ((u / blob.radii[0]) ** 2 + (v / blob.radii[1]) ** 2)
            )
        if noise_floor > 0 and noise_rng is not None:
            field += np.maximum(
                noise_rng.normal(0.0, noise_floor, size=field.shape), 0.0
            )
    return RadarSequence(out.astype(np.float32), timestep_minutes)


def gen_synthetic(
    params: BlobParams,
    frames: int,
    height: int,
    width: int,
    seed,
    timestep_minutes: float = 5.0,
) -> RadarSequence:
    """Draw blob properties from ``seed`` and render the sequence."""
    rng = np.random.default_rng(seed)
    blobs = []
    for _ in range(params.count):
        speed = rng.uniform(params.speed_min, params.speed_max)
        heading = rng.uniform(0.0, 2.0 * np.pi)
        blobs.append(
            Blob(
                center=(rng.uniform(0, width), rng.uniform(0, height)),
                velocity=(speed * np.cos(heading), speed * np.sin(heading)),
                radii=(
                    rng.uniform(params.radius_min, params.radius_max),
                    rng.uniform(params.radius_min, params.radius_max),
                ),
                angle=rng.uniform(0.0, np.pi),
                amplitude=rng.uniform(params.amp_min, params.amp_max),
                growth=rng.uniform(-params.growth_rate, params.growth_rate),
            )
        )
    return render_sequence(
        blobs, frames, height, width,
        noise_floor=params.noise_floor, noise_rng=rng,
        timestep_minutes=timestep_minutes,
    )


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def normalize(values: np.ndarray, cap_mmh: float = 32.0) -> np.ndarray:
    """Log-compress rain rates into [-1, 1]; 0 -> -1, cap -> +1."""
    if cap_mmh <= 0:
        raise ParameterError(f"cap must be positive, got {cap_mmh}")
    scaled = np.log1p(np.maximum(values, 0.0)) / np.log1p(cap_mmh)
    return np.clip(2.0 * scaled - 1.0, -1.0, 1.0)


def denormalize(values: np.ndarray, cap_mmh: float = 32.0) -> np.ndarray:
    """Inverse of :func:`normalize`; output clipped to non-negative rates."""
    if cap_mmh <= 0:
        raise ParameterError(f"cap must be positive, got {cap_mmh}")
    clipped = np.clip(values, -1.0, 1.0)
    return np.maximum(np.expm1((clipped + 1.0) / 2.0 * np.log1p(cap_mmh)), 0.0)


def persistence_forecast(condition: np.ndarray, frames: int) -> np.ndarray:
    """Repeat the last condition frame for every lead time."""
    last = np.asarray(condition)[-1]
    return np.repeat(last[None, :, :], frames, axis=0)


# ---------------------------------------------------------------------------
# RSEQ binary format
# ---------------------------------------------------------------------------

def save_sequence(path, seq: RadarSequence) -> None:
    """Write magic, version, dims (u64 LE), cadence (f32), then f32 values."""
    with open(path, "wb") as fh:
        fh.write(RSEQ_MAGIC)
        fh.write(struct.pack("<I", RSEQ_VERSION))
        fh.write(struct.pack("<3Q", seq.frames, seq.height, seq.width))
        fh.write(struct.pack("<f", seq.timestep_minutes))
        fh.write(np.ascontiguousarray(seq.values, dtype="<f4").tobytes())


def load_sequence(path) -> RadarSequence:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != RSEQ_MAGIC:
            raise BadMagicError(
                f"{path}: bad magic {magic!r}, expected {RSEQ_MAGIC!r}"
            )
        header = fh.read(4 + 24 + 4)
        if len(header) != 32:
            raise TruncatedFileError(
                f"{path}: header expected 32 bytes after magic, got {len(header)}"
            )
        (version,) = struct.unpack("<I", header[:4])
        if version != RSEQ_VERSION:
            raise BadVersionError(f"{path}: unsupported version {version}")
        frames, height, width = struct.unpack("<3Q", header[4:28])
        (cadence,) = struct.unpack("<f", header[28:32])
        expected = frames * height * width * 4
        payload = fh.read()
        if len(payload) != expected:
            raise TruncatedFileError(
                f"{path}: payload expected {expected} bytes, got {len(payload)}"
            )
    values = np.frombuffer(payload, dtype="<f4").reshape(frames, height, width)
    return RadarSequence(values.copy(), float(cadence))
