"""Sequence <-> spatiotemporal token conversion and positional tables.

A rainfall sequence ``(B, F, H, W)`` is cut into non-overlapping ``p x p``
patches, giving tokens laid out ``(B, C, F, N)``: ``C`` patch channels in
row-major grid order, ``F`` time frames (conditions first), and token
vectors of length ``N`` (``p*p`` before embedding). Patchify/unpatchify,
assembly and extraction are exact bijections.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .exceptions import DimensionError, ParameterError
from .tensor import Tensor


@dataclass
class TokenBatch:
    """Tokens ``(B, C, F, N)`` plus the condition/prediction frame split."""

    tokens: Tensor
    frames_cond: int
    frames_pred: int
    patch: int
    grid: int

    def __post_init__(self):
        b, c, f, _ = self.tokens.shape
        if f != self.frames_cond + self.frames_pred:
            raise DimensionError(
                f"frame axis {f} != frames_cond {self.frames_cond} + "
                f"frames_pred {self.frames_pred}"
            )
        if c != self.grid * self.grid:
            raise DimensionError(f"channel axis {c} != grid^2 = {self.grid ** 2}")
        del b

    @property
    def embed_dim(self) -> int:
        return self.tokens.shape[-1]

    @property
    def frames(self) -> int:
        return self.tokens.shape[2]

    @property
    def channels(self) -> int:
        return self.tokens.shape[1]

    def with_tokens(self, tokens: Tensor) -> "TokenBatch":
        return replace(self, tokens=tokens)

    def condition(self) -> "TokenBatch":
        tok = T.slice_axis(self.tokens, 2, 0, self.frames_cond)
        return TokenBatch(tok, self.frames_cond, 0, self.patch, self.grid)

    def prediction(self) -> "TokenBatch":
        tok = T.slice_axis(self.tokens, 2, self.frames_cond, self.frames)
        return TokenBatch(tok, 0, self.frames_pred, self.patch, self.grid)


def patchify(seq: Tensor, patch: int) -> Tensor:
    """``(B, F, H, W) -> (B, C, F, p*p)`` patch tokens, row-major both ways."""
    if seq.ndim != 4:
        raise DimensionError(f"expected (B, F, H, W), got {seq.shape}")
    _, _, h, w = seq.shape
    if patch < 1 or h % patch or w % patch:
        raise DimensionError(
            f"patch {patch} must divide field size {h}x{w}"
        )
    return T.rearrange(
        seq, "b f (gh p1) (gw p2) -> b (gh gw) f (p1 p2)", p1=patch, p2=patch
    )


def unpatchify(tokens: Tensor, patch: int, height: int, width: int) -> Tensor:
    """Exact inverse of :func:`patchify` for the given field size."""
    if tokens.ndim != 4:
        raise DimensionError(f"expected (B, C, F, p*p), got {tokens.shape}")
    gh, gw = height // patch, width // patch
    if gh * patch != height or gw * patch != width:
        raise DimensionError(f"patch {patch} must divide {height}x{width}")
    if tokens.shape[1] != gh * gw or tokens.shape[3] != patch * patch:
        raise DimensionError(
            f"tokens {tokens.shape} do not match grid {gh}x{gw}, patch {patch}"
        )
    return T.rearrange(
        tokens, "b (gh gw) f (p1 p2) -> b f (gh p1) (gw p2)",
        gh=gh, gw=gw, p1=patch, p2=patch,
    )


def embed_tokens(tokens: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Apply one linear map per token: ``(..., p*p) -> (..., N)``."""
    out = T.matmul(tokens, weight)
    if bias is not None:
        out = T.add(out, bias)
    return out


def sinusoid_table(length: int, dim: int) -> np.ndarray:
    """Fixed sinusoidal table ``(length, dim)``; deterministic in its args."""
    position = np.arange(length, dtype=np.float64)[:, None]
    idx = np.arange(dim, dtype=np.float64)[None, :]
    angle = position / np.power(10000.0, 2.0 * np.floor(idx / 2.0) / dim)
    table = np.zeros((length, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(angle[:, 0::2])
    table[:, 1::2] = np.cos(angle[:, 1::2])
    return table


@dataclass(frozen=True)
class PositionTables:
    """Sinusoidal patch-location and frame-position tables."""

    patch_pos: np.ndarray  # (C, N)
    frame_pos: np.ndarray  # (F, N)

    def combined(self) -> np.ndarray:
        """Offset per (channel, frame): ``(C, F, N)``."""
        return self.patch_pos[:, None, :] + self.frame_pos[None, :, :]


def build_position_tables(channels: int, frames: int, dim: int) -> PositionTables:
    if channels < 1 or frames < 1 or dim < 1:
        raise ParameterError(
            f"positive table sizes required, got ({channels}, {frames}, {dim})"
        )
    return PositionTables(
        patch_pos=sinusoid_table(channels, dim),
        frame_pos=sinusoid_table(frames, dim),
    )


def add_positions(batch: TokenBatch, tables: PositionTables) -> TokenBatch:
    """Add ``patch_pos[c] + frame_pos[f]`` to every token."""
    c, f, n = batch.channels, batch.frames, batch.embed_dim
    if tables.patch_pos.shape != (c, n) or tables.frame_pos.shape[1] != n:
        raise DimensionError(
            f"position tables {tables.patch_pos.shape}/{tables.frame_pos.shape} "
            f"do not match tokens (C={c}, F={f}, N={n})"
        )
    if tables.frame_pos.shape[0] < f:
        raise DimensionError(
            f"frame table has {tables.frame_pos.shape[0]} rows, need {f}"
        )
    offset = Tensor(
        (tables.patch_pos[:, None, :] + tables.frame_pos[None, :f, :]).astype(
            batch.tokens.dtype
        )
    )
    return batch.with_tokens(T.add(batch.tokens, offset))


def assemble_input(cond: TokenBatch, noised: TokenBatch) -> TokenBatch:
    """Concatenate condition and prediction tokens along the frame axis."""
    bc, cc, _, nc = cond.tokens.shape
    bn, cn, _, nn_ = noised.tokens.shape
    if (bc, cc, nc) != (bn, cn, nn_):
        raise DimensionError(
            f"condition {cond.tokens.shape} and prediction {noised.tokens.shape} "
            "disagree on B/C/N"
        )
    if cond.patch != noised.patch or cond.grid != noised.grid:
        raise DimensionError("condition and prediction use different patch grids")
    tok = T.concat([cond.tokens, noised.tokens], axis=2)
    return TokenBatch(
        tok, cond.frames, noised.frames, cond.patch, cond.grid
    )


def extract_prediction(batch: TokenBatch) -> TokenBatch:
    """Return the trailing prediction frames of an assembled batch."""
    return batch.prediction()
