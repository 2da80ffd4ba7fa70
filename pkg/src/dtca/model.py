"""Spatiotemporal denoising transformer with causal condition attention.

The denoiser consumes condition tokens and noised prediction tokens
concatenated along the frame axis, runs ``depth`` levels of attention
blocks, and projects back to per-patch noise estimates. Each level is
staged according to the configured space-time variant:

* ``fst``    -- one joint block over the merged (channel, frame) axis;
* ``s+t``    -- a spatial block (per frame) then a temporal block (per channel);
* ``hst+s``  -- a joint block then a spatial block;
* ``hst+t``  -- a joint block then a temporal block.

Every stage applies timestep-modulated layer norm around self-attention
and an MLP, with modulation gates initialized to zero so the whole stack
is the identity map at initialization. Condition information additionally
enters through a cross-attention sub-layer whose keys/values come from
the position-tagged, channel-to-batch-shifted condition tokens.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .exceptions import (
    BadMagicError,
    BadVersionError,
    DimensionError,
    ParameterError,
    TruncatedFileError,
)
from .tensor import Tensor
from .tokenizer import (
    PositionTables,
    TokenBatch,
    add_positions,
    assemble_input,
    build_position_tables,
    embed_tokens,
    sinusoid_table,
    unpatchify,
)

VARIANTS = ("fst", "s+t", "hst+s", "hst+t")
QUERY_SCOPES = ("all", "prediction_only")

CHECKPOINT_MAGIC = b"DTCA"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and geometry of the denoiser."""

    height: int = 16
    width: int = 16
    patch: int = 2
    frames_cond: int = 2
    frames_pred: int = 4
    embed_dim: int = 64
    depth: int = 4
    num_heads: int = 4
    variant: str = "fst"
    shift: int = 4
    causal: bool = True
    query_scope: str = "all"
    isolate_samples: bool = False
    mlp_ratio: int = 4

    def __post_init__(self):
        if self.height != self.width:
            raise ParameterError(
                f"square fields required, got {self.height}x{self.width}"
            )
        if self.patch < 1 or self.height % self.patch:
            raise ParameterError(
                f"patch {self.patch} must divide field size {self.height}"
            )
        if self.frames_cond < 1 or self.frames_pred < 1:
            raise ParameterError("need at least one condition and one prediction frame")
        if self.depth < 1:
            raise ParameterError(f"depth must be >= 1, got {self.depth}")
        if self.embed_dim % self.num_heads:
            raise ParameterError(
                f"embed_dim {self.embed_dim} not divisible by heads {self.num_heads}"
            )
        if self.variant not in VARIANTS:
            raise ParameterError(f"variant {self.variant!r} not one of {VARIANTS}")
        if self.query_scope not in QUERY_SCOPES:
            raise ParameterError(
                f"query_scope {self.query_scope!r} not one of {QUERY_SCOPES}"
            )
        if self.shift < 0:
            raise ParameterError(f"shift must be >= 0, got {self.shift}")
        if self.shift > 1 and self.channels % self.shift:
            raise ParameterError(
                f"shift {self.shift} does not divide channel count {self.channels}"
            )

    @property
    def grid(self) -> int:
        return self.height // self.patch

    @property
    def channels(self) -> int:
        return self.grid * self.grid

    @property
    def frames(self) -> int:
        return self.frames_cond + self.frames_pred

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads


# ---------------------------------------------------------------------------
# variant staging and the channel-to-batch shift
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StageReshape:
    """One space-time staging pattern together with its exact inverse."""

    kind: str  # "st" | "s" | "t"
    pattern: str
    sizes: dict[str, int] = field(default_factory=dict)

    @property
    def inverse(self) -> str:
        return T.invert_pattern(self.pattern)

    def apply(self, x: Tensor) -> Tensor:
        return T.rearrange(x, self.pattern, **self.sizes)

    def invert(self, x: Tensor) -> Tensor:
        return T.rearrange(x, self.inverse, **self.sizes)


_STAGE_KINDS = {
    "fst": ("st",),
    "s+t": ("s", "t"),
    "hst+s": ("st", "s"),
    "hst+t": ("st", "t"),
}

_STAGE_PATTERNS = {
    "st": "b c f n -> b (c f) n",
    "s": "b c f n -> (b f) c n",
    "t": "b c f n -> (b c) f n",
}


def variant_reshape(variant: str, channels: int, frames: int) -> tuple[StageReshape, ...]:
    """Staged reshapes for a variant, each carrying its inverse."""
    if variant not in _STAGE_KINDS:
        raise ParameterError(f"variant {variant!r} not one of {VARIANTS}")
    return tuple(
        StageReshape(kind, _STAGE_PATTERNS[kind], {"c": channels, "f": frames})
        for kind in _STAGE_KINDS[variant]
    )


def ctbs(cond: Tensor, shift: int) -> Tensor:
    """Channel-To-Batch Shift: ``(B, C, F, N) -> (B*s, C/s, F, N)``.

    A pure axis split/merge; element ``(b, c, f, n)`` moves to virtual
    sample ``b*s + c // (C/s)`` at channel ``c % (C/s)``. ``s = 1`` is the
    identity.
    """
    if shift < 1:
        raise ParameterError(f"shift must be >= 1, got {shift}")
    channels = cond.shape[1]
    if channels % shift:
        raise ParameterError(
            f"shift {shift} does not divide channel count {channels}"
        )
    if shift == 1:
        return cond
    return T.rearrange(cond, "b (s c) f n -> (b s) c f n", s=shift)


def global_condition_embed(cond_tokens: Tensor, weight: Tensor,
                           bias: Tensor | None = None) -> Tensor:
    """Shared N->N linear applied to every virtual-sample condition token."""
    out = T.matmul(cond_tokens, weight)
    if bias is not None:
        out = T.add(out, bias)
    return out


# ---------------------------------------------------------------------------
# parameterized layers
# ---------------------------------------------------------------------------

def _trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    draw = rng.standard_normal(shape)
    return np.clip(draw, -2.0, 2.0) * std


class Linear:
    """Dense layer ``y = x @ W + b`` with trainable parameters."""

    def __init__(self, rng, d_in: int, d_out: int, zero_init: bool = False,
                 dtype=np.float32):
        w = (
            np.zeros((d_in, d_out))
            if zero_init
            else _trunc_normal(rng, (d_in, d_out))
        )
        self.weight = Tensor(w.astype(dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, self.weight), self.bias)

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}


def scaled_dot_attention(q: Tensor, k_t: Tensor, v: Tensor) -> tuple[Tensor, Tensor]:
    """softmax(q @ k_t / sqrt(d)) @ v; returns (output, weights)."""
    d = q.shape[-1]
    scores = T.mul(T.matmul(q, k_t), 1.0 / math.sqrt(d))
    weights = T.softmax(scores, axis=-1)
    return T.matmul(weights, v), weights


class SelfAttention:
    def __init__(self, rng, dim: int, heads: int, dtype=np.float32):
        self.heads = heads
        self.qkv = Linear(rng, dim, 3 * dim, dtype=dtype)
        self.proj = Linear(rng, dim, dim, dtype=dtype)
        self.capture = False
        self.last_weights: np.ndarray | None = None

    def __call__(self, x: Tensor) -> Tensor:
        dim = x.shape[-1]
        qkv = self.qkv(x)
        q = T.slice_axis(qkv, 2, 0, dim)
        k = T.slice_axis(qkv, 2, dim, 2 * dim)
        v = T.slice_axis(qkv, 2, 2 * dim, 3 * dim)
        qh = T.rearrange(q, "g l (h d) -> g h l d", h=self.heads)
        kt = T.rearrange(k, "g l (h d) -> g h d l", h=self.heads)
        vh = T.rearrange(v, "g l (h d) -> g h l d", h=self.heads)
        out, weights = scaled_dot_attention(qh, kt, vh)
        if self.capture:
            self.last_weights = weights.data
        return self.proj(T.rearrange(out, "g h l d -> g l (h d)"))

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {**self.qkv.named(f"{prefix}.qkv"), **self.proj.named(f"{prefix}.proj")}


class CausalAttention:
    """Cross-attention from the token stream onto processed conditions.

    With ``pool=True`` (shift > 1) queries, keys and values from the whole
    batch are flattened into one attention pool per head, so the virtual
    samples created by the channel shift all interact. Otherwise each real
    sample attends only to its own condition tokens. The output projection
    is zero-initialized so the sub-layer vanishes at initialization.
    """

    def __init__(self, rng, dim: int, heads: int, dtype=np.float32):
        self.heads = heads
        self.q = Linear(rng, dim, dim, dtype=dtype)
        self.k = Linear(rng, dim, dim, dtype=dtype)
        self.v = Linear(rng, dim, dim, dtype=dtype)
        self.proj = Linear(rng, dim, dim, zero_init=True, dtype=dtype)
        self.capture = False
        self.last_weights: np.ndarray | None = None

    def __call__(self, x: Tensor, cond_kv: Tensor, batch_size: int,
                 pool: bool) -> Tensor:
        groups, length, _ = x.shape
        q = self.q(x)
        k = self.k(cond_kv)
        v = self.v(cond_kv)
        if pool:
            qh = T.rearrange(q, "g l (h d) -> h (g l) d", h=self.heads)
            kt = T.rearrange(k, "m l (h d) -> h d (m l)", h=self.heads)
            vh = T.rearrange(v, "m l (h d) -> h (m l) d", h=self.heads)
            out, weights = scaled_dot_attention(qh, kt, vh)
            out = T.rearrange(out, "h (g l) d -> g l (h d)", g=groups)
        else:
            members, lc, dim = cond_kv.shape
            if members % batch_size:
                raise DimensionError(
                    f"{members} condition groups not divisible by batch {batch_size}"
                )
            per = members // batch_size
            if per > 1:  # regroup virtual samples back under their real sample
                k = T.rearrange(k, "(b s) l n -> b (s l) n", s=per)
                v = T.rearrange(v, "(b s) l n -> b (s l) n", s=per)
                lc = per * lc
            rep = groups // batch_size
            if rep > 1:
                k = T.reshape(
                    T.expand(T.reshape(k, (batch_size, 1, lc, dim)),
                             (batch_size, rep, lc, dim)),
                    (groups, lc, dim),
                )
                v = T.reshape(
                    T.expand(T.reshape(v, (batch_size, 1, lc, dim)),
                             (batch_size, rep, lc, dim)),
                    (groups, lc, dim),
                )
            qh = T.rearrange(q, "g l (h d) -> g h l d", h=self.heads)
            kt = T.rearrange(k, "g l (h d) -> g h d l", h=self.heads)
            vh = T.rearrange(v, "g l (h d) -> g h l d", h=self.heads)
            out, weights = scaled_dot_attention(qh, kt, vh)
            out = T.rearrange(out, "g h l d -> g l (h d)")
        if self.capture:
            self.last_weights = weights.data
        return self.proj(out)

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for name, layer in (("q", self.q), ("k", self.k), ("v", self.v),
                            ("proj", self.proj)):
            out.update(layer.named(f"{prefix}.{name}"))
        return out


class Mlp:
    def __init__(self, rng, dim: int, ratio: int, dtype=np.float32):
        self.fc1 = Linear(rng, dim, ratio * dim, dtype=dtype)
        self.fc2 = Linear(rng, ratio * dim, dim, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {**self.fc1.named(f"{prefix}.fc1"), **self.fc2.named(f"{prefix}.fc2")}


class TimestepEmbedder:
    """Sinusoidal map of the diffusion step followed by a two-layer MLP."""

    def __init__(self, rng, dim: int, dtype=np.float32):
        self.dim = dim
        self.dtype = dtype
        self.fc1 = Linear(rng, dim, dim, dtype=dtype)
        self.fc2 = Linear(rng, dim, dim, dtype=dtype)

    def table(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=np.int64)
        full = sinusoid_table(int(t.max()) + 1, self.dim)
        return full[t]

    def __call__(self, t: np.ndarray) -> Tensor:
        base = Tensor(self.table(t).astype(self.dtype))
        return self.fc2(T.gelu(self.fc1(base)))

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {**self.fc1.named(f"{prefix}.fc1"), **self.fc2.named(f"{prefix}.fc2")}


class DTCAStage:
    """One modulated attention stage: self-attention, causal path, MLP."""

    def __init__(self, rng, cfg: ModelConfig, dtype=np.float32):
        dim = cfg.embed_dim
        self.cfg = cfg
        self.adaln = Linear(rng, dim, 6 * dim, zero_init=True, dtype=dtype)
        self.attn = SelfAttention(rng, dim, cfg.num_heads, dtype=dtype)
        self.cross = (
            CausalAttention(rng, dim, cfg.num_heads, dtype=dtype)
            if cfg.causal
            else None
        )
        self.mlp = Mlp(rng, dim, cfg.mlp_ratio, dtype=dtype)

    def __call__(self, x: Tensor, t_emb_g: Tensor, cond_kv: Tensor | None,
                 batch_size: int, query_mask: np.ndarray | None) -> Tensor:
        groups, length, dim = x.shape
        mods = self.adaln(t_emb_g)  # (G, 6N); exactly zero at init

        def mod(i: int) -> Tensor:
            part = T.slice_axis(mods, 1, i * dim, (i + 1) * dim)
            return T.expand(T.reshape(part, (groups, 1, dim)), x.shape)

        normed = T.layer_norm(x, axis=-1)
        normed = T.add(T.mul(normed, T.add(mod(0), 1.0)), mod(1))
        x = T.add(x, T.mul(mod(2), self.attn(normed)))

        if cond_kv is not None and self.cross is not None:
            delta = self.cross(x, cond_kv, batch_size,
                               pool=self.cfg.shift > 1 and not self.cfg.isolate_samples)
            if query_mask is not None:
                mask = Tensor(query_mask.astype(delta.dtype))
                delta = T.mul(delta, T.expand(mask, delta.shape))
            x = T.add(x, delta)

        normed = T.layer_norm(x, axis=-1)
        normed = T.add(T.mul(normed, T.add(mod(3), 1.0)), mod(4))
        return T.add(x, T.mul(mod(5), self.mlp(normed)))

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        out.update(self.adaln.named(f"{prefix}.adaln"))
        out.update(self.attn.named(f"{prefix}.attn"))
        if self.cross is not None:
            out.update(self.cross.named(f"{prefix}.cross"))
        out.update(self.mlp.named(f"{prefix}.mlp"))
        return out


class FinalLayer:
    """Modulated norm plus zero-initialized projection to patch values."""

    def __init__(self, rng, cfg: ModelConfig, dtype=np.float32):
        dim = cfg.embed_dim
        self.adaln = Linear(rng, dim, 2 * dim, zero_init=True, dtype=dtype)
        self.proj = Linear(rng, dim, cfg.patch * cfg.patch, zero_init=True,
                           dtype=dtype)

    def __call__(self, x: Tensor, t_emb: Tensor) -> Tensor:
        b, c, f, dim = x.shape
        mods = self.adaln(t_emb)  # (B, 2N)

        def mod(i: int) -> Tensor:
            part = T.slice_axis(mods, 1, i * dim, (i + 1) * dim)
            return T.expand(T.reshape(part, (b, 1, 1, dim)), x.shape)

        normed = T.layer_norm(x, axis=-1)
        normed = T.add(T.mul(normed, T.add(mod(0), 1.0)), mod(1))
        return self.proj(normed)

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {
            **self.adaln.named(f"{prefix}.adaln"),
            **self.proj.named(f"{prefix}.proj"),
        }


def _query_mask(kind: str, cfg: ModelConfig, groups: int, length: int,
                batch_size: int) -> np.ndarray:
    """1 where a token belongs to a prediction frame, else 0; (G, L, 1)."""
    if kind == "st":
        frame = np.arange(length) % cfg.frames  # token l sits at frame l % F
        mask = (frame >= cfg.frames_cond).astype(np.float64)[None, :, None]
    elif kind == "s":
        frame = np.arange(groups) % cfg.frames  # group g = b*F + f
        mask = (frame >= cfg.frames_cond).astype(np.float64)[:, None, None]
    else:  # "t": tokens along the frame axis
        frame = np.arange(length)
        mask = (frame >= cfg.frames_cond).astype(np.float64)[None, :, None]
    return np.ascontiguousarray(np.broadcast_to(mask, (groups, length, 1)))


class DTCAModel:
    """The complete denoiser ``eps_theta``.

    Calling the model with a noised prediction :class:`TokenBatch`, a
    condition :class:`TokenBatch` (both raw patch tokens), and per-sample
    timesteps returns the predicted noise as pixel frames
    ``(B, frames_pred, H, W)``.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator,
                 dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        p2 = cfg.patch * cfg.patch
        self.embed = Linear(rng, p2, cfg.embed_dim, dtype=dtype)
        self.time = TimestepEmbedder(rng, cfg.embed_dim, dtype=dtype)
        self.global_cond = (
            Linear(rng, cfg.embed_dim, cfg.embed_dim, dtype=dtype)
            if cfg.causal
            else None
        )
        self.stages = variant_reshape(cfg.variant, cfg.channels, cfg.frames)
        self.blocks = [
            [DTCAStage(rng, cfg, dtype=dtype) for _ in self.stages]
            for _ in range(cfg.depth)
        ]
        self.final = FinalLayer(rng, cfg, dtype=dtype)
        self.positions: PositionTables = build_position_tables(
            cfg.channels, cfg.frames, cfg.embed_dim
        )

    # -- parameter plumbing -------------------------------------------------

    def named_parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        params.update(self.embed.named("embed"))
        params.update(self.time.named("time"))
        if self.global_cond is not None:
            params.update(self.global_cond.named("global_cond"))
        for i, block in enumerate(self.blocks):
            for j, stage in enumerate(block):
                params.update(stage.named(f"blocks.{i}.stages.{j}"))
        params.update(self.final.named("final"))
        return params

    def parameter_count(self) -> int:
        return sum(p.size for p in self.named_parameters().values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.named_parameters().items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(arrays)
        extra = set(arrays) - set(params)
        if missing or extra:
            raise ParameterError(
                f"parameter set mismatch; missing={sorted(missing)[:4]} "
                f"extra={sorted(extra)[:4]}"
            )
        for name, tensor in params.items():
            arr = np.asarray(arrays[name], dtype=self.dtype)
            if arr.shape != tensor.shape:
                raise DimensionError(
                    f"parameter {name}: checkpoint shape {arr.shape} != "
                    f"model shape {tensor.shape}"
                )
            tensor.data = arr.copy()

    def set_capture_attention(self, enabled: bool) -> None:
        for block in self.blocks:
            for stage in block:
                stage.attn.capture = enabled
                if stage.cross is not None:
                    stage.cross.capture = enabled

    # -- forward ------------------------------------------------------------

    def _process_condition(self, cond_emb: TokenBatch) -> Tensor:
        tagged = add_positions(cond_emb, self.positions)
        shifted = ctbs(tagged.tokens, max(self.cfg.shift, 1))
        flat = T.rearrange(shifted, "m c f n -> m (c f) n")
        return global_condition_embed(
            flat, self.global_cond.weight, self.global_cond.bias
        )

    def __call__(self, noised: TokenBatch, cond: TokenBatch, t) -> Tensor:
        cfg = self.cfg
        if noised.frames != cfg.frames_pred or cond.frames != cfg.frames_cond:
            raise DimensionError(
                f"expected {cfg.frames_cond}+{cfg.frames_pred} frames, got "
                f"{cond.frames}+{noised.frames}"
            )
        batch = noised.tokens.shape[0]
        t_arr = np.broadcast_to(np.asarray(t, dtype=np.int64), (batch,))

        cond_emb = cond.with_tokens(
            embed_tokens(cond.tokens, self.embed.weight, self.embed.bias)
        )
        noised_emb = noised.with_tokens(
            embed_tokens(noised.tokens, self.embed.weight, self.embed.bias)
        )
        stream = add_positions(assemble_input(cond_emb, noised_emb), self.positions)
        x = stream.tokens

        cond_kv = self._process_condition(cond_emb) if cfg.causal else None
        t_emb = self.time(t_arr)  # (B, N)

        for block in self.blocks:
            for stage_obj, reshaper in zip(block, self.stages):
                g = reshaper.apply(x)
                groups, length, _ = g.shape
                rep = groups // batch
                t_g = T.reshape(
                    T.expand(
                        T.reshape(t_emb, (batch, 1, cfg.embed_dim)),
                        (batch, rep, cfg.embed_dim),
                    ),
                    (groups, cfg.embed_dim),
                )
                mask = None
                if cfg.causal and cfg.query_scope == "prediction_only":
                    mask = _query_mask(reshaper.kind, cfg, groups, length, batch)
                g = stage_obj(g, t_g, cond_kv, batch, mask)
                x = reshaper.invert(g)

        out = self.final(x, t_emb)  # (B, C, F, p*p)
        pixels = unpatchify(out, cfg.patch, cfg.height, cfg.width)
        return T.slice_axis(pixels, 1, cfg.frames_cond, cfg.frames)


# ---------------------------------------------------------------------------
# checkpoint serialization
# ---------------------------------------------------------------------------

def _read_exact(fh, count: int, what: str) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise TruncatedFileError(
            f"{what}: expected {count} bytes, got {len(data)}"
        )
    return data


def save_checkpoint(path, arrays: dict[str, np.ndarray],
                    config: dict[str, str]) -> None:
    """Write a checkpoint: magic, version, config text, parameter records."""
    config_text = "".join(f"{k}={config[k]}\n" for k in sorted(config))
    blob = config_text.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name, arr in arrays.items():
            data = np.ascontiguousarray(arr, dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<Q", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<Q", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}Q", *data.shape))
            fh.write(data.tobytes())


def load_checkpoint(path) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    """Read a checkpoint back; exact inverse of :func:`save_checkpoint`."""
    config: dict[str, str] = {}
    arrays: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise BadMagicError(
                f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}"
            )
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise BadVersionError(f"{path}: unsupported version {version}")
        (cfg_len,) = struct.unpack("<Q", _read_exact(fh, 8, "config length"))
        for line in _read_exact(fh, cfg_len, "config block").decode("utf-8").splitlines():
            if line:
                key, _, value = line.partition("=")
                config[key] = value
        while True:
            head = fh.read(8)
            if not head:
                break
            if len(head) != 8:
                raise TruncatedFileError(
                    f"record header: expected 8 bytes, got {len(head)}"
                )
            (name_len,) = struct.unpack("<Q", head)
            name = _read_exact(fh, name_len, "record name").decode("utf-8")
            (rank,) = struct.unpack("<Q", _read_exact(fh, 8, "record rank"))
            dims = struct.unpack(
                f"<{rank}Q", _read_exact(fh, 8 * rank, "record dims")
            )
            count = int(np.prod(dims)) if rank else 1
            raw = _read_exact(fh, 4 * count, f"record data for {name}")
            arrays[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
    return config, arrays
