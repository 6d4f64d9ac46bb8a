"""PT-Block assembly and the full proxy-tokenized diffusion transformer.

Block order: GIIM -> TCM -> conditioning attention -> MLP, each residual.

Conditioning modes
------------------
``class``  DiT-style: c = t_emb + label_emb drives a per-block adaLN that emits
           shift/scale/gate for TCM, conditioning attention and MLP. The
           conditioning attention reads a two-token context, the label and
           timestep embeddings (with one token the softmax is constant and
           the query/key maps would never train).
``text``   PixArt-style: one shared timestep projection plus a per-block
           learned table give shift/scale/gate for TCM and MLP; captions enter
           through ungated cross-attention whose output projection starts at
           zero. ``text_adaln=False`` drops the modulation and instead appends
           the timestep embedding to the caption context.

All gates and the final projection start at zero, so a fresh model returns
exactly zero and every block is the identity.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field

import numpy as np

from .attention import Attention, AttentionConfig
from .giim import GIIM, INJECTION_VARIANTS, ProxyStrategy
from .grid import CompressionRatio, ConfigError, LatentGrid
from .numerics import (
    MLP,
    ZEROS,
    Init,
    Linear,
    Module,
    Parameter,
    Tensor,
    concat,
    flop_scope,
    layer_norm,
)
from .tcm import TCM

# pixel resolution -> window per (frame, height, width); keeps the window count fixed
RATIO_SCHEDULE = {256: (1, 2, 2), 512: (1, 4, 4), 1024: (1, 8, 8), 2048: (1, 16, 16)}
VIDEO_FRAME_RATIO = 4
TEXT_TOKEN_LEN = 120
FREQ_DIM = 256


def ratio_for_resolution(resolution: int, video: bool = False) -> CompressionRatio:
    if resolution not in RATIO_SCHEDULE:
        raise ConfigError(f"no compression ratio scheduled for resolution {resolution}; known: {sorted(RATIO_SCHEDULE)}")
    _, ph, pw = RATIO_SCHEDULE[resolution]
    return CompressionRatio(VIDEO_FRAME_RATIO if video else 1, ph, pw)


@dataclass
class ModelConfig:
    name: str = "tiny"
    layers: int = 2
    hidden_dim: int = 64
    heads: int = 4
    patch_size: int = 2
    in_channels: int = 1
    input_size: int = 8
    frames: int = 1
    ratio: tuple[int, int, int] | None = (1, 2, 2)
    resolution: int | None = None
    proxy_strategy: str = "average"
    proxy_seed: int = 0
    injection: str = "cross_attention"
    giim_enabled: bool = True
    tcm_enabled: bool = True
    swsa_enabled: bool = True
    conditioning: str = "class"
    num_classes: int = 10
    text_dim: int = 32
    text_len: int = TEXT_TOKEN_LEN
    text_adaln: bool = True
    null_condition: bool = True
    mlp_ratio: int = 4

    def __post_init__(self):
        if self.ratio is not None:
            self.ratio = tuple(int(v) for v in self.ratio)
        self.validate()

    def validate(self) -> None:
        if self.hidden_dim % self.heads:
            raise ConfigError(f"heads ({self.heads}) must divide hidden_dim ({self.hidden_dim})")
        if self.conditioning not in ("class", "text"):
            raise ConfigError(f"conditioning must be 'class' or 'text', got {self.conditioning!r}")
        if self.injection not in INJECTION_VARIANTS:
            raise ConfigError(f"unknown injection {self.injection!r}")
        ProxyStrategy(self.proxy_strategy, self.proxy_seed)
        if self.input_size % self.patch_size:
            raise ConfigError(f"input_size {self.input_size} not divisible by patch_size {self.patch_size}")
        if self.ratio is None and self.resolution is None:
            raise ConfigError("either ratio or resolution must be set")

    @property
    def out_channels(self) -> int:
        return self.in_channels

    @property
    def grid_geometry(self) -> tuple[int, int, int]:
        side = self.input_size // self.patch_size
        return (self.frames, side, side)

    def compression_ratio(self) -> CompressionRatio:
        if self.ratio is not None:
            return CompressionRatio(*self.ratio)
        return ratio_for_resolution(self.resolution, video=self.frames > 1)

    def replace(self, **changes) -> ModelConfig:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if d["ratio"] is not None:
            d["ratio"] = list(d["ratio"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def _large_preset(name, layers, dim, heads, conditioning):
    return ModelConfig(
        name=name,
        layers=layers,
        hidden_dim=dim,
        heads=heads,
        patch_size=2,
        in_channels=4,
        input_size=32,
        ratio=None,
        resolution=256,
        conditioning=conditioning,
        num_classes=1000,
        text_dim=4096,
        text_len=TEXT_TOKEN_LEN,
    )


PRESETS = {
    "s_class": _large_preset("s_class", 10, 288, 6, "class"),
    "b": _large_preset("b", 12, 640, 10, "text"),
    "l": _large_preset("l", 28, 864, 12, "text"),
    "xl": _large_preset("xl", 28, 1152, 16, "text"),
    "h": _large_preset("h", 30, 1440, 20, "text"),
    "tiny": ModelConfig(),
}

# reported sizes in millions
REFERENCE_PARAMS_M = {"s_class": 32, "b": 144, "l": 605, "xl": 1142, "h": 1795}


def preset(name: str, **overrides) -> ModelConfig:
    key = name.lower().replace("-", "_").replace("/", "_")
    if key not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[key].replace(**overrides)


# ---------------------------------------------------------------------------
# conditioning
# ---------------------------------------------------------------------------


@dataclass
class ConditioningInput:
    """Timesteps plus exactly one of class labels / text embeddings.

    ``drop`` marks samples whose condition is replaced by the learned null
    condition (classifier-free guidance).
    """

    timestep: np.ndarray | None = None
    class_label: np.ndarray | None = None
    text_tokens: np.ndarray | None = None
    drop: np.ndarray | None = None

    def __post_init__(self):
        if (self.class_label is None) == (self.text_tokens is None):
            raise ConfigError("exactly one of class_label / text_tokens must be given")
        if self.class_label is not None:
            self.class_label = np.asarray(self.class_label, dtype=np.int64).reshape(-1)
        if self.timestep is not None:
            self.timestep = np.asarray(self.timestep, dtype=np.int64).reshape(-1)

    @property
    def mode(self) -> str:
        return "class" if self.class_label is not None else "text"

    @property
    def batch(self) -> int:
        return len(self.class_label) if self.class_label is not None else self.text_tokens.shape[0]

    def with_timestep(self, t) -> ConditioningInput:
        t = np.broadcast_to(np.asarray(t, dtype=np.int64), (self.batch,)).copy()
        return dataclasses.replace(self, timestep=t)

    def dropped(self, mask) -> ConditioningInput:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), (self.batch,))
        prev = np.zeros(self.batch, bool) if self.drop is None else self.drop
        return dataclasses.replace(self, drop=prev | mask)

    def null(self) -> ConditioningInput:
        return self.dropped(True)

    def repeat(self, n: int) -> ConditioningInput:
        def rep(a):
            return None if a is None else np.repeat(a, n, axis=0)

        return ConditioningInput(rep(self.timestep), rep(self.class_label), rep(self.text_tokens), rep(self.drop))


class TextStub:
    """Deterministic stand-in for a frozen text encoder.

    Words hash to rows of a seeded embedding table; output is padded or
    truncated to ``token_len``. Holds no trainable parameters.
    """

    def __init__(self, text_dim: int, token_len: int = TEXT_TOKEN_LEN, vocab: int = 4096, seed: int = 0):
        self.token_len = token_len
        self.vocab = vocab
        self.table = np.random.default_rng(seed).standard_normal((vocab, text_dim)) / np.sqrt(text_dim)

    def token_ids(self, prompt: str) -> list[int]:
        ids = [int.from_bytes(hashlib.sha1(w.encode()).digest()[:4], "little") % self.vocab for w in prompt.lower().split()]
        return ids[: self.token_len]

    def encode(self, prompts: list[str]) -> np.ndarray:
        out = np.zeros((len(prompts), self.token_len, self.table.shape[1]))
        for i, p in enumerate(prompts):
            ids = self.token_ids(p)
            out[i, : len(ids)] = self.table[ids]
        return out


# ---------------------------------------------------------------------------
# embeddings
# ---------------------------------------------------------------------------


def timestep_embedding(t, dim: int = FREQ_DIM, max_period: float = 10000.0) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half) / half)
    args = t[:, None] * freqs[None]
    emb = np.concatenate([np.cos(args), np.sin(args)], axis=-1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros_like(emb[:, :1])], axis=-1)
    return emb


def _sincos_1d(positions: np.ndarray, channels: int) -> np.ndarray:
    half = channels // 2
    omega = 1.0 / 10000 ** (np.arange(half) / max(half, 1))
    args = positions[:, None] * omega[None]
    return np.concatenate([np.sin(args), np.cos(args)], axis=-1)


def positional_table(f: int, h: int, w: int, dim: int) -> np.ndarray:
    """Factorized 3D sin/cos encoding, shape [f, h, w, dim].

    Channels split as [frame | height | width | zero pad], each axis taking
    2 * (dim // 6) channels laid out as [sin | cos].
    """
    c = 2 * (dim // 6)
    out = np.zeros((f, h, w, dim))
    if c == 0:
        return out
    ef = _sincos_1d(np.arange(f, dtype=np.float64), c)
    eh = _sincos_1d(np.arange(h, dtype=np.float64), c)
    ew = _sincos_1d(np.arange(w, dtype=np.float64), c)
    out[..., 0:c] = ef[:, None, None, :]
    out[..., c : 2 * c] = eh[None, :, None, :]
    out[..., 2 * c : 3 * c] = ew[None, None, :, :]
    return out


def positional_encoding(grid: LatentGrid) -> LatentGrid:
    f, h, w = grid.geometry
    pe = positional_table(f, h, w, grid.dim).astype(grid.tokens.dtype)
    return LatentGrid(grid.tokens + pe)


def patchify(latent: Tensor, p: int) -> Tensor:
    """[B, C, F, H, W] -> [B, F, H/p, W/p, C*p*p], features ordered (C, row, col)."""
    b, c, f, hh, ww = latent.shape
    if hh % p or ww % p:
        raise ConfigError(f"latent {hh}x{ww} is not divisible by patch size {p}")
    x = latent.reshape(b, c, f, hh // p, p, ww // p, p)
    x = x.transpose(0, 2, 3, 5, 1, 4, 6)
    return x.reshape(b, f, hh // p, ww // p, c * p * p)


def unpatchify(x: Tensor, p: int, channels: int) -> Tensor:
    b, f, h, w, _ = x.shape
    x = x.reshape(b, f, h, w, channels, p, p)
    x = x.transpose(0, 4, 1, 2, 5, 3, 6)
    return x.reshape(b, channels, f, h * p, w * p)


def patch_embed(latent: Tensor, patch_size: int, proj: Linear) -> LatentGrid:
    return LatentGrid(proj(patchify(latent, patch_size)))


class TimestepEmbedder(Module):
    def __init__(self, dim: int):
        self.fc1 = Linear(FREQ_DIM, dim)
        self.fc2 = Linear(dim, dim)

    def forward(self, t) -> Tensor:
        freq = Tensor(timestep_embedding(t))
        return self.fc2(self.fc1(freq).silu())


def modulate(x: Tensor, shift: Tensor, scale: Tensor) -> Tensor:
    return x * (1.0 + scale) + shift


def _chunks(mod: Tensor, n: int, lead: tuple) -> list[Tensor]:
    """Split [B, n*D] (or [B, n, D]) into n tensors shaped [B, *lead, D]."""
    b = mod.shape[0]
    d = mod.size // (b * n)
    m = mod.reshape(b, n, d)
    return [m[:, i, :].reshape(b, *lead, d) for i in range(n)]


# ---------------------------------------------------------------------------
# blocks
# ---------------------------------------------------------------------------


class PTBlock(Module):
    def __init__(self, cfg: ModelConfig, ratio: CompressionRatio):
        d, heads = cfg.hidden_dim, cfg.heads
        self.mode = cfg.conditioning
        self.text_adaln = cfg.text_adaln
        self.modulated = self.mode == "class" or cfg.text_adaln
        self.giim = (
            GIIM(d, heads, ratio, ProxyStrategy(cfg.proxy_strategy, cfg.proxy_seed), cfg.injection)
            if cfg.giim_enabled
            else None
        )
        # unmodulated sublayers get a zero-init output instead of a zero gate
        plain = Init() if self.modulated else ZEROS
        self.tcm = TCM(d, heads, ratio, swsa=cfg.swsa_enabled, out_init=plain) if cfg.tcm_enabled else None
        cond_init = plain if self.mode == "class" else ZEROS
        self.cond_attn = Attention(AttentionConfig(d, heads), site="cond", out_init=cond_init)
        self.mlp = MLP(d, cfg.mlp_ratio * d, out_init=plain)
        self.sublayers = ([] if self.tcm is None else ["tcm"]) + (["cond"] if self.mode == "class" else []) + ["mlp"]
        self.n_mod = 3 * len(self.sublayers)
        if self.mode == "class":
            self.ada = Linear(d, self.n_mod * d, init=ZEROS)
        elif self.text_adaln:
            self.table = Parameter((self.n_mod, d), ZEROS)

    def _modulation(self, c: Tensor) -> dict[str, tuple[Tensor, Tensor, Tensor]]:
        if not self.modulated:
            return {}
        with flop_scope("adaln"):
            if self.mode == "class":
                mod = self.ada(c.silu())
            else:
                mod = c.reshape(c.shape[0], self.n_mod, -1) + self.table
        parts = _chunks(mod, self.n_mod, (1, 1, 1))
        return {name: tuple(parts[3 * i : 3 * i + 3]) for i, name in enumerate(self.sublayers)}

    def _sub(self, x: Tensor, mods: dict, name: str, fn) -> Tensor:
        if name in mods:
            shift, scale, gate = mods[name]
            return x + gate * fn(modulate(layer_norm(x), shift, scale))
        return x + fn(layer_norm(x))

    def forward(self, x: Tensor, c: Tensor, context: Tensor) -> Tensor:
        """x: [B, f, h, w, D]; c: class-mode conditioning vector [B, D] or the
        shared text-mode timestep projection [B, 6D]; context: [B, L, D]."""
        b, f, h, w, d = x.shape
        mods = self._modulation(c)
        if self.giim is not None:
            x = x + self.giim.branch(LatentGrid(x))
        if self.tcm is not None:
            x = self._sub(x, mods, "tcm", self.tcm.delta)

        def cond(hid):
            with flop_scope("cond"):
                out = self.cond_attn(hid.reshape(b, f * h * w, d), context)
            return out.reshape(b, f, h, w, d)

        if self.mode == "class":
            x = self._sub(x, mods, "cond", cond)
        else:
            x = x + cond(x)
        with flop_scope("mlp"):
            x = self._sub(x, mods, "mlp", self.mlp)
        return x


class GlobalAttentionBlock(Module):
    """DiT-style reference block with global self-attention (adaLN-zero)."""

    def __init__(self, dim: int, heads: int, mlp_ratio: int = 4):
        self.attn = Attention(AttentionConfig(dim, heads), site="global_sa")
        self.mlp = MLP(dim, mlp_ratio * dim)
        self.ada = Linear(dim, 6 * dim, init=ZEROS)

    def forward(self, x: Tensor, c: Tensor) -> Tensor:
        b, n, d = x.shape
        sh1, sc1, g1, sh2, sc2, g2 = _chunks(self.ada(c.silu()), 6, (1,))
        with flop_scope("global_sa"):
            x = x + g1 * self.attn(modulate(layer_norm(x), sh1, sc1))
        with flop_scope("mlp"):
            x = x + g2 * self.mlp(modulate(layer_norm(x), sh2, sc2))
        return x


class FinalLayer(Module):
    def __init__(self, cfg: ModelConfig):
        d, p = cfg.hidden_dim, cfg.patch_size
        self.mode = cfg.conditioning
        if self.mode == "class":
            self.ada = Linear(d, 2 * d, init=ZEROS)
        else:
            self.table = Parameter((2, d), ZEROS)
        self.linear = Linear(d, p * p * cfg.out_channels, init=ZEROS)

    def forward(self, x: Tensor, c: Tensor) -> Tensor:
        if self.mode == "class":
            shift, scale = _chunks(self.ada(c.silu()), 2, (1, 1, 1))
        else:
            b, d = c.shape
            shift, scale = _chunks(self.table + c.reshape(b, 1, d), 2, (1, 1, 1))
        return self.linear(modulate(layer_norm(x), shift, scale))


class PTDiT(Module):
    """Patch embed -> 3D positional encoding -> PT-Blocks -> final norm + unpatch.

    Built unmaterialized; call :meth:`init_params` (or use :func:`build_model`).
    """

    def __init__(self, cfg: ModelConfig):
        cfg.validate()
        self.cfg = cfg
        d = cfg.hidden_dim
        self.ratio = cfg.compression_ratio()
        self.ratio.check(*cfg.grid_geometry)
        p = cfg.patch_size
        self.x_embed = Linear(cfg.in_channels * p * p, d)
        self.t_embed = TimestepEmbedder(d)
        if cfg.conditioning == "class":
            self.y_embed = Parameter((cfg.num_classes + int(cfg.null_condition), d))
        else:
            self.y_proj = MLP(cfg.text_dim, d, d_out=d)
            if cfg.null_condition:
                self.null_text = Parameter((cfg.text_len, cfg.text_dim), Init(std=1.0 / np.sqrt(cfg.text_dim)))
            if cfg.text_adaln:
                n_mod = 3 * (2 if cfg.tcm_enabled else 1)
                self.t_block = Linear(d, n_mod * d, init=ZEROS)
        self.blocks = [PTBlock(cfg, self.ratio) for _ in range(cfg.layers)]
        self.final = FinalLayer(cfg)
        self.record_inputs = False
        self.block_inputs: list[Tensor] = []

    @property
    def supports_null_condition(self) -> bool:
        return self.cfg.null_condition

    def _condition(self, cond: ConditioningInput, dtype):
        cfg = self.cfg
        if cond.mode != cfg.conditioning:
            raise ConfigError(f"model expects {cfg.conditioning} conditioning, got {cond.mode}")
        if cond.timestep is None:
            raise ConfigError("conditioning input carries no timestep")
        b = cond.batch
        drop = np.zeros(b, bool) if cond.drop is None else cond.drop
        if drop.any() and not cfg.null_condition:
            raise ConfigError("model was built without a null condition")
        t_emb = self.t_embed(cond.timestep)
        if cfg.conditioning == "class":
            labels = cond.class_label
            if labels.min() < 0 or labels.max() >= cfg.num_classes:
                raise ConfigError(f"class label out of range [0, {cfg.num_classes})")
            labels = np.where(drop, cfg.num_classes, labels)
            y = self.y_embed[labels]
            context = concat([y.reshape(b, 1, cfg.hidden_dim), t_emb.reshape(b, 1, cfg.hidden_dim)], axis=1)
            return t_emb + y, context
        tokens = np.asarray(cond.text_tokens, dtype=dtype)
        if tokens.shape[1:] != (cfg.text_len, cfg.text_dim):
            raise ConfigError(f"text tokens must be [B, {cfg.text_len}, {cfg.text_dim}], got {tokens.shape}")
        text = Tensor(tokens)
        if drop.any():
            m = drop.astype(dtype).reshape(b, 1, 1)
            text = text * (1.0 - m) + self.null_text * m
        context = self.y_proj(text)
        if cfg.text_adaln:
            return self.t_block(t_emb.silu()), context, t_emb
        context = concat([context, t_emb.reshape(b, 1, cfg.hidden_dim)], axis=1)
        return None, context, t_emb

    def embed(self, latent: Tensor) -> LatentGrid:
        with flop_scope("embed"):
            grid = patch_embed(latent, self.cfg.patch_size, self.x_embed)
        return positional_encoding(grid)

    def forward(self, latent, cond: ConditioningInput) -> Tensor:
        latent = latent if isinstance(latent, Tensor) else Tensor(latent)
        cfg = self.cfg
        b, c, f, hh, ww = latent.shape
        if c != cfg.in_channels:
            raise ConfigError(f"latent has {c} channels, model expects {cfg.in_channels}")
        x = self.embed(latent).tokens
        self.ratio.check(*x.shape[1:4])
        if cfg.conditioning == "class":
            block_c, context = self._condition(cond, latent.dtype)
            final_c = block_c
        else:
            block_c, context, final_c = self._condition(cond, latent.dtype)
        self.block_inputs = []
        for block in self.blocks:
            if self.record_inputs:
                self.block_inputs.append(x)
            x = block(x, block_c, context)
        with flop_scope("final"):
            out = self.final(x, final_c)
        return unpatchify(out, cfg.patch_size, cfg.out_channels)

    def hidden_states(self, latent, cond: ConditioningInput) -> list[Tensor]:
        """Token grids entering each block plus the last block's output."""
        self.record_inputs = True
        try:
            self.forward(latent, cond)
            states = list(self.block_inputs)
        finally:
            self.record_inputs = False
        return states


def build_model(cfg: ModelConfig, seed: int = 0, dtype=np.float64) -> PTDiT:
    return PTDiT(cfg).init_params(seed, dtype)


def count_parameters(cfg: ModelConfig) -> int:
    """Parameter count from shapes alone (nothing is allocated)."""
    return PTDiT(cfg).num_parameters()


@dataclass
class LayerInventory:
    """Structural summary of a model used to verify ablation wiring."""

    giim: list[bool] = field(default_factory=list)
    injection: list[str | None] = field(default_factory=list)
    proxy: list[str | None] = field(default_factory=list)
    tcm: list[bool] = field(default_factory=list)
    swsa: list[bool] = field(default_factory=list)
    ratio: tuple[int, int, int] = (1, 1, 1)
    modules: list[str] = field(default_factory=list)


def layer_inventory(model: PTDiT) -> LayerInventory:
    inv = LayerInventory(ratio=model.ratio.as_tuple())
    for blk in model.blocks:
        inv.giim.append(blk.giim is not None)
        inv.injection.append(None if blk.giim is None else blk.giim.injection)
        inv.proxy.append(None if blk.giim is None else blk.giim.proxy.variant)
        inv.tcm.append(blk.tcm is not None)
        inv.swsa.append(blk.tcm is not None and blk.tcm.swsa is not None)
    inv.modules = [f"{name}:{type(m).__name__}" for name, m in model.named_modules() if name]
    return inv
