"""Multi-head scaled dot-product attention (self and cross form)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import Init, Linear, Module, ShapeError, Tensor, matmul, softmax


@dataclass(frozen=True)
class AttentionConfig:
    dim: int
    heads: int
    capture_maps: bool = False

    def __post_init__(self):
        if self.dim <= 0 or self.heads <= 0 or self.dim % self.heads:
            raise ValueError(f"heads ({self.heads}) must divide dim ({self.dim})")

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads


@dataclass
class AttentionMapCapture:
    """Softmax weights recorded at one call site, shape [batch, heads, Nq, Nk]."""

    weights: np.ndarray
    site_label: str
    meta: dict = field(default_factory=dict)

    def save(self, path) -> None:
        np.savez(
            path,
            weights=self.weights.astype(np.float32),
            site_label=np.array(self.site_label),
            meta_keys=np.array(list(self.meta.keys()), dtype=str),
            meta_values=np.array([str(v) for v in self.meta.values()], dtype=str),
        )

    @classmethod
    def load(cls, path) -> AttentionMapCapture:
        with np.load(path) as z:
            meta = dict(zip(z["meta_keys"].tolist(), z["meta_values"].tolist()))
            return cls(z["weights"], str(z["site_label"]), meta)


class Attention(Module):
    """Q, K, V, O are independent biased linear maps; logits scale by 1/sqrt(head_dim)."""

    def __init__(self, cfg: AttentionConfig, site: str = "", out_init: Init = Init()):
        self.cfg = cfg
        d = cfg.dim
        self.q = Linear(d, d)
        self.k = Linear(d, d)
        self.v = Linear(d, d)
        self.o = Linear(d, d, init=out_init)
        self.site = site
        self.capture_maps = cfg.capture_maps
        self.captures: list[AttentionMapCapture] = []

    def forward(self, x: Tensor, context: Tensor | None = None) -> Tensor:
        kv = x if context is None else context
        d = self.cfg.dim
        if x.shape[-1] != d or kv.shape[-1] != d:
            raise ShapeError(
                f"attention width {d} does not match inputs {x.shape} / {kv.shape}"
            )
        if x.shape[:-2] != kv.shape[:-2]:
            raise ShapeError(f"batch extents differ: {x.shape[:-2]} vs {kv.shape[:-2]}")
        lead = x.shape[:-2]
        nq, nk = x.shape[-2], kv.shape[-2]
        if nk == 0:
            return Tensor(np.zeros(x.shape, dtype=x.dtype))
        h, hd = self.cfg.heads, self.cfg.head_dim
        x3 = x.reshape(-1, nq, d)
        kv3 = kv.reshape(-1, nk, d)
        b = x3.shape[0]
        q = self.q(x3).reshape(b, nq, h, hd).transpose(0, 2, 1, 3)
        k = self.k(kv3).reshape(b, nk, h, hd).transpose(0, 2, 3, 1)
        v = self.v(kv3).reshape(b, nk, h, hd).transpose(0, 2, 1, 3)
        logits = matmul(q, k, kind="attention") * (1.0 / np.sqrt(hd))
        weights = softmax(logits, axis=-1)
        if self.capture_maps:
            self.captures.append(
                AttentionMapCapture(weights.data.astype(np.float32), self.site)
            )
        out = matmul(weights, v, kind="attention")
        out = out.transpose(0, 2, 1, 3).reshape(*lead, nq, d)
        return self.o(out)


def self_attention(x: Tensor, attn: Attention) -> Tensor:
    return attn(x)


def cross_attention(q_src: Tensor, kv_src: Tensor, attn: Attention) -> Tensor:
    return attn(q_src, kv_src)
