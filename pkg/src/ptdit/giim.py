"""Global information interaction: proxy tokens, proxy self-attention, injection.

A window of p_f x p_h x p_w latent tokens is summarized by one proxy token.
Proxies attend to each other, and the result is pushed back into every latent
token through one of three injection routes. The injected branch passes a
zero-initialized linear map before the residual add, so the module is exactly
the identity until that map is trained.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import Attention, AttentionConfig
from .grid import CompressionRatio, ConfigError, LatentGrid, merge_windows, partition_windows
from .numerics import ZEROS, Linear, Module, Tensor, flop_scope, layer_norm, matmul

PROXY_VARIANTS = ("average", "top_left", "random")
INJECTION_VARIANTS = ("cross_attention", "interpolate", "linear")


@dataclass(frozen=True)
class ProxyStrategy:
    variant: str = "average"
    seed: int = 0

    def __post_init__(self):
        if self.variant not in PROXY_VARIANTS:
            raise ConfigError(f"unknown proxy strategy {self.variant!r}; choose from {PROXY_VARIANTS}")


@dataclass
class ProxyTokens:
    tokens: Tensor  # [B, f/p_f, h/p_h, w/p_w, D]

    @property
    def count(self) -> int:
        return int(np.prod(self.tokens.shape[1:4]))


def extract_proxies(
    grid: LatentGrid,
    ratio: CompressionRatio,
    strategy: ProxyStrategy = ProxyStrategy(),
    rng: np.random.Generator | None = None,
) -> ProxyTokens:
    windows = partition_windows(grid.tokens, ratio)
    if strategy.variant == "average":
        return ProxyTokens(windows.mean(axis=-2))
    if strategy.variant == "top_left":
        return ProxyTokens(windows[:, :, :, :, 0, :])
    if rng is None:
        rng = np.random.default_rng(strategy.seed)
    nf, nh, nw = windows.shape[1:4]
    pick = rng.integers(0, ratio.volume, size=(nf, nh, nw))
    fi, hi, wi = np.meshgrid(np.arange(nf), np.arange(nh), np.arange(nw), indexing="ij")
    return ProxyTokens(windows[:, fi, hi, wi, pick, :])


def _interp_matrix(n_in: int, n_out: int, align_corners: bool) -> np.ndarray:
    m = np.zeros((n_out, n_in))
    if n_in == 1:
        m[:, 0] = 1.0
        return m
    i = np.arange(n_out, dtype=np.float64)
    if align_corners:
        src = i * (n_in - 1) / max(n_out - 1, 1)
    else:
        src = np.clip((i + 0.5) * n_in / n_out - 0.5, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    np.add.at(m, (np.arange(n_out), lo), 1.0 - frac)
    np.add.at(m, (np.arange(n_out), hi), frac)
    return m


def _nearest_matrix(n_in: int, n_out: int) -> np.ndarray:
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), np.arange(n_out) * n_in // n_out] = 1.0
    return m


def _apply_along(x: Tensor, m: np.ndarray, axis: int) -> Tensor:
    y = x.swapaxes(axis, -1)
    y = matmul(y.reshape(-1, 1, y.shape[-1]), Tensor(m.T.astype(x.dtype)), kind="interp")
    return y.reshape(*x.swapaxes(axis, -1).shape[:-1], m.shape[0]).swapaxes(axis, -1)


def interpolate_injection(
    proxies: ProxyTokens | Tensor,
    target: tuple[int, int, int],
    align_corners: bool = False,
) -> Tensor:
    """Upsample proxies to the latent grid.

    Height and width use linear interpolation; frames take their window's proxy
    (nearest). With ``align_corners=False`` window centers land on window
    centers and edges clamp.
    """
    x = proxies.tokens if isinstance(proxies, ProxyTokens) else proxies
    src = x.shape[1:4]
    for axis, n, s in zip("fhw", target, src):
        if n % s:
            raise ConfigError(f"target {axis}={n} is not a multiple of proxy extent {s}")
    f, h, w = target
    if f != src[0]:
        x = _apply_along(x, _nearest_matrix(src[0], f), 1)
    if h != src[1]:
        x = _apply_along(x, _interp_matrix(src[1], h, align_corners), 2)
    if w != src[2]:
        x = _apply_along(x, _interp_matrix(src[2], w, align_corners), 3)
    return x


class GIIM(Module):
    """Proxy extraction -> proxy self-attention -> injection, residual with a zero-init gate.

    For cross-attention injection the gate is the cross-attention's own output
    projection; the other two routes get a separate D -> D gate.
    """

    def __init__(
        self,
        dim: int,
        heads: int,
        ratio: CompressionRatio,
        proxy: ProxyStrategy = ProxyStrategy(),
        injection: str = "cross_attention",
        norm: bool = True,
        align_corners: bool = False,
    ):
        if injection not in INJECTION_VARIANTS:
            raise ConfigError(f"unknown injection {injection!r}; choose from {INJECTION_VARIANTS}")
        cfg = AttentionConfig(dim, heads)
        self.ratio = ratio
        self.proxy = proxy
        self.injection = injection
        self.norm = norm
        self.align_corners = align_corners
        self.sa = Attention(cfg, site="giim_sa")
        if injection == "cross_attention":
            self.cs = Attention(cfg, site="giim_cs", out_init=ZEROS)
        else:
            if injection == "linear":
                self.expand = Linear(dim, ratio.volume * dim)
            self.gate = Linear(dim, dim, init=ZEROS)
        self._rng = np.random.default_rng(proxy.seed)

    def reset_rng(self) -> None:
        self._rng = np.random.default_rng(self.proxy.seed)

    @property
    def gate_weight(self):
        return self.cs.o.weight if self.injection == "cross_attention" else self.gate.weight

    def proxies(self, grid: LatentGrid) -> Tensor:
        """Proxy tokens after self-attention, [B, f', h', w', D]."""
        return self._proxies(self._normed(grid))

    def _proxies(self, x: Tensor) -> Tensor:
        p = extract_proxies(LatentGrid(x), self.ratio, self.proxy, self._rng).tokens
        b, nf, nh, nw, d = p.shape
        with flop_scope("giim_sa"):
            p = self.sa(p.reshape(b, nf * nh * nw, d))
        return p.reshape(b, nf, nh, nw, d)

    def branch(self, grid: LatentGrid) -> Tensor:
        """The gated injected update, same shape as ``grid.tokens``."""
        x = self._normed(grid)
        b, f, h, w, d = x.shape
        p = self._proxies(x)
        if self.injection == "cross_attention":
            with flop_scope("giim_cs"):
                out = self.cs(x.reshape(b, f * h * w, d), p.reshape(b, -1, d))
            return out.reshape(b, f, h, w, d)
        with flop_scope("giim_inject"):
            if self.injection == "interpolate":
                broadcast = interpolate_injection(p, (f, h, w), self.align_corners)
            else:
                expanded = self.expand(p).reshape(*p.shape[:4], self.ratio.volume, d)
                broadcast = merge_windows(expanded, self.ratio)
            return self.gate(broadcast)

    def forward(self, grid: LatentGrid) -> LatentGrid:
        return LatentGrid(grid.tokens + self.branch(grid))

    def _normed(self, grid: LatentGrid) -> Tensor:
        return layer_norm(grid.tokens) if self.norm else grid.tokens


def giim_forward(grid: LatentGrid, module: GIIM) -> LatentGrid:
    return module(grid)
