"""Texture complement: window attention then shifted-window attention, each residual."""

from __future__ import annotations

from dataclasses import dataclass

from .attention import Attention, AttentionConfig
from .grid import CompressionRatio, LatentGrid, merge_windows, partition_windows
from .numerics import Init, Module, Tensor, flop_scope


@dataclass
class WindowPartition:
    """Non-overlapping windows as a batch of short sequences, [B * n_windows, p, D]."""

    windows: Tensor
    grid_windows: tuple[int, int, int, int]  # (B, f/p_f, h/p_h, w/p_w)
    ratio: CompressionRatio
    origin_shift: tuple[int, int, int] = (0, 0, 0)

    @classmethod
    def of(cls, x: Tensor, ratio: CompressionRatio, shift=(0, 0, 0)) -> WindowPartition:
        if any(shift):
            x = x.roll(tuple(-s for s in shift), (1, 2, 3))
        w = partition_windows(x, ratio)
        b, nf, nh, nw, p, d = w.shape
        return cls(w.reshape(b * nf * nh * nw, p, d), (b, nf, nh, nw), ratio, tuple(shift))

    def unpartition(self, windows: Tensor | None = None) -> Tensor:
        w = self.windows if windows is None else windows
        b, nf, nh, nw = self.grid_windows
        x = merge_windows(w.reshape(b, nf, nh, nw, *w.shape[-2:]), self.ratio)
        if any(self.origin_shift):
            x = x.roll(self.origin_shift, (1, 2, 3))
        return x


class WindowAttention(Module):
    """Self-attention restricted to windows; with ``shifted`` the grid is cyclically
    rolled by half a window first and rolled back after. No mask over the wrap seam.

    Returns the attention update only (no residual).
    """

    def __init__(self, dim: int, heads: int, ratio: CompressionRatio, shifted: bool = False, out_init: Init = Init()):
        self.ratio = ratio
        self.shifted = shifted
        self.attn = Attention(AttentionConfig(dim, heads), site="tcm_swsa" if shifted else "tcm_wsa", out_init=out_init)

    def forward(self, x: Tensor) -> Tensor:
        shift = self.ratio.shift if self.shifted else (0, 0, 0)
        part = WindowPartition.of(x, self.ratio, shift)
        with flop_scope(self.attn.site):
            out = self.attn(part.windows)
        return part.unpartition(out)


class TCM(Module):
    def __init__(self, dim: int, heads: int, ratio: CompressionRatio, swsa: bool = True, out_init: Init = Init()):
        self.ratio = ratio
        self.wsa = WindowAttention(dim, heads, ratio, shifted=False, out_init=out_init)
        self.swsa = WindowAttention(dim, heads, ratio, shifted=True, out_init=out_init) if swsa else None

    def delta(self, x: Tensor) -> Tensor:
        """forward(x) - x, computed without the subtraction."""
        a = self.wsa(x)
        if self.swsa is None:
            return a
        return a + self.swsa(x + a)

    def forward(self, grid: LatentGrid) -> LatentGrid:
        x = grid.tokens
        z_hat = x + self.wsa(x)
        if self.swsa is None:
            return LatentGrid(z_hat)
        return LatentGrid(z_hat + self.swsa(z_hat))


def window_attention(grid: LatentGrid, module: WindowAttention) -> LatentGrid:
    return LatentGrid(grid.tokens + module(grid.tokens))


def shift_window_attention(grid: LatentGrid, module: WindowAttention) -> LatentGrid:
    return LatentGrid(grid.tokens + module(grid.tokens))
