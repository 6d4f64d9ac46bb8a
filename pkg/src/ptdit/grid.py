"""Token-grid geometry shared by the proxy and window attention modules."""

from __future__ import annotations

from dataclasses import dataclass

from .numerics import Tensor


class ConfigError(ValueError):
    """Invalid model geometry or configuration."""


@dataclass(frozen=True)
class CompressionRatio:
    """Window extents along frame, height and width."""

    p_f: int = 1
    p_h: int = 2
    p_w: int = 2

    def __post_init__(self):
        for axis, v in zip("fhw", self.as_tuple()):
            if int(v) != v or v < 1:
                raise ConfigError(f"compression ratio p_{axis} must be a positive integer, got {v}")

    @property
    def volume(self) -> int:
        return self.p_f * self.p_h * self.p_w

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.p_f, self.p_h, self.p_w)

    @property
    def shift(self) -> tuple[int, int, int]:
        return (self.p_f // 2, self.p_h // 2, self.p_w // 2)

    def check(self, f: int, h: int, w: int) -> None:
        for axis, n, p in zip("fhw", (f, h, w), self.as_tuple()):
            if n % p:
                raise ConfigError(
                    f"extent {axis}={n} is not divisible by compression ratio p_{axis}={p}"
                )

    def __str__(self) -> str:
        return f"({self.p_f},{self.p_h},{self.p_w})"


@dataclass
class LatentGrid:
    """Tokens with explicit geometry, shape [B, f, h, w, D]."""

    tokens: Tensor

    def __post_init__(self):
        if self.tokens.ndim != 5:
            raise ConfigError(f"LatentGrid needs [B, f, h, w, D] tokens, got {self.tokens.shape}")

    @property
    def batch(self) -> int:
        return self.tokens.shape[0]

    @property
    def geometry(self) -> tuple[int, int, int]:
        return tuple(self.tokens.shape[1:4])

    @property
    def dim(self) -> int:
        return self.tokens.shape[-1]

    @property
    def num_tokens(self) -> int:
        f, h, w = self.geometry
        return f * h * w

    def flatten(self) -> Tensor:
        return self.tokens.reshape(self.batch, self.num_tokens, self.dim)

    @classmethod
    def from_sequence(cls, seq: Tensor, f: int, h: int, w: int) -> LatentGrid:
        b, n, d = seq.shape
        if n != f * h * w:
            raise ConfigError(f"sequence of {n} tokens cannot form a {f}x{h}x{w} grid")
        return cls(seq.reshape(b, f, h, w, d))


def partition_windows(x: Tensor, ratio: CompressionRatio) -> Tensor:
    """[B, f, h, w, D] -> [B, f/p_f, h/p_h, w/p_w, p, D], window-major.

    Inside a window tokens are ordered (frame, row, column), so index 0 is the
    top-left token of the earliest frame.
    """
    b, f, h, w, d = x.shape
    ratio.check(f, h, w)
    pf, ph, pw = ratio.as_tuple()
    y = x.reshape(b, f // pf, pf, h // ph, ph, w // pw, pw, d)
    y = y.transpose(0, 1, 3, 5, 2, 4, 6, 7)
    return y.reshape(b, f // pf, h // ph, w // pw, pf * ph * pw, d)


def merge_windows(y: Tensor, ratio: CompressionRatio) -> Tensor:
    """Inverse of :func:`partition_windows`."""
    b, nf, nh, nw, p, d = y.shape
    pf, ph, pw = ratio.as_tuple()
    if p != ratio.volume:
        raise ConfigError(f"window holds {p} tokens, ratio {ratio} expects {ratio.volume}")
    x = y.reshape(b, nf, nh, nw, pf, ph, pw, d)
    x = x.transpose(0, 1, 4, 2, 5, 3, 6, 7)
    return x.reshape(b, nf * pf, nh * ph, nw * pw, d)
