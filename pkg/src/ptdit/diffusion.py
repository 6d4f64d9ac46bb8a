"""Noise schedule, v-prediction objective, weight EMA and guided DDIM sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ConditioningInput
from .numerics import Module, Tensor, clip_grad_norm, no_grad


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass
class NoiseSchedule:
    """Cumulative signal fractions alpha_bar[t], t in [0, T)."""

    alpha_bar: np.ndarray

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        if ab.ndim != 1 or ab.size == 0:
            raise ValueError("alpha_bar must be a non-empty 1-d sequence")
        if np.any(ab <= 0) or np.any(ab > 1):
            raise ValueError("alpha_bar must lie in (0, 1]")
        self.alpha_bar = ab

    @classmethod
    def cosine(cls, T: int = 1000, s: float = 0.008, max_beta: float = 0.999) -> NoiseSchedule:
        def f(u):
            return np.cos((u / T + s) / (1 + s) * np.pi / 2) ** 2

        u = np.arange(T + 1, dtype=np.float64)
        betas = np.minimum(1.0 - f(u[1:]) / f(u[:-1]), max_beta)
        return cls(np.cumprod(1.0 - betas))

    @property
    def T(self) -> int:
        return self.alpha_bar.size

    @property
    def alpha(self) -> np.ndarray:
        return np.sqrt(self.alpha_bar)

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(1.0 - self.alpha_bar)

    def coefficients(self, t, ndim: int) -> tuple[np.ndarray, np.ndarray]:
        """alpha_t, sigma_t shaped to broadcast against a [B, ...] array of rank ndim."""
        t = np.asarray(t)
        if np.any(t < 0) or np.any(t >= self.T):
            raise IndexError(f"timestep out of range [0, {self.T})")
        shape = t.shape + (1,) * (ndim - t.ndim)
        return self.alpha[t].reshape(shape), self.sigma[t].reshape(shape)


def q_sample(x0: np.ndarray, t, noise: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    a, s = schedule.coefficients(t, np.ndim(x0))
    return a * x0 + s * noise


def v_target(x0: np.ndarray, noise: np.ndarray, t, schedule: NoiseSchedule) -> np.ndarray:
    a, s = schedule.coefficients(t, np.ndim(x0))
    return a * noise - s * x0


def predict_x0(x_t: np.ndarray, v: np.ndarray, t, schedule: NoiseSchedule) -> np.ndarray:
    a, s = schedule.coefficients(t, np.ndim(x_t))
    return a * x_t - s * v


def predict_noise(x_t: np.ndarray, v: np.ndarray, t, schedule: NoiseSchedule) -> np.ndarray:
    a, s = schedule.coefficients(t, np.ndim(x_t))
    return s * x_t + a * v


class EMA:
    """Exponential moving average of a module's parameters."""

    def __init__(self, model: Module, decay: float = 0.9999):
        self.decay = decay
        self.shadow = {name: p.data.copy() for name, p in model.named_parameters()}

    def update(self, model: Module) -> None:
        d = self.decay
        for name, p in model.named_parameters():
            s = self.shadow[name]
            s *= d
            s += (1.0 - d) * p.data

    def copy_to(self, model: Module) -> None:
        model.load_state_dict({k: v.copy() for k, v in self.shadow.items()})


@dataclass
class Batch:
    x0: np.ndarray
    cond: ConditioningInput


def training_step(
    model,
    batch: Batch,
    schedule: NoiseSchedule,
    optimizer,
    rng: np.random.Generator,
    ema: EMA | None = None,
    cond_dropout: float = 0.1,
    grad_clip: float = 0.0,
) -> float:
    """One v-prediction step: sample t and noise, regress v with MSE, update.

    Draw order from ``rng`` is fixed (t, noise, dropout mask) so a run is a pure
    function of the generator state.
    """
    x0 = batch.x0
    b = x0.shape[0]
    t = rng.integers(0, schedule.T, size=b)
    noise = rng.standard_normal(x0.shape).astype(x0.dtype)
    drop = rng.random(b) < cond_dropout
    x_t = q_sample(x0, t, noise, schedule).astype(x0.dtype)
    target = v_target(x0, noise, t, schedule).astype(x0.dtype)
    cond = batch.cond.with_timestep(t)
    if drop.any():
        cond = cond.dropped(drop)
    pred = model(Tensor(x_t), cond)
    diff = pred - target
    loss = (diff * diff).mean()
    value = float(loss.data)
    if not np.isfinite(value):
        raise NonFiniteLossError(f"non-finite loss {value}; t range [{t.min()}, {t.max()}]")
    optimizer.zero_grad()
    loss.backward()
    if grad_clip > 0:
        clip_grad_norm(optimizer.params, grad_clip)
    optimizer.step()
    if ema is not None:
        ema.update(model)
    return value


@dataclass
class SamplerConfig:
    steps: int = 50
    guidance_scale: float = 6.0
    seed: int = 0
    conditional_only: bool = False

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.guidance_scale < 0:
            raise ValueError("guidance_scale must be >= 0")


def sampling_timesteps(steps: int, T: int) -> np.ndarray:
    """Uniformly spaced timesteps from T-1 down to 0."""
    if steps > T:
        raise ValueError(f"cannot take {steps} steps on a {T}-step schedule")
    return np.round(np.linspace(T - 1, 0, steps)).astype(np.int64)


def ddim_step(x: np.ndarray, v: np.ndarray, t: int, t_next: int | None, schedule: NoiseSchedule) -> np.ndarray:
    """Deterministic (eta = 0) update in v-parameterization; t_next=None returns x0."""
    x0 = predict_x0(x, v, t, schedule)
    if t_next is None:
        return x0
    eps = predict_noise(x, v, t, schedule)
    return schedule.alpha[t_next] * x0 + schedule.sigma[t_next] * eps


def cfg_sample(
    model,
    cond: ConditioningInput,
    sampler: SamplerConfig,
    schedule: NoiseSchedule,
    shape: tuple,
    dtype=np.float64,
) -> np.ndarray:
    """Guided DDIM sampling: v = v_uncond + s * (v_cond - v_uncond) at each step."""
    if not sampler.conditional_only and not getattr(model, "supports_null_condition", False):
        raise ValueError("model has no unconditional path; guided sampling is unavailable")
    rng = np.random.default_rng(sampler.seed)
    x = rng.standard_normal(shape).astype(dtype)
    ts = sampling_timesteps(sampler.steps, schedule.T)
    s = sampler.guidance_scale
    with no_grad():
        for i, t in enumerate(ts):
            c = cond.with_timestep(t)
            v_c = model(Tensor(x), c).data
            if sampler.conditional_only:
                v = v_c
            else:
                v_u = model(Tensor(x), c.null()).data
                v = v_u + s * (v_c - v_u)
            t_next = int(ts[i + 1]) if i + 1 < len(ts) else None
            x = ddim_step(x, v, int(t), t_next, schedule).astype(dtype)
    return x
