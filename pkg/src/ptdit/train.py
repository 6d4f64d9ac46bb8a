"""Training loop with exact resume: model, EMA, optimizer moments, step and RNG state
all live in the checkpoint."""

from __future__ import annotations

import logging
import math
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig
from .diffusion import EMA, Batch, NoiseSchedule, training_step
from .model import ConditioningInput, PTDiT, TextStub, build_model
from .numerics import AdamW

log = logging.getLogger(__name__)


def lr_at(cfg: RunConfig, step: int) -> float:
    """Learning rate used for update number ``step + 1``."""
    t = cfg.train
    if step < t.warmup_steps:
        return t.lr * (step + 1) / t.warmup_steps
    span = t.steps - t.warmup_steps
    if t.lr_schedule == "cosine" and span > 0:
        frac = min(step - t.warmup_steps, span) / span
        return t.lr * 0.5 * (1.0 + math.cos(math.pi * frac))
    return t.lr


def format_log_line(step: int, loss: float, lr: float) -> str:
    return f"{step}\t{loss:.9g}\t{lr:.9g}\n"


def read_loss_log(path) -> list[tuple[int, float, float]]:
    rows = []
    for line in Path(path).read_text().splitlines():
        s, loss, lr = line.split("\t")
        rows.append((int(s), float(loss), float(lr)))
    return rows


def make_conditioning(model: PTDiT, labels: np.ndarray, seed: int = 0) -> ConditioningInput:
    """Class labels map straight through; text models get a stub caption per label."""
    cfg = model.cfg
    if cfg.conditioning == "class":
        return ConditioningInput(class_label=labels)
    stub = TextStub(cfg.text_dim, cfg.text_len, seed=seed)
    return ConditioningInput(text_tokens=stub.encode([f"class {int(k)}" for k in labels]))


class Trainer:
    def __init__(self, cfg: RunConfig, model: PTDiT | None = None):
        cfg.validate()
        self.cfg = cfg
        t = cfg.train
        self.dtype = np.dtype(t.dtype)
        self.model = model if model is not None else build_model(cfg.model_config(), seed=t.seed, dtype=self.dtype)
        self.schedule = NoiseSchedule.cosine(cfg.schedule.T)
        self.optimizer = AdamW(self.model.parameters(), lr=t.lr, weight_decay=t.weight_decay)
        self.ema = EMA(self.model, t.ema_decay)
        self.dataset = cfg.dataset()
        self.rng = np.random.default_rng([t.seed, 3])
        self.step = 0

    # -- state --------------------------------------------------------------

    def checkpoint(self) -> Checkpoint:
        names = [n for n, _ in self.model.named_parameters()]
        st = self.optimizer.state()
        optim = {f"m.{n}": a for n, a in zip(names, st["m"])}
        optim.update({f"v.{n}": a for n, a in zip(names, st["v"])})
        meta = {
            "step": self.step,
            "optim_step_count": st["step_count"],
            "rng_state": self.rng.bit_generator.state,
            "run_config": self.cfg.to_dict(),
        }
        return Checkpoint(self.model.cfg, self.model.state_dict(), dict(self.ema.shadow), optim, meta)

    @classmethod
    def from_checkpoint(cls, path, cfg: RunConfig | None = None) -> Trainer:
        ckpt = load_checkpoint(path)
        if cfg is None:
            cfg = RunConfig.from_dict(ckpt.meta["run_config"])
        model = PTDiT(ckpt.config)
        model.load_state_dict(ckpt.params)
        tr = cls(cfg, model=model)
        names = [n for n, _ in model.named_parameters()]
        tr.optimizer.load_state(
            {
                "step_count": ckpt.meta["optim_step_count"],
                "m": [ckpt.optim[f"m.{n}"] for n in names],
                "v": [ckpt.optim[f"v.{n}"] for n in names],
            }
        )
        tr.ema.shadow = {k: v.copy() for k, v in ckpt.ema.items()}
        tr.rng.bit_generator.state = ckpt.meta["rng_state"]
        tr.step = ckpt.step
        return tr

    # -- loop ---------------------------------------------------------------

    def train_step(self) -> tuple[float, float]:
        lr = lr_at(self.cfg, self.step)
        self.optimizer.lr = lr
        x0, labels = self.dataset.batch(self.step, self.cfg.train.batch_size)
        batch = Batch(x0.astype(self.dtype), make_conditioning(self.model, labels))
        t = self.cfg.train
        loss = training_step(self.model, batch, self.schedule, self.optimizer, self.rng, self.ema, t.cond_dropout, t.grad_clip)
        self.step += 1
        return loss, lr

    def run(self, steps: int | None = None, out_dir=None) -> list[float]:
        """Train up to ``steps`` total steps (default: the config's), logging and
        checkpointing under ``out_dir``. A non-finite loss propagates; the
        last checkpoint on disk is left untouched."""
        total = self.cfg.train.steps if steps is None else steps
        out = Path(out_dir or self.cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        every = self.cfg.train.checkpoint_every
        losses = []
        if self.step == 0:
            (out / "loss.tsv").write_text("")
            save_checkpoint(out / "ckpt_000000.ptck", self.checkpoint())
        with open(out / "loss.tsv", "a") as fh:
            while self.step < total:
                loss, lr = self.train_step()
                losses.append(loss)
                if self.step % self.cfg.train.log_every == 0:
                    fh.write(format_log_line(self.step, loss, lr))
                    fh.flush()
                if self.step % every == 0 or self.step == total:
                    save_checkpoint(out / f"ckpt_{self.step:06d}.ptck", self.checkpoint())
                    log.info("step %d loss %.6g", self.step, loss)
        ckpt = self.checkpoint()
        save_checkpoint(out / "last.ptck", ckpt)
        ema_ckpt = Checkpoint(ckpt.config, dict(self.ema.shadow), meta={"step": self.step, "weights": "ema"})
        save_checkpoint(out / "ema.ptck", ema_ckpt)
        return losses
