#!/usr/bin/env python3
"""Train the tiny model on the single-image set, then sample it back.

Writes loss.tsv, checkpoints and sample.{ptt,png} under the output directory
and prints the final loss and the sample's MSE against the training image.
"""

import argparse
import time
from pathlib import Path

import numpy as np

from ptdit.config import memorization_config, save_config
from ptdit.diffusion import SamplerConfig, cfg_sample
from ptdit.io import write_image, write_tensor
from ptdit.model import ConditioningInput
from ptdit.train import Trainer


def run(out, steps=None):
    cfg = memorization_config(out)
    if steps is not None:
        cfg.train.steps = steps
        cfg.train.checkpoint_every = steps or 1
    trainer = Trainer(cfg)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.yaml")
    t0 = time.perf_counter()
    losses = trainer.run()
    target = trainer.dataset.templates[:1]
    x = cfg_sample(trainer.model, ConditioningInput(class_label=[0]), SamplerConfig(), trainer.schedule, target.shape, np.float64)
    write_tensor(out / "sample.ptt", x)
    write_image(out / "sample.png", np.concatenate([target, x]))
    final = float(np.mean(losses[-250:])) if losses else float("nan")
    print(f"{len(losses)} steps in {time.perf_counter() - t0:.0f}s")
    print(f"mean loss over the last 250 steps: {final:.3e}")
    print(f"sample MSE vs target: {float(np.mean((x - target) ** 2)):.3e}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description="single-image memorization run")
    ap.add_argument("--out", default="runs/memorize")
    ap.add_argument("--steps", type=int, help="override the 5000-step budget")
    args = ap.parse_args()
    run(args.out, args.steps)
