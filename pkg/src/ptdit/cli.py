"""Command-line entry point: ``ptdit {train,sample,analyze,profile,inspect-checkpoint}``.

Exit codes: 0 success, 1 user error (bad flags, config, files), 2 internal
invariant violation (non-finite loss, numerical faults, bugs).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .checkpoint import describe, load_checkpoint
from .config import RunConfig, load_config
from .diffusion import NoiseSchedule, NonFiniteLossError, SamplerConfig, cfg_sample, q_sample
from .grid import ConfigError
from .io import FormatError, write_image, write_tensor
from .model import PRESETS, RATIO_SCHEDULE, ConditioningInput, PTDiT, TextStub, count_parameters, preset
from .numerics import Tensor, layer_norm, no_grad
from .train import Trainer

log = logging.getLogger("ptdit")

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2
LATENT_DOWNSAMPLE = 8  # pixel -> latent
DEFAULT_PATCH = 2


class UserError(Exception):
    pass


def _ratio(text: str) -> tuple[int, int, int]:
    parts = text.lower().replace(",", "x").split("x")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"ratio must look like 1x2x2, got {text!r}")
    try:
        return tuple(int(p) for p in parts)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.replace(",", " ").split()]


def _cell(text: str) -> tuple[int, tuple[int, int, int]]:
    try:
        n, r = text.split(":")
        return int(n), _ratio(r)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"cell must look like 256:1x2x2, got {text!r}") from exc


def tokens_at(resolution: int, patch: int = DEFAULT_PATCH) -> int:
    side = resolution // LATENT_DOWNSAMPLE // patch
    return side * side


# -- train --------------------------------------------------------------------


def cmd_train(args) -> int:
    if args.resume:
        cfg = load_config(args.config) if args.config else None
        trainer = Trainer.from_checkpoint(args.resume, cfg)
    else:
        if not args.config:
            raise UserError("train needs --config (or --resume)")
        cfg = load_config(args.config)
        trainer = Trainer(cfg)
    out = args.output or trainer.cfg.output_dir
    total = args.steps if args.steps is not None else trainer.cfg.train.steps
    losses = trainer.run(total, out)
    last = f"{losses[-1]:.6g}" if losses else "n/a"
    print(f"trained to step {trainer.step}; last loss {last}; outputs in {out}")
    return EXIT_OK


# -- sample -------------------------------------------------------------------


def load_model(path) -> PTDiT:
    ckpt = load_checkpoint(path)
    model = PTDiT(ckpt.config)
    model.load_state_dict(ckpt.params)
    return model


def cmd_sample(args) -> int:
    model = load_model(args.checkpoint)
    cfg = model.cfg
    if args.ema:
        ckpt = load_checkpoint(args.checkpoint)
        if not ckpt.ema:
            raise UserError(f"{args.checkpoint} holds no EMA weights")
        model.load_state_dict(ckpt.ema)
    n = args.num
    if args.prompt is not None:
        if cfg.conditioning != "text":
            raise UserError("this checkpoint is class-conditional; pass --class-label instead of --prompt")
        stub = TextStub(cfg.text_dim, cfg.text_len, seed=args.text_seed)
        cond = ConditioningInput(text_tokens=stub.encode([args.prompt] * n))
    else:
        if cfg.conditioning != "class":
            raise UserError("this checkpoint is text-conditional; pass --prompt instead of --class-label")
        cond = ConditioningInput(class_label=np.full(n, args.class_label))
    try:
        sampler = SamplerConfig(args.steps, args.guidance, args.seed, args.conditional_only)
    except ValueError as exc:
        raise UserError(str(exc)) from exc
    schedule = NoiseSchedule.cosine(args.T)
    shape = (n, cfg.in_channels, cfg.frames, cfg.input_size, cfg.input_size)
    dtype = np.dtype(args.dtype)
    x = cfg_sample(model, cond, sampler, schedule, shape, dtype)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_tensor(out.with_suffix(".ptt"), x)
    write_image(out.with_suffix(".png"), x)
    print(f"wrote {out.with_suffix('.ptt')} and {out.with_suffix('.png')}")
    return EXIT_OK


# -- analyze ------------------------------------------------------------------


def cmd_analyze(args) -> int:
    cells = [(tokens_at(r), RATIO_SCHEDULE[r]) for r in args.resolutions if r in RATIO_SCHEDULE]
    cells_scheduled = list(cells)
    errors = [f"resolution {r}: no scheduled compression ratio" for r in args.resolutions if r not in RATIO_SCHEDULE]
    for r in args.resolutions:
        for ratio in args.ratios:
            if (tokens_at(r), ratio) not in cells:
                cells.append((tokens_at(r), ratio))
    cells += args.cell
    rows, cell_errors = analysis.complexity_table(cells, args.dim)
    errors += cell_errors
    for name in args.presets:
        if name not in PRESETS:
            errors.append(f"preset {name}: unknown (choose from {sorted(PRESETS)})")
            continue
        cfg = preset(name)
        n = int(np.prod(cfg.grid_geometry))
        rep = analysis.ptdit_attention_flops(n, cfg.hidden_dim, cfg.compression_ratio())
        mem = analysis.memory_estimate(cfg, n, args.batch)
        row = rep.row()
        row.update(preset=name, params=count_parameters(cfg), memory_bytes=mem.total, global_map_bytes=mem.global_attention_map_bytes)
        rows.append(row)
    table = analysis.rows_to_tsv(rows)
    sys.stdout.write(table)
    for e in errors:
        print(f"error: {e}", file=sys.stderr)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "complexity.tsv").write_text(table)
        (out / "complexity.json").write_text(json.dumps({"rows": rows, "errors": errors}, indent=2))
    attempted = len(cells) + len(args.presets) + len(args.resolutions) - len(cells_scheduled)
    succeeded = sum(1 for r in rows if not str(r.get("status", "")).startswith("ERROR"))
    if attempted and not succeeded:
        return EXIT_USER
    return EXIT_OK


# -- profile ------------------------------------------------------------------


def capture_layer_map(model: PTDiT, latent: np.ndarray, cond: ConditioningInput, layer: int):
    """Head-stacked [1, H, N, N] map of one layer's self-attention applied to all
    latent tokens (the GIIM proxy attention, or TCM window attention if GIIM is off)."""
    n_layers = len(model.blocks)
    if not 0 <= layer < n_layers:
        raise UserError(f"layer {layer} out of range; valid layers are 0..{n_layers - 1}")
    blk = model.blocks[layer]
    if blk.giim is not None:
        attn = blk.giim.sa
    elif blk.tcm is not None:
        attn = blk.tcm.wsa.attn
    else:
        raise UserError(f"layer {layer} has no self-attention path to capture")
    with no_grad():
        x = model.hidden_states(Tensor(latent), cond)[layer]
        b, f, h, w, d = x.shape
        attn.capture_maps, attn.captures = True, []
        try:
            attn(layer_norm(x).reshape(b, f * h * w, d))
            cap = attn.captures[-1]
        finally:
            attn.capture_maps, attn.captures = False, []
    cap.meta.update(layer=layer, grid=f"{f}x{h}x{w}")
    return cap, (f, h, w)


def cmd_profile(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = PTDiT(ckpt.config)
    model.load_state_dict(ckpt.params)
    cfg = model.cfg
    run = RunConfig.from_dict(ckpt.meta["run_config"]) if "run_config" in ckpt.meta else RunConfig()
    data = run.dataset() if run.data.size == cfg.input_size else None
    rng = np.random.default_rng(args.seed)
    if data is not None:
        x0, labels = data.batch(args.seed, 1)
    else:
        x0 = rng.standard_normal((1, cfg.in_channels, cfg.frames, cfg.input_size, cfg.input_size))
        labels = np.zeros(1, np.int64)
    schedule = NoiseSchedule.cosine()
    latent = q_sample(x0, np.array([args.t]), rng.standard_normal(x0.shape), schedule)
    if cfg.conditioning == "class":
        cond = ConditioningInput(np.array([args.t]), class_label=labels)
    else:
        cond = ConditioningInput(np.array([args.t]), text_tokens=TextStub(cfg.text_dim, cfg.text_len).encode(["profile"]))
    cap, (f, h, w) = capture_layer_map(model, latent, cond, args.layer)
    if f != 1:
        raise UserError("profiling needs a single-frame (spatially square) grid")
    window = tuple(args.window) if args.window else cfg.compression_ratio().as_tuple()[1:]
    report = analysis.redundancy_profile(cap, window, args.radius, grid=(h, w))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "redundancy.json").write_text(analysis.report_json(report))
    np.savetxt(out / "attention_map.tsv", cap.weights[0].mean(axis=0), delimiter="\t")
    cap.save(out / "attention_map.npz")
    print(f"layer {args.layer}: neighbor {report.mean_neighbor:.4f} distant {report.mean_distant:.4f}; wrote {out}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    print(describe(args.checkpoint))
    return EXIT_OK


# -- entry --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ptdit", description="Proxy-tokenized diffusion transformer toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train on a synthetic dataset")
    t.add_argument("--config", help="YAML run config")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--steps", type=int, help="total step target (default: config train.steps)")
    t.add_argument("--output", help="output directory (default: config output_dir)")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="guided DDIM sampling from a checkpoint")
    s.add_argument("--checkpoint", required=True)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--class-label", type=int)
    g.add_argument("--prompt")
    s.add_argument("--steps", type=int, default=50)
    s.add_argument("--guidance", type=float, default=6.0)
    s.add_argument("--conditional-only", action="store_true", help="skip the unconditional pass")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--num", type=int, default=1)
    s.add_argument("--T", type=int, default=1000)
    s.add_argument("--ema", action="store_true", help="sample with the EMA weights")
    s.add_argument("--text-seed", type=int, default=0)
    s.add_argument("--dtype", default="float64", choices=("float32", "float64"))
    s.add_argument("--out", default="sample", help="output stem; writes .ptt and .png")
    s.set_defaults(func=cmd_sample)

    a = sub.add_parser("analyze", help="attention cost tables")
    a.add_argument("--resolutions", type=_int_list, default=sorted(RATIO_SCHEDULE), help="pixel resolutions, e.g. '256,512'")
    a.add_argument("--ratios", type=_ratio, nargs="*", default=[], help="extra ratios crossed with every resolution")
    a.add_argument("--cell", type=_cell, action="append", default=[], help="explicit N:ratio cell, e.g. 256:1x2x2")
    a.add_argument("--presets", type=lambda s: [v for v in s.split(",") if v], default=[])
    a.add_argument("--dim", type=int, default=1152)
    a.add_argument("--batch", type=int, default=1)
    a.add_argument("--out", help="directory for complexity.tsv / complexity.json")
    a.set_defaults(func=cmd_analyze)

    pr = sub.add_parser("profile", help="attention redundancy of one layer")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--layer", type=int, default=0)
    pr.add_argument("--t", type=int, default=500, help="diffusion timestep of the probe input")
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--window", type=_int_list)
    pr.add_argument("--radius", type=int)
    pr.add_argument("--out", default="profile")
    pr.set_defaults(func=cmd_profile)

    i = sub.add_parser("inspect-checkpoint", help="print a checkpoint header")
    i.add_argument("checkpoint")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USER
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UserError, ConfigError, FormatError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except NonFiniteLossError as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # anything else is a bug or a broken invariant
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
