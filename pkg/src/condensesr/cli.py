"""Command-line interface: train, eval, sr, flops and inspect subcommands.

Options resolve in priority order: explicit flag, config-file entry, --toy
preset, built-in default. Config files are flat "key = value" lines using
the keys printed by --help; unknown keys are rejected. Exit codes: 0 on
success, 2 for usage or data errors, 3 for numeric failures during a run.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, restore_model, restore_training, save_checkpoint
from .data import (bicubic_resize, image_to_luma, list_images, load_training_pairs,
                   read_image, rgb_to_ycbcr, write_png, ycbcr_to_rgb)
from .errors import ConfigError, ContractError, DimensionError, NumericError
from .figures import save_eval_bars, save_flops_layers, save_training_curves
from .fixtures import write_fixture_dataset
from .lgc import CondensingConv
from .metrics import (PUBLISHED_FLOPS_X2_64PX, count_flops, evaluate_hr_only,
                      evaluate_luma_pair, super_resolve_luma)
from .model import ModelConfig, build_model
from .training import Adam, TrainSchedule, train

_MODEL_KEYS = {
    "scale": int,
    "num_blocks": int,
    "layers_per_block": int,
    "growth": int,
    "groups": int,
    "condense_factor": int,
    "stem_channels": int,
    "bottleneck_channels": int,
    "deconv_channels": int,
    "lgc_expansion": int,
    "leaky_slope": float,
}
_SCHEDULE_KEYS = {
    "epochs": int,
    "lr": float,
    "batch_size": int,
    "charbonnier_eps": float,
    "lasso_weight": float,
    "clip_norm": float,
}
_RUN_KEYS = {
    "seed": int,
    "train_dir": str,
    "val_dir": str,
    "out_dir": str,
}
_ALL_KEYS = {**_MODEL_KEYS, **_SCHEDULE_KEYS, **_RUN_KEYS}

_DEFAULTS = {
    **{k: getattr(ModelConfig(), k) for k in _MODEL_KEYS},
    "epochs": 180,
    "lr": 1e-4,
    "batch_size": 16,
    "charbonnier_eps": 1e-3,
    "lasso_weight": 1e-5,
    "clip_norm": 0.0,
    "seed": 0,
    "train_dir": None,
    "val_dir": None,
    "out_dir": None,
}

# Small model + short schedule wired to the bundled fixture set; finishes in
# minutes on a laptop CPU.
_TOY_PRESET = {
    "num_blocks": 1,
    "layers_per_block": 2,
    "bottleneck_channels": 48,
    "deconv_channels": 48,
    "epochs": 24,
    "lr": 1e-3,
    "batch_size": 2,
}


def _parse_config_file(path) -> dict:
    values = {}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _ALL_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        typ = _ALL_KEYS[key]
        try:
            values[key] = value if typ is str else typ(value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {value!r}") from exc
    return values


def _resolve(args) -> dict:
    file_values = _parse_config_file(args.config) if getattr(args, "config", None) else {}
    toy = bool(getattr(args, "toy", False))
    resolved = {}
    for key in _ALL_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = flag
        elif key in file_values:
            resolved[key] = file_values[key]
        elif toy and key in _TOY_PRESET:
            resolved[key] = _TOY_PRESET[key]
        else:
            resolved[key] = _DEFAULTS[key]
    return resolved


def _model_config(resolved: dict) -> ModelConfig:
    config = ModelConfig(**{k: resolved[k] for k in _MODEL_KEYS})
    config.validate()
    return config


def _schedule(resolved: dict) -> TrainSchedule:
    schedule = TrainSchedule(
        total_epochs=resolved["epochs"],
        lr0=resolved["lr"],
        batch_size=resolved["batch_size"],
        charbonnier_eps=resolved["charbonnier_eps"],
        lasso_weight=resolved["lasso_weight"],
        clip_norm=resolved["clip_norm"],
    )
    schedule.validate()
    return schedule


# ---------------------------------------------------------------------------
# train

def cmd_train(args) -> int:
    resolved = _resolve(args)
    out_dir = resolved["out_dir"]
    if out_dir is None:
        raise ConfigError("train requires --out-dir (or out_dir in the config file)")
    seed = resolved["seed"]

    if args.resume:
        loaded = load_checkpoint(args.resume)
        model, optimizer = restore_training(loaded)
        schedule, seed = loaded.schedule, loaded.seed
        start_epoch = loaded.epoch
        config = loaded.config
    else:
        config = _model_config(resolved)
        schedule = _schedule(resolved)
        model = build_model(config, seed)
        optimizer = Adam(model.named_parameters())
        start_epoch = 0

    out_dir = Path(out_dir)
    train_dir = resolved["train_dir"]
    val_dir = resolved["val_dir"]
    if args.toy and train_dir is None:
        train_dir, toy_val = write_fixture_dataset(out_dir / "fixtures")
        if val_dir is None:
            val_dir = toy_val
    if train_dir is None:
        raise ConfigError("train requires --train-dir (or the --toy preset)")
    train_dir = Path(train_dir)
    if not train_dir.is_dir():
        raise ConfigError(f"training directory not found: {train_dir}")

    pairs = load_training_pairs([train_dir], config.scale)
    if not pairs:
        raise ConfigError(f"no training patches found under {train_dir}")
    print(f"training on {len(pairs)} patch pairs from {train_dir} "
          f"(scale x{config.scale}, {schedule.total_epochs} epochs, seed {seed})")

    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for result in train(model, schedule, pairs, seed,
                        optimizer=optimizer, start_epoch=start_epoch):
        ckpt_path = ckpt_dir / f"epoch_{result.epoch:04d}.ckpt"
        save_checkpoint(ckpt_path, model, optimizer, schedule, seed,
                        result.epoch, result.global_step)
        rows.append({
            "epoch": result.epoch,
            "loss": result.mean_loss,
            "total_loss": result.mean_total_loss,
            "lr": result.lr_last,
            "retained_fraction": result.retained_fraction,
            "global_step": result.global_step,
        })
        marker = "  [condensed]" if result.condensed else ""
        print(f"epoch {result.epoch:4d}  loss {result.mean_loss:.6f}  "
              f"lr {result.lr_last:.3e}  retained {result.retained_fraction:.3f}{marker}")

    log_path = out_dir / "train_log.csv"
    with open(log_path, "w") as fh:
        fh.write("epoch,loss,total_loss,lr,retained_fraction,global_step\n")
        for r in rows:
            fh.write(f"{r['epoch']},{r['loss']!r},{r['total_loss']!r},"
                     f"{r['lr']!r},{r['retained_fraction']!r},{r['global_step']}\n")
    if rows:
        save_training_curves(rows, out_dir / "train_curves.png")
    print(f"wrote {log_path} and {len(rows)} checkpoints under {ckpt_dir}")

    if val_dir is not None and Path(val_dir).is_dir():
        gains = []
        for path in list_images(val_dir):
            luma = image_to_luma(read_image(path))
            scores = evaluate_hr_only(model, luma, config.scale, config.scale)
            gains.append((scores["psnr_model"], scores["psnr_bicubic"]))
        if gains:
            mean_model = float(np.mean([g[0] for g in gains]))
            mean_bicubic = float(np.mean([g[1] for g in gains]))
            print(f"validation: mean PSNR {mean_model:.3f} dB vs bicubic "
                  f"{mean_bicubic:.3f} dB ({mean_model - mean_bicubic:+.3f})")
    return 0


# ---------------------------------------------------------------------------
# eval

def _paired_listing(data_dir: Path):
    """(name, lr_path_or_None, hr_path) triples; *_LR/*_HR stems pair up."""
    images = list_images(data_dir)
    by_stem = {p.stem: p for p in images}
    triples = []
    for path in images:
        stem = path.stem
        if stem.endswith("_LR"):
            continue
        if stem.endswith("_HR"):
            lr = by_stem.get(stem[:-3] + "_LR")
            triples.append((stem[:-3], lr, path))
        else:
            triples.append((stem, None, path))
    return triples


def cmd_eval(args) -> int:
    checkpoint = Path(args.checkpoint)
    if not checkpoint.is_file():
        raise ConfigError(f"checkpoint not found: {checkpoint}")
    data_dir = Path(args.data)
    if not data_dir.is_dir():
        raise ConfigError(f"dataset directory not found: {data_dir}")
    loaded = load_checkpoint(checkpoint)
    model = restore_model(loaded)
    scale = loaded.config.scale
    shave = args.shave if args.shave is not None else scale

    triples = _paired_listing(data_dir)
    if not triples:
        raise ConfigError(f"no images found under {data_dir}")

    def eval_one(triple):
        name, lr_path, hr_path = triple
        hr = image_to_luma(read_image(hr_path))
        if lr_path is None:
            scores = evaluate_hr_only(model, hr, scale, shave)
        else:
            lr = image_to_luma(read_image(lr_path))
            scores = evaluate_luma_pair(model, lr, hr, shave)
        return {"name": name, **scores}

    jobs = max(1, args.jobs)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(eval_one, triples))
    else:
        rows = [eval_one(t) for t in triples]

    mean = {key: float(np.mean([r[key] for r in rows]))
            for key in ("psnr_model", "ssim_model", "psnr_bicubic", "ssim_bicubic")}
    summary_lines = [
        f"images={len(rows)}",
        f"scale={scale}",
        f"shave={shave}",
        f"mean_psnr_model={mean['psnr_model']:.4f}",
        f"mean_ssim_model={mean['ssim_model']:.6f}",
        f"mean_psnr_bicubic={mean['psnr_bicubic']:.4f}",
        f"mean_ssim_bicubic={mean['ssim_bicubic']:.6f}",
        f"mean_psnr_gain={mean['psnr_model'] - mean['psnr_bicubic']:.4f}",
    ]
    for line in summary_lines:
        print(line)

    if args.out_dir:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path = out_dir / "eval.csv"
        with open(csv_path, "w") as fh:
            fh.write("name,psnr_model,ssim_model,psnr_bicubic,ssim_bicubic,psnr_gain\n")
            for r in rows:
                fh.write(f"{r['name']},{r['psnr_model']:.4f},{r['ssim_model']:.6f},"
                         f"{r['psnr_bicubic']:.4f},{r['ssim_bicubic']:.6f},"
                         f"{r['psnr_model'] - r['psnr_bicubic']:.4f}\n")
        (out_dir / "eval_summary.txt").write_text("\n".join(summary_lines) + "\n")
        save_eval_bars(rows, out_dir / "eval_psnr.png")
        print(f"wrote {csv_path}")
    return 0


# ---------------------------------------------------------------------------
# sr

def cmd_sr(args) -> int:
    input_path = Path(args.input)
    if not input_path.is_file():
        raise ConfigError(f"input image not found: {input_path}")
    checkpoint = Path(args.checkpoint)
    if not checkpoint.is_file():
        raise ConfigError(f"checkpoint not found: {checkpoint}")
    loaded = load_checkpoint(checkpoint)
    model = restore_model(loaded)
    scale = loaded.config.scale

    arr = read_image(input_path)
    if arr.ndim == 2:
        sr = super_resolve_luma(model, arr)
        out = sr.data
    else:
        y, cb, cr = rgb_to_ycbcr(arr[..., 0], arr[..., 1], arr[..., 2])
        sr_y = super_resolve_luma(model, y)
        h, w = sr_y.data.shape
        cb_up = bicubic_resize(cb.data, h, w)
        cr_up = bicubic_resize(cr.data, h, w)
        r, g, b = ycbcr_to_rgb(sr_y.data, cb_up, cr_up)
        out = np.clip(np.stack([r, g, b], axis=-1), 0.0, 255.0)

    output = Path(args.output) if args.output else input_path.with_name(
        f"{input_path.stem}_x{scale}.png")
    output.parent.mkdir(parents=True, exist_ok=True)
    write_png(output, out)
    print(f"wrote {output} ({out.shape[1]}x{out.shape[0]} from "
          f"{arr.shape[1]}x{arr.shape[0]})")
    return 0


# ---------------------------------------------------------------------------
# flops / inspect

def _model_from_checkpoint_or_flags(args, resolved):
    if getattr(args, "checkpoint", None):
        checkpoint = Path(args.checkpoint)
        if not checkpoint.is_file():
            raise ConfigError(f"checkpoint not found: {checkpoint}")
        return restore_model(load_checkpoint(checkpoint))
    return None


def cmd_flops(args) -> int:
    resolved = _resolve(args)
    model = _model_from_checkpoint_or_flags(args, resolved)
    if model is not None:
        report = count_flops(model, args.input_size, args.input_size)
        source = f"checkpoint {args.checkpoint}"
    else:
        config = _model_config(resolved)
        report = count_flops(config, args.input_size, args.input_size)
        source = "config (fully condensed retention arithmetic)"

    print(f"multiply-add report for {source}, input {args.input_size}x{args.input_size}")
    print(report.text_table())
    print()
    print("published totals for x2 models producing 64x64 output (MACs):")
    for name, value in PUBLISHED_FLOPS_X2_64PX.items():
        print(f"  {name:<14} {value / 1e6:10.2f}e6")
    print()
    for line in report.machine_lines():
        print(line)

    if args.out_dir:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "flops.txt").write_text(report.text_table() + "\n")
        (out_dir / "flops.kv").write_text("\n".join(report.machine_lines()) + "\n")
        save_flops_layers(report, out_dir / "flops_layers.png")
        print(f"wrote reports under {out_dir}")
    return 0


def cmd_inspect(args) -> int:
    resolved = _resolve(args)
    model = _model_from_checkpoint_or_flags(args, resolved)
    if model is None:
        config = _model_config(resolved)
        model = build_model(config, resolved["seed"])

    lines = []
    print(f"{'layer':<24} {'stage':>5} {'kept columns per group':>30} {'fraction':>9}")
    for name, layer in model.lgc_layers():
        if not isinstance(layer, CondensingConv):
            continue
        kept = layer.retained_per_group()
        frac = layer.retained_fraction()
        kept_text = ",".join(str(k) for k in kept)
        print(f"{name:<24} {layer.stage:>5} {kept_text + '/' + str(layer.in_channels):>30} {frac:>9.4f}")
        lines.append(f"layer.{name}.stage={layer.stage}")
        lines.append(f"layer.{name}.retained_fraction={frac!r}")
    from .training import retained_fraction
    overall = retained_fraction(model)
    print(f"overall retained fraction: {overall:.4f}")
    lines.append(f"overall_retained_fraction={overall!r}")

    if args.out_dir:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "inspect.kv").write_text("\n".join(lines) + "\n")
    return 0


# ---------------------------------------------------------------------------
# parser

def _add_model_flags(parser) -> None:
    group = parser.add_argument_group("model", "architecture (config-file keys use the same names)")
    for key, typ in _MODEL_KEYS.items():
        group.add_argument(f"--{key.replace('_', '-')}", dest=key, type=typ, default=None)


def _add_schedule_flags(parser) -> None:
    group = parser.add_argument_group("schedule")
    for key, typ in _SCHEDULE_KEYS.items():
        group.add_argument(f"--{key.replace('_', '-')}", dest=key, type=typ, default=None)


def _add_common_flags(parser) -> None:
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--config", type=str, default=None,
                        help="flat key = value file; flags override file entries")
    parser.add_argument("--out-dir", dest="out_dir", type=str, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="condensesr",
        description="Super-resolution with condensing group convolutions: "
                    "train, evaluate, super-resolve and report multiply-adds.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model, checkpointing every epoch")
    _add_model_flags(p_train)
    _add_schedule_flags(p_train)
    _add_common_flags(p_train)
    p_train.add_argument("--train-dir", dest="train_dir", type=str, default=None)
    p_train.add_argument("--val-dir", dest="val_dir", type=str, default=None)
    p_train.add_argument("--toy", action="store_true",
                         help="small model + bundled fixture images; finishes in minutes")
    p_train.add_argument("--resume", type=str, default=None,
                         help="checkpoint to resume from (its config/schedule/seed win)")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="PSNR/SSIM of a checkpoint over a dataset directory")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", required=True,
                        help="directory of HR images; *_HR/*_LR stems are treated as pairs")
    p_eval.add_argument("--shave", type=int, default=None,
                        help="border pixels excluded from metrics (default: scale)")
    p_eval.add_argument("--jobs", type=int, default=1)
    p_eval.add_argument("--out-dir", dest="out_dir", type=str, default=None)
    p_eval.set_defaults(func=cmd_eval)

    p_sr = sub.add_parser("sr", help="super-resolve one image (luma through the model)")
    p_sr.add_argument("--checkpoint", required=True)
    p_sr.add_argument("--input", required=True)
    p_sr.add_argument("--output", default=None)
    p_sr.set_defaults(func=cmd_sr)

    p_flops = sub.add_parser("flops", help="per-layer multiply-add report")
    _add_model_flags(p_flops)
    _add_common_flags(p_flops)
    p_flops.add_argument("--checkpoint", default=None,
                         help="count with this checkpoint's live masks instead of a config")
    p_flops.add_argument("--input-size", dest="input_size", type=int, default=32)
    p_flops.set_defaults(func=cmd_flops)

    p_inspect = sub.add_parser("inspect", help="per-layer mask retention")
    _add_model_flags(p_inspect)
    _add_common_flags(p_inspect)
    p_inspect.add_argument("--checkpoint", default=None)
    p_inspect.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ContractError, DimensionError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
