"""Command line entry point: synth, filter, train, eval, infer, inspect-net,
plot.

Every subcommand is reproducible from (config file, seed); flags override
config values.  Exit codes: 0 success, 1 runtime or numeric failure, 2 usage
error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data as D
from . import filters as F
from .checkpoint import CheckpointError
from .evaluate import constant_median_baseline, evaluate
from .networks import NetScale, build_critic, build_generator, format_layer_table, param_count
from .training import TrainConfig, Trainer, TrainingError, load_generator, infer

log = logging.getLogger("percdepth")

PRESET_LAMBDA_REC = {"surface": 10.0, "face": 10.0, "body": 1.0, "synth": 10.0}

_CONFIG_KEYS = {
    "n_G",
    "n_f_initial",
    "n_f_halve_at",
    "b",
    "p",
    "alpha_f",
    "alpha_G",
    "lambda_rec",
    "sigma",
    "seed",
    "net_scale",
    "checkpoint_every",
    "preset",
}


class UsageError(ValueError):
    pass


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="RNG seed")
    p.add_argument(
        "--deterministic",
        action="store_true",
        help="single-threaded, bit-reproducible execution",
    )
    p.add_argument("--log-level", default="info", help="logging level (debug/info/warning)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="percdepth",
        description="Unsupervised single-image RGB-to-depth transfer",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic shaded-heightmap dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--n-rgb", type=int, default=64, help="training RGB samples")
    p.add_argument("--n-depth", type=int, default=64, help="training depth samples")
    p.add_argument("--n-eval", type=int, default=16, help="registered evaluation pairs")
    p.add_argument("--size", type=int, default=64, help="image side length")
    p.add_argument("--amplitude", type=float, default=4.0, help="heightmap amplitude (um)")
    _add_common(p)

    p = sub.add_parser("filter", help="run the preprocessing pipeline over PNGs")
    p.add_argument("--in", dest="in_dir", required=True, help="directory of input PNGs")
    p.add_argument("--out", required=True, help="output directory (PFM results)")
    p.add_argument("--sigma", type=float, default=4.0, help="high-pass bandwidth")
    p.add_argument("--weights", default=None, help="grayscale weights as r,g,b")
    p.add_argument(
        "--stage",
        choices=("gray", "gamma", "psi"),
        default="psi",
        help="emit this intermediate stage",
    )
    _add_common(p)

    p = sub.add_parser("train", help="run the adversarial training loop")
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--data", required=True, help="dataset root directory")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--preset", choices=sorted(PRESET_LAMBDA_REC), default=None)
    p.add_argument("--n-g", type=int, default=None, help="generator updates")
    p.add_argument("--n-f", type=int, default=None, help="initial critic iterations")
    p.add_argument("--n-f-halve-at", type=int, default=None)
    p.add_argument("--b", type=int, default=None, help="minibatch size")
    p.add_argument("--p", type=float, default=None, help="gradient penalty weight")
    p.add_argument("--alpha-f", type=float, default=None, help="critic learning rate")
    p.add_argument("--alpha-g", type=float, default=None, help="generator learning rate")
    p.add_argument("--lambda-rec", type=float, default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--width-multiplier", type=float, default=None)
    p.add_argument("--input-size", type=int, default=None)
    p.add_argument("--checkpoint-every", type=int, default=None)
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    _add_common(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on registered pairs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset root (uses <root>/eval)")
    p.add_argument("--out", required=True, help="report CSV path")
    p.add_argument("--mask-background", action="store_true")
    p.add_argument("--width-multiplier", type=float, default=None)
    p.add_argument("--input-size", type=int, default=None)
    p.add_argument("--baseline", action="store_true", help="also print the constant-median baseline")
    _add_common(p)

    p = sub.add_parser("infer", help="predict a depth map for one RGB image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="input PNG")
    p.add_argument("--out", required=True, help="output PFM")
    p.add_argument("--preset", choices=sorted(PRESET_LAMBDA_REC), default=None)
    p.add_argument("--data", default=None, help="dataset root to read the depth scaling from")
    p.add_argument("--width-multiplier", type=float, default=None)
    p.add_argument("--input-size", type=int, default=None)
    _add_common(p)

    p = sub.add_parser("inspect-net", help="print a network's layer table")
    p.add_argument("--net", choices=("generator", "critic"), default="generator")
    p.add_argument("--out-channels", type=int, default=1, choices=(1, 3))
    p.add_argument("--in-channels", type=int, default=1, choices=(1, 3))
    p.add_argument("--width-multiplier", type=float, default=1.0)
    p.add_argument("--input-size", type=int, default=256)
    _add_common(p)

    p = sub.add_parser("plot", help="emit loss curves and sample grids")
    p.add_argument("--metrics", required=True, help="metrics CSV")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--data", default=None, help="dataset root for the sample grid")
    p.add_argument("--width-multiplier", type=float, default=None)
    p.add_argument("--input-size", type=int, default=None)
    _add_common(p)

    return parser


def _resolved_net_scale(args, run_dir: Path | None) -> NetScale:
    wm, size = args.width_multiplier, args.input_size
    if (wm is None or size is None) and run_dir is not None:
        cfg_path = run_dir / "config.resolved.json"
        if cfg_path.exists():
            stored = json.loads(cfg_path.read_text()).get("net_scale", {})
            wm = stored.get("width_multiplier") if wm is None else wm
            size = stored.get("input_size") if size is None else size
    return NetScale(wm if wm is not None else 1.0, size if size is not None else 256)


def cmd_synth(args) -> int:
    ds = D.synth_dataset(
        args.n_rgb,
        args.n_depth,
        args.n_eval,
        size=args.size,
        seed=args.seed or 0,
        amplitude=args.amplitude,
    )
    D.write_dataset(args.out, ds)
    log.info("wrote %d rgb / %d depth / %d eval samples to %s",
             args.n_rgb, args.n_depth, args.n_eval, args.out)
    return 0


def cmd_filter(args) -> int:
    weights = F.GrayWeights()
    if args.weights:
        try:
            r, g, b = (float(v) for v in args.weights.split(","))
        except ValueError as exc:
            raise UsageError(f"--weights expects r,g,b floats: {exc}") from exc
        weights = F.GrayWeights(r, g, b)
    cfg = F.FilterConfig(sigma=args.sigma)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    pngs = sorted(Path(args.in_dir).glob("*.png"))
    if not pngs:
        raise UsageError(f"no PNG files in {args.in_dir}")
    for path in pngs:
        img = D.load_png(path)
        gray = F.to_grayscale(img, weights)
        if args.stage == "gray":
            result = gray
        elif args.stage == "gamma":
            result = F.auto_gamma(gray, cfg)
        else:
            result = F.highpass_filter(F.auto_gamma(gray, cfg), cfg)
        D.save_pfm(out_dir / (path.stem + ".pfm"), result)
    log.info("filtered %d images (stage=%s) into %s", len(pngs), args.stage, args.out)
    return 0


def _load_train_config(args) -> tuple[TrainConfig, str | None]:
    values: dict = {}
    preset = None
    if args.config:
        raw = json.loads(Path(args.config).read_text())
        unknown = set(raw) - _CONFIG_KEYS
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        preset = raw.pop("preset", None)
        values.update(raw)
    if args.preset:
        preset = args.preset
    if preset is not None and "lambda_rec" not in values:
        if preset not in PRESET_LAMBDA_REC:
            raise UsageError(f"unknown preset {preset!r}")
        values["lambda_rec"] = PRESET_LAMBDA_REC[preset]
    overrides = {
        "n_G": args.n_g,
        "n_f_initial": args.n_f,
        "n_f_halve_at": args.n_f_halve_at,
        "b": args.b,
        "p": args.p,
        "alpha_f": args.alpha_f,
        "alpha_G": args.alpha_g,
        "lambda_rec": args.lambda_rec,
        "sigma": args.sigma,
        "seed": args.seed,
        "checkpoint_every": args.checkpoint_every,
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    scale = dict(values.get("net_scale", {}))
    if args.width_multiplier is not None:
        scale["width_multiplier"] = args.width_multiplier
    if args.input_size is not None:
        scale["input_size"] = args.input_size
    if scale:
        values["net_scale"] = scale
    try:
        return TrainConfig(**values), preset
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid training configuration: {exc}") from exc


def cmd_train(args) -> int:
    cfg, preset = _load_train_config(args)
    dataset = D.load_dataset(args.data)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    resolved = cfg.to_dict()
    if preset is not None:
        resolved["preset"] = preset
    (out_dir / "config.resolved.json").write_text(json.dumps(resolved, indent=2) + "\n")
    trainer = Trainer(cfg, dataset.pools, out_dir, deterministic=args.deterministic)
    final = trainer.run(resume_from=args.resume)
    log.info("training finished; final checkpoint %s", final)
    return 0


def cmd_eval(args) -> int:
    ckpt_path = Path(args.checkpoint)
    scale = _resolved_net_scale(args, ckpt_path.parent.parent)
    dataset = D.load_dataset(args.data)
    if not dataset.eval_pairs:
        raise UsageError(f"dataset {args.data} has no registered evaluation pairs")
    gen_y = load_generator(ckpt_path, scale)
    report = evaluate(
        gen_y, dataset.eval_pairs, dataset.depth_scaling, mask_background=args.mask_background
    )
    Path(args.out).write_text(report.to_csv())
    print(report.summary())
    if args.baseline:
        print("constant-median baseline:", constant_median_baseline(dataset.eval_pairs).summary())
    if not all(np.isfinite(report.rmse_per_image)) or not all(np.isfinite(report.mae_per_image)):
        raise TrainingError("non-finite evaluation metric")
    return 0


def cmd_infer(args) -> int:
    ckpt_path = Path(args.checkpoint)
    scale = _resolved_net_scale(args, ckpt_path.parent.parent)
    if args.data:
        spec = D.load_dataset(args.data).depth_scaling
    elif args.preset:
        spec = D.DEPTH_SCALING_PRESETS[args.preset]
    else:
        raise UsageError("need --data or --preset to resolve the depth scaling")
    gen_y = load_generator(ckpt_path, scale)
    rgb = D.load_png(args.image)
    if rgb.shape[0] != scale.input_size or rgb.shape[1] != scale.input_size:
        from PIL import Image

        im = Image.fromarray(np.clip(rgb, 0, 255).astype(np.uint8))
        rgb = np.asarray(
            im.resize((scale.input_size, scale.input_size), Image.BILINEAR), dtype=np.float32
        )
    D.save_pfm(args.out, infer(gen_y, rgb, spec))
    log.info("wrote depth map %s", args.out)
    return 0


def cmd_inspect_net(args) -> int:
    scale = NetScale(args.width_multiplier, args.input_size)
    if args.net == "generator":
        net = build_generator(scale, out_channels=args.out_channels)
    else:
        net = build_critic(scale, in_channels=args.in_channels)
    print(format_layer_table(net.layer_table()))
    print(f"trainable parameters: {param_count(net)}")
    return 0


def cmd_plot(args) -> int:
    from .plots import plot_losses, triptych_grid

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    plot_losses(args.metrics, out_dir / "losses.png")
    if args.checkpoint and args.data:
        ckpt_path = Path(args.checkpoint)
        scale = _resolved_net_scale(args, ckpt_path.parent.parent)
        dataset = D.load_dataset(args.data)
        gen_y = load_generator(ckpt_path, scale)
        triples = [
            (rgb, infer(gen_y, rgb, dataset.depth_scaling), gt)
            for rgb, gt in dataset.eval_pairs[:6]
        ]
        triptych_grid(triples, out_dir / "samples.png")
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "filter": cmd_filter,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "inspect-net": cmd_inspect_net,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, getattr(args, "log_level", "info").upper(), logging.INFO),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return 2
    except (TrainingError, CheckpointError, D.FileFormatError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
