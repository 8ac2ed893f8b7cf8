"""
ShadowMamba Desk v1.0 · Command Line
denoise · scanviz · infer · train · eval · scanbench · params · synth · ablate

    python cli.py <command> --help
"""

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

import ablation
import image_io
import mask_ops
import metrics
import model as net
import reports
import scan_orders as so
import synthetic
from config import (
    ABLATION_CONFIG, LOG_LEVEL, MASK_CONFIG, METRIC_CONFIG, SCAN_CONFIG, TRAIN_CONFIG, ModelConfig, load_run_config,
)
from errors import EXIT_OK, ConfigError, DataError, ShadowMambaError, UsageError, exit_code_for
from tensor_core import no_grad
from train import ToyTrainer, load_triplets

STRATEGIES = SCAN_CONFIG["strategies"]


def _check_window(window):
    if window < 1:
        raise UsageError(f"--window must be >= 1, got {window}")
    return window


def _out_dir(path):
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p.parent


# ===================================================================
# COMMANDS
# ===================================================================

def cmd_denoise(args):
    """M_denoised = M * Dilation(Closing(Opening(M)))."""
    se = mask_ops.StructuringElement(args.se_size)
    m = mask_ops.BinaryMask.load(args.mask)
    out = mask_ops.denoise_mask(m, se, args.dilate_radius)
    out.save(args.out)
    logging.info(f"[MASK] 🧹 {args.mask}: {m.count()} -> {out.count()} shadow pixel(s) -> {args.out}")

    manifest = reports.RunManifest("denoise", inputs={"mask": args.mask}, outputs={"mask": args.out})
    manifest.extra["parameters"] = {"se_size": args.se_size, "dilate_radius": args.dilate_radius}
    manifest.write(_out_dir(args.out))
    return EXIT_OK


def cmd_scanviz(args):
    """Sequence-position heatmap (PNG) and raw permutation (JSON) of one scan."""
    if args.strategy not in STRATEGIES:
        raise UsageError(f"unknown strategy {args.strategy!r}; expected one of {list(STRATEGIES)}")
    direction = so.Direction.parse(args.direction)
    _check_window(args.window)
    m = mask_ops.BinaryMask.load(args.mask)
    H, W = m.shape

    if args.strategy in ("local", "boundary_region"):
        Hp, Wp = so.pad_to_window(H, W, args.window)
        padded = so.reflect_pad_bits(m.bits, Hp, Wp)
        if args.strategy == "local":
            order = so.build_local_order(Hp, Wp, args.window, direction)
        else:
            classes = so.classify_windows(padded, args.window)
            order = so.build_boundary_region_order(classes, Hp, Wp, args.window, direction)
    elif args.strategy == "region":
        order = so.build_region_order(m, H, W, direction)
    else:
        order = so.build_cross_order(H, W, direction)

    heat = so.position_heatmap(order)[:H, :W]
    image_io.write_heatmap(args.out, heat)
    json_path = Path(args.out).with_suffix(".json")
    so.save_order_json(order, json_path)
    logging.info(f"[SCAN] 🗺️ {order} -> {args.out}, {json_path}")

    manifest = reports.RunManifest(
        "scanviz", inputs={"mask": args.mask}, outputs={"heatmap": args.out, "perm": json_path}
    )
    manifest.extra["parameters"] = {"window": args.window, "strategy": args.strategy,
                                    "direction": direction.value}
    manifest.write(_out_dir(args.out))
    return EXIT_OK


def cmd_infer(args):
    """Restore one image with a checkpoint; the mask is denoised first when the config says so."""
    expected = load_run_config(args.config)[0] if args.config else None
    model = net.load_checkpoint(args.checkpoint, expected)
    image = image_io.read_rgb(args.image, dtype=model.cfg.dtype)
    m = mask_ops.BinaryMask.load(args.mask)
    if m.shape != image.shape[1:]:
        raise DataError(f"mask {args.mask} is {m.shape[0]}x{m.shape[1]}, image is {image.shape[1]}x{image.shape[2]}")
    inp = net.prepare_input(image, m, model.cfg)
    with no_grad():
        out = net.unet_forward(model, inp)
    image_io.write_rgb(args.out, out.restored)
    logging.info(f"[MODEL] ✅ restored {args.image} ({inp.height}x{inp.width}) -> {args.out}")

    manifest = reports.RunManifest(
        "infer", config_path=args.config,
        inputs={"image": args.image, "mask": args.mask, "checkpoint": args.checkpoint},
        outputs={"restored": args.out}, seed=model.cfg.seed,
    )
    manifest.write(_out_dir(args.out))
    return EXIT_OK


def cmd_train(args):
    """Train on image/ mask/ target/ triplets; write trace, checkpoint, manifest."""
    cfg, train_cfg = load_run_config(args.config) if args.config else (ModelConfig(), dict(TRAIN_CONFIG))
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    steps = train_cfg["steps"] if args.steps is None else args.steps
    if steps < 0:
        raise ConfigError(f"steps must be >= 0, got {steps}")

    triplets = load_triplets(args.data, cfg, train_cfg["max_image_side"])
    model = net.ShadowMamba(cfg)
    trainer = ToyTrainer(model, [(inp, t) for _, inp, t in triplets], steps, train_cfg, seed=cfg.seed)
    trainer.run()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trace_path = reports.write_trace_csv(out / "trace.csv", trainer.trace)
    ckpt_path = net.save_checkpoint(out / "checkpoint.npz", model)
    stats = trainer.get_stats()
    logging.info(reports.format_summary("training finished", stats))

    manifest = reports.RunManifest(
        "train", config_path=args.config,
        inputs={"data": args.data, "samples": [name for name, _, _ in triplets]},
        outputs={"trace": trace_path, "checkpoint": ckpt_path}, seed=cfg.seed,
    )
    manifest.extra["stats"] = stats
    manifest.extra["train"] = train_cfg
    manifest.write(out)
    return EXIT_OK


def cmd_eval(args):
    """PSNR / SSIM / Lab MAE over ALL, S and NS for matching file names."""
    report = metrics.evaluate_directories(args.pred, args.gt, args.mask, args.workers)
    csv_path, json_path = reports.write_metric_report(args.out, report)
    agg = report.aggregate()
    for region, vals in agg.items():
        logging.info(f"[EVAL] {region:<3} | " + " | ".join(
            f"{k} {v:.4f}" if isinstance(v, float) else f"{k} {v}" for k, v in vals.items()))

    manifest = reports.RunManifest(
        "eval", inputs={"pred": args.pred, "gt": args.gt, "mask": args.mask},
        outputs={"csv": csv_path, "json": json_path},
    )
    manifest.extra["missing"] = report.missing
    manifest.extra["failed"] = report.failed
    manifest.write(_out_dir(args.out))
    if report.failed:
        raise DataError(f"{len(report.failed)} image(s) could not be evaluated: {[f['name'] for f in report.failed]}")
    return EXIT_OK


def _bench_one(job):
    path, window = job
    m = mask_ops.BinaryMask.load(path)
    rows = []
    for direction in SCAN_CONFIG["bench_directions"]:
        d = so.Direction.parse(direction)
        result = so.distance_benchmark(m, window, d)
        rows.extend(
            dict(mask=path.name, direction=d.value, **row, pooled_ratio=result["pooled_ratio"])
            for row in result["rows"]
        )
    return rows


def cmd_scanbench(args):
    """Intra-category window distances under local vs boundary-region scanning."""
    _check_window(args.window)
    paths = image_io.list_pngs(args.masks)
    if not paths:
        raise UsageError(f"no mask PNGs under {args.masks}")
    with ThreadPoolExecutor(max_workers=max(1, args.workers)) as pool:
        rows = [r for batch in pool.map(_bench_one, [(p, args.window) for p in paths]) for r in batch]
    reports.write_csv(args.out, rows)

    violations = [r for r in rows if r["br_max"] > r["local_max"] or r["br_mean"] > r["local_mean"]]
    if violations:
        logging.warning(f"[SCAN] ⚠️ {len(violations)} row(s) where boundary-region exceeds local")
    pooled = [r["pooled_ratio"] for r in rows if r["category"] == "non_shadow"]
    logging.info(f"[SCAN] 📏 {len(paths)} mask(s), mean pooled ratio {np.mean(pooled):.4f} -> {args.out}")

    manifest = reports.RunManifest("scanbench", inputs={"masks": args.masks}, outputs={"csv": args.out})
    manifest.extra["parameters"] = {"window": args.window}
    manifest.write(_out_dir(args.out))
    return EXIT_OK


def cmd_params(args):
    """Per-part parameter counts; exit 4 outside the reference band."""
    cfg = load_run_config(args.config)[0] if args.config else ModelConfig()
    report = net.parameter_report(cfg)
    logging.info(reports.format_parameter_report(report))

    out = Path(args.out)
    manifest = reports.RunManifest("params", config_path=args.config, outputs={"dir": out}, seed=cfg.seed)
    manifest.extra["parameters"] = report
    try:
        net.check_parameter_band(report)
        manifest.extra["within_band"] = True
    except ShadowMambaError:
        manifest.extra["within_band"] = False
        raise
    finally:
        out.mkdir(parents=True, exist_ok=True)
        manifest.write(out)
    return EXIT_OK


def cmd_synth(args):
    """Write a synthetic (image, mask, target) set usable by `train`."""
    samples = synthetic.make_toy_dataset(args.count, args.size, seed=args.seed, mask_noise=args.mask_noise)
    names = synthetic.write_toy_dataset(args.out, samples)
    manifest = reports.RunManifest("synth", outputs={"dir": args.out, "files": names}, seed=args.seed)
    manifest.extra["parameters"] = {"count": args.count, "size": args.size, "mask_noise": args.mask_noise}
    manifest.write(args.out)
    return EXIT_OK


def cmd_ablate(args):
    """One ablation axis over seeds; one CSV row per (variant, seed)."""
    rows = ablation.run_axis(args.axis, seeds=range(args.seeds), steps=args.steps, size=args.size,
                             count=args.count)
    reports.write_csv(args.out, rows)
    manifest = reports.RunManifest("ablate", outputs={"csv": args.out})
    manifest.extra["parameters"] = {"axis": args.axis, "seeds": args.seeds, "steps": args.steps}
    manifest.write(_out_dir(args.out))
    return EXIT_OK


# ===================================================================
# PARSER
# ===================================================================

def build_parser():
    parser = argparse.ArgumentParser(prog="shadowmamba", description="ShadowMamba desk-scale toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("denoise", help="denoise a shadow mask")
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--se-size", type=int, default=MASK_CONFIG["se_size"])
    p.add_argument("--dilate-radius", type=int, default=MASK_CONFIG["dilate_radius"])
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("scanviz", help="visualise a scan order")
    p.add_argument("--mask", required=True)
    p.add_argument("--window", type=int, default=ABLATION_CONFIG["window"])
    p.add_argument("--strategy", default="boundary_region")
    p.add_argument("--direction", default="horizontal")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_scanviz)

    p = sub.add_parser("infer", help="restore one image")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("train", help="train on a triplet directory")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=METRIC_CONFIG["workers"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("scanbench", help="intra-category scan distance benchmark")
    p.add_argument("--masks", required=True)
    p.add_argument("--window", type=int, default=ABLATION_CONFIG["window"])
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=METRIC_CONFIG["workers"])
    p.set_defaults(func=cmd_scanbench)

    p = sub.add_parser("params", help="parameter count report")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("synth", help="write a synthetic triplet set")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mask-noise", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ablate", help="run one ablation axis")
    p.add_argument("--axis", required=True, choices=ablation.AXES)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int, default=ABLATION_CONFIG["seeds"])
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--size", type=int, default=None)
    p.add_argument("--count", type=int, default=None)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None):
    logging.basicConfig(level=getattr(logging, LOG_LEVEL, logging.INFO), format='%(asctime)s - %(message)s')
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ShadowMambaError as e:
        logging.error(f"[CLI] ❌ {args.command}: {e}")
        return exit_code_for(e)
    except Exception as e:
        logging.exception(f"[CLI] ❌ {args.command}: unexpected failure: {e}")
        return exit_code_for(e)


if __name__ == "__main__":
    sys.exit(main())
