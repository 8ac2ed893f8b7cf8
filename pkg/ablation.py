"""
ShadowMamba Desk v1.0 · Ablation Sweeps
Desk-scale variants trained on the synthetic set with identical seeds and
step counts: block arrangement, BR scanning mechanism, mask handling, window
size and module removal (SFFN, BRSSM, GSSM).
"""

import logging

import numpy as np

import metrics
import synthetic
from config import ABLATION_CONFIG, ARRANGEMENTS, ModelConfig
from errors import UsageError
from model import ShadowMamba
from tensor_core import no_grad
from train import ToyTrainer, as_pairs

AXES = ("arrangement", "scan", "mask", "window", "module")


def ablation_config(seed, **changes):
    """Small model used by every sweep (width 8, one block per layer)."""
    base = dict(
        base_width=ABLATION_CONFIG["width"],
        blocks_per_layer=[ABLATION_CONFIG["blocks"]] * 7,
        window=ABLATION_CONFIG["window"],
        seed=seed,
    )
    base.update(changes)
    return ModelConfig(**base)


def variants(axis):
    """{variant name: ModelConfig overrides} for one ablation axis."""
    if axis == "arrangement":
        return {name: {"arrangement": list(kinds)} for name, kinds in ARRANGEMENTS.items()}
    if axis == "scan":
        return {s: {"scan_strategy": s} for s in ABLATION_CONFIG["strategies"]}
    if axis == "mask":
        return {
            "maxpool": {"mask_downsample": "maxpool", "denoise_mask": False},
            "no_denoise": {"mask_downsample": "receptive", "denoise_mask": False},
            "denoise": {"mask_downsample": "receptive", "denoise_mask": True},
        }
    if axis == "window":
        return {f"window_{w}": {"window": w} for w in ABLATION_CONFIG["windows"]}
    if axis == "module":
        return {
            "full": {},
            "no_sffn": {"use_sffn": False},
            "no_brssm": {"arrangement": list(ARRANGEMENTS["all_global"])},
            "no_gssm": {"arrangement": list(ARRANGEMENTS["all_br"])},
        }
    raise UsageError(f"unknown ablation axis {axis!r}; expected one of {AXES}")


def run_variant(cfg, samples, steps):
    """
    Train one variant and score it on its own training set.

    Returns:
        dict: final_loss plus mean PSNR over ALL / S / NS
    """
    pairs = as_pairs(samples, cfg)
    model = ShadowMamba(cfg)
    trainer = ToyTrainer(model, pairs, steps, seed=cfg.seed)
    trainer.run()

    scores = {"ALL": [], "S": [], "NS": []}
    with no_grad():
        for (inp, target), s in zip(pairs, samples):
            restored = model(inp.image, inp.mask).restored
            clean = s.get("clean_mask", s["mask"])
            for region, sel in metrics.region_masks(clean).items():
                if sel.any():
                    scores[region].append(metrics.psnr(restored, target, sel))

    return {
        "final_loss": trainer.evaluate_loss(),
        "psnr_all": float(np.mean(scores["ALL"])),
        "psnr_s": float(np.mean(scores["S"])) if scores["S"] else None,
        "psnr_ns": float(np.mean(scores["NS"])) if scores["NS"] else None,
    }


def run_axis(axis, seeds=None, steps=None, size=None, count=None, only=None):
    """
    Every variant of an axis on every seed.

    Args:
        axis: arrangement | scan | mask | window | module
        seeds: iterable of seeds (default range(ABLATION_CONFIG["seeds"]))
        only: optional subset of variant names

    Returns:
        list of row dicts (axis, variant, seed, final_loss, psnr_*)
    """
    seeds = list(range(ABLATION_CONFIG["seeds"])) if seeds is None else list(seeds)
    steps = ABLATION_CONFIG["steps"] if steps is None else steps
    size = size or ABLATION_CONFIG["size"]
    count = count or ABLATION_CONFIG["count"]
    mask_noise = ABLATION_CONFIG["noise_pixels"] if axis == "mask" else 0
    table = variants(axis)
    if only:
        unknown = sorted(set(only) - set(table))
        if unknown:
            raise UsageError(f"unknown {axis} variant(s) {unknown}")
        table = {k: v for k, v in table.items() if k in only}

    rows = []
    for seed in seeds:
        samples = synthetic.make_toy_dataset(count, size, seed=seed, mask_noise=mask_noise)
        for name, changes in table.items():
            result = run_variant(ablation_config(seed, **changes), samples, steps)
            rows.append({"axis": axis, "variant": name, "seed": seed, **result})
            logging.info(
                f"[ABLATE] {axis}/{name} seed {seed}: loss {result['final_loss']:.5f} "
                f"| PSNR {result['psnr_all']:.2f} dB"
            )
    return rows


def scan_mechanism_echo(seeds=None, steps=None, size=None, count=None):
    """
    Boundary-region vs local scanning (default arrangement) on identical seeds.

    Returns:
        dict: {"wins": seeds where boundary_region loss <= local loss, "seeds": n, "rows": [...]}
    """
    rows = run_axis("scan", seeds, steps, size, count, only=("local", "boundary_region"))
    by_seed = {}
    for r in rows:
        by_seed.setdefault(r["seed"], {})[r["variant"]] = r["final_loss"]
    wins = sum(1 for v in by_seed.values() if v["boundary_region"] <= v["local"])
    logging.info(f"[ABLATE] 🏁 boundary-region <= local on {wins}/{len(by_seed)} seed(s)")
    return {"wins": wins, "seeds": len(by_seed), "rows": rows}
