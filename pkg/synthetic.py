"""
ShadowMamba Desk v1.0 · Synthetic Shadow Set
Flat or textured backgrounds darkened inside random polygons by a
multiplicative attenuation in [0.3, 0.7]. Masks are exact.
"""

import logging
from pathlib import Path

import cv2
import numpy as np
from scipy import ndimage

import image_io
import mask_ops
from config import TOY_DATA_CONFIG
from errors import ConfigError


def random_polygon_mask(size, rng, min_vertices=TOY_DATA_CONFIG["min_vertices"],
                        max_vertices=TOY_DATA_CONFIG["max_vertices"]):
    """Star-shaped random polygon rasterised with cv2.fillPoly."""
    n = int(rng.integers(min_vertices, max_vertices + 1))
    cy, cx = rng.uniform(0.3, 0.7, size=2) * size
    angles = np.sort(rng.uniform(0.0, 2.0 * np.pi, size=n))
    radii = rng.uniform(0.15, 0.35, size=n) * size
    pts = np.stack([cx + radii * np.cos(angles), cy + radii * np.sin(angles)], axis=1)
    pts = np.clip(np.rint(pts), 0, size - 1).astype(np.int32)

    canvas = np.zeros((size, size), dtype=np.uint8)
    cv2.fillPoly(canvas, [pts.reshape(-1, 1, 2)], 1)
    return canvas


def background(size, rng, textured):
    """3 x size x size background in [0.2, 0.95]."""
    base = rng.uniform(0.35, 0.9, size=(3, 1, 1))
    if not textured:
        return np.broadcast_to(base, (3, size, size)).copy()
    noise = ndimage.gaussian_filter(rng.standard_normal((3, size, size)), sigma=(0, 2.0, 2.0))
    noise /= np.abs(noise).max() + 1e-12
    return np.clip(base + 0.15 * noise, 0.2, 0.95)


def make_toy_sample(size, rng, textured=None, attenuation=TOY_DATA_CONFIG["attenuation"]):
    """
    Returns:
        dict: {"image": shadowed 3xHxW, "mask": BinaryMask, "target": shadow-free 3xHxW}
    """
    if textured is None:
        textured = bool(rng.integers(0, 2))
    mask_bits = random_polygon_mask(size, rng)
    target = background(size, rng, textured)
    lo, hi = attenuation
    factor = rng.uniform(lo, hi, size=(3, 1, 1))
    image = np.where(mask_bits[None] == 1, target * factor, target)
    return {"image": image, "mask": mask_ops.BinaryMask(mask_bits), "target": target}


def add_mask_noise(mask, n_pixels, rng):
    """Flip n isolated background pixels to shadow (detector-style speckle)."""
    bits = mask.bits.copy()
    free = np.argwhere(bits == 0)
    if n_pixels <= 0 or free.size == 0:
        return mask
    pick = free[rng.choice(len(free), size=min(n_pixels, len(free)), replace=False)]
    bits[pick[:, 0], pick[:, 1]] = 1
    return mask_ops.BinaryMask(bits)


def make_toy_dataset(n=TOY_DATA_CONFIG["count"], size=TOY_DATA_CONFIG["size"], seed=0, mask_noise=0):
    """
    Deterministic list of n toy samples.

    Args:
        n: sample count
        size: square side in pixels
        seed: numpy Generator seed
        mask_noise: isolated speckle pixels added to each mask (clean mask kept as "clean_mask")

    Returns:
        list of sample dicts (see make_toy_sample)
    """
    if n < 1 or size < 8:
        raise ConfigError(f"toy dataset needs n >= 1 and size >= 8, got n={n}, size={size}")
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        s = make_toy_sample(size, rng, textured=bool(i % 2))
        if mask_noise:
            s["clean_mask"] = s["mask"]
            s["mask"] = add_mask_noise(s["mask"], mask_noise, rng)
        samples.append(s)
    logging.debug(f"[TRAIN] toy dataset: {n} x {size}x{size} (seed {seed}, mask noise {mask_noise})")
    return samples


def write_toy_dataset(out_dir, samples):
    """Write samples as image/ mask/ target/ PNG triplets with matching names."""
    out = Path(out_dir)
    names = []
    for i, s in enumerate(samples):
        name = f"toy_{i:03d}.png"
        image_io.write_rgb(out / "image" / name, s["image"])
        s["mask"].save(out / "mask" / name)
        image_io.write_rgb(out / "target" / name, s["target"])
        names.append(name)
    logging.info(f"[CLI] wrote {len(names)} synthetic triplet(s) to {out}")
    return names
