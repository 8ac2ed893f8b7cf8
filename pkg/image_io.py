"""
ShadowMamba Desk v1.0 · Image I/O
8-bit PNG in and out. RGB images become 3xHxW reals in [0, 1];
masks become HxW {0, 1} arrays (>= 128 is shadow).
"""

import logging
from pathlib import Path

import cv2
import numpy as np

from config import MASK_CONFIG
from errors import DataError


def read_rgb(path, dtype=np.float64):
    """Read an 8-bit sRGB PNG as a 3xHxW array in [0, 1]."""
    img = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if img is None or img.size == 0:
        raise DataError(f"cannot read image {path}")
    rgb = cv2.cvtColor(img, cv2.COLOR_BGR2RGB)
    return (rgb.astype(dtype) / 255.0).transpose(2, 0, 1)


def write_rgb(path, image):
    """Write a 3xHxW array in [0, 1] as an 8-bit PNG."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    u8 = np.rint(arr.transpose(1, 2, 0) * 255.0).astype(np.uint8)
    _ensure_parent(path)
    if not cv2.imwrite(str(path), cv2.cvtColor(u8, cv2.COLOR_RGB2BGR)):
        raise DataError(f"cannot write image {path}")


def read_mask_bits(path):
    """Read a single-channel PNG as HxW uint8 bits."""
    img = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if img is None or img.size == 0:
        raise DataError(f"cannot read mask {path}")
    return (img >= MASK_CONFIG["binarize_threshold"]).astype(np.uint8)


def write_mask_bits(path, bits):
    """Write HxW {0,1} bits as a {0, 255} single-channel PNG."""
    u8 = (np.asarray(bits) > 0).astype(np.uint8) * 255
    _ensure_parent(path)
    if not cv2.imwrite(str(path), u8):
        raise DataError(f"cannot write mask {path}")


def write_heatmap(path, values):
    """Colour-map an HxW array (normalised to 0..255) and write it as PNG."""
    v = np.asarray(values, dtype=np.float64)
    span = v.max() - v.min() if v.size else 0.0
    norm = (v - v.min()) / span if span > 0 else np.zeros_like(v)
    u8 = np.rint(norm * 255.0).astype(np.uint8)
    _ensure_parent(path)
    if not cv2.imwrite(str(path), cv2.applyColorMap(u8, cv2.COLORMAP_VIRIDIS)):
        raise DataError(f"cannot write heatmap {path}")


def list_pngs(directory):
    """Sorted PNG files of a directory (non-recursive)."""
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"not a directory: {directory}")
    files = sorted(p for p in d.iterdir() if p.suffix.lower() == ".png")
    logging.debug(f"[IO] {len(files)} PNG file(s) in {directory}")
    return files


def _ensure_parent(path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
