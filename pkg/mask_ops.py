"""
ShadowMamba Desk v1.0 · Mask Ops
Binary shadow masks, square-footprint morphology and the boundary-preserving
denoiser: M_denoised = M * Dilation(Closing(Opening(M))).
Pure functions on immutable masks.
"""

import logging

import numpy as np
from scipy import ndimage

import image_io
from config import MASK_CONFIG
from errors import ConfigError, ShapeError


# ===================================================================
# TYPES
# ===================================================================

class BinaryMask:
    """HxW grid of {0, 1}; 1 = shadow."""

    def __init__(self, bits):
        arr = np.asarray(bits)
        if arr.ndim != 2:
            raise ShapeError(f"mask must be 2D, got shape {arr.shape}")
        if arr.dtype == bool:
            arr = arr.astype(np.uint8)
        if arr.size and not np.isin(arr, (0, 1)).all():
            raise ShapeError("mask values must be 0 or 1")
        self.bits = arr.astype(np.uint8)
        self.bits.setflags(write=False)

    @property
    def height(self):
        return self.bits.shape[0]

    @property
    def width(self):
        return self.bits.shape[1]

    @property
    def shape(self):
        return self.bits.shape

    @classmethod
    def zeros(cls, height, width):
        return cls(np.zeros((height, width), dtype=np.uint8))

    @classmethod
    def ones(cls, height, width):
        return cls(np.ones((height, width), dtype=np.uint8))

    @classmethod
    def load(cls, path):
        return cls(image_io.read_mask_bits(path))

    def save(self, path):
        image_io.write_mask_bits(path, self.bits)

    def as_bool(self):
        return self.bits.astype(bool)

    def count(self):
        return int(self.bits.sum())

    def complement(self):
        return BinaryMask(1 - self.bits)

    def __eq__(self, other):
        return isinstance(other, BinaryMask) and np.array_equal(self.bits, other.bits)

    def __le__(self, other):
        return bool(np.all(self.bits <= other.bits))

    def __repr__(self):
        return f"BinaryMask({self.height}x{self.width}, shadow={self.count()})"


class StructuringElement:
    """Square footprint of odd size >= 3."""

    def __init__(self, size=MASK_CONFIG["se_size"]):
        size = int(size)
        if size < 3 or size % 2 == 0:
            raise ConfigError(f"structuring element size must be odd and >= 3, got {size}")
        self.size = size
        self.shape = "square"

    @property
    def footprint(self):
        return np.ones((self.size, self.size), dtype=bool)

    def __repr__(self):
        return f"StructuringElement({self.size}x{self.size})"


UNIT_SE = StructuringElement(3)


def load_mask(path):
    return BinaryMask.load(path)


def save_mask(m, path):
    m.save(path)
    return path


# ===================================================================
# MORPHOLOGY (pixels outside the image count as `border`)
# ===================================================================

def erode(m, se=UNIT_SE, border=0):
    """1 iff every pixel under the footprint is 1."""
    out = ndimage.binary_erosion(m.as_bool(), structure=se.footprint, border_value=border)
    return BinaryMask(out)


def dilate(m, se=UNIT_SE, border=0):
    """1 iff any pixel under the footprint is 1."""
    if border:
        # binary_dilation has no border_value semantics for ones; pad explicitly
        r = se.size // 2
        padded = np.pad(m.as_bool(), r, constant_values=True)
        out = ndimage.binary_dilation(padded, structure=se.footprint)[r:-r, r:-r]
        return BinaryMask(out)
    return BinaryMask(ndimage.binary_dilation(m.as_bool(), structure=se.footprint))


def opening(m, se=UNIT_SE):
    return dilate(erode(m, se), se)


def closing(m, se=UNIT_SE):
    return erode(dilate(m, se), se)


def rough_mask(m, se=UNIT_SE, rough_dilate_radius=MASK_CONFIG["dilate_radius"]):
    """M_rough = Dilation(Closing(Opening(M))), dilation as `radius` 3x3 passes."""
    if rough_dilate_radius < 1:
        raise ConfigError(f"rough_dilate_radius must be >= 1, got {rough_dilate_radius}")
    m_close = closing(opening(m, se), se)
    grown = ndimage.binary_dilation(
        m_close.as_bool(), structure=UNIT_SE.footprint, iterations=int(rough_dilate_radius)
    )
    return BinaryMask(grown)


def denoise_mask(m, se=UNIT_SE, rough_dilate_radius=MASK_CONFIG["dilate_radius"]):
    """
    Remove non-shadow-region noise without moving shadow boundaries.

    Returns:
        BinaryMask equal to m where M_rough is 1, else 0
    """
    rough = rough_mask(m, se, rough_dilate_radius)
    out = BinaryMask(m.bits & rough.bits)
    removed = m.count() - out.count()
    if removed:
        logging.debug(f"[MASK] denoise removed {removed} pixel(s) of {m.count()}")
    return out


# ===================================================================
# RESOLUTION CHANGES
# ===================================================================

def downsample_region(m, factor):
    """
    Block summaries of a mask at 1/factor resolution.

    Returns:
        (any1, all1): any1 = block contains a 1; all1 = block is entirely 1
    """
    factor = int(factor)
    if factor < 1 or factor & (factor - 1):
        raise ConfigError(f"factor must be a power of two, got {factor}")
    H, W = m.shape
    if H % factor or W % factor:
        raise ShapeError(f"mask {H}x{W} not divisible by factor {factor}")
    blocks = m.bits.reshape(H // factor, factor, W // factor, factor)
    any1 = blocks.max(axis=(1, 3))
    all1 = blocks.min(axis=(1, 3))
    return BinaryMask(any1), BinaryMask(all1)


def maxpool_mask(m, factor):
    """Max-pooled mask (the any1 half of downsample_region)."""
    return downsample_region(m, factor)[0]


# ===================================================================
# DIAGNOSTICS AND FIXTURES
# ===================================================================

def connected_components(m):
    """8-connected components. Returns (labels array, count)."""
    labels, n = ndimage.label(m.bits, structure=np.ones((3, 3), dtype=int))
    return labels, int(n)


def noise_fixture(size=64, blobs=((22, 22, 20, 20),), n_noise=12, min_distance=10, seed=0):
    """
    Solid rectangular blobs plus isolated single-pixel noise far from them.

    Args:
        size: square side
        blobs: (top, left, height, width) rectangles
        n_noise: number of isolated noise pixels
        min_distance: Chebyshev distance every noise pixel keeps from any blob
        seed: numpy Generator seed

    Returns:
        (noisy BinaryMask, clean BinaryMask, list of (y, x) noise pixels)
    """
    rng = np.random.default_rng(seed)
    clean = np.zeros((size, size), dtype=np.uint8)
    for top, left, h, w in blobs:
        clean[top:top + h, left:left + w] = 1

    # Chebyshev distance from the blobs: grow by a (2d+1) footprint
    keep_out = ndimage.binary_dilation(clean.astype(bool), structure=np.ones((3, 3)), iterations=min_distance)
    taken = keep_out.copy()
    noise = []
    candidates = np.argwhere(~taken)
    rng.shuffle(candidates)
    for y, x in candidates:
        if len(noise) >= n_noise:
            break
        if taken[y, x]:
            continue
        noise.append((int(y), int(x)))
        # keep noise pixels isolated from each other
        taken[max(0, y - 2):y + 3, max(0, x - 2):x + 3] = True

    noisy = clean.copy()
    for y, x in noise:
        noisy[y, x] = 1
    return BinaryMask(noisy), BinaryMask(clean), noise
