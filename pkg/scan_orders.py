"""
ShadowMamba Desk v1.0 · Scan Orders
2D -> 1D scan permutations: local window scan, global cross scan, region scan
and the boundary-region scan that groups windows by shadow class.

Window classes:
    0 = non-shadow window (all pixels 0)
    1 = boundary window (mixed)
    2 = shadow window (all pixels 1)
"""

import json
import logging
from enum import Enum

import numpy as np

import mask_ops
from config import SCAN_CONFIG
from errors import DataError, ShapeError, UsageError
from tensor_core import gather, reshape

NON_SHADOW, BOUNDARY, SHADOW = 0, 1, 2
CATEGORIES = (NON_SHADOW, BOUNDARY, SHADOW)
CATEGORY_NAMES = {NON_SHADOW: "non_shadow", BOUNDARY: "boundary", SHADOW: "shadow"}

WINDOW_STRATEGIES = ("local", "boundary_region")


# ===================================================================
# TYPES
# ===================================================================

class Direction(str, Enum):
    HORIZONTAL = "horizontal"
    VERTICAL = "vertical"
    HORIZONTAL_REVERSE = "horizontal_reverse"
    VERTICAL_REVERSE = "vertical_reverse"

    @property
    def is_reverse(self):
        return self in (Direction.HORIZONTAL_REVERSE, Direction.VERTICAL_REVERSE)

    @property
    def forward(self):
        """The forward direction this one reverses (itself if forward)."""
        return {
            Direction.HORIZONTAL_REVERSE: Direction.HORIZONTAL,
            Direction.VERTICAL_REVERSE: Direction.VERTICAL,
        }.get(self, self)

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value))
        except ValueError:
            raise UsageError(f"unknown direction {value!r}; expected one of {[d.value for d in cls]}")


ALL_DIRECTIONS = tuple(Direction(d) for d in SCAN_CONFIG["directions"])


class WindowClassGrid:
    """Per-window labels in {0, 1, 2} tiling a (padded) feature map."""

    def __init__(self, labels, window):
        arr = np.asarray(labels)
        if arr.ndim != 2:
            raise ShapeError(f"window class grid must be 2D, got shape {arr.shape}")
        if arr.size and not np.isin(arr, CATEGORIES).all():
            raise ShapeError("window class labels must be 0, 1 or 2")
        self.labels = arr.astype(np.int8)
        self.labels.setflags(write=False)
        self.window = int(window)

    @property
    def rows(self):
        return self.labels.shape[0]

    @property
    def cols(self):
        return self.labels.shape[1]

    @property
    def map_shape(self):
        return self.rows * self.window, self.cols * self.window

    def categories(self):
        return sorted(int(c) for c in np.unique(self.labels))

    def counts(self):
        return {c: int((self.labels == c).sum()) for c in CATEGORIES}

    def __eq__(self, other):
        return (
            isinstance(other, WindowClassGrid)
            and self.window == other.window
            and np.array_equal(self.labels, other.labels)
        )

    def __repr__(self):
        return f"WindowClassGrid({self.rows}x{self.cols}, window={self.window}, counts={self.counts()})"


class ScanOrder:
    """
    perm[i] = flat spatial index visited at sequence position i.
    inv is its inverse. Immutable.
    """

    def __init__(self, perm, height, width, strategy, direction, window=0):
        perm = np.asarray(perm, dtype=np.int64)
        if not validate_perm(perm, height * width):
            raise ShapeError(f"{strategy}/{direction}: perm is not a permutation of 0..{height * width - 1}")
        inv = np.empty_like(perm)
        inv[perm] = np.arange(perm.size)
        perm.setflags(write=False)
        inv.setflags(write=False)
        self.perm = perm
        self.inv = inv
        self.height = int(height)
        self.width = int(width)
        self.strategy = strategy
        self.direction = Direction.parse(direction)
        self.window = int(window)

    @property
    def shape(self):
        return self.height, self.width

    def __len__(self):
        return self.perm.size

    def __repr__(self):
        return (
            f"ScanOrder({self.strategy}, {self.direction.value}, "
            f"{self.height}x{self.width}, window={self.window})"
        )


def validate_perm(perm, length):
    """True iff perm is a permutation of 0..length-1."""
    perm = np.asarray(perm)
    if perm.ndim != 1 or perm.size != length:
        return False
    if length == 0:
        return True
    if perm.min() < 0 or perm.max() >= length:
        return False
    return np.bincount(perm, minlength=length).max() == 1


# ===================================================================
# WINDOW CLASSIFICATION
# ===================================================================

def _check_divisible(H, W, window):
    if window < 1:
        raise ShapeError(f"window must be >= 1, got {window}")
    if H % window or W % window:
        raise ShapeError(f"map {H}x{W} is not divisible by window {window}")


def _window_blocks(bits, window):
    H, W = bits.shape
    _check_divisible(H, W, window)
    return bits.reshape(H // window, window, W // window, window)


def classify_from_pair(any1, all1, window):
    """Classes from block summaries: all1 everywhere -> 2, no any1 -> 0, else 1."""
    any_blocks = _window_blocks(np.asarray(any1), window)
    all_blocks = _window_blocks(np.asarray(all1), window)
    full = all_blocks.min(axis=(1, 3)) == 1
    touched = any_blocks.max(axis=(1, 3)) == 1
    labels = np.where(full, SHADOW, np.where(touched, BOUNDARY, NON_SHADOW))
    return WindowClassGrid(labels, window)


def classify_windows(mask, window):
    """
    Label every window of a (padded) mask.

    Args:
        mask: BinaryMask or HxW {0,1} array, H and W divisible by window
        window: window side

    Returns:
        WindowClassGrid
    """
    bits = mask.bits if isinstance(mask, mask_ops.BinaryMask) else np.asarray(mask)
    return classify_from_pair(bits, bits, window)


# ===================================================================
# REFLECT PADDING AND CROPPING AS GATHER INDICES
# ===================================================================

def padded_size(n, window):
    if int(window) < 1:
        raise ShapeError(f"window must be >= 1, got {window}")
    return -(-int(n) // int(window)) * int(window)


def pad_to_window(H, W, window):
    return padded_size(H, window), padded_size(W, window)


def reflect_index(n, target):
    """Source row for each of `target` rows under mirror padding (no edge repeat)."""
    i = np.arange(target)
    if n == 1:
        return np.zeros(target, dtype=np.int64)
    period = 2 * (n - 1)
    i = i % period
    return np.where(i < n, i, period - i).astype(np.int64)


def reflect_pad_index(H, W, Hp, Wp):
    """Flat index into an HxW map for every pixel of the reflect-padded HpxWp map."""
    rows = reflect_index(H, Hp)
    cols = reflect_index(W, Wp)
    return (rows[:, None] * W + cols[None, :]).ravel()


def crop_index(H, W, Hp, Wp):
    """Flat index into an HpxWp map for every pixel of its top-left HxW crop."""
    if H > Hp or W > Wp:
        raise ShapeError(f"cannot crop {H}x{W} out of {Hp}x{Wp}")
    return (np.arange(H)[:, None] * Wp + np.arange(W)[None, :]).ravel()


def reflect_pad_bits(bits, Hp, Wp):
    bits = np.asarray(bits)
    H, W = bits.shape
    return bits.reshape(-1)[reflect_pad_index(H, W, Hp, Wp)].reshape(Hp, Wp)


def classify_windows_receptive(mask, level, window):
    """
    Classes for a level whose maps are mask/2^level, from the full-resolution
    mask's any1/all1 block pair, reflect-padded to a multiple of window.
    """
    any1, all1 = mask_ops.downsample_region(mask, 2 ** int(level))
    h, w = any1.shape
    hp, wp = pad_to_window(h, w, window)
    return classify_from_pair(
        reflect_pad_bits(any1.bits, hp, wp), reflect_pad_bits(all1.bits, hp, wp), window
    )


def classify_windows_maxpool(mask, level, window):
    """Classes from a max-pooled mask (boundary windows absorb pooled noise)."""
    pooled = mask_ops.maxpool_mask(mask, 2 ** int(level))
    h, w = pooled.shape
    hp, wp = pad_to_window(h, w, window)
    return classify_windows(reflect_pad_bits(pooled.bits, hp, wp), window)


# ===================================================================
# ORDER CONSTRUCTION
# ===================================================================

def raster(h, w, d):
    """Flat indices of an h x w grid enumerated in direction d."""
    d = Direction.parse(d)
    idx = np.arange(h * w, dtype=np.int64)
    if d.forward is Direction.VERTICAL:
        idx = idx.reshape(h, w).T.ravel()
    return idx[::-1].copy() if d.is_reverse else idx


def _expand_windows(window_seq, W, cols, window, d):
    """Pixel sequence for a sequence of window ids, in-window order d."""
    wr = window_seq // cols
    wc = window_seq % cols
    local = raster(window, window, d)
    py, px = local // window, local % window
    return ((wr[:, None] * window + py[None, :]) * W + wc[:, None] * window + px[None, :]).ravel()


def build_local_order(H, W, window, d):
    """Window-by-window scan; windows and in-window pixels both follow d."""
    d = Direction.parse(d)
    _check_divisible(H, W, window)
    rows, cols = H // window, W // window
    perm = _expand_windows(raster(rows, cols, d), W, cols, window, d)
    return ScanOrder(perm, H, W, "local", d, window)


def _stable_group(seq, labels, category_order):
    rank = np.empty(3, dtype=np.int64)
    rank[list(category_order)] = np.arange(3)
    keys = rank[labels[seq]]
    return seq[np.argsort(keys, kind="stable")]


def build_boundary_region_order(classes, H, W, window, d, category_order=SCAN_CONFIG["category_order"]):
    """
    Local scan with windows stably grouped by class (0, 1, 2 by default).
    Reverse directions are the exact reversal of their forward order.
    """
    d = Direction.parse(d)
    _check_divisible(H, W, window)
    rows, cols = H // window, W // window
    if classes.window != window or (classes.rows, classes.cols) != (rows, cols):
        raise ShapeError(
            f"class grid {classes.rows}x{classes.cols} (window {classes.window}) does not tile "
            f"{H}x{W} with window {window}"
        )
    fwd = d.forward
    seq = _stable_group(raster(rows, cols, fwd), classes.labels.reshape(-1), category_order)
    perm = _expand_windows(seq, W, cols, window, fwd)
    if d.is_reverse:
        perm = perm[::-1].copy()
    return ScanOrder(perm, H, W, "boundary_region", d, window)


def build_cross_order(H, W, d):
    """Pixel-level raster in direction d over the whole map."""
    d = Direction.parse(d)
    return ScanOrder(raster(H, W, d), H, W, "cross", d, 0)


def build_region_order(mask, H, W, d):
    """
    Pixels grouped by mask value (non-shadow first), each group in the
    direction-d cross-scan order. mask may carry 0/1 bits or 0/1/2 classes.
    """
    d = Direction.parse(d)
    labels = mask.bits if isinstance(mask, mask_ops.BinaryMask) else np.asarray(mask)
    if labels.shape != (H, W):
        raise ShapeError(f"region mask {labels.shape} does not match map {H}x{W}")
    fwd = d.forward
    perm = _stable_group(raster(H, W, fwd), labels.reshape(-1).astype(np.int64), (0, 1, 2))
    if d.is_reverse:
        perm = perm[::-1].copy()
    return ScanOrder(perm, H, W, "region", d, 0)


def build_orders(strategy, H, W, window=0, classes=None, region_labels=None, directions=ALL_DIRECTIONS):
    """
    The four directional orders of one strategy over an H x W map.

    Args:
        strategy: local | boundary_region | cross | region
        window: window side (local, boundary_region)
        classes: WindowClassGrid (boundary_region)
        region_labels: HxW labels (region)

    Returns:
        tuple of ScanOrder in `directions` order
    """
    if strategy == "local":
        orders = tuple(build_local_order(H, W, window, d) for d in directions)
    elif strategy == "boundary_region":
        if classes is None:
            raise UsageError("boundary_region orders need a WindowClassGrid")
        orders = tuple(build_boundary_region_order(classes, H, W, window, d) for d in directions)
    elif strategy == "cross":
        orders = tuple(build_cross_order(H, W, d) for d in directions)
    elif strategy == "region":
        if region_labels is None:
            raise UsageError("region orders need a per-pixel label map")
        orders = tuple(build_region_order(region_labels, H, W, d) for d in directions)
    else:
        raise UsageError(f"unknown scan strategy {strategy!r}")
    logging.debug(f"[SCAN] built {len(orders)} {strategy} order(s) for {H}x{W} (window {window})")
    return orders


# ===================================================================
# APPLY / UNAPPLY
# ===================================================================

def apply(order, x):
    """C x H x W -> C x L along order.perm (differentiable gather)."""
    C = x.shape[0]
    if x.ndim != 3 or tuple(x.shape[1:]) != order.shape:
        raise ShapeError(f"apply: tensor {x.shape} does not match order {order.shape}")
    return gather(reshape(x, (C, len(order))), order.perm)


def unapply(order, y):
    """C x L -> C x H x W, inverse of apply."""
    if y.ndim != 2 or y.shape[1] != len(order):
        raise ShapeError(f"unapply: tensor {y.shape} does not match order length {len(order)}")
    return reshape(gather(y, order.inv), (y.shape[0], order.height, order.width))


# ===================================================================
# DISTANCE STATISTICS
# ===================================================================

def window_sequence(order):
    """Window ids (row-major over the window grid) in sequence order."""
    if order.strategy not in WINDOW_STRATEGIES:
        raise UsageError(f"{order.strategy} orders have no window structure")
    area = order.window * order.window
    cols = order.width // order.window
    starts = order.perm[::area]
    return (starts // order.width) // order.window * cols + (starts % order.width) // order.window


def _pair_distance_summary(positions):
    """Mean and max |p - q| over all pairs, via sorted prefix weights."""
    k = positions.size
    if k < 2:
        return {"count": int(k), "pairs": 0, "total": 0.0, "mean": 0.0, "max": 0.0}
    p = np.sort(positions).astype(np.float64)
    weights = 2.0 * np.arange(k) - k + 1.0
    total = float((weights * p).sum())
    pairs = k * (k - 1) // 2
    return {"count": int(k), "pairs": pairs, "total": total, "mean": total / pairs, "max": float(p[-1] - p[0])}


def intra_category_distance_stats(order, classes):
    """
    Pairwise sequence distance between same-category windows, measured at
    window start positions.

    Returns:
        dict: {category: {"count", "pairs", "total", "mean", "max"}}
    """
    seq = window_sequence(order)
    if seq.size != classes.rows * classes.cols:
        raise ShapeError(f"order has {seq.size} windows, class grid has {classes.rows * classes.cols}")
    area = order.window * order.window
    labels = classes.labels.reshape(-1)[seq]
    starts = np.arange(seq.size) * area
    return {c: _pair_distance_summary(starts[labels == c]) for c in CATEGORIES}


def _ratio(br, local):
    return 1.0 if local == 0 else br / local


def distance_benchmark(mask, window, direction=Direction.HORIZONTAL):
    """
    Local vs boundary-region intra-category distances for one mask
    (reflect-padded to a multiple of window).

    Returns:
        dict with per-category rows and the pooled mean ratio
    """
    bits = mask.bits if isinstance(mask, mask_ops.BinaryMask) else np.asarray(mask)
    H, W = bits.shape
    Hp, Wp = pad_to_window(H, W, window)
    classes = classify_windows(reflect_pad_bits(bits, Hp, Wp), window)
    local = intra_category_distance_stats(build_local_order(Hp, Wp, window, direction), classes)
    br = intra_category_distance_stats(
        build_boundary_region_order(classes, Hp, Wp, window, direction), classes
    )

    rows = []
    for c in CATEGORIES:
        rows.append({
            "category": CATEGORY_NAMES[c],
            "windows": local[c]["count"],
            "local_mean": local[c]["mean"],
            "local_max": local[c]["max"],
            "br_mean": br[c]["mean"],
            "br_max": br[c]["max"],
            "ratio": _ratio(br[c]["mean"], local[c]["mean"]),
        })
    local_total = sum(local[c]["total"] for c in CATEGORIES)
    br_total = sum(br[c]["total"] for c in CATEGORIES)
    return {"rows": rows, "pooled_ratio": _ratio(br_total, local_total), "categories": classes.categories()}


# ===================================================================
# VISUALISATION AND EXPORT
# ===================================================================

def position_heatmap(order):
    """H x W map of each pixel's sequence position."""
    return order.inv.reshape(order.height, order.width).copy()


def order_to_dict(order):
    return {
        "strategy": order.strategy,
        "direction": order.direction.value,
        "window": order.window,
        "height": order.height,
        "width": order.width,
        "perm": [int(p) for p in order.perm],
    }


def save_order_json(order, path):
    with open(path, "w") as f:
        json.dump(order_to_dict(order), f)


def load_order_json(path):
    """Reload an exported order; a non-bijective perm raises DataError."""
    try:
        with open(path, "r") as f:
            data = json.load(f)
        H, W = int(data["height"]), int(data["width"])
        perm = np.asarray(data["perm"], dtype=np.int64)
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise DataError(f"cannot read scan order {path}: {e}")
    if not validate_perm(perm, H * W):
        raise DataError(f"scan order {path} is not a permutation of 0..{H * W - 1}")
    return ScanOrder(perm, H, W, data.get("strategy", "local"), data.get("direction", "horizontal"),
                     data.get("window", 0))
