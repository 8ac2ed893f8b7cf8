"""
ShadowMamba Desk v1.0 · Metric Library
PSNR and SSIM in RGB, mean absolute error in CIELAB, for the whole image
(ALL), the shadow region (S) and the non-shadow region (NS).
Pure functions. No state. No side effects.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from scipy import ndimage

import image_io
import mask_ops
from config import METRIC_CONFIG
from errors import DataError, ShapeError

# sRGB (D65) -> XYZ
RGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
D65_WHITE = np.array([0.95047, 1.0, 1.08883])
LAB_DELTA = 6.0 / 29.0


# ===================================================================
# COLOUR
# ===================================================================

def srgb_to_linear(c):
    c = np.asarray(c, dtype=np.float64)
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def srgb_to_lab(image):
    """3 x H x W sRGB in [0, 1] -> 3 x H x W (L, a, b)."""
    rgb = srgb_to_linear(np.clip(image, 0.0, 1.0))
    xyz = np.tensordot(RGB_TO_XYZ, rgb, axes=(1, 0)) / D65_WHITE[:, None, None]
    d3 = LAB_DELTA ** 3
    f = np.where(xyz > d3, np.cbrt(xyz), xyz / (3 * LAB_DELTA ** 2) + 4.0 / 29.0)
    L = 116.0 * f[1] - 16.0
    a = 500.0 * (f[0] - f[1])
    b = 200.0 * (f[1] - f[2])
    return np.stack([L, a, b])


# ===================================================================
# REGIONS
# ===================================================================

def _region(mask, shape):
    """Boolean H x W selector; None selects everything."""
    if mask is None:
        return np.ones(shape, dtype=bool)
    bits = mask.bits if isinstance(mask, mask_ops.BinaryMask) else np.asarray(mask)
    if bits.shape != tuple(shape):
        raise ShapeError(f"region mask {bits.shape} does not match image {tuple(shape)}")
    return bits.astype(bool)


def region_masks(mask):
    """{"ALL", "S", "NS"} selectors from a ground-truth shadow mask."""
    sel = _region(mask, mask.shape)
    return {"ALL": np.ones_like(sel), "S": sel, "NS": ~sel}


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 3:
        raise ShapeError(f"metric inputs must be equal C x H x W arrays, got {a.shape} and {b.shape}")
    return a, b


# ===================================================================
# PSNR / MSE
# ===================================================================

def masked_mse(a, b, region_mask=None):
    a, b = _check_pair(a, b)
    sel = _region(region_mask, a.shape[1:])
    n = int(sel.sum())
    if n == 0:
        raise DataError("metric region is empty")
    d = (a - b)[:, sel]
    return float((d * d).mean())


def psnr(a, b, region_mask=None, data_range=METRIC_CONFIG["data_range"], cap=METRIC_CONFIG["psnr_cap_db"]):
    """10 log10(range^2 / MSE) over the region, capped."""
    mse = masked_mse(a, b, region_mask)
    if mse == 0.0:
        return cap
    return min(cap, 10.0 * np.log10(data_range ** 2 / mse))


# ===================================================================
# SSIM
# ===================================================================

def gaussian_window(size=METRIC_CONFIG["ssim_window"], sigma=METRIC_CONFIG["ssim_sigma"]):
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def ssim_map(x, y, window=None, data_range=METRIC_CONFIG["data_range"],
             k1=METRIC_CONFIG["ssim_k1"], k2=METRIC_CONFIG["ssim_k2"]):
    """Local SSIM of two H x W channels at every valid window centre."""
    win = gaussian_window() if window is None else window
    r = win.shape[0] // 2
    H, W = x.shape
    if H < win.shape[0] or W < win.shape[1]:
        raise ShapeError(f"image {H}x{W} smaller than the {win.shape[0]}x{win.shape[1]} SSIM window")

    def local_mean(v):
        return ndimage.correlate(v, win, mode="reflect")[r:H - r, r:W - r]

    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mu_x, mu_y = local_mean(x), local_mean(y)
    var_x = local_mean(x * x) - mu_x * mu_x
    var_y = local_mean(y * y) - mu_y * mu_y
    cov = local_mean(x * y) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return num / den


def ssim(a, b, region_mask=None):
    """Mean local SSIM over window centres inside the region, averaged over channels."""
    a, b = _check_pair(a, b)
    H, W = a.shape[1:]
    win = gaussian_window()
    r = win.shape[0] // 2
    sel = _region(region_mask, (H, W))
    if H < win.shape[0] or W < win.shape[1]:
        raise ShapeError(f"image {H}x{W} smaller than the SSIM window")
    centres = sel[r:H - r, r:W - r]
    if not centres.any():
        raise DataError("no SSIM window centre inside the metric region")
    return float(np.mean([ssim_map(a[c], b[c], win)[centres].mean() for c in range(a.shape[0])]))


# ===================================================================
# LAB ERROR
# ===================================================================

def lab_mae(lab_a, lab_b, region_mask=None):
    """Mean |difference| over the region and the three Lab channels."""
    lab_a, lab_b = _check_pair(lab_a, lab_b)
    sel = _region(region_mask, lab_a.shape[1:])
    if not sel.any():
        raise DataError("metric region is empty")
    return float(np.abs(lab_a - lab_b)[:, sel].mean())


def rmae_lab(a, b, region_mask=None):
    """Lab mean absolute error (reported as RMAE)."""
    a, b = _check_pair(a, b)
    return lab_mae(srgb_to_lab(a), srgb_to_lab(b), region_mask)


# ===================================================================
# REPORT
# ===================================================================

def evaluate_pair(pred, gt, mask, name=""):
    """
    One row per region with pixel count, MSE, PSNR, SSIM and Lab MAE.
    Metrics of an empty region are None.
    """
    rows = []
    for region, sel in region_masks(mask).items():
        row = {"name": name, "region": region, "pixels": int(sel.sum()),
               "mse": None, "psnr": None, "ssim": None, "rmae_lab": None}
        if row["pixels"]:
            row["mse"] = masked_mse(pred, gt, sel)
            row["psnr"] = psnr(pred, gt, sel)
            row["rmae_lab"] = rmae_lab(pred, gt, sel)
            try:
                row["ssim"] = ssim(pred, gt, sel)
            except DataError:
                pass
        rows.append(row)
    return rows


def decomposition_holds(rows, tol=1e-10):
    """MSE(ALL) == (n_S MSE(S) + n_NS MSE(NS)) / (n_S + n_NS) for one image's rows."""
    by = {r["region"]: r for r in rows}
    total = by["S"]["pixels"] + by["NS"]["pixels"]
    if total != by["ALL"]["pixels"]:
        return False
    parts = sum(by[k]["pixels"] * by[k]["mse"] for k in ("S", "NS") if by[k]["pixels"])
    return abs(by["ALL"]["mse"] - parts / total) <= tol


class MetricReport:
    """Per-image rows for ALL / S / NS plus means over images."""

    METRICS = ("psnr", "ssim", "rmae_lab")

    def __init__(self):
        self.rows = []
        self.missing = []
        self.failed = []

    def add(self, rows):
        self.rows.extend(rows)

    def images(self):
        return sorted({r["name"] for r in self.rows})

    def aggregate(self):
        out = {}
        for region in METRIC_CONFIG["regions"]:
            sub = [r for r in self.rows if r["region"] == region]
            out[region] = {}
            for m in self.METRICS:
                vals = [r[m] for r in sub if r[m] is not None]
                out[region][m] = float(np.mean(vals)) if vals else None
            out[region]["images"] = len([r for r in sub if r["pixels"]])
        return out

    def to_dict(self):
        return {
            "images": len(self.images()),
            "aggregate": self.aggregate(),
            "missing": list(self.missing),
            "failed": list(self.failed),
            "rmae_definition": "mean absolute error in CIELAB (D65)",
        }


def _evaluate_named(args):
    """(name, rows, None) on success, (name, None, message) when the triplet is unusable."""
    name, pred_path, gt_path, mask_path = args
    try:
        pred = image_io.read_rgb(pred_path)
        gt = image_io.read_rgb(gt_path)
        mask = mask_ops.BinaryMask.load(mask_path)
        if pred.shape != gt.shape:
            raise DataError(f"prediction {pred.shape[1:]} vs ground truth {gt.shape[1:]}")
        if mask.shape != gt.shape[1:]:
            raise DataError(f"mask {mask.shape} vs ground truth {gt.shape[1:]}")
    except DataError as e:
        return name, None, str(e)
    rows = evaluate_pair(pred, gt, mask, name)
    if not decomposition_holds(rows):
        logging.warning(f"[EVAL] ⚠️ region decomposition mismatch on {name}")
    return name, rows, None


def evaluate_directories(pred_dir, gt_dir, mask_dir, workers=METRIC_CONFIG["workers"]):
    """
    Compare every prediction PNG with its same-named ground truth and mask.
    Missing counterparts are listed and excluded; unreadable or mismatched
    triplets are recorded under `failed`. Row order follows sorted names.
    """
    report = MetricReport()
    jobs = []
    for p in image_io.list_pngs(pred_dir):
        gt_path = Path(gt_dir) / p.name
        mask_path = Path(mask_dir) / p.name
        absent = [str(x) for x in (gt_path, mask_path) if not x.is_file()]
        if absent:
            report.missing.append({"name": p.name, "absent": absent})
            logging.warning(f"[EVAL] ⚠️ {p.name}: missing {absent}")
            continue
        jobs.append((p.name, p, gt_path, mask_path))

    with ThreadPoolExecutor(max_workers=max(1, int(workers))) as pool:
        for name, rows, error in pool.map(_evaluate_named, jobs):
            if error is not None:
                report.failed.append({"name": name, "error": error})
                logging.warning(f"[EVAL] ⚠️ {name}: {error}")
                continue
            report.add(rows)
    logging.info(
        f"[EVAL] 📊 {len(jobs) - len(report.failed)} image(s) evaluated, "
        f"{len(report.missing)} missing, {len(report.failed)} failed"
    )
    return report
