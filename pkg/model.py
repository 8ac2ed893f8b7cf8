"""
ShadowMamba Desk v1.0 · Network
Boundary-region (BRSSM) and global (GSSM) state-space mixers, the SFFN,
pre-norm residual blocks and the 7-layer U-Net that predicts a residual
I_r with restored = clamp(I_s + I_r, 0, 1).
"""

import json
import logging
from functools import lru_cache
from pathlib import Path

import numpy as np

import mask_ops
import scan_orders as so
from config import LAYER_LEVELS, UNET_FACTOR, STRUCTURE_CHECK, ModelConfig
from errors import ConfigError, DataError, ShapeError, StructureError, UsageError
from layers import Module, Linear, DepthwiseConv, Conv2d, ConvTranspose2x2, LayerNorm, zero_
from ssm_kernel import SSMParams, directional_ssm
from tensor_core import (
    Tensor, add, sub, mul, hadamard, scale, silu, sqrt, mean, reshape, gather, concat,
)

CHECKPOINT_FORMAT = 1


# ===================================================================
# SCAN PLANS (orders + reflect-pad / crop indices for one map size)
# ===================================================================

class ScanPlan:
    """Four directional orders for an h x w map, padded to the orders' size."""

    def __init__(self, orders, h, w):
        self.orders = tuple(orders)
        self.h, self.w = int(h), int(w)
        self.hp, self.wp = self.orders[0].shape
        self.padded = (self.hp, self.wp) != (self.h, self.w)
        self.pad_index = so.reflect_pad_index(h, w, self.hp, self.wp) if self.padded else None
        self.crop_index = so.crop_index(h, w, self.hp, self.wp) if self.padded else None

    @property
    def strategy(self):
        return self.orders[0].strategy

    def __repr__(self):
        return f"ScanPlan({self.strategy}, {self.h}x{self.w} -> {self.hp}x{self.wp})"


@lru_cache(maxsize=64)
def cross_plan(h, w):
    return ScanPlan(so.build_orders("cross", h, w), h, w)


@lru_cache(maxsize=64)
def local_plan(h, w, window):
    hp, wp = so.pad_to_window(h, w, window)
    return ScanPlan(so.build_orders("local", hp, wp, window=window), h, w)


def boundary_region_plan(h, w, classes):
    hp, wp = so.pad_to_window(h, w, classes.window)
    if classes.map_shape != (hp, wp):
        raise ShapeError(
            f"window classes tile {classes.map_shape}, feature map {h}x{w} pads to {hp}x{wp}"
        )
    return ScanPlan(so.build_orders("boundary_region", hp, wp, classes.window, classes=classes), h, w)


def region_plan(h, w, labels):
    return ScanPlan(so.build_orders("region", h, w, region_labels=labels), h, w)


def level_classes(mask8, level, window, mode="receptive"):
    """Window classes at a U-Net level from the (x8-padded) full-resolution mask."""
    if mode == "receptive":
        return so.classify_windows_receptive(mask8, level, window)
    if mode == "maxpool":
        return so.classify_windows_maxpool(mask8, level, window)
    raise ConfigError(f"unknown mask_downsample mode {mode!r}")


def br_plan_for(cfg, mask8, level, h, w):
    """Scan plan of a BR layer at `level` under cfg.scan_strategy."""
    strategy = cfg.scan_strategy
    if strategy == "boundary_region":
        return boundary_region_plan(h, w, level_classes(mask8, level, cfg.window, cfg.mask_downsample))
    if strategy == "local":
        return local_plan(h, w, cfg.window)
    if strategy == "cross":
        return cross_plan(h, w)
    if strategy == "region":
        return region_plan(h, w, level_classes(mask8, level, 1, cfg.mask_downsample).labels)
    raise ConfigError(f"unknown scan strategy {strategy!r}")


# ===================================================================
# MODULES
# ===================================================================

class StateSpaceMixer(Module):
    """
    Shared body of BRSSM and GSSM; only the scan plan differs.

    in_proj -> [x | z]
    x: depthwise 3x3 -> pointwise -> SiLU -> four-direction SSM -> LayerNorm
    z: SiLU
    out_proj(x * z)
    """

    def __init__(self, width, cfg, rng):
        dtype = cfg.dtype
        self.d_inner = cfg.ssm_expand * width
        self.in_proj = Linear(width, 2 * self.d_inner, rng, bias=False, dtype=dtype)
        self.dw = DepthwiseConv(self.d_inner, rng, 3, dtype=dtype)
        self.pw = Linear(self.d_inner, self.d_inner, rng, dtype=dtype)
        self.ssm = SSMParams(self.d_inner, rng, cfg.ssm_state_dim, cfg.dt_rank, dtype=dtype)
        self.norm = LayerNorm(self.d_inner, cfg.ln_eps, dtype=dtype)
        self.out_proj = Linear(self.d_inner, width, rng, bias=False, dtype=dtype)

    def streams(self, x, plan):
        """(scanned stream, gate stream) before the Hadamard fuse."""
        Di = self.d_inner
        xz = self.in_proj(x)
        xs, z = xz[:Di], xz[Di:]
        s = silu(self.pw(self.dw(xs)))
        if plan.padded:
            s = reshape(gather(reshape(s, (Di, plan.h * plan.w)), plan.pad_index), (Di, plan.hp, plan.wp))
        y = directional_ssm(s, plan.orders, self.ssm)
        if plan.padded:
            y = reshape(gather(reshape(y, (Di, plan.hp * plan.wp)), plan.crop_index), (Di, plan.h, plan.w))
        return self.norm(y), silu(z)

    def forward(self, x, plan):
        y, gate = self.streams(x, plan)
        return self.out_proj(hadamard(y, gate))


class SFFN(Module):
    """Pointwise expand -> depthwise 3x3 -> SiLU -> pointwise back."""

    def __init__(self, width, cfg, rng):
        hidden = cfg.ffn_expansion * width
        self.fc1 = Linear(width, hidden, rng, dtype=cfg.dtype)
        self.dw = DepthwiseConv(hidden, rng, 3, dtype=cfg.dtype)
        self.fc2 = Linear(hidden, width, rng, dtype=cfg.dtype)

    def forward(self, x):
        return self.fc2(silu(self.dw(self.fc1(x))))


class StateSpaceBlock(Module):
    """
    x + mixer(LN(x)), then + SFFN(LN(.)).
    kind BR: boundary-region mixer; G: global cross mixer; D: both, summed.
    """

    def __init__(self, width, kind, cfg, rng):
        self.kind = kind
        self.norm1 = LayerNorm(width, cfg.ln_eps, dtype=cfg.dtype)
        self.br_mixer = StateSpaceMixer(width, cfg, rng) if kind in ("BR", "D") else None
        self.g_mixer = StateSpaceMixer(width, cfg, rng) if kind in ("G", "D") else None
        self.norm2 = LayerNorm(width, cfg.ln_eps, dtype=cfg.dtype) if cfg.use_sffn else None
        self.sffn = SFFN(width, cfg, rng) if cfg.use_sffn else None

    def zero_output(self):
        for mixer in (self.br_mixer, self.g_mixer):
            if mixer is not None:
                zero_(mixer.out_proj.weight)
        if self.sffn is not None:
            zero_(self.sffn.fc2.weight, self.sffn.fc2.bias)

    def forward(self, x, br_plan=None, g_plan=None):
        if self.br_mixer is not None and br_plan is None:
            raise UsageError(f"{self.kind} block needs boundary-region window classes")
        n = self.norm1(x)
        if self.kind == "BR":
            m = self.br_mixer(n, br_plan)
        elif self.kind == "G":
            m = self.g_mixer(n, g_plan or cross_plan(x.shape[1], x.shape[2]))
        else:
            m = add(self.br_mixer(n, br_plan), self.g_mixer(n, g_plan or cross_plan(x.shape[1], x.shape[2])))
        x = add(x, m)
        if self.sffn is not None:
            x = add(x, self.sffn(self.norm2(x)))
        return x


# ===================================================================
# INPUT / OUTPUT CONTAINERS
# ===================================================================

class ShadowInput:
    """Shadow image I_s (3 x H x W in [0, 1]) and its binary mask."""

    def __init__(self, image, mask):
        image = np.asarray(image)
        if image.ndim != 3 or image.shape[0] != 3:
            raise ShapeError(f"image must be 3 x H x W, got {image.shape}")
        if not isinstance(mask, mask_ops.BinaryMask):
            mask = mask_ops.BinaryMask(mask)
        if mask.shape != image.shape[1:]:
            raise ShapeError(f"mask {mask.shape} does not match image {image.shape[1:]}")
        if image.size and (image.min() < 0.0 or image.max() > 1.0 or not np.isfinite(image).all()):
            raise DataError("image values must lie in [0, 1]")
        self.image = image
        self.mask = mask

    @property
    def height(self):
        return self.image.shape[1]

    @property
    def width(self):
        return self.image.shape[2]


class ModelOutput:
    """residual I_r, unclamped prediction I_s + I_r, restored = clamp(I_s + I_r)."""

    def __init__(self, residual, prediction):
        self.residual = residual
        self.prediction = prediction
        self.restored = np.clip(prediction.data, 0.0, 1.0)


def prepare_input(image, mask, cfg=None):
    """Validate an (image, mask) pair and denoise the mask when cfg asks for it."""
    cfg = cfg or ModelConfig()
    inp = ShadowInput(image, mask)
    if cfg.denoise_mask:
        se = mask_ops.StructuringElement(cfg.se_size)
        inp = ShadowInput(inp.image, mask_ops.denoise_mask(inp.mask, se, cfg.dilate_radius))
    return inp


# ===================================================================
# U-NET
# ===================================================================

class ShadowMamba(Module):
    """
    embed -> L1 -> down -> L2 -> down -> L3 -> down -> L4 (bottleneck)
          -> up+skip -> L5 -> up+skip -> L6 -> up+skip -> L7 -> linear -> I_r
    """

    def __init__(self, cfg=None):
        cfg = cfg or ModelConfig()
        self.cfg = cfg.validate()
        rng = np.random.default_rng(cfg.seed)
        dtype = cfg.dtype
        width = cfg.layer_width

        self.embed = Conv2d(3, cfg.base_width, rng, 3, dtype=dtype)
        self.layers = [
            [StateSpaceBlock(width(i), cfg.arrangement[i], cfg, rng) for _ in range(int(cfg.blocks_per_layer[i]))]
            for i in range(7)
        ]
        self.downs = [Conv2d(width(i), width(i + 1), rng, 3, stride=2, dtype=dtype) for i in range(3)]
        self.ups = [ConvTranspose2x2(width(i), width(i + 1), rng, dtype=dtype) for i in range(3, 6)]
        self.fuses = [Linear(2 * width(i), width(i), rng, dtype=dtype) for i in range(4, 7)]
        self.output = Linear(cfg.base_width, 3, rng, dtype=dtype)

        if cfg.zero_init_output:
            self.zero_output()
        logging.debug(f"[MODEL] built ShadowMamba with {self.num_parameters():,} parameters")

    def zero_output(self):
        for layer in self.layers:
            for block in layer:
                block.zero_output()
        zero_(self.output.weight, self.output.bias)

    def blocks(self):
        return [b for layer in self.layers for b in layer]

    def forward(self, image, mask):
        """
        Args:
            image: Tensor or array 3 x H x W
            mask: BinaryMask H x W (already denoised)

        Returns:
            ModelOutput
        """
        cfg = self.cfg
        if not isinstance(image, Tensor):
            image = Tensor(image, dtype=cfg.dtype)
        _, H, W = image.shape
        if mask.shape != (H, W):
            raise ShapeError(f"mask {mask.shape} does not match image {H}x{W}")

        H8, W8 = so.pad_to_window(H, W, UNET_FACTOR)
        x_in = image
        if (H8, W8) != (H, W):
            x_in = reshape(gather(reshape(image, (3, H * W)), so.reflect_pad_index(H, W, H8, W8)), (3, H8, W8))
        mask8 = mask_ops.BinaryMask(so.reflect_pad_bits(mask.bits, H8, W8))

        br_plans = {}
        skips = []
        x = self.embed(x_in)
        for i in range(7):
            level = LAYER_LEVELS[i]
            if i >= 4:
                x = self.ups[i - 4](x)
                x = self.fuses[i - 4](concat([x, skips.pop()], axis=0))
            kind = cfg.arrangement[i]
            h, w = x.shape[1], x.shape[2]
            br_plan = g_plan = None
            if self.layers[i] and kind in ("BR", "D"):
                if level not in br_plans:
                    br_plans[level] = br_plan_for(cfg, mask8, level, h, w)
                br_plan = br_plans[level]
            if self.layers[i] and kind in ("G", "D"):
                g_plan = cross_plan(h, w)
            for block in self.layers[i]:
                x = block(x, br_plan, g_plan)
            if i < 3:
                skips.append(x)
                x = self.downs[i](x)

        residual = self.output(x)
        if (H8, W8) != (H, W):
            residual = reshape(gather(reshape(residual, (3, H8 * W8)), so.crop_index(H, W, H8, W8)), (3, H, W))
        return ModelOutput(residual, add(image, residual))


# ===================================================================
# FUNCTIONAL ENTRY POINTS
# ===================================================================

def overlapped_embed(model, image):
    """3x3 stride-1 'same' convolution, 3 -> C channels."""
    if not isinstance(image, Tensor):
        image = Tensor(image, dtype=model.cfg.dtype)
    return model.embed(image)


def brssm_forward(mixer, x, classes):
    return mixer(x, boundary_region_plan(x.shape[1], x.shape[2], classes))


def gssm_forward(mixer, x):
    return mixer(x, cross_plan(x.shape[1], x.shape[2]))


def sffn_forward(sffn, x):
    return sffn(x)


def block_forward(block, x, classes=None):
    if block.kind in ("BR", "D") and classes is None:
        raise UsageError(f"{block.kind} block needs boundary-region window classes")
    br_plan = boundary_region_plan(x.shape[1], x.shape[2], classes) if classes is not None else None
    return block(x, br_plan)


def unet_forward(model, shadow_input):
    return model(shadow_input.image, shadow_input.mask)


# ===================================================================
# LOSS
# ===================================================================

def charbonnier_loss(pred, target, eps=1e-3):
    """mean(sqrt((pred - target)^2 + eps^2))"""
    if eps <= 0:
        raise ConfigError(f"charbonnier eps must be > 0, got {eps}")
    if not isinstance(target, Tensor):
        target = Tensor(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ShapeError(f"charbonnier: prediction {pred.shape} vs target {target.shape}")
    d = sub(pred, target)
    return mean(sqrt(add(mul(d, d), eps * eps)))


def batch_loss(model, batch):
    """Mean Charbonnier loss of the unclamped prediction over (ShadowInput, target) pairs."""
    losses = [
        charbonnier_loss(model(inp.image, inp.mask).prediction, target, model.cfg.charbonnier_eps)
        for inp, target in batch
    ]
    total = losses[0]
    for l in losses[1:]:
        total = add(total, l)
    return scale(total, 1.0 / len(losses))


# ===================================================================
# PARAMETER REPORT
# ===================================================================

def _group_of(name):
    head, _, rest = name.partition(".")
    if head == "layers":
        return f"layer{int(rest.split('.')[0]) + 1}"
    if head in ("downs", "ups", "fuses"):
        return f"{head[:-1]}{int(rest.split('.')[0]) + 1}"
    return head


def parameter_report(cfg=None, model=None):
    """
    Trainable parameter counts per U-Net part.

    Returns:
        dict: {"total": int, "groups": {part: count}, "reference": float,
               "relative_deviation": float}
    """
    model = model or ShadowMamba(cfg or ModelConfig())
    groups = {}
    for name, p in model.named_parameters():
        g = _group_of(name)
        groups[g] = groups.get(g, 0) + int(p.size)
    total = int(sum(groups.values()))
    ref = STRUCTURE_CHECK["reference_params"]
    return {
        "total": total,
        "groups": groups,
        "reference": ref,
        "relative_deviation": (total - ref) / ref,
    }


def check_parameter_band(report, tolerance=STRUCTURE_CHECK["tolerance"]):
    """Raise StructureError when the total falls outside reference ± tolerance."""
    ref = report["reference"]
    lo, hi = ref * (1.0 - tolerance), ref * (1.0 + tolerance)
    if not lo <= report["total"] <= hi:
        listing = ", ".join(f"{k}={v:,}" for k, v in report["groups"].items())
        raise StructureError(
            f"parameter count {report['total']:,} outside [{lo:,.0f}, {hi:,.0f}]; per part: {listing}"
        )
    return True


# ===================================================================
# CHECKPOINTS (.npz: parameters + JSON config + format version)
# ===================================================================

def save_checkpoint(path, model):
    path = Path(path)
    if path.suffix != ".npz":
        path = path.with_suffix(".npz")
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {f"param/{name}": data for name, data in model.state_dict().items()}
    arrays["__config__"] = np.array(json.dumps(model.cfg.to_dict(), sort_keys=True))
    arrays["__format__"] = np.array(CHECKPOINT_FORMAT)
    np.savez(path, **arrays)
    logging.info(f"[MODEL] 💾 checkpoint saved: {path} ({model.num_parameters():,} params)")
    return path


def load_checkpoint(path, expected_cfg=None):
    """
    Returns:
        ShadowMamba with the stored parameters

    Raises DataError on unreadable files, format mismatch or a stored config
    different from expected_cfg.
    """
    try:
        with np.load(path, allow_pickle=False) as data:
            fmt = int(data["__format__"])
            stored = json.loads(data["__config__"].item())
            state = {k[len("param/"):]: data[k] for k in data.files if k.startswith("param/")}
    except (OSError, KeyError, ValueError) as e:
        raise DataError(f"cannot read checkpoint {path}: {e}")
    if fmt != CHECKPOINT_FORMAT:
        raise DataError(f"checkpoint format {fmt} != supported {CHECKPOINT_FORMAT}")
    try:
        cfg = ModelConfig.from_dict(stored)
    except ConfigError as e:
        raise DataError(f"checkpoint {path} carries an invalid config: {e}")
    if expected_cfg is not None and expected_cfg.to_dict() != cfg.to_dict():
        diff = sorted(k for k, v in expected_cfg.to_dict().items() if cfg.to_dict().get(k) != v)
        raise DataError(f"checkpoint config differs from expected in {diff}")

    model = ShadowMamba(cfg)
    model.load_state_dict(state)
    return model
