"""
ShadowMamba Desk v1.0 · Unified Configuration
Boundary-region scanning · mask denoising · hierarchical SSM U-Net
"""

import os
import json
from dataclasses import dataclass, field, asdict, fields
from dotenv import load_dotenv

from errors import ConfigError

load_dotenv()

VERSION = "1.0.0"
SCHEMA_VERSION = 1

# ===================================================================
# ENVIRONMENT
# ===================================================================

LOG_LEVEL = os.getenv("SHADOWMAMBA_LOG_LEVEL", "INFO").upper()
PRECISION = os.getenv("SHADOWMAMBA_PRECISION", "float64")
SLOW_TESTS = os.getenv("SHADOWMAMBA_SLOW_TESTS", "0") == "1"

PRECISIONS = ("float64", "float32")


# ===================================================================
# MODEL (U-Net of 7 layers: 3 encoder, 1 bottleneck, 3 decoder)
# ===================================================================

BLOCK_KINDS = ("BR", "G", "D")
ALLOWED_WINDOWS = (4, 8, 10, 16)
LAYER_LEVELS = (0, 1, 2, 3, 2, 1, 0)     # resolution level of each layer
UNET_FACTOR = 8                          # 3 downsamples

ARRANGEMENTS = {
    "all_global": ["G", "G", "G", "G", "G", "G", "G"],
    "br_edges": ["BR", "G", "G", "G", "G", "G", "BR"],
    "br_all_but_bottleneck": ["BR", "BR", "BR", "G", "BR", "BR", "BR"],
    "all_br": ["BR", "BR", "BR", "BR", "BR", "BR", "BR"],
    "dual_branch": ["D", "D", "D", "D", "D", "D", "D"],
    "default": ["BR", "BR", "G", "G", "G", "BR", "BR"],
}

MODEL_DEFAULTS = {
    "base_width": 32,
    "blocks_per_layer": [2, 2, 2, 2, 2, 2, 2],
    "arrangement": list(ARRANGEMENTS["default"]),
    "window": 8,
    "ssm_state_dim": 16,
    "ssm_expand": 3,
    "dt_rank": 0,                    # 0 -> ceil(width / 16)
    "ffn_expansion": 2,
    "scan_strategy": "boundary_region",
    "mask_downsample": "receptive",
    "use_sffn": True,
    "zero_init_output": False,
    "ln_eps": 1e-5,
    "charbonnier_eps": 1e-3,
    "se_size": 3,
    "dilate_radius": 5,
    "denoise_mask": True,
    "seed": 0,
    "precision": PRECISION,
}

BR_SCAN_STRATEGIES = ("boundary_region", "local", "region", "cross")
MASK_DOWNSAMPLE_MODES = ("receptive", "maxpool")


# ===================================================================
# MASK DENOISING
# ===================================================================

MASK_CONFIG = {
    "se_size": 3,                    # square structuring element
    "dilate_radius": 5,              # iterations of 3x3 dilation for M_rough
    "binarize_threshold": 128,       # 8-bit PNG value >= 128 -> shadow
}


# ===================================================================
# SCAN ORDERS
# ===================================================================

SCAN_CONFIG = {
    "strategies": ("local", "cross", "boundary_region", "region"),
    "directions": ("horizontal", "vertical", "horizontal_reverse", "vertical_reverse"),
    "category_order": (0, 1, 2),     # non-shadow -> boundary -> shadow
    "bench_directions": ("horizontal", "vertical"),
}


# ===================================================================
# SELECTIVE SCAN
# ===================================================================

SSM_CONFIG = {
    "state_dim": 16,
    "max_state_dim": 64,
    "dt_min": 0.01,
    "dt_max": 0.1,
    "chunk_size": 64,                # hidden-state checkpoint interval
}


# ===================================================================
# TRAINING (AdamW + cosine annealing)
# ===================================================================

TRAIN_CONFIG = {
    "steps": 2000,
    "lr_max": 2e-4,
    "lr_min": 1e-6,
    "betas": (0.9, 0.999),
    "adam_eps": 1e-8,
    "weight_decay": 1e-2,
    "batch_size": 2,
    "flip_prob": 0.5,
    "log_every": 10,
    "max_image_side": 128,
}

TOY_DATA_CONFIG = {
    "count": 4,
    "size": 64,
    "attenuation": (0.3, 0.7),
    "min_vertices": 4,
    "max_vertices": 8,
}


# ===================================================================
# METRICS
# ===================================================================

METRIC_CONFIG = {
    "psnr_cap_db": 100.0,
    "data_range": 1.0,
    "ssim_window": 11,
    "ssim_sigma": 1.5,
    "ssim_k1": 0.01,
    "ssim_k2": 0.03,
    "workers": 4,
    "regions": ("ALL", "S", "NS"),
}


# ===================================================================
# STRUCTURAL CHECK (reported parameter count of the default model)
# ===================================================================

STRUCTURE_CHECK = {
    "reference_params": 6.45e6,
    "tolerance": 0.25,
}


# ===================================================================
# ABLATION SWEEPS (desk scale)
# ===================================================================

ABLATION_CONFIG = {
    "width": 8,
    "blocks": 1,                     # blocks per U-Net layer
    "size": 32,
    "count": 4,
    "steps": 200,
    "seeds": 10,
    "window": 8,
    "noise_pixels": 20,
    "windows": (4, 8, 10, 16),
    "strategies": ("cross", "region", "local", "boundary_region"),
}


# ===================================================================
# MODEL CONFIG OBJECT
# ===================================================================

@dataclass
class ModelConfig:
    """Architecture hyperparameters. Mirrors MODEL_DEFAULTS one-to-one."""

    base_width: int = MODEL_DEFAULTS["base_width"]
    blocks_per_layer: list = field(default_factory=lambda: list(MODEL_DEFAULTS["blocks_per_layer"]))
    arrangement: list = field(default_factory=lambda: list(MODEL_DEFAULTS["arrangement"]))
    window: int = MODEL_DEFAULTS["window"]
    ssm_state_dim: int = MODEL_DEFAULTS["ssm_state_dim"]
    ssm_expand: int = MODEL_DEFAULTS["ssm_expand"]
    dt_rank: int = MODEL_DEFAULTS["dt_rank"]
    ffn_expansion: int = MODEL_DEFAULTS["ffn_expansion"]
    scan_strategy: str = MODEL_DEFAULTS["scan_strategy"]
    mask_downsample: str = MODEL_DEFAULTS["mask_downsample"]
    use_sffn: bool = MODEL_DEFAULTS["use_sffn"]
    zero_init_output: bool = MODEL_DEFAULTS["zero_init_output"]
    ln_eps: float = MODEL_DEFAULTS["ln_eps"]
    charbonnier_eps: float = MODEL_DEFAULTS["charbonnier_eps"]
    se_size: int = MODEL_DEFAULTS["se_size"]
    dilate_radius: int = MODEL_DEFAULTS["dilate_radius"]
    denoise_mask: bool = MODEL_DEFAULTS["denoise_mask"]
    seed: int = MODEL_DEFAULTS["seed"]
    precision: str = MODEL_DEFAULTS["precision"]

    def __post_init__(self):
        try:
            self.validate()
        except (TypeError, ValueError) as e:
            raise ConfigError(f"malformed config value: {e}") from e

    def validate(self):
        if len(self.arrangement) != 7 or len(self.blocks_per_layer) != 7:
            raise ConfigError(
                f"arrangement and blocks_per_layer need 7 entries, got "
                f"{len(self.arrangement)} and {len(self.blocks_per_layer)}"
            )
        bad = [k for k in self.arrangement if k not in BLOCK_KINDS]
        if bad:
            raise ConfigError(f"unknown block kinds {bad}; expected one of {BLOCK_KINDS}")
        if any(int(n) < 0 for n in self.blocks_per_layer):
            raise ConfigError(f"blocks_per_layer must be non-negative: {self.blocks_per_layer}")
        if self.window not in ALLOWED_WINDOWS:
            raise ConfigError(f"window {self.window} not in {ALLOWED_WINDOWS}")
        if self.base_width < 1 or self.ssm_expand < 1 or self.ffn_expansion < 1:
            raise ConfigError("base_width, ssm_expand and ffn_expansion must be >= 1")
        if not 1 <= self.ssm_state_dim <= SSM_CONFIG["max_state_dim"]:
            raise ConfigError(
                f"ssm_state_dim {self.ssm_state_dim} outside 1..{SSM_CONFIG['max_state_dim']}"
            )
        if self.dt_rank < 0:
            raise ConfigError("dt_rank must be >= 0 (0 selects ceil(width/16))")
        if self.scan_strategy not in BR_SCAN_STRATEGIES:
            raise ConfigError(f"scan_strategy {self.scan_strategy!r} not in {BR_SCAN_STRATEGIES}")
        if self.mask_downsample not in MASK_DOWNSAMPLE_MODES:
            raise ConfigError(f"mask_downsample {self.mask_downsample!r} not in {MASK_DOWNSAMPLE_MODES}")
        if self.precision not in PRECISIONS:
            raise ConfigError(f"precision {self.precision!r} not in {PRECISIONS}")
        if self.ln_eps <= 0 or self.charbonnier_eps <= 0:
            raise ConfigError("ln_eps and charbonnier_eps must be > 0")
        if self.se_size < 3 or self.se_size % 2 == 0:
            raise ConfigError(f"se_size must be odd and >= 3, got {self.se_size}")
        if self.dilate_radius < 1:
            raise ConfigError(f"dilate_radius must be >= 1, got {self.dilate_radius}")
        return self

    @property
    def dtype(self):
        return dtype_for(self.precision)

    def layer_width(self, layer):
        """Channel width of U-Net layer 0..6 (doubling per level)."""
        return self.base_width * (2 ** LAYER_LEVELS[layer])

    def to_dict(self):
        data = asdict(self)
        data["schema_version"] = SCHEMA_VERSION
        return data

    @classmethod
    def from_dict(cls, data, allowed_extra=()):
        """
        Build from a JSON-like dict. Unknown keys are rejected.

        Args:
            data: dict of ModelConfig fields (+ optional schema_version)
            allowed_extra: extra top-level keys the caller consumes itself

        Returns:
            ModelConfig
        """
        data = dict(data)
        version = data.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"config schema_version {version} != supported {SCHEMA_VERSION}")
        for key in allowed_extra:
            data.pop(key, None)

        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(**data)

    def replace(self, **changes):
        data = asdict(self)
        data.update(changes)
        return ModelConfig(**data)


def dtype_for(precision):
    import numpy as np

    if precision not in PRECISIONS:
        raise ConfigError(f"precision {precision!r} not in {PRECISIONS}")
    return np.float64 if precision == "float64" else np.float32


def load_run_config(path):
    """
    Read a JSON run config: ModelConfig fields plus an optional "train"
    section overriding TRAIN_CONFIG keys.

    Returns:
        (ModelConfig, train dict)
    """
    try:
        with open(path, "r") as f:
            raw = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}")
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must hold a JSON object")

    train = dict(TRAIN_CONFIG)
    overrides = raw.get("train", {}) or {}
    unknown = sorted(set(overrides) - set(TRAIN_CONFIG))
    if unknown:
        raise ConfigError(f"unknown train keys: {unknown}")
    train.update(overrides)
    if "betas" in overrides:
        train["betas"] = tuple(train["betas"])

    return ModelConfig.from_dict(raw, allowed_extra=("train",)), train


def toy_config(width=16, **changes):
    """Default architecture scaled down for desk-scale runs."""
    return ModelConfig(base_width=width, **changes)
