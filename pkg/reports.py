"""
ShadowMamba Desk v1.0 · Report Writers
CSV tables, JSON documents and the run manifest written next to every
command's outputs. Plain-text summaries for the log.
"""

import csv
import json
import logging
from datetime import datetime
from pathlib import Path

import numpy as np
import pytz

from config import VERSION
from errors import DataError

UTC = pytz.utc


def now_utc():
    return datetime.now(UTC)


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    return value


def write_csv(path, rows, fields=None):
    """Header row plus one line per dict; fields default to the first row's keys."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = list(rows)
    fields = list(fields or (rows[0].keys() if rows else []))
    try:
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=fields, extrasaction="ignore")
            writer.writeheader()
            for row in rows:
                writer.writerow({k: ("" if row.get(k) is None else _jsonable(row.get(k))) for k in fields})
    except OSError as e:
        raise DataError(f"cannot write {path}: {e}")
    return path


def read_csv(path):
    with open(path, "r", newline="") as f:
        return list(csv.DictReader(f))


def write_json(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        with open(path, "w") as f:
            json.dump(_jsonable(data), f, indent=2, sort_keys=True)
    except OSError as e:
        raise DataError(f"cannot write {path}: {e}")
    return path


def write_trace_csv(path, trace):
    """(step, lr, loss) rows of a training run."""
    return write_csv(path, ({"step": r["step"], "lr": repr(float(r["lr"])), "loss": repr(float(r["loss"]))}
                            for r in trace), fields=("step", "lr", "loss"))


METRIC_FIELDS = ("name", "region", "pixels", "mse", "psnr", "ssim", "rmae_lab")


def write_metric_report(csv_path, report):
    """One CSV row per image per region plus a JSON aggregate beside it."""
    write_csv(csv_path, report.rows, METRIC_FIELDS)
    json_path = Path(csv_path).with_suffix(".json")
    write_json(json_path, report.to_dict())
    return Path(csv_path), json_path


# ===================================================================
# RUN MANIFEST
# ===================================================================

class RunManifest:
    """What ran, on what, with which seed, when and with which library version."""

    def __init__(self, command, config_path=None, inputs=None, outputs=None, seed=None):
        self.command = command
        self.config_path = config_path
        self.inputs = dict(inputs or {})
        self.outputs = dict(outputs or {})
        self.seed = seed
        self.timestamp = now_utc().isoformat()
        self.version = VERSION
        self.extra = {}

    def to_dict(self):
        data = {
            "command": self.command,
            "config_path": self.config_path,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "seed": self.seed,
            "timestamp": self.timestamp,
            "version": self.version,
        }
        data.update(self.extra)
        return _jsonable(data)

    def write(self, directory):
        path = write_json(Path(directory) / "manifest.json", self.to_dict())
        logging.debug(f"[CLI] manifest written: {path}")
        return path


# ===================================================================
# TEXT SUMMARIES
# ===================================================================

def format_summary(title, fields):
    """Multi-line log block: title then `key: value` lines."""
    lines = [f"📢 {title}"]
    for k, v in fields.items():
        if isinstance(v, float):
            v = f"{v:.4f}"
        lines.append(f"   • {k}: {v}")
    return "\n".join(lines)


def format_parameter_report(report):
    lines = [f"📊 parameters: {report['total']:,} (reference {report['reference']:,.0f}, "
             f"deviation {report['relative_deviation']:+.1%})"]
    for part, n in report["groups"].items():
        lines.append(f"   • {part:<8} {n:>10,}")
    return "\n".join(lines)
