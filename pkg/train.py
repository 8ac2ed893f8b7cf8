"""
ShadowMamba Desk v1.0 · Toy Trainer
AdamW with cosine-annealed learning rate over a small in-memory set of
(shadow input, shadow-free target) pairs. Deterministic for a fixed seed.
"""

import logging
import math
import threading
import time as _time
from pathlib import Path

import numpy as np

import image_io
import mask_ops
from config import TRAIN_CONFIG, ModelConfig
from errors import DataError, NumericalError, ShadowMambaError
from model import ShadowMamba, ShadowInput, batch_loss, prepare_input
from tensor_core import ComputationTape, backward, no_grad


# ===================================================================
# OPTIMISER + SCHEDULE
# ===================================================================

def cosine_lr(step, total, lr_max=TRAIN_CONFIG["lr_max"], lr_min=TRAIN_CONFIG["lr_min"]):
    """lr_max at step 0, annealed to lr_min at step total - 1."""
    span = max(total - 1, 1)
    t = min(max(step, 0), span)
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * t / span))


NO_DECAY_NAMES = ("A_log", "D")


def decays(name, p):
    """Weight decay applies to matrices and kernels only; biases, norm gains and SSM A_log / D are exempt."""
    return p.data.ndim > 1 and name.rsplit(".", 1)[-1] not in NO_DECAY_NAMES


class AdamW:
    """
    Adam with decoupled weight decay.

    `params` is either plain parameters (all decayed) or (name, parameter)
    pairs as yielded by named_parameters(), in which case `decays` decides.
    """

    def __init__(self, params, betas=TRAIN_CONFIG["betas"], eps=TRAIN_CONFIG["adam_eps"],
                 weight_decay=TRAIN_CONFIG["weight_decay"]):
        items = list(params)
        if items and isinstance(items[0], tuple):
            self.params = [p for _, p in items]
            self.decay = [decays(name, p) for name, p in items]
        else:
            self.params = items
            self.decay = [True] * len(items)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v, decay in zip(self.params, self.m, self.v, self.decay):
            if p.grad is None:
                continue
            g = p.grad
            if decay:
                p.data *= 1.0 - lr * self.weight_decay
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adamw_step(optimizer, lr):
    optimizer.step(lr)


def hflip(inp, target):
    """Horizontal flip of an (input, target) pair."""
    image = inp.image[:, :, ::-1].copy()
    mask = mask_ops.BinaryMask(inp.mask.bits[:, ::-1])
    return ShadowInput(image, mask), np.asarray(target)[:, :, ::-1].copy()


# ===================================================================
# DATA
# ===================================================================

def as_pairs(dataset, cfg=None):
    """
    Normalise a dataset to (ShadowInput, target) pairs. Accepts sample dicts
    from synthetic.make_toy_dataset or ready pairs; masks are denoised per cfg.
    """
    pairs = []
    for item in dataset:
        if isinstance(item, dict):
            inp, target = prepare_input(item["image"], item["mask"], cfg), item["target"]
        else:
            inp, target = item
            if not isinstance(inp, ShadowInput):
                inp = prepare_input(inp[0], inp[1], cfg)
        target = np.asarray(target)
        if target.shape != inp.image.shape:
            raise DataError(f"target {target.shape} does not match image {inp.image.shape}")
        pairs.append((inp, target))
    return pairs


def load_triplets(data_dir, cfg=None, max_side=TRAIN_CONFIG["max_image_side"]):
    """
    Read image/ mask/ target/ PNG triplets with matching file names.
    Malformed triplets are skipped with a warning.

    Returns:
        list of (name, ShadowInput, target)
    """
    root = Path(data_dir)
    names = [p.name for p in image_io.list_pngs(root / "image")]
    triplets = []
    for name in names:
        try:
            image = image_io.read_rgb(root / "image" / name)
            mask = mask_ops.BinaryMask.load(root / "mask" / name)
            target = image_io.read_rgb(root / "target" / name)
            if target.shape != image.shape:
                raise DataError(f"target {target.shape[1:]} vs image {image.shape[1:]}")
            if max(image.shape[1:]) > max_side:
                raise DataError(f"{image.shape[1]}x{image.shape[2]} exceeds desk-scale limit {max_side}")
            triplets.append((name, prepare_input(image, mask, cfg), target))
        except ShadowMambaError as e:
            logging.warning(f"[TRAIN] ⚠️ skipping {name}: {e}")
    if not triplets:
        raise DataError(f"no usable (image, mask, target) triplets under {root}")
    logging.info(f"[TRAIN] loaded {len(triplets)}/{len(names)} triplet(s) from {root}")
    return triplets


# ===================================================================
# RUNNER
# ===================================================================

class ToyTrainer:
    """Step loop over mini-batches. Stops early when stop() is called."""

    def __init__(self, model, pairs, steps, train_cfg=None, seed=0, stop_event=None):
        if not pairs:
            raise DataError("training needs at least one sample")
        self._stop_event = stop_event or threading.Event()
        self.model = model
        self.pairs = list(pairs)
        self.steps = int(steps)
        self.cfg = dict(TRAIN_CONFIG, **(train_cfg or {}))
        self.rng = np.random.default_rng(seed)
        self.optimizer = AdamW(
            model.named_parameters(), self.cfg["betas"], self.cfg["adam_eps"], self.cfg["weight_decay"]
        )
        self.trace = []
        self.step = 0
        self.running = False
        self.elapsed = 0.0

    def stop(self):
        self._stop_event.set()

    def _batch(self):
        n = len(self.pairs)
        size = min(self.cfg["batch_size"], n)
        picks = self.rng.choice(n, size=size, replace=False)
        batch = []
        for i in picks:
            inp, target = self.pairs[int(i)]
            if self.rng.random() < self.cfg["flip_prob"]:
                inp, target = hflip(inp, target)
            batch.append((inp, target))
        return batch

    def train_step(self):
        lr = cosine_lr(self.step, self.steps, self.cfg["lr_max"], self.cfg["lr_min"])
        batch = self._batch()
        self.model.zero_grad()
        with ComputationTape():
            loss = batch_loss(self.model, batch)
        value = loss.item()
        if not math.isfinite(value):
            logging.error(f"[TRAIN] ❌ non-finite loss {value} at step {self.step} (lr {lr:.3e})")
            raise NumericalError(f"non-finite loss {value} at step {self.step}")
        backward(loss)
        bad = [name for name, p in self.model.named_parameters()
               if p.grad is not None and not np.isfinite(p.grad).all()]
        if bad:
            logging.error(f"[TRAIN] ❌ non-finite gradients at step {self.step}: {bad[:5]}")
            raise NumericalError(f"non-finite gradients at step {self.step} in {len(bad)} tensor(s)")
        self.optimizer.step(lr)

        row = {"step": self.step, "lr": lr, "loss": value}
        self.trace.append(row)
        self.step += 1
        return row

    def run(self):
        """Main training loop. Returns the trace (one row per completed step)."""
        self.running = True
        start = _time.perf_counter()
        logging.info(
            f"[TRAIN] 🚀 {self.steps} step(s), {len(self.pairs)} sample(s), "
            f"{self.model.num_parameters():,} params"
        )
        try:
            while self.step < self.steps and not self._stop_event.is_set():
                row = self.train_step()
                if row["step"] % self.cfg["log_every"] == 0 or self.step == self.steps:
                    logging.info(f"[TRAIN] step {row['step']:5d} | lr {row['lr']:.3e} | loss {row['loss']:.6f}")
        finally:
            self.running = False
            self.elapsed = _time.perf_counter() - start
        if self._stop_event.is_set() and self.step < self.steps:
            logging.warning(f"[TRAIN] ⚠️ stopped at step {self.step}/{self.steps}")
        return self.trace

    def evaluate_loss(self):
        """Mean loss over every sample without augmentation."""
        with no_grad():
            return batch_loss(self.model, self.pairs).item()

    def get_stats(self):
        losses = [r["loss"] for r in self.trace]
        return {
            "steps_done": self.step,
            "steps": self.steps,
            "initial_loss": losses[0] if losses else None,
            "final_loss": losses[-1] if losses else None,
            "min_loss": min(losses) if losses else None,
            "elapsed_s": round(self.elapsed, 3),
            "running": self.running,
        }


def train_toy(dataset, cfg=None, steps=TRAIN_CONFIG["steps"], train_cfg=None, seed=None, model=None):
    """
    Train a fresh (or given) model on a toy dataset.

    Returns:
        (model, trainer) - trainer.trace holds (step, lr, loss) rows
    """
    cfg = cfg or ModelConfig()
    model = model or ShadowMamba(cfg)
    pairs = as_pairs(dataset, cfg)
    trainer = ToyTrainer(model, pairs, steps, train_cfg, seed=cfg.seed if seed is None else seed)
    trainer.run()
    return model, trainer
