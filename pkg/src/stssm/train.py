"""Training loop: AdamW with decoupled decay, linear warmup into cosine
decay, label-smoothed cross-entropy, and the frame-reordering evaluation."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields

import numpy as np

from . import ops
from .autodiff import Tape, backward
from .exceptions import ContractError, NumericError, StabilityError
from .model import ModelConfig, as_leaves, init_weights, model_forward
from .ops import smoothed_ce  # noqa: F401  (re-exported training surface)
from .scanorder import frame_reorder
from .data import reorder_frames


@dataclass
class TrainConfig:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.05
    warmup_epochs: int = 1
    epochs: int = 30
    batch_size: int = 64
    label_smoothing: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ContractError("lr must be positive")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ContractError("label_smoothing must be in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise ContractError("epochs and batch_size must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ContractError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def lr_at(step: int, total_steps: int, warmup_steps: int, base_lr: float) -> float:
    """Linear ramp over the warmup, then cosine decay toward zero."""
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    span = max(1, total_steps - warmup_steps)
    progress = (step - warmup_steps) / span
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * min(progress, 1.0)))


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("VMAMBA_THREADS", "1")))
    except ValueError:
        return 1


class AdamW:
    """Decoupled-weight-decay Adam; updates run in sorted parameter order
    so repeated runs are bitwise identical."""

    def __init__(self, weights: dict, tc: TrainConfig, eps: float = 1e-8):
        self.tc = tc
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in weights.items()}
        self.v = {k: np.zeros_like(v) for k, v in weights.items()}
        # biases, gains, and embedding-like tables are not decayed
        self.no_decay = {k for k, v in weights.items()
                         if v.ndim < 2 or k in ("pos_embed", "cls_token")}

    def step(self, weights: dict, grads: dict, lr: float) -> None:
        self.t += 1
        b1, b2 = self.tc.beta1, self.tc.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name in sorted(weights):
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if name not in self.no_decay and self.tc.weight_decay:
                update = update + self.tc.weight_decay * weights[name]
            weights[name] = weights[name] - np.asarray(lr * update, dtype=weights[name].dtype)


def batch_loss_and_grads(cfg: ModelConfig, weights: dict, batch, smoothing: float):
    """Mean smoothed loss over the batch plus summed-in-order gradients."""
    total = None
    loss_sum = 0.0
    for sample in batch:
        tape = Tape()
        leaves = as_leaves(tape, weights)
        logits = model_forward(sample.clip, cfg, leaves)
        loss = ops.smoothed_ce(logits, sample.label, smoothing)
        grads = backward(tape, loss)
        loss_sum += float(loss.value)
        if total is None:
            total = grads
        else:
            for k in total:
                total[k] = total[k] + grads[k]
    scale = 1.0 / len(batch)
    for k in total:
        total[k] = np.asarray(total[k] * scale, dtype=weights[k].dtype)
    return loss_sum * scale, total


def _predict(cfg: ModelConfig, weights: dict, clip) -> int:
    return int(np.argmax(model_forward(clip, cfg, weights)))


def evaluate(cfg: ModelConfig, weights: dict, samples, frame_strategy: str = "sequential") -> float:
    """Top-1 accuracy after reordering every clip's frames by the strategy."""
    order = frame_reorder(cfg.frames, frame_strategy)
    clips = [reorder_frames(s.clip, order) for s in samples]
    workers = worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            preds = list(pool.map(lambda c: _predict(cfg, weights, c), clips))
    else:
        preds = [_predict(cfg, weights, c) for c in clips]
    hits = sum(p == s.label for p, s in zip(preds, samples))
    return hits / len(samples)


@dataclass
class TrainResult:
    weights: dict
    metrics: list  # (epoch, train_loss, eval_acc)
    aborted: bool = False


def metrics_csv(metrics) -> str:
    lines = ["epoch,loss,acc"]
    for epoch, loss, acc in metrics:
        lines.append(f"{epoch},{loss:.6f},{acc:.4f}")
    return "\n".join(lines) + "\n"


def train(cfg: ModelConfig, train_samples, eval_samples, tc: TrainConfig,
          log=None) -> TrainResult:
    """Fit the model; deterministic for a fixed seed.

    Diverging (non-finite) losses abort the run and return the weights
    from the end of the last completed epoch.
    """
    rng = np.random.default_rng(tc.seed)
    weights = init_weights(cfg, rng)
    opt = AdamW(weights, tc)
    steps_per_epoch = math.ceil(len(train_samples) / tc.batch_size)
    total_steps = steps_per_epoch * tc.epochs
    warmup_steps = steps_per_epoch * tc.warmup_epochs
    metrics = []
    last_good = {k: v.copy() for k, v in weights.items()}
    step = 0
    for epoch in range(tc.epochs):
        order = rng.permutation(len(train_samples))
        epoch_loss = 0.0
        for b in range(steps_per_epoch):
            batch = [train_samples[i] for i in order[b * tc.batch_size:(b + 1) * tc.batch_size]]
            try:
                with np.errstate(over="ignore", invalid="ignore", under="ignore"):
                    loss, grads = batch_loss_and_grads(cfg, weights, batch,
                                                       tc.label_smoothing)
            except (NumericError, StabilityError):
                loss = float("nan")
            if not math.isfinite(loss):
                if log:
                    log(f"epoch {epoch}: diverged, reverting to last checkpoint")
                return TrainResult(weights=last_good, metrics=metrics, aborted=True)
            opt.step(weights, grads, lr_at(step, total_steps, warmup_steps, tc.lr))
            epoch_loss += loss * len(batch)
            step += 1
        epoch_loss /= len(train_samples)
        acc = evaluate(cfg, weights, eval_samples, "sequential") if eval_samples else float("nan")
        metrics.append((epoch, epoch_loss, acc))
        last_good = {k: v.copy() for k, v in weights.items()}
        if log:
            log(f"epoch {epoch:3d}  loss {epoch_loss:.4f}  eval acc {acc:.3f}")
    return TrainResult(weights=weights, metrics=metrics, aborted=False)
