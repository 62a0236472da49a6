"""Synthetic motion-direction dataset.

Each clip shows a bright bar over per-pixel noise, translating one pixel
per frame in one of four directions. Direction is unrecoverable from any
single frame (the bar is just a bar; its start position is sampled
uniformly over the feasible band), so classification requires temporal
order. Reversing a clip's frames turns an "up" sample into a valid
"down" sample and vice versa, and likewise for left/right.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, fields

import numpy as np

from . import tensor
from .exceptions import ContractError
from .frontend import VideoClip

LABELS = ("up", "down", "left", "right")
REVERSED_LABEL = {"up": "down", "down": "up", "left": "right", "right": "left"}


@dataclass
class DatasetConfig:
    n_train: int = 2000
    n_eval: int = 400
    frames: int = 8
    size: int = 32
    noise_std: float = 0.1
    bar_thickness: int = 2

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ContractError(f"unknown data config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class SyntheticSample:
    clip: VideoClip
    label: int
    direction: str
    start: int
    seed: int


def start_range(direction: str, frames: int, size: int, thickness: int):
    """Inclusive start band keeping the bar inside the frame for all steps."""
    travel = frames - 1
    if direction in ("up", "left"):
        lo, hi = travel, size - thickness
    else:
        lo, hi = 0, size - thickness - travel
    if lo > hi:
        raise ContractError(
            f"no feasible start: {frames} frames of travel do not fit in size {size}")
    return lo, hi


def render_clip(direction: str, start: int, noise_frames: np.ndarray,
                thickness: int = 2) -> np.ndarray:
    """Paint the moving bar over the given noise background.

    noise_frames: (T, S, S) in [0, 1). Returns a (1, T, S, S) array. The
    bar occupies `thickness` rows (up/down) or columns (left/right) and
    moves one pixel per frame.
    """
    if direction not in LABELS:
        raise ContractError(f"unknown direction {direction!r}")
    t, s, _ = noise_frames.shape
    out = noise_frames.copy()
    step = -1 if direction in ("up", "left") else 1
    for k in range(t):
        pos = start + step * k
        if pos < 0 or pos + thickness > s:
            raise ContractError("bar leaves the frame; start violates its band")
        if direction in ("up", "down"):
            out[k, pos:pos + thickness, :] = 1.0
        else:
            out[k, :, pos:pos + thickness] = 1.0
    return out[None, :, :, :]


def make_noise(rng: np.random.Generator, frames: int, size: int,
               noise_std: float) -> np.ndarray:
    if noise_std < 0:
        raise ContractError("noise_std must be >= 0")
    noise = rng.normal(0.25, noise_std, size=(frames, size, size))
    return np.clip(noise, 0.0, 0.6)


def gen_dataset(n_samples: int, frames: int = 8, size: int = 32,
                noise_std: float = 0.1, seed: int = 0,
                thickness: int = 2) -> list:
    """Balanced, seeded sample list; labels cycle through the four directions."""
    if frames < 4 or size < 8:
        raise ContractError("need frames >= 4 and size >= 8")
    for direction in LABELS:
        start_range(direction, frames, size, thickness)  # fail fast on geometry
    root = np.random.SeedSequence(seed)
    samples = []
    for i, child in enumerate(root.spawn(n_samples)):
        rng = np.random.default_rng(child)
        direction = LABELS[i % 4]
        lo, hi = start_range(direction, frames, size, thickness)
        start = int(rng.integers(lo, hi + 1))
        noise = make_noise(rng, frames, size, noise_std)
        clip = VideoClip(render_clip(direction, start, noise, thickness).astype(np.float32))
        samples.append(SyntheticSample(clip=clip, label=LABELS.index(direction),
                                       direction=direction, start=start, seed=seed))
    return samples


def reorder_frames(clip: VideoClip, order: np.ndarray) -> VideoClip:
    return VideoClip(clip.data[:, np.asarray(order)])


def save_dataset(dirpath, samples) -> None:
    os.makedirs(dirpath, exist_ok=True)
    with open(os.path.join(dirpath, "labels.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "file", "label", "direction"])
        for i, s in enumerate(samples):
            fname = f"clip_{i:05d}.vmtb"
            tensor.save_tensor(os.path.join(dirpath, fname),
                               tensor.from_array(s.clip.data))
            writer.writerow([i, fname, s.label, s.direction])


def load_dataset(dirpath) -> list:
    samples = []
    with open(os.path.join(dirpath, "labels.csv"), newline="") as fh:
        for row in csv.DictReader(fh):
            t = tensor.load_tensor(os.path.join(dirpath, row["file"]))
            samples.append(SyntheticSample(
                clip=VideoClip(t.array), label=int(row["label"]),
                direction=row["direction"], start=-1, seed=-1))
    return samples
