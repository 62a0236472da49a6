"""Token scan orders over the tubelet grid and frame reorderings.

The canonical flatten is frame-major: index(t, h, w) = (t*n_h + h)*n_w + w,
so spatial and temporal reversals are block operations on contiguous
frame slices. All reversal strategies are involutions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ContractError, ShapeError

ST_REVERSE = "st-reverse"
SPATIAL_REVERSE = "spatial-reverse"
TEMPORAL_REVERSE = "temporal-reverse"
BACKWARD_STRATEGIES = (ST_REVERSE, SPATIAL_REVERSE, TEMPORAL_REVERSE)

FRAME_STRATEGIES = ("sequential", "interleaved", "pairwise", "blockwise")


@dataclass(frozen=True)
class TubeletGrid:
    """Token counts per axis of the tubelet grid."""

    n_t: int
    n_h: int
    n_w: int

    def __post_init__(self):
        if min(self.n_t, self.n_h, self.n_w) < 1:
            raise ShapeError(f"grid extents must be >= 1, got {self}")

    @property
    def tokens(self) -> int:
        return self.n_t * self.n_h * self.n_w


@dataclass(frozen=True)
class ScanPermutation:
    """Bijection over token indices with its precomputed inverse."""

    order: np.ndarray
    inverse: np.ndarray

    @staticmethod
    def from_order(order) -> "ScanPermutation":
        order = np.asarray(order, dtype=np.int64)
        n = order.shape[0]
        if not np.array_equal(np.sort(order), np.arange(n)):
            raise ContractError("order is not a bijection on [0, len)")
        inverse = np.empty(n, dtype=np.int64)
        inverse[order] = np.arange(n, dtype=np.int64)
        return ScanPermutation(order=order, inverse=inverse)

    def __len__(self) -> int:
        return int(self.order.shape[0])

    def inverted(self) -> "ScanPermutation":
        return ScanPermutation(order=self.inverse.copy(), inverse=self.order.copy())


def forward_order(g: TubeletGrid) -> ScanPermutation:
    """Canonical frame-major flatten; the identity permutation."""
    return ScanPermutation.from_order(np.arange(g.tokens, dtype=np.int64))


def backward_order(g: TubeletGrid, strategy: str) -> ScanPermutation:
    """Token order for the backward scan direction."""
    idx = np.arange(g.tokens, dtype=np.int64).reshape(g.n_t, g.n_h * g.n_w)
    if strategy == ST_REVERSE:
        order = idx.reshape(-1)[::-1]
    elif strategy == SPATIAL_REVERSE:
        order = idx[:, ::-1].reshape(-1)
    elif strategy == TEMPORAL_REVERSE:
        order = idx[::-1, :].reshape(-1)
    else:
        raise ContractError(f"unknown backward strategy {strategy!r}")
    return ScanPermutation.from_order(order.copy())


def with_class_token(p: ScanPermutation) -> ScanPermutation:
    """Extend a video-token permutation to a sequence with a class token.

    Reversal orders are generated over video tokens only, and the class
    token keeps canonical index 0 in every block's input and output. In
    the scanned order itself the class token is visited last: a causal
    scan only propagates state forward, so visiting it first would leave
    its readout blind to the whole clip.
    """
    order = np.concatenate([p.order + 1, [0]])
    return ScanPermutation.from_order(order)


def apply_permutation(tokens, p: ScanPermutation):
    """out[i] = tokens[order[i]]; rows beyond axis 0 ride along."""
    tokens = np.asarray(tokens)
    if tokens.shape[0] != len(p):
        raise ShapeError(f"{tokens.shape[0]} tokens vs permutation of {len(p)}")
    return tokens[p.order]


def compose(p: ScanPermutation, q: ScanPermutation) -> ScanPermutation:
    """Permutation equal to applying q first, then p."""
    return ScanPermutation.from_order(q.order[p.order])


def frame_reorder(t: int, strategy: str) -> np.ndarray:
    """Frame index order for the temporal-consistency probes.

    interleaved alternates ends inward; pairwise keeps consecutive frame
    pairs intact (first pair, then the remaining pairs back to front);
    blockwise swaps the two halves.
    """
    if t < 2:
        raise ContractError("frame reordering needs at least 2 frames")
    if strategy == "sequential":
        return np.arange(t, dtype=np.int64)
    if strategy == "interleaved":
        out = np.empty(t, dtype=np.int64)
        lo, hi = 0, t - 1
        for i in range(t):
            if i % 2 == 0:
                out[i] = lo
                lo += 1
            else:
                out[i] = hi
                hi -= 1
        return out
    if strategy in ("pairwise", "blockwise"):
        if t % 2:
            raise ContractError(f"{strategy} reordering needs an even frame count")
        if strategy == "blockwise":
            return np.concatenate([np.arange(t // 2, t), np.arange(t // 2)]).astype(np.int64)
        # one pair from the front, two from the back, repeating inward
        pairs = [(2 * i, 2 * i + 1) for i in range(t // 2)]
        seq = []
        front, back = 0, len(pairs) - 1
        take_front = True
        while front <= back:
            if take_front:
                seq.append(pairs[front])
                front += 1
            else:
                for _ in range(2):
                    if back >= front:
                        seq.append(pairs[back])
                        back -= 1
            take_front = not take_front
        return np.asarray([f for pair in seq for f in pair], dtype=np.int64)
    raise ContractError(f"unknown frame strategy {strategy!r}")
