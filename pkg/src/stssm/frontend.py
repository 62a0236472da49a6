"""Video tokenizer and positional embeddings.

Clips are channels-first (C, T, H, W) with pixel values in [0, 1]. The
tokenizer is a non-overlapping strided 3D convolution over tubelets of
size (s_t, s_h, s_w); because stride equals kernel size it reduces to a
patch-extract followed by one matmul. 3D tokenizer weights can be built
from 2D image weights by replicating along time and dividing by s_t, so
a temporally constant clip tokenizes exactly like the still image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .exceptions import ContractError, ShapeError
from .scanorder import TubeletGrid

PE_MODES = ("none", "sinusoid", "learnable")
PE_INITS = ("expand", "interp-spatial", "interp-embed", "random")


@dataclass(frozen=True)
class VideoClip:
    """Channels-first video tensor with pixel values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 4:
            raise ShapeError(f"clip must be (C, T, H, W), got {arr.shape}")
        if min(arr.shape) < 1:
            raise ShapeError("all clip extents must be >= 1")
        if not np.all(np.isfinite(arr)):
            raise ContractError("clip contains non-finite pixels")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ContractError("pixel values must lie in [0, 1]")
        object.__setattr__(self, "data", arr)

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True)
class TubeletSpec:
    s_t: int
    s_h: int
    s_w: int

    def __post_init__(self):
        if min(self.s_t, self.s_h, self.s_w) < 1:
            raise ShapeError("tubelet extents must be >= 1")

    def as_tuple(self):
        return (self.s_t, self.s_h, self.s_w)


@dataclass
class PosEmbed:
    """Positional table matching the flattened token grid."""

    mode: str
    init: str | None
    table: np.ndarray | None  # (n_t*n_h*n_w, d) or None for mode "none"


def tubelet_grid(clip, spec: TubeletSpec) -> TubeletGrid:
    """Token counts n = floor(extent / tubelet); remainders are dropped."""
    shape = clip.shape if isinstance(clip, VideoClip) else tuple(clip)
    n_t, n_h, n_w = ops.tubelet_patch_axes(shape, spec.as_tuple())
    return TubeletGrid(n_t=n_t, n_h=n_h, n_w=n_w)


def tokenize(clip: VideoClip, w3d: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Embed each tubelet: token(t,h,w)[o] = bias[o] + <w3d[o], tubelet>.

    w3d: (d, C, s_t, s_h, s_w). Output is (n_t*n_h*n_w, d) in frame-major
    order.
    """
    arr = clip.data if isinstance(clip, VideoClip) else np.asarray(clip)
    d, c_w, st, sh, sw = w3d.shape
    if c_w != arr.shape[0]:
        raise ShapeError(f"weights expect {c_w} channels, clip has {arr.shape[0]}")
    if bias.shape != (d,):
        raise ShapeError(f"bias must be ({d},), got {bias.shape}")
    patches = ops.extract_tubelets(arr, (st, sh, sw))
    return patches @ w3d.reshape(d, -1).T + bias


def inflate_2d_to_3d(w2d: np.ndarray, s_t: int) -> np.ndarray:
    """Average-preserving temporal inflation: every time slice is w2d / s_t."""
    if s_t < 1:
        raise ContractError("s_t must be >= 1")
    w2d = np.asarray(w2d)
    d, c, sh, sw = w2d.shape
    return np.broadcast_to(w2d[:, :, None, :, :] / s_t, (d, c, s_t, sh, sw)).copy()


def sinusoid_pos_embed(g: TubeletGrid, d: int) -> PosEmbed:
    """Fixed sin/cos table over the flattened token index."""
    if d % 2:
        raise ContractError("sinusoid embedding needs an even dimension")
    pos = np.arange(g.tokens, dtype=np.float64)[:, None]
    idx = np.arange(0, d, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, idx / d)
    table = np.empty((g.tokens, d), dtype=np.float64)
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return PosEmbed(mode="sinusoid", init=None, table=table)


def init_pos_embed(method: str, p_image, g: TubeletGrid, d: int | None = None,
                   rng: np.random.Generator | None = None) -> PosEmbed:
    """Build a learnable positional table from a per-frame image table.

    expand replicates the image table once per frame; interp-spatial
    stretches it along the flattened spatial axis; interp-embed stretches
    each row to d*n_t scalars and regroups them into n_t frame blocks;
    random ignores p_image and draws N(0, 0.02^2).
    """
    if method not in PE_INITS:
        raise ContractError(f"unknown positional init {method!r}")
    n_spatial = g.n_h * g.n_w
    total = g.tokens
    if method == "random":
        if d is None:
            if p_image is None:
                raise ContractError("random init needs d or a template table")
            d = np.asarray(p_image).shape[1]
        if rng is None:
            raise ContractError("random init needs an rng")
        table = rng.normal(0.0, 0.02, size=(total, d))
        return PosEmbed(mode="learnable", init=method, table=table)

    p_image = np.asarray(p_image)
    if p_image.ndim != 2 or p_image.shape[0] != n_spatial:
        raise ShapeError(f"image table must be ({n_spatial}, d), got {p_image.shape}")
    d = p_image.shape[1]
    if method == "expand":
        table = np.tile(p_image, (g.n_t, 1))
    elif method == "interp-spatial":
        xi = np.linspace(0.0, n_spatial - 1.0, total)
        xp = np.arange(n_spatial, dtype=np.float64)
        table = np.stack([np.interp(xi, xp, p_image[:, j]) for j in range(d)], axis=1)
    else:  # interp-embed
        xi = np.linspace(0.0, d - 1.0, d * g.n_t)
        xp = np.arange(d, dtype=np.float64)
        wide = np.stack([np.interp(xi, xp, p_image[s, :]) for s in range(n_spatial)], axis=0)
        # regroup (n_spatial, n_t, d) frame-major so blocks match the token order
        table = wide.reshape(n_spatial, g.n_t, d).transpose(1, 0, 2).reshape(total, d)
    return PosEmbed(mode="learnable", init=method, table=table)
