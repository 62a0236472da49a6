"""Video encoder: gated bidirectional selective-scan blocks.

Each block normalizes its input, lifts it to width 2d along two branches
(scan path and gate), applies a causal depthwise convolution plus SiLU on
the scan path, runs the spatio-temporal forward and backward scans, gates,
and projects back to width d with a residual connection. A class token is
prepended at position 0 and stays pinned there under every backward scan
order; the classification head is a single linear layer on its final
normalized state.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, fields

import numpy as np

from . import frontend, ops, tensor
from .exceptions import ContractError, ShapeError
from .scanorder import (BACKWARD_STRATEGIES, ScanPermutation, TubeletGrid,
                        backward_order, with_class_token)

_NP_DTYPE = {"f32": np.float32, "f64": np.float64}


@dataclass
class ModelConfig:
    blocks: int = 24
    dim: int = 384
    state_dim: int = 16
    tubelet: tuple = (2, 16, 16)
    frames: int = 16
    height: int = 224
    width: int = 224
    channels: int = 3
    num_classes: int = 400
    pe_mode: str = "learnable"
    pe_init: str = "random"
    backward: str = "st-reverse"
    class_token: bool = True
    delta_rank: int | None = None  # None -> ceil(dim / 16)
    conv_kernel: int = 4
    discretize: str = "exact"
    dtype: str = "f32"

    def __post_init__(self):
        self.tubelet = tuple(int(v) for v in self.tubelet)
        if self.blocks < 1:
            raise ContractError("blocks must be >= 1")
        if self.dim < 2:
            raise ContractError("dim must be >= 2")
        if self.num_classes < 2:
            raise ContractError("num_classes must be >= 2")
        if self.state_dim < 1:
            raise ContractError("state_dim must be >= 1")
        if len(self.tubelet) != 3:
            raise ContractError("tubelet must have three extents")
        if self.pe_mode not in frontend.PE_MODES:
            raise ContractError(f"unknown pe_mode {self.pe_mode!r}")
        if self.pe_mode == "learnable" and self.pe_init not in frontend.PE_INITS:
            raise ContractError(f"unknown pe_init {self.pe_init!r}")
        if self.backward not in BACKWARD_STRATEGIES:
            raise ContractError(f"unknown backward strategy {self.backward!r}")
        if self.discretize not in ("exact", "simplified"):
            raise ContractError(f"unknown discretize method {self.discretize!r}")
        if self.dtype not in _NP_DTYPE:
            raise ContractError(f"unknown dtype {self.dtype!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ContractError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["tubelet"] = list(self.tubelet)
        return out

    @property
    def inner_dim(self) -> int:
        return 2 * self.dim

    @property
    def dt_rank(self) -> int:
        return self.delta_rank if self.delta_rank is not None else math.ceil(self.dim / 16)

    def grid(self) -> TubeletGrid:
        st, sh, sw = self.tubelet
        return TubeletGrid(self.frames // st, self.height // sh, self.width // sw)

    @property
    def seq_len(self) -> int:
        return self.grid().tokens + (1 if self.class_token else 0)

    @property
    def np_dtype(self):
        return _NP_DTYPE[self.dtype]


def weight_shapes(cfg: ModelConfig) -> dict:
    """Every learnable tensor of the assembled model, in init order."""
    d, e, n, r, k = cfg.dim, cfg.inner_dim, cfg.state_dim, cfg.dt_rank, cfg.conv_kernel
    st, sh, sw = cfg.tubelet
    shapes: dict[str, tuple] = {}
    shapes["tokenizer.weight"] = (d, cfg.channels, st, sh, sw)
    shapes["tokenizer.bias"] = (d,)
    if cfg.pe_mode == "learnable":
        shapes["pos_embed"] = (cfg.grid().tokens, d)
    if cfg.class_token:
        shapes["cls_token"] = (d,)
    for i in range(cfg.blocks):
        p = f"blocks.{i}."
        shapes[p + "norm.gamma"] = (d,)
        shapes[p + "norm.beta"] = (d,)
        shapes[p + "in_proj"] = (d, e)
        shapes[p + "gate_proj"] = (d, e)
        shapes[p + "conv1d.weight"] = (e, k)
        shapes[p + "conv1d.bias"] = (e,)
        for dd in ("fwd", "bwd"):
            q = p + dd + "."
            shapes[q + "a_log"] = (e, n)
            shapes[q + "d_skip"] = (e,)
            shapes[q + "b_proj"] = (e, n)
            shapes[q + "c_proj"] = (e, n)
            shapes[q + "dt_down"] = (e, r)
            shapes[q + "dt_up"] = (r, e)
            shapes[q + "dt_bias"] = (e,)
        shapes[p + "out_proj"] = (e, d)
    shapes["final_norm.gamma"] = (d,)
    shapes["final_norm.beta"] = (d,)
    shapes["head.weight"] = (d, cfg.num_classes)
    shapes["head.bias"] = (cfg.num_classes,)
    return shapes


def init_weights(cfg: ModelConfig, rng: np.random.Generator,
                 p_image: np.ndarray | None = None) -> dict:
    """Draw all weights; deterministic given the generator state.

    Projections use fan-in scaling (std = 1/sqrt(fan_in)); embeddings use
    std 0.02. State coefficients start at a = -(j+1) for state index j
    (via a_log); skip weights start at 1; the delta bias is sampled so
    softplus lands log-uniformly in [1e-3, 1e-1], keeping early training
    in the stable abar regime.
    """
    n, r = cfg.state_dim, cfg.dt_rank
    dt = cfg.np_dtype
    weights: dict[str, np.ndarray] = {}
    for name, shape in weight_shapes(cfg).items():
        leaf = name.split(".")[-1]
        if name == "pos_embed" and cfg.pe_init != "random":
            if p_image is None:
                raise ContractError(f"pe_init {cfg.pe_init!r} needs an image table")
            pe = frontend.init_pos_embed(cfg.pe_init, p_image, cfg.grid())
            arr = pe.table
        elif name in ("pos_embed", "cls_token"):
            arr = rng.normal(0.0, 0.02, size=shape)
        elif leaf in ("gamma", "d_skip"):
            arr = np.ones(shape)
        elif leaf in ("beta", "bias"):
            arr = np.zeros(shape)
        elif leaf == "a_log":
            arr = np.tile(np.log(np.arange(1, n + 1)), (cfg.inner_dim, 1))
        elif leaf == "dt_bias":
            target = np.exp(rng.uniform(np.log(1e-3), np.log(1e-1), size=shape))
            arr = np.log(np.expm1(target))
        else:
            fan_in = shape[0] if len(shape) == 2 else int(np.prod(shape[1:]))
            arr = rng.normal(0.0, fan_in ** -0.5, size=shape)
        weights[name] = np.ascontiguousarray(arr, dtype=dt)
    return weights


def as_leaves(tape, weights: dict) -> dict:
    """Register every weight as a named tape leaf."""
    return {name: tape.leaf(arr, name) for name, arr in weights.items()}


@dataclass
class DirectionParams:
    a_log: object
    d_skip: object
    b_proj: object
    c_proj: object
    dt_down: object
    dt_up: object
    dt_bias: object


@dataclass
class BlockParams:
    norm_gamma: object
    norm_beta: object
    in_proj: object
    gate_proj: object
    conv_w: object
    conv_b: object
    fwd: DirectionParams
    bwd: DirectionParams
    out_proj: object


def block_params(params: dict, i: int) -> BlockParams:
    p = f"blocks.{i}."
    def direction(dd):
        q = p + dd + "."
        return DirectionParams(*(params[q + f] for f in
                                 ("a_log", "d_skip", "b_proj", "c_proj",
                                  "dt_down", "dt_up", "dt_bias")))
    return BlockParams(
        norm_gamma=params[p + "norm.gamma"], norm_beta=params[p + "norm.beta"],
        in_proj=params[p + "in_proj"], gate_proj=params[p + "gate_proj"],
        conv_w=params[p + "conv1d.weight"], conv_b=params[p + "conv1d.bias"],
        fwd=direction("fwd"), bwd=direction("bwd"), out_proj=params[p + "out_proj"])


def _scan_direction(tokens, dp: DirectionParams, perm: ScanPermutation | None,
                    method: str, capture: list | None = None):
    x = ops.permute_rows(tokens, perm.order) if perm is not None else tokens
    b = ops.matmul(x, dp.b_proj)
    c = ops.matmul(x, dp.c_proj)
    pre = ops.add_bias(ops.matmul(ops.matmul(x, dp.dt_down), dp.dt_up), dp.dt_bias)
    delta = ops.softplus(pre)
    if capture is not None:
        capture.append(ops.value_of(delta).copy())
    a = ops.neg_exp(dp.a_log)
    abar, bbar = ops.zoh_discretize(a, b, delta, method=method)
    y = ops.ssm_scan(abar, bbar, c, dp.d_skip, x)
    if perm is not None:
        y = ops.permute_rows(y, perm.inverse)
    return y


def st_ssm(tokens, fwd: DirectionParams, bwd: DirectionParams, strategy: str,
           grid: TubeletGrid, class_token: bool = True, method: str = "exact",
           capture: list | None = None):
    """Sum of the forward scan and the un-permuted backward scan.

    The backward branch permutes its input by the strategy's order, scans,
    and maps the output back to canonical positions before the sum, so the
    two branches stay positionally aligned.
    """
    if ops.value_of(tokens).shape[0] != grid.tokens + (1 if class_token else 0):
        raise ShapeError("token count does not match grid / class-token flag")
    perm = backward_order(grid, strategy)
    if class_token:
        perm = with_class_token(perm)
    y_f = _scan_direction(tokens, fwd, None, method, capture)
    y_b = _scan_direction(tokens, bwd, perm, method)
    return ops.add(y_f, y_b)


def encoder_block(tokens, bp: BlockParams, strategy: str, grid: TubeletGrid,
                  class_token: bool = True, method: str = "exact",
                  capture: list | None = None):
    u = ops.layer_norm(tokens, bp.norm_gamma, bp.norm_beta)
    a_in = ops.silu(ops.conv1d_causal(ops.matmul(u, bp.in_proj), bp.conv_w, bp.conv_b))
    gate = ops.silu(ops.matmul(u, bp.gate_proj))
    s = st_ssm(a_in, bp.fwd, bp.bwd, strategy, grid, class_token, method, capture)
    update = ops.matmul(ops.mul(s, gate), bp.out_proj)
    return ops.add(tokens, update)


def _check_geometry(cfg: ModelConfig, arr: np.ndarray) -> None:
    want = (cfg.channels, cfg.frames, cfg.height, cfg.width)
    if tuple(arr.shape) != want:
        raise ShapeError(f"clip shape {arr.shape} does not match config {want}")


def model_forward(clip, cfg: ModelConfig, params: dict,
                  capture_deltas: list | None = None, with_tokens: bool = False):
    """Full forward pass; returns the (num_classes,) logit vector.

    tokenize -> positional embedding -> class token -> encoder blocks ->
    final norm -> class-token readout -> linear head. With with_tokens,
    also returns the final normalized token matrix (used by gradient
    diagnostics that probe every sequence position).
    """
    arr = clip.data if isinstance(clip, frontend.VideoClip) else np.asarray(clip)
    _check_geometry(cfg, arr)
    arr = np.ascontiguousarray(arr, dtype=cfg.np_dtype)
    grid = cfg.grid()

    patches = ops.extract_tubelets(arr, cfg.tubelet)
    d = cfg.dim
    patch_len = ops.value_of(patches).shape[1]
    w_mat = ops.transpose2d(ops.reshape(params["tokenizer.weight"], (d, patch_len)))
    tokens = ops.add_bias(ops.matmul(patches, w_mat), params["tokenizer.bias"])

    if cfg.pe_mode == "learnable":
        tokens = ops.add(tokens, params["pos_embed"])
    elif cfg.pe_mode == "sinusoid":
        table = frontend.sinusoid_pos_embed(grid, d).table.astype(cfg.np_dtype)
        tokens = ops.add(tokens, table)

    if cfg.class_token:
        tokens = ops.prepend_row(params["cls_token"], tokens)

    for i in range(cfg.blocks):
        tokens = encoder_block(tokens, block_params(params, i), cfg.backward,
                               grid, cfg.class_token, cfg.discretize, capture_deltas)

    u = ops.layer_norm(tokens, params["final_norm.gamma"], params["final_norm.beta"])
    pooled = ops.take_row(u, 0) if cfg.class_token else ops.mean_rows(u)
    logits = ops.add(ops.vecmat(pooled, params["head.weight"]), params["head.bias"])
    return (logits, u) if with_tokens else logits


@dataclass
class DeltaMap:
    """Channel-averaged forward-path step sizes on the token grid."""

    values: np.ndarray  # (L, n_t, n_h, n_w), strictly positive

    def __post_init__(self):
        if np.any(self.values <= 0):
            raise ContractError("delta maps must be strictly positive")


def extract_delta_maps(clip, cfg: ModelConfig, params: dict) -> DeltaMap:
    """Forward-direction step sizes per layer, averaged over channels."""
    capture: list = []
    model_forward(clip, cfg, params, capture_deltas=capture)
    grid = cfg.grid()
    maps = []
    for delta in capture:
        video = delta[1:] if cfg.class_token else delta
        maps.append(video.mean(axis=1).reshape(grid.n_t, grid.n_h, grid.n_w))
    return DeltaMap(values=np.stack(maps, axis=0))


def delta_csv(dm: DeltaMap) -> str:
    lines = ["layer,t,h,w,value"]
    L, n_t, n_h, n_w = dm.values.shape
    for layer in range(L):
        for t in range(n_t):
            for h in range(n_h):
                for w in range(n_w):
                    lines.append(f"{layer},{t},{h},{w},{dm.values[layer, t, h, w]:.9g}")
    return "\n".join(lines) + "\n"


def delta_pgms(dm: DeltaMap) -> dict:
    """One 8-bit binary PGM per (layer, frame), normalized to its own range."""
    out = {}
    L, n_t, n_h, n_w = dm.values.shape
    for layer in range(L):
        for t in range(n_t):
            img = dm.values[layer, t]
            lo, hi = float(img.min()), float(img.max())
            if hi > lo:
                scaled = np.round((img - lo) / (hi - lo) * 255.0)
            else:
                scaled = np.zeros_like(img)
            header = f"P5\n{n_w} {n_h}\n255\n".encode()
            out[f"delta_l{layer:02d}_f{t:03d}.pgm"] = header + scaled.astype(np.uint8).tobytes()
    return out


# ---------------------------------------------------------------------------
# checkpoints: directory of binary tensors plus a text manifest


def save_checkpoint(dirpath, cfg: ModelConfig, weights: dict) -> None:
    os.makedirs(dirpath, exist_ok=True)
    with open(os.path.join(dirpath, "config.json"), "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    lines = []
    for idx, (name, arr) in enumerate(weights.items()):
        fname = f"w{idx:04d}.vmtb"
        tensor.save_tensor(os.path.join(dirpath, fname), tensor.from_array(arr))
        shape = "x".join(str(s) for s in arr.shape)
        lines.append(f"{name}\t{fname}\t{shape}")
    with open(os.path.join(dirpath, "manifest.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(dirpath):
    with open(os.path.join(dirpath, "config.json")) as fh:
        cfg = ModelConfig.from_dict(json.load(fh))
    weights = {}
    with open(os.path.join(dirpath, "manifest.txt")) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            name, fname, shape = line.split("\t")
            t = tensor.load_tensor(os.path.join(dirpath, fname))
            want = tuple(int(s) for s in shape.split("x"))
            if t.shape != want:
                raise ContractError(f"manifest shape {want} != stored {t.shape} for {name}")
            weights[name] = t.array.copy()
    return cfg, weights
