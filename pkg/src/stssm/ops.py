"""Differentiable array ops.

Every function here accepts a mix of Vars and plain ndarrays. With at
least one Var the op records itself (with its backward rule) on that
tape; with plain arrays only, it is a pure numpy computation with no
tracing overhead — the same code path serves training and inference.

All backward rules are exercised by the finite-difference suite in
tests/test_ops_grad.py; DIFFERENTIABLE_OPS enumerates what that suite
must cover.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from . import ssm as ssm_math
from .autodiff import Var
from .exceptions import ContractError, NumericError, ShapeError

DIFFERENTIABLE_OPS: dict[str, object] = {}


def _register(name):
    def deco(fn):
        DIFFERENTIABLE_OPS[name] = fn
        return fn
    return deco


def value_of(x):
    return x.value if isinstance(x, Var) else np.asarray(x)


def _tape_of(*xs):
    tape = None
    for x in xs:
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif tape is not x.tape:
                raise ContractError("inputs live on different tapes")
    return tape


def _dispatch(name, inputs, forward, make_backward, nout=1):
    vals = tuple(value_of(x) for x in inputs)
    outs = forward(*vals)
    if not isinstance(outs, tuple):
        outs = (outs,)
    tape = _tape_of(*inputs)
    if tape is None:
        return outs if nout > 1 else outs[0]
    out_vars = tape.record(name, inputs, outs, forward, make_backward(vals, outs))
    return out_vars if nout > 1 else out_vars[0]


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# linear algebra and elementwise


@_register("matmul")
def matmul(a, b):
    def make_bwd(vals, outs):
        av, bv = vals
        return lambda g: (g @ bv.T, av.T @ g)
    return _dispatch("matmul", (a, b), lambda av, bv: av @ bv, make_bwd)


@_register("vecmat")
def vecmat(v, m):
    """(d,) @ (d, k) -> (k,)."""
    def make_bwd(vals, outs):
        vv, mv = vals
        return lambda g: (mv @ g, np.outer(vv, g))
    return _dispatch("vecmat", (v, m), lambda vv, mv: vv @ mv, make_bwd)


@_register("add")
def add(a, b):
    if value_of(a).shape != value_of(b).shape:
        raise ShapeError(f"add needs equal shapes, got {value_of(a).shape} vs {value_of(b).shape}")
    def make_bwd(vals, outs):
        return lambda g: (g, g)
    return _dispatch("add", (a, b), lambda av, bv: av + bv, make_bwd)


@_register("add_bias")
def add_bias(x, b):
    """Broadcast a (d,) bias over the leading axes of x."""
    def make_bwd(vals, outs):
        d = vals[1].shape[0]
        return lambda g: (g, g.reshape(-1, d).sum(axis=0))
    return _dispatch("add_bias", (x, b), lambda xv, bv: xv + bv, make_bwd)


@_register("mul")
def mul(a, b):
    if value_of(a).shape != value_of(b).shape:
        raise ShapeError("mul needs equal shapes")
    def make_bwd(vals, outs):
        av, bv = vals
        return lambda g: (g * bv, g * av)
    return _dispatch("mul", (a, b), lambda av, bv: av * bv, make_bwd)


@_register("scale")
def scale(x, k: float):
    k = float(k)
    def make_bwd(vals, outs):
        return lambda g: (g * k,)
    return _dispatch("scale", (x,), lambda xv: xv * k, make_bwd)


@_register("sum_all")
def sum_all(x):
    def make_bwd(vals, outs):
        xv = vals[0]
        return lambda g: (np.full_like(xv, float(g)),)
    return _dispatch("sum_all", (x,), lambda xv: np.asarray(xv.sum()), make_bwd)


@_register("silu")
def silu(x):
    def fwd(xv):
        return xv * _sigmoid(xv)
    def make_bwd(vals, outs):
        xv = vals[0]
        s = _sigmoid(xv)
        return lambda g: (g * s * (1.0 + xv * (1.0 - s)),)
    return _dispatch("silu", (x,), fwd, make_bwd)


@_register("softplus")
def softplus(x):
    def make_bwd(vals, outs):
        s = _sigmoid(vals[0])
        return lambda g: (g * s,)
    return _dispatch("softplus", (x,), ssm_math.softplus, make_bwd)


@_register("neg_exp")
def neg_exp(x):
    """-exp(x); keeps state coefficients strictly negative while training."""
    def make_bwd(vals, outs):
        ov = outs[0]
        return lambda g: (g * ov,)
    return _dispatch("neg_exp", (x,), lambda xv: -np.exp(xv), make_bwd)


@_register("layer_norm")
def layer_norm(x, gamma, beta, eps: float = 1e-5):
    def fwd(xv, gv, bv):
        mu = xv.mean(axis=-1, keepdims=True)
        xc = xv - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        return xc * inv * gv + bv
    def make_bwd(vals, outs):
        xv, gv, bv = vals
        mu = xv.mean(axis=-1, keepdims=True)
        xc = xv - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        def bwd(g):
            d = xv.shape[-1]
            dgamma = (g * xhat).reshape(-1, d).sum(axis=0)
            dbeta = g.reshape(-1, d).sum(axis=0)
            gh = g * gv
            dx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
            return dx, dgamma, dbeta
        return bwd
    return _dispatch("layer_norm", (x, gamma, beta), fwd, make_bwd)


# ---------------------------------------------------------------------------
# sequence layout


@_register("permute_rows")
def permute_rows(x, order: np.ndarray):
    """out[i] = x[order[i]] for a bijective index list."""
    order = np.asarray(order)
    if order.shape[0] != value_of(x).shape[0]:
        raise ShapeError("permutation length does not match row count")
    def fwd(xv):
        return xv[order]
    def make_bwd(vals, outs):
        def bwd(g):
            gx = np.empty_like(vals[0])
            gx[order] = g
            return (gx,)
        return bwd
    return _dispatch("permute_rows", (x,), fwd, make_bwd)


@_register("prepend_row")
def prepend_row(row, x):
    """Stack a (d,) row on top of an (n, d) block."""
    def fwd(rv, xv):
        return np.concatenate([rv[None, :], xv], axis=0)
    def make_bwd(vals, outs):
        return lambda g: (g[0], g[1:])
    return _dispatch("prepend_row", (row, x), fwd, make_bwd)


@_register("mean_rows")
def mean_rows(x):
    """Mean over axis 0 of an (n, d) block."""
    def make_bwd(vals, outs):
        n = vals[0].shape[0]
        return lambda g: (np.tile(g / n, (n, 1)),)
    return _dispatch("mean_rows", (x,), lambda xv: xv.mean(axis=0), make_bwd)


@_register("reshape")
def reshape(x, shape: tuple):
    shape = tuple(shape)
    def make_bwd(vals, outs):
        xv = vals[0]
        return lambda g: (g.reshape(xv.shape),)
    return _dispatch("reshape", (x,), lambda xv: xv.reshape(shape).copy(), make_bwd)


@_register("transpose2d")
def transpose2d(x):
    def make_bwd(vals, outs):
        return lambda g: (np.ascontiguousarray(g.T),)
    return _dispatch("transpose2d", (x,), lambda xv: np.ascontiguousarray(xv.T), make_bwd)


@_register("take_row")
def take_row(x, i: int):
    i = int(i)
    def make_bwd(vals, outs):
        xv = vals[0]
        def bwd(g):
            gx = np.zeros_like(xv)
            gx[i] = g
            return (gx,)
        return bwd
    return _dispatch("take_row", (x,), lambda xv: xv[i].copy(), make_bwd)


# ---------------------------------------------------------------------------
# convolutions


@_register("conv1d_causal")
def conv1d_causal(x, w, b):
    """Depthwise causal conv over (len, ch) with (ch, k) taps.

    out[t, c] = b[c] + sum_j w[c, j] * x[t - j, c], zero-padded on the left.
    """
    if value_of(x).shape[1] != value_of(w).shape[0]:
        raise ShapeError("channel counts of x and w differ")
    def fwd(xv, wv, bv):
        length = xv.shape[0]
        out = np.tile(bv, (length, 1)).astype(xv.dtype)
        for j in range(wv.shape[1]):
            out[j:] += xv[:length - j if j else length] * wv[:, j]
        return out
    def make_bwd(vals, outs):
        xv, wv, bv = vals
        def bwd(g):
            length = xv.shape[0]
            k = wv.shape[1]
            gx = np.zeros_like(xv)
            gw = np.zeros_like(wv)
            for j in range(k):
                stop = length - j if j else length
                gx[:stop] += g[j:] * wv[:, j]
                gw[:, j] = (g[j:] * xv[:stop]).sum(axis=0)
            return gx, gw, g.sum(axis=0)
        return bwd
    return _dispatch("conv1d_causal", (x, w, b), fwd, make_bwd)


def tubelet_patch_axes(shape, spec):
    """Token-grid extents (n_t, n_h, n_w) for a (C, T, H, W) clip."""
    c, t, h, w = shape
    st, sh, sw = spec
    if st > t or sh > h or sw > w:
        raise ContractError(f"tubelet {spec} exceeds clip extents {shape[1:]}")
    return t // st, h // sh, w // sw


@_register("extract_tubelets")
def extract_tubelets(clip, spec: tuple):
    """Slice a (C, T, H, W) clip into flattened non-overlapping tubelets.

    Returns (n_t*n_h*n_w, C*st*sh*sw) rows in frame-major token order;
    trailing remainder frames and pixels are dropped.
    """
    st, sh, sw = spec
    n_t, n_h, n_w = tubelet_patch_axes(value_of(clip).shape, spec)
    def fwd(v):
        c = v.shape[0]
        cropped = v[:, :n_t * st, :n_h * sh, :n_w * sw]
        tiles = cropped.reshape(c, n_t, st, n_h, sh, n_w, sw)
        tiles = tiles.transpose(1, 3, 5, 0, 2, 4, 6)
        return np.ascontiguousarray(tiles).reshape(n_t * n_h * n_w, c * st * sh * sw)
    def make_bwd(vals, outs):
        v = vals[0]
        def bwd(g):
            c = v.shape[0]
            tiles = g.reshape(n_t, n_h, n_w, c, st, sh, sw)
            tiles = tiles.transpose(3, 0, 4, 1, 5, 2, 6)
            gv = np.zeros_like(v)
            gv[:, :n_t * st, :n_h * sh, :n_w * sw] = tiles.reshape(
                c, n_t * st, n_h * sh, n_w * sw)
            return (gv,)
        return bwd
    return _dispatch("extract_tubelets", (clip,), fwd, make_bwd)


# ---------------------------------------------------------------------------
# state-space ops


@_register("zoh_discretize")
def zoh_discretize(a, b, delta, method: str = "exact"):
    """Traced ZOH update; returns (abar, bbar) as a pair."""
    def fwd(av, bv, dv):
        return ssm_math.discretize_arrays(av, bv, dv, method)
    def make_bwd(vals, outs):
        av, bv, dv = vals
        abar = outs[0]
        z = dv[:, :, None] * av[None, :, :]
        def bwd(ga, gb):
            gz = np.zeros_like(z)
            g_delta = np.zeros_like(dv)
            g_b = np.zeros_like(bv)
            if ga is not None:
                gz += ga * abar
            if gb is not None:
                if method == "exact":
                    p = ssm_math.phi(z)
                    gz += gb * ssm_math.phi_prime(z) * dv[:, :, None] * bv[:, None, :]
                    g_delta += (gb * p * bv[:, None, :]).sum(axis=2)
                    g_b += (gb * p * dv[:, :, None]).sum(axis=1)
                else:
                    g_delta += (gb * bv[:, None, :]).sum(axis=2)
                    g_b += (gb * dv[:, :, None]).sum(axis=1)
            g_a = (gz * dv[:, :, None]).sum(axis=0)
            g_delta += (gz * av[None, :, :]).sum(axis=2)
            return g_a, g_b, g_delta
        return bwd
    return _dispatch("zoh_discretize", (a, b, delta), fwd, make_bwd, nout=2)


@_register("ssm_scan")
def ssm_scan(abar, bbar, c, d_skip, x, h0=None):
    """Traced scan recurrence; backward replays it in reverse time."""
    if h0 is None:
        ch, n = value_of(abar).shape[1:]
        h0 = np.zeros((ch, n), dtype=value_of(x).dtype)
    saved = {}
    def fwd(av, bv, cv, dv, xv, hv):
        y, h = kernels.scan_forward(*(np.ascontiguousarray(q) for q in (av, bv, cv, dv, xv, hv)))
        if not (np.isfinite(y).all() and np.isfinite(h).all()):
            raise NumericError(f"non-finite scan state at step {ssm_math._first_bad_step(y, h)}")
        saved["h"] = h
        return y
    def make_bwd(vals, outs):
        av, bv, cv, dv, xv, hv = vals
        h = saved["h"]
        def bwd(g):
            return kernels.scan_backward(
                *(np.ascontiguousarray(q) for q in (av, bv, cv, dv, xv, hv)),
                h, np.ascontiguousarray(g))
        return bwd
    return _dispatch("ssm_scan", (abar, bbar, c, d_skip, x, h0), fwd, make_bwd)


@_register("smoothed_ce")
def smoothed_ce(logits, label: int, smoothing: float = 0.0):
    """Cross-entropy against the eps-smoothed target distribution."""
    if not 0.0 <= smoothing < 1.0:
        raise ContractError("smoothing must be in [0, 1)")
    n_cls = value_of(logits).shape[0]
    label = int(label)
    if not 0 <= label < n_cls:
        raise ContractError(f"label {label} out of range for {n_cls} classes")
    def fwd(lv):
        q = np.full(n_cls, smoothing / n_cls, dtype=lv.dtype)
        q[label] += 1.0 - smoothing
        m = lv.max()
        logz = m + np.log(np.exp(lv - m).sum())
        return np.asarray(-(q * (lv - logz)).sum())
    def make_bwd(vals, outs):
        lv = vals[0]
        q = np.full(n_cls, smoothing / n_cls, dtype=lv.dtype)
        q[label] += 1.0 - smoothing
        m = lv.max()
        e = np.exp(lv - m)
        p = e / e.sum()
        return lambda g: (float(g) * (p - q),)
    return _dispatch("smoothed_ce", (logits,), fwd, make_bwd)
