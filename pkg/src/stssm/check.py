"""Self-contained invariant suite behind the `check` subcommand.

Each check is a pure function of a seeded generator returning a detail
string (raising AssertionError on violation), so the report text is
bitwise reproducible for a fixed seed.
"""

from __future__ import annotations

import numpy as np

from . import bench, frontend, kernels, ops, scanorder, ssm, tensor
from .autodiff import Tape, backward, finite_diff_check
from .data import gen_dataset, render_clip
from .exceptions import FormatError
from .frontend import VideoClip
from .model import ModelConfig, extract_delta_maps, init_weights, load_checkpoint, \
    model_forward, save_checkpoint, weight_shapes


def check_tensor_format(rng):
    t = tensor.tensor_new([2, 3], 0.0)
    blob = tensor.serialize(t)
    assert len(blob) == 29 + 24, "header must occupy 29 bytes before the payload"
    for dtype in ("f32", "f64"):
        x = tensor.tensor_new([4, 2], rng.normal(size=8), dtype=dtype)
        back = tensor.deserialize(tensor.serialize(x))
        assert back.data.tobytes() == x.data.tobytes(), "round trip must be bit-exact"
    try:
        tensor.deserialize(b"XXXX" + blob[4:])
        raise AssertionError("bad magic must be rejected")
    except FormatError:
        pass
    return "round trips bit-exact, header 29 bytes, bad magic rejected"


def check_matmul(rng):
    a, b = rng.normal(size=(5, 7)), rng.normal(size=(7, 3))
    got = tensor.matmul(tensor.from_array(a), tensor.from_array(b)).array
    want = np.zeros((5, 3))
    for i in range(5):
        for j in range(3):
            for p in range(7):
                want[i, j] += a[i, p] * b[p, j]
    err = np.abs(got - want).max()
    assert err <= 1e-12, f"triple-loop oracle disagrees by {err:.2e}"
    return f"matches triple-loop oracle to {err:.1e}"


def check_discretization(rng):
    worst = 0.0
    for _ in range(200):
        delta = np.exp(rng.uniform(np.log(1e-6), np.log(5.0)))
        a = -np.exp(rng.uniform(np.log(1e-4), np.log(min(4.0, 2.0 / delta))))
        b = rng.normal()
        dp = ssm.zoh_discretize(np.array([[a]]), np.array([[b]]),
                                np.array([[delta]]), c=np.array([[1.0]]))
        z = delta * a
        abar_ref, quot, term = 0.0, 0.0, 1.0
        for k in range(20):
            abar_ref += term
            quot += term / (k + 1.0)
            term = term * z / (k + 1.0)
        bbar_ref = delta * b * quot
        worst = max(worst,
                    abs(dp.abar[0, 0, 0] - abar_ref) / max(1.0, abs(abar_ref)),
                    abs(dp.bbar[0, 0, 0] - bbar_ref) / max(1.0, abs(bbar_ref)))
    assert worst <= 1e-12, f"series oracle disagrees by {worst:.2e}"
    dp0 = ssm.zoh_discretize(np.array([[-2.0]]), np.array([[3.0]]),
                             np.array([[0.0]]), c=np.array([[1.0]]))
    assert dp0.abar[0, 0, 0] == 1.0 and dp0.bbar[0, 0, 0] == 0.0, "zero-step limit"
    return f"200 draws within {worst:.1e} of 20-term series; zero-step limit exact"


def check_scan_oracle(rng):
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(1, 17))
        length = int(rng.integers(2, 65))
        a = -np.exp(rng.uniform(-2, 1, size=n))
        b, c = rng.normal(size=n), rng.normal(size=n)
        d = rng.normal()
        delta = np.exp(rng.uniform(-3, 0.5))
        x = rng.normal(size=length)
        want = ssm.lti_conv_oracle(a, b, c, d, delta, x)
        abar, bbar = ssm.discretize_arrays(a[None, :], np.tile(b, (length, 1)),
                                           np.full((length, 1), delta))
        dp = ssm.DiscreteParams(abar=abar, bbar=bbar, c=np.tile(c, (length, 1)))
        got, _ = ssm.ssm_scan(dp, x[:, None], d_skip=np.array([d]))
        worst = max(worst, float(np.abs(got[:, 0] - want).max()))
    assert worst <= 1e-10, f"scan vs convolution oracle off by {worst:.2e}"
    return f"20 constant-parameter instances within {worst:.1e} of the convolution oracle"


def check_scan_limits(rng):
    x = rng.normal(size=(3, 1))
    dp = ssm.DiscreteParams(abar=np.zeros((3, 1, 1)), bbar=np.ones((3, 1, 1)),
                            c=np.ones((3, 1)))
    y, _ = ssm.ssm_scan(dp, x)
    assert np.allclose(y, x, atol=1e-15), "abar=0 must pass the input through"
    dp2 = ssm.DiscreteParams(abar=np.full((3, 1, 1), 0.5), bbar=np.ones((3, 1, 1)),
                             c=np.ones((3, 1)))
    y2, _ = ssm.ssm_scan(dp2, np.array([[1.0], [0.0], [0.0]]))
    assert np.allclose(y2[:, 0], [1.0, 0.5, 0.25]), "geometric impulse response"
    return "passthrough and geometric impulse responses exact"


def check_scan_properties(rng):
    length, ch, n = 16, 2, 4
    dp = ssm.DiscreteParams(abar=rng.uniform(0, 0.95, (length, ch, n)),
                            bbar=rng.normal(size=(length, ch, n)),
                            c=rng.normal(size=(length, n)))
    d = rng.normal(size=ch)
    x1, x2 = rng.normal(size=(length, ch)), rng.normal(size=(length, ch))
    y1, _ = ssm.ssm_scan(dp, x1, d_skip=d)
    y2, _ = ssm.ssm_scan(dp, x2, d_skip=d)
    y3, _ = ssm.ssm_scan(dp, 1.3 * x1 - 0.6 * x2, d_skip=d)
    lin = np.abs(y3 - (1.3 * y1 - 0.6 * y2)).max()
    assert lin <= 1e-10, f"linearity violated by {lin:.2e}"
    x4 = x1.copy()
    x4[10:] = 7.0
    y4, _ = ssm.ssm_scan(dp, x4, d_skip=d)
    assert np.array_equal(y1[:10], y4[:10]), "causality must be exact"
    return f"linear to {lin:.1e}; causal exactly"


def check_scan_orders(rng):
    g = scanorder.TubeletGrid(2, 2, 2)
    assert scanorder.backward_order(g, "st-reverse").order.tolist() == [7, 6, 5, 4, 3, 2, 1, 0]
    assert scanorder.backward_order(g, "spatial-reverse").order.tolist() == [3, 2, 1, 0, 7, 6, 5, 4]
    assert scanorder.backward_order(g, "temporal-reverse").order.tolist() == [4, 5, 6, 7, 0, 1, 2, 3]
    for n_t in range(1, 5):
        for n_h in range(1, 5):
            for n_w in range(1, 5):
                gg = scanorder.TubeletGrid(n_t, n_h, n_w)
                ident = np.arange(gg.tokens)
                st_r = scanorder.backward_order(gg, "st-reverse")
                sp = scanorder.backward_order(gg, "spatial-reverse")
                te = scanorder.backward_order(gg, "temporal-reverse")
                for p in (st_r, sp, te):
                    assert np.array_equal(p.order[p.order], ident), "involution"
                assert np.array_equal(scanorder.compose(te, sp).order, st_r.order)
    return "goldens on (2,2,2); involution and composition hold on all grids up to 4^3"


def check_frame_orders(rng):
    assert scanorder.frame_reorder(8, "interleaved").tolist() == [0, 7, 1, 6, 2, 5, 3, 4]
    assert scanorder.frame_reorder(8, "pairwise").tolist() == [0, 1, 6, 7, 4, 5, 2, 3]
    assert scanorder.frame_reorder(8, "blockwise").tolist() == [4, 5, 6, 7, 0, 1, 2, 3]
    assert scanorder.frame_reorder(6, "sequential").tolist() == [0, 1, 2, 3, 4, 5]
    return "all four 8-frame orders match their published sequences"


def check_inflation(rng):
    for _ in range(5):
        c, s_t, sh, sw, d = 2, 2, 4, 4, 3
        image = rng.uniform(0, 1, size=(c, 8, 8))
        w2d = rng.normal(size=(d, c, sh, sw))
        bias = rng.normal(size=d)
        clip = np.tile(image[:, None], (1, 4, 1, 1))
        got = frontend.tokenize(frontend.VideoClip(clip),
                                frontend.inflate_2d_to_3d(w2d, s_t), bias)
        n_h, n_w = 2, 2
        per_frame = np.zeros((n_h * n_w, d))
        for ih in range(n_h):
            for iw in range(n_w):
                for o in range(d):
                    patch = image[:, ih * sh:(ih + 1) * sh, iw * sw:(iw + 1) * sw]
                    per_frame[ih * n_w + iw, o] = (patch * w2d[o]).sum() + bias[o]
        err = np.abs(got - np.tile(per_frame, (2, 1))).max()
        assert err <= 1e-10, f"static-video equivalence off by {err:.2e}"
    return "static clips tokenize exactly like the still image (5 draws)"


def check_pos_embed(rng):
    g = scanorder.TubeletGrid(3, 2, 2)
    pe = frontend.sinusoid_pos_embed(g, 8)
    assert np.array_equal(pe.table[0], [0, 1, 0, 1, 0, 1, 0, 1])
    assert pe.table.min() >= -1 and pe.table.max() <= 1
    p_image = rng.normal(size=(4, 8))
    expanded = frontend.init_pos_embed("expand", p_image, g)
    for t in range(3):
        assert np.array_equal(expanded.table[4 * t:4 * (t + 1)], p_image)
    single = scanorder.TubeletGrid(1, 2, 2)
    for method in ("interp-spatial", "interp-embed"):
        got = frontend.init_pos_embed(method, p_image, single)
        assert np.allclose(got.table, p_image, atol=0.0), f"{method} identity case"
    return "sinusoid table and all learnable initializations behave"


def check_gradients(rng):
    x = rng.normal(size=(6, 2))
    params = {"a_log": 0.3 * rng.normal(size=(2, 3)), "w_b": rng.normal(size=(2, 3)),
              "w_c": rng.normal(size=(2, 3)), "w_dt": 0.4 * rng.normal(size=(2, 2)),
              "b_dt": rng.normal(size=2), "d": rng.normal(size=2)}
    def f(p):
        b = ops.matmul(x, p["w_b"])
        c = ops.matmul(x, p["w_c"])
        delta = ops.softplus(ops.add_bias(ops.matmul(x, p["w_dt"]), p["b_dt"]))
        abar, bbar = ops.zoh_discretize(ops.neg_exp(p["a_log"]), b, delta)
        y = ops.ssm_scan(abar, bbar, c, p["d"], x)
        return ops.sum_all(ops.mul(y, y))
    err = finite_diff_check(f, params, eps=1e-5)
    assert err <= 1e-4, f"selective-scan gradient off by {err:.2e}"
    return f"selective-scan pipeline gradient within {err:.1e}"


def check_delta_semantics(rng):
    ch, n = 2, 1
    params = ssm.SsmChannelParams(a=-np.ones((ch, n)), d_skip=np.zeros(ch))
    proj = ssm.SelectiveProjections(w_b=np.ones((ch, n)), w_c=np.ones((ch, n)),
                                    w_delta=np.zeros((ch, ch)), b_delta=np.full(ch, 20.0))
    x = rng.uniform(0.5, 1.5, size=(8, ch))
    x2 = x.copy()
    x2[3] += 0.5
    y1 = ssm.selective_scan(x, params, proj)
    y2 = ssm.selective_scan(x2, params, proj)
    dep = float((np.abs(y2[4:] - y1[4:]) / np.abs(y1[4:])).max())
    assert dep <= 1e-8, f"large-step scan still depends on the past ({dep:.2e})"
    params2 = ssm.SsmChannelParams(a=-np.ones((ch, n)), d_skip=np.ones(ch))
    proj2 = ssm.SelectiveProjections(w_b=np.full((ch, n), 0.5), w_c=np.full((ch, n), 0.5),
                                     w_delta=np.zeros((ch, ch)), b_delta=np.full(ch, -20.0))
    y = ssm.selective_scan(x, params2, proj2)
    skip_gap = float(np.max(np.abs(y - x) / np.abs(x)))
    assert skip_gap <= 1e-7, f"small-step scan deviates from the skip path ({skip_gap:.2e})"
    return f"large-step history leak {dep:.1e}; small-step skip gap {skip_gap:.1e}"


def check_delta_maps(rng):
    cfg = ModelConfig(blocks=2, dim=8, state_dim=3, tubelet=(2, 8, 8), frames=4,
                      height=16, width=16, channels=1, num_classes=3, delta_rank=2)
    w = init_weights(cfg, rng)
    clip = VideoClip(rng.uniform(0, 1, (1, 4, 16, 16)).astype(np.float32))
    dm = extract_delta_maps(clip, cfg, w)
    g = cfg.grid()
    assert dm.values.shape == (2, g.n_t, g.n_h, g.n_w)
    assert np.all(dm.values > 0)
    return f"maps shaped {dm.values.shape}, strictly positive"


def check_cost_model(rng):
    r16 = bench.count_flops(ModelConfig())
    r32 = bench.count_flops(ModelConfig(frames=32))
    r192 = bench.count_flops(ModelConfig(dim=192))
    g16 = r16.flops_total / 1e9
    assert 27.4 <= g16 <= 41.0, f"16-frame total {g16:.2f}G outside window"
    ratio = r32.flops_total / r16.flops_total
    assert abs(ratio - 2.0) <= 0.01, f"32:16 ratio {ratio:.4f}"
    g192 = r192.flops_total / 1e9
    assert 6.6 <= g192 <= 11.0, f"192-dim total {g192:.2f}G outside window"
    params = bench.count_params(ModelConfig())
    assert 23.7e6 <= params <= 28.9e6, f"parameter count {params}"
    enumerated = sum(int(np.prod(s)) for s in weight_shapes(ModelConfig()).values())
    assert params == enumerated, "analytic and enumerated parameter counts differ"
    return (f"16f {g16:.2f}G, 32:16 ratio {ratio:.4f}, 192d {g192:.2f}G, "
            f"params {params/1e6:.2f}M == enumeration")


def check_attention_model(rng):
    assert bench.attention_flops(1, 7) == 4 * 7 + 5
    n = 64
    quad = bench.attention_flops(2 * n, 16) - 5 * (2 * n) ** 2
    assert quad == 4 * (bench.attention_flops(n, 16) - 5 * n * n), "n^2 term must quadruple"
    cross = bench.crossover_tokens(384, 16)
    per_scan = 4 * 384 * 16
    for m in (2 ** k for k in range(4, 15)):
        if m < cross:
            assert bench.attention_flops(m, 384) <= per_scan * m
        else:
            assert bench.attention_flops(m, 384) > per_scan * m
    assert bench.scan_flops(2 * n, 8, 4) == 2 * bench.scan_flops(n, 8, 4), "scan count linear"
    return f"closed forms hold; crossover at {cross} tokens confirmed by sweep"


def check_kernel_backends(rng):
    names = kernels.available_backends()
    if len(names) < 2:
        return f"single backend built ({names[0]}); agreement check skipped"
    case = [rng.uniform(0.05, 0.95, (9, 3, 4)), rng.normal(size=(9, 3, 4)),
            rng.normal(size=(9, 4)), rng.normal(size=3), rng.normal(size=(9, 3)),
            rng.normal(size=(3, 4))]
    outs = {}
    for name in names:
        backend = kernels.get_backend(name)
        y, h = backend.scan_forward(*case)
        g = backend.scan_backward(*case, h, np.ones_like(y))
        outs[name] = (y, h, g)
    y1, h1, g1 = outs[names[0]]
    y2, h2, g2 = outs[names[1]]
    worst = max(np.abs(y1 - y2).max(), np.abs(h1 - h2).max(),
                max(np.abs(np.asarray(a) - np.asarray(b)).max() for a, b in zip(g1, g2)))
    assert worst <= 1e-12, f"backends disagree by {worst:.2e}"
    return f"{' and '.join(names)} agree within {worst:.1e}"


def check_checkpoint(rng, tmp_dir=None):
    import tempfile
    cfg = ModelConfig(blocks=1, dim=4, state_dim=2, tubelet=(2, 4, 4), frames=4,
                      height=8, width=8, channels=1, num_classes=2, delta_rank=1)
    w = init_weights(cfg, rng)
    with tempfile.TemporaryDirectory() as d:
        save_checkpoint(d, cfg, w)
        cfg2, w2 = load_checkpoint(d)
    assert cfg2 == cfg
    assert all(w2[k].tobytes() == w[k].tobytes() for k in w)
    return "weights and config round-trip bitwise through the manifest"


def check_dataset(rng):
    s1 = gen_dataset(16, frames=8, size=32, seed=5)
    s2 = gen_dataset(16, frames=8, size=32, seed=5)
    assert all(a.clip.data.tobytes() == b.clip.data.tobytes() for a, b in zip(s1, s2))
    labels = [s.label for s in s1]
    assert all(labels.count(k) == 4 for k in range(4)), "labels must be balanced"
    noise = np.full((8, 32, 32), 0.3)
    up = render_clip("up", 20, noise)
    down = render_clip("down", 20 - 7, noise[::-1])
    assert np.array_equal(up[:, ::-1], down), "frame reversal must map up onto down"
    return "seeded generation bitwise stable; labels balanced; reversal symmetry exact"


def check_model_determinism(rng):
    cfg = ModelConfig(blocks=2, dim=8, state_dim=3, tubelet=(2, 8, 8), frames=4,
                      height=16, width=16, channels=1, num_classes=3, delta_rank=2)
    w = init_weights(cfg, rng)
    arr = rng.uniform(0, 1, (1, 4, 16, 16)).astype(np.float32)
    l1 = model_forward(VideoClip(arr), cfg, w)
    l2 = model_forward(VideoClip(arr.copy()), cfg, w)
    assert l1.tobytes() == l2.tobytes()
    tape = Tape()
    leaves = {k: tape.leaf(v, k) for k, v in w.items()}
    loss = ops.smoothed_ce(model_forward(VideoClip(arr), cfg, leaves), 1, 0.1)
    g1 = backward(tape, loss)
    g2 = backward(tape, loss)
    assert all(g1[k].tobytes() == g2[k].tobytes() for k in g1)
    return "forward and backward both bitwise repeatable"


ALL_CHECKS = [
    ("tensor-format", check_tensor_format),
    ("matmul-oracle", check_matmul),
    ("zoh-discretization", check_discretization),
    ("scan-lti-oracle", check_scan_oracle),
    ("scan-goldens", check_scan_limits),
    ("scan-properties", check_scan_properties),
    ("scan-orders", check_scan_orders),
    ("frame-orders", check_frame_orders),
    ("tokenizer-inflation", check_inflation),
    ("positional-embeddings", check_pos_embed),
    ("gradient-spot-check", check_gradients),
    ("delta-semantics", check_delta_semantics),
    ("delta-maps", check_delta_maps),
    ("cost-model", check_cost_model),
    ("attention-model", check_attention_model),
    ("kernel-backends", check_kernel_backends),
    ("checkpoint-roundtrip", check_checkpoint),
    ("synthetic-dataset", check_dataset),
    ("model-determinism", check_model_determinism),
]


def run_checks(seed: int = 0, emit=print) -> tuple[int, str]:
    """Run every check; returns (failure count, report text)."""
    lines = []
    failures = 0
    for i, (name, fn) in enumerate(ALL_CHECKS):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(i,)))
        try:
            detail = fn(rng)
            line = f"PASS  {name:24s}  {detail}"
        except AssertionError as exc:
            failures += 1
            line = f"FAIL  {name:24s}  {exc}"
        lines.append(line)
        if emit:
            emit(line)
    summary = f"{len(ALL_CHECKS) - failures}/{len(ALL_CHECKS)} checks passed"
    lines.append(summary)
    if emit:
        emit(summary)
    return failures, "\n".join(lines) + "\n"
