import numpy as np
import pytest

from stssm import frontend as fe
from stssm.exceptions import ContractError, ShapeError
from stssm.scanorder import TubeletGrid


def conv3d_oracle(clip, w3d, bias):
    """Five nested loops over output tokens and tubelet extents."""
    c, t, h, w = clip.shape
    d, _, st, sh, sw = w3d.shape
    n_t, n_h, n_w = t // st, h // sh, w // sw
    out = np.zeros((n_t * n_h * n_w, d))
    for it in range(n_t):
        for ih in range(n_h):
            for iw in range(n_w):
                tok = (it * n_h + ih) * n_w + iw
                for o in range(d):
                    acc = 0.0
                    for ic in range(c):
                        block = clip[ic, it * st:(it + 1) * st,
                                     ih * sh:(ih + 1) * sh, iw * sw:(iw + 1) * sw]
                        acc += float((block * w3d[o, ic]).sum())
                    out[tok, o] = acc + bias[o]
    return out


def conv2d_oracle(image, w2d, bias):
    """Non-overlapping 2D patch conv used by the inflation equivalence test."""
    c, h, w = image.shape
    d, _, sh, sw = w2d.shape
    n_h, n_w = h // sh, w // sw
    out = np.zeros((n_h * n_w, d))
    for ih in range(n_h):
        for iw in range(n_w):
            for o in range(d):
                acc = 0.0
                for ic in range(c):
                    patch = image[ic, ih * sh:(ih + 1) * sh, iw * sw:(iw + 1) * sw]
                    acc += float((patch * w2d[o, ic]).sum())
                out[ih * n_w + iw, o] = acc + bias[o]
    return out


class TestGrid:
    def test_full_scale(self):
        clip_shape = (3, 32, 224, 224)
        g = fe.tubelet_grid(clip_shape, fe.TubeletSpec(2, 16, 16))
        assert (g.n_t, g.n_h, g.n_w) == (16, 14, 14)
        assert g.tokens == 3136

    def test_sixteen_frames(self):
        g = fe.tubelet_grid((3, 16, 224, 224), fe.TubeletSpec(2, 16, 16))
        assert g.tokens == 1568

    def test_remainder_dropped(self):
        g = fe.tubelet_grid((1, 9, 16, 16), fe.TubeletSpec(2, 8, 8))
        assert g.n_t == 4

    def test_spec_exceeding_clip(self):
        with pytest.raises(ContractError):
            fe.tubelet_grid((1, 4, 8, 8), fe.TubeletSpec(8, 8, 8))


class TestTokenize:
    def test_averaging_kernel_on_ones(self):
        st_, sh, sw = 2, 4, 4
        clip = fe.VideoClip(np.ones((1, 4, 8, 8)))
        w3d = np.full((5, 1, st_, sh, sw), 1.0 / (st_ * sh * sw))
        out = fe.tokenize(clip, w3d, np.zeros(5))
        assert np.allclose(out, 1.0, atol=1e-12)

    def test_zero_clip_gives_bias(self, rng):
        clip = fe.VideoClip(np.zeros((2, 4, 8, 8)))
        w3d = rng.normal(size=(3, 2, 2, 4, 4))
        bias = rng.normal(size=3)
        out = fe.tokenize(clip, w3d, bias)
        assert np.allclose(out, np.tile(bias, (out.shape[0], 1)), atol=1e-15)

    def test_against_nested_loop_oracle(self, rng):
        clip_arr = rng.uniform(0, 1, size=(2, 5, 9, 7))
        w3d = rng.normal(size=(4, 2, 2, 3, 2))
        bias = rng.normal(size=4)
        got = fe.tokenize(fe.VideoClip(clip_arr), w3d, bias)
        want = conv3d_oracle(clip_arr, w3d, bias)
        assert np.abs(got - want).max() <= 1e-10

    def test_linear_in_clip_with_zero_bias(self, rng):
        w3d = rng.normal(size=(3, 1, 2, 4, 4))
        zero_b = np.zeros(3)
        v1 = rng.uniform(0, 0.5, size=(1, 4, 8, 8))
        v2 = rng.uniform(0, 0.5, size=(1, 4, 8, 8))
        al, be = 0.3, 0.7
        t1 = fe.tokenize(fe.VideoClip(v1), w3d, zero_b)
        t2 = fe.tokenize(fe.VideoClip(v2), w3d, zero_b)
        t3 = fe.tokenize(fe.VideoClip(al * v1 + be * v2), w3d, zero_b)
        assert np.abs(t3 - (al * t1 + be * t2)).max() <= 1e-10

    def test_channel_mismatch(self, rng):
        clip = fe.VideoClip(np.zeros((2, 4, 8, 8)))
        with pytest.raises(ShapeError):
            fe.tokenize(clip, rng.normal(size=(3, 1, 2, 4, 4)), np.zeros(3))


class TestInflation:
    def test_single_slice_identity(self, rng):
        w2d = rng.normal(size=(3, 2, 4, 4))
        w3d = fe.inflate_2d_to_3d(w2d, 1)
        assert np.array_equal(w3d[:, :, 0], w2d)

    def test_two_slices_halved(self):
        w2d = np.ones((1, 1, 2, 2))
        w3d = fe.inflate_2d_to_3d(w2d, 2)
        assert np.all(w3d == 0.5)

    def test_static_video_equivalence(self, rng):
        for _ in range(10):
            c, s_t, sh, sw, d = 2, 2, 4, 4, 3
            image = rng.uniform(0, 1, size=(c, 12, 8))
            w2d = rng.normal(size=(d, c, sh, sw))
            bias = rng.normal(size=d)
            n_t = 3
            clip_arr = np.tile(image[:, None], (1, n_t * s_t, 1, 1))
            got = fe.tokenize(fe.VideoClip(clip_arr), fe.inflate_2d_to_3d(w2d, s_t), bias)
            per_frame = conv2d_oracle(image, w2d, bias)
            want = np.tile(per_frame, (n_t, 1))
            assert np.abs(got - want).max() <= 1e-10

    def test_bad_temporal_extent(self):
        with pytest.raises(ContractError):
            fe.inflate_2d_to_3d(np.ones((1, 1, 2, 2)), 0)


class TestSinusoidPE:
    def test_first_row(self):
        pe = fe.sinusoid_pos_embed(TubeletGrid(2, 2, 2), 6)
        assert np.array_equal(pe.table[0], [0, 1, 0, 1, 0, 1])

    def test_range(self):
        pe = fe.sinusoid_pos_embed(TubeletGrid(4, 5, 5), 16)
        assert pe.table.min() >= -1.0 and pe.table.max() <= 1.0

    def test_rows_distinct_fuzz(self):
        pe = fe.sinusoid_pos_embed(TubeletGrid(10, 25, 40), 16)
        assert pe.table.shape == (10_000, 16)
        assert np.unique(pe.table, axis=0).shape[0] == 10_000

    def test_odd_dim_rejected(self):
        with pytest.raises(ContractError):
            fe.sinusoid_pos_embed(TubeletGrid(1, 2, 2), 7)


class TestLearnablePEInit:
    def test_expand_replicates_bitwise(self, rng):
        g = TubeletGrid(3, 2, 2)
        p_image = rng.normal(size=(4, 6))
        pe = fe.init_pos_embed("expand", p_image, g)
        assert pe.table.shape == (12, 6)
        for t in range(3):
            assert np.array_equal(pe.table[4 * t:4 * (t + 1)], p_image)

    def test_interp_spatial_identity_when_single_frame(self, rng):
        g = TubeletGrid(1, 3, 2)
        p_image = rng.normal(size=(6, 5))
        pe = fe.init_pos_embed("interp-spatial", p_image, g)
        assert np.allclose(pe.table, p_image, atol=0.0)

    def test_interp_embed_identity_when_single_frame(self, rng):
        g = TubeletGrid(1, 3, 2)
        p_image = rng.normal(size=(6, 5))
        pe = fe.init_pos_embed("interp-embed", p_image, g)
        assert np.allclose(pe.table, p_image, atol=0.0)

    @pytest.mark.parametrize("method", ["expand", "interp-spatial", "interp-embed", "random"])
    def test_target_shape(self, rng, method):
        g = TubeletGrid(3, 2, 4)
        p_image = rng.normal(size=(8, 6))
        pe = fe.init_pos_embed(method, p_image, g, d=6, rng=rng)
        assert pe.table.shape == (24, 6)

    def test_random_stats(self, rng):
        g = TubeletGrid(8, 8, 8)
        pe = fe.init_pos_embed("random", None, g, d=32, rng=rng)
        assert abs(pe.table.std() - 0.02) < 0.002
        assert abs(pe.table.mean()) < 0.002

    def test_extent_mismatch(self, rng):
        with pytest.raises(ShapeError):
            fe.init_pos_embed("expand", rng.normal(size=(5, 4)), TubeletGrid(2, 2, 2))

    def test_unknown_method(self, rng):
        with pytest.raises(ContractError):
            fe.init_pos_embed("bilinear", rng.normal(size=(4, 4)), TubeletGrid(1, 2, 2))


class TestVideoClip:
    def test_out_of_range_rejected(self):
        with pytest.raises(ContractError):
            fe.VideoClip(np.full((1, 2, 4, 4), 1.5))

    def test_non_finite_rejected(self):
        arr = np.zeros((1, 2, 4, 4))
        arr[0, 0, 0, 0] = np.nan
        with pytest.raises(ContractError):
            fe.VideoClip(arr)

    def test_wrong_rank_rejected(self):
        with pytest.raises(ShapeError):
            fe.VideoClip(np.zeros((2, 4, 4)))
