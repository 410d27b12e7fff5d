"""Channel/spatial attention gates, the fusion op, and parameter audits."""
import numpy as np
import pytest

from wdffu import daff
from wdffu import tensor as T
from wdffu.errors import ConfigError, DimensionError
from wdffu.gradcheck import max_rel_grad_error
from wdffu.layers import Conv2d
from wdffu.tensor import Tensor


class TestChannelAttention:
    def _build(self, channels=32, reduction=16, seed=0):
        return daff.ChannelAttention(channels, reduction, np.random.default_rng(seed))

    def test_zero_weights_give_half(self):
        ca = self._build()
        ca.conv1.weight.data[:] = 0.0
        ca.conv2.weight.data[:] = 0.0
        rng = np.random.default_rng(1)
        m = ca(Tensor(rng.standard_normal((2, 32, 5, 5))))
        assert m.shape == (2, 32, 1, 1)
        assert np.abs(m.data - 0.5).max() == 0.0

    def test_constant_input_pools_agree(self):
        ca = self._build()
        x = Tensor(np.full((2, 32, 5, 7), 0.5))
        z_avg = T.pool2d(x, "global_avg")
        z_max = T.pool2d(x, "global_max")
        assert np.array_equal(z_avg.data, z_max.data)
        assert np.abs(z_avg.data - 0.5).max() == 0.0
        path = ca.conv2(T.relu(ca.conv1(z_avg)))
        want = T.sigmoid(T.scale_shift(path, 2.0, 0.0)).data
        assert np.allclose(ca(x).data, want, atol=1e-14)

    def test_compositional_oracle(self):
        ca = self._build(seed=2)
        rng = np.random.default_rng(3)
        x = Tensor(rng.standard_normal((3, 32, 4, 6)))
        path_a = ca.conv2(T.relu(ca.conv1(T.pool2d(x, "global_avg"))))
        path_m = ca.conv2(T.relu(ca.conv1(T.pool2d(x, "global_max"))))
        want = T.sigmoid(T.add(path_a, path_m)).data
        assert np.array_equal(ca(x).data, want)
        assert want.min() > 0.0 and want.max() < 1.0

    def test_bad_reduction_rejected(self):
        with pytest.raises(ConfigError):
            self._build(channels=30, reduction=16)

    def test_channel_mismatch_rejected(self):
        ca = self._build()
        with pytest.raises(DimensionError):
            ca(Tensor(np.zeros((1, 16, 4, 4))))

    @pytest.mark.parametrize("seed", range(3))
    def test_gradcheck(self, seed):
        ca = self._build(channels=16, reduction=16, seed=seed)
        rng = np.random.default_rng(50 + seed)
        x = Tensor(rng.standard_normal((1, 16, 3, 3)), requires_grad=True)
        wts = Tensor(rng.standard_normal((1, 16, 1, 1)))

        def f():
            return T.mul(ca(x), wts).sum()

        assert max_rel_grad_error(f, [x] + ca.params()) < 1e-4


class TestSpatialAttention:
    def _build(self, seed=0):
        return daff.SpatialAttention(np.random.default_rng(seed))

    def test_zero_params_give_half(self):
        sa = self._build()
        for p in sa.params():
            p.data[:] = 0.0
        rng = np.random.default_rng(1)
        m = sa(Tensor(rng.standard_normal((2, 8, 6, 6))))
        assert m.shape == (2, 1, 6, 6)
        assert np.abs(m.data - 0.5).max() == 0.0

    @pytest.mark.parametrize("hw", [(6, 6), (7, 9), (2, 2)])
    def test_shape_contract(self, hw):
        sa = self._build(seed=2)
        rng = np.random.default_rng(3)
        x = Tensor(rng.standard_normal((2, 5) + hw))
        m = sa(x)
        assert m.shape == (2, 1) + hw
        assert m.data.min() > 0.0 and m.data.max() < 1.0

    def test_compositional_oracle(self):
        sa = self._build(seed=4)
        rng = np.random.default_rng(5)
        x = Tensor(rng.standard_normal((1, 6, 8, 8)))
        maps = T.concat([T.channel_reduce(x, "mean"), T.channel_reduce(x, "max")], axis=1)
        want = T.sigmoid(sa.wtc(maps)).data
        assert np.array_equal(sa(x).data, want)

    @pytest.mark.parametrize("seed", range(3))
    def test_gradcheck(self, seed):
        sa = self._build(seed=seed)
        rng = np.random.default_rng(60 + seed)
        x = Tensor(rng.standard_normal((1, 3, 6, 6)), requires_grad=True)
        wts = Tensor(rng.standard_normal((1, 1, 6, 6)))

        def f():
            return T.mul(sa(x), wts).sum()

        assert max_rel_grad_error(f, [x] + sa.params()) < 1e-4


class TestDualAttentionFusion:
    def _build(self, channels=4, reduction=16, seed=0):
        return daff.DualAttentionFusion(channels, reduction, np.random.default_rng(seed))

    def test_output_matches_lf_shape(self):
        m = self._build()
        rng = np.random.default_rng(1)
        hf = Tensor(rng.standard_normal((2, 4, 16, 16)))
        lf = Tensor(rng.standard_normal((2, 16, 4, 4)))
        assert m(hf, lf).shape == lf.shape

    def test_resolution_ratio_enforced(self):
        m = self._build()
        hf = Tensor(np.zeros((1, 4, 16, 16)))
        with pytest.raises(DimensionError):
            m(hf, Tensor(np.zeros((1, 16, 8, 8))))
        with pytest.raises(DimensionError):
            m(hf, Tensor(np.zeros((1, 8, 4, 4))))

    def test_saturated_gates_reduce_to_unattended_sum(self):
        # Positive inputs with large positive channel weights drive M_c to 1;
        # zeroed spatial weights with a large lone bias drive M_s to 1.
        m = self._build(seed=2)
        m.channel_attn.conv1.weight.data[:] = 1.0
        m.channel_attn.conv2.weight.data[:] = 1000.0
        for p in m.spatial_attn.params():
            p.data[:] = 0.0
        m.spatial_attn.wtc.spatial.bias.data[:] = 60.0
        rng = np.random.default_rng(3)
        hf = Tensor(rng.uniform(0.1, 1.0, (1, 4, 16, 16)))
        lf = Tensor(rng.uniform(0.1, 1.0, (1, 16, 4, 4)))
        fused = T.add(m.hf_proj(T.pool2d(hf, "max", 4)), lf)
        assert np.allclose(m(hf, lf).data, fused.data, atol=1e-6)

    def test_zero_hf_leaves_gated_lf(self):
        m = self._build(seed=4)
        m.hf_proj.bias.data[:] = 0.0
        rng = np.random.default_rng(5)
        lf = Tensor(rng.standard_normal((1, 16, 4, 4)))
        hf = Tensor(np.zeros((1, 4, 16, 16)))
        m_c = m.channel_attn(lf)
        want = (lf.data * m_c.data) * 0.5   # M_s = sigmoid(0) = 0.5 at init
        assert np.array_equal(m(hf, lf).data, want)

    def test_compositional_oracle(self):
        m = self._build(seed=6)
        rng = np.random.default_rng(7)
        hf = Tensor(rng.standard_normal((2, 4, 16, 16)))
        lf = Tensor(rng.standard_normal((2, 16, 4, 4)))
        fused = T.add(m.hf_proj(T.pool2d(hf, "max", 4)), lf)
        m_c = m.channel_attn(lf)
        m_s = T.pool2d(m.spatial_attn(hf), "max", 4)
        want = T.mul(T.mul(fused, m_c), m_s).data
        assert np.array_equal(m(hf, lf).data, want)

    @pytest.mark.parametrize("seed", range(3))
    def test_gradcheck(self, seed):
        m = self._build(channels=4, reduction=16, seed=seed)
        rng = np.random.default_rng(70 + seed)
        hf = Tensor(rng.standard_normal((1, 4, 16, 16)), requires_grad=True)
        lf = Tensor(rng.standard_normal((1, 16, 4, 4)), requires_grad=True)
        wts = Tensor(rng.standard_normal((1, 16, 4, 4)))

        def f():
            return T.mul(m(hf, lf), wts).sum()

        assert max_rel_grad_error(f, [hf, lf] + m.params()) < 1e-4


class TestCbamReference:
    def _build(self, channels=16, reduction=16, seed=0):
        return daff.CbamReference(channels, reduction, np.random.default_rng(seed))

    def test_shape_preserved_and_contractive(self):
        m = self._build()
        rng = np.random.default_rng(1)
        x = rng.standard_normal((2, 16, 6, 6))
        y = m(Tensor(x))
        assert y.shape == x.shape
        assert (np.abs(y.data) <= np.abs(x) + 1e-12).all()

    def test_zero_params_give_quarter(self):
        m = self._build(seed=2)
        for p in m.params():
            p.data[:] = 0.0
        rng = np.random.default_rng(3)
        x = rng.standard_normal((1, 16, 4, 4))
        assert np.allclose(m(Tensor(x)).data, 0.25 * x, atol=1e-15)

    def test_bad_reduction_rejected(self):
        with pytest.raises(ConfigError):
            self._build(channels=7, reduction=16)


class TestParameterAudits:
    def test_plain_conv_count(self):
        conv = Conv2d(4, 8, 1, np.random.default_rng(0))
        assert daff.count_attention_params(conv) == 40

    def test_channel_branch_count_at_256(self):
        ca = daff.ChannelAttention(256, 16, np.random.default_rng(0))
        assert daff.count_attention_params(ca) == 8192

    def test_spatial_branch_count(self):
        sa = daff.SpatialAttention(np.random.default_rng(0))
        assert daff.count_attention_params(sa) == 5 * (2 * 49 + 1)

    def test_reference_count_formula(self):
        x, r = 256, 16
        cbam = daff.CbamReference(x, r, np.random.default_rng(0))
        want = (2 * x) * (2 * x // r) + (2 * x // r) \
            + (2 * x // r) * x + x + (2 * 49 + 1)
        assert daff.count_attention_params(cbam) == want

    @pytest.mark.parametrize("width", [64, 128, 256])
    def test_pair_always_smaller_at_matched_width(self, width):
        rng = np.random.default_rng(0)
        pair = daff.count_attention_params(daff.ChannelAttention(width, 16, rng)) \
            + daff.count_attention_params(daff.SpatialAttention(rng))
        ref = daff.count_attention_params(daff.CbamReference(width, 16, rng))
        assert pair < ref

    @pytest.mark.parametrize("base", [64, 128, 256])
    def test_pair_ratio_below_45_percent(self, base):
        # The fusion gates operate on the deepest stage at four times the
        # base width; the budget ratio must stay under 0.45 there.
        width = 4 * base
        rng = np.random.default_rng(0)
        pair = daff.count_attention_params(daff.ChannelAttention(width, 16, rng)) \
            + daff.count_attention_params(daff.SpatialAttention(rng))
        ref = daff.count_attention_params(daff.CbamReference(width, 16, rng))
        assert pair / ref < 0.45
