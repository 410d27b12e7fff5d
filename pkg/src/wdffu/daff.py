"""Dual-attention feature fusion.

Deep (low-resolution) features are gated per channel by a bias-free
squeeze-excite pair fed from both average- and max-pooled descriptors;
shallow (high-resolution) features contribute a spatial gate computed by
a 7x7 wavelet convolution.  The fused map is

    (conv1x1(maxpool4(HF)) + LF) * M_c * maxpool4(M_s)

A conventional attention block with a fully connected channel MLP and a
plain 7x7 spatial convolution is included purely as a parameter-count
reference.
"""
import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .layers import Conv2d, Linear, Module, count_params
from .wavelet import WaveletConv7


class ChannelAttention(Module):
    """Shared bias-free 1x1-conv bottleneck over global average and max
    descriptors; the two paths are summed before the sigmoid."""

    def __init__(self, channels, reduction, rng):
        if channels % reduction:
            raise ConfigError(f"reduction {reduction} must divide channels {channels}")
        self.channels = channels
        self.conv1 = Conv2d(channels, channels // reduction, 1, rng, bias=False)
        self.conv2 = Conv2d(channels // reduction, channels, 1, rng, bias=False)

    def _path(self, z):
        return self.conv2(T.relu(self.conv1(z)))

    def forward(self, x):
        if x.shape[1] != self.channels:
            raise DimensionError(f"expected {self.channels} channels, got {x.shape[1]}")
        z_avg = T.pool2d(x, "global_avg")
        z_max = T.pool2d(x, "global_max")
        return T.sigmoid(T.add(self._path(z_avg), self._path(z_max)))

    __call__ = forward


class SpatialAttention(Module):
    """Channel mean/max maps fused by a 7x7 wavelet convolution."""

    def __init__(self, rng):
        self.wtc = WaveletConv7(rng, in_channels=2)

    def forward(self, x):
        f_avg = T.channel_reduce(x, "mean")
        f_max = T.channel_reduce(x, "max")
        return T.sigmoid(self.wtc(T.concat([f_avg, f_max], axis=1)))

    __call__ = forward


class DualAttentionFusion(Module):
    """Fuse shallow HF features (C channels, 4x resolution) into deep LF
    features (4C channels) under both attention gates."""

    def __init__(self, channels, reduction, rng):
        self.channels = channels
        self.hf_proj = Conv2d(channels, 4 * channels, 1, rng)
        self.channel_attn = ChannelAttention(4 * channels, reduction, rng)
        self.spatial_attn = SpatialAttention(rng)

    def forward(self, hf, lf):
        n, c, h, w = hf.shape
        if c != self.channels or lf.shape[1] != 4 * self.channels:
            raise DimensionError(
                f"expected {self.channels}/{4 * self.channels} channels, "
                f"got {c}/{lf.shape[1]}")
        if h != 4 * lf.shape[2] or w != 4 * lf.shape[3]:
            raise DimensionError(
                f"HF extents {h}x{w} must be 4x LF extents {lf.shape[2]}x{lf.shape[3]}")
        fused = T.add(self.hf_proj(T.pool2d(hf, "max", 4)), lf)
        m_c = self.channel_attn(lf)
        m_s = T.pool2d(self.spatial_attn(hf), "max", 4)
        return T.mul(T.mul(fused, m_c), m_s)

    __call__ = forward


class CbamReference(Module):
    """Reference gate pair: channel MLP on the concatenated average/max
    descriptor plus a plain 7x7 two-to-one spatial convolution.  Used only
    to compare learnable-parameter budgets against the wavelet pair."""

    def __init__(self, channels, reduction, rng):
        if (2 * channels) % reduction:
            raise ConfigError(f"reduction {reduction} must divide 2x channels {channels}")
        self.channels = channels
        hidden = 2 * channels // reduction
        self.fc1 = Linear(2 * channels, hidden, rng)
        self.fc2 = Linear(hidden, channels, rng)
        self.spatial = Conv2d(2, 1, 7, rng, pad=3)

    def forward(self, x):
        n, c, h, w = x.shape
        if c != self.channels:
            raise DimensionError(f"expected {self.channels} channels, got {c}")
        z = T.concat([T.pool2d(x, "global_avg"), T.pool2d(x, "global_max")], axis=1)
        gate = T.sigmoid(self.fc2(T.relu(self.fc1(T.reshape(z, (n, 2 * c))))))
        gated = T.mul(x, T.reshape(gate, (n, c, 1, 1)))
        maps = T.concat([T.channel_reduce(gated, "mean"),
                         T.channel_reduce(gated, "max")], axis=1)
        return T.mul(gated, T.sigmoid(self.spatial(maps)))

    __call__ = forward


def count_attention_params(module):
    """Exact number of learnable scalars in a module."""
    return count_params(module)
