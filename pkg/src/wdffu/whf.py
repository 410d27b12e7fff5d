"""Wavelet-denoised high-frequency feature guidance.

The module denoises a feature map by Gaussian-smoothing its Haar detail
bands, then enriches it along two branches that are summed:

  * a high-frequency guidance branch that collapses the map to one
    channel, takes a two-level Haar pyramid (16 sub-subbands), turns the
    pyramid into a channel-softmax attention map, and uses it to gate
    the single-channel view before fusing back to C channels;
  * an embedded-Gaussian global-context block (bottleneck C/2) with a
    residual connection.
"""
import numpy as np

from . import tensor as T
from .errors import DimensionError
from .layers import Conv2d, Module
from .wavelet import dwt_haar, gaussian_subband_filter, haar_forward, idwt_haar


def wavelet_denoise(x, sigma_lh=0.5, sigma_hl=0.5, sigma_hh=1.0):
    """Smooth the detail subbands and synthesize back; H, W must be even."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"wavelet_denoise requires even extents, got {h}x{w}")
    s = dwt_haar(x)
    return idwt_haar(gaussian_subband_filter(s, sigma_lh, sigma_hl, sigma_hh))


class HighFreqGuidance(Module):
    """Two-level wavelet pyramid of a single-channel view drives a
    channel-softmax attention over C maps."""

    def __init__(self, channels, rng):
        self.channels = channels
        self.to_single = Conv2d(channels, 1, 1, rng)
        self.attn_proj = Conv2d(16, channels, 1, rng)
        self.fuse = Conv2d(2 * channels, channels, 1, rng)

    def forward(self, x):
        n, c, h, w = x.shape
        if c != self.channels:
            raise DimensionError(f"expected {self.channels} channels, got {c}")
        if h % 4 or w % 4:
            raise DimensionError(f"two-level analysis needs H, W divisible by 4, got {h}x{w}")
        single = self.to_single(x)                       # [N, 1, H, W]
        pyramid = haar_forward(haar_forward(single))     # [N, 16, H/4, W/4]
        attn = T.softmax(self.attn_proj(pyramid), axis=1)
        attn = T.bilinear_upsample(attn, 4)              # [N, C, H, W]
        gated = T.mul(attn, single)                      # broadcast over C
        return self.fuse(T.concat([gated, x], axis=1))

    __call__ = forward


class NonLocalBlock(Module):
    """Embedded-Gaussian self-attention over all spatial sites, residual."""

    def __init__(self, channels, rng):
        if channels < 2:
            raise DimensionError("global context block needs at least 2 channels")
        self.channels = channels
        inner = channels // 2
        self.inner = inner
        # Bias-free embeddings: a key bias shifts every attention logit in a
        # row by the same amount, which softmax cancels, and a value bias is
        # absorbed by the out-projection bias.
        self.query = Conv2d(channels, inner, 1, rng, bias=False)
        self.key = Conv2d(channels, inner, 1, rng, bias=False)
        self.value = Conv2d(channels, inner, 1, rng, bias=False)
        self.out = Conv2d(inner, channels, 1, rng)

    def forward(self, x):
        n, c, h, w = x.shape
        if c != self.channels:
            raise DimensionError(f"expected {self.channels} channels, got {c}")

        def tokens(t):
            return T.reshape(T.permute(t, (0, 2, 3, 1)), (n, h * w, self.inner))

        q = tokens(self.query(x))
        k = tokens(self.key(x))
        v = tokens(self.value(x))
        attn = T.softmax(T.matmul(q, T.permute(k, (0, 2, 1))), axis=2)
        mixed = T.matmul(attn, v)                        # [N, L, inner]
        mixed = T.permute(T.reshape(mixed, (n, h, w, self.inner)), (0, 3, 1, 2))
        return T.add(x, self.out(mixed))

    __call__ = forward


class WhfModule(Module):
    """Denoise, then sum the global-context and guidance branches."""

    def __init__(self, channels, rng):
        self.guidance = HighFreqGuidance(channels, rng)
        self.context = NonLocalBlock(channels, rng)

    def forward(self, x):
        denoised = wavelet_denoise(x)
        return T.add(self.context(denoised), self.guidance(denoised))

    __call__ = forward
