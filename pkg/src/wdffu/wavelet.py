"""Single-level orthonormal Haar analysis/synthesis and the ops built on it.

Per 2x2 block [[a, b], [c, d]] the four subbands are

    LL = (a + b + c + d) / 2      LH = (a - b + c - d) / 2
    HL = (a + b - c - d) / 2      HH = (a - b - c + d) / 2

which is an orthogonal map, so the transpose (the autodiff VJP) equals
the inverse and total energy is preserved exactly.  Odd extents are
reflect-padded by one row/column and cropped back after synthesis.
"""
import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .layers import Conv2d, Module
from .tensor import Tensor, make_op


def _haar_split(x):
    a = x[:, :, 0::2, 0::2]
    b = x[:, :, 0::2, 1::2]
    c = x[:, :, 1::2, 0::2]
    d = x[:, :, 1::2, 1::2]
    return np.concatenate([(a + b + c + d), (a - b + c - d),
                           (a + b - c - d), (a - b - c + d)], axis=1) * 0.5


def _haar_join(y):
    n, c4, h2, w2 = y.shape
    c = c4 // 4
    ll, lh, hl, hh = y[:, :c], y[:, c:2 * c], y[:, 2 * c:3 * c], y[:, 3 * c:]
    out = np.empty((n, c, 2 * h2, 2 * w2))
    out[:, :, 0::2, 0::2] = (ll + lh + hl + hh) * 0.5
    out[:, :, 0::2, 1::2] = (ll - lh + hl - hh) * 0.5
    out[:, :, 1::2, 0::2] = (ll + lh - hl - hh) * 0.5
    out[:, :, 1::2, 1::2] = (ll - lh - hl + hh) * 0.5
    return out


def haar_forward(x):
    """[N, C, H, W] with even H, W -> subbands stacked as [N, 4C, H/2, W/2]."""
    if x.ndim != 4:
        raise DimensionError("haar_forward expects N x C x H x W")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"haar_forward requires even extents, got {h}x{w}")
    return make_op(_haar_split(x.data), (x,), lambda g: (_haar_join(g),))


def haar_inverse(y):
    """Stacked subbands [N, 4C, h, w] -> [N, C, 2h, 2w]."""
    if y.ndim != 4 or y.shape[1] % 4:
        raise DimensionError("haar_inverse expects a 4C-channel stack")
    return make_op(_haar_join(y.data), (y,), lambda g: (_haar_split(g),))


@dataclass
class SubbandSet:
    """One analysis level; orig_size records cropping for the inverse."""
    ll: Tensor
    lh: Tensor
    hl: Tensor
    hh: Tensor
    orig_size: tuple

    def stacked(self):
        return T.concat([self.ll, self.lh, self.hl, self.hh], axis=1)


def dwt_haar(x):
    """Analyze one level; odd extents are reflect-padded first."""
    n, c, h, w = x.shape
    if h < 2 or w < 2:
        raise DimensionError(f"dwt_haar needs at least 2x2 input, got {h}x{w}")
    if h % 2 or w % 2:
        x = T.pad_reflect2d(x, 0, h % 2, 0, w % 2)
    stack = haar_forward(x)
    cc = stack.shape[1] // 4
    return SubbandSet(T.narrow(stack, 1, 0, cc), T.narrow(stack, 1, cc, cc),
                      T.narrow(stack, 1, 2 * cc, cc), T.narrow(stack, 1, 3 * cc, cc),
                      (h, w))


def idwt_haar(s):
    """Synthesize one level and crop back to the recorded size."""
    shapes = {s.ll.shape, s.lh.shape, s.hl.shape, s.hh.shape}
    if len(shapes) != 1:
        raise DimensionError(f"subband shapes differ: {sorted(shapes)}")
    out = haar_inverse(s.stacked())
    h, w = s.orig_size
    if out.shape[2] != h:
        out = T.narrow(out, 2, 0, h)
    if out.shape[3] != w:
        out = T.narrow(out, 3, 0, w)
    return out


def gaussian_kernel(sigma):
    """Normalized 2D Gaussian tap grid with radius ceil(3 sigma)."""
    if sigma <= 0:
        raise ContractError(f"gaussian sigma must be positive, got {sigma}")
    r = math.ceil(3.0 * sigma)
    ax = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2.0 * sigma * sigma))
    return k / k.sum()


def _depthwise_gaussian(band, sigma):
    k = gaussian_kernel(sigma)
    r = k.shape[0] // 2
    c = band.shape[1]
    weight = Tensor(np.broadcast_to(k, (c, 1) + k.shape).copy())
    padded = T.pad_reflect2d(band, r, r, r, r)
    return T.conv2d(padded, weight, groups=c)


def gaussian_subband_filter(s, sigma_lh=0.5, sigma_hl=0.5, sigma_hh=1.0):
    """Smooth the three detail bands; the approximation band passes through."""
    return SubbandSet(s.ll,
                      _depthwise_gaussian(s.lh, sigma_lh),
                      _depthwise_gaussian(s.hl, sigma_hl),
                      _depthwise_gaussian(s.hh, sigma_hh),
                      s.orig_size)


class WaveletConv7(Module):
    """7x7 conv summed with a per-subband 7x7 conv branch run in the
    wavelet domain and synthesized back.  Maps 2 channels to 1."""

    def __init__(self, rng, in_channels=2):
        self.spatial = Conv2d(in_channels, 1, 7, rng, pad=3)
        self.band_ll = Conv2d(in_channels, 1, 7, rng, pad=3)
        self.band_lh = Conv2d(in_channels, 1, 7, rng, pad=3)
        self.band_hl = Conv2d(in_channels, 1, 7, rng, pad=3)
        self.band_hh = Conv2d(in_channels, 1, 7, rng, pad=3)

    def forward(self, x):
        s = dwt_haar(x)
        detail = SubbandSet(self.band_ll(s.ll), self.band_lh(s.lh),
                            self.band_hl(s.hl), self.band_hh(s.hh), s.orig_size)
        return T.add(self.spatial(x), idwt_haar(detail))

    __call__ = forward
