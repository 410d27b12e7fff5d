"""Built-in numerical checks runnable from the command line.

Each check is independent and prints one line; the runner returns True
only if every check passes.  These are quick spot checks, not the full
test suite: wavelet reconstruction, reverse-mode gradients against
finite differences, the four-direction scan identities, and the
boundary-distance metric against an all-pairs brute force.
"""
import math
import time

import numpy as np

from . import tensor as T
from .daff import ChannelAttention
from .gradcheck import max_rel_grad_error, random_tensor
from .metrics import boundary_points, hd95
from .ssm import S6Params, cross_merge, cross_scan, selective_scan, \
    selective_scan_core
from .tensor import Tensor
from .wavelet import WaveletConv7, dwt_haar, idwt_haar


def check_wavelet_roundtrip(rng):
    worst_recon = 0.0
    worst_energy = 0.0
    for _ in range(20):
        shape = (int(rng.integers(1, 3)), int(rng.integers(1, 4)),
                 2 * int(rng.integers(2, 9)), 2 * int(rng.integers(2, 9)))
        x = Tensor(rng.standard_normal(shape))
        s = dwt_haar(x)
        back = idwt_haar(s)
        worst_recon = max(worst_recon, np.abs(back.data - x.data).max())
        energy = sum((getattr(s, band).data ** 2).sum()
                     for band in ("ll", "lh", "hl", "hh"))
        worst_energy = max(worst_energy, abs(energy - (x.data ** 2).sum()))
    if worst_recon >= 1e-12 or worst_energy >= 1e-9:
        return False, f"recon {worst_recon:.2e}, energy {worst_energy:.2e}"
    return True, f"recon {worst_recon:.2e}"


def check_gradients(rng):
    worst = 0.0
    x = random_tensor(rng, (1, 2, 8, 8))
    w = Tensor(rng.standard_normal((1, 1, 8, 8)))
    wtc = WaveletConv7(rng, in_channels=2)
    err = max_rel_grad_error(lambda: T.mul(wtc(x), w).sum(), [x] + wtc.params())
    worst = max(worst, err)

    x2 = random_tensor(rng, (1, 8, 4, 4))
    w2 = Tensor(rng.standard_normal((1, 8, 1, 1)))
    ca = ChannelAttention(8, 4, rng)
    err = max_rel_grad_error(lambda: T.mul(ca(x2), w2).sum(), [x2] + ca.params())
    worst = max(worst, err)

    u = random_tensor(rng, (1, 6, 4))
    params = S6Params(4, 3, rng)
    err = max_rel_grad_error(lambda: selective_scan(u, params).sum(),
                             [u] + params.params())
    worst = max(worst, err)
    if worst >= 1e-4:
        return False, f"max relative error {worst:.2e}"
    return True, f"max relative error {worst:.2e}"


def _scan_reference(u, delta_pre, a, b, c, skip):
    n, length, d = u.shape
    s = a.shape[1]
    delta = np.logaddexp(0.0, delta_pre)
    y = np.zeros_like(u)
    for i in range(n):
        h = np.zeros((d, s))
        for t in range(length):
            abar = np.exp(delta[i, t][:, None] * a)
            h = abar * h + (delta[i, t] * u[i, t])[:, None] * b[i, t][None, :]
            y[i, t] = h @ c[i, t] + skip * u[i, t]
    return y


def check_scan_identities(rng):
    for _ in range(5):
        x = Tensor(rng.standard_normal((2, 3, int(rng.integers(2, 5)),
                                        int(rng.integers(2, 5)))))
        merged = cross_merge(cross_scan(x))
        if not np.array_equal(merged.data, 4.0 * x.data):
            return False, "cross_merge o cross_scan is not 4x"
    worst = 0.0
    for _ in range(10):
        n, length, d, s = 1, int(rng.integers(2, 17)), int(rng.integers(1, 5)), \
            int(rng.integers(1, 4))
        u = Tensor(rng.standard_normal((n, length, d)))
        dp = Tensor(rng.standard_normal((n, length, d)))
        a = Tensor(-np.abs(rng.standard_normal((d, s))) - 0.1)
        b = Tensor(rng.standard_normal((n, length, s)))
        c = Tensor(rng.standard_normal((n, length, s)))
        skip = Tensor(rng.standard_normal(d))
        got = selective_scan_core(u, dp, a, b, c, skip).data
        want = _scan_reference(u.data, dp.data, a.data, b.data, c.data, skip.data)
        worst = max(worst, np.abs(got - want).max())
    if worst > 1e-10:
        return False, f"scan deviates from recurrence by {worst:.2e}"
    return True, f"recurrence deviation {worst:.2e}"


def _hd95_brute(pred, gt):
    a = boundary_points(pred).astype(np.float64)
    b = boundary_points(gt).astype(np.float64)
    if len(a) == 0 and len(b) == 0:
        return 0.0
    if len(a) == 0 or len(b) == 0:
        return math.hypot(pred.shape[0] - 1, pred.shape[1] - 1)

    def directed(src, dst):
        mins = np.sort(np.sqrt(
            ((src[:, None, :] - dst[None, :, :]) ** 2).sum(-1)).min(axis=1))
        pos = 0.95 * (len(mins) - 1)
        lo = int(math.floor(pos))
        if lo + 1 < len(mins):
            return mins[lo] + (pos - lo) * (mins[lo + 1] - mins[lo])
        return mins[lo]

    return max(directed(a, b), directed(b, a))


def check_hd95_oracle(rng):
    for _ in range(20):
        shape = (int(rng.integers(4, 25)), int(rng.integers(4, 25)))
        pred = (rng.random(shape) < 0.35).astype(np.float64)
        gt = (rng.random(shape) < 0.35).astype(np.float64)
        if hd95(pred, gt) != _hd95_brute(pred, gt):
            return False, "mismatch against all-pairs brute force"
    return True, "20 random mask pairs match brute force"


CHECKS = (
    ("wavelet round-trip", check_wavelet_roundtrip),
    ("gradient checks", check_gradients),
    ("scan identities", check_scan_identities),
    ("hd95 oracle", check_hd95_oracle),
)


def run(out=print):
    ok = True
    for name, check in CHECKS:
        start = time.monotonic()
        passed, detail = check(np.random.default_rng(0))
        elapsed = time.monotonic() - start
        status = "ok" if passed else "FAIL"
        out(f"selftest {name}: {status} ({detail}, {elapsed:.1f}s)")
        ok = ok and passed
    return ok
