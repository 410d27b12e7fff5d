"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation links its result tensor to its inputs through a VJP
closure; ``backward()`` on a scalar walks the recorded graph in reverse
topological order and accumulates gradients into the leaves.  Feature
maps use the N x C x H x W layout, sequences N x L x D.  Buffers are
always float64 and treated as immutable once wrapped; the optimizer
replaces parameter buffers instead of mutating them.

Graphs are not thread safe.  Independent graphs built from independent
tensors may run on separate threads.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import ContractError, DimensionError, NumericError

_GRAD_ENABLED = True
_CHECKED = False


def set_checked(flag):
    """Toggle finite-value checking at every op boundary (slow, for debugging)."""
    global _CHECKED
    _CHECKED = bool(flag)


class no_grad:
    """Context manager that suspends graph recording."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "_consumed")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 4:
            raise DimensionError(f"tensors are limited to 4 axes, got {arr.ndim}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._vjp = None
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        if self.data.size != 1:
            raise ContractError("item() requires a single-element tensor")
        return float(self.data.reshape(()))

    def detach(self):
        return Tensor(self.data)

    def backward(self):
        """Accumulate d(self)/d(leaf) into every reachable leaf's .grad."""
        if self.data.size != 1:
            raise ContractError("backward() requires a scalar loss")
        if self._consumed:
            raise ContractError("backward() already ran on this graph; rebuild it first")
        self._consumed = True

        # Depth-first postorder; a node is marked expanded on first pop so
        # diamond-shaped graphs still yield a valid topological order.
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            node._parents = ()
            node._vjp = None

    # Small operator sugar; heavy ops are module-level functions.
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return scale_shift(self, 1.0, float(other))

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale_shift(self, float(other), 0.0)

    __rmul__ = __mul__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, scale_shift(other, -1.0, 0.0))
        return scale_shift(self, 1.0, -float(other))

    def __rsub__(self, other):
        return scale_shift(self, -1.0, float(other))

    def __neg__(self):
        return scale_shift(self, -1.0, 0.0)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def permute(self, *axes):
        return permute(self, axes if len(axes) > 1 else axes[0])

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def make_op(out_data, parents, vjp):
    """Wrap a computed buffer as a graph node.

    ``vjp(g)`` must return one gradient array (or None) per parent.  The
    closure may skip work for parents whose .requires_grad is False.
    """
    out_data = np.asarray(out_data, dtype=np.float64)
    if _CHECKED:
        for p in parents:
            if not np.all(np.isfinite(p.data)):
                raise NumericError("non-finite input at op boundary")
        if not np.all(np.isfinite(out_data)):
            raise NumericError("non-finite output at op boundary")
    t = Tensor(out_data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        t.requires_grad = True
        t._parents = tuple(parents)
        t._vjp = vjp
    return t


def _unbroadcast(g, shape):
    """Sum g back down to ``shape`` along singleton axes."""
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(a, b):
    if a.ndim != b.ndim:
        raise DimensionError(
            f"elementwise ops require equal rank, got {a.shape} vs {b.shape}")
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise DimensionError(f"incompatible shapes {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise


def add(a, b):
    _check_broadcast(a, b)

    def vjp(g):
        ga = _unbroadcast(g, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g, b.shape) if b.requires_grad else None
        return ga, gb

    return make_op(a.data + b.data, (a, b), vjp)


def mul(a, b):
    _check_broadcast(a, b)

    def vjp(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_op(a.data * b.data, (a, b), vjp)


def div(a, b):
    """Elementwise a / b, same-shape operands."""
    if a.shape != b.shape:
        raise DimensionError(f"div requires equal shapes, got {a.shape} vs {b.shape}")

    def vjp(g):
        ga = g / b.data if a.requires_grad else None
        gb = -g * a.data / (b.data * b.data) if b.requires_grad else None
        return ga, gb

    return make_op(a.data / b.data, (a, b), vjp)


def scale_shift(x, scale, shift=0.0):
    """scale * x + shift with python-scalar coefficients."""
    return make_op(x.data * scale + shift, (x,), lambda g: (g * scale,))


def clip(x, lo, hi):
    """Clamp with pass-through gradient strictly inside [lo, hi]."""
    mask = (x.data > lo) & (x.data < hi)
    return make_op(np.clip(x.data, lo, hi), (x,), lambda g: (g * mask,))


def sigmoid(x):
    out = np.empty_like(x.data)
    pos = x.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    out[~pos] = ex / (1.0 + ex)
    return make_op(out, (x,), lambda g: (g * out * (1.0 - out),))


def silu(x):
    s = 1.0 / (1.0 + np.exp(-np.clip(x.data, -500, 500)))
    return make_op(x.data * s, (x,), lambda g: (g * (s + x.data * s * (1.0 - s)),))


def relu(x):
    mask = x.data > 0
    return make_op(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def exp(x):
    out = np.exp(x.data)
    return make_op(out, (x,), lambda g: (g * out,))


def log(x):
    if np.any(x.data <= 0):
        raise NumericError("log requires strictly positive input")
    return make_op(np.log(x.data), (x,), lambda g: (g / x.data,))


def softmax(x, axis):
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return make_op(out, (x,), vjp)


# ---------------------------------------------------------------------------
# reductions


def sum_all(x):
    return make_op(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean_all(x):
    n = x.data.size
    return make_op(np.asarray(x.data.mean()),
                   (x,), lambda g: (np.broadcast_to(g / n, x.shape).copy(),))


# ---------------------------------------------------------------------------
# structure


def reshape(x, shape):
    if isinstance(shape, int):
        shape = (shape,)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != x.data.size:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}")
    return make_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def permute(x, axes):
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"bad permutation {axes} for rank {x.ndim}")
    inv = tuple(np.argsort(axes))
    return make_op(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def flip(x, axis):
    return make_op(np.flip(x.data, axis=axis).copy(),
                   (x,), lambda g: (np.flip(g, axis=axis).copy(),))


def narrow(x, axis, start, length):
    """Slice ``length`` entries starting at ``start`` along ``axis``."""
    axis = axis % x.ndim
    if start < 0 or start + length > x.shape[axis]:
        raise DimensionError(
            f"narrow [{start}:{start + length}) out of range for axis {axis} of {x.shape}")
    idx = tuple(slice(start, start + length) if i == axis else slice(None)
                for i in range(x.ndim))

    def vjp(g):
        full = np.zeros(x.shape)
        full[idx] = g
        return (full,)

    return make_op(x.data[idx].copy(), (x,), vjp)


def concat(tensors, axis):
    if not tensors:
        raise ContractError("concat of zero tensors")
    axis = axis % tensors[0].ndim
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        outs = []
        for t, off, size in zip(tensors, offsets, sizes):
            if t.requires_grad:
                idx = tuple(slice(off, off + size) if i == axis else slice(None)
                            for i in range(t.ndim))
                outs.append(g[idx])
            else:
                outs.append(None)
        return tuple(outs)

    return make_op(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), vjp)


def pad_reflect2d(x, top, bottom, left, right):
    """Reflect-pad the two trailing axes (no edge duplication)."""
    if x.ndim != 4:
        raise DimensionError("pad_reflect2d expects N x C x H x W")
    n, c, h, w = x.shape
    if top >= h or bottom >= h or left >= w or right >= w:
        raise DimensionError("reflect padding must be smaller than the extent")
    pads = ((0, 0), (0, 0), (top, bottom), (left, right))
    out = np.pad(x.data, pads, mode="reflect")

    # Index map built once: grad folds back onto the source pixels.
    src = np.pad(np.arange(h * w).reshape(h, w), pads[2:], mode="reflect").ravel()

    def vjp(g):
        gx = np.zeros((h * w, n * c))
        np.add.at(gx, src, g.reshape(n * c, -1).T)
        return (gx.T.reshape(n, c, h, w),)

    return make_op(out, (x,), vjp)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    """Plain or batched matrix product with identical leading axes."""
    if a.ndim < 2 or b.ndim < 2 or a.ndim != b.ndim:
        raise DimensionError(f"matmul requires equal-rank >=2 operands, got {a.shape}, {b.shape}")
    if a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shapes incompatible: {a.shape} @ {b.shape}")

    def vjp(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(a.data, -1, -2) @ g if b.requires_grad else None
        return ga, gb

    return make_op(a.data @ b.data, (a, b), vjp)


def linear(x, weight, bias=None):
    """x[..., Din] @ weight[Dout, Din]^T (+ bias[Dout])."""
    if x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"linear: input {x.shape} vs weight {weight.shape}")
    out = x.data @ weight.data.T
    parents = [x, weight]
    if bias is not None:
        out = out + bias.data
        parents.append(bias)

    def vjp(g):
        gx = g @ weight.data if x.requires_grad else None
        gw = None
        if weight.requires_grad:
            gw = np.tensordot(g, x.data, axes=(range(g.ndim - 1), range(x.ndim - 1)))
        outs = [gx, gw]
        if bias is not None:
            outs.append(g.reshape(-1, g.shape[-1]).sum(0) if bias.requires_grad else None)
        return tuple(outs)

    return make_op(out, tuple(parents), vjp)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize the trailing axis, then apply the learned affine map."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError("layer_norm affine params must match the trailing axis")
    mu = x.data.mean(-1, keepdims=True)
    var = x.data.var(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gamma.data + beta.data

    def vjp(g):
        gx = None
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (gh - gh.mean(-1, keepdims=True)
                        - xhat * (gh * xhat).mean(-1, keepdims=True))
        batch_axes = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(batch_axes) if gamma.requires_grad else None
        gbeta = g.sum(batch_axes) if beta.requires_grad else None
        return gx, ggamma, gbeta

    return make_op(out, (x, gamma, beta), vjp)


# ---------------------------------------------------------------------------
# convolution and pooling


def _windows(xp, kh, kw, stride):
    v = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return v[:, :, ::stride, ::stride]


def conv2d(x, weight, bias=None, stride=1, pad=0, groups=1):
    """2D cross-correlation over N x C x H x W with optional channel groups."""
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError("conv2d expects 4D input and weight")
    n, cin, h, w = x.shape
    cout, cin_g, kh, kw = weight.shape
    if cin != cin_g * groups or cout % groups != 0:
        raise DimensionError(
            f"conv2d channel mismatch: input {cin}, weight {weight.shape}, groups {groups}")
    if stride < 1 or pad < 0:
        raise DimensionError("conv2d requires stride >= 1 and pad >= 0")
    hp, wp = h + 2 * pad, w + 2 * pad
    if hp < kh or wp < kw:
        raise DimensionError(f"conv2d kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    cog = cout // groups
    parents = [x, weight] + ([bias] if bias is not None else [])

    if kh == 1 and kw == 1 and stride == 1 and pad == 0 and groups == 1:
        wmat = weight.data.reshape(cout, cin)
        out = np.einsum("oc,nchw->nohw", wmat, x.data)
        if bias is not None:
            out = out + bias.data[None, :, None, None]

        def vjp1(g):
            gx = np.einsum("nohw,oc->nchw", g, wmat) if x.requires_grad else None
            gw = None
            if weight.requires_grad:
                gw = np.einsum("nohw,nchw->oc", g, x.data).reshape(weight.shape)
            outs = [gx, gw]
            if bias is not None:
                outs.append(g.sum((0, 2, 3)) if bias.requires_grad else None)
            return tuple(outs)

        return make_op(out, tuple(parents), vjp1)

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = _windows(xp, kh, kw, stride)               # [N, Cin, Ho, Wo, kh, kw]
    ho, wo = cols.shape[2], cols.shape[3]
    xg = cols.reshape(n, groups, cin // groups, ho, wo, kh, kw)
    wg = weight.data.reshape(groups, cog, cin // groups, kh, kw)
    out = np.einsum("gocij,ngchwij->ngohw", wg, xg, optimize=True).reshape(n, cout, ho, wo)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def vjp(g):
        gy = g.reshape(n, groups, cog, ho, wo)
        gw = None
        if weight.requires_grad:
            gw = np.einsum("ngohw,ngchwij->gocij", gy, xg, optimize=True).reshape(weight.shape)
        gx = None
        if x.requires_grad:
            gcols = np.einsum("ngohw,gocij->ngchwij", gy, wg, optimize=True)
            gcols = gcols.reshape(n, cin, ho, wo, kh, kw)
            gxp = np.zeros((n, cin, hp, wp))
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + ho * stride:stride, j:j + wo * stride:stride] \
                        += gcols[:, :, :, :, i, j]
            gx = gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp
        outs = [gx, gw]
        if bias is not None:
            outs.append(g.sum((0, 2, 3)) if bias.requires_grad else None)
        return tuple(outs)

    return make_op(out, tuple(parents), vjp)


def pool2d(x, kind, k=2, stride=None):
    """Pooling over N x C x H x W; kind in {max, avg, global_max, global_avg}."""
    if x.ndim != 4:
        raise DimensionError("pool2d expects N x C x H x W")
    n, c, h, w = x.shape

    if kind in ("global_max", "global_avg"):
        if kind == "global_avg":
            out = x.data.mean((2, 3), keepdims=True)

            def vjp_ga(g):
                return (np.broadcast_to(g / (h * w), x.shape).copy(),)

            return make_op(out, (x,), vjp_ga)
        flat = x.data.reshape(n, c, h * w)
        idx = flat.argmax(-1)
        out = np.take_along_axis(flat, idx[..., None], -1).reshape(n, c, 1, 1)

        def vjp_gm(g):
            gx = np.zeros((n, c, h * w))
            nn, cc = np.indices((n, c))
            np.add.at(gx, (nn, cc, idx), g.reshape(n, c))
            return (gx.reshape(x.shape),)

        return make_op(out, (x,), vjp_gm)

    if kind not in ("max", "avg"):
        raise ContractError(f"unknown pooling kind '{kind}'")
    stride = k if stride is None else stride
    if h < k or w < k or (h - k) % stride or (w - k) % stride:
        raise DimensionError(f"pool window {k}/{stride} does not tile {h}x{w}")
    win = _windows(x.data, k, k, stride)              # [N, C, Ho, Wo, k, k]
    ho, wo = win.shape[2], win.shape[3]

    if kind == "avg":
        out = win.mean((-1, -2))

        def vjp_avg(g):
            gx = np.zeros(x.shape)
            gs = g / (k * k)
            for i in range(k):
                for j in range(k):
                    gx[:, :, i:i + ho * stride:stride, j:j + wo * stride:stride] += gs
            return (gx,)

        return make_op(out, (x,), vjp_avg)

    flat = win.reshape(n, c, ho, wo, k * k)
    idx = flat.argmax(-1)
    out = np.take_along_axis(flat, idx[..., None], -1)[..., 0]

    def vjp_max(g):
        gx = np.zeros(x.shape)
        nn, cc, hh, ww = np.indices((n, c, ho, wo))
        rows = hh * stride + idx // k
        cols = ww * stride + idx % k
        np.add.at(gx, (nn, cc, rows, cols), g)
        return (gx,)

    return make_op(out, (x,), vjp_max)


def channel_reduce(x, kind):
    """Collapse the channel axis to a single map; kind in {mean, max}."""
    if x.ndim != 4:
        raise DimensionError("channel_reduce expects N x C x H x W")
    n, c, h, w = x.shape
    if kind == "mean":
        out = x.data.mean(1, keepdims=True)
        return make_op(out, (x,), lambda g: (np.broadcast_to(g / c, x.shape).copy(),))
    if kind != "max":
        raise ContractError(f"unknown channel reduction '{kind}'")
    idx = x.data.argmax(1)
    out = np.take_along_axis(x.data, idx[:, None], 1)

    def vjp(g):
        gx = np.zeros(x.shape)
        nn, hh, ww = np.indices((n, h, w))
        np.add.at(gx, (nn, idx, hh, ww), g[:, 0])
        return (gx,)

    return make_op(out, (x,), vjp)


# ---------------------------------------------------------------------------
# resampling


def bilinear_matrix(n_in, n_out):
    """Row-stochastic 1D interpolation matrix, pixel centers aligned."""
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        pos = (i + 0.5) * scale - 0.5
        lo = math.floor(pos)
        t = pos - lo
        a = min(max(lo, 0), n_in - 1)
        b = min(max(lo + 1, 0), n_in - 1)
        m[i, a] += 1.0 - t
        m[i, b] += t
    return m


def _apply_h(mat, arr):
    return np.einsum("oh,nchw->ncow", mat, arr)


def _apply_w(mat, arr):
    return np.einsum("ow,nchw->ncho", mat, arr)


def bilinear_upsample(x, factor):
    """Bilinear resize of both spatial axes by an integer factor."""
    if x.ndim != 4:
        raise DimensionError("bilinear_upsample expects N x C x H x W")
    if factor < 1:
        raise DimensionError("upsample factor must be >= 1")
    n, c, h, w = x.shape
    mh = bilinear_matrix(h, h * factor)
    mw = bilinear_matrix(w, w * factor)
    out = _apply_w(mw, _apply_h(mh, x.data))

    def vjp(g):
        return (_apply_w(mw.T, _apply_h(mh.T, g)),)

    return make_op(out, (x,), vjp)


def nearest_upsample(x, factor):
    """Replicate each pixel into a factor x factor block."""
    if x.ndim != 4:
        raise DimensionError("nearest_upsample expects N x C x H x W")
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def vjp(g):
        return (g.reshape(n, c, h, factor, w, factor).sum((3, 5)),)

    return make_op(out, (x,), vjp)
