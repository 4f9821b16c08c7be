"""Dense float64 tensors with a fixed primitive set and tape-based reverse mode.

Images and feature maps are rank-3 arrays laid out (channels, height, width),
row-major within each channel. The primitive set is closed: every operation
used by the losses and the unrolled network is one of the functions below,
each paired with a vector-Jacobian product so any scalar built from them can
be differentiated by replaying the tape backward.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NonFiniteError(ValueError):
    """A primitive produced NaN or Inf."""


class TapeError(RuntimeError):
    """Backward pass requested on an unusable tape/output."""


def _check_finite(data, opname):
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{opname} produced non-finite values")


class Tensor:
    """Array node. Rank 3 = (channels, height, width) for images/features;
    kernels, style matrices and scalars ride on the same class."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr, "Tensor")
        self.data = arr

    @property
    def channels(self):
        return self.data.shape[0]

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape

    def copy(self):
        return Tensor(self.data.copy())

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"


@dataclass
class ConvLayer:
    """3x3 (or 1x1) convolution weights with optional fused ReLU.

    kernel: (out_ch, in_ch, kh, kw), bias: (out_ch,). Parameter count is
    out_ch*in_ch*kh*kw + out_ch.
    """

    kernel: Tensor
    bias: Tensor
    relu: bool = True

    @property
    def out_ch(self):
        return self.kernel.data.shape[0]

    @property
    def in_ch(self):
        return self.kernel.data.shape[1]

    def param_count(self):
        return self.kernel.data.size + self.bias.data.size


@dataclass
class _Record:
    inputs: tuple
    output: Tensor
    vjp: object  # callable(grad_out) -> tuple of grads aligned with inputs


@dataclass
class GradTape:
    """Recorded primitive applications, replayed in reverse by backward().

    Single-writer: one computation records and differentiates a tape; tapes
    are not shared across concurrent computations.
    """

    records: list = field(default_factory=list)

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False


_TAPES: list[GradTape] = []


def _active_tape():
    return _TAPES[-1] if _TAPES else None


def _emit(inputs, out_data, vjp, opname):
    _check_finite(out_data, opname)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    tape = _active_tape()
    if tape is not None:
        tape.records.append(_Record(tuple(inputs), out, vjp))
    return out


def backward(tape: GradTape, output: Tensor) -> dict:
    """Accumulate gradients of a scalar `output` w.r.t. every tensor on the tape.

    Returns a dict keyed by Tensor identity; shapes mirror the inputs.
    """
    if not tape.records:
        raise TapeError("empty tape")
    if np.ndim(output.data) != 0 and output.data.size != 1:
        raise TapeError(f"backward needs a scalar output, got shape {output.data.shape}")
    grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
    by_id: dict[int, Tensor] = {id(output): output}
    for rec in reversed(tape.records):
        g_out = grads.get(id(rec.output))
        if g_out is None:
            continue
        for inp, g in zip(rec.inputs, rec.vjp(g_out)):
            if g is None or not isinstance(inp, Tensor):
                continue
            by_id[id(inp)] = inp
            if id(inp) in grads:
                grads[id(inp)] = grads[id(inp)] + g
            else:
                grads[id(inp)] = g
    return {by_id[k]: v for k, v in grads.items()}


# ---------------------------------------------------------------------------
# weight initialization


def _xavier_fans(shape):
    if len(shape) == 4:
        out_ch, in_ch, kh, kw = shape
        return in_ch * kh * kw, out_ch * kh * kw
    if len(shape) == 2:
        return shape[1], shape[0]
    raise ValueError(f"no fan convention for shape {shape}")


def xavier_init_rng(rng, shape):
    """Uniform draw on +/- sqrt(6 / (fan_in + fan_out)).

    For 4-index conv weights the fans are channels * kernel area.
    """
    fan_in, fan_out = _xavier_fans(shape)
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def xavier_init(shape, seed) -> np.ndarray:
    return xavier_init_rng(np.random.default_rng(seed), shape)


# ---------------------------------------------------------------------------
# reflection padding


def _reflect_indices(n, pad):
    """Index map realizing single reflection (edge pixel not duplicated).

    For n == 1 the reflection degenerates to replication so that 1x1 feature
    maps at the deepest network level remain convolvable.
    """
    idx = np.arange(-pad, n + pad)
    idx = np.abs(idx)                       # left mirror
    idx = np.where(idx >= n, 2 * (n - 1) - idx, idx)  # right mirror
    return np.clip(idx, 0, n - 1)


def reflect_pad(arr, pad_h, pad_w):
    """Mirror-pad the two trailing axes of a (c, h, w) array."""
    h, w = arr.shape[-2], arr.shape[-1]
    if pad_h >= h and h > 1 or pad_w >= w and w > 1:
        raise ValueError("reflection pad width must be smaller than the dimension")
    ri = _reflect_indices(h, pad_h)
    ci = _reflect_indices(w, pad_w)
    return arr[..., ri[:, None], ci[None, :]]


# ---------------------------------------------------------------------------
# primitives


def conv2d_reflect(x: Tensor, layer: ConvLayer, apply_activation: bool = True) -> Tensor:
    """2-D convolution with reflection padding, spatial size preserved.

    Fuses the layer's ReLU unless apply_activation is False (used when a
    graph filter must slot between the convolution and the nonlinearity).
    """
    c, h, w = x.data.shape
    kern, bias = layer.kernel, layer.bias
    co, ci, kh, kw = kern.data.shape
    if ci != c:
        raise ValueError(f"channel mismatch: input {c}, kernel expects {ci}")
    ph, pw = kh // 2, kw // 2
    padded = reflect_pad(x.data, ph, pw)
    # gather the kh*kw shifted views: cols[(dy,dx)] stacked -> (c*kh*kw, h*w)
    cols = np.empty((c, kh, kw, h, w), dtype=np.float64)
    for dy in range(kh):
        for dx in range(kw):
            cols[:, dy, dx] = padded[:, dy:dy + h, dx:dx + w]
    cols2 = cols.reshape(c * kh * kw, h * w)
    w2 = kern.data.reshape(co, c * kh * kw)
    pre = w2 @ cols2 + bias.data[:, None]
    use_relu = layer.relu and apply_activation
    out_data = np.maximum(pre, 0.0) if use_relu else pre
    out_data = out_data.reshape(co, h, w)

    def vjp(g):
        g2 = g.reshape(co, h * w)
        if use_relu:
            g2 = g2 * (pre > 0.0)
        g_bias = g2.sum(axis=1)
        g_w = (g2 @ cols2.T).reshape(co, c, kh, kw)
        g_cols = (w2.T @ g2).reshape(c, kh, kw, h, w)
        g_padded = np.zeros((c, h + 2 * ph, w + 2 * pw), dtype=np.float64)
        for dy in range(kh):
            for dx in range(kw):
                g_padded[:, dy:dy + h, dx:dx + w] += g_cols[:, dy, dx]
        # adjoint of reflection padding: fold pad rows/cols onto their sources
        ri = _reflect_indices(h, ph)
        ci_ = _reflect_indices(w, pw)
        g_x = np.zeros((c, h, w), dtype=np.float64)
        np.add.at(g_x, (slice(None), ri[:, None], ci_[None, :]), g_padded)
        return g_x, g_w, g_bias

    return _emit((x, kern, bias), out_data, vjp, "conv2d_reflect")


def avg_pool2(x: Tensor) -> Tensor:
    """2x2 average pooling; spatial dims must be even."""
    c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ValueError(f"avg_pool2 needs even spatial dims, got {h}x{w}")
    out_data = x.data.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))

    def vjp(g):
        gx = np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) * 0.25
        return (gx,)

    return _emit((x,), out_data, vjp, "avg_pool2")


def _up2_axis(n):
    """Half-pixel-centers source indices/weights for doubling one axis."""
    src = (np.arange(2 * n) + 0.5) / 2.0 - 0.5
    src = np.clip(src, 0.0, n - 1.0)
    i0 = np.floor(src).astype(np.intp)
    t = src - i0
    i1 = np.minimum(i0 + 1, n - 1)
    return i0, i1, 1.0 - t, t


def bilinear_up2(x: Tensor) -> Tensor:
    """Doubling bilinear upsample with half-pixel-center sampling."""
    c, h, w = x.data.shape
    r0, r1, wr0, wr1 = _up2_axis(h)
    c0, c1, wc0, wc1 = _up2_axis(w)
    rows = x.data[:, r0, :] * wr0[None, :, None] + x.data[:, r1, :] * wr1[None, :, None]
    out_data = rows[:, :, c0] * wc0[None, None, :] + rows[:, :, c1] * wc1[None, None, :]

    def vjp(g):
        g_rows = np.zeros((c, 2 * h, w), dtype=np.float64)
        np.add.at(g_rows, (slice(None), slice(None), c0), g * wc0[None, None, :])
        np.add.at(g_rows, (slice(None), slice(None), c1), g * wc1[None, None, :])
        gx = np.zeros((c, h, w), dtype=np.float64)
        np.add.at(gx, (slice(None), r0, slice(None)), g_rows * wr0[None, :, None])
        np.add.at(gx, (slice(None), r1, slice(None)), g_rows * wr1[None, :, None])
        return (gx,)

    return _emit((x,), out_data, vjp, "bilinear_up2")


def clamp(x: Tensor, lo=None, hi=None) -> Tensor:
    """Elementwise clamp; gradient flows only strictly inside the active region."""
    out_data = np.clip(x.data, lo, hi)
    xd = x.data

    def vjp(g):
        inside = np.ones_like(xd, dtype=bool)
        if lo is not None:
            inside &= xd > lo
        if hi is not None:
            inside &= xd < hi
        return (g * inside,)

    return _emit((x,), out_data, vjp, "clamp")


def relu(x: Tensor) -> Tensor:
    return clamp(x, lo=0.0)


def clip_unit(x: Tensor) -> Tensor:
    return clamp(x, lo=0.0, hi=1.0)


def lincomb(x: Tensor, y: Tensor | None = None, a: float = 1.0, b: float = 1.0) -> Tensor:
    """a*x + b*y (or a*x when y is omitted); shapes must match."""
    if y is None:
        out_data = a * x.data

        def vjp(g):
            return (a * g,)

        return _emit((x,), out_data, vjp, "lincomb")
    if x.data.shape != y.data.shape:
        raise ValueError(f"lincomb shape mismatch: {x.data.shape} vs {y.data.shape}")
    out_data = a * x.data + b * y.data

    def vjp2(g):
        return a * g, b * g

    return _emit((x, y), out_data, vjp2, "lincomb")


def chan_matmul(feat: Tensor, m: Tensor) -> Tensor:
    """Right-multiply a (c,h,w) feature map, viewed as (pixels, c), by a c x c matrix.

    This is the instance-dependent 1x1 convolution used by the style
    correction: each pixel's channel vector is transformed by `m`.
    """
    c, h, w = feat.data.shape
    if m.data.shape != (c, c):
        raise ValueError(f"matrix shape {m.data.shape} does not match {c} channels")
    f2 = feat.data.reshape(c, h * w).T
    out_data = (f2 @ m.data).T.reshape(c, h, w)

    def vjp(g):
        g2 = g.reshape(c, h * w).T
        g_f = (g2 @ m.data.T).T.reshape(c, h, w)
        g_m = f2.T @ g2
        return g_f, g_m

    return _emit((feat, m), out_data, vjp, "chan_matmul")


def masked_gram(feat: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Normalized (optionally masked) channel Gram matrix of a feature map.

    Without a mask: F^T F / n over the pixel dimension. With a 0/1 pixel mask
    m: (diag(m) F)^T (diag(m) F) / trace(m). The result is symmetrized so the
    symmetry contract holds exactly. The mask is a constant, not a tensor.
    """
    c, h, w = feat.data.shape
    n = h * w
    f2 = feat.data.reshape(c, n).T
    if mask is None:
        fm = f2
        denom = float(n)
    else:
        mask = np.asarray(mask, dtype=np.float64).reshape(-1)
        if mask.shape[0] != n:
            raise ValueError(f"mask length {mask.shape[0]} != {n} pixels")
        denom = float(mask.sum())
        if denom <= 0.0:
            raise ValueError("mask has empty support (trace 0)")
        fm = f2 * mask[:, None]
    a = fm.T @ fm
    out_data = (a + a.T) / (2.0 * denom)

    def vjp(g):
        sym = (g + g.T) / (2.0 * denom)
        g_fm = fm @ (sym + sym.T)
        if mask is not None:
            g_fm = g_fm * mask[:, None]
        return (g_fm.T.reshape(c, h, w),)

    return _emit((feat,), out_data, vjp, "masked_gram")


def vsum(x: Tensor) -> Tensor:
    """Sum of all entries, as a scalar tensor."""
    out_data = np.asarray(np.sum(x.data))
    shape = x.data.shape

    def vjp(g):
        return (np.full(shape, float(g)),)

    return _emit((x,), out_data, vjp, "vsum")


def sqsum(x: Tensor) -> Tensor:
    """Sum of squares of all entries, as a scalar tensor."""
    out_data = np.asarray(np.sum(x.data * x.data))
    xd = x.data

    def vjp(g):
        return (2.0 * float(g) * xd,)

    return _emit((x,), out_data, vjp, "sqsum")


def tv(x: Tensor) -> Tensor:
    """Anisotropic squared total variation: sum of squared forward differences."""
    dh = x.data[:, 1:, :] - x.data[:, :-1, :]
    dw = x.data[:, :, 1:] - x.data[:, :, :-1]
    out_data = np.asarray(np.sum(dh * dh) + np.sum(dw * dw))

    def vjp(g):
        s = 2.0 * float(g)
        gx = np.zeros_like(x.data)
        gx[:, 1:, :] += s * dh
        gx[:, :-1, :] -= s * dh
        gx[:, :, 1:] += s * dw
        gx[:, :, :-1] -= s * dw
        return (gx,)

    return _emit((x,), out_data, vjp, "tv")
