"""Differentiable ops over `Tensor`.

Conventions, fixed engine-wide:
  * NCHW layout for image tensors.
  * Zero padding for conv and for out-of-range sampling; resize clamps to edge
    so constants survive resizing at any size.
  * Half-pixel (align-corners = false) coordinate convention for affine_grid,
    grid_sample and resize_bilinear.
  * Grid/sampling coordinate arithmetic runs in float64 internally so identity
    warps are exact at power-of-two sizes; values stay in the working dtype.
  * No broadcasting beyond the batch axis (and scalars).
"""
from __future__ import annotations

import numpy as np

from .tensor import Tensor, as_tensor


class ShapeError(ValueError):
    pass


def _need(cond: bool, msg: str) -> None:
    if not cond:
        raise ShapeError(msg)


# ---------------------------------------------------------------------------
# elementwise and scalar arithmetic
# ---------------------------------------------------------------------------

def _binary_setup(a, b):
    a = as_tensor(a)
    b = as_tensor(b)
    if a.shape == b.shape:
        mode = "same"
    elif a.size == 1 or b.size == 1:
        mode = "scalar"
    elif a.ndim == b.ndim and a.shape[1:] == b.shape[1:] and 1 in (a.shape[0], b.shape[0]):
        mode = "batch"
    else:
        raise ShapeError(f"operands not alignable: {a.shape} vs {b.shape}")
    return a, b, mode


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a full-shape grad back to a scalar or batch-1 operand shape."""
    if g.shape == shape:
        return g
    if int(np.prod(shape)) == 1:
        return g.sum().reshape(shape).astype(g.dtype)
    return g.sum(axis=0, keepdims=True)


def add(a, b) -> Tensor:
    a, b, _ = _binary_setup(a, b)
    out = a.data + b.data

    def bw(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return Tensor._from_op(out, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b, _ = _binary_setup(a, b)
    out = a.data - b.data

    def bw(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return Tensor._from_op(out, (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b, _ = _binary_setup(a, b)
    out = a.data * b.data

    def bw(g):
        return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)

    return Tensor._from_op(out, (a, b), bw)


def leaky_relu(x, negative_slope: float = 0.1) -> Tensor:
    x = as_tensor(x)
    pos = x.data >= 0
    out = np.where(pos, x.data, x.data * x.dtype.type(negative_slope))

    def bw(g):
        return (np.where(pos, g, g * g.dtype.type(negative_slope)),)

    return Tensor._from_op(out, (x,), bw)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)

    def bw(g):
        return (g * out * (1.0 - out),)

    return Tensor._from_op(out, (x,), bw)


def log(x) -> Tensor:
    x = as_tensor(x)
    out = np.log(x.data)

    def bw(g):
        return (g / x.data,)

    return Tensor._from_op(out, (x,), bw)


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient passes only where lo <= x <= hi."""
    x = as_tensor(x)
    out = np.clip(x.data, lo, hi)
    inside = (x.data >= lo) & (x.data <= hi)

    def bw(g):
        return (g * inside,)

    return Tensor._from_op(out, (x,), bw)


def abs_(x) -> Tensor:
    x = as_tensor(x)
    out = np.abs(x.data)
    sgn = np.sign(x.data)

    def bw(g):
        return (g * sgn,)

    return Tensor._from_op(out, (x,), bw)


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def _axis_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _axis_tuple(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axes)
        return (np.ascontiguousarray(np.broadcast_to(gg, x.shape)),)

    return Tensor._from_op(np.asarray(out), (x,), bw)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _axis_tuple(axis, x.ndim)
    count = 1
    for a in axes:
        count *= x.shape[a]
    out = x.data.mean(axis=axes, keepdims=keepdims)
    inv = 1.0 / count

    def bw(g):
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axes)
        return ((np.broadcast_to(gg, x.shape) * x.dtype.type(inv)),)

    return Tensor._from_op(np.asarray(out), (x,), bw)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out = x.data.reshape(shape)

    def bw(g):
        return (g.reshape(x.shape),)

    return Tensor._from_op(out, (x,), bw)


def concat(tensors, axis: int = 1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    _need(len(ts) >= 1, "concat needs at least one tensor")
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._from_op(out, ts, bw)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _pad2d(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=x.dtype)
    out[:, :, p:p + h, p:p + w] = x
    return out


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    n, c, _, _ = xp.shape
    sn, sc, sh, sw = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, kh, kw, oh, ow),
        strides=(sn, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )
    return view.reshape(n, c * kh * kw, oh * ow)


def _col2im(gcols: np.ndarray, n: int, c: int, h: int, w: int, kh: int, kw: int,
            stride: int, padding: int, oh: int, ow: int) -> np.ndarray:
    gp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=gcols.dtype)
    gc = gcols.reshape(n, c, kh, kw, oh, ow)
    for ki in range(kh):
        for kj in range(kw):
            gp[:, :, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride] += gc[:, :, ki, kj]
    if padding == 0:
        return gp
    return gp[:, :, padding:padding + h, padding:padding + w]


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d cross-correlation, im2col + one matmul per batch item.

    x: (N, C, H, W); weight: (O, C, Kh, Kw); bias: (O,) or None.
    Output spatial size floor((H + 2p - K) / stride) + 1.
    """
    x = as_tensor(x)
    weight = as_tensor(weight)
    _need(x.ndim == 4, f"conv2d input must be NCHW, got shape {x.shape}")
    _need(weight.ndim == 4, f"conv2d weight must be OIKhKw, got shape {weight.shape}")
    n, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    _need(ci == c, f"conv2d channel mismatch: input has {c}, weight expects {ci}")
    _need(h + 2 * padding >= kh and w + 2 * padding >= kw,
          f"conv2d kernel {kh}x{kw} larger than padded input {h + 2 * padding}x{w + 2 * padding}")
    if bias is not None:
        bias = as_tensor(bias)
        _need(bias.shape == (o,), f"conv2d bias must have shape ({o},), got {bias.shape}")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1

    if kh == 1 and kw == 1 and stride == 1 and padding == 0:
        cols = x.data.reshape(n, c, h * w)
    else:
        xp = _pad2d(x.data, padding)
        cols = _im2col(xp, kh, kw, stride, oh, ow)
    wmat = weight.data.reshape(o, c * kh * kw)
    out = np.matmul(wmat, cols).reshape(n, o, oh, ow)
    if bias is not None:
        out += bias.data.reshape(1, o, 1, 1)

    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        gm = g.reshape(n, o, oh * ow)
        gw = np.tensordot(gm, cols, axes=((0, 2), (0, 2))).reshape(weight.shape)
        gcols = np.matmul(wmat.T, gm)
        if kh == 1 and kw == 1 and stride == 1 and padding == 0:
            gx = gcols.reshape(n, c, h, w)
        else:
            gx = _col2im(gcols, n, c, h, w, kh, kw, stride, padding, oh, ow)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return Tensor._from_op(out, parents, bw)


# ---------------------------------------------------------------------------
# bilinear sampling machinery (shared by grid_sample / deformable conv)
# ---------------------------------------------------------------------------

def _bilinear_corners(iy: np.ndarray, ix: np.ndarray, h: int, w: int, dtype):
    """Corner indices, weights and validity for float64 sample coords.

    Out-of-range corners get weight zero (zero-padding convention). Returns
    (lin_idx, weight) per corner plus the fractional parts, weights cast to
    the working dtype.
    """
    y0 = np.floor(iy)
    x0 = np.floor(ix)
    fy = iy - y0
    fx = ix - x0
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)
    y1 = y0 + 1
    x1 = x0 + 1
    fy_t = fy.astype(dtype)
    fx_t = fx.astype(dtype)
    one = dtype.type(1.0)
    corners = []
    for yc, xc, wgt in (
        (y0, x0, (one - fy_t) * (one - fx_t)),
        (y0, x1, (one - fy_t) * fx_t),
        (y1, x0, fy_t * (one - fx_t)),
        (y1, x1, fy_t * fx_t),
    ):
        valid = (yc >= 0) & (yc < h) & (xc >= 0) & (xc < w)
        lin = np.where(valid, yc * w + xc, 0)
        corners.append((lin, wgt * valid))
    return corners, fy_t, fx_t


def _gather(xf: np.ndarray, lin: np.ndarray) -> np.ndarray:
    """xf: (N, C, H*W); lin: (N, T, L) -> values (N, C, T*L)."""
    n, _, _ = xf.shape
    idx = lin.reshape(n, 1, -1)
    return np.take_along_axis(xf, idx, axis=2)


def _scatter_nc(shape_nchw, entries) -> np.ndarray:
    """Accumulate (lin, vals) pairs into an (N, C, H, W) grad array.

    lin: (N, T, L) int64 positions in the H*W plane, shared across channels;
    vals: (N, C, T*L) contributions. bincount keeps accumulation sequential
    and deterministic.
    """
    n, c, h, w = shape_nchw
    hw = h * w
    base = (np.arange(n * c, dtype=np.int64) * hw).reshape(n, c, 1)
    idx_parts = []
    val_parts = []
    for lin, vals in entries:
        idx = base + lin.reshape(n, 1, -1)
        idx_parts.append(idx.ravel())
        val_parts.append(vals.ravel())
    flat = np.bincount(np.concatenate(idx_parts),
                       weights=np.concatenate(val_parts),
                       minlength=n * c * hw)
    return flat.reshape(n, c, h, w)


def grid_sample(x, grid) -> Tensor:
    """Bilinear sampling of x (N,C,H,W) at normalized grid (N,Ho,Wo,2).

    grid[..., 0] is x in [-1, 1], grid[..., 1] is y; half-pixel convention;
    out-of-range samples read as zero. Gradients flow to both x and grid.
    """
    x = as_tensor(x)
    grid = as_tensor(grid)
    _need(x.ndim == 4, f"grid_sample input must be NCHW, got {x.shape}")
    _need(grid.ndim == 4 and grid.shape[-1] == 2,
          f"grid must be (N,Ho,Wo,2), got {grid.shape}")
    _need(grid.shape[0] == x.shape[0],
          f"batch mismatch: input {x.shape[0]} vs grid {grid.shape[0]}")
    n, c, h, w = x.shape
    _, oh, ow, _ = grid.shape
    L = oh * ow

    gx = grid.data[..., 0].astype(np.float64).reshape(n, 1, L)
    gy = grid.data[..., 1].astype(np.float64).reshape(n, 1, L)
    ix = ((gx + 1.0) * w - 1.0) / 2.0
    iy = ((gy + 1.0) * h - 1.0) / 2.0
    corners, fy, fx = _bilinear_corners(iy, ix, h, w, x.dtype)

    xf = x.data.reshape(n, c, h * w)
    # zero-padded corner values, kept for the grid gradient
    vals = [_gather(xf, lin) * (wgt != 0).reshape(n, 1, L)
            for lin, wgt in corners]
    wgts = [wgt.reshape(n, 1, L) for _, wgt in corners]
    out = (vals[0] * wgts[0] + vals[1] * wgts[1]
           + vals[2] * wgts[2] + vals[3] * wgts[3]).reshape(n, c, oh, ow)

    def bw(g):
        gm = g.reshape(n, c, L)
        entries = [(lin, gm * wgt) for (lin, _), wgt in zip(corners, wgts)]
        gxin = _scatter_nc((n, c, h, w), entries).astype(x.dtype)

        v00, v01, v10, v11 = vals
        one = x.dtype.type(1.0)
        fyt = fy.reshape(n, 1, L)
        fxt = fx.reshape(n, 1, L)
        dval_dx = (one - fyt) * (v01 - v00) + fyt * (v11 - v10)
        dval_dy = (one - fxt) * (v10 - v00) + fxt * (v11 - v01)
        gix = (gm * dval_dx).sum(axis=1)
        giy = (gm * dval_dy).sum(axis=1)
        ggrid = np.empty((n, L, 2), dtype=grid.dtype)
        ggrid[:, :, 0] = gix * grid.dtype.type(w / 2.0)
        ggrid[:, :, 1] = giy * grid.dtype.type(h / 2.0)
        return gxin, ggrid.reshape(grid.shape)

    return Tensor._from_op(out, (x, grid), bw)


def affine_grid(theta, height: int, width: int) -> Tensor:
    """Sampling grid (N, H, W, 2) for a batch of 2x3 affine maps.

    Normalized coordinates with half-pixel centers: pixel j maps to
    (2j + 1)/W - 1. The identity theta reproduces the identity grid exactly.
    """
    theta = as_tensor(theta)
    _need(theta.ndim == 3 and theta.shape[1:] == (2, 3),
          f"theta must be (N,2,3), got {theta.shape}")
    n = theta.shape[0]
    xs = (2.0 * np.arange(width, dtype=np.float64) + 1.0) / width - 1.0
    ys = (2.0 * np.arange(height, dtype=np.float64) + 1.0) / height - 1.0
    X, Y = np.meshgrid(xs, ys)
    td = theta.data.astype(np.float64)
    gx = td[:, 0, 0, None, None] * X + td[:, 0, 1, None, None] * Y + td[:, 0, 2, None, None]
    gy = td[:, 1, 0, None, None] * X + td[:, 1, 1, None, None] * Y + td[:, 1, 2, None, None]
    out = np.stack([gx, gy], axis=-1).astype(theta.dtype)

    def bw(g):
        g64 = g.astype(np.float64)
        ggx = g64[..., 0]
        ggy = g64[..., 1]
        gt = np.empty((n, 2, 3), dtype=np.float64)
        gt[:, 0, 0] = np.einsum("nhw,hw->n", ggx, X)
        gt[:, 0, 1] = np.einsum("nhw,hw->n", ggx, Y)
        gt[:, 0, 2] = ggx.sum(axis=(1, 2))
        gt[:, 1, 0] = np.einsum("nhw,hw->n", ggy, X)
        gt[:, 1, 1] = np.einsum("nhw,hw->n", ggy, Y)
        gt[:, 1, 2] = ggy.sum(axis=(1, 2))
        return (gt.astype(theta.dtype),)

    return Tensor._from_op(out, (theta,), bw)


def identity_grid(n: int, height: int, width: int, dtype=None) -> np.ndarray:
    """The grid affine_grid yields for the identity transform (plain array)."""
    xs = (2.0 * np.arange(width, dtype=np.float64) + 1.0) / width - 1.0
    ys = (2.0 * np.arange(height, dtype=np.float64) + 1.0) / height - 1.0
    X, Y = np.meshgrid(xs, ys)
    g = np.stack([X, Y], axis=-1)
    from .tensor import default_dtype
    return np.broadcast_to(g, (n, height, width, 2)).astype(dtype or default_dtype())


# ---------------------------------------------------------------------------
# deformable convolution
# ---------------------------------------------------------------------------

def deformable_conv2d(x, offsets, weight, bias=None) -> Tensor:
    """3x3-style deformable conv, stride 1, same (zero) padding.

    offsets: (N, 2*K*K, H, W); channel 2t is dy, 2t+1 is dx for tap t in
    kernel-row-major order. Each tap bilinearly samples x at its displaced
    position (out-of-range reads zero). The sampled-column matrix goes through
    the same matmul as conv2d, so zero offsets reproduce conv2d bit-exactly.
    """
    x = as_tensor(x)
    offsets = as_tensor(offsets)
    weight = as_tensor(weight)
    _need(x.ndim == 4, f"input must be NCHW, got {x.shape}")
    n, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    _need(ci == c, f"channel mismatch: input has {c}, weight expects {ci}")
    _need(kh == kw and kh % 2 == 1, f"kernel must be square and odd, got {kh}x{kw}")
    k = kh
    T = k * k
    _need(offsets.shape == (n, 2 * T, h, w),
          f"offsets must be (N,{2 * T},H,W), got {offsets.shape}")
    if bias is not None:
        bias = as_tensor(bias)
        _need(bias.shape == (o,), f"bias must have shape ({o},), got {bias.shape}")
    pad = (k - 1) // 2
    L = h * w

    # tap t = ki*k + kj displaces the sample from output pixel (i, j) to
    # (i + ki - pad + dy, j + kj - pad + dx)
    off = offsets.data.astype(np.float64).reshape(n, T, 2, L)
    ii, jj = np.divmod(np.arange(L, dtype=np.float64), w)
    ki = np.repeat(np.arange(k, dtype=np.float64), k) - pad
    kj = np.tile(np.arange(k, dtype=np.float64), k) - pad
    iy = ii[None, None, :] + ki[None, :, None] + off[:, :, 0, :]
    ix = jj[None, None, :] + kj[None, :, None] + off[:, :, 1, :]

    corners, fy, fx = _bilinear_corners(iy, ix, h, w, x.dtype)
    xf = x.data.reshape(n, c, L)
    vals = [_gather(xf, lin).reshape(n, c, T, L) for lin, _ in corners]
    masks = [(wgt != 0).reshape(n, 1, T, L) for _, wgt in corners]
    vals = [v * m for v, m in zip(vals, masks)]
    wgts = [wgt.reshape(n, 1, T, L) for _, wgt in corners]

    cols = (vals[0] * wgts[0] + vals[1] * wgts[1]
            + vals[2] * wgts[2] + vals[3] * wgts[3]).reshape(n, c * T, L)
    wmat = weight.data.reshape(o, c * T)
    out = np.matmul(wmat, cols).reshape(n, o, h, w)
    if bias is not None:
        out += bias.data.reshape(1, o, 1, 1)

    parents = [x, offsets, weight] if bias is None else [x, offsets, weight, bias]

    def bw(g):
        gm = g.reshape(n, o, L)
        gw = np.tensordot(gm, cols, axes=((0, 2), (0, 2))).reshape(weight.shape)
        gcols = np.matmul(wmat.T, gm).reshape(n, c, T, L)

        entries = [(lin, (gcols * wgt).reshape(n, c, T * L))
                   for (lin, _), wgt in zip(corners, wgts)]
        gxin = _scatter_nc((n, c, h, w), entries).astype(x.dtype)

        one = x.dtype.type(1.0)
        fyt = fy.reshape(n, 1, T, L)
        fxt = fx.reshape(n, 1, T, L)
        dval_dx = (one - fyt) * (vals[1] - vals[0]) + fyt * (vals[3] - vals[2])
        dval_dy = (one - fxt) * (vals[2] - vals[0]) + fxt * (vals[3] - vals[1])
        goy = (gcols * dval_dy).sum(axis=1)
        gox = (gcols * dval_dx).sum(axis=1)
        goff = np.empty((n, T, 2, L), dtype=offsets.dtype)
        goff[:, :, 0, :] = goy
        goff[:, :, 1, :] = gox
        grads = [gxin, goff.reshape(offsets.shape), gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return Tensor._from_op(out, parents, bw)


# ---------------------------------------------------------------------------
# pixel shuffle / unshuffle
# ---------------------------------------------------------------------------

def pixel_shuffle(x, r: int) -> Tensor:
    """(N, C*r^2, H, W) -> (N, C, H*r, W*r); out[..., r*i+di, r*j+dj] =
    in[n, c*r^2 + di*r + dj, i, j]. Pure permutation."""
    x = as_tensor(x)
    _need(x.ndim == 4, f"pixel_shuffle input must be NCHW, got {x.shape}")
    n, c, h, w = x.shape
    _need(r >= 1, f"upscale factor must be >= 1, got {r}")
    _need(c % (r * r) == 0,
          f"channels ({c}) not divisible by r^2 ({r * r})")
    oc = c // (r * r)
    out = (x.data.reshape(n, oc, r, r, h, w)
           .transpose(0, 1, 4, 2, 5, 3)
           .reshape(n, oc, h * r, w * r))

    def bw(g):
        return ((g.reshape(n, oc, h, r, w, r)
                 .transpose(0, 1, 3, 5, 2, 4)
                 .reshape(n, c, h, w)),)

    return Tensor._from_op(np.ascontiguousarray(out), (x,), bw)


def pixel_unshuffle(x, r: int) -> Tensor:
    """Inverse of pixel_shuffle: (N, C, H*r, W*r) -> (N, C*r^2, H, W)."""
    x = as_tensor(x)
    _need(x.ndim == 4, f"pixel_unshuffle input must be NCHW, got {x.shape}")
    n, c, h, w = x.shape
    _need(r >= 1, f"downscale factor must be >= 1, got {r}")
    _need(h % r == 0 and w % r == 0,
          f"spatial dims ({h}x{w}) not divisible by r ({r})")
    oh, ow = h // r, w // r
    out = (x.data.reshape(n, c, oh, r, ow, r)
           .transpose(0, 1, 3, 5, 2, 4)
           .reshape(n, c * r * r, oh, ow))

    def bw(g):
        return ((g.reshape(n, c, r, r, oh, ow)
                 .transpose(0, 1, 4, 2, 5, 3)
                 .reshape(n, c, h, w)),)

    return Tensor._from_op(np.ascontiguousarray(out), (x,), bw)


# ---------------------------------------------------------------------------
# resize
# ---------------------------------------------------------------------------

def _resize_axis(in_size: int, out_size: int):
    """Half-pixel source coords, clamped to the edge; returns (i0, i1, frac)."""
    s = (np.arange(out_size, dtype=np.float64) + 0.5) * (in_size / out_size) - 0.5
    s = np.clip(s, 0.0, in_size - 1.0)
    i0 = np.floor(s).astype(np.int64)
    i0 = np.minimum(i0, in_size - 1)
    f = s - i0
    i1 = np.minimum(i0 + 1, in_size - 1)
    return i0, i1, f


def resize_bilinear(x, out_h: int, out_w: int) -> Tensor:
    """Separable bilinear resize, half-pixel convention, edge clamp.

    Identity when sizes match; constants are preserved at any size.
    """
    x = as_tensor(x)
    _need(x.ndim == 4, f"resize input must be NCHW, got {x.shape}")
    _need(out_h >= 1 and out_w >= 1, f"output size must be positive, got {out_h}x{out_w}")
    n, c, h, w = x.shape
    y0, y1, fy = _resize_axis(h, out_h)
    x0, x1, fx = _resize_axis(w, out_w)
    fy_t = fy.astype(x.dtype)[:, None]
    fx_t = fx.astype(x.dtype)[None, :]
    one = x.dtype.type(1.0)
    w00 = (one - fy_t) * (one - fx_t)
    w01 = (one - fy_t) * fx_t
    w10 = fy_t * (one - fx_t)
    w11 = fy_t * fx_t

    d = x.data
    out = (d[:, :, y0[:, None], x0[None, :]] * w00
           + d[:, :, y0[:, None], x1[None, :]] * w01
           + d[:, :, y1[:, None], x0[None, :]] * w10
           + d[:, :, y1[:, None], x1[None, :]] * w11)

    taps = ((y0, x0, w00), (y0, x1, w01), (y1, x0, w10), (y1, x1, w11))

    def bw(g):
        hw = h * w
        base = (np.arange(n * c, dtype=np.int64) * hw).reshape(n * c, 1)
        gm = g.reshape(n * c, out_h * out_w)
        idx_parts = []
        val_parts = []
        for yi, xi, wt in taps:
            lin = (yi[:, None] * w + xi[None, :]).reshape(1, -1)
            idx_parts.append((base + lin).ravel())
            val_parts.append((gm * wt.reshape(1, -1)).ravel())
        flat = np.bincount(np.concatenate(idx_parts),
                           weights=np.concatenate(val_parts),
                           minlength=n * c * hw)
        return (flat.reshape(n, c, h, w).astype(x.dtype),)

    return Tensor._from_op(out, (x,), bw)
