"""Dense numeric kernels every other module builds on.

Values are float32, row-major, channels-first (C, H, W) for images.
Matrix and convolution products accumulate in float64 before casting
back, so layer outputs do not depend on summation order tricks.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

DTYPE = np.float32


def as_f32(x) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(x), dtype=DTYPE)


def matmul(a, b) -> np.ndarray:
    a = as_f32(a)
    b = as_f32(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul operands do not compose: {a.shape} x {b.shape}")
    return (a.astype(np.float64) @ b.astype(np.float64)).astype(DTYPE)


def add(a, b) -> np.ndarray:
    a = as_f32(a)
    b = as_f32(b)
    if a.shape != b.shape:
        raise ShapeError(f"elementwise add needs equal shapes: {a.shape} vs {b.shape}")
    return a + b


def scale(a, s: float) -> np.ndarray:
    return as_f32(a) * DTYPE(s)


def relu(x) -> np.ndarray:
    return np.maximum(as_f32(x), DTYPE(0))


def _pad_hw(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (padding, padding), (padding, padding)))


def conv_out_hw(h: int, w: int, kh: int, kw: int, stride: int, padding: int):
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(
            f"conv window {kh}x{kw} stride {stride} pad {padding} "
            f"does not fit input {h}x{w}"
        )
    return oh, ow


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """Unfold (C, H, W) into (C*kh*kw, oh*ow) patch columns."""
    c, h, w = x.shape
    oh, ow = conv_out_hw(h, w, kh, kw, stride, padding)
    xp = _pad_hw(x, padding)
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride]  # (C, oh, ow, kh, kw)
    cols = win.transpose(0, 3, 4, 1, 2).reshape(c * kh * kw, oh * ow)
    return cols


def col2im(cols: np.ndarray, c: int, h: int, w: int, kh: int, kw: int,
           stride: int, padding: int) -> np.ndarray:
    """Scatter-add patch columns back to (C, H, W); inverse layout of im2col."""
    oh, ow = conv_out_hw(h, w, kh, kw, stride, padding)
    out = np.zeros((c, h + 2 * padding, w + 2 * padding), dtype=np.float64)
    patches = cols.reshape(c, kh, kw, oh, ow)
    for dy in range(kh):
        for dx in range(kw):
            out[:, dy:dy + oh * stride:stride, dx:dx + ow * stride:stride] += patches[:, dy, dx]
    if padding:
        out = out[:, padding:-padding, padding:-padding]
    return out


def conv2d(x, kernels, bias=None, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Cross-correlate (C, H, W) with kernels (K, C, kh, kw) -> (K, oh, ow)."""
    x = as_f32(x)
    kernels = as_f32(kernels)
    if x.ndim != 3 or kernels.ndim != 4 or kernels.shape[1] != x.shape[0]:
        raise ShapeError(f"conv2d operands do not compose: {x.shape} x {kernels.shape}")
    k, c, kh, kw = kernels.shape
    oh, ow = conv_out_hw(x.shape[1], x.shape[2], kh, kw, stride, padding)
    cols = im2col(x, kh, kw, stride, padding).astype(np.float64)
    wmat = kernels.reshape(k, c * kh * kw).astype(np.float64)
    out = wmat @ cols
    if bias is not None:
        bias = as_f32(bias)
        if bias.shape != (k,):
            raise ShapeError(f"conv2d bias shape {bias.shape} does not match {k} kernels")
        out += bias.astype(np.float64)[:, None]
    return out.reshape(k, oh, ow).astype(DTYPE)


def conv2d_input_grad(grad_out, kernels, input_hw, stride: int = 1,
                      padding: int = 0) -> np.ndarray:
    """Backpropagate (K, oh, ow) through conv2d to the (C, H, W) input.

    Shared by hand-derived gradients and relevance redistribution; the
    result is returned in float64 since both callers keep accumulating.
    """
    kernels = np.asarray(kernels, dtype=np.float64)
    g = np.asarray(grad_out, dtype=np.float64)
    k, c, kh, kw = kernels.shape
    h, w = input_hw
    wmat = kernels.reshape(k, c * kh * kw)
    dcols = wmat.T @ g.reshape(k, -1)
    return col2im(dcols, c, h, w, kh, kw, stride, padding)


def maxpool2d(x, window: int, stride: int) -> np.ndarray:
    out, _ = maxpool2d_indices(x, window, stride)
    return out


def maxpool2d_indices(x, window: int, stride: int):
    """Max over windows plus the winning flat (H*W) index per output cell.

    Ties go to the lowest input index: the windows enumerate cells in
    row-major order and argmax keeps the first maximum.
    """
    x = as_f32(x)
    if x.ndim != 3:
        raise ShapeError(f"maxpool2d expects (C, H, W), got {x.shape}")
    c, h, w = x.shape
    oh = (h - window) // stride + 1
    ow = (w - window) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"pool window {window} stride {stride} does not fit input {h}x{w}")
    win = np.lib.stride_tricks.sliding_window_view(x, (window, window), axis=(1, 2))
    win = win[:, ::stride, ::stride].reshape(c, oh, ow, window * window)
    local = win.argmax(axis=3)
    dy, dx = np.divmod(local, window)
    oy = np.arange(oh)[None, :, None] * stride
    ox = np.arange(ow)[None, None, :] * stride
    idx = (oy + dy) * w + (ox + dx)
    out = np.take_along_axis(win, local[..., None], axis=3)[..., 0]
    return out.astype(DTYPE), idx


def maxpool2d_route(values, idx, input_hw) -> np.ndarray:
    """Scatter per-output values back onto winning input cells (add on overlap)."""
    values = np.asarray(values, dtype=np.float64)
    c = values.shape[0]
    h, w = input_hw
    out = np.zeros((c, h * w), dtype=np.float64)
    flat_vals = values.reshape(c, -1)
    flat_idx = idx.reshape(c, -1)
    for ch in range(c):
        np.add.at(out[ch], flat_idx[ch], flat_vals[ch])
    return out.reshape(c, h, w)
