"""2-d convolution and its transpose as differentiable ops.

Shape arithmetic (the documented contract):

    conv2d             OH = (H + 2*padding - KH) // stride + 1
    transposed_conv2d  OH = (H - 1) * stride - 2*padding + KH

With kernel 4, stride 2, padding 1 the two are exact mirrors
(64 -> 32 -> 64), which is what the encoder/decoder pairing relies on.

Both ops lower to one GEMM per direction: im2col gathers input patches
into a matrix, col2im scatters patch columns back, looping only over the
KH*KW kernel offsets so every add is a strided slice assignment.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from polvis.autograd.tensor import ShapeError, Tensor


def _patch_view(padded: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    """(N, C, KH, KW, OH, OW) view of all kernel-sized patches."""
    n, c = padded.shape[:2]
    sn, sc, sh, sw = padded.strides
    return as_strided(
        padded,
        shape=(n, c, kh, kw, oh, ow),
        strides=(sn, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )


def _scatter_patches(cols: np.ndarray, out: np.ndarray, stride: int) -> None:
    """Accumulate cols (N, C, KH, KW, H, W) into out at strided offsets."""
    kh, kw = cols.shape[2], cols.shape[3]
    h, w = cols.shape[4], cols.shape[5]
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * h : stride, j : j + stride * w : stride] += cols[:, :, i, j]


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlate NCHW input with an OIHW kernel.

    Differentiable w.r.t. both input and kernel.
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW input and OIHW kernel, got {x.shape} and {kernel.shape}")
    n, c, h, w = x.shape
    o, i, kh, kw = kernel.shape
    if c != i:
        raise ShapeError(f"conv2d channel mismatch: input has {c} channels, kernel expects {i}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d requires stride >= 1 and padding >= 0, got {stride}, {padding}")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv2d output would be empty: input {h}x{w}, kernel {kh}x{kw}, padding {padding}")
    if x.dtype != kernel.dtype:
        raise ShapeError(f"dtype mismatch: {x.dtype} vs {kernel.dtype}")

    if padding:
        padded = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        padded = x.data
    # (N*OH*OW, C*KH*KW): one row per output position
    cols = _patch_view(padded, kh, kw, stride, oh, ow).transpose(0, 4, 5, 1, 2, 3).reshape(n * oh * ow, c * kh * kw)
    w_mat = kernel.data.reshape(o, c * kh * kw)
    out_data = np.ascontiguousarray((cols @ w_mat.T).reshape(n, oh, ow, o).transpose(0, 3, 1, 2))
    needs = x.requires_grad or kernel.requires_grad

    def backward(grad):
        g = grad.transpose(0, 2, 3, 1).reshape(n * oh * ow, o)
        if kernel.requires_grad:
            kernel.accumulate_grad((g.T @ cols).reshape(o, c, kh, kw))
        if x.requires_grad:
            gcols = (g @ w_mat).reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
            gpad = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=x.dtype)
            _scatter_patches(gcols, gpad, stride)
            gx = gpad[:, :, padding : padding + h, padding : padding + w] if padding else gpad
            x.accumulate_grad(np.ascontiguousarray(gx))

    return Tensor(out_data, needs, "conv2d", (x, kernel), backward if needs else None)


def transposed_conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed convolution (the exact adjoint of conv2d's input map).

    Kernel layout is IOHW: axis 0 matches the input channels, axis 1 the
    produced channels. Differentiable w.r.t. both input and kernel.
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"transposed_conv2d expects NCHW input and IOHW kernel, got {x.shape} and {kernel.shape}")
    n, c, h, w = x.shape
    i, o, kh, kw = kernel.shape
    if c != i:
        raise ShapeError(f"transposed_conv2d channel mismatch: input has {c} channels, kernel expects {i}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"transposed_conv2d requires stride >= 1 and padding >= 0, got {stride}, {padding}")
    oh = (h - 1) * stride - 2 * padding + kh
    ow = (w - 1) * stride - 2 * padding + kw
    if oh < 1 or ow < 1:
        raise ShapeError(f"transposed_conv2d output would be empty for input {h}x{w}")
    if x.dtype != kernel.dtype:
        raise ShapeError(f"dtype mismatch: {x.dtype} vs {kernel.dtype}")

    x_mat = x.data.transpose(0, 2, 3, 1).reshape(n * h * w, c)
    w_mat = kernel.data.reshape(c, o * kh * kw)
    cols = (x_mat @ w_mat).reshape(n, h, w, o, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    padded = np.zeros((n, o, oh + 2 * padding, ow + 2 * padding), dtype=x.dtype)
    _scatter_patches(cols, padded, stride)
    out_data = padded[:, :, padding : padding + oh, padding : padding + ow] if padding else padded
    out_data = np.ascontiguousarray(out_data)
    needs = x.requires_grad or kernel.requires_grad

    def backward(grad):
        if padding:
            gpad = np.zeros((n, o, oh + 2 * padding, ow + 2 * padding), dtype=x.dtype)
            gpad[:, :, padding : padding + oh, padding : padding + ow] = grad
        else:
            gpad = np.ascontiguousarray(grad)
        gcols = (
            _patch_view(gpad, kh, kw, stride, h, w).transpose(0, 4, 5, 1, 2, 3).reshape(n * h * w, o * kh * kw)
        )
        if x.requires_grad:
            gx = (gcols @ w_mat.T).reshape(n, h, w, c).transpose(0, 3, 1, 2)
            x.accumulate_grad(np.ascontiguousarray(gx))
        if kernel.requires_grad:
            kernel.accumulate_grad((x_mat.T @ gcols).reshape(c, o, kh, kw))

    return Tensor(out_data, needs, "transposed_conv2d", (x, kernel), backward if needs else None)
