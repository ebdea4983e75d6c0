"""Dense-array numerics substrate.

Small validated wrappers over numpy for the attention algebra, a fixed
3x3 / stride-1 / pad-1 convolution with exact analytic backward pass, an
align-corners-false bilinear resize, and a central-difference gradient
checker. All internal math is float64; operations are pure and
deterministic on a single machine.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyTextError, NumericError, ShapeError

ACT_RECTIFY = "rectify"
ACT_IDENTITY = "identity"


def _as_real(a: np.ndarray) -> np.ndarray:
    # float32 inputs stay float32 (the CLI's reduced-precision mode);
    # everything else computes at 64-bit
    a = np.asarray(a)
    if a.dtype == np.float32:
        return a
    return a.astype(np.float64, copy=False)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Product of two 2-D arrays; inner-dimension mismatch is a ShapeError."""
    a = _as_real(a)
    b = _as_real(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.ndim}-D and {b.ndim}-D")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def mean_last_dim(a: np.ndarray, valid_cols: int) -> np.ndarray:
    """Per-row mean over the first `valid_cols` columns, as a column vector.

    Restricting the mean to the leading columns implements the text-padding
    mask: padded token columns never dilute the average.
    """
    a = _as_real(a)
    if a.ndim != 2:
        raise ShapeError(f"expected 2-D input, got {a.ndim}-D")
    if valid_cols == 0:
        raise EmptyTextError("mean over zero text tokens is undefined")
    if not 1 <= valid_cols <= a.shape[1]:
        raise ShapeError(f"valid_cols={valid_cols} outside 1..{a.shape[1]}")
    return a[:, :valid_cols].mean(axis=1, keepdims=True)


def reshape_to_2d(v: np.ndarray, w: int, h: int) -> np.ndarray:
    """Row-major unflattening of an L-vector (or Lx1 column) to an (h, w) grid.

    Element (r, c) of the result is v[r*w + c]; the row index varies slowest.
    """
    v = _as_real(v)
    if v.ndim == 2 and v.shape[1] == 1:
        v = v[:, 0]
    if v.ndim != 1:
        raise ShapeError(f"expected a vector or column, got shape {v.shape}")
    if w < 1 or h < 1 or v.size != w * h:
        raise ShapeError(f"cannot reshape length {v.size} to {w}x{h}")
    return v.reshape(h, w)


def _axis_coords(n_in: int, n_out: int):
    scale = n_in / n_out
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, float(n_in - 1))
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def bilinear_resize(a: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Bilinear resampling with the align-corners-false convention.

    Source coordinate for destination index d is (d + 0.5)*scale - 0.5,
    clamped to the borders. Output values are convex combinations of input
    values, so global min/max bounds are preserved.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise ShapeError(f"expected a non-empty 2-D grid, got shape {a.shape}")
    if out_w < 1 or out_h < 1:
        raise ShapeError(f"output dims must be positive, got {out_w}x{out_h}")
    ylo, yhi, fy = _axis_coords(a.shape[0], out_h)
    xlo, xhi, fx = _axis_coords(a.shape[1], out_w)
    v00 = a[ylo[:, None], xlo[None, :]]
    v01 = a[ylo[:, None], xhi[None, :]]
    v10 = a[yhi[:, None], xlo[None, :]]
    v11 = a[yhi[:, None], xhi[None, :]]
    top = v00 * (1.0 - fx) + v01 * fx
    bot = v10 * (1.0 - fx) + v11 * fx
    return top * (1.0 - fy[:, None]) + bot * fy[:, None]


@dataclass(frozen=True)
class ConvLayer:
    """One 3x3 / stride-1 / pad-1 convolution layer.

    kernel has shape (out_channels, in_channels, 3, 3), bias (out_channels,).
    The rectifier subgradient at 0 is defined as 0.
    """

    kernel: np.ndarray
    bias: np.ndarray
    activation: str = ACT_RECTIFY

    def __post_init__(self):
        k = np.asarray(self.kernel, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if k.ndim != 4 or k.shape[2:] != (3, 3):
            raise ShapeError(f"kernel must be (out, in, 3, 3), got {k.shape}")
        if b.shape != (k.shape[0],):
            raise ShapeError(f"bias must be ({k.shape[0]},), got {b.shape}")
        if self.activation not in (ACT_RECTIFY, ACT_IDENTITY):
            raise ShapeError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "kernel", k)
        object.__setattr__(self, "bias", b)

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1]

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]


def _pad1(x: np.ndarray) -> np.ndarray:
    c, h, w = x.shape
    out = np.zeros((c, h + 2, w + 2), dtype=x.dtype)
    out[:, 1:-1, 1:-1] = x
    return out


def _patches(xp: np.ndarray, h: int, w: int) -> np.ndarray:
    # (c*9, h*w) column matrix; row index is c*9 + u*3 + v to match
    # kernel.reshape(out, in*9)
    c = xp.shape[0]
    cols = np.empty((c, 3, 3, h, w), dtype=xp.dtype)
    for u in range(3):
        for v in range(3):
            cols[:, u, v] = xp[:, u : u + h, v : v + w]
    return cols.reshape(c * 9, h * w)


def _check_featuremap(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.size == 0:
        raise ShapeError(f"expected (channels, height, width), got shape {x.shape}")
    return x


def conv_preactivation(layer: ConvLayer, x: np.ndarray) -> np.ndarray:
    """Convolution output before the activation; spatial dims are preserved."""
    x = _check_featuremap(x)
    if x.shape[0] != layer.in_channels:
        raise ShapeError(
            f"layer expects {layer.in_channels} input channels, got {x.shape[0]}"
        )
    c, h, w = x.shape
    cols = _patches(_pad1(x), h, w)
    flat = layer.kernel.reshape(layer.out_channels, c * 9) @ cols
    flat += layer.bias[:, None]
    return flat.reshape(layer.out_channels, h, w)


def conv_forward(layer: ConvLayer, x: np.ndarray) -> np.ndarray:
    pre = conv_preactivation(layer, x)
    if layer.activation == ACT_RECTIFY:
        return np.maximum(pre, 0.0)
    return pre


def conv_backward(layer: ConvLayer, x: np.ndarray, grad_out: np.ndarray):
    """Exact gradients of conv_forward.

    Returns (grad_x, grad_kernel, grad_bias). grad_out is the gradient with
    respect to the post-activation output.
    """
    x = _check_featuremap(x)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    c, h, w = x.shape
    expected = (layer.out_channels, h, w)
    if grad_out.shape != expected:
        raise ShapeError(f"grad_out must be {expected}, got {grad_out.shape}")
    pre = conv_preactivation(layer, x)
    if layer.activation == ACT_RECTIFY:
        grad_pre = np.where(pre > 0.0, grad_out, 0.0)
    else:
        grad_pre = grad_out
    cols = _patches(_pad1(x), h, w)
    g2 = grad_pre.reshape(layer.out_channels, h * w)
    grad_kernel = (g2 @ cols.T).reshape(layer.out_channels, c, 3, 3)
    grad_bias = grad_pre.sum(axis=(1, 2))
    gxp = np.zeros((c, h + 2, w + 2), dtype=np.float64)
    for u in range(3):
        for v in range(3):
            gxp[:, u : u + h, v : v + w] += np.tensordot(
                layer.kernel[:, :, u, v], grad_pre, axes=([0], [0])
            )
    return gxp[:, 1:-1, 1:-1], grad_kernel, grad_bias


def finite_diff_check(
    loss,
    params: np.ndarray,
    analytic_grad: np.ndarray,
    eps: float = 1e-5,
    indices=None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    `loss` is called with arrays shaped like `params`. The relative error for
    each parameter uses the denominator max(|analytic|, |numeric|, 1e-8).
    `indices` restricts the check to a subset of (flattened) parameters. A
    zero-parameter model checks vacuously and returns 0.
    """
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    params = np.asarray(params, dtype=np.float64)
    analytic = np.asarray(analytic_grad, dtype=np.float64)
    if analytic.shape != params.shape:
        raise ShapeError(
            f"gradient shape {analytic.shape} != parameter shape {params.shape}"
        )
    flat = params.ravel().copy()
    grad = analytic.ravel()
    if flat.size == 0:
        return 0.0
    if indices is None:
        indices = range(flat.size)
    max_rel = 0.0
    for i in indices:
        saved = flat[i]
        flat[i] = saved + eps
        lp = float(loss(flat.reshape(params.shape)))
        flat[i] = saved - eps
        lm = float(loss(flat.reshape(params.shape)))
        flat[i] = saved
        if not (np.isfinite(lp) and np.isfinite(lm)):
            raise NumericError(f"non-finite loss while perturbing parameter {i}")
        numeric = (lp - lm) / (2.0 * eps)
        denom = max(abs(grad[i]), abs(numeric), 1e-8)
        rel = abs(grad[i] - numeric) / denom
        if rel > max_rel:
            max_rel = rel
    return float(max_rel)
