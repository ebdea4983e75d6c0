"""Shared test fixtures: random-but-valid bundles, grids, naive oracles."""

from __future__ import annotations

import numpy as np

from cuetrack.bundle_io import FeatureBundle, ScaleLayout, TokenGrid
from cuetrack.numerics import ACT_IDENTITY, ACT_RECTIFY, ConvLayer


def random_bundle(
    rng,
    sizes=((4, 3), (2, 2)),
    dim_g=6,
    n_text=3,
    valid_text=None,
):
    layout = ScaleLayout(sizes)
    valid = n_text if valid_text is None else valid_text
    text = rng.standard_normal((n_text, dim_g))
    text[valid:] = 0.0
    image = rng.standard_normal((layout.total_tokens, dim_g))
    return FeatureBundle(text, valid, layout, image)


def random_grid(rng, grid_w=4, grid_h=4, dim=8):
    return TokenGrid(rng.standard_normal((grid_w * grid_h, dim)), grid_w, grid_h)


def random_layer(rng, c_in, c_out, activation=ACT_RECTIFY, bias_scale=0.5):
    kernel = rng.standard_normal((c_out, c_in, 3, 3)) * 0.5
    bias = rng.standard_normal(c_out) * bias_scale
    return ConvLayer(kernel, bias, activation)


def conv_oracle(layer: ConvLayer, x: np.ndarray) -> np.ndarray:
    """Direct six-nested-loop convolution, independent of the im2col path."""
    c_out = layer.out_channels
    c_in, h, w = x.shape
    out = np.zeros((c_out, h, w))
    for o in range(c_out):
        for i in range(h):
            for j in range(w):
                acc = layer.bias[o]
                for c in range(c_in):
                    for u in range(3):
                        for v in range(3):
                            ii, jj = i + u - 1, j + v - 1
                            if 0 <= ii < h and 0 <= jj < w:
                                acc += layer.kernel[o, c, u, v] * x[c, ii, jj]
                out[o, i, j] = acc
    if layer.activation == ACT_RECTIFY:
        out = np.maximum(out, 0.0)
    else:
        assert layer.activation == ACT_IDENTITY
    return out
