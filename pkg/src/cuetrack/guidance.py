"""Trainable guidance: encode the heatmap, fuse it into the search tokens.

Two three-layer 3x3 convolution stacks. The first lifts the (resized)
heatmap to 64 channels; the second consumes the channel-concatenation of
that encoding with the reshaped search tokens and returns a map with the
tracker's token dimensionality, so the fused output token grid has exactly
the input grid's dimensions. The heatmap path carries no gradient (the
mapping module is train-free); gradients flow to both stacks' weights and
to the input tokens.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _wire
from .bundle_io import TokenGrid
from .cue_mapping import Heatmap
from .errors import ConfigError, LayoutError, ShapeError
from .numerics import (
    ACT_IDENTITY,
    ACT_RECTIFY,
    ConvLayer,
    bilinear_resize,
    conv_backward,
    conv_forward,
    conv_preactivation,
)

MAGIC_WEIGHTS = b"CTGW"

CNN1_CHANNELS = (1, 16, 32, 64)
HEATMAP_CHANNELS = CNN1_CHANNELS[-1]


def cnn2_channels(dim_t: int) -> tuple[int, int, int, int]:
    return (dim_t + HEATMAP_CHANNELS, dim_t, dim_t, dim_t)


def _stack_activations() -> tuple[str, str, str]:
    # rectify after the first two layers, linear final layer so fused
    # features can take either sign
    return (ACT_RECTIFY, ACT_RECTIFY, ACT_IDENTITY)


@dataclass(frozen=True)
class GuidanceWeights:
    cnn1: tuple[ConvLayer, ConvLayer, ConvLayer]
    cnn2: tuple[ConvLayer, ConvLayer, ConvLayer]
    init_seed: int

    def __post_init__(self):
        cnn1 = tuple(self.cnn1)
        cnn2 = tuple(self.cnn2)
        if len(cnn1) != 3 or len(cnn2) != 3:
            raise ConfigError("each stack must have exactly three layers")
        chans1 = tuple(l.in_channels for l in cnn1) + (cnn1[-1].out_channels,)
        if chans1 != CNN1_CHANNELS:
            raise ConfigError(f"cnn1 schedule {chans1} != {CNN1_CHANNELS}")
        dim_t = cnn2[-1].out_channels
        chans2 = tuple(l.in_channels for l in cnn2) + (dim_t,)
        if chans2 != cnn2_channels(dim_t):
            raise ConfigError(f"cnn2 schedule {chans2} != {cnn2_channels(dim_t)}")
        acts = _stack_activations()
        for stack in (cnn1, cnn2):
            for layer, act in zip(stack, acts):
                if layer.activation != act:
                    raise ConfigError(
                        f"layer activation {layer.activation!r} != expected {act!r}"
                    )
        object.__setattr__(self, "cnn1", cnn1)
        object.__setattr__(self, "cnn2", cnn2)

    @property
    def dim_t(self) -> int:
        return self.cnn2[-1].out_channels

    @property
    def layers(self) -> tuple[ConvLayer, ...]:
        return self.cnn1 + self.cnn2

    def pack(self) -> np.ndarray:
        """Flatten all kernels and biases in declaration order."""
        parts = []
        for layer in self.layers:
            parts.append(layer.kernel.ravel())
            parts.append(layer.bias.ravel())
        return np.concatenate(parts)

    def with_packed(self, vec: np.ndarray) -> "GuidanceWeights":
        """Rebuild weights of the same architecture from a packed vector."""
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.pack().size,):
            raise ShapeError(f"packed vector must have {self.pack().size} entries")
        layers, pos = [], 0
        for layer in self.layers:
            nk = layer.kernel.size
            kernel = vec[pos : pos + nk].reshape(layer.kernel.shape)
            pos += nk
            nb = layer.bias.size
            bias = vec[pos : pos + nb]
            pos += nb
            layers.append(ConvLayer(kernel, bias, layer.activation))
        return GuidanceWeights(tuple(layers[:3]), tuple(layers[3:]), self.init_seed)


@dataclass(frozen=True)
class GuidanceGradients:
    """Kernels/bias gradients mirroring GuidanceWeights' declaration order."""

    cnn1: tuple
    cnn2: tuple

    def pack(self) -> np.ndarray:
        parts = []
        for gk, gb in self.cnn1 + self.cnn2:
            parts.append(gk.ravel())
            parts.append(gb.ravel())
        return np.concatenate(parts)


def init_weights(dim_t: int, seed: int) -> GuidanceWeights:
    """Fan-in-scaled uniform kernels (bound sqrt(1/(in*9))), zero biases."""
    if dim_t < 1:
        raise ConfigError(f"dim_t must be positive, got {dim_t}")
    if not 0 <= int(seed) < 2**32:
        raise ConfigError("seed must fit in u32")
    rng = np.random.default_rng(int(seed))
    acts = _stack_activations()

    def make_stack(channels):
        layers = []
        for i in range(3):
            c_in, c_out = channels[i], channels[i + 1]
            bound = float(np.sqrt(1.0 / (c_in * 9)))
            kernel = rng.uniform(-bound, bound, size=(c_out, c_in, 3, 3))
            layers.append(ConvLayer(kernel, np.zeros(c_out), acts[i]))
        return tuple(layers)

    return GuidanceWeights(
        make_stack(CNN1_CHANNELS), make_stack(cnn2_channels(dim_t)), int(seed)
    )


def encode_heatmap(
    w: GuidanceWeights, h: Heatmap, target_w: int, target_h: int
) -> np.ndarray:
    """Resize the heatmap to the token grid and lift it to 64 channels."""
    if not h.normalized:
        raise ConfigError("heatmap must be normalized before encoding")
    if target_w < 1 or target_h < 1:
        raise ShapeError(f"target dims must be positive, got {target_w}x{target_h}")
    x = bilinear_resize(h.values, target_w, target_h)[None, :, :]
    for layer in w.cnn1:
        x = conv_forward(layer, x)
    return x


def _tokens_to_map(tokens: np.ndarray, grid_w: int, grid_h: int) -> np.ndarray:
    # token i -> cell (i // grid_w, i % grid_w), channel-major feature map
    return np.ascontiguousarray(tokens.T).reshape(-1, grid_h, grid_w)


def _map_to_tokens(fmap: np.ndarray) -> np.ndarray:
    d = fmap.shape[0]
    return np.ascontiguousarray(fmap.reshape(d, -1).T)


def fuse(w: GuidanceWeights, h: Heatmap, g: TokenGrid) -> TokenGrid:
    """Fuse heatmap guidance into the token grid, preserving its dimensions."""
    if w.dim_t != g.dim:
        raise ConfigError(
            f"weights expect token dim {w.dim_t}, grid has dim {g.dim}"
        )
    f_h = encode_heatmap(w, h, g.grid_w, g.grid_h)
    f_tx = _tokens_to_map(g.tokens, g.grid_w, g.grid_h)
    x = np.concatenate([f_h, f_tx], axis=0)
    for layer in w.cnn2:
        x = conv_forward(layer, x)
    return TokenGrid(_map_to_tokens(x), g.grid_w, g.grid_h)


def fuse_backward(
    w: GuidanceWeights, h: Heatmap, g: TokenGrid, grad_out: TokenGrid
):
    """Exact gradients of fuse w.r.t. weights and input tokens.

    The heatmap is treated as a constant. Returns (GuidanceGradients,
    grad_tokens: TokenGrid).
    """
    if w.dim_t != g.dim:
        raise ConfigError(
            f"weights expect token dim {w.dim_t}, grid has dim {g.dim}"
        )
    if (grad_out.grid_w, grad_out.grid_h, grad_out.dim) != (
        g.grid_w,
        g.grid_h,
        g.dim,
    ):
        raise ShapeError("grad_out dims must match the input grid")
    if not h.normalized:
        raise ConfigError("heatmap must be normalized before encoding")

    # forward, caching every layer input
    x1 = bilinear_resize(h.values, g.grid_w, g.grid_h)[None, :, :]
    inputs1 = []
    x = x1
    for layer in w.cnn1:
        inputs1.append(x)
        x = conv_forward(layer, x)
    f_h = x
    f_tx = _tokens_to_map(g.tokens, g.grid_w, g.grid_h)
    inputs2 = []
    x = np.concatenate([f_h, f_tx], axis=0)
    for layer in w.cnn2:
        inputs2.append(x)
        x = conv_forward(layer, x)

    grad = _tokens_to_map(grad_out.tokens, g.grid_w, g.grid_h)
    grads2 = [None, None, None]
    for i in (2, 1, 0):
        grad, gk, gb = conv_backward(w.cnn2[i], inputs2[i], grad)
        grads2[i] = (gk, gb)
    grad_fh = grad[:HEATMAP_CHANNELS]
    grad_tokens_map = grad[HEATMAP_CHANNELS:]
    grads1 = [None, None, None]
    grad = grad_fh
    for i in (2, 1, 0):
        grad, gk, gb = conv_backward(w.cnn1[i], inputs1[i], grad)
        grads1[i] = (gk, gb)

    grad_tokens = TokenGrid(_map_to_tokens(grad_tokens_map), g.grid_w, g.grid_h)
    return GuidanceGradients(tuple(grads1), tuple(grads2)), grad_tokens


def fuse_preactivation_margin(w: GuidanceWeights, h: Heatmap, g: TokenGrid) -> float:
    """Smallest |preactivation| across both stacks' rectified layers.

    Finite-difference checks reject configurations with small margins, so the
    perturbed evaluations never cross a rectifier kink.
    """
    x = bilinear_resize(h.values, g.grid_w, g.grid_h)[None, :, :]
    margin = np.inf
    for layer in w.cnn1:
        pre = conv_preactivation(layer, x)
        if layer.activation == ACT_RECTIFY:
            margin = min(margin, float(np.abs(pre).min()))
        x = np.maximum(pre, 0.0) if layer.activation == ACT_RECTIFY else pre
    f_tx = _tokens_to_map(g.tokens, g.grid_w, g.grid_h)
    x = np.concatenate([x, f_tx], axis=0)
    for layer in w.cnn2:
        pre = conv_preactivation(layer, x)
        if layer.activation == ACT_RECTIFY:
            margin = min(margin, float(np.abs(pre).min()))
        x = np.maximum(pre, 0.0) if layer.activation == ACT_RECTIFY else pre
    return margin


def weights_to_bytes(w: GuidanceWeights) -> bytes:
    parts = [
        MAGIC_WEIGHTS,
        _wire.u32(1),
        _wire.u32(w.dim_t),
        _wire.u32(w.init_seed),
        _wire.u32(len(w.layers)),
    ]
    for layer in w.layers:
        parts.append(_wire.u32(layer.in_channels))
        parts.append(_wire.u32(layer.out_channels))
    for layer in w.layers:
        parts.append(_wire.f64_bytes(layer.kernel))
        parts.append(_wire.f64_bytes(layer.bias))
    return b"".join(parts)


def save_weights(w: GuidanceWeights, path) -> None:
    Path(path).write_bytes(weights_to_bytes(w))


def weights_from_bytes(data: bytes) -> GuidanceWeights:
    r = _wire.Reader(data)
    r.magic(MAGIC_WEIGHTS)
    r.version()
    dim_t = r.u32()
    init_seed = r.u32()
    n_layers = r.u32()
    if dim_t < 1:
        raise ConfigError(f"stored dim_t must be positive, got {dim_t}")
    if n_layers != 6:
        raise ConfigError(f"expected 6 layers, header says {n_layers}")
    pairs = [(r.u32(), r.u32()) for _ in range(6)]
    expected = list(zip(CNN1_CHANNELS[:-1], CNN1_CHANNELS[1:])) + list(
        zip(cnn2_channels(dim_t)[:-1], cnn2_channels(dim_t)[1:])
    )
    if pairs != expected:
        raise ConfigError(
            f"stored channel schedule {pairs} does not match dim_t={dim_t}"
        )
    acts = _stack_activations()
    layers = []
    for i, (c_in, c_out) in enumerate(pairs):
        kernel = r.f64_array(c_out * c_in * 9, "kernel").reshape(c_out, c_in, 3, 3)
        bias = r.f64_array(c_out, "bias")
        layers.append(ConvLayer(kernel, bias, acts[i % 3]))
    r.done()
    return GuidanceWeights(tuple(layers[:3]), tuple(layers[3:]), init_seed)


def load_weights(path) -> GuidanceWeights:
    return weights_from_bytes(Path(path).read_bytes())
