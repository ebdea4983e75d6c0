"""Training-free mapping from aligned text/image features to target heatmaps.

The naive map averages image-token/text-token dot products per grid cell.
The refined map first left-multiplies the scale-1 features by their own Gram
structure, which amplifies coherent (target-like) token blocks and suppresses
isolated background responses, then takes the same text dot product. Both are
deterministic, parameter-free functions of the bundle.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _wire
from .bundle_io import FeatureBundle, slice_scale
from .errors import LayoutError, NonFiniteValueError, ShapeError
from .numerics import matmul, mean_last_dim, reshape_to_2d

MAGIC_HEATMAP = b"CTHM"


@dataclass(frozen=True)
class Heatmap:
    """Single-channel 2-D target distribution map, values indexed [row][col]."""

    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.size == 0:
            raise ShapeError(f"heatmap must be a non-empty 2-D grid, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise NonFiniteValueError("non-finite heatmap values")
        if self.normalized and (v.min() < 0.0 or v.max() > 1.0):
            raise LayoutError("normalized heatmap values must lie in [0, 1]")
        object.__setattr__(self, "values", v)

    @property
    def w(self) -> int:
        return self.values.shape[1]

    @property
    def h(self) -> int:
        return self.values.shape[0]

    def argmax_cell(self) -> tuple[int, int]:
        """(row, col) of the maximum value, first occurrence in row-major order."""
        flat = int(np.argmax(self.values))
        return flat // self.w, flat % self.w


def _raw_map(
    b: FeatureBundle, k: int, refine_features: bool, dtype=np.float64
) -> Heatmap:
    tokens = slice_scale(b, k).astype(dtype, copy=False)
    text = b.text_tokens.astype(dtype, copy=False)
    dots = matmul(tokens, text.T)
    if refine_features:
        gram = matmul(tokens, tokens.T)
        dots = matmul(gram, dots)
    col = mean_last_dim(dots, b.valid_text)
    w, h = b.layout.sizes[k - 1]
    return Heatmap(reshape_to_2d(col, w, h), normalized=False)


def attention_map(b: FeatureBundle, k: int, dtype=np.float64) -> Heatmap:
    """Unnormalized per-scale map: mean text dot product per image token."""
    return _raw_map(b, k, refine_features=False, dtype=dtype)


def refine(b: FeatureBundle, dtype=np.float64) -> Heatmap:
    """Unnormalized refined scale-1 map.

    Computes (f.f^T).(f.l^T) rather than ((f.f^T).f).l^T; the two are
    algebraically identical and the former is cheaper when the text token
    count is far below the feature dimension.
    """
    return _raw_map(b, 1, refine_features=True, dtype=dtype)


def normalize(h: Heatmap) -> Heatmap:
    """Min-max rescale to [0, 1]; a constant map degenerates to all zeros."""
    v = h.values
    span = v.max() - v.min()
    if span <= 0.0:
        return Heatmap(np.zeros_like(v), normalized=True)
    return Heatmap((v - v.min()) / span, normalized=True)


def map_textual_cue(
    b: FeatureBundle,
    scale: int = 1,
    refine_map: bool = True,
    normalize_map: bool = True,
    dtype=np.float64,
) -> Heatmap:
    """Full textual-cue mapping: per-scale map, optional refinement, min-max.

    With refine_map off this is the naive attention-map variant; with both
    defaults on it is the refined target-distribution heatmap.
    """
    out = _raw_map(b, scale, refine_features=refine_map, dtype=dtype)
    if normalize_map:
        out = normalize(out)
    return out


def scale_survey(b: FeatureBundle):
    """Normalized naive map at every scale, shallow first, for inspection."""
    return [(k, normalize(attention_map(b, k))) for k in range(1, b.n_scales + 1)]


def write_heatmap(h: Heatmap, path) -> None:
    parts = [
        MAGIC_HEATMAP,
        _wire.u32(1),
        _wire.u32(h.w),
        _wire.u32(h.h),
        _wire.u8(1 if h.normalized else 0),
        _wire.f32_bytes(h.values),
    ]
    Path(path).write_bytes(b"".join(parts))


def read_heatmap(path) -> Heatmap:
    r = _wire.Reader(Path(path).read_bytes())
    r.magic(MAGIC_HEATMAP)
    r.version()
    w = r.u32()
    h = r.u32()
    if w < 1 or h < 1:
        raise LayoutError(f"heatmap dims must be positive, got {w}x{h}")
    flag = r.u8()
    if flag not in (0, 1):
        raise LayoutError(f"normalized flag must be 0 or 1, got {flag}")
    expected = w * h * 4
    if r.remaining < expected:
        from .errors import TruncatedPayloadError

        raise TruncatedPayloadError(
            f"heatmap payload: need {expected} bytes, only {r.remaining} left"
        )
    if r.remaining > expected:
        raise LayoutError("heatmap payload longer than w x h")
    values = r.f32_array(w * h, "heatmap").reshape(h, w)
    r.done()
    if flag == 1 and (values.min() < 0.0 or values.max() > 1.0):
        raise LayoutError("normalized heatmap payload outside [0, 1]")
    return Heatmap(values, normalized=bool(flag))


def write_heatmap_pgm(h: Heatmap, path) -> None:
    """8-bit binary PGM rendering, round(255 * normalized value).

    Unnormalized maps are min-max rescaled for display only.
    """
    v = h.values if h.normalized else normalize(h).values
    gray = np.floor(255.0 * v + 0.5).astype(np.uint8)
    header = f"P5\n{h.w} {h.h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + gray.tobytes())
