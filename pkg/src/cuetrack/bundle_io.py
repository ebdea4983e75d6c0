"""Binary interchange formats decoupling the pipeline from its feature sources.

CTFB carries an aligned grounding bundle (text tokens plus multi-scale image
tokens); CTTG carries a tracker's search-token grid. Both are little-endian,
32-bit floats on disk, validated field by field on read. Ground-truth and
prediction boxes for evaluation travel as line-delimited text records.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _wire
from .errors import LayoutError, NonFiniteValueError, ShapeError

MAGIC_BUNDLE = b"CTFB"
MAGIC_TOKEN_GRID = b"CTTG"


@dataclass(frozen=True)
class ScaleLayout:
    """Per-scale grid sizes, shallow scale first, with cumulative token spans."""

    sizes: tuple[tuple[int, int], ...]

    def __post_init__(self):
        sizes = tuple((int(w), int(h)) for w, h in self.sizes)
        if len(sizes) < 1:
            raise LayoutError("layout needs at least one scale")
        for w, h in sizes:
            if w < 1 or h < 1:
                raise LayoutError(f"scale dims must be positive, got {w}x{h}")
        object.__setattr__(self, "sizes", sizes)

    @property
    def n_scales(self) -> int:
        return len(self.sizes)

    @property
    def starts(self) -> tuple[int, ...]:
        out, acc = [], 0
        for w, h in self.sizes:
            out.append(acc)
            acc += w * h
        return tuple(out)

    @property
    def ends(self) -> tuple[int, ...]:
        acc, out = 0, []
        for w, h in self.sizes:
            acc += w * h
            out.append(acc)
        return tuple(out)

    @property
    def total_tokens(self) -> int:
        return self.ends[-1]

    def span(self, k: int) -> tuple[int, int]:
        """Start/end token indices of scale k (1-based)."""
        if not 1 <= k <= self.n_scales:
            raise ShapeError(f"scale {k} outside 1..{self.n_scales}")
        return self.starts[k - 1], self.ends[k - 1]


def _finite(name: str, a: np.ndarray) -> None:
    if not np.all(np.isfinite(a)):
        raise NonFiniteValueError(f"non-finite values in {name}")


@dataclass(frozen=True)
class FeatureBundle:
    """Aligned grounding features: text tokens plus concatenated image scales.

    Rows of text_tokens at index >= valid_text are padding and must be zero.
    """

    text_tokens: np.ndarray
    valid_text: int
    layout: ScaleLayout
    image_tokens: np.ndarray

    def __post_init__(self):
        text = np.asarray(self.text_tokens, dtype=np.float64)
        image = np.asarray(self.image_tokens, dtype=np.float64)
        if text.ndim != 2 or image.ndim != 2:
            raise ShapeError("token matrices must be 2-D")
        if text.shape[1] != image.shape[1]:
            raise ShapeError(
                f"text dim {text.shape[1]} != image dim {image.shape[1]}"
            )
        if text.shape[1] < 1:
            raise LayoutError("feature dimensionality must be positive")
        if not 1 <= self.valid_text <= text.shape[0]:
            raise LayoutError(
                f"valid_text={self.valid_text} outside 1..{text.shape[0]}"
            )
        if image.shape[0] != self.layout.total_tokens:
            raise LayoutError(
                f"image rows {image.shape[0]} != layout total {self.layout.total_tokens}"
            )
        _finite("text tokens", text)
        _finite("image tokens", image)
        if np.any(text[self.valid_text :] != 0.0):
            raise LayoutError("padding rows beyond valid_text must be zero")
        object.__setattr__(self, "text_tokens", text)
        object.__setattr__(self, "image_tokens", image)

    @property
    def dim_g(self) -> int:
        return self.text_tokens.shape[1]

    @property
    def n_scales(self) -> int:
        return self.layout.n_scales


def slice_scale(b: FeatureBundle, k: int) -> np.ndarray:
    """Image-token rows of scale k (1-based), in layout order."""
    start, end = b.layout.span(k)
    return b.image_tokens[start:end]


@dataclass(frozen=True)
class TokenGrid:
    """Search tokens with an implicit row-major 2-D layout.

    Token i sits at grid cell (i // grid_w, i % grid_w).
    """

    tokens: np.ndarray
    grid_w: int
    grid_h: int

    def __post_init__(self):
        t = np.asarray(self.tokens, dtype=np.float64)
        if t.ndim != 2:
            raise ShapeError("tokens must be 2-D")
        if self.grid_w < 1 or self.grid_h < 1:
            raise LayoutError(f"grid dims must be positive, got {self.grid_w}x{self.grid_h}")
        if t.shape[0] != self.grid_w * self.grid_h:
            raise ShapeError(
                f"token count {t.shape[0]} != {self.grid_w}x{self.grid_h}"
            )
        if t.shape[1] < 1:
            raise LayoutError("token dimensionality must be positive")
        _finite("tokens", t)
        object.__setattr__(self, "tokens", t)

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]

    @property
    def n_tokens(self) -> int:
        return self.tokens.shape[0]


def write_bundle(b: FeatureBundle, path) -> None:
    parts = [
        MAGIC_BUNDLE,
        _wire.u32(1),
        _wire.u32(b.dim_g),
        _wire.u32(b.text_tokens.shape[0]),
        _wire.u32(b.valid_text),
        _wire.u32(b.layout.n_scales),
    ]
    for w, h in b.layout.sizes:
        parts.append(_wire.u32(w))
        parts.append(_wire.u32(h))
    parts.append(_wire.f32_bytes(b.text_tokens))
    parts.append(_wire.f32_bytes(b.image_tokens))
    Path(path).write_bytes(b"".join(parts))


def read_bundle(path) -> FeatureBundle:
    r = _wire.Reader(Path(path).read_bytes())
    r.magic(MAGIC_BUNDLE)
    r.version()
    dim_g = r.u32()
    l_gl = r.u32()
    valid_text = r.u32()
    n_scales = r.u32()
    if dim_g < 1 or l_gl < 1:
        raise LayoutError(f"bad dims: dim={dim_g}, text tokens={l_gl}")
    if not 1 <= valid_text <= l_gl:
        raise LayoutError(f"valid_text={valid_text} outside 1..{l_gl}")
    if n_scales < 1:
        raise LayoutError("scale count must be positive")
    sizes = []
    for _ in range(n_scales):
        w = r.u32()
        h = r.u32()
        if w < 1 or h < 1:
            raise LayoutError(f"scale dims must be positive, got {w}x{h}")
        sizes.append((w, h))
    layout = ScaleLayout(tuple(sizes))
    text = r.f32_array(l_gl * dim_g, "text tokens").reshape(l_gl, dim_g)
    expected = layout.total_tokens * dim_g * 4
    if r.remaining < expected:
        raise _truncated(expected, r.remaining, "image tokens")
    if r.remaining > expected:
        raise LayoutError(
            f"image payload holds more tokens than the layout's E_K={layout.total_tokens}"
        )
    image = r.f32_array(layout.total_tokens * dim_g, "image tokens").reshape(
        layout.total_tokens, dim_g
    )
    r.done()
    return FeatureBundle(text, valid_text, layout, image)


def _truncated(expected: int, remaining: int, what: str):
    from .errors import TruncatedPayloadError

    return TruncatedPayloadError(
        f"{what}: need {expected} bytes, only {remaining} left"
    )


def write_token_grid(g: TokenGrid, path) -> None:
    parts = [
        MAGIC_TOKEN_GRID,
        _wire.u32(1),
        _wire.u32(g.dim),
        _wire.u32(g.grid_w),
        _wire.u32(g.grid_h),
        _wire.f32_bytes(g.tokens),
    ]
    Path(path).write_bytes(b"".join(parts))


def read_token_grid(path) -> TokenGrid:
    r = _wire.Reader(Path(path).read_bytes())
    r.magic(MAGIC_TOKEN_GRID)
    r.version()
    dim = r.u32()
    grid_w = r.u32()
    grid_h = r.u32()
    if dim < 1 or grid_w < 1 or grid_h < 1:
        raise LayoutError(f"bad dims: D={dim}, grid={grid_w}x{grid_h}")
    expected = grid_w * grid_h * dim * 4
    if r.remaining < expected:
        raise _truncated(expected, r.remaining, "token payload")
    if r.remaining > expected:
        raise LayoutError("token payload longer than grid_w x grid_h x D")
    tokens = r.f32_array(grid_w * grid_h * dim, "tokens").reshape(
        grid_w * grid_h, dim
    )
    r.done()
    return TokenGrid(tokens, grid_w, grid_h)


def write_boxes(path, boxes) -> None:
    """Write `frame_index x y w h` lines; floats use repr for exact round trips."""
    lines = []
    for frame, (x, y, w, h) in boxes:
        lines.append(
            f"{int(frame)} {float(x)!r} {float(y)!r} {float(w)!r} {float(h)!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_boxes(path):
    out = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5:
            raise LayoutError(f"box record needs 5 fields, got {len(parts)}: {line!r}")
        frame = int(parts[0])
        x, y, w, h = (float(p) for p in parts[1:])
        out.append((frame, (x, y, w, h)))
    return out
