"""Desk-scale verification rig: planted-target sequences and a mock tracker.

Each synthetic sequence plants a text-aligned feature block inside the
scale-1 grid of a grounding bundle (deeper scales are pure noise) and renders
a matching video frame containing the target plus visually identical
distractor blobs. Only the grounding features identify which blob the text
means, so textual-cue strategies separate cleanly:

  no_text          tokens go straight to the prediction head
  direct_text      one cross-attention read of the text tokens by the grid
                   tokens, with trained projections
  naive_map        normalized scale-1 attention map fused via guidance
  refined_heatmap  Gram-refined map fused via guidance

The prediction head is a soft-argmax over a trained 1-channel score
projection; it emits a box center in grid coordinates with a fixed box size.
Everything is deterministic in the spec seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import _wire
from .bundle_io import FeatureBundle, ScaleLayout, TokenGrid, read_boxes, write_boxes
from .cue_mapping import Heatmap, map_textual_cue
from .errors import ConfigError, LayoutError, TrainingError
from .guidance import (
    GuidanceWeights,
    fuse,
    fuse_backward,
    init_weights,
    weights_from_bytes,
    weights_to_bytes,
)

FRAME_PX = 256
ATTN_DIM = 16

STRATEGY_NO_TEXT = "no_text"
STRATEGY_DIRECT = "direct_text"
STRATEGY_NAIVE = "naive_map"
STRATEGY_REFINED = "refined_heatmap"
STRATEGIES = (STRATEGY_NO_TEXT, STRATEGY_DIRECT, STRATEGY_NAIVE, STRATEGY_REFINED)
_HEATMAP_STRATEGIES = (STRATEGY_NAIVE, STRATEGY_REFINED)

# frozen evaluation-suite constants: ordering assertions are reproducible
# only if these never move
EVAL_SUITE_SEED = 1000
EVAL_SUITE_SIZE = 200

_SEQ_TAG = 101
_FRAME_TAG = 202
_ATTN_TAG = 303
_ENC_SEED = 7
_PATTERN_SEED = 11
_TRAIN_SEED_BASE = 10_000_000
_VAL_SEED_BASE = 20_000_000
_PROBE_SEED_BASE = 15_000_000

MAGIC_STRATEGY_WEIGHTS = b"CTSW"


@dataclass(frozen=True)
class SyntheticSpec:
    """Generator knobs; defaults define the acceptance-suite distribution."""

    seed: int = 0
    scales: tuple = ((32, 32), (16, 16), (8, 8), (4, 4))
    dim_g: int = 64
    dim_t: int = 64
    tracker_grid: tuple = (16, 16)
    n_text: int = 4
    rect: tuple = (4, 4, 8, 8)
    signal_mu: float = 4.0
    noise_sigma: float = 1.0
    frames: int = 12
    n_distractors: int = 2
    texture_amp: float = 0.3
    render_noise: float = 0.1

    def __post_init__(self):
        if len(self.scales) < 1:
            raise ConfigError("need at least one scale")
        w1, h1 = self.scales[0]
        x, y, w, h = self.rect
        if w < 1 or h < 1 or x < 0 or y < 0 or x + w > w1 or y + h > h1:
            raise ConfigError(f"rect {self.rect} outside scale-1 grid {w1}x{h1}")
        if self.signal_mu <= 0:
            raise ConfigError("signal_mu must be positive")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")
        if self.n_text < 1 or self.dim_g < 1 or self.dim_t < 1:
            raise ConfigError("dims and text token count must be positive")
        if self.frames < 1:
            raise ConfigError("frames must be positive")
        gw, gh = self.tracker_grid
        if FRAME_PX % gw or FRAME_PX % gh:
            raise ConfigError(f"tracker grid {gw}x{gh} must divide {FRAME_PX}")

    @property
    def layout(self) -> ScaleLayout:
        return ScaleLayout(tuple(self.scales))

    @property
    def cell_px(self) -> tuple[float, float]:
        w1, h1 = self.scales[0]
        return FRAME_PX / w1, FRAME_PX / h1

    @property
    def box_size_px(self) -> tuple[float, float]:
        sx, sy = self.cell_px
        return self.rect[2] * sx, self.rect[3] * sy


def _unit_direction(rng, dim: int) -> np.ndarray:
    """Sparse random direction with exactly unit norm in float64.

    Four entries of +-1/2 (or one of +-1 when dim < 4) make dot products with
    the planted signal exactly representable, so the sigma -> 0 construction
    is exact rather than merely close.
    """
    k = 4 if dim >= 4 else 1
    out = np.zeros(dim)
    idx = rng.choice(dim, size=k, replace=False)
    signs = 2.0 * rng.integers(0, 2, size=k) - 1.0
    out[idx] = signs * (0.5 if k == 4 else 1.0)
    return out


def _dyadic_velocity(rng) -> float:
    # eighth-cell magnitudes keep closed-form positions exact in float64
    mag = int(rng.integers(3, 10)) / 8.0
    sign = 1.0 if int(rng.integers(0, 2)) else -1.0
    return sign * mag


@dataclass(frozen=True)
class _World:
    """Per-sequence draws: text direction, trajectories, blob textures."""

    t_dir: np.ndarray
    target_vel: tuple
    distractors: tuple  # ((x0, y0, vx, vy, texture_dir), ...)


def _world(spec: SyntheticSpec) -> _World:
    rng = np.random.default_rng((spec.seed, _SEQ_TAG))
    t_dir = _unit_direction(rng, spec.dim_g)
    vel = (_dyadic_velocity(rng), _dyadic_velocity(rng))
    w1, h1 = spec.scales[0]
    _, _, rw, rh = spec.rect
    span_x, span_y = w1 - rw, h1 - rh
    distractors = []
    for _ in range(spec.n_distractors):
        x0 = int(rng.integers(0, span_x + 1)) if span_x > 0 else 0
        y0 = int(rng.integers(0, span_y + 1)) if span_y > 0 else 0
        dvel = (_dyadic_velocity(rng), _dyadic_velocity(rng))
        tex = _unit_direction(rng, spec.dim_g)
        distractors.append((x0, y0, dvel[0], dvel[1], tex))
    return _World(t_dir, vel, tuple(distractors))


def _fold(u: float, span: int) -> float:
    """Reflect position u into [0, span] (constant-velocity bouncing)."""
    if span <= 0:
        return 0.0
    period = 2.0 * span
    m = math.fmod(u, period)
    if m < 0.0:
        m += period
    return m if m <= span else period - m


def _rect_cells(spec: SyntheticSpec, world: _World, frame: int) -> tuple:
    x0, y0, rw, rh = spec.rect
    w1, h1 = spec.scales[0]
    px = _fold(x0 + world.target_vel[0] * frame, w1 - rw)
    py = _fold(y0 + world.target_vel[1] * frame, h1 - rh)
    return int(math.floor(px + 0.5)), int(math.floor(py + 0.5)), rw, rh


def _distractor_cells(spec: SyntheticSpec, d, frame: int) -> tuple:
    x0, y0, vx, vy, _ = d
    w1, h1 = spec.scales[0]
    _, _, rw, rh = spec.rect
    px = _fold(x0 + vx * frame, w1 - rw)
    py = _fold(y0 + vy * frame, h1 - rh)
    return int(math.floor(px + 0.5)), int(math.floor(py + 0.5)), rw, rh


@lru_cache(maxsize=16)
def _texture_basis(pix_h: int, pix_w: int, dim_g: int) -> np.ndarray:
    rng = np.random.default_rng((_PATTERN_SEED, pix_h, pix_w, dim_g))
    return rng.standard_normal((pix_h * pix_w, dim_g))


@lru_cache(maxsize=16)
def _encoder_matrix(patch_pixels: int, dim_t: int) -> np.ndarray:
    rng = np.random.default_rng((_ENC_SEED, patch_pixels, dim_t))
    return rng.standard_normal((patch_pixels, dim_t)) / math.sqrt(patch_pixels)


def _paint_blob(img, spec, cells, direction):
    sx, sy = spec.cell_px
    cx, cy, rw, rh = cells
    x0 = int(round(cx * sx))
    y0 = int(round(cy * sy))
    pw = int(round(rw * sx))
    ph = int(round(rh * sy))
    pattern = (_texture_basis(ph, pw, spec.dim_g) @ direction).reshape(ph, pw)
    img[y0 : y0 + ph, x0 : x0 + pw] = 1.0 + spec.texture_amp * pattern


def _encode_frame(spec: SyntheticSpec, img: np.ndarray) -> TokenGrid:
    gw, gh = spec.tracker_grid
    ph, pw = FRAME_PX // gh, FRAME_PX // gw
    patches = (
        img.reshape(gh, ph, gw, pw).transpose(0, 2, 1, 3).reshape(gh * gw, ph * pw)
    )
    tokens = patches @ _encoder_matrix(ph * pw, spec.dim_t)
    return TokenGrid(tokens, gw, gh)


def generate_bundle(spec: SyntheticSpec, frame_index: int):
    """One frame: (FeatureBundle, TokenGrid, ground-truth box in pixels).

    Draw order is fixed (text noise, per-scale feature noise shallow to deep,
    render noise) so frames are bit-reproducible.
    """
    world = _world(spec)
    target = _rect_cells(spec, world, frame_index)
    rng = np.random.default_rng((spec.seed, _FRAME_TAG, frame_index))
    t = world.t_dir
    sigma = spec.noise_sigma

    text = t[None, :] + (sigma / 4.0) * rng.standard_normal(
        (spec.n_text, spec.dim_g)
    )

    w1, h1 = spec.scales[0]
    cx, cy, rw, rh = target
    cols = np.arange(w1)
    rows = np.arange(h1)
    inside = (
        ((cols >= cx) & (cols < cx + rw))[None, :]
        & ((rows >= cy) & (rows < cy + rh))[:, None]
    ).reshape(-1)
    noise1 = rng.standard_normal((w1 * h1, spec.dim_g))
    signal_rows = spec.signal_mu * t[None, :] + sigma * noise1
    ortho_rows = sigma * (noise1 - np.outer(noise1 @ t, t))
    per_scale = [np.where(inside[:, None], signal_rows, ortho_rows)]
    for wk, hk in spec.scales[1:]:
        per_scale.append(sigma * rng.standard_normal((wk * hk, spec.dim_g)))
    bundle = FeatureBundle(
        text, spec.n_text, spec.layout, np.concatenate(per_scale, axis=0)
    )

    img = spec.render_noise * rng.standard_normal((FRAME_PX, FRAME_PX))
    for d in world.distractors:
        _paint_blob(img, spec, _distractor_cells(spec, d, frame_index), d[4])
    _paint_blob(img, spec, target, t)
    grid = _encode_frame(spec, img)

    sx, sy = spec.cell_px
    gt_box = (cx * sx, cy * sy, rw * sx, rh * sy)
    return bundle, grid, gt_box


# --- mock tracker -----------------------------------------------------------


@dataclass(frozen=True)
class HeadWeights:
    w: np.ndarray
    b: float


@dataclass(frozen=True)
class AttnWeights:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray


@dataclass(frozen=True)
class StrategyWeights:
    """Everything one strategy needs at inference time."""

    strategy: str
    head: HeadWeights
    guidance: GuidanceWeights | None = None
    attn: AttnWeights | None = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.strategy in _HEATMAP_STRATEGIES and self.guidance is None:
            raise ConfigError(f"{self.strategy} needs guidance weights")
        if self.strategy == STRATEGY_DIRECT and self.attn is None:
            raise ConfigError("direct_text needs attention weights")


def init_strategy_weights(spec: SyntheticSpec, strategy: str, seed: int) -> StrategyWeights:
    head = HeadWeights(np.zeros(spec.dim_t), 0.0)
    guidance = attn = None
    if strategy in _HEATMAP_STRATEGIES:
        guidance = init_weights(spec.dim_t, seed)
    elif strategy == STRATEGY_DIRECT:
        rng = np.random.default_rng((seed, _ATTN_TAG))
        wq = rng.standard_normal((spec.dim_t, ATTN_DIM)) / math.sqrt(spec.dim_t)
        wk = rng.standard_normal((spec.dim_g, ATTN_DIM)) / math.sqrt(spec.dim_g)
        # zero value projection: training starts from the no_text behavior
        wv = np.zeros((spec.dim_g, spec.dim_t))
        attn = AttnWeights(wq, wk, wv)
    return StrategyWeights(strategy, head, guidance, attn)


def _attn_forward(tokens, text, valid, aw: AttnWeights):
    tv = text[:valid]
    q = tokens @ aw.wq
    k = tv @ aw.wk
    v = tv @ aw.wv
    logits = (q @ k.T) / math.sqrt(aw.wq.shape[1])
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    a = e / e.sum(axis=1, keepdims=True)
    out = a @ v
    return out, (tv, q, k, v, a)


def _attn_backward(grad_out, tokens, cache, aw: AttnWeights):
    tv, q, k, v, a = cache
    scale = 1.0 / math.sqrt(aw.wq.shape[1])
    d_v = a.T @ grad_out
    d_a = grad_out @ v.T
    d_logits = a * (d_a - (d_a * a).sum(axis=1, keepdims=True))
    d_q = (d_logits @ k) * scale
    d_k = (d_logits.T @ q) * scale
    d_wq = tokens.T @ d_q
    d_wk = tv.T @ d_k
    d_wv = tv.T @ d_v
    return d_wq, d_wk, d_wv


def _grid_positions(gw: int, gh: int):
    idx = np.arange(gw * gh)
    return (idx % gw) + 0.5, (idx // gw) + 0.5


def _head_forward(tokens, head: HeadWeights, gw: int, gh: int):
    score = tokens @ head.w + head.b
    z = score - score.max()
    p = np.exp(z)
    p /= p.sum()
    cols, rows = _grid_positions(gw, gh)
    return (float(p @ cols), float(p @ rows)), (score, p)


def _head_backward(d_center, tokens, cache, head: HeadWeights, gw: int, gh: int):
    _, p = cache
    cols, rows = _grid_positions(gw, gh)
    dp = d_center[0] * cols + d_center[1] * rows
    d_score = p * (dp - float(dp @ p))
    d_w = tokens.T @ d_score
    d_b = float(d_score.sum())
    d_tokens = np.outer(d_score, head.w)
    return d_tokens, d_w, d_b


def _huber(d: float):
    a = abs(d)
    if a < 1.0:
        return 0.5 * d * d, d
    return a - 0.5, math.copysign(1.0, d)


def compute_cue(weights: StrategyWeights, bundle, grid):
    """Strategy-specific textual-cue product; reusable across frames."""
    if weights.strategy == STRATEGY_NO_TEXT:
        return None
    if weights.strategy == STRATEGY_DIRECT:
        out, _ = _attn_forward(
            grid.tokens, bundle.text_tokens, bundle.valid_text, weights.attn
        )
        return out
    return map_textual_cue(
        bundle, refine_map=(weights.strategy == STRATEGY_REFINED)
    )


def strategy_tokens(weights: StrategyWeights, grid, cue):
    """Effective tokens fed to the head, given a (possibly stale) cue."""
    if weights.strategy == STRATEGY_NO_TEXT:
        return grid.tokens
    if weights.strategy == STRATEGY_DIRECT:
        return grid.tokens + cue
    return fuse(weights.guidance, cue, grid).tokens


def predict_box(spec: SyntheticSpec, weights: StrategyWeights, tokens):
    gw, gh = spec.tracker_grid
    (cx_cells, cy_cells), _ = _head_forward(tokens, weights.head, gw, gh)
    cell_w, cell_h = FRAME_PX / gw, FRAME_PX / gh
    bw, bh = spec.box_size_px
    return (cx_cells * cell_w - bw / 2.0, cy_cells * cell_h - bh / 2.0, bw, bh)


@dataclass(frozen=True)
class TrackRecord:
    frames: tuple[int, ...]
    pred: tuple
    gt: tuple

    def pairs(self):
        return list(zip(self.pred, self.gt))

    def write(self, pred_path, gt_path):
        write_boxes(pred_path, zip(self.frames, self.pred))
        write_boxes(gt_path, zip(self.frames, self.gt))


def read_track_record(pred_path, gt_path) -> TrackRecord:
    pred = read_boxes(pred_path)
    gt = read_boxes(gt_path)
    if [f for f, _ in pred] != [f for f, _ in gt]:
        raise LayoutError("prediction and ground-truth frame indices differ")
    return TrackRecord(
        tuple(f for f, _ in pred),
        tuple(b for _, b in pred),
        tuple(b for _, b in gt),
    )


def run_tracker(
    spec: SyntheticSpec, strategy: str, weights: StrategyWeights | None, cadence: int = 1
) -> TrackRecord:
    """Track one synthetic sequence.

    The textual-cue product is recomputed on frames where
    frame_index % cadence == 0 and reused in between.
    """
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy!r}")
    if strategy != STRATEGY_NO_TEXT and weights is None:
        raise ConfigError(f"{strategy} requires trained weights")
    if weights is None:
        weights = init_strategy_weights(spec, STRATEGY_NO_TEXT, 0)
    if weights.strategy != strategy:
        raise ConfigError(
            f"weights were trained for {weights.strategy!r}, not {strategy!r}"
        )
    if cadence < 1:
        raise ConfigError("cadence must be >= 1")
    frames, preds, gts = [], [], []
    cue = None
    for f in range(spec.frames):
        bundle, grid, gt_box = generate_bundle(spec, f)
        if strategy != STRATEGY_NO_TEXT and f % cadence == 0:
            cue = compute_cue(weights, bundle, grid)
        tokens = strategy_tokens(weights, grid, cue)
        preds.append(predict_box(spec, weights, tokens))
        gts.append(gt_box)
        frames.append(f)
    return TrackRecord(tuple(frames), tuple(preds), tuple(gts))


# --- training ---------------------------------------------------------------


def _pack_strategy(sw: StrategyWeights) -> np.ndarray:
    parts = [sw.head.w, np.array([sw.head.b])]
    if sw.strategy == STRATEGY_DIRECT:
        parts += [sw.attn.wq.ravel(), sw.attn.wk.ravel(), sw.attn.wv.ravel()]
    elif sw.strategy in _HEATMAP_STRATEGIES:
        parts.append(sw.guidance.pack())
    return np.concatenate(parts)


def _unpack_strategy(sw: StrategyWeights, vec: np.ndarray) -> StrategyWeights:
    d = sw.head.w.size
    head = HeadWeights(vec[:d].copy(), float(vec[d]))
    pos = d + 1
    if sw.strategy == STRATEGY_DIRECT:
        shapes = [sw.attn.wq.shape, sw.attn.wk.shape, sw.attn.wv.shape]
        arrs = []
        for shape in shapes:
            n = int(np.prod(shape))
            arrs.append(vec[pos : pos + n].reshape(shape).copy())
            pos += n
        return StrategyWeights(sw.strategy, head, None, AttnWeights(*arrs))
    if sw.strategy in _HEATMAP_STRATEGIES:
        return StrategyWeights(
            sw.strategy, head, sw.guidance.with_packed(vec[pos:]), None
        )
    return StrategyWeights(sw.strategy, head)


def _loss_and_grad(spec, sw: StrategyWeights, bundle, grid, gt_box):
    gw, gh = spec.tracker_grid
    cell_w, cell_h = FRAME_PX / gw, FRAME_PX / gh
    cue = compute_cue(sw, bundle, grid)
    tokens = strategy_tokens(sw, grid, cue)
    (cx, cy), hcache = _head_forward(tokens, sw.head, gw, gh)
    gx = (gt_box[0] + gt_box[2] / 2.0) / cell_w
    gy = (gt_box[1] + gt_box[3] / 2.0) / cell_h
    lx, dx = _huber(cx - gx)
    ly, dy = _huber(cy - gy)
    d_tokens, d_w, d_b = _head_backward((dx, dy), tokens, hcache, sw.head, gw, gh)
    parts = [d_w, np.array([d_b])]
    if sw.strategy == STRATEGY_DIRECT:
        _, cache = _attn_forward(
            grid.tokens, bundle.text_tokens, bundle.valid_text, sw.attn
        )
        d_wq, d_wk, d_wv = _attn_backward(d_tokens, grid.tokens, cache, sw.attn)
        parts += [d_wq.ravel(), d_wk.ravel(), d_wv.ravel()]
    elif sw.strategy in _HEATMAP_STRATEGIES:
        grads, _ = fuse_backward(
            sw.guidance, cue, grid, TokenGrid(d_tokens, gw, gh)
        )
        parts.append(grads.pack())
    return lx + ly, np.concatenate(parts)


def _frame_loss(spec, sw: StrategyWeights, bundle, grid, gt_box) -> float:
    gw, gh = spec.tracker_grid
    cell_w, cell_h = FRAME_PX / gw, FRAME_PX / gh
    cue = compute_cue(sw, bundle, grid)
    tokens = strategy_tokens(sw, grid, cue)
    (cx, cy), _ = _head_forward(tokens, sw.head, gw, gh)
    gx = (gt_box[0] + gt_box[2] / 2.0) / cell_w
    gy = (gt_box[1] + gt_box[3] / 2.0) / cell_h
    return _huber(cx - gx)[0] + _huber(cy - gy)[0]


@dataclass
class TrainResult:
    weights: StrategyWeights
    train_curve: list[float] = field(default_factory=list)
    val_curve: list[float] = field(default_factory=list)
    best_epoch: int = 0


def _mean_loss(spec, sw: StrategyWeights, frames) -> float:
    losses = [
        _frame_loss(spec, sw, bundle, grid, gt_box)
        for bundle, grid, gt_box in frames
    ]
    return float(np.mean(losses))


def train_guidance(
    spec: SyntheticSpec,
    strategy: str,
    epochs: int = 5,
    lr: float = 2e-3,
    seed: int = 0,
    steps_per_epoch: int = 300,
    val_sequences: int = 8,
    probe_frames: int = 48,
    weight_decay: float = 1e-4,
    progress=None,
) -> TrainResult:
    """Deterministic single-sample AdamW over generated frames.

    Training sequences use seeds disjoint from the frozen evaluation suite.
    train_curve holds the post-epoch mean loss on a fixed probe drawn from
    the training distribution; the returned weights are the snapshot from the
    best-validation epoch.
    """
    if epochs < 1:
        raise TrainingError("epochs must be >= 1")
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy!r}")
    sw = init_strategy_weights(spec, strategy, seed)
    vec = _pack_strategy(sw)
    m = np.zeros_like(vec)
    v = np.zeros_like(vec)
    b1, b2, eps = 0.9, 0.999, 1e-8
    t = 0
    result = TrainResult(weights=sw)
    best_val = math.inf
    probe = [
        generate_bundle(replace(spec, seed=_PROBE_SEED_BASE + i), i % spec.frames)
        for i in range(probe_frames)
    ]
    val_frames = [
        generate_bundle(replace(spec, seed=_VAL_SEED_BASE + i), f)
        for i in range(val_sequences)
        for f in range(spec.frames)
    ]
    for epoch in range(epochs):
        for step in range(steps_per_epoch):
            seq_seed = _TRAIN_SEED_BASE + epoch * 100_000 + step
            sspec = replace(spec, seed=seq_seed)
            frame = (epoch * steps_per_epoch + step) % spec.frames
            bundle, grid, gt_box = generate_bundle(sspec, frame)
            cur = _unpack_strategy(sw, vec)
            loss, grad = _loss_and_grad(spec, cur, bundle, grid, gt_box)
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, step {step}: {loss}"
                )
            t += 1
            m = b1 * m + (1.0 - b1) * grad
            v = b2 * v + (1.0 - b2) * grad * grad
            mhat = m / (1.0 - b1**t)
            vhat = v / (1.0 - b2**t)
            vec = vec - lr * (mhat / (np.sqrt(vhat) + eps) + weight_decay * vec)
        cur = _unpack_strategy(sw, vec)
        result.train_curve.append(_mean_loss(spec, cur, probe))
        val = _mean_loss(spec, cur, val_frames) if val_frames else result.train_curve[-1]
        result.val_curve.append(val)
        if val < best_val:
            best_val = val
            result.weights = cur
            result.best_epoch = epoch
        if progress is not None:
            progress(epoch, result.train_curve[-1], val)
    return result


# --- evaluation suite -------------------------------------------------------


def eval_suite_specs(
    spec: SyntheticSpec, size: int = EVAL_SUITE_SIZE, seed: int = EVAL_SUITE_SEED
):
    return [replace(spec, seed=seed + i) for i in range(size)]


def run_suite(spec, strategy, weights, cadence: int = 1, size=EVAL_SUITE_SIZE):
    return [
        run_tracker(s, strategy, weights, cadence)
        for s in eval_suite_specs(spec, size=size)
    ]


def heatmap_hit(spec: SyntheticSpec, heatmap: Heatmap, frame: int, world=None) -> bool:
    """Is the heatmap argmax inside the planted scale-1 rect for this frame?"""
    if world is None:
        world = _world(spec)
    cx, cy, rw, rh = _rect_cells(spec, world, frame)
    r, c = heatmap.argmax_cell()
    return cx <= c < cx + rw and cy <= r < cy + rh


def localization_rates(spec: SyntheticSpec, size=EVAL_SUITE_SIZE):
    """Fraction of suite frames whose refined / naive argmax hits the rect."""
    hits = {STRATEGY_REFINED: 0, STRATEGY_NAIVE: 0}
    total = 0
    for s in eval_suite_specs(spec, size=size):
        world = _world(s)
        for f in range(s.frames):
            bundle, _, _ = generate_bundle(s, f)
            for strat in hits:
                hm = map_textual_cue(bundle, refine_map=(strat == STRATEGY_REFINED))
                hits[strat] += heatmap_hit(s, hm, f, world)
            total += 1
    return hits[STRATEGY_REFINED] / total, hits[STRATEGY_NAIVE] / total


# --- strategy-weight persistence -------------------------------------------

_STRATEGY_IDS = {name: i for i, name in enumerate(STRATEGIES)}


def write_strategy_weights(sw: StrategyWeights, path, dim_g: int | None = None) -> None:
    """Flat deterministic container for a trained strategy (format CTSW)."""
    dim_t = sw.head.w.size
    if sw.strategy == STRATEGY_DIRECT:
        dim_g = sw.attn.wk.shape[0]
    elif dim_g is None:
        dim_g = 0
    parts = [
        MAGIC_STRATEGY_WEIGHTS,
        _wire.u32(1),
        _wire.u32(_STRATEGY_IDS[sw.strategy]),
        _wire.u32(dim_t),
        _wire.u32(dim_g),
        _wire.u32(ATTN_DIM),
        _wire.f64_bytes(sw.head.w),
        _wire.f64_bytes(np.array([sw.head.b])),
    ]
    if sw.strategy == STRATEGY_DIRECT:
        parts += [
            _wire.f64_bytes(sw.attn.wq),
            _wire.f64_bytes(sw.attn.wk),
            _wire.f64_bytes(sw.attn.wv),
        ]
    elif sw.strategy in _HEATMAP_STRATEGIES:
        blob = weights_to_bytes(sw.guidance)
        parts += [_wire.u32(len(blob)), blob]
    Path(path).write_bytes(b"".join(parts))


def read_strategy_weights(path) -> StrategyWeights:
    r = _wire.Reader(Path(path).read_bytes())
    r.magic(MAGIC_STRATEGY_WEIGHTS)
    r.version()
    sid = r.u32()
    dim_t = r.u32()
    dim_g = r.u32()
    d_attn = r.u32()
    if sid >= len(STRATEGIES):
        raise ConfigError(f"unknown strategy id {sid}")
    if dim_t < 1:
        raise ConfigError("stored dim_t must be positive")
    strategy = STRATEGIES[sid]
    head_w = r.f64_array(dim_t, "head weights")
    head_b = float(r.f64_array(1, "head bias")[0])
    head = HeadWeights(head_w, head_b)
    if strategy == STRATEGY_DIRECT:
        wq = r.f64_array(dim_t * d_attn, "wq").reshape(dim_t, d_attn)
        wk = r.f64_array(dim_g * d_attn, "wk").reshape(dim_g, d_attn)
        wv = r.f64_array(dim_g * dim_t, "wv").reshape(dim_g, dim_t)
        r.done()
        return StrategyWeights(strategy, head, None, AttnWeights(wq, wk, wv))
    if strategy in _HEATMAP_STRATEGIES:
        blob_len = r.u32()
        blob = r.take(blob_len)
        r.done()
        guidance = weights_from_bytes(blob)
        if guidance.dim_t != dim_t:
            raise ConfigError("guidance dim_t disagrees with container header")
        return StrategyWeights(strategy, head, guidance, None)
    r.done()
    return StrategyWeights(strategy, head)
