"""One-pass tracking metrics: success curve / AUC, precision, normalized precision.

Boxes are (x, y, w, h) in pixels. The success curve samples 21 IoU thresholds
0.00, 0.05, ..., 1.00 using the strict `iou > threshold` convention, so a
perfect run scores AUC 20/21 (the threshold-1.0 sample is always 0). Precision
counts frames with center error <= 20 px; normalized precision divides the
center-error components by the ground-truth width and height and thresholds
the resulting distance at 0.2.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError, LayoutError

N_THRESHOLDS = 21
IOU_THRESHOLDS = tuple(np.linspace(0.0, 1.0, N_THRESHOLDS))
PRECISION_RADIUS_PX = 20.0
NORM_PRECISION_RADIUS = 0.2


def iou(a, b) -> float:
    """Intersection over union of two (x, y, w, h) boxes."""
    ax, ay, aw, ah = (float(v) for v in a)
    bx, by, bw, bh = (float(v) for v in b)
    if aw <= 0 or ah <= 0 or bw <= 0 or bh <= 0:
        raise InputError(f"boxes need positive sizes, got {a} and {b}")
    ix = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    return inter / union


def _center(box):
    x, y, w, h = box
    return x + w / 2.0, y + h / 2.0


@dataclass(frozen=True)
class MetricsReport:
    auc: float
    precision: float
    norm_precision: float
    success_curve: tuple[float, ...]
    frames: int

    def __post_init__(self):
        if len(self.success_curve) != N_THRESHOLDS:
            raise InputError(f"curve needs {N_THRESHOLDS} samples")


def evaluate(pairs) -> MetricsReport:
    """Score (predicted, ground-truth) box pairs pooled over all frames."""
    pairs = list(pairs)
    if not pairs:
        raise InputError("no frames to evaluate")
    overlaps = np.empty(len(pairs))
    center_err = np.empty(len(pairs))
    norm_err = np.empty(len(pairs))
    for i, (pred, gt) in enumerate(pairs):
        overlaps[i] = iou(pred, gt)
        pcx, pcy = _center(pred)
        gcx, gcy = _center(gt)
        center_err[i] = float(np.hypot(pcx - gcx, pcy - gcy))
        gw, gh = float(gt[2]), float(gt[3])
        norm_err[i] = float(np.hypot((pcx - gcx) / gw, (pcy - gcy) / gh))
    curve = tuple(float(np.mean(overlaps > t)) for t in IOU_THRESHOLDS)
    return MetricsReport(
        auc=float(np.mean(curve)),
        precision=float(np.mean(center_err <= PRECISION_RADIUS_PX)),
        norm_precision=float(np.mean(norm_err <= NORM_PRECISION_RADIUS)),
        success_curve=curve,
        frames=len(pairs),
    )


def _report_lines(r: MetricsReport):
    lines = [
        f"frames {r.frames}",
        f"auc {r.auc!r}",
        f"precision {r.precision!r}",
        f"norm_precision {r.norm_precision!r}",
    ]
    for t, v in zip(IOU_THRESHOLDS, r.success_curve):
        lines.append(f"curve {float(t)!r} {v!r}")
    return lines


def emit_report(r: MetricsReport, path) -> None:
    """Key-value text report; floats use repr so parsing is exact."""
    Path(path).write_text("\n".join(_report_lines(r)) + "\n")


def emit_multi_report(reports: dict, path) -> None:
    """Labeled sections (`strategy NAME` headers), stable insertion order."""
    lines = []
    for name, r in reports.items():
        lines.append(f"strategy {name}")
        lines.extend(_report_lines(r))
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_section(lines) -> MetricsReport:
    fields = {}
    curve = []
    for line in lines:
        parts = line.split()
        if parts[0] == "curve":
            curve.append(float(parts[2]))
        else:
            fields[parts[0]] = parts[1]
    if len(curve) != N_THRESHOLDS:
        raise LayoutError(f"report has {len(curve)} curve samples")
    return MetricsReport(
        auc=float(fields["auc"]),
        precision=float(fields["precision"]),
        norm_precision=float(fields["norm_precision"]),
        success_curve=tuple(curve),
        frames=int(fields["frames"]),
    )


def parse_report(path) -> MetricsReport:
    lines = [l for l in Path(path).read_text().splitlines() if l.strip()]
    if any(l.startswith("strategy ") for l in lines):
        raise LayoutError("labeled multi-strategy report; use parse_multi_report")
    return _parse_section(lines)


def parse_multi_report(path) -> dict:
    lines = [l for l in Path(path).read_text().splitlines() if l.strip()]
    out: dict[str, MetricsReport] = {}
    name, section = None, []
    for line in lines:
        if line.startswith("strategy "):
            if name is not None:
                out[name] = _parse_section(section)
            name, section = line.split(maxsplit=1)[1], []
        else:
            if name is None:
                raise LayoutError("report line before first strategy header")
            section.append(line)
    if name is not None:
        out[name] = _parse_section(section)
    return out
