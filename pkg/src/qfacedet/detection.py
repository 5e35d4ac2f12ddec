"""Anchors, box regression codec, IoU, NMS and multi-scale inference."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Sequence, TextIO

import numpy as np

# exp() of a larger log-scale overflows toward inf for big anchors
MAX_LOG_SCALE = 60.0


@dataclass(frozen=True)
class BBox:
    """Center-format box in image pixels."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box extents must be positive, got w={self.w}, h={self.h}")

    @classmethod
    def from_corners(cls, left, top, width, height) -> "BBox":
        return cls(left + width / 2.0, top + height / 2.0, width, height)

    def corners(self) -> tuple[float, float, float, float]:
        """``(x1, y1, x2, y2)``."""
        return (self.cx - self.w / 2.0, self.cy - self.h / 2.0,
                self.cx + self.w / 2.0, self.cy + self.h / 2.0)

    def scaled(self, factor: float) -> "BBox":
        return BBox(self.cx * factor, self.cy * factor, self.w * factor, self.h * factor)

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h])


@dataclass(frozen=True)
class Anchor:
    id: int
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"anchor {self.id} has non-positive extent")


class AnchorSet(tuple):
    """Ordered tuple of :class:`Anchor` (canonical box sizes)."""

    def __new__(cls, anchors: Iterable[Anchor]):
        anchors = tuple(anchors)
        if not anchors:
            raise ValueError("an anchor set needs at least one anchor")
        return super().__new__(cls, anchors)

    @classmethod
    def from_sizes(cls, sizes) -> "AnchorSet":
        return cls(Anchor(i, float(w), float(h)) for i, (w, h) in enumerate(sizes))

    @property
    def sizes(self) -> np.ndarray:
        return np.array([[a.w, a.h] for a in self], dtype=np.float64)

    def to_text(self) -> str:
        return "".join(f"{a.id} {a.w!r} {a.h!r}\n" for a in self)


def parse_anchors(text: str) -> AnchorSet:
    anchors = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) == 2:
            parts = [str(len(anchors))] + parts
        if len(parts) != 3:
            raise ValueError(f"anchor file line {lineno}: expected 'id width height'")
        anchors.append(Anchor(int(parts[0]), float(parts[1]), float(parts[2])))
    return AnchorSet(anchors)


def load_anchors(path) -> AnchorSet:
    return parse_anchors(Path(path).read_text())


def default_anchors() -> AnchorSet:
    """The shipped 25-anchor set (square, log-spaced between 16 and 360 px)."""
    text = resources.files("qfacedet").joinpath("data/anchors_default.txt").read_text()
    return parse_anchors(text)


@dataclass(frozen=True)
class RegressionTarget:
    tx: float
    ty: float
    tw: float
    th: float

    def as_array(self) -> np.ndarray:
        return np.array([self.tx, self.ty, self.tw, self.th])


@dataclass(frozen=True)
class Detection:
    box: BBox
    score: float
    scale: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score {self.score} outside [0, 1]")


def encode_box(box: BBox, anchor: Anchor, cell_center: tuple[float, float]) -> RegressionTarget:
    xa, ya = cell_center
    return RegressionTarget(
        (box.cx - xa) / anchor.w,
        (box.cy - ya) / anchor.h,
        math.log(box.w / anchor.w),
        math.log(box.h / anchor.h),
    )


def decode_box(t: RegressionTarget, anchor: Anchor, cell_center: tuple[float, float]) -> BBox:
    xa, ya = cell_center
    tw = min(max(t.tw, -MAX_LOG_SCALE), MAX_LOG_SCALE)
    th = min(max(t.th, -MAX_LOG_SCALE), MAX_LOG_SCALE)
    return BBox(xa + t.tx * anchor.w, ya + t.ty * anchor.h,
                anchor.w * math.exp(tw), anchor.h * math.exp(th))


def iou(a: BBox, b: BBox) -> float:
    ax1, ay1, ax2, ay2 = a.corners()
    bx1, by1, bx2, by2 = b.corners()
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.w * a.h + b.w * b.h - inter
    return min(inter / union, 1.0) if union > 0 else 0.0


def iou_one_to_many(box: np.ndarray, boxes: np.ndarray) -> np.ndarray:
    """IoU of one ``(cx, cy, w, h)`` row against an ``(N, 4)`` array."""
    x1, y1 = box[0] - box[2] / 2.0, box[1] - box[3] / 2.0
    x2, y2 = box[0] + box[2] / 2.0, box[1] + box[3] / 2.0
    bx1, by1 = boxes[:, 0] - boxes[:, 2] / 2.0, boxes[:, 1] - boxes[:, 3] / 2.0
    bx2, by2 = boxes[:, 0] + boxes[:, 2] / 2.0, boxes[:, 1] + boxes[:, 3] / 2.0
    iw = np.minimum(x2, bx2) - np.maximum(x1, bx1)
    ih = np.minimum(y2, by2) - np.maximum(y1, by1)
    inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
    # areas from w*h: corner differences lose tiny extents at large coordinates
    union = box[2] * box[3] + boxes[:, 2] * boxes[:, 3] - inter
    return np.minimum(np.divide(inter, union, out=np.zeros_like(inter), where=union > 0), 1.0)


@dataclass(frozen=True)
class HeadMap:
    """Raw ``(H, W, 5A)`` detector output plus the geometry needed to decode it.

    Per anchor ``a`` the channels ``5a .. 5a+4`` hold the objectness logit
    followed by ``tx, ty, tw, th``.
    """

    grid: np.ndarray
    stride: float
    anchors: AnchorSet = field(default_factory=default_anchors)

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=np.float64)
        if grid.ndim == 4:
            if grid.shape[0] != 1:
                raise ValueError("a HeadMap holds a single image")
            grid = grid[0]
        if grid.ndim != 3 or grid.shape[2] != 5 * len(self.anchors):
            raise ValueError(
                f"head map shape {grid.shape} does not carry 5 x {len(self.anchors)} channels"
            )
        object.__setattr__(self, "grid", grid)

    @property
    def logits(self) -> np.ndarray:
        return self.grid[..., 0::5]

    @property
    def regression(self) -> np.ndarray:
        """``(H, W, A, 4)`` view of the t-vectors."""
        h, w, _ = self.grid.shape
        return self.grid.reshape(h, w, len(self.anchors), 5)[..., 1:]

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        h, w, _ = self.grid.shape
        return (np.arange(w) + 0.5) * self.stride, (np.arange(h) + 0.5) * self.stride


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -500.0, 500.0)))


def extract_detections(m: HeadMap, score_threshold: float = 0.5) -> list[Detection]:
    """Decode every cell/anchor slot whose probability reaches the threshold.

    Output order is row-major over ``(row, col, anchor)``.
    """
    probs = sigmoid(m.logits)
    rows, cols, ks = np.nonzero(probs >= score_threshold)
    if rows.size == 0:
        return []
    xs, ys = m.cell_centers()
    t = m.regression[rows, cols, ks]
    sizes = m.anchors.sizes[ks]
    cx = xs[cols] + t[:, 0] * sizes[:, 0]
    cy = ys[rows] + t[:, 1] * sizes[:, 1]
    w = sizes[:, 0] * np.exp(np.clip(t[:, 2], -MAX_LOG_SCALE, MAX_LOG_SCALE))
    h = sizes[:, 1] * np.exp(np.clip(t[:, 3], -MAX_LOG_SCALE, MAX_LOG_SCALE))
    scores = probs[rows, cols, ks]
    return [
        Detection(BBox(float(a), float(b), float(c), float(d)), float(s))
        for a, b, c, d, s in zip(cx, cy, w, h, scores)
    ]


def nms_order(dets: Sequence[Detection]) -> np.ndarray:
    """Indices by score descending; ties by lower cy, lower cx, then input order."""
    if not dets:
        return np.zeros(0, dtype=np.int64)
    scores = np.array([d.score for d in dets])
    cy = np.array([d.box.cy for d in dets])
    cx = np.array([d.box.cx for d in dets])
    return np.lexsort((np.arange(len(dets)), cx, cy, -scores))


def nms(dets: Sequence[Detection], iou_threshold: float = 0.3) -> list[Detection]:
    """Greedy suppression; a box with IoU >= threshold against a kept box is dropped."""
    order = nms_order(dets)
    if order.size == 0:
        return []
    boxes = np.array([dets[i].box.as_array() for i in order])
    suppressed = np.zeros(len(order), dtype=bool)
    keep = []
    for pos in range(len(order)):
        if suppressed[pos]:
            continue
        keep.append(order[pos])
        rest = slice(pos + 1, None)
        suppressed[rest] |= iou_one_to_many(boxes[pos], boxes[rest]) >= iou_threshold
    return [dets[i] for i in keep]


HeadFn = Callable[[np.ndarray], HeadMap]


def multi_scale_detect(
    model,
    image: np.ndarray,
    scales: Sequence[float] = (0.5, 1.0, 2.0),
    score_threshold: float = 0.5,
    iou_threshold: float = 0.3,
) -> list[Detection]:
    """Run the detector over an image pyramid and merge with one NMS pass.

    ``model`` is a :class:`~qfacedet.model.ModelGraph` or any callable mapping
    an ``(1, H, W, C)`` float image to a :class:`HeadMap`. ``image`` is a
    ``(H, W, C)`` or ``(1, H, W, C)`` array in [0, 1].
    """
    from .data_io import resize_bilinear

    head_fn: HeadFn = model if callable(model) else model.head_map
    x = np.asarray(image, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    pooled = []
    for s in scales:
        if s <= 0:
            raise ValueError(f"scale must be positive, got {s}")
        xs = x if s == 1.0 else resize_bilinear(x, s)
        for d in extract_detections(head_fn(xs), score_threshold):
            pooled.append(replace(d, box=d.box.scaled(1.0 / s), scale=s))
    return nms(pooled, iou_threshold)


def _field(v: float) -> str:
    # six decimals as usual, but keep sub-1e-3 magnitudes from collapsing to zero
    return f"{v:.6e}" if 0 < abs(v) < 1e-3 else f"{v:.6f}"


def write_detections(out: TextIO, results: Iterable[tuple[str, Sequence[Detection]]]):
    """FDDB detection format: id line, count line, ``left top width height score`` rows."""
    for image_id, dets in results:
        out.write(f"{image_id}\n{len(dets)}\n")
        for d in dets:
            x1, y1, _, _ = d.box.corners()
            out.write(" ".join(_field(v) for v in (x1, y1, d.box.w, d.box.h, d.score)) + "\n")


def read_detections(text: str) -> list[tuple[str, list[Detection]]]:
    lines = text.splitlines()
    out, i = [], 0
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        image_id = lines[i].strip()
        try:
            count = int(lines[i + 1])
        except (IndexError, ValueError):
            raise ValueError(f"line {i + 2}: expected a detection count for {image_id!r}") from None
        dets = []
        for k in range(count):
            lineno = i + 2 + k
            try:
                left, top, w, h, score = (float(v) for v in lines[lineno].split()[:5])
            except (IndexError, ValueError):
                raise ValueError(f"line {lineno + 1}: malformed detection for {image_id!r}") from None
            dets.append(Detection(BBox.from_corners(left, top, w, h), min(max(score, 0.0), 1.0)))
        out.append((image_id, dets))
        i += 2 + count
    return out
