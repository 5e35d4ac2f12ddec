"""Shared builders and brute-force oracles for the test suite.

The oracles here deliberately use plain Python loops so they share no code
with the vectorised implementations they check.
"""

from __future__ import annotations

import math

import numpy as np

from qfacedet.detection import AnchorSet, BBox, Detection
from qfacedet.model import GraphBuilder, ModelConfig

SMALL_ANCHORS = AnchorSet.from_sizes([(16, 16), (32, 32)])


def small_network(seed: int, input_hw=(32, 32)):
    """Stem conv plus three inverted-residual blocks and a two-anchor head."""
    b = GraphBuilder(3, seed)
    h = b.conv("input", 8, 3, 2, name="stem")
    h = b.relu6(h)
    h = b.inverted_residual(h, 4, 8, 1, "b1")
    h = b.inverted_residual(h, 4, 16, 2, "b2")
    h = b.inverted_residual(h, 4, 16, 1, "b3")
    b.head(h, len(SMALL_ANCHORS))
    return b.build(ModelConfig(anchors=SMALL_ANCHORS, input_hw=input_hw)).validate()


# ------------------------------------------------------------------ tensors


def naive_pad(x, top, bottom, left, right):
    n, h, w, c = x.shape
    out = np.zeros((n, h + top + bottom, w + left + right, c), dtype=x.dtype)
    for b in range(n):
        for i in range(h):
            for j in range(w):
                out[b, i + top, j + left] = x[b, i, j]
    return out


def naive_conv(xp, w, stride):
    """Direct nested-loop convolution of an already padded input (valid)."""
    n, h, wd, cin = xp.shape
    kh, kw, _, cout = w.shape
    oh, ow = (h - kh) // stride + 1, (wd - kw) // stride + 1
    out = np.zeros((n, oh, ow, cout), dtype=np.result_type(xp, w))
    for b in range(n):
        for i in range(oh):
            for j in range(ow):
                for o in range(cout):
                    acc = 0
                    for di in range(kh):
                        for dj in range(kw):
                            for c in range(cin):
                                acc += xp[b, i * stride + di, j * stride + dj, c] * w[di, dj, c, o]
                    out[b, i, j, o] = acc
    return out


def naive_depthwise(xp, w, stride):
    n, h, wd, c = xp.shape
    kh, kw = w.shape[:2]
    oh, ow = (h - kh) // stride + 1, (wd - kw) // stride + 1
    out = np.zeros((n, oh, ow, c), dtype=np.result_type(xp, w))
    for b in range(n):
        for i in range(oh):
            for j in range(ow):
                for ch in range(c):
                    acc = 0
                    for di in range(kh):
                        for dj in range(kw):
                            acc += xp[b, i * stride + di, j * stride + dj, ch] * w[di, dj, ch, 0]
                    out[b, i, j, ch] = acc
    return out


def half_pixel_resize_1d(values, out_size):
    """Direct half-pixel-centre linear interpolation of a 1-D sequence."""
    n = len(values)
    out = []
    for o in range(out_size):
        src = (o + 0.5) * n / out_size - 0.5
        src = min(max(src, 0.0), n - 1)
        i0 = int(math.floor(src))
        i1 = min(i0 + 1, n - 1)
        f = src - i0
        out.append(values[i0] * (1 - f) + values[i1] * f)
    return out


# ---------------------------------------------------------------- detection


def box_iou(a: BBox, b: BBox) -> float:
    ax1, ay1, ax2, ay2 = a.cx - a.w / 2, a.cy - a.h / 2, a.cx + a.w / 2, a.cy + a.h / 2
    bx1, by1, bx2, by2 = b.cx - b.w / 2, b.cy - b.h / 2, b.cx + b.w / 2, b.cy + b.h / 2
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    return inter / (a.w * a.h + b.w * b.h - inter)


def brute_force_nms(dets, threshold):
    """Quadratic greedy suppression written from the definition."""
    remaining = list(range(len(dets)))
    key = lambda i: (-dets[i].score, dets[i].box.cy, dets[i].box.cx, i)
    kept = []
    while remaining:
        best = min(remaining, key=key)
        kept.append(best)
        remaining = [i for i in remaining
                     if i != best and box_iou(dets[i].box, dets[best].box) < threshold]
    return kept


def random_detections(rng, n, extent=200.0):
    out = []
    for _ in range(n):
        w, h = rng.uniform(5, 60, 2)
        cx, cy = rng.uniform(0, extent, 2)
        out.append(Detection(BBox(cx, cy, w, h), float(rng.uniform(0, 1))))
    return out


def brute_force_ap(flags, n_gt):
    """Area under the step precision/recall curve, summed rank by rank.

    Recall rises by ``1 / n_gt`` at every true positive; each rise is weighted
    by the precision observed at that rank.
    """
    area, tp = 0.0, 0
    prev_recall = 0.0
    for rank, hit in enumerate(flags, 1):
        if hit:
            tp += 1
        recall = tp / n_gt
        area += (recall - prev_recall) * (tp / rank)
        prev_recall = recall
    return area
