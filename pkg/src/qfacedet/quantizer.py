"""Activation-range calibration and uniform post-training quantization."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from functools import reduce
from typing import Iterable

import numpy as np

from .fixedpoint import QFormat, bits_for_range
from .model import ModelGraph, cast_storage

DEFAULT_CALIBRATION_IMAGES = 100


@dataclass(frozen=True)
class LayerRange:
    min: float
    max: float
    count: int

    def __post_init__(self):
        if self.min > self.max:
            raise ValueError(f"layer range min {self.min} > max {self.max}")
        if self.count <= 0:
            raise ValueError("layer range needs at least one sample")

    def merge(self, other: "LayerRange") -> "LayerRange":
        return LayerRange(min(self.min, other.min), max(self.max, other.max), self.count + other.count)


@dataclass(frozen=True)
class ActivationProfile:
    """Per-layer activation ``(min, max, sample_count)`` records."""

    records: dict

    def merge(self, other: "ActivationProfile") -> "ActivationProfile":
        merged = dict(self.records)
        for layer_id, rng in other.records.items():
            merged[layer_id] = merged[layer_id].merge(rng) if layer_id in merged else rng
        return ActivationProfile(merged)

    def global_range(self) -> tuple[float, float]:
        if not self.records:
            raise ValueError("empty activation profile")
        return (min(r.min for r in self.records.values()),
                max(r.max for r in self.records.values()))

    def to_text(self) -> str:
        return "".join(f"{k} {r.min!r} {r.max!r} {r.count}\n" for k, r in sorted(self.records.items()))

    @classmethod
    def from_text(cls, text: str) -> "ActivationProfile":
        records = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ValueError(f"profile line {lineno}: expected 'layer_id min max count'")
            records[parts[0]] = LayerRange(float(parts[1]), float(parts[2]), int(parts[3]))
        return cls(records)

    def __eq__(self, other):
        return isinstance(other, ActivationProfile) and self.records == other.records


def profile_image(g: ModelGraph, image: np.ndarray, include_input: bool = True) -> ActivationProfile:
    x = np.asarray(image, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    ids = g.layer_ids()
    records = {}
    if include_input:
        records["input"] = LayerRange(float(x.min()), float(x.max()), 1)

    def observe(i, layer, act):
        records[ids[i]] = LayerRange(float(act.min()), float(act.max()), 1)

    g.forward(x, mode="float", observer=observe)
    return ActivationProfile(records)


def profile_activations(g: ModelGraph, images: Iterable, threads: int = 1,
                        include_input: bool = True) -> ActivationProfile:
    """Running min/max of every intermediate activation over a calibration set.

    Merging is associative and commutative, so the result does not depend on
    the image order or on how work is spread over ``threads``.
    """
    images = list(images)
    if not images:
        raise ValueError("calibration set is empty")
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda im: profile_image(g, im, include_input), images))
    else:
        parts = [profile_image(g, im, include_input) for im in images]
    return reduce(ActivationProfile.merge, parts)


@dataclass(frozen=True)
class QuantPlan:
    weight_fmt: QFormat
    activation_fmt: QFormat

    def __post_init__(self):
        if self.weight_fmt.word_bits != self.activation_fmt.word_bits:
            raise ValueError("weight and activation formats must share word_bits")


def format_for_range(lo: float, hi: float, word_bits: int = 16) -> QFormat:
    m = bits_for_range(lo, hi)
    if m >= word_bits:
        raise ValueError(f"range unrepresentable: [{lo}, {hi}] needs {m} integer bits in a {word_bits}-bit word")
    return QFormat(m, word_bits - 1 - m)


def plan_quantization(profile: ActivationProfile, weight_range: tuple[float, float],
                      word_bits: int = 16) -> QuantPlan:
    """Pick one activation format and one weight format from global extremes."""
    return QuantPlan(format_for_range(*weight_range, word_bits),
                     format_for_range(*profile.global_range(), word_bits))


def weight_range(g: ModelGraph) -> tuple[float, float]:
    lo = min(float(g.float_weight(k).min(initial=0.0)) for k in g.weights)
    hi = max(float(g.float_weight(k).max(initial=0.0)) for k in g.weights)
    return lo, hi


def unrepresentable_layers(profile: ActivationProfile, fmt: QFormat) -> list[str]:
    """Layer ids whose observed range does not fit ``fmt``."""
    return [k for k, r in sorted(profile.records.items())
            if r.min < fmt.min_value or r.max > fmt.max_value]


def quantize_model(g: ModelGraph, plan: QuantPlan) -> ModelGraph:
    """Saturating weight quantization plus the activation format for integer execution."""
    return replace(cast_storage(g, plan.weight_fmt), activation_fmt=plan.activation_fmt)
