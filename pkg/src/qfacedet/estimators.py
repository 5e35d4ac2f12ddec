"""scikit-learn compatible wrappers around the quantizer and the detector."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .data_io import Image
from .detection import AnchorSet, default_anchors, multi_scale_detect
from .evaluation import average_precision, match_detections, merge_matches
from .fixedpoint import QFormat, dequantize_array, quantize_array
from .model import ModelConfig, ModelGraph, build_detector, cast_storage, load_model
from .quantizer import (
    DEFAULT_CALIBRATION_IMAGES,
    QuantPlan,
    format_for_range,
    plan_quantization,
    profile_activations,
    quantize_model,
    weight_range,
)

PRECISIONS = ("fp32", "fp16", "qformat")


def check_image(img) -> np.ndarray:
    """Return a finite ``(H, W, 3)`` float image in [0, 1]."""
    if isinstance(img, Image):
        return img.rgb()
    x = np.asarray(img, dtype=np.float64)
    if x.ndim == 4 and x.shape[0] == 1:
        x = x[0]
    if x.ndim == 2:
        x = x[..., None]
    if x.ndim != 3 or x.shape[2] not in (1, 3):
        raise ValueError(f"expected an HxWx1 or HxWx3 image, got shape {x.shape}")
    if x.shape[0] < 1 or x.shape[1] < 1:
        raise ValueError("image has an empty spatial extent")
    if not np.all(np.isfinite(x)):
        raise ValueError("image contains non-finite values")
    if x.min() < 0.0 or x.max() > 1.0:
        raise ValueError("image values must be normalized to [0, 1]")
    return np.repeat(x, 3, axis=2) if x.shape[2] == 1 else x


def check_images(X) -> list[np.ndarray]:
    """Accept a batch array ``(N, H, W, C)``, a single image, or a list of images."""
    if isinstance(X, (Image, np.ndarray)) and np.ndim(getattr(X, "pixels", X)) in (2, 3):
        return [check_image(X)]
    if isinstance(X, np.ndarray) and X.ndim == 4:
        return [check_image(x) for x in X]
    images = [check_image(x) for x in X]
    if not images:
        raise ValueError("need at least one image")
    return images


class QFormatQuantizer(TransformerMixin, BaseEstimator):
    """Fake-quantize arrays to a Q-format sized from the fitted data range.

    With ``fractional_bits=None`` the integer part is the smallest that
    covers ``[X.min(), X.max()]`` and the rest of the word is fractional.
    """

    def __init__(self, word_bits=16, fractional_bits=None, rounding="half_even"):
        self.word_bits = word_bits
        self.fractional_bits = fractional_bits
        self.rounding = rounding

    def fit(self, X, y=None):
        X = check_array(X, ensure_2d=False, allow_nd=True)
        if self.fractional_bits is None:
            self.fmt_ = format_for_range(float(X.min()), float(X.max()), self.word_bits)
        else:
            self.fmt_ = QFormat.from_fractional(self.fractional_bits, self.word_bits)
        self.data_range_ = (float(X.min()), float(X.max()))
        return self

    def quantize(self, X) -> np.ndarray:
        check_is_fitted(self, "fmt_")
        X = check_array(X, ensure_2d=False, allow_nd=True)
        return quantize_array(X, self.fmt_, self.rounding)

    def transform(self, X):
        return dequantize_array(self.quantize(X), self.fmt_)

    def inverse_transform(self, X):
        check_is_fitted(self, "fmt_")
        return np.asarray(X, dtype=np.float64)


class FaceDetector(BaseEstimator):
    """Multi-scale face detector with optional FP16 or Q-format execution.

    ``fit`` builds (or loads) the network and, for ``precision="qformat"``,
    calibrates activation ranges on the given images before quantizing.
    ``predict`` returns one list of detections per image.
    """

    def __init__(
        self,
        alpha=0.5,
        out_strategy="OutA",
        anchors=None,
        model=None,
        seed=0,
        precision="fp32",
        word_bits=16,
        fractional_bits=None,
        scales=(0.5, 1.0, 2.0),
        score_threshold=0.5,
        iou_threshold=0.3,
        calibration_size=DEFAULT_CALIBRATION_IMAGES,
    ):
        self.alpha = alpha
        self.out_strategy = out_strategy
        self.anchors = anchors
        self.model = model
        self.seed = seed
        self.precision = precision
        self.word_bits = word_bits
        self.fractional_bits = fractional_bits
        self.scales = scales
        self.score_threshold = score_threshold
        self.iou_threshold = iou_threshold
        self.calibration_size = calibration_size

    def _base_model(self) -> ModelGraph:
        if isinstance(self.model, ModelGraph):
            return self.model
        if self.model is not None:
            return load_model(self.model)
        anchors = self.anchors if isinstance(self.anchors, AnchorSet) else (
            AnchorSet.from_sizes(self.anchors) if self.anchors is not None else default_anchors())
        cfg = ModelConfig(alpha=self.alpha, out_strategy=self.out_strategy, anchors=anchors)
        return build_detector(cfg, seed=self.seed)

    def fit(self, X=None, y=None):
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {PRECISIONS}, got {self.precision!r}")
        model = self._base_model()
        self.profile_ = None
        self.plan_ = None
        if self.precision == "fp16":
            model = cast_storage(model, "fp16")
        elif self.precision == "qformat":
            if self.fractional_bits is not None:
                fmt = QFormat.from_fractional(self.fractional_bits, self.word_bits)
                self.plan_ = QuantPlan(fmt, fmt)
            else:
                if X is None:
                    raise ValueError("Q-format calibration needs images")
                images = check_images(X)
                if len(images) > self.calibration_size:
                    pick = np.random.default_rng(self.seed).choice(len(images), self.calibration_size, replace=False)
                    images = [images[i] for i in sorted(pick)]
                self.profile_ = profile_activations(model, images)
                self.plan_ = plan_quantization(self.profile_, weight_range(model), self.word_bits)
            model = quantize_model(model, self.plan_)
        self.model_ = model
        return self

    def decision_function(self, X):
        """Head maps at scale 1.0, one per image."""
        check_is_fitted(self, "model_")
        return [self.model_.head_map(x[None]) for x in check_images(X)]

    def predict(self, X):
        check_is_fitted(self, "model_")
        return [
            multi_scale_detect(self.model_, x, self.scales, self.score_threshold, self.iou_threshold)
            for x in check_images(X)
        ]

    def score(self, X, y, iou_threshold=0.5):
        """Average precision of ``predict(X)`` against ground-truth boxes ``y``."""
        dets = self.predict(X)
        if len(dets) != len(y):
            raise ValueError(f"{len(dets)} images but {len(y)} ground-truth lists")
        return average_precision(merge_matches(
            match_detections(d, list(g), iou_threshold) for d, g in zip(dets, y)))
