"""Float and fixed-point kernels over NHWC tensors.

Float tensors are plain ``float64`` numpy arrays shaped
``(batch, height, width, channels)``. Fixed-point tensors are
:class:`QTensor` values holding int64 raw codes in one uniform format.
The same accumulation routines serve both paths, so float and integer
results differ only in number representation, never in summation order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fixedpoint import (
    AccumulatorOverflow,
    QFormat,
    accumulator_limits,
    dequantize_array,
    quantize_array,
    round_shift,
    saturate,
)

PAD_MODES = ("same_asymmetric", "full_symmetric", "explicit")


def as_tensor(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ValueError(f"expected a 4-D NHWC tensor, got shape {x.shape}")
    return x


@dataclass(frozen=True)
class QTensor:
    raw: np.ndarray
    fmt: QFormat

    def __post_init__(self):
        raw = np.asarray(self.raw)
        if raw.dtype != object:
            raw = raw.astype(np.int64, copy=False)
        if raw.size and (raw.min() < self.fmt.int_min or raw.max() > self.fmt.int_max):
            raise ValueError(f"raw codes outside the {self.fmt} word range")
        object.__setattr__(self, "raw", raw)

    @classmethod
    def from_float(cls, x, fmt: QFormat, rounding: str = "half_even") -> "QTensor":
        return cls(quantize_array(x, fmt, rounding), fmt)

    @property
    def shape(self):
        return self.raw.shape

    def dequantize(self) -> np.ndarray:
        return dequantize_array(self.raw, self.fmt)


@dataclass(frozen=True)
class PadSpec:
    """Zero-padding rule for a spatial kernel.

    ``same_asymmetric`` follows the TensorFlow 'SAME' rule: the total pad is
    split with the extra pixel on the bottom/right. ``full_symmetric`` pads
    ``(k - 1) // 2`` on every side. ``explicit`` carries the four counts.
    """

    mode: str = "explicit"
    top: int = 0
    bottom: int = 0
    left: int = 0
    right: int = 0
    kernel: int = 1
    stride: int = 1

    def __post_init__(self):
        if self.mode not in PAD_MODES:
            raise ValueError(f"unknown pad mode {self.mode!r}")
        if min(self.top, self.bottom, self.left, self.right) < 0:
            raise ValueError("pad counts must be >= 0")

    @classmethod
    def explicit(cls, top=0, bottom=0, left=0, right=0) -> "PadSpec":
        return cls("explicit", top, bottom, left, right)

    @classmethod
    def valid(cls) -> "PadSpec":
        return cls("explicit")

    @classmethod
    def same(cls, kernel: int, stride: int = 1) -> "PadSpec":
        return cls("same_asymmetric", kernel=kernel, stride=stride)

    @classmethod
    def full(cls, kernel: int) -> "PadSpec":
        return cls("full_symmetric", kernel=kernel)

    def resolve(self, height: int, width: int) -> tuple[int, int, int, int]:
        """Return ``(top, bottom, left, right)`` for an input of this size."""
        if self.mode == "explicit":
            return self.top, self.bottom, self.left, self.right
        if self.mode == "full_symmetric":
            p = (self.kernel - 1) // 2
            return p, p, p, p

        def split(size):
            out = -(-size // self.stride)
            total = max((out - 1) * self.stride + self.kernel - size, 0)
            return total // 2, total - total // 2

        top, bottom = split(height)
        left, right = split(width)
        return top, bottom, left, right

    def encode(self) -> str:
        if self.mode == "explicit":
            return f"explicit:{self.top},{self.bottom},{self.left},{self.right}"
        return self.mode

    @classmethod
    def decode(cls, text: str, kernel: int, stride: int) -> "PadSpec":
        if text.startswith("explicit:"):
            t, b, l, r = (int(v) for v in text.split(":", 1)[1].split(","))
            return cls.explicit(t, b, l, r)
        if text == "same_asymmetric":
            return cls.same(kernel, stride)
        if text == "full_symmetric":
            return cls.full(kernel)
        raise ValueError(f"unknown pad spec {text!r}")


def _pad_array(x: np.ndarray, spec: PadSpec | None) -> np.ndarray:
    if spec is None:
        return x
    top, bottom, left, right = spec.resolve(x.shape[1], x.shape[2])
    if top == bottom == left == right == 0:
        return x
    return np.pad(x, ((0, 0), (top, bottom), (left, right), (0, 0)))


def pad2d(x, spec: PadSpec) -> np.ndarray:
    return _pad_array(as_tensor(x), spec)


def _out_size(size: int, kernel: int, stride: int) -> int:
    out = (size - kernel) // stride + 1
    if out < 1:
        raise ValueError(f"kernel {kernel} larger than padded input extent {size}")
    return out


def _conv_accumulate(xp: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
    """Sum of products for a dense convolution on an already padded input."""
    kh, kw, cin, cout = w.shape
    if xp.shape[3] != cin:
        raise ValueError(f"input has {xp.shape[3]} channels, kernel expects {cin}")
    n, hp, wp, _ = xp.shape
    oh, ow = _out_size(hp, kh, stride), _out_size(wp, kw, stride)
    if kh == kw == 1:
        cols = xp[:, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride, :]
        return np.ascontiguousarray(cols).reshape(-1, cin).dot(w.reshape(cin, cout)).reshape(n, oh, ow, cout)
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]
    # win: (n, oh, ow, cin, kh, kw) -> rows ordered (kh, kw, cin) to match w
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(-1, kh * kw * cin)
    return cols.dot(w.reshape(kh * kw * cin, cout)).reshape(n, oh, ow, cout)


def _depthwise_accumulate(xp: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
    kh, kw, c, mult = w.shape
    if mult != 1 or xp.shape[3] != c:
        raise ValueError(f"depthwise kernel {w.shape} incompatible with {xp.shape[3]} channels")
    _, hp, wp, _ = xp.shape
    oh, ow = _out_size(hp, kh, stride), _out_size(wp, kw, stride)
    acc = None
    for i in range(kh):
        for j in range(kw):
            tap = xp[:, i : i + (oh - 1) * stride + 1 : stride, j : j + (ow - 1) * stride + 1 : stride, :]
            term = tap * w[i, j, :, 0]
            acc = term if acc is None else acc + term
    return acc


def _check_stride(stride):
    if stride not in (1, 2):
        raise ValueError(f"stride must be 1 or 2, got {stride}")


def conv2d(x, w, stride: int = 1, pad: PadSpec | None = None) -> np.ndarray:
    """Dense 2-D convolution; ``w`` is ``(kh, kw, cin, cout)``."""
    _check_stride(stride)
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 4:
        raise ValueError(f"conv weights must be 4-D, got {w.shape}")
    return _conv_accumulate(_pad_array(as_tensor(x), pad), w, stride)


def depthwise_conv2d(x, w, stride: int = 1, pad: PadSpec | None = None) -> np.ndarray:
    """Per-channel convolution; ``w`` is ``(kh, kw, c, 1)``."""
    _check_stride(stride)
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 4:
        raise ValueError(f"depthwise weights must be 4-D, got {w.shape}")
    return _depthwise_accumulate(_pad_array(as_tensor(x), pad), w, stride)


def conv2d_macs(out_shape, kernel_shape) -> int:
    n, oh, ow, cout = out_shape
    kh, kw, cin, _ = kernel_shape
    return n * oh * ow * cout * kh * kw * cin


def depthwise_macs(out_shape, kernel_shape) -> int:
    n, oh, ow, c = out_shape
    kh, kw = kernel_shape[:2]
    return n * oh * ow * c * kh * kw


def relu6(x) -> np.ndarray:
    return np.clip(np.asarray(x, dtype=np.float64), 0.0, 6.0)


def add(a, b) -> np.ndarray:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"cannot add tensors of shapes {a.shape} and {b.shape}")
    return a + b


def _bilinear_taps(in_size: int, out_size: int):
    # half-pixel centres, no corner alignment
    src = (np.arange(out_size) + 0.5) * (in_size / out_size) - 0.5
    src = np.clip(src, 0.0, in_size - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, in_size - 1)
    frac = src - i0
    return i0, i1, frac


def bilinear_resize(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling of the spatial axes of an NHWC array."""
    x = as_tensor(x)
    r0, r1, fr = _bilinear_taps(x.shape[1], out_h)
    c0, c1, fc = _bilinear_taps(x.shape[2], out_w)
    fr = fr[None, :, None, None]
    fc = fc[None, None, :, None]
    rows = x[:, r0] + (x[:, r1] - x[:, r0]) * fr
    return rows[:, :, c0] + (rows[:, :, c1] - rows[:, :, c0]) * fc


def upsample2x_bilinear(x) -> np.ndarray:
    x = as_tensor(x)
    if x.shape[1] < 1 or x.shape[2] < 1:
        raise ValueError("cannot upsample an empty tensor")
    return bilinear_resize(x, 2 * x.shape[1], 2 * x.shape[2])


def concat_channels(a, b) -> np.ndarray:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[:3] != b.shape[:3]:
        raise ValueError(f"spatial mismatch in concat: {a.shape} vs {b.shape}")
    return np.concatenate([a, b], axis=3)


def crop_to(x, height: int, width: int):
    """Crop the spatial extent of ``x`` (array or QTensor) from the top-left."""
    if isinstance(x, QTensor):
        return QTensor(x.raw[:, :height, :width], x.fmt)
    return x[:, :height, :width]


# ---------------------------------------------------------------- fixed point


def _exact_accumulate(fn, xp_raw, w_raw, stride, acc_bits):
    """Run an integer accumulation without int64 wraparound and check width."""
    fan_in = int(np.prod(w_raw.shape[:-1])) if fn is _conv_accumulate else int(np.prod(w_raw.shape[:2]))
    bound = fan_in * int(np.abs(xp_raw).max(initial=0)) * int(np.abs(w_raw).max(initial=0))
    if bound < (1 << 62):
        acc = fn(xp_raw.astype(np.int64), w_raw.astype(np.int64), stride)
    else:
        acc = fn(xp_raw.astype(object), w_raw.astype(object), stride)
    lo, hi = accumulator_limits(acc_bits)
    # two's-complement partial sums wrap and unwrap, so only the final value matters
    if acc.size and (acc.min() < lo or acc.max() > hi):
        raise AccumulatorOverflow("accumulator overflow")
    return acc


def _requantize(acc, acc_frac: int, out_fmt: QFormat) -> QTensor:
    raw = saturate(round_shift(acc, acc_frac - out_fmt.n), out_fmt)
    return QTensor(np.asarray(raw).astype(np.int64), out_fmt)


def _add_bias(acc, bias: QTensor | None, acc_frac: int):
    if bias is None:
        return acc
    shift = acc_frac - bias.fmt.n
    if shift < 0:
        raise ValueError("bias has more fractional bits than the accumulator")
    return acc + bias.raw.astype(acc.dtype) * (1 << shift)


def conv2d_fixed(
    x: QTensor,
    w: QTensor,
    stride: int = 1,
    pad: PadSpec | None = None,
    out_fmt: QFormat | None = None,
    bias: QTensor | None = None,
    acc_bits: int = 64,
) -> QTensor:
    """Integer convolution: exact MACs, one rounding/saturation at the output."""
    _check_stride(stride)
    if x.fmt.word_bits != w.fmt.word_bits:
        raise ValueError("input and weights must share word_bits")
    out_fmt = out_fmt or x.fmt
    acc_frac = x.fmt.n + w.fmt.n
    acc = _exact_accumulate(_conv_accumulate, _pad_array(x.raw, pad), w.raw, stride, acc_bits)
    return _requantize(_add_bias(acc, bias, acc_frac), acc_frac, out_fmt)


def depthwise_conv2d_fixed(
    x: QTensor,
    w: QTensor,
    stride: int = 1,
    pad: PadSpec | None = None,
    out_fmt: QFormat | None = None,
    acc_bits: int = 64,
) -> QTensor:
    _check_stride(stride)
    if x.fmt.word_bits != w.fmt.word_bits:
        raise ValueError("input and weights must share word_bits")
    out_fmt = out_fmt or x.fmt
    acc = _exact_accumulate(_depthwise_accumulate, _pad_array(x.raw, pad), w.raw, stride, acc_bits)
    return _requantize(acc, x.fmt.n + w.fmt.n, out_fmt)


def relu6_fixed(x: QTensor) -> QTensor:
    six = min(6 << x.fmt.n, x.fmt.int_max)
    return QTensor(np.clip(x.raw, 0, six), x.fmt)


def add_fixed(a: QTensor, b: QTensor) -> QTensor:
    if a.fmt != b.fmt:
        raise ValueError(f"cannot add {a.fmt} and {b.fmt} tensors")
    if a.shape != b.shape:
        raise ValueError(f"cannot add tensors of shapes {a.shape} and {b.shape}")
    return QTensor(saturate(a.raw + b.raw, a.fmt), a.fmt)


def upsample2x_fixed(x: QTensor) -> QTensor:
    """2x bilinear upsample in integers; tap weights are exact quarters."""
    raw = x.raw

    def axis_weights(size):
        i0, i1, frac = _bilinear_taps(size, 2 * size)
        w1 = np.rint(frac * 4).astype(np.int64)
        return i0, i1, 4 - w1, w1

    r0, r1, ra, rb = axis_weights(raw.shape[1])
    c0, c1, ca, cb = axis_weights(raw.shape[2])
    rows = raw[:, r0] * ra[None, :, None, None] + raw[:, r1] * rb[None, :, None, None]
    acc = rows[:, :, c0] * ca[None, None, :, None] + rows[:, :, c1] * cb[None, None, :, None]
    return QTensor(saturate(round_shift(acc, 4), x.fmt), x.fmt)


def concat_fixed(a: QTensor, b: QTensor) -> QTensor:
    if a.fmt != b.fmt:
        raise ValueError(f"cannot concatenate {a.fmt} and {b.fmt} tensors")
    if a.shape[:3] != b.shape[:3]:
        raise ValueError(f"spatial mismatch in concat: {a.shape} vs {b.shape}")
    return QTensor(np.concatenate([a.raw, b.raw], axis=3), a.fmt)
