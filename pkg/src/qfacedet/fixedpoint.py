"""Signed Qm.n fixed-point arithmetic.

A Qm.n number carries ``m`` integer bits, ``n`` fractional bits and one sign
bit, so it occupies ``m + n + 1`` bits and encodes ``raw / 2**n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ROUNDING_MODES = ("half_even", "floor")


class AccumulatorOverflow(OverflowError):
    """Raised when an integer accumulator leaves its declared width."""


@dataclass(frozen=True)
class QFormat:
    """Fixed-point format with ``m`` integer bits and ``n`` fractional bits."""

    m: int
    n: int
    word_bits: int | None = None

    def __post_init__(self):
        if self.m < 0 or self.n < 0:
            raise ValueError(f"Q-format bit counts must be >= 0, got m={self.m}, n={self.n}")
        if self.word_bits is None:
            object.__setattr__(self, "word_bits", self.m + self.n + 1)
        elif self.word_bits != self.m + self.n + 1:
            raise ValueError(
                f"word_bits={self.word_bits} does not equal m + n + 1 = {self.m + self.n + 1}"
            )

    @classmethod
    def from_fractional(cls, n: int, word_bits: int = 16) -> "QFormat":
        """Format with ``n`` fractional bits filling a ``word_bits`` word."""
        return cls(word_bits - 1 - n, n)

    @classmethod
    def parse(cls, text: str) -> "QFormat":
        """Parse ``"Q6.9"`` (or ``"6.9"``)."""
        body = text.strip().lstrip("Qq")
        m, _, n = body.partition(".")
        return cls(int(m), int(n))

    @property
    def int_min(self) -> int:
        return -(1 << (self.word_bits - 1))

    @property
    def int_max(self) -> int:
        return (1 << (self.word_bits - 1)) - 1

    @property
    def scale(self) -> int:
        return 1 << self.n

    @property
    def lsb(self) -> float:
        return 2.0 ** -self.n

    @property
    def min_value(self) -> float:
        return self.int_min / self.scale

    @property
    def max_value(self) -> float:
        return self.int_max / self.scale

    def __str__(self):
        return f"Q{self.m}.{self.n}"


@dataclass(frozen=True)
class QScalar:
    raw: int
    fmt: QFormat

    def __post_init__(self):
        if not self.fmt.int_min <= self.raw <= self.fmt.int_max:
            raise ValueError(f"raw code {self.raw} outside {self.fmt} word range")

    def __float__(self):
        return dequantize(self)


def _check_rounding(rounding: str):
    if rounding not in ROUNDING_MODES:
        raise ValueError(f"unknown rounding mode {rounding!r}; expected one of {ROUNDING_MODES}")


def quantize(x: float, fmt: QFormat, rounding: str = "half_even") -> QScalar:
    """Saturating conversion of a real to ``fmt``.

    ``rounding="floor"`` reproduces the truncating conversion some
    references use; the default halves the worst-case error.
    """
    _check_rounding(rounding)
    x = float(x)
    if not math.isfinite(x):
        raise ValueError("non-finite input")
    scaled = math.ldexp(x, fmt.n)
    if scaled >= fmt.int_max:
        return QScalar(fmt.int_max, fmt)
    if scaled <= fmt.int_min:
        return QScalar(fmt.int_min, fmt)
    raw = round(scaled) if rounding == "half_even" else math.floor(scaled)
    return QScalar(min(max(raw, fmt.int_min), fmt.int_max), fmt)


def dequantize(q: QScalar) -> float:
    return math.ldexp(float(q.raw), -q.fmt.n)


def quantize_array(x, fmt: QFormat, rounding: str = "half_even") -> np.ndarray:
    """Vectorised :func:`quantize`; returns int64 raw codes."""
    _check_rounding(rounding)
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")
    scaled = np.ldexp(x, fmt.n)
    scaled = np.rint(scaled) if rounding == "half_even" else np.floor(scaled)
    return np.clip(scaled, fmt.int_min, fmt.int_max).astype(np.int64)


def dequantize_array(raw, fmt: QFormat) -> np.ndarray:
    return np.ldexp(np.asarray(raw, dtype=np.float64), -fmt.n)


def saturate(raw, fmt: QFormat) -> np.ndarray:
    return np.clip(raw, fmt.int_min, fmt.int_max)


def round_shift(acc, shift: int) -> np.ndarray:
    """Divide integers by ``2**shift`` with round-half-to-even.

    Negative ``shift`` multiplies instead. Works on int64 and object arrays.
    """
    acc = np.asarray(acc)
    if shift <= 0:
        return acc * (1 << -shift)
    q = acc >> shift
    r = acc - (q << shift)
    half = 1 << (shift - 1)
    bump = np.asarray((r > half) | ((r == half) & ((q & 1) == 1)))
    return q + bump.astype(acc.dtype if acc.dtype != object else np.int64)


def bits_for_range(lo: float, hi: float) -> int:
    """Smallest integer-bit count ``m`` with ``-2**m <= lo`` and ``hi < 2**m``."""
    lo, hi = float(lo), float(hi)
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ValueError("range bounds must be finite")
    if lo > hi:
        raise ValueError(f"empty range: lo={lo} > hi={hi}")
    m = 0
    while not (-(2.0 ** m) <= lo and hi < 2.0 ** m):
        m += 1
    return m


def accumulator_limits(acc_bits: int) -> tuple[int, int]:
    return -(1 << (acc_bits - 1)), (1 << (acc_bits - 1)) - 1


def qmac(acc: int, a: QScalar, b: QScalar, acc_bits: int = 64) -> int:
    """Multiply-accumulate ``acc + a.raw * b.raw`` at ``a.n + b.n`` fractional bits.

    The product is not saturated. An accumulator leaving ``acc_bits`` raises
    :class:`AccumulatorOverflow` instead of wrapping.
    """
    if a.fmt.word_bits != b.fmt.word_bits:
        raise ValueError("qmac operands must share word_bits")
    out = int(acc) + a.raw * b.raw
    lo, hi = accumulator_limits(acc_bits)
    if not lo <= out <= hi:
        raise AccumulatorOverflow("accumulator overflow")
    return out


def requantize(acc: int, acc_frac_bits: int, fmt: QFormat) -> QScalar:
    """Rescale an accumulator to ``fmt`` (round-half-even, then saturate)."""
    raw = int(round_shift(np.array(acc, dtype=object), acc_frac_bits - fmt.n))
    return QScalar(min(max(raw, fmt.int_min), fmt.int_max), fmt)
