"""
Linear and logarithmic quantizers.

A log code stores an integer exponent ``code`` so that the represented
magnitude is ``base ** code``.  With ``base == 2 ** 2**-n`` the same integer is
the raw mantissa of a signed Q(m.n) number holding ``log2|x|``; for the
accelerator (m=5, n=1, base=sqrt(2)) that is a 6-bit code whose LSB is the
half-exponent bit.  Everything downstream keeps the integer form so that all
arithmetic stays exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

from .errors import ConfigError

SQRT2 = math.sqrt(2.0)


def round_half_away(x: float) -> int:
    """Round to nearest integer, ties away from zero."""
    r = math.floor(abs(x) + 0.5)
    return int(r) if x >= 0 else -int(r)


def _round_half_away_array(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True)
class QuantParams:
    """Quantizer parameters <m, n, base>.

    ``m`` integer bits and ``n`` fractional bits of the signed Q(m.n) code.
    """

    m: int = 5
    n: int = 1
    base: float = SQRT2

    def __post_init__(self):
        if self.m < 1 or self.n < 0:
            raise ConfigError(f"invalid Q format m={self.m} n={self.n}")
        if not self.base > 1.0 or not math.isfinite(self.base):
            raise ConfigError(f"log base must be > 1, got {self.base}")

    @property
    def eps(self) -> float:
        return 2.0 ** -self.n

    @property
    def code_min(self) -> int:
        return -(1 << (self.m - 1 + self.n))

    @property
    def code_max(self) -> int:
        return (1 << (self.m - 1 + self.n)) - 1

    @property
    def code_bits(self) -> int:
        return self.m + self.n

    @property
    def log2_base(self) -> float:
        lb = math.log2(self.base)
        snapped = round(lb * 2**20) / 2**20
        return snapped if abs(lb - snapped) < 1e-12 else lb

    @property
    def hardware_base(self) -> bool:
        """True when codes are Q(m.n) log2 exponents (shift/LUT multiply works)."""
        return self.log2_base == self.eps

    def codes(self) -> range:
        return range(self.code_min, self.code_max + 1)


ACCEL_PARAMS = QuantParams(5, 1, SQRT2)


@dataclass(frozen=True)
class LogCode:
    """sign * base**code, or exact zero when ``is_zero`` is set."""

    sign: int = 1
    code: int = 0
    is_zero: bool = False

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise ValueError(f"sign must be +1 or -1, got {self.sign}")

    @classmethod
    def zero(cls) -> "LogCode":
        return cls(1, 0, True)

    def exponent(self, p: QuantParams = ACCEL_PARAMS) -> float:
        """The code read as a Q(m.n) fixed-point value."""
        return self.code * p.eps

    def check(self, p: QuantParams) -> "LogCode":
        if not self.is_zero and not p.code_min <= self.code <= p.code_max:
            raise ValueError(f"code {self.code} outside [{p.code_min}, {p.code_max}]")
        return self


@dataclass(frozen=True)
class FixedPoint:
    """value = raw * 2**-frac_bits."""

    raw: int
    frac_bits: int

    @property
    def value(self) -> float:
        return math.ldexp(self.raw, -self.frac_bits)

    def __float__(self):
        return self.value


def linear_quantize(x: float, p: QuantParams) -> FixedPoint:
    if math.isnan(x):
        raise ValueError("cannot quantize NaN")
    lo, hi = p.code_min, p.code_max
    if math.isinf(x):
        return FixedPoint(hi if x > 0 else lo, p.n)
    raw = round_half_away(math.ldexp(x, p.n))
    return FixedPoint(min(max(raw, lo), hi), p.n)


def log_quantize(x: float, p: QuantParams = ACCEL_PARAMS) -> LogCode:
    if not math.isfinite(x):
        raise ValueError(f"cannot log-quantize {x}")
    if x == 0:
        return LogCode.zero()
    k = round_half_away(math.log2(abs(x)) / p.log2_base)
    k = min(max(k, p.code_min), p.code_max)
    return LogCode(1 if x > 0 else -1, k)


def dequantize(c: LogCode, p: QuantParams = ACCEL_PARAMS) -> float:
    if c.is_zero:
        return 0.0
    return c.sign * 2.0 ** (c.code * p.log2_base)


class LogArray(NamedTuple):
    """Array form of LogCode: parallel ``sign``, ``code`` and ``zero`` arrays."""

    sign: np.ndarray
    code: np.ndarray
    zero: np.ndarray

    @property
    def shape(self):
        return self.code.shape

    def __getitem__(self, idx):
        return LogArray(self.sign[idx], self.code[idx], self.zero[idx])

    def at(self, idx) -> LogCode:
        return LogCode(int(self.sign[idx]), int(self.code[idx]), bool(self.zero[idx]))

    def reshape(self, *shape):
        return LogArray(self.sign.reshape(*shape), self.code.reshape(*shape),
                        self.zero.reshape(*shape))

    def equals(self, other: "LogArray") -> bool:
        """Code-level equality; sign and code are ignored where zero."""
        if self.shape != other.shape or not np.array_equal(self.zero, other.zero):
            return False
        live = ~self.zero
        return (np.array_equal(self.sign[live], other.sign[live])
                and np.array_equal(self.code[live], other.code[live]))

    @classmethod
    def zeros(cls, shape) -> "LogArray":
        return cls(np.ones(shape, np.int8), np.zeros(shape, np.int16),
                   np.ones(shape, bool))

    @classmethod
    def from_codes(cls, codes: Iterable[LogCode], shape=None) -> "LogArray":
        codes = list(codes)
        arr = cls(np.array([c.sign for c in codes], np.int8),
                  np.array([0 if c.is_zero else c.code for c in codes], np.int16),
                  np.array([c.is_zero for c in codes], bool))
        return arr.reshape(*shape) if shape is not None else arr


def log_quantize_array(x, p: QuantParams = ACCEL_PARAMS) -> LogArray:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot log-quantize NaN/Inf")
    zero = x == 0
    with np.errstate(divide="ignore"):
        k = _round_half_away_array(np.log2(np.abs(x)) / p.log2_base)
    k = np.where(zero, 0, np.clip(k, p.code_min, p.code_max)).astype(np.int16)
    sign = np.where(x < 0, -1, 1).astype(np.int8)
    return LogArray(sign, k, zero)


def dequantize_array(c: LogArray, p: QuantParams = ACCEL_PARAMS) -> np.ndarray:
    mag = np.exp2(c.code.astype(np.float64) * p.log2_base)
    return np.where(c.zero, 0.0, c.sign * mag)


class LogTable:
    """Post-processing lookup: non-negative psum raw value -> log code."""

    def __init__(self, codes: np.ndarray, frac_bits: int, params: QuantParams):
        self.codes = codes
        self.frac_bits = frac_bits
        self.params = params

    def __len__(self):
        return len(self.codes)

    def lookup(self, raw: int) -> LogCode:
        if raw < 0 or raw >= len(self.codes):
            raise IndexError(f"psum raw value {raw} outside table")
        if raw == 0:
            return LogCode.zero()
        return LogCode(1, int(self.codes[raw]))

    def lookup_array(self, raw: np.ndarray) -> LogArray:
        raw = np.asarray(raw)
        zero = raw <= 0
        idx = np.where(zero, 0, raw)
        return LogArray(np.ones(raw.shape, np.int8),
                        np.where(zero, 0, self.codes[idx]).astype(np.int16), zero)


def _exact_nearest_code(raw: int, frac_bits: int, p: QuantParams) -> int:
    # value = raw * 2^-F, L = 2^n * log2(value); k = nearest integer to L, ties down.
    # L > j - 1/2  <=>  raw^(2^(n+1)) > 2^(2j - 1 + F * 2^(n+1))
    e = 1 << (p.n + 1)
    lhs = raw ** e
    guess = math.floor((math.log2(raw) - frac_bits) * (1 << p.n) + 0.5)

    def above(j):
        t = 2 * j - 1 + frac_bits * e
        return lhs > (1 << t) if t >= 0 else (lhs << -t) > 1

    k = guess
    while above(k + 1):
        k += 1
    while not above(k):
        k -= 1
    return k


def build_log_table(p: QuantParams = ACCEL_PARAMS, frac_bits: int = 8,
                    total_bits: int = 16, cap: int = 1 << 20) -> LogTable:
    """Nearest log code (in the log domain) for every non-negative psum word."""
    size = 1 << (total_bits - 1)
    if size > cap:
        raise ConfigError(f"log table of {size} entries exceeds cap {cap}")
    codes = np.zeros(size, np.int16)
    if p.hardware_base:
        for raw in range(1, size):
            codes[raw] = _exact_nearest_code(raw, frac_bits, p)
    else:
        v = np.arange(1, size) * 2.0 ** -frac_bits
        L = np.log2(v) / p.log2_base
        codes[1:] = np.ceil(L - 0.5)
    np.clip(codes, p.code_min, p.code_max, out=codes)
    return LogTable(codes, frac_bits, p)


@dataclass(frozen=True)
class QuantErrorStats:
    max_rel_err: float
    mean_rel_err: float
    count: int


def quant_error_stats(samples, p: QuantParams = ACCEL_PARAMS) -> QuantErrorStats:
    """Relative magnitude error of log quantization; zeros are exact."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("empty sample set")
    q = dequantize_array(log_quantize_array(x, p), p)
    nz = x != 0
    err = np.zeros_like(x)
    err[nz] = np.abs(np.abs(q[nz]) - np.abs(x[nz])) / np.abs(x[nz])
    return QuantErrorStats(float(err.max()), float(err.mean()), int(x.size))
