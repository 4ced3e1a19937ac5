"""
Bit-level model of the log-domain compute threads, PEs, PE matrix and adder net 0.

A thread multiplies two log codes by adding their exponents and turning the
sum back into a linear value with a 2^n-entry fraction LUT followed by a barrel
shift.  Three threads share one activation inside a PE; a PE matrix is 6x3 PEs
and adder net 0 sums same-thread outputs along each PE row into 18 psums.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .quantizer import ACCEL_PARAMS, LogArray, LogCode, QuantParams

PE_ROWS = 6
PE_COLS = 3
THREADS = 3
MATRICES = 6
PSUMS_PER_MATRIX = PE_ROWS * THREADS  # o1..o18
THREADS_PER_MATRIX = PE_ROWS * PE_COLS * THREADS  # 54
THREADS_PER_GRID = THREADS_PER_MATRIX * MATRICES  # 324


@dataclass(frozen=True)
class PsumFormat:
    """Signed fixed-point psum word.

    Products and layer outputs use ``total_bits`` (Q8.8 by default); adder
    trees and channel accumulators carry ``acc_bits`` so that reduction order
    never changes a result.
    """

    total_bits: int = 16
    frac_bits: int = 8
    acc_bits: int = 32

    @property
    def max(self) -> int:
        return (1 << (self.total_bits - 1)) - 1

    @property
    def min(self) -> int:
        return -(1 << (self.total_bits - 1))

    @property
    def acc_max(self) -> int:
        return (1 << (self.acc_bits - 1)) - 1

    @property
    def acc_min(self) -> int:
        return -(1 << (self.acc_bits - 1))

    def to_real(self, raw):
        return np.asarray(raw, dtype=np.float64) * 2.0 ** -self.frac_bits

    def saturate(self, raw):
        return np.clip(raw, self.min, self.max)

    def acc_add(self, a, b):
        """Saturating accumulator add."""
        return np.clip(np.asarray(a, np.int64) + b, self.acc_min, self.acc_max)


Q8_8 = PsumFormat()


def _iroot(value: int, k: int) -> int:
    """floor(value ** (1/k)) for non-negative integers."""
    if value < 2:
        return value
    x = 1 << ((value.bit_length() + k - 1) // k)
    while True:
        y = ((k - 1) * x + value // x ** (k - 1)) // k
        if y >= x:
            break
        x = y
    while x ** k > value:
        x -= 1
    while (x + 1) ** k <= value:
        x += 1
    return x


@dataclass(frozen=True)
class ThreadLUT:
    """Fraction table entry[k] = 2^(k * 2^-n), truncated to frac_bits + guard_bits.

    The guard bits sit below the psum LSB and are dropped after the shift, so a
    product is the truncation of the exact value rather than of a pre-rounded
    table entry.
    """

    params: QuantParams = ACCEL_PARAMS
    fmt: PsumFormat = Q8_8
    guard_bits: int = 16
    entries: tuple = field(init=False)

    def __post_init__(self):
        if not self.params.hardware_base:
            raise ConfigError(
                f"shift/LUT multiply needs base 2^(2^-n); got base {self.params.base} "
                f"with n={self.params.n}")
        n, scale = self.params.n, self.fmt.frac_bits + self.guard_bits
        entries = tuple(_iroot(1 << (k + (scale << n)), 1 << n) for k in range(1 << n))
        object.__setattr__(self, "entries", entries)

    @property
    def scale_bits(self) -> int:
        return self.fmt.frac_bits + self.guard_bits

    def array(self) -> np.ndarray:
        return np.array(self.entries, dtype=np.int64)


ACCEL_LUT = ThreadLUT()


def thread_multiply(w: LogCode, a: LogCode, lut: ThreadLUT = ACCEL_LUT,
                    counter: dict | None = None) -> int:
    """One thread: sign(w) * (LUT[frac(w'+a')] shifted by int(w'+a')), as a psum raw."""
    p = lut.params
    if a.sign != 1 and not a.is_zero:
        raise ValueError("activation codes carry no sign")
    for c in (w, a):
        if not c.is_zero and not p.code_min <= c.code <= p.code_max:
            raise ConfigError(f"code {c.code} does not fit Q({p.m}.{p.n})")
    if w.is_zero or a.is_zero:
        return 0
    g = w.code + a.code
    whole, frac = g >> p.n, g & ((1 << p.n) - 1)
    shift = whole - lut.guard_bits
    entry = lut.entries[frac]
    mag = entry << shift if shift >= 0 else entry >> -shift
    if mag > lut.fmt.max:
        mag = lut.fmt.max
        if counter is not None:
            counter["saturated"] = counter.get("saturated", 0) + 1
    return w.sign * mag


def thread_multiply_array(w: LogArray, a: LogArray, lut: ThreadLUT = ACCEL_LUT,
                          counter: dict | None = None) -> np.ndarray:
    """Vectorised thread_multiply with numpy broadcasting between w and a."""
    p = lut.params
    g = w.code.astype(np.int64) + a.code.astype(np.int64)
    whole = g >> p.n
    frac = g & ((1 << p.n) - 1)
    shift = whole - lut.guard_bits
    entry = lut.array()[frac]
    left = entry << np.clip(shift, 0, 62)
    right = entry >> np.clip(-shift, 0, 63)
    mag = np.where(shift >= 0, left, right)
    sat = mag > lut.fmt.max
    dead = np.logical_or(w.zero, a.zero)
    if counter is not None:
        counter["saturated"] = counter.get("saturated", 0) + int(np.count_nonzero(sat & ~dead))
    mag = np.minimum(mag, lut.fmt.max)
    return np.where(dead, 0, w.sign.astype(np.int64) * mag)


def pe_compute(w_vec, a: LogCode, lut: ThreadLUT = ACCEL_LUT) -> tuple:
    """Three threads sharing one activation; returns (p1, p2, p3)."""
    if len(w_vec) != THREADS:
        raise ShapeError(f"a PE takes {THREADS} weights, got {len(w_vec)}")
    return tuple(thread_multiply(w, a, lut) for w in w_vec)


def matrix_compute(inputs: LogArray, weights: LogArray, lut: ThreadLUT = ACCEL_LUT,
                   counter: dict | None = None) -> np.ndarray:
    """All 54 thread products of one (or a batch of) 6x3 PE matrices.

    inputs: (..., 6, 3); weights: (..., 6, 3, 3) with the last axis the thread.
    Returns products indexed [..., row, col, thread].
    """
    if inputs.shape[-2:] != (PE_ROWS, PE_COLS) or \
            weights.shape[-3:] != (PE_ROWS, PE_COLS, THREADS) or \
            inputs.shape[:-2] != weights.shape[:-3]:
        raise ShapeError(f"bad PE matrix operands {inputs.shape} / {weights.shape}")
    a = LogArray(inputs.sign[..., None], inputs.code[..., None], inputs.zero[..., None])
    return thread_multiply_array(weights, a, lut, counter)


def adder_net0(products: np.ndarray, fmt: PsumFormat = Q8_8) -> np.ndarray:
    """o[3r + j] = sum over PE columns of thread j in row r; shape (..., 18)."""
    products = np.asarray(products, dtype=np.int64)
    if products.shape[-3:] != (PE_ROWS, PE_COLS, THREADS):
        raise ShapeError(f"adder net 0 expects (..., 6, 3, 3), got {products.shape}")
    acc = products[..., 0, :]
    for c in range(1, PE_COLS):
        acc = fmt.acc_add(acc, products[..., c, :])
    return acc.reshape(*products.shape[:-3], PSUMS_PER_MATRIX)
