"""
Brute-force convolution oracles.

Nothing here touches the dataflow or the shift/LUT datapath: products of log
codes are evaluated exactly with integer roots and the convolution is a plain
direct loop over filters, channels and kernel taps.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from .errors import ShapeError
from .pe_core import Q8_8, PsumFormat, _iroot
from .quantizer import ACCEL_PARAMS, LogArray, QuantParams

MODES = ("standard", "depthwise", "pointwise")


def out_size(size: int, kernel: int, stride: int, pad: int = 0) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def _check(in_shape, w_shape, kernel, stride, mode, pad):
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if len(in_shape) != 3 or len(w_shape) != 4:
        raise ShapeError("input must be (C, H, W) and weights (P, C, k, k)")
    c, h, w = in_shape
    p, cw, kh, kw = w_shape
    if (kh, kw) != (kernel, kernel):
        raise ShapeError(f"weights are {kh}x{kw}, kernel is {kernel}")
    if mode == "depthwise":
        if cw != 1 or p != c:
            raise ShapeError(f"depthwise weights must be ({c}, 1, k, k), got {w_shape}")
    elif cw != c:
        raise ShapeError(f"weights have {cw} channels, input has {c}")
    if mode == "pointwise" and kernel != 1:
        raise ShapeError("pointwise convolution needs kernel 1")
    if out_size(h, kernel, stride, pad) < 1 or out_size(w, kernel, stride, pad) < 1:
        raise ShapeError("kernel larger than padded input")


def conv2d_oracle(x, weights, kernel: int, stride: int = 1, mode: str = "standard",
                  pad: int = 0) -> np.ndarray:
    """Direct convolution of real tensors with exactly rounded (fsum) accumulation."""
    x = np.asarray(x, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    _check(x.shape, weights.shape, kernel, stride, mode, pad)
    c_in, h, w = x.shape
    n_out = weights.shape[0]
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    oh, ow = out_size(h, kernel, stride, pad), out_size(w, kernel, stride, pad)
    out = np.zeros((n_out, oh, ow))
    for f in range(n_out):
        chans = [f] if mode == "depthwise" else range(c_in)
        for y in range(oh):
            for xo in range(ow):
                terms = []
                for ci, c in enumerate(chans):
                    wc = 0 if mode == "depthwise" else c
                    for ky in range(kernel):
                        for kx in range(kernel):
                            terms.append(xp[c, y * stride + ky, xo * stride + kx]
                                         * weights[f, wc, ky, kx])
                out[f, y, xo] = math.fsum(terms)
    return out


@lru_cache(maxsize=None)
def _product_table(params: QuantParams, fmt: PsumFormat):
    """|product| raw for every exponent sum, offset by 2 * code_min."""
    lo = 2 * params.code_min
    hi = 2 * params.code_max
    mags = []
    for g in range(lo, hi + 1):
        if params.hardware_base:
            # floor(2^(g/2^n) * 2^F) exactly
            e = g + (fmt.frac_bits << params.n)
            mag = _iroot(1 << e, 1 << params.n) if e >= 0 else 0
        else:
            mag = math.floor(params.base ** g * 2.0 ** fmt.frac_bits)
        mags.append(min(mag, fmt.max))
    return lo, np.array(mags, dtype=np.int64)


def exact_product(w_code: int, a_code: int, w_sign: int = 1,
                  params: QuantParams = ACCEL_PARAMS, fmt: PsumFormat = Q8_8) -> int:
    """trunc(dequant(w) * dequant(a) * 2^F), saturated to the psum word."""
    lo, mags = _product_table(params, fmt)
    return w_sign * int(mags[w_code + a_code - lo])


def conv2d_quant_oracle(x: LogArray, weights: LogArray, kernel: int, stride: int = 1,
                        mode: str = "standard", pad: int = 0,
                        params: QuantParams = ACCEL_PARAMS,
                        fmt: PsumFormat = Q8_8) -> np.ndarray:
    """Psum-format convolution of log-coded tensors (the bit-exact target).

    Each product is the truncated exact product; sums are exact and the result
    is saturated to the accumulator and then to the output word.
    """
    _check(x.shape, weights.shape, kernel, stride, mode, pad)
    c_in, h, w = x.shape
    n_out = weights.shape[0]
    oh, ow = out_size(h, kernel, stride, pad), out_size(w, kernel, stride, pad)
    lo, mags = _product_table(params, fmt)

    def padded(a, fill):
        return np.pad(a, ((0, 0), (pad, pad), (pad, pad)), constant_values=fill)

    xc = padded(x.code.astype(np.int64), 0)
    xz = padded(x.zero, True)
    out = np.zeros((n_out, oh, ow), dtype=np.int64)
    span_y = slice(0, (oh - 1) * stride + 1, stride)
    span_x = slice(0, (ow - 1) * stride + 1, stride)
    for f in range(n_out):
        chans = [f] if mode == "depthwise" else range(c_in)
        for c in chans:
            wc = 0 if mode == "depthwise" else c
            for ky in range(kernel):
                for kx in range(kernel):
                    if weights.zero[f, wc, ky, kx]:
                        continue
                    sy = slice(span_y.start + ky, span_y.stop + ky, stride)
                    sx = slice(span_x.start + kx, span_x.stop + kx, stride)
                    g = xc[c, sy, sx] + int(weights.code[f, wc, ky, kx])
                    prod = int(weights.sign[f, wc, ky, kx]) * mags[g - lo]
                    out[f] += np.where(xz[c, sy, sx], 0, prod)
    out = np.clip(out, fmt.acc_min, fmt.acc_max)
    return fmt.saturate(out)
