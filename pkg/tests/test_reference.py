"""Brute-force oracles."""

import numpy as np
import pytest

from lognpu.errors import ShapeError
from lognpu.quantizer import dequantize_array, log_quantize_array
from lognpu.reference import conv2d_oracle, conv2d_quant_oracle, out_size


def test_identity_1x1(rng):
    x = rng.normal(size=(3, 5, 4))
    w = np.eye(3).reshape(3, 3, 1, 1)
    np.testing.assert_array_equal(conv2d_oracle(x, w, 1, mode="pointwise"), x)


def test_all_ones():
    out = conv2d_oracle(np.ones((1, 5, 5)), np.ones((1, 1, 3, 3)), 3)
    assert out.shape == (1, 3, 3) and np.all(out == 9)


def test_example_shapes():
    assert (out_size(12, 3, 1), out_size(6, 3, 1)) == (10, 4)
    assert (out_size(12, 3, 2, 1), out_size(6, 3, 2, 1)) == (6, 3)


def test_depthwise_is_per_channel(rng):
    x = rng.normal(size=(4, 6, 6))
    w = rng.normal(size=(4, 1, 3, 3))
    out = conv2d_oracle(x, w, 3, mode="depthwise", pad=1)
    for c in range(4):
        solo = conv2d_oracle(x[c:c + 1], w[c:c + 1], 3, pad=1)
        np.testing.assert_array_equal(out[c], solo[0])


def test_shape_errors(rng):
    with pytest.raises(ShapeError):
        conv2d_oracle(np.ones((2, 4, 4)), np.ones((1, 3, 3, 3)), 3)
    with pytest.raises(ShapeError):
        conv2d_oracle(np.ones((2, 4, 4)), np.ones((1, 2, 3, 3)), 5)
    with pytest.raises(ValueError):
        conv2d_oracle(np.ones((2, 4, 4)), np.ones((1, 2, 3, 3)), 3, mode="grouped")


def test_quant_oracle_zero_weights(rng):
    x = log_quantize_array(np.abs(rng.normal(size=(3, 7, 7))))
    w = log_quantize_array(np.zeros((2, 3, 5, 5)))
    assert not conv2d_quant_oracle(x, w, 5).any()


@pytest.mark.parametrize("k, s, mode, pad", [(3, 1, "standard", 1), (5, 2, "standard", 2),
                                              (3, 2, "depthwise", 1), (1, 1, "pointwise", 0)])
def test_quant_oracle_close_to_float(rng, k, s, mode, pad):
    """Truncated products differ from exact ones by less than one LSB each."""
    c = 4
    x = log_quantize_array(np.abs(rng.normal(size=(c, 9, 9))))
    p = c if mode == "depthwise" else 3
    w = log_quantize_array(rng.normal(size=(p, 1 if mode == "depthwise" else c, k, k)))
    q = conv2d_quant_oracle(x, w, k, s, mode, pad) / 256.0
    ref = conv2d_oracle(dequantize_array(x), dequantize_array(w), k, s, mode, pad)
    terms = k * k * (1 if mode == "depthwise" else c)
    assert np.all(np.abs(q - ref) <= terms / 256.0)
