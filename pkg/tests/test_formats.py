"""Tensor files and network descriptors."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lognpu.errors import DescriptorError, ShapeError
from lognpu.formats import (BUNDLED, KIND_LOG_ACT, KIND_LOG_WEIGHT, KIND_PSUM, KIND_REAL,
                            bundled_descriptor, format_descriptor, pack_codes,
                            parse_descriptor, read_tensor, unpack_codes, write_tensor)
from lognpu.quantizer import LogArray, LogCode, log_quantize_array


def test_code_bytes():
    a = LogArray.from_codes([LogCode(1, 0), LogCode(-1, -32), LogCode(1, 31), LogCode.zero()])
    b = pack_codes(a, signed=True)
    assert b.tolist() == [0x00, 0xA0, 0x1F, 0xFF]
    assert unpack_codes(b).equals(a)


@given(st.lists(st.tuples(st.sampled_from([1, -1]), st.integers(-32, 31), st.booleans()),
                min_size=1, max_size=40))
def test_code_roundtrip(items):
    a = LogArray.from_codes([LogCode(s, c, z) for s, c, z in items])
    assert unpack_codes(pack_codes(a, signed=True)).equals(a)


def test_tensor_roundtrip(tmp_path, rng):
    x = rng.normal(size=(2, 3, 4))
    write_tensor(tmp_path / "r.tns", x, KIND_REAL)
    assert read_tensor(tmp_path / "r.tns")[1].tolist() == x.tolist()
    w = log_quantize_array(x)
    write_tensor(tmp_path / "w.tns", w, KIND_LOG_WEIGHT)
    kind, back = read_tensor(tmp_path / "w.tns")
    assert kind == KIND_LOG_WEIGHT and back.equals(w)
    a = log_quantize_array(np.abs(x))
    write_tensor(tmp_path / "a.tns", a, KIND_LOG_ACT)
    assert read_tensor(tmp_path / "a.tns")[1].equals(a)
    with pytest.raises(ValueError):
        write_tensor(tmp_path / "bad.tns", w, KIND_LOG_ACT)
    write_tensor(tmp_path / "p.tns", np.array([[-5, 300]]), KIND_PSUM)
    assert read_tensor(tmp_path / "p.tns")[1].tolist() == [[-5, 300]]


def test_tensor_corrupt(tmp_path):
    (tmp_path / "x.tns").write_bytes(b"NOPE1234")
    with pytest.raises(DescriptorError):
        read_tensor(tmp_path / "x.tns")
    write_tensor(tmp_path / "y.tns", np.zeros(4), KIND_REAL)
    raw = (tmp_path / "y.tns").read_bytes()
    (tmp_path / "y.tns").write_bytes(raw[:-3])
    with pytest.raises(DescriptorError, match="payload"):
        read_tensor(tmp_path / "y.tns")


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_roundtrip(name):
    net = bundled_descriptor(name)
    assert parse_descriptor(format_descriptor(net), name) == net


def test_bundled_sizes():
    assert len(bundled_descriptor("vgg16").layers) == 13
    assert len(bundled_descriptor("mobilenet_v1").layers) == 27
    assert len(bundled_descriptor("resnet34").layers) == 35


@pytest.mark.parametrize("text, line", [
    ("lognpu-net 1\na standard 3 1 8 8 3 4\n", 2),
    ("lognpu-net 1\n# c\na standard 3 1 8 8 3 4 1\nb conv 3 1 8 8 4 4 1\n", 4),
    ("lognpu-net 1\na standard 3 1 8 x 3 4 1\n", 2),
    ("lognpu-net 2\n", 1),
    ("hello\n", 1),
    ("lognpu-net 1\na standard 3 1 8 8 3 4 1\na standard 3 1 8 8 4 4 1\n", 3),
    ("lognpu-net 1\na standard 3 1 8 8 3 4 1 zz\n", 2),
    ("lognpu-net 1\na standard 3 1 8 8 3 4 3\n", 2),
])
def test_descriptor_errors_name_lines(text, line):
    with pytest.raises(DescriptorError) as e:
        parse_descriptor(text)
    assert e.value.line == line and str(e.value).startswith(f"line {line}:")


def test_chain_mismatch():
    with pytest.raises(ShapeError):
        parse_descriptor("lognpu-net 1\na standard 3 1 8 8 3 4 1\nb standard 3 1 8 8 5 4 1\n")
    net = parse_descriptor("lognpu-net 1\na standard 3 1 8 8 3 4 1\npool 2\n"
                           "b standard 3 1 4 4 4 4 1\nc standard 1 2 8 8 4 4 0 a\n")
    assert net.layers[1].pool == 2 and net.layers[2].source == "a"
