"""
File formats: ``.tns`` tensors and ``.net`` network descriptors.

Tensor file (little-endian)::

    magic  b"NMXT"
    u8     version (1)
    u8     kind: 0 real (f64), 1 log activation, 2 log weight, 3 psum (i16)
    u8     ndim
    u8     reserved
    u32    dims[ndim]
    payload

A log code is one byte: bit 7 sign (weights only), bit 6 zero, bits 5..0 the
two's-complement code; 0xFF marks an exact zero.

Descriptor: first non-comment line ``lognpu-net <version>``, then one layer per
line::

    name  type  kernel  stride  in_w  in_h  in_c  out_c  pad  [from]

``#`` starts a comment.  ``from`` names an earlier layer whose output feeds
this one (residual shortcuts); by default the previous layer is used.  A line
``pool <factor>`` states that the next layer reads its source downsampled by
``factor`` (pooling runs outside the CONV core and is not simulated).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataflow import CONV_TYPES, LayerConfig
from .errors import ConfigError, DescriptorError, ShapeError
from .quantizer import ACCEL_PARAMS, LogArray, QuantParams

MAGIC = b"NMXT"
TENSOR_VERSION = 1
KIND_REAL, KIND_LOG_ACT, KIND_LOG_WEIGHT, KIND_PSUM = range(4)
ZERO_BYTE = 0xFF

NET_MAGIC = "lognpu-net"
NET_VERSION = 1


# ---- log code bytes -------------------------------------------------------------

def pack_codes(a: LogArray, signed: bool, params: QuantParams = ACCEL_PARAMS) -> np.ndarray:
    if params.code_bits > 6:
        raise ConfigError("byte format holds at most 6-bit codes")
    if not signed and np.any(a.sign[~a.zero] != 1):
        raise ValueError("activation tensors cannot hold negative codes")
    b = (a.code.astype(np.int16) & 0x3F).astype(np.uint8)
    b |= np.where(a.sign < 0, 0x80, 0).astype(np.uint8)
    return np.where(a.zero, ZERO_BYTE, b).astype(np.uint8)


def unpack_codes(b: np.ndarray) -> LogArray:
    b = np.asarray(b, np.uint8)
    zero = b == ZERO_BYTE
    if np.any((b & 0x40) & ~zero):
        raise DescriptorError("log code byte with reserved bit set")
    code = (b & 0x3F).astype(np.int16)
    code = np.where(code >= 32, code - 64, code).astype(np.int16)
    sign = np.where(b & 0x80, -1, 1).astype(np.int8)
    return LogArray(np.where(zero, 1, sign).astype(np.int8),
                    np.where(zero, 0, code).astype(np.int16), zero)


# ---- tensor files ---------------------------------------------------------------

def write_tensor(path, data, kind: int) -> None:
    """``data`` is a LogArray for log kinds, else an ndarray."""
    shape = data.shape
    if kind == KIND_REAL:
        payload = np.asarray(data, "<f8").tobytes()
    elif kind in (KIND_LOG_ACT, KIND_LOG_WEIGHT):
        payload = pack_codes(data, kind == KIND_LOG_WEIGHT).tobytes()
    elif kind == KIND_PSUM:
        payload = np.asarray(data, "<i2").tobytes()
    else:
        raise ValueError(f"unknown tensor kind {kind}")
    header = MAGIC + struct.pack("<BBBB", TENSOR_VERSION, kind, len(shape), 0)
    header += struct.pack(f"<{len(shape)}I", *shape)
    Path(path).write_bytes(header + payload)


def read_tensor(path):
    """Returns (kind, data)."""
    raw = Path(path).read_bytes()
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise DescriptorError(f"{path}: not a tensor file")
    version, kind, ndim, _ = struct.unpack_from("<BBBB", raw, 4)
    if version != TENSOR_VERSION:
        raise DescriptorError(f"{path}: unsupported tensor version {version}")
    if len(raw) < 8 + 4 * ndim:
        raise DescriptorError(f"{path}: truncated header")
    shape = struct.unpack_from(f"<{ndim}I", raw, 8)
    body = raw[8 + 4 * ndim:]
    n = int(np.prod(shape, dtype=np.int64))
    width = {KIND_REAL: 8, KIND_LOG_ACT: 1, KIND_LOG_WEIGHT: 1, KIND_PSUM: 2}.get(kind)
    if width is None:
        raise DescriptorError(f"{path}: unknown tensor kind {kind}")
    if len(body) != n * width:
        raise DescriptorError(f"{path}: payload is {len(body)} bytes, expected {n * width}")
    if kind == KIND_REAL:
        return kind, np.frombuffer(body, "<f8").reshape(shape).copy()
    if kind == KIND_PSUM:
        return kind, np.frombuffer(body, "<i2").reshape(shape).astype(np.int64)
    return kind, unpack_codes(np.frombuffer(body, np.uint8)).reshape(*shape)


# ---- network descriptors --------------------------------------------------------

@dataclass(frozen=True)
class NetLayer:
    cfg: LayerConfig
    source: str | None = None  # None: previous layer
    pool: int = 1

    @property
    def name(self) -> str:
        return self.cfg.name


@dataclass(frozen=True)
class NetworkDescriptor:
    name: str
    layers: tuple

    @property
    def configs(self) -> list:
        return [l.cfg for l in self.layers]

    def check_chain(self) -> None:
        """Every layer's input must match the output of its source layer."""
        outputs = {}
        prev = None
        for i, layer in enumerate(self.layers):
            cfg = layer.cfg
            src = layer.source
            if src is not None:
                if src not in outputs:
                    raise DescriptorError(f"layer {cfg.name}: unknown source {src!r}")
                shape = outputs[src]
            elif prev is not None:
                shape = outputs[prev]
            else:
                shape = None
            if shape is not None and layer.pool > 1:
                shape = (shape[0], shape[1] // layer.pool, shape[2] // layer.pool)
            if shape is not None and shape != cfg.input_shape:
                raise ShapeError(
                    f"layer {cfg.name}: input {cfg.input_shape} does not chain with "
                    f"{src or prev} output {shape}")
            outputs[cfg.name] = cfg.output_shape
            prev = cfg.name


_FIELDS = ("name", "type", "kernel", "stride", "in_w", "in_h", "in_c", "out_c", "pad")


def parse_descriptor(text: str, name: str = "network", check: bool = True) -> NetworkDescriptor:
    layers = []
    seen = set()
    header = False
    pool = 1
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        tok = body.split()
        if not header:
            if tok[0] != NET_MAGIC or len(tok) != 2:
                raise DescriptorError(f"expected '{NET_MAGIC} <version>' header", lineno)
            if tok[1] != str(NET_VERSION):
                raise DescriptorError(f"unsupported descriptor version {tok[1]}", lineno)
            header = True
            continue
        if tok[0] == "pool":
            if len(tok) != 2 or not tok[1].isdigit() or int(tok[1]) < 2 or pool > 1:
                raise DescriptorError("expected 'pool <factor>' with factor >= 2", lineno)
            pool = int(tok[1])
            continue
        if len(tok) not in (len(_FIELDS), len(_FIELDS) + 1):
            raise DescriptorError(f"expected {len(_FIELDS)} or {len(_FIELDS) + 1} fields, "
                                  f"got {len(tok)}", lineno)
        lname, ltype = tok[0], tok[1]
        if ltype not in CONV_TYPES:
            raise DescriptorError(f"unknown layer type {ltype!r}", lineno)
        if lname in seen:
            raise DescriptorError(f"duplicate layer name {lname!r}", lineno)
        try:
            nums = [int(t) for t in tok[2:9]]
        except ValueError as e:
            raise DescriptorError(f"non-integer field: {e}", lineno) from None
        try:
            cfg = LayerConfig(nums[0], nums[1], nums[2], nums[3], nums[4], nums[5], ltype,
                              nums[6], lname)
        except ConfigError as e:
            raise DescriptorError(str(e), lineno) from None
        source = tok[9] if len(tok) > len(_FIELDS) else None
        if source is not None and source not in seen:
            raise DescriptorError(f"source {source!r} is not an earlier layer", lineno)
        seen.add(lname)
        layers.append(NetLayer(cfg, source, pool))
        pool = 1
    if pool > 1:
        raise DescriptorError("'pool' directive after the last layer")
    if not header:
        raise DescriptorError("empty descriptor")
    if not layers:
        raise DescriptorError("descriptor has no layers")
    net = NetworkDescriptor(name, tuple(layers))
    if check:
        net.check_chain()
    return net


def format_descriptor(net: NetworkDescriptor) -> str:
    lines = [f"{NET_MAGIC} {NET_VERSION}",
             "# " + " ".join(_FIELDS) + " [from]"]
    for layer in net.layers:
        c = layer.cfg
        if layer.pool > 1:
            lines.append(f"pool {layer.pool}")
        row = [c.name, c.conv_type, c.kernel, c.stride, c.in_w, c.in_h, c.in_c, c.out_c, c.pad]
        if layer.source is not None:
            row.append(layer.source)
        lines.append(" ".join(str(v) for v in row))
    return "\n".join(lines) + "\n"


def load_descriptor(path, check: bool = True) -> NetworkDescriptor:
    path = Path(path)
    return parse_descriptor(path.read_text(), path.stem, check)


def bundled_descriptor(name: str) -> NetworkDescriptor:
    """One of the descriptors shipped with the package (vgg16, mobilenet_v1, resnet34)."""
    from importlib.resources import files

    res = files("lognpu").joinpath("data").joinpath(f"{name}.net")
    if not res.is_file():
        raise FileNotFoundError(f"no bundled descriptor {name!r}")
    return parse_descriptor(res.read_text(), name)


BUNDLED = ("vgg16", "mobilenet_v1", "resnet34")
