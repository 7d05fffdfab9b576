"""Binary weight file (little-endian).

Header::

    b"IRWB"  u32 version=1  u32 channels_in  u32 feature_width
    u32 layer_count  f32 trained_noise_level

Then per layer::

    u32 in_ch  u32 out_ch  u32 dilation  u32 flags (bit0 = bn, bit1 = relu)
    f32 kernel[out][in][3][3]   (cross-correlation taps, row-major)
    f32 bias[out]
    if bn: f32 gamma[out], beta[out], running_mean[out], running_var[out], f32 eps
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .errors import FormatError, ValidationError
from .network import BnParams, LayerParams, LayerSpec, NetworkSpec, WeightBundle

MAGIC = b"IRWB"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIf")
_LAYER = struct.Struct("<IIII")
FLAG_BN = 1
FLAG_RELU = 2


def _f32(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def dumps(bundle: WeightBundle) -> bytes:
    bundle.check_finite()
    spec = bundle.spec
    parts = [_HEADER.pack(MAGIC, VERSION, spec.channels_in, spec.feature_width,
                          len(bundle.layers), bundle.trained_noise_level)]
    for lp in bundle.layers:
        ls = lp.spec
        flags = (FLAG_BN if ls.has_bn else 0) | (FLAG_RELU if ls.has_relu else 0)
        parts.append(_LAYER.pack(ls.in_channels, ls.out_channels, ls.dilation, flags))
        parts.append(_f32(lp.weight))
        parts.append(_f32(lp.bias))
        if ls.has_bn:
            bn = lp.bn
            parts += [_f32(bn.gamma), _f32(bn.beta), _f32(bn.mean), _f32(bn.var),
                      struct.pack("<f", bn.eps)]
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("weight file is truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, st: struct.Struct):
        return st.unpack(self.take(st.size))

    def floats(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float32)


def loads(data: bytes) -> WeightBundle:
    r = _Reader(data)
    magic, version, channels_in, width, count, level = r.unpack(_HEADER)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported weight format version {version}")
    specs, layers = [], []
    for _ in range(count):
        in_ch, out_ch, dilation, flags = r.unpack(_LAYER)
        try:
            ls = LayerSpec(in_ch, out_ch, dilation, bool(flags & FLAG_BN), bool(flags & FLAG_RELU))
        except ValidationError as exc:
            raise FormatError(str(exc)) from exc
        w = r.floats(out_ch * in_ch * 9).reshape(out_ch, in_ch, 3, 3)
        b = r.floats(out_ch)
        bn = None
        if ls.has_bn:
            g, beta, mean, var = (r.floats(out_ch) for _ in range(4))
            (eps,) = struct.unpack("<f", r.take(4))
            bn = BnParams(g, beta, mean, var, eps)
        specs.append(ls)
        layers.append(LayerParams(ls, w, b, bn))
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes after last layer")
    try:
        spec = NetworkSpec(tuple(specs), channels_in, width)
        bundle = WeightBundle(spec, layers, level)
        bundle.check_finite()
    except (ValidationError, ValueError) as exc:
        raise FormatError(f"inconsistent weight file: {exc}") from exc
    return bundle


def save_weights(bundle: WeightBundle, path) -> None:
    data = dumps(bundle)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def load_weights(path) -> WeightBundle:
    with open(path, "rb") as fh:
        return loads(fh.read())
