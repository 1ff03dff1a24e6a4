"""Flat binary checkpoint container.

Layout (all integers little-endian)::

    b"ANA1"                      magic + format version
    u64  epoch                   policy epoch counter
    u32  n_layers
    per layer:
      u32  n_tensors
      per tensor:
        u16  name length, utf-8 name
        u8   ndim, u64 * ndim dims
        f64 * prod(dims)         little-endian data, C order

Layer structure (kind, kernel, quantizer levels, ...) is stored as small
float64 tensors next to the parameters, so a checkpoint is self-describing.
"""

from __future__ import annotations

import io
import struct
from typing import Optional

import numpy as np

from ..noise import FAMILIES
from ..quantizer import MultiStepFn
from .layers import BatchNorm, Conv2d, Dense, MaxPool2d, QuantLayer
from .network import Network

MAGIC = b"ANA1"


class CheckpointError(ValueError):
    pass


def _layer_tensors(layer: QuantLayer) -> dict[str, np.ndarray]:
    t = {}
    lin = layer.linear
    if isinstance(lin, Dense):
        t["kind"] = np.array(0.0)
    else:
        t["kind"] = np.array(1.0)
        t["conv"] = np.array([lin.stride, lin.padding], dtype=float)
    t["w"] = layer.w
    t["b"] = layer.b
    t["noise"] = np.array(float(FAMILIES.index(layer.noise_family)))
    for key, f in (("zeta", layer.weight_q), ("act", layer.act)):
        if f is not None:
            t[f"{key}.thresholds"] = np.array(f.thresholds)
            t[f"{key}.levels"] = np.array(f.levels)
            t[f"{key}.closed"] = np.array(float(f.closed))
    if layer.pool is not None:
        t["pool"] = np.array([layer.pool.kernel, layer.pool.stride], dtype=float)
    if layer.bn is not None:
        bn = layer.bn
        t["bn.gamma"] = bn.gamma
        t["bn.beta"] = bn.beta
        t["bn.running_mean"] = bn.running_mean
        t["bn.running_var"] = bn.running_var
        t["bn.eps"] = np.array([bn.eps, bn.momentum])
    return t


def dumps(net: Network, epoch: int = 0) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<QI", epoch, net.num_layers))
    for layer in net.layers:
        tensors = _layer_tensors(layer)
        buf.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            raw = name.encode()
            buf.write(struct.pack("<H", len(raw)) + raw)
            buf.write(struct.pack("<B", arr.ndim))
            buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            buf.write(arr.tobytes())
    return buf.getvalue()


def save(net: Network, path, epoch: int = 0) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(net, epoch))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _staircase(t, key) -> Optional[MultiStepFn]:
    if f"{key}.levels" not in t:
        return None
    return MultiStepFn(tuple(t[f"{key}.thresholds"]), tuple(t[f"{key}.levels"]),
                       bool(t[f"{key}.closed"]))


def _build_layer(t: dict) -> QuantLayer:
    w = t["w"]
    if t["kind"] == 0.0:
        lin = Dense(w.shape[1], w.shape[0])
    else:
        stride, pad = (int(v) for v in t["conv"])
        lin = Conv2d(w.shape[1], w.shape[0], w.shape[2], stride, pad)
    pool = MaxPool2d(*(int(v) for v in t["pool"])) if "pool" in t else None
    bn = None
    if "bn.gamma" in t:
        eps, momentum = t["bn.eps"]
        bn = BatchNorm(len(t["bn.gamma"]), float(eps), float(momentum))
        bn.gamma, bn.beta = t["bn.gamma"], t["bn.beta"]
        bn.running_mean, bn.running_var = t["bn.running_mean"], t["bn.running_var"]
    family = FAMILIES[int(t["noise"].reshape(-1)[0])] if "noise" in t else "uniform"
    return QuantLayer(lin, w, t["b"], _staircase(t, "zeta"), _staircase(t, "act"), pool, bn, family)


def loads(data: bytes) -> tuple[Network, int]:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError("bad magic: not an ANA1 checkpoint")
    epoch, n_layers = r.unpack("<QI")
    layers = []
    for _ in range(n_layers):
        (n_tensors,) = r.unpack("<I")
        t = {}
        for _ in range(n_tensors):
            (name_len,) = r.unpack("<H")
            name = r.take(name_len).decode()
            (ndim,) = r.unpack("<B")
            shape = r.unpack(f"<{ndim}Q") if ndim else ()
            count = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(r.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)
            t[name] = arr
        try:
            layers.append(_build_layer(t))
        except KeyError as e:
            raise CheckpointError(f"layer record missing tensor {e}") from None
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after last layer")
    return Network(layers), epoch


def load(path) -> tuple[Network, int]:
    with open(path, "rb") as fh:
        return loads(fh.read())
