"""Binary checkpoints: magic, version, config JSON, then float64 LE blobs.

Blob order: parameters, batch-norm running statistics, RMSprop accumulators
(preceded by a one-byte presence flag), each in ``EDNetwork`` layer order.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .model import EDConfig, EDNetwork

MAGIC = b"SGED"
VERSION = 1
_HEAD = struct.Struct("<4sHI")


class CheckpointError(ValueError):
    pass


def _blob(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def to_bytes(net: EDNetwork) -> bytes:
    cfg = net.config.to_json().encode()
    parts = [_HEAD.pack(MAGIC, VERSION, len(cfg)), cfg]
    parts += [_blob(layer.params[key]) for _, layer, key in net.named_params()]
    parts += [_blob(layer.buffers[key]) for _, layer, key in net.named_buffers()]
    names = [name for name, _, _ in net.named_params()]
    has_rms = all(n in net.rms.state for n in names)
    parts.append(b"\x01" if has_rms else b"\x00")
    if has_rms:
        parts += [_blob(net.rms.state[n]) for n in names]
    return b"".join(parts)


def from_bytes(data: bytes, expected: EDConfig | None = None) -> EDNetwork:
    if len(data) < _HEAD.size:
        raise CheckpointError("truncated checkpoint header")
    magic, version, n = _HEAD.unpack_from(data)
    if magic != MAGIC or version != VERSION:
        raise CheckpointError("not an ED checkpoint (bad magic or version)")
    try:
        cfg = EDConfig.from_json(data[_HEAD.size : _HEAD.size + n].decode())
    except (ValueError, TypeError) as exc:
        raise CheckpointError(f"corrupt config: {exc}") from exc
    if expected is not None and cfg != expected:
        raise CheckpointError(f"checkpoint config {cfg} does not match expected {expected}")
    net = EDNetwork(cfg)
    pos = _HEAD.size + n

    def take(like: np.ndarray) -> np.ndarray:
        nonlocal pos
        size = like.size * 8
        if pos + size > len(data):
            raise CheckpointError("size mismatch: checkpoint truncated")
        a = np.frombuffer(data, "<f8", like.size, pos).reshape(like.shape).astype(like.dtype)
        pos += size
        return a

    for _, layer, key in net.named_params():
        layer.params[key] = take(layer.params[key])
    for _, layer, key in net.named_buffers():
        layer.buffers[key] = take(layer.buffers[key])
    if pos >= len(data):
        raise CheckpointError("size mismatch: missing optimizer flag")
    flag = data[pos]
    pos += 1
    if flag:
        for name, layer, key in net.named_params():
            net.rms.state[name] = take(layer.params[key])
    if pos != len(data):
        raise CheckpointError("size mismatch: trailing bytes")
    return net


def save_checkpoint(net: EDNetwork, path) -> None:
    Path(path).write_bytes(to_bytes(net))


def load_checkpoint(path, expected: EDConfig | None = None) -> EDNetwork:
    return from_bytes(Path(path).read_bytes(), expected)
