"""Binary checkpoint format.

Layout (all little-endian)::

    b"LLAB" | u16 version | u64 header length | JSON header | float64 values

The header is canonical JSON (sorted keys, compact separators) so that
save -> load -> save reproduces identical bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nn import Layout, NetworkSpec

MAGIC = b"LLAB"
VERSION = 1


class CheckpointFormatError(ValueError):
    pass


@dataclass
class Checkpoint:
    net: NetworkSpec
    params: np.ndarray
    meta: dict = field(default_factory=dict)


def encode(net: NetworkSpec, params: np.ndarray, meta: dict | None = None) -> bytes:
    params = np.asarray(params, dtype=np.float64)
    layout = net.layout()
    if params.shape != (layout.size,):
        raise ValueError(f"params length {params.size} != network size {layout.size}")
    header = {"architecture": net.to_dict(), "layout": layout.to_list(), "meta": meta or {}}
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<HQ", VERSION, len(blob)) + blob + params.astype("<f8").tobytes()


def decode(data: bytes) -> Checkpoint:
    if data[:4] != MAGIC:
        raise CheckpointFormatError("bad magic bytes, not a checkpoint")
    if len(data) < 14:
        raise CheckpointFormatError("truncated checkpoint header")
    version, hlen = struct.unpack("<HQ", data[4:14])
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    header = json.loads(data[14 : 14 + hlen].decode("utf-8"))
    net = NetworkSpec.from_dict(header["architecture"])
    layout = Layout.from_list(header["layout"])
    if layout != net.layout():
        raise CheckpointFormatError("stored layout does not match architecture")
    body = data[14 + hlen :]
    if len(body) != 8 * layout.size:
        raise CheckpointFormatError(f"expected {8 * layout.size} parameter bytes, found {len(body)}")
    params = np.frombuffer(body, dtype="<f8").astype(np.float64)
    return Checkpoint(net, params, header.get("meta", {}))


def save_checkpoint(path, net: NetworkSpec, params: np.ndarray, meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode(net, params, meta))
    return path


def load_checkpoint(path) -> Checkpoint:
    return decode(Path(path).read_bytes())
