"""Single-file checkpoints.

Layout::

    8 bytes   magic b"TBLSTMCK"
    4 bytes   format version, uint32 little-endian
    8 bytes   header length H, uint64 little-endian
    H bytes   UTF-8 JSON manifest (sorted keys)
    ...       tensor payload, little-endian fixed width, concatenated

The manifest records config, step, hyperparameters, optimizer scalars,
generator states, free-form ``extra`` metadata, and for every tensor its
name, shape, dtype, byte offset and byte length within the payload, plus a
CRC-32 of the whole payload.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from ..errors import CheckpointError
from .optim import AdamState

MAGIC = b"TBLSTMCK"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


@dataclass
class Checkpoint:
    config: dict[str, Any]
    params: dict[str, np.ndarray]
    step: int = 0
    adam: AdamState | None = None
    rng_states: dict[str, Any] = field(default_factory=dict)
    hyper: dict[str, Any] = field(default_factory=dict)
    extra: dict[str, Any] = field(default_factory=dict)
    version: int = FORMAT_VERSION


def _le(arr: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))


def to_bytes(ckpt: Checkpoint) -> bytes:
    tensors: list[tuple[str, np.ndarray]] = [(f"param/{k}", v) for k, v in ckpt.params.items()]
    adam_meta = None
    if ckpt.adam is not None:
        adam_meta = {**ckpt.adam.hyper(), "t": ckpt.adam.t}
        tensors += [(f"adam_m/{k}", v) for k, v in ckpt.adam.m.items()]
        tensors += [(f"adam_v/{k}", v) for k, v in ckpt.adam.v.items()]
    manifest = []
    chunks = []
    offset = 0
    for name, arr in tensors:
        raw = _le(np.asarray(arr)).tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": _le(np.asarray(arr)).dtype.str,
                         "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "config": ckpt.config, "step": ckpt.step, "adam": adam_meta, "rng": ckpt.rng_states,
        "hyper": ckpt.hyper, "extra": ckpt.extra, "tensors": manifest,
        "payload_bytes": len(payload), "crc32": zlib.crc32(payload),
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREFIX.pack(MAGIC, ckpt.version, len(head)) + head + payload


def from_bytes(blob: bytes) -> Checkpoint:
    if len(blob) < _PREFIX.size:
        raise CheckpointError("file too short to be a checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}; expected {FORMAT_VERSION}")
    start = _PREFIX.size
    if len(blob) < start + hlen:
        raise CheckpointError("checkpoint truncated inside its header")
    try:
        header = json.loads(blob[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CheckpointError(f"checkpoint header is corrupt: {err}") from None
    payload = blob[start + hlen:]
    if len(payload) != header["payload_bytes"]:
        raise CheckpointError(
            f"checkpoint payload has {len(payload)} bytes, header declares {header['payload_bytes']}"
        )
    if zlib.crc32(payload) != header["crc32"]:
        raise CheckpointError("checkpoint payload checksum mismatch")

    params: dict[str, np.ndarray] = {}
    moments: dict[str, dict[str, np.ndarray]] = {"adam_m": {}, "adam_v": {}}
    for entry in header["tensors"]:
        lo, n = entry["offset"], entry["nbytes"]
        arr = np.frombuffer(payload[lo:lo + n], dtype=np.dtype(entry["dtype"]))
        arr = arr.reshape(entry["shape"]).astype(arr.dtype.newbyteorder("="))
        kind, _, name = entry["name"].partition("/")
        if kind == "param":
            params[name] = arr
        elif kind in moments:
            moments[kind][name] = arr
        else:
            raise CheckpointError(f"unknown tensor group {kind!r}")
    adam = None
    if header["adam"] is not None:
        meta = dict(header["adam"])
        t = meta.pop("t")
        adam = AdamState(**meta, t=t, m=moments["adam_m"], v=moments["adam_v"])
    return Checkpoint(config=header["config"], params=params, step=header["step"], adam=adam,
                      rng_states=header["rng"], hyper=header["hyper"], extra=header["extra"],
                      version=version)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    """Write atomically: the target only appears once fully written."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(to_bytes(ckpt))
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        blob = Path(path).read_bytes()
    except OSError as err:
        raise CheckpointError(f"cannot read checkpoint {path}: {err}") from None
    return from_bytes(blob)
