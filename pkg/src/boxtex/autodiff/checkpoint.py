"""Single-file checkpoint container.

Layout: magic 'BXCK', uint32 version, uint64 header length (little endian),
UTF-8 JSON header, then the raw little-endian payload. The header maps
tensor names to dtype/shape/byte-offset (relative to payload start) and
carries a free-form meta dict.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

_MAGIC = b"BXCK"
_VERSION = 1
_DTYPES = {"float32": np.float32, "float64": np.float64,
           "int32": np.int32, "int64": np.int64}


def save_checkpoint(path, tensors: dict[str, np.ndarray],
                    meta: dict | None = None) -> None:
    entries = {}
    offset = 0
    blobs = []
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        if arr.dtype.name not in _DTYPES:
            arr = arr.astype(np.float32)
        blob = arr.astype(arr.dtype.newbyteorder("<")).tobytes()
        entries[name] = {"dtype": arr.dtype.name, "shape": list(arr.shape),
                         "offset": offset, "nbytes": len(blob)}
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"meta": meta or {}, "tensors": entries}).encode("utf-8")
    with open(os.fspath(path), "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(os.fspath(path), "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        payload = fh.read()
    tensors = {}
    for name, ent in header["tensors"].items():
        dt = np.dtype(_DTYPES[ent["dtype"]]).newbyteorder("<")
        arr = np.frombuffer(payload, dtype=dt, count=int(np.prod(ent["shape"], dtype=np.int64)) if ent["shape"] else 1,
                            offset=ent["offset"])
        tensors[name] = arr.astype(_DTYPES[ent["dtype"]]).reshape(ent["shape"])
    return tensors, header.get("meta", {})
