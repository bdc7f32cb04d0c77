"""Parameter files.

Binary layout (all integers little-endian)::

    magic       8 bytes   b"VARNNPRM"
    version     uint32    1
    n_tensors   uint32
    per tensor, in declaration order:
        name_len  uint16
        name      name_len bytes, UTF-8
        ndim      uint8
        shape     ndim x uint32
        values    prod(shape) x float64 (IEEE-754, little-endian), row-major

The JSON form is ``{"format": "varnn-params", "version": 1, "tensors":
[{"name", "shape", "values"}...]}`` with values flattened row-major.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict

import numpy as np

from .params import ParamSet

MAGIC = b"VARNNPRM"
VERSION = 1


def to_bytes(params: ParamSet) -> bytes:
    tensors = params.tensors()
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(chunks)


def tensors_from_bytes(blob: bytes) -> Dict[str, np.ndarray]:
    if blob[:8] != MAGIC:
        raise ValueError("not a VARNN parameter file")
    version, n = struct.unpack_from("<II", blob, 8)
    if version != VERSION:
        raise ValueError(f"unsupported parameter file version {version}")
    pos = 16
    out = {}
    for _ in range(n):
        (name_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, pos)
        pos += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        values = np.frombuffer(blob, dtype="<f8", count=count, offset=pos)
        pos += 8 * count
        out[name] = values.astype(np.float64).reshape(shape)
    if pos != len(blob):
        raise ValueError(f"trailing bytes in parameter file ({len(blob) - pos})")
    return out


def count_serialized_scalars(blob: bytes) -> int:
    return int(sum(t.size for t in tensors_from_bytes(blob).values()))


def to_json(params: ParamSet) -> str:
    doc = {
        "format": "varnn-params",
        "version": VERSION,
        "tensors": [
            {"name": name, "shape": list(arr.shape), "values": arr.ravel().tolist()}
            for name, arr in params.tensors().items()
        ],
    }
    return json.dumps(doc)


def tensors_from_json(text: str) -> Dict[str, np.ndarray]:
    doc = json.loads(text)
    if doc.get("format") != "varnn-params":
        raise ValueError("not a VARNN parameter JSON document")
    return {t["name"]: np.array(t["values"], dtype=np.float64).reshape(t["shape"]) for t in doc["tensors"]}


def save(params: ParamSet, path) -> None:
    path = Path(path)
    if path.suffix == ".json":
        path.write_text(to_json(params))
    else:
        path.write_bytes(to_bytes(params))


def load(cls, path):
    path = Path(path)
    if path.suffix == ".json":
        return cls.from_tensors(tensors_from_json(path.read_text()))
    return cls.from_tensors(tensors_from_bytes(path.read_bytes()))
