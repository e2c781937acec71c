"""SCMT tensor files and the sectioned container used for checkpoints.

Tensor layout (all little-endian)::

    b"SCMT" | u32 version | u32 dtype tag | u32 ndim | u32 dims[ndim] | payload

Dtype tag 1 is float32 (dataset tensors), tag 2 is float64 (checkpoints),
payload row-major.

The container is ``b"SCMC" | u32 version | u32 toc_len | toc (JSON) | blobs``
where the table of contents maps ``section -> {tensor name -> [offset, size]}``
relative to the start of the blob area, plus a free-form ``meta`` object.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

TENSOR_MAGIC = b"SCMT"
CONTAINER_MAGIC = b"SCMC"
VERSION = 1

_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_TAGS = {np.dtype("float32"): 1, np.dtype("float64"): 2}


class FormatError(ValueError):
    pass


def encode_tensor(arr, dtype="float32") -> bytes:
    arr = np.asarray(arr)
    dt = np.dtype(dtype)
    if dt not in _TAGS:
        raise FormatError(f"unsupported dtype {dt}")
    head = TENSOR_MAGIC + struct.pack("<III", VERSION, _TAGS[dt], arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=_DTYPES[_TAGS[dt]]).tobytes()


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < 16 or buf[:4] != TENSOR_MAGIC:
        raise FormatError("not an SCMT tensor")
    version, tag, ndim = struct.unpack_from("<III", buf, 4)
    if version != VERSION:
        raise FormatError(f"SCMT version {version} unsupported (expected {VERSION})")
    if tag not in _DTYPES:
        raise FormatError(f"unknown dtype tag {tag}")
    off = 16 + 4 * ndim
    if len(buf) < off:
        raise FormatError("truncated SCMT header")
    dims = struct.unpack_from(f"<{ndim}I", buf, 16)
    dt = _DTYPES[tag]
    size = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
    if len(buf) != off + size:
        raise FormatError(f"SCMT payload is {len(buf) - off} bytes, expected {size}")
    return np.frombuffer(buf, dtype=dt, offset=off).reshape(dims).astype(dt.newbyteorder("="))


def save_tensor(path, arr, dtype="float32") -> None:
    Path(path).write_bytes(encode_tensor(arr, dtype))


def load_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


def write_container(path, sections: dict[str, dict[str, np.ndarray]], meta: dict) -> None:
    """Write named sections of float64 tensors plus JSON metadata."""
    blobs = []
    toc: dict = {"meta": meta, "sections": {}}
    offset = 0
    for sec in sorted(sections):
        entry = {}
        for name in sorted(sections[sec]):
            blob = encode_tensor(sections[sec][name], "float64")
            entry[name] = [offset, len(blob)]
            blobs.append(blob)
            offset += len(blob)
        toc["sections"][sec] = entry
    toc_bytes = json.dumps(toc, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CONTAINER_MAGIC + struct.pack("<II", VERSION, len(toc_bytes)))
        fh.write(toc_bytes)
        for blob in blobs:
            fh.write(blob)


def read_container(path) -> tuple[dict[str, dict[str, np.ndarray]], dict]:
    buf = Path(path).read_bytes()
    if len(buf) < 12 or buf[:4] != CONTAINER_MAGIC:
        raise FormatError(f"{path}: not an SCMC container")
    version, toc_len = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise FormatError(f"{path}: container version {version} unsupported (expected {VERSION})")
    if len(buf) < 12 + toc_len:
        raise FormatError(f"{path}: truncated table of contents")
    try:
        toc = json.loads(buf[12:12 + toc_len])
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: corrupt table of contents") from exc
    base = 12 + toc_len
    sections = {}
    for sec, entries in toc["sections"].items():
        sections[sec] = {}
        for name, (off, size) in entries.items():
            start = base + off
            if start + size > len(buf):
                raise FormatError(f"{path}: truncated at {sec}/{name}")
            sections[sec][name] = decode_tensor(buf[start:start + size])
    return sections, toc["meta"]
