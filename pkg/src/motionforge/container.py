"""Self-describing binary container used by every on-disk artifact.

Layout (all integers little-endian):

    bytes 0..3    magic b"MFC1"
    bytes 4..7    uint32 header length N
    bytes 8..8+N  header: UTF-8 JSON with sorted keys
    remainder     concatenated raw array data, C-order, little-endian

The header carries {"format": <artifact kind>, "version": <int>,
"meta": <arbitrary JSON>, "arrays": [{"name", "dtype", "shape"}, ...]};
array payloads follow in listing order.  Writing the same content always
produces identical bytes (no timestamps).
"""

from __future__ import annotations

import json

import numpy as np

MAGIC = b"MFC1"

_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8", "uint8": "|u1", "bool": "|b1"}


def pack(format_name: str, version: int, meta: dict, arrays: dict) -> bytes:
    index = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        dtype = arr.dtype.name
        if dtype not in _DTYPES:
            raise ValueError(f"unsupported array dtype {dtype} for {name}")
        arr = arr.astype(_DTYPES[dtype], copy=False)
        index.append({"name": name, "dtype": dtype, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = json.dumps(
        {"format": format_name, "version": version, "meta": meta, "arrays": index},
        sort_keys=True,
        separators=(",", ":"),
    ).encode()
    return b"".join([MAGIC, len(header).to_bytes(4, "little"), header, *blobs])


def unpack(data: bytes):
    if data[:4] != MAGIC:
        raise ValueError("not a motionforge container (bad magic)")
    n = int.from_bytes(data[4:8], "little")
    header = json.loads(data[8 : 8 + n].decode())
    arrays = {}
    off = 8 + n
    for entry in header["arrays"]:
        dtype = np.dtype(_DTYPES[entry["dtype"]])
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = dtype.itemsize * count
        arr = np.frombuffer(data[off : off + nbytes], dtype=dtype).reshape(entry["shape"])
        arrays[entry["name"]] = arr.astype(entry["dtype"])
        off += nbytes
    return header["format"], header["version"], header["meta"], arrays


def save(path, format_name: str, version: int, meta: dict, arrays: dict):
    with open(path, "wb") as f:
        f.write(pack(format_name, version, meta, arrays))


def load(path, expect_format: str | None = None):
    with open(path, "rb") as f:
        data = f.read()
    fmt, version, meta, arrays = unpack(data)
    if expect_format is not None and fmt != expect_format:
        raise ValueError(f"expected {expect_format} container, found {fmt}")
    return fmt, version, meta, arrays
