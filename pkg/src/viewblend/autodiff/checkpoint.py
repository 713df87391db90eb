"""Checkpoint I/O: a flat binary blob of arrays plus a JSON manifest.

The manifest maps each array name to its shape, dtype and byte offset in
the blob.  Arrays are stored little-endian, C order, concatenated in
manifest key order so the pair of files round-trips bitwise.
"""

import json
import os

import numpy as np

_DTYPES = {"float64": "<f8", "float32": "<f4", "int64": "<i8", "int32": "<i4"}


def save_blob(path, arrays):
    """Write ``{name: ndarray}`` to ``path`` (blob) and ``path + '.json'``."""
    manifest = {}
    offset = 0
    chunks = []
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        dt = str(arr.dtype)
        if dt not in _DTYPES:
            raise ValueError(f"unsupported dtype {dt} for {name!r}")
        raw = arr.astype(_DTYPES[dt], order="C").tobytes()
        manifest[name] = {"shape": list(arr.shape), "dtype": dt, "offset": offset}
        offset += len(raw)
        chunks.append(raw)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(b"".join(chunks))
    os.replace(tmp, path)
    with open(path + ".json", "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
        f.write("\n")


def load_blob(path):
    """Read a blob written by save_blob back into ``{name: ndarray}``."""
    with open(path + ".json") as f:
        manifest = json.load(f)
    with open(path, "rb") as f:
        blob = f.read()
    out = {}
    for name, rec in manifest.items():
        shape = tuple(rec["shape"])
        dt = np.dtype(_DTYPES[rec["dtype"]])
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        start = rec["offset"]
        arr = np.frombuffer(blob, dtype=dt, count=n, offset=start)
        out[name] = arr.reshape(shape).astype(rec["dtype"], copy=True)
    return out
