"""Self-describing parameter checkpoint format.

Layout: magic "LIOCKPT1", 8-byte little-endian header length, a UTF-8 JSON
header, then the concatenated little-endian raw value arrays. The header
records the architecture config, precision, and per-parameter name, shape
and byte offset.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"LIOCKPT1"


def save_checkpoint(path, arrays: dict[str, np.ndarray], config: dict | None = None,
                    precision: str = "float64"):
    dtype = np.dtype(precision).newbyteorder("<")
    entries = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype=dtype)
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes())
        offset += len(blobs[-1])
    header = json.dumps({
        "config": config or {},
        "precision": precision,
        "params": entries,
    }).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for b in blobs:
            f.write(b)


def load_checkpoint(path):
    """Returns (arrays, config, precision)."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16:16 + hlen].decode("utf-8"))
    dtype = np.dtype(header["precision"]).newbyteorder("<")
    base = 16 + hlen
    arrays = {}
    for e in header["params"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        start = base + e["offset"]
        a = np.frombuffer(data, dtype=dtype, count=n, offset=start)
        arrays[e["name"]] = a.reshape(e["shape"]).astype(float)
    return arrays, header["config"], header["precision"]
