"""Writer for the WCTF1 tensor container consumed by the encoder runtime.

Format: the magic bytes ``WCTF1``, a little-endian uint32 manifest
length, a JSON manifest mapping tensor names to ``{dtype, shape,
offset}`` entries, then the concatenated row-major float32 payload.
Implemented here against the documented layout so the exporter stays
decoupled from the runtime package.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"WCTF1"


def write_tensors(path: str, tensors: dict) -> None:
    entries = {}
    chunks = []
    offset = 0
    for name, value in tensors.items():
        arr = np.asarray(value, dtype="<f4")
        entries[name] = {"dtype": "f32", "shape": list(arr.shape), "offset": offset}
        chunks.append(np.ascontiguousarray(arr).tobytes())
        offset += arr.nbytes
    blob = json.dumps(entries).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for chunk in chunks:
            fh.write(chunk)
