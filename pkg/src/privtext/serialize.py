"""Deterministic on-disk containers: canonical JSON and an array bundle.

Identical inputs must produce byte-identical files, so everything here
avoids timestamps, dict-order dependence, and platform-dependent float
formatting (Python's repr round-trip is stable).
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"PTXC"
VERSION = 1


def canonical_json(obj) -> str:
    """Compact JSON with sorted keys; stable bytes for stable input."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=False, allow_nan=False)


def config_hash(obj) -> str:
    """SHA-256 over the canonical JSON form; used to fingerprint runs."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def write_json(path, obj) -> None:
    Path(path).write_bytes((canonical_json(obj) + "\n").encode("utf-8"))


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def save_container(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    """Versioned binary bundle: header JSON + raw little-endian payloads."""
    entries = []
    payloads = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        data = arr.tobytes()
        entries.append({"name": name, "dtype": arr.dtype.str,
                        "shape": list(arr.shape), "offset": offset,
                        "nbytes": len(data)})
        payloads.append(data)
        offset += len(data)
    header = canonical_json({"arrays": entries, "meta": meta}).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(header)
        for data in payloads:
            fh.write(data)


def load_container(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a privtext container")
    version, header_len = struct.unpack("<II", raw[4:12])
    if version != VERSION:
        raise ValueError(f"{path}: unsupported container version {version}")
    header = json.loads(raw[12:12 + header_len].decode("utf-8"))
    base = 12 + header_len
    arrays = {}
    for entry in header["arrays"]:
        start = base + entry["offset"]
        buf = raw[start:start + entry["nbytes"]]
        arr = np.frombuffer(buf, dtype=np.dtype(entry["dtype"]))
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return arrays, header["meta"]
