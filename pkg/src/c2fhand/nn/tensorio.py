"""TNSR tensor files and checkpoint directories.

Layout: b"TNSR", little-endian uint32 header length, JSON header
{"dtype", "shape"}, then the raw little-endian payload.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"TNSR"
DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8", "int32": "<i4", "uint8": "u1"}


class TensorFormatError(ValueError):
    pass


def write_tensor(path, array) -> None:
    a = np.asarray(array)
    name = a.dtype.name
    if name not in DTYPES:
        raise TensorFormatError(f"unsupported dtype {name}")
    header = json.dumps({"dtype": name, "shape": list(a.shape)}).encode()
    payload = np.ascontiguousarray(a, dtype=DTYPES[name]).tobytes()
    Path(path).write_bytes(MAGIC + struct.pack("<I", len(header)) + header + payload)


def read_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise TensorFormatError(f"{path}: bad magic")
    (n,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8 : 8 + n])
    dt = np.dtype(DTYPES[header["dtype"]])
    shape = tuple(header["shape"])
    payload = raw[8 + n :]
    if len(payload) != dt.itemsize * int(np.prod(shape)):
        raise TensorFormatError(f"{path}: payload size does not match header")
    return np.frombuffer(payload, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))


def save_checkpoint(directory, arrays: dict[str, np.ndarray], extra: dict | None = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = {}
    for name in sorted(arrays):
        fname = name.replace("/", "__") + ".tnsr"
        write_tensor(d / fname, arrays[name])
        files[name] = fname
    manifest = {"parameters": files}
    if extra:
        manifest.update(extra)
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_checkpoint(directory) -> tuple[dict[str, np.ndarray], dict]:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    arrays = {name: read_tensor(d / fname) for name, fname in manifest["parameters"].items()}
    return arrays, manifest
