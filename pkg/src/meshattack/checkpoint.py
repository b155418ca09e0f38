"""Checkpoint directory: ``manifest.txt`` (key = value lines) + ``tensors.bin``.

``tensors.bin`` holds, for each tensor in manifest order, an 8-byte little-endian
unsigned byte count followed by the tensor as little-endian float64, row-major.
Shapes live in the manifest as ``tensor.<name> = d0xd1``.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import IoError, ParseError
from .mesh import atomic_write_bytes, atomic_write_text

FORMAT_VERSION = "1"


def write_checkpoint(path, manifest: dict, tensors: dict) -> None:
    path = Path(path)
    lines = [f"version = {FORMAT_VERSION}"]
    for key, value in manifest.items():
        if "\n" in str(value) or key.startswith("tensor."):
            raise ValueError(f"bad manifest entry {key!r}")
        lines.append(f"{key} = {value}")
    blob = bytearray()
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        lines.append(f"tensor.{name} = {'x'.join(str(d) for d in arr.shape) or 'scalar'}")
        data = arr.tobytes(order="C")
        blob += struct.pack("<Q", len(data)) + data
    atomic_write_bytes(path / "tensors.bin", bytes(blob))
    atomic_write_text(path / "manifest.txt", "\n".join(lines) + "\n")


def read_manifest(path) -> dict:
    path = Path(path)
    try:
        text = (path / "manifest.txt").read_text()
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc
    out = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        if " = " not in line:
            raise ParseError(f"{path}: bad manifest line {line!r}")
        key, value = line.split(" = ", 1)
        out[key.strip()] = value.strip()
    return out


def read_checkpoint(path) -> tuple[dict, dict]:
    path = Path(path)
    manifest = read_manifest(path)
    if manifest.get("version") != FORMAT_VERSION:
        raise ParseError(f"{path}: unsupported checkpoint version {manifest.get('version')!r}")
    try:
        blob = (path / "tensors.bin").read_bytes()
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc
    tensors = {}
    pos = 0
    for key, value in manifest.items():
        if not key.startswith("tensor."):
            continue
        shape = () if value == "scalar" else tuple(int(d) for d in value.split("x"))
        if pos + 8 > len(blob):
            raise ParseError(f"{path}: truncated tensor file")
        (nbytes,) = struct.unpack_from("<Q", blob, pos)
        pos += 8
        if nbytes != 8 * int(np.prod(shape, dtype=np.int64)) or pos + nbytes > len(blob):
            raise ParseError(f"{path}: byte length mismatch for {key}")
        tensors[key[len("tensor."):]] = np.frombuffer(blob, dtype="<f8", count=nbytes // 8,
                                                      offset=pos).reshape(shape).astype(np.float64)
        pos += nbytes
    if pos != len(blob):
        raise ParseError(f"{path}: trailing bytes in tensor file")
    manifest = {k: v for k, v in manifest.items() if not k.startswith("tensor.")}
    return manifest, tensors
