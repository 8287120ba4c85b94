"""DLCK checkpoint files.

Layout (all integers little-endian u32):
  magic "DLCK" | version | config block (length + key = value lines, utf-8)
  | record count | records

Record: name length | name bytes | rank | dims[rank] | float32 payload.
Round-trips are bit-exact; readers validate magic, version and sizes and
report the byte offset of any structural problem.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"DLCK"
VERSION = 1


def _pack_config(config: dict) -> bytes:
    lines = [f"{k} = {v}" for k, v in config.items()]
    return "\n".join(lines).encode("utf-8")


def _parse_config(blob: bytes) -> dict[str, str]:
    out: dict[str, str] = {}
    for line in blob.decode("utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def write_checkpoint(path: str | Path, arrays: dict[str, np.ndarray],
                     config: dict) -> None:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    cfg = _pack_config(config)
    parts.append(struct.pack("<I", len(cfg)))
    parts.append(cfg)
    parts.append(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        payload = np.ascontiguousarray(arr, dtype="<f4")
        nb = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<I", payload.ndim))
        parts.append(struct.pack(f"<{payload.ndim}I", *payload.shape))
        parts.append(payload.tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_checkpoint(path: str | Path) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    blob = Path(path).read_bytes()
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise FormatError(f"truncated checkpoint while reading {what}", offset=pos)
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise FormatError(f"bad checkpoint magic, expected {MAGIC!r}", offset=0)
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    (cfg_len,) = struct.unpack("<I", take(4, "config length"))
    config = _parse_config(take(cfg_len, "config block"))
    (count,) = struct.unpack("<I", take(4, "record count"))
    records: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4, "record name length"))
        name = take(name_len, "record name").decode("utf-8")
        (rank,) = struct.unpack("<I", take(4, f"rank of '{name}'"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, f"dims of '{name}'"))
        n_elem = int(np.prod(dims)) if rank else 1
        raw = take(4 * n_elem, f"payload of '{name}'")
        records[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
    if pos != len(blob):
        raise FormatError(f"{len(blob) - pos} trailing bytes after last record",
                          offset=pos)
    return config, records
