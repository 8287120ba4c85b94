"""DLT1 raster files and the on-disk bundle layout.

A raster file is: magic ``DLT1``, then five little-endian u32 fields
(version=1, bands, height, width, dtype code), then the payload band-major
row-major.  Dtype code 0 is float32, 1 is uint8.  A bundle directory holds
``{lr_ntl,hr_ntl,dmo,dem,isp}.dlt`` plus a ``manifest.txt`` of ``key = value``
lines carrying the generation metadata.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import DataError, FormatError
from ..kvtext import read_kv_file, write_kv_file
from .synth import ModalityBundle

MAGIC = b"DLT1"
VERSION = 1

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("u1")}

RASTER_NAMES = ("lr_ntl", "hr_ntl", "dmo", "dem", "isp")


def write_raster(path, array: np.ndarray) -> None:
    arr = np.asarray(array)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise DataError(f"raster must be 2D or (bands, H, W), got shape {arr.shape}")
    if arr.dtype == np.uint8:
        code, payload = 1, np.ascontiguousarray(arr)
    else:
        code, payload = 0, np.ascontiguousarray(arr, dtype="<f4")
    b, h, w = arr.shape
    header = MAGIC + struct.pack("<5I", VERSION, b, h, w, code)
    Path(path).write_bytes(header + payload.tobytes())


def read_raster(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise FormatError(f"truncated raster: expected {what}", offset=pos)
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise FormatError("bad magic, not a DLT1 raster", offset=0)
    version, bands, h, w, code = struct.unpack("<5I", take(20, "header"))
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if code not in _DTYPE_CODES:
        raise FormatError(f"unknown dtype code {code}", offset=20)
    dt = _DTYPE_CODES[code]
    nbytes = bands * h * w * dt.itemsize
    data = take(nbytes, f"{nbytes}-byte payload")
    if pos != len(blob):
        raise FormatError(f"{len(blob) - pos} trailing bytes", offset=pos)
    return np.frombuffer(data, dtype=dt).reshape(bands, h, w).copy()


def write_bundle(bundle: ModalityBundle, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name in RASTER_NAMES:
        write_raster(d / f"{name}.dlt", getattr(bundle, name))
    write_kv_file(d / "manifest.txt", bundle.meta)


def read_bundle(directory) -> ModalityBundle:
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"bundle directory not found: {d}")
    rasters = {}
    for name in RASTER_NAMES:
        arr = read_raster(d / f"{name}.dlt")
        rasters[name] = arr if name == "dmo" else arr[0]
    meta_path = d / "manifest.txt"
    meta = read_kv_file(meta_path) if meta_path.exists() else {}
    bundle = ModalityBundle(meta=meta, **rasters)
    bundle.validate()
    return bundle
