"""Flat `key = value` text files used for manifests and run configs."""

from __future__ import annotations

from pathlib import Path

from .errors import FormatError


def parse_kv_text(text: str, source: str = "<string>") -> dict[str, str]:
    pairs: dict[str, str] = {}
    for i, line in enumerate(text.splitlines()):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"line {i + 1} of {source} is not 'key = value'")
        k, v = line.split("=", 1)
        pairs[k.strip()] = v.strip()
    return pairs


def format_kv(pairs: dict[str, str]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in pairs.items())


def read_kv_file(path) -> dict[str, str]:
    p = Path(path)
    return parse_kv_text(p.read_text(encoding="utf-8"), source=str(p))


def write_kv_file(path, pairs: dict[str, str]) -> None:
    Path(path).write_text(format_kv(pairs), encoding="utf-8")
