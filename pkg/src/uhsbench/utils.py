"""Shared constants, seeding, validation and binary-file framing helpers."""
from __future__ import annotations

import hashlib
import json
from typing import BinaryIO

import numpy as np

MILLIDARCY_M2 = 9.869233e-16  # 1 mD in m^2
BAR = 1.0e5  # Pa
DAY = 86400.0  # s
MONTH = 30.0 * DAY  # fixed 30-day month so schedules tile exactly
YEAR = 12.0 * MONTH

_U64 = (1 << 64) - 1


def rng_from_seed(seed: int) -> np.random.Generator:
    """Counter-based generator (Philox 4x64) so fields reproduce bit-exactly.

    Philox is keyed directly with the 64-bit seed; no OS entropy is mixed in.
    """
    return np.random.Generator(np.random.Philox(key=int(seed) & _U64))


def derive_seed(master: int, index: int) -> int:
    """Per-simulation seed: first 8 bytes of SHA-256(master_le64 || index_le64)."""
    payload = (int(master) & _U64).to_bytes(8, "little") + (
        int(index) & _U64
    ).to_bytes(8, "little")
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], "little")


def json_line(header: dict) -> bytes:
    """Serialize a header dict to one UTF-8 JSON line (sorted keys)."""
    return json.dumps(header, sort_keys=True).encode("utf-8") + b"\n"


def read_json_line(f: BinaryIO, max_len: int = 1 << 22) -> dict:
    """Read a newline-terminated JSON header from a binary stream."""
    raw = bytearray()
    while True:
        ch = f.read(1)
        if not ch:
            raise ValueError("truncated file: header line not terminated")
        if ch == b"\n":
            break
        raw.extend(ch)
        if len(raw) > max_len:
            raise ValueError("header line exceeds maximum length")
    return json.loads(raw.decode("utf-8"))


def digest_of(obj) -> str:
    """SHA-256 hex digest of a JSON-serializable object (canonical form)."""
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def as_field(arr, shape: tuple[int, int], name: str) -> np.ndarray:
    """Validate and return a C-contiguous float64 2D field of the given shape."""
    out = np.ascontiguousarray(arr, dtype=np.float64)
    if out.shape != shape:
        raise ValueError(f"{name}: expected shape {shape}, got {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name}: non-finite values")
    return out


def require(condition: bool, message: str) -> None:
    if not condition:
        raise ValueError(message)
