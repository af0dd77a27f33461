"""Float encoding helpers for bit-exact instance and result files.

Reals are written as ``float.hex`` strings so that a file round-trips without
loss. Readers also accept plain JSON numbers.
"""
from __future__ import annotations

import hashlib
import json

import numpy as np


def encode_float(x) -> str:
    return float(x).hex()


def decode_float(x) -> float:
    if isinstance(x, str):
        return float.fromhex(x)
    return float(x)


def encode_array(arr) -> list:
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 0:
        return encode_float(arr)
    return [encode_array(row) for row in arr]


def decode_array(obj) -> np.ndarray:
    if isinstance(obj, (list, tuple)):
        return np.array([decode_array(o) for o in obj], dtype=float)
    return np.float64(decode_float(obj))


def format_float(x: float, hex_mode: bool) -> str:
    if hex_mode:
        return float(x).hex()
    return repr(float(x))


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()
