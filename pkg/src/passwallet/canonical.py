"""Canonical JSON serialization shared by digests, snapshots, and sealing.

Canonical form is UTF-8 JSON with lexicographically sorted keys and no
insignificant whitespace. Integers whose magnitude exceeds 2**53 - 1 are
rendered as decimal strings so the byte form survives parsers that coerce
numbers to IEEE doubles. Byte strings are rendered as lowercase hex with a
"0x" prefix. Two equal values always serialize to identical bytes,
regardless of process, platform, or insertion order.
"""

from __future__ import annotations

import hashlib
import json
from typing import Any

# Largest integer exactly representable as an IEEE-754 double.
MAX_SAFE_INT = 2**53 - 1


def to_canonical(value: Any) -> Any:
    """Normalize a value tree into plain JSON-safe types.

    Floats are rejected outright: every quantity in the wallet is an
    unsigned integer in base units, and floats would break byte-stable
    digests.
    """
    if value is None or isinstance(value, (bool, str)):
        return value
    if isinstance(value, int):
        if abs(value) > MAX_SAFE_INT:
            return str(value)
        return value
    if isinstance(value, float):
        raise TypeError("floats are not canonically serializable")
    if isinstance(value, (bytes, bytearray)):
        return "0x" + bytes(value).hex()
    if isinstance(value, dict):
        out = {}
        for key, item in value.items():
            if not isinstance(key, str):
                raise TypeError(f"canonical map keys must be str, got {type(key).__name__}")
            out[key] = to_canonical(item)
        return out
    if isinstance(value, (list, tuple)):
        return [to_canonical(item) for item in value]
    # Objects may opt in by providing their own canonical document.
    doc = getattr(value, "to_doc", None)
    if callable(doc):
        return to_canonical(doc())
    raise TypeError(f"{type(value).__name__} is not canonically serializable")


def dumps(value: Any) -> bytes:
    """Serialize to canonical JSON bytes."""
    return json.dumps(
        to_canonical(value),
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
    ).encode("utf-8")


def loads(data: bytes | str) -> Any:
    return json.loads(data)


def sha256(value: Any) -> bytes:
    """SHA-256 over the canonical serialization; 32 bytes."""
    return hashlib.sha256(dumps(value)).digest()


def parse_uint(value: Any) -> int:
    """Parse an unsigned integer that may have been canonicalized to a string."""
    if isinstance(value, bool):
        raise ValueError("expected unsigned integer, got bool")
    if isinstance(value, int):
        parsed = value
    elif isinstance(value, str):
        if not value or (len(value) > 1 and value[0] == "0"):
            raise ValueError(f"not a canonical decimal string: {value!r}")
        parsed = int(value, 10)
    else:
        raise ValueError(f"expected unsigned integer, got {type(value).__name__}")
    if parsed < 0:
        raise ValueError(f"expected unsigned integer, got {parsed}")
    return parsed


def parse_hex(value: str) -> bytes:
    """Parse a canonical 0x-prefixed lowercase hex string."""
    if not isinstance(value, str) or not value.startswith("0x"):
        raise ValueError(f"not a 0x-prefixed hex string: {value!r}")
    body = value[2:]
    if body != body.lower():
        raise ValueError(f"hex string must be lowercase: {value!r}")
    return bytes.fromhex(body)


def hex_str(data: bytes) -> str:
    return "0x" + data.hex()
