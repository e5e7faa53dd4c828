"""Canonical serialization and hashing.

Every hash in the stack (argument hashes, result hashes, receipt chain
links, spec fingerprints) is SHA-256 over the canonical byte form produced
here, so two independent encoders must agree byte-for-byte: UTF-8, object
keys sorted by code point, no insignificant whitespace, numbers in their
shortest round-trip decimal form.
"""

from __future__ import annotations

import hashlib
import json
import math
from typing import Any

GENESIS_HASH = "0" * 64


class CanonicalizationError(ValueError):
    """Value cannot be represented in canonical form."""


def _check(value: Any, path: str) -> None:
    if value is None or isinstance(value, (str, bool, int)):
        return
    if isinstance(value, float):
        if not math.isfinite(value):
            raise CanonicalizationError(f"non-finite number at {path}: {value!r}")
        return
    if isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            _check(item, f"{path}[{i}]")
        return
    if isinstance(value, dict):
        for key, item in value.items():
            if not isinstance(key, str):
                raise CanonicalizationError(f"non-string map key at {path}: {key!r}")
            _check(item, f"{path}.{key}")
        return
    raise CanonicalizationError(f"unsupported type at {path}: {type(value).__name__}")


def canonicalize(value: Any) -> bytes:
    """Encode ``value`` as canonical JSON bytes.

    Accepts text, numbers, booleans, None, lists/tuples and string-keyed
    mappings. Raises CanonicalizationError for anything else, including
    NaN and infinities.
    """
    _check(value, "$")
    # json.dumps with sort_keys gives code-point key order; repr-based float
    # formatting is already shortest round-trip in Python 3.
    return json.dumps(
        value,
        sort_keys=True,
        ensure_ascii=False,
        separators=(",", ":"),
        allow_nan=False,
    ).encode("utf-8")


def hash_payload(payload: bytes) -> str:
    """SHA-256 digest of ``payload`` as 64 lowercase hex chars."""
    return hashlib.sha256(payload).hexdigest()


def hash_value(value: Any) -> str:
    """SHA-256 of the canonical form of ``value``."""
    return hash_payload(canonicalize(value))


def is_hex_digest(text: Any) -> bool:
    """True iff ``text`` is a 64-char lowercase hex SHA-256 digest."""
    return (
        isinstance(text, str)
        and len(text) == 64
        and all(c in "0123456789abcdef" for c in text)
    )
