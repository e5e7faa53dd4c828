import hashlib
import math
import random

import pytest

from veristack.canonical import (
    GENESIS_HASH,
    CanonicalizationError,
    canonicalize,
    hash_payload,
    hash_value,
    is_hex_digest,
)


def reference_canonicalize(value) -> bytes:
    """Independent canonicalizer: recursive string builder, no json.dumps.

    Oracle for byte-identical agreement between two implementations.
    """
    if value is None:
        return b"null"
    if value is True:
        return b"true"
    if value is False:
        return b"false"
    if isinstance(value, str):
        out = ['"']
        for ch in value:
            if ch == '"':
                out.append('\\"')
            elif ch == "\\":
                out.append("\\\\")
            elif ch == "\n":
                out.append("\\n")
            elif ch == "\t":
                out.append("\\t")
            elif ch == "\r":
                out.append("\\r")
            elif ord(ch) < 0x20:
                out.append(f"\\u{ord(ch):04x}")
            else:
                out.append(ch)
        out.append('"')
        return "".join(out).encode("utf-8")
    if isinstance(value, int):
        return str(value).encode("ascii")
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError("non-finite")
        return repr(value).encode("ascii")
    if isinstance(value, (list, tuple)):
        return b"[" + b",".join(reference_canonicalize(v) for v in value) + b"]"
    if isinstance(value, dict):
        parts = []
        for key in sorted(value):
            parts.append(reference_canonicalize(key) + b":" + reference_canonicalize(value[key]))
        return b"{" + b",".join(parts) + b"}"
    raise ValueError(f"unsupported {type(value)}")


NESTED_FIXTURE = {
    "zeta": [1, 2.5, {"y": None, "x": [True, False]}],
    "alpha": {"b": "ciao", "a": "héllo wörld", "c": {"inner": [0.1, 1e30, -7]}},
    "mid": "line\nbreak\ttab",
    "num": 1234567890123,
}


def test_key_sorting():
    assert canonicalize({"b": 1, "a": 2}) == b'{"a":2,"b":1}'


def test_empty_map():
    assert canonicalize({}) == b"{}"


def test_nested_fixture_matches_independent_canonicalizer():
    assert canonicalize(NESTED_FIXTURE) == reference_canonicalize(NESTED_FIXTURE)


def test_randomized_documents_match_independent_canonicalizer():
    rng = random.Random(1234)

    def random_value(depth=0):
        kinds = ["str", "int", "float", "bool", "null"]
        if depth < 3:
            kinds += ["list", "dict", "dict"]
        kind = rng.choice(kinds)
        if kind == "str":
            return "".join(rng.choice("abcXYZ 123\n\t\"\\éé") for _ in range(rng.randrange(8)))
        if kind == "int":
            return rng.randrange(-(10**12), 10**12)
        if kind == "float":
            return rng.choice([0.1, -2.5, 1e-9, 3.14159, 1e20]) * rng.randrange(1, 9)
        if kind == "bool":
            return rng.random() < 0.5
        if kind == "null":
            return None
        if kind == "list":
            return [random_value(depth + 1) for _ in range(rng.randrange(4))]
        return {
            "".join(rng.choice("abcdefgh") for _ in range(rng.randrange(1, 6))): random_value(depth + 1)
            for _ in range(rng.randrange(4))
        }

    for _ in range(200):
        doc = random_value()
        assert canonicalize(doc) == reference_canonicalize(doc)


def test_shortest_number_forms():
    assert canonicalize(1.5) == b"1.5"
    assert canonicalize(0.1) == b"0.1"
    assert canonicalize(10) == b"10"
    assert canonicalize(-0.25) == b"-0.25"


def test_unicode_not_escaped():
    assert canonicalize("héllo") == '"héllo"'.encode("utf-8")


@pytest.mark.parametrize("bad", [float("nan"), float("inf"), float("-inf")])
def test_non_finite_rejected(bad):
    with pytest.raises(CanonicalizationError):
        canonicalize({"x": bad})


def test_non_string_keys_rejected():
    with pytest.raises(CanonicalizationError):
        canonicalize({1: "x"})


def test_unsupported_type_rejected():
    with pytest.raises(CanonicalizationError):
        canonicalize({"x": {1, 2}})


def test_sha256_standard_vectors():
    assert hash_payload(b"") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    assert hash_payload(b"abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"


def test_hash_determinism():
    rng = random.Random(7)
    for _ in range(50):
        payload = bytes(rng.randrange(256) for _ in range(rng.randrange(100)))
        assert hash_payload(payload) == hash_payload(payload)
        assert hash_payload(payload) == hashlib.sha256(payload).hexdigest()


def test_hash_value_is_hash_of_canonical_form():
    doc = {"k": [1, 2, 3]}
    assert hash_value(doc) == hashlib.sha256(canonicalize(doc)).hexdigest()


def test_genesis_and_digest_shape():
    assert GENESIS_HASH == "0" * 64
    assert is_hex_digest(GENESIS_HASH)
    assert is_hex_digest(hash_payload(b"x"))
    assert not is_hex_digest("ABCD" * 16)  # uppercase
    assert not is_hex_digest("0" * 63)
    assert not is_hex_digest(None)
