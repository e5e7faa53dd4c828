"""Verifier Stack signing identity.

Detached RSA-PSS/SHA-256 signatures over canonical receipt bodies. The
scheme sits behind a small abstraction so an alternate signature scheme can
be plugged in without touching receipt or chain code. Private key material
is never serialized into logs or receipts.
"""

from __future__ import annotations

import base64
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

from cryptography.exceptions import InvalidSignature, UnsupportedAlgorithm
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import padding, rsa

DEFAULT_SCHEME = "rsa-pss-sha256"
DEFAULT_KEY_BITS = 2048


class SignatureScheme(Protocol):
    name: str

    def sign(self, private_key, data: bytes) -> bytes: ...

    def verify(self, public_key, data: bytes, signature: bytes) -> bool: ...

    def generate_private_key(self): ...


class RsaPssSha256:
    """RSA-PSS with SHA-256 and MGF1, max-length salt."""

    name = DEFAULT_SCHEME

    def __init__(self, key_bits: int = DEFAULT_KEY_BITS):
        self.key_bits = key_bits
        self._hash = hashes.SHA256()
        self._padding = padding.PSS(
            mgf=padding.MGF1(self._hash),
            salt_length=padding.PSS.MAX_LENGTH,
        )

    def sign(self, private_key, data: bytes) -> bytes:
        return private_key.sign(data, self._padding, self._hash)

    def verify(self, public_key, data: bytes, signature: bytes) -> bool:
        try:
            public_key.verify(signature, data, self._padding, self._hash)
            return True
        except (InvalidSignature, ValueError, TypeError, UnsupportedAlgorithm):
            return False

    def generate_private_key(self):
        return rsa.generate_private_key(public_exponent=65537, key_size=self.key_bits)


_SCHEMES = {DEFAULT_SCHEME: RsaPssSha256}
_DEFAULT_INSTANCE = RsaPssSha256()


def get_scheme(name: str = DEFAULT_SCHEME, **kwargs) -> SignatureScheme:
    if name == DEFAULT_SCHEME and not kwargs:
        return _DEFAULT_INSTANCE
    try:
        return _SCHEMES[name](**kwargs)
    except KeyError:
        raise ValueError(f"unknown signature scheme: {name!r}") from None


@dataclass
class SigningIdentity:
    """Key pair held by the Verifier Stack.

    Immutable after creation and safe for concurrent use; the cryptography
    key objects do not share mutable state across sign/verify calls.
    """

    scheme: SignatureScheme
    private_key: object = field(repr=False)

    @classmethod
    def generate(cls, scheme_name: str = DEFAULT_SCHEME, **kwargs) -> "SigningIdentity":
        scheme = get_scheme(scheme_name, **kwargs)
        return cls(scheme=scheme, private_key=scheme.generate_private_key())

    @property
    def public_key(self):
        return self.private_key.public_key()

    def sign(self, data: bytes) -> str:
        """Detached signature over ``data`` as standard-alphabet base64 text."""
        return base64.b64encode(self.scheme.sign(self.private_key, data)).decode("ascii")

    def save_private_key(self, path: str | Path) -> None:
        pem = self.private_key.private_bytes(
            encoding=serialization.Encoding.PEM,
            format=serialization.PrivateFormat.PKCS8,
            encryption_algorithm=serialization.NoEncryption(),
        )
        Path(path).write_bytes(pem)

    def save_public_key(self, path: str | Path) -> None:
        Path(path).write_bytes(public_key_pem(self.public_key))

    @classmethod
    def load(cls, path: str | Path, scheme_name: str = DEFAULT_SCHEME) -> "SigningIdentity":
        key = serialization.load_pem_private_key(Path(path).read_bytes(), password=None)
        return cls(scheme=get_scheme(scheme_name), private_key=key)


def public_key_pem(public_key) -> bytes:
    return public_key.public_bytes(
        encoding=serialization.Encoding.PEM,
        format=serialization.PublicFormat.SubjectPublicKeyInfo,
    )


def load_public_key(path: str | Path):
    return serialization.load_pem_public_key(Path(path).read_bytes())


def verify_signature(
    public_key, data: bytes, signature_b64: str, scheme_name: str = DEFAULT_SCHEME
) -> bool:
    """Total verification: malformed encodings return False, never raise."""
    if not isinstance(signature_b64, str):
        return False
    try:
        raw = base64.b64decode(signature_b64.encode("ascii"), validate=True)
    except (ValueError, UnicodeEncodeError):
        return False
    return get_scheme(scheme_name).verify(public_key, data, raw)
