"""Signing primitives behind a pluggable scheme interface.

The default scheme is Ed25519 (deterministic per RFC 8032, so signatures
are reproducible across runs). A signature blob is the 32-byte public key
followed by the 64-byte signature; verification checks that the public key
hashes to the claimed 20-byte address and that the signature is valid.
Carrying the public key in the blob is what lets anyone verify against an
address alone, without ever seeing the secret.
"""

from __future__ import annotations

import hashlib

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .model import KeyPair

SECRET_LEN = 32
PUBLIC_LEN = 32
SIG_LEN = 64
BLOB_LEN = PUBLIC_LEN + SIG_LEN


def address_from_public(public_bytes: bytes) -> str:
    """20-byte address: trailing bytes of SHA-256 over the raw public key."""
    return "0x" + hashlib.sha256(public_bytes).digest()[-20:].hex()


def _public_bytes(secret: bytes) -> bytes:
    key = Ed25519PrivateKey.from_private_bytes(secret)
    return key.public_key().public_bytes_raw()


def generate_keypair(seed: int | bytes | None = None) -> KeyPair:
    """Create a signing key pair, deterministically when a seed is given."""
    if seed is None:
        import os

        secret = os.urandom(SECRET_LEN)
    elif isinstance(seed, int):
        secret = hashlib.sha256(b"keygen:" + str(seed).encode()).digest()
    else:
        secret = hashlib.sha256(b"keygen:" + seed).digest()
    return KeyPair(pk=address_from_public(_public_bytes(secret)), sk=secret)


def sign(secret: bytes, message: bytes) -> bytes:
    """Sign a message; returns public key || signature (96 bytes)."""
    if len(secret) != SECRET_LEN:
        raise ValueError("secret must be 32 bytes")
    key = Ed25519PrivateKey.from_private_bytes(secret)
    return key.public_key().public_bytes_raw() + key.sign(message)


def verify(address: str, message: bytes, signature: bytes) -> bool:
    """Verify a signature blob against a 20-byte address. Never raises."""
    if not isinstance(signature, (bytes, bytearray)) or len(signature) != BLOB_LEN:
        return False
    public, sig = bytes(signature[:PUBLIC_LEN]), bytes(signature[PUBLIC_LEN:])
    if address_from_public(public) != address:
        return False
    try:
        Ed25519PublicKey.from_public_bytes(public).verify(sig, message)
        return True
    except (InvalidSignature, ValueError):
        return False
