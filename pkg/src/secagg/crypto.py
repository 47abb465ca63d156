"""Hash, MAC, signature, and randomness primitives.

Signatures are Ed25519 behind a small scheme interface (the protocol only
needs UF-CMA, so schemes are swappable). The MAC is HMAC-SHA256 keyed by
the canonical 8-byte encoding of a field element. ``baseline_prf_mask``
is the deterministic per-element PRF mask used only by the long-term-seed
baseline; the protocol proper draws ``fresh_mask`` vectors that are never
derived from persistent state.

Every party owns its own seeded numpy Generator; generators are not
shared across concurrent contexts.
"""

from __future__ import annotations

import hashlib
import hmac as _hmac
import struct
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric import ed25519

from .field import FieldParams, FieldVector

SIGNATURE_LEN = 64
MAC_LEN = 32
SEED_LEN = 32

Signature = bytes
MacTag = bytes


@dataclass(frozen=True)
class KeyPair:
    """Signing key pair; the public key is derived from the private key."""

    private_bytes: bytes
    public_bytes: bytes
    owner: Any = None


class SignatureScheme:
    """Interface for UF-CMA signature schemes."""

    def gen(self, rng: np.random.Generator, owner: Any = None) -> KeyPair:
        raise NotImplementedError

    def sign(self, private_bytes: bytes, message: bytes) -> Signature:
        raise NotImplementedError

    def verify(self, public_bytes: bytes, message: bytes, signature: Signature) -> bool:
        raise NotImplementedError


class Ed25519Scheme(SignatureScheme):
    def gen(self, rng: np.random.Generator, owner: Any = None) -> KeyPair:
        seed = rng.bytes(SEED_LEN)
        priv = ed25519.Ed25519PrivateKey.from_private_bytes(seed)
        pub = priv.public_key().public_bytes_raw()
        return KeyPair(private_bytes=seed, public_bytes=pub, owner=owner)

    def sign(self, private_bytes: bytes, message: bytes) -> Signature:
        priv = ed25519.Ed25519PrivateKey.from_private_bytes(private_bytes)
        return priv.sign(message)

    def verify(self, public_bytes: bytes, message: bytes, signature: Signature) -> bool:
        if len(signature) != SIGNATURE_LEN or len(public_bytes) != 32:
            return False
        try:
            ed25519.Ed25519PublicKey.from_public_bytes(public_bytes).verify(
                signature, message
            )
            return True
        except (InvalidSignature, ValueError):
            return False


DEFAULT_SCHEME = Ed25519Scheme()


def sig_gen(rng: np.random.Generator, owner: Any = None) -> KeyPair:
    return DEFAULT_SCHEME.gen(rng, owner)


def sig_sign(private_bytes: bytes, message: bytes) -> Signature:
    return DEFAULT_SCHEME.sign(private_bytes, message)


def sig_verify(public_bytes: bytes, message: bytes, signature: Signature) -> bool:
    return DEFAULT_SCHEME.verify(public_bytes, message, signature)


def mac(key: bytes, message: bytes) -> MacTag:
    """HMAC-SHA256; 32-byte tag, deterministic in (key, message)."""
    if not key:
        raise ValueError("empty MAC key")
    return _hmac.new(key, message, hashlib.sha256).digest()


def mac_key_from_element(s: int) -> bytes:
    """Canonical 8-byte LE encoding of a field element, used as MAC key."""
    return struct.pack("<Q", s)


def hash_to_field(message: bytes, params: FieldParams) -> int:
    """SHA-256 digest reduced mod q (256-bit -> negligible reduction bias)."""
    digest = hashlib.sha256(message).digest()
    return int.from_bytes(digest, "little") % params.q


def fresh_mask(rng: np.random.Generator, length: int, params: FieldParams) -> FieldVector:
    """Uniform random vector over Z_q^length from the caller's generator."""
    arr = rng.integers(0, params.q, size=length, dtype=np.uint64)
    return FieldVector(params, arr)


# ---------------------------------------------------------------------------
# Long-term-seed PRF masking (baseline only)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LongTermSeed:
    """Fixed shared secret between a user and one assisting node."""

    user_index: int
    node_index: int
    secret: bytes

    def __post_init__(self):
        if len(self.secret) != SEED_LEN:
            raise ValueError(f"seed must be {SEED_LEN} bytes")


def baseline_prf_mask(
    seed: LongTermSeed, round_index: int, length: int, params: FieldParams
) -> FieldVector:
    """Per-element PRF mask: element e = PRF(seed, round, e) mod q.

    Fully determined by (seed, round, length); this determinism is exactly
    what breaks forward/backward secrecy once the seed leaks.
    """
    q = params.q
    key = seed.secret
    prefix = struct.pack("<Q", round_index)
    out = np.empty(length, dtype=np.uint64)
    for e in range(length):
        digest = hashlib.blake2b(
            prefix + struct.pack("<Q", e), key=key, digest_size=16
        ).digest()
        out[e] = int.from_bytes(digest, "little") % q
    return FieldVector(params, out)


# ---------------------------------------------------------------------------
# Deterministic generator derivation
# ---------------------------------------------------------------------------


def derive_rng(*parts: int | str | bytes) -> np.random.Generator:
    """Generator keyed by a path of labels; same path, same stream."""
    entropy = []
    for p in parts:
        if isinstance(p, int):
            entropy.append(p & 0xFFFFFFFF)
            entropy.append((p >> 32) & 0xFFFFFFFF)
        else:
            raw = p.encode() if isinstance(p, str) else p
            d = hashlib.sha256(raw).digest()
            entropy.extend(struct.unpack("<8I", d))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def system_rng() -> np.random.Generator:
    """Non-deterministic generator for production-style key material."""
    return np.random.default_rng()


__all__ = [
    "SIGNATURE_LEN",
    "MAC_LEN",
    "SEED_LEN",
    "KeyPair",
    "Signature",
    "MacTag",
    "SignatureScheme",
    "Ed25519Scheme",
    "DEFAULT_SCHEME",
    "sig_gen",
    "sig_sign",
    "sig_verify",
    "mac",
    "mac_key_from_element",
    "hash_to_field",
    "fresh_mask",
    "LongTermSeed",
    "baseline_prf_mask",
    "derive_rng",
    "system_rng",
]
