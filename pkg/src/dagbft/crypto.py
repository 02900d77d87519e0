"""Hashing, signatures and the common random permutation."""

from __future__ import annotations

import hashlib
from functools import lru_cache

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey

HASH_SIZE = 32


def sha256d(data: bytes) -> bytes:
    """SHA-256 applied twice."""
    return hashlib.sha256(hashlib.sha256(data).digest()).digest()


unit_hash = sha256d


def xor_bytes(a: bytes, b: bytes) -> bytes:
    if len(a) != len(b):
        raise ValueError("xor of unequal lengths")
    return (int.from_bytes(a, "big") ^ int.from_bytes(b, "big")).to_bytes(len(a), "big")


def fit_width(key: bytes, width: int = HASH_SIZE) -> bytes:
    """Zero-pad (on the right) or truncate ``key`` to ``width`` bytes."""
    return key[:width].ljust(width, b"\0")


def sign(secret: Ed25519PrivateKey, message: bytes) -> bytes:
    return secret.sign(message)


def verify(public: bytes | Ed25519PublicKey, message: bytes, signature: bytes) -> bool:
    """Return True iff ``signature`` is a valid signature of ``message``; never raises on mismatch."""
    try:
        if not isinstance(public, Ed25519PublicKey):
            public = Ed25519PublicKey.from_public_bytes(public)
        public.verify(signature, message)
    except (InvalidSignature, ValueError, TypeError):
        return False
    return True


def common_permutation(nonce: int, public_keys) -> list[int]:
    """Pseudo-random ordering of process ids ``1..n`` derived from the public keys.

    Every key is fitted to the hash width. With ``X`` the XOR of all keys, process
    ``i`` gets ``Y_i = hash^nonce(key_i) XOR X`` and processes are listed by
    ascending ``Y_i``.
    """
    keys = tuple(fit_width(bytes(k)) for k in public_keys)
    if nonce < 0:
        raise ValueError("nonce must be non-negative")
    if len(set(keys)) != len(keys):
        raise ValueError("duplicate public keys")
    return list(_permutation(nonce, keys))


@lru_cache(maxsize=4096)
def _permutation(nonce: int, keys: tuple[bytes, ...]) -> tuple[int, ...]:
    mask = 0
    for k in keys:
        mask ^= int.from_bytes(k, "big")
    ys = [(int.from_bytes(_iterated_hash(k, nonce), "big") ^ mask, i) for i, k in enumerate(keys, start=1)]
    ys.sort()
    return tuple(i for _, i in ys)


@lru_cache(maxsize=65536)
def _iterated_hash(key: bytes, times: int) -> bytes:
    if times == 0:
        return key
    return sha256d(_iterated_hash(key, times - 1)) if times < 500 else _iterate_flat(key, times)


def _iterate_flat(key: bytes, times: int) -> bytes:
    for _ in range(times):
        key = sha256d(key)
    return key
