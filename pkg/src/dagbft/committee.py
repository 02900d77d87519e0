"""Process identities, quorum thresholds and the genesis unit shared by a committee."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property

from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat


def supermajority(n: int) -> int:
    """Smallest creator count that is at least two thirds of ``n``."""
    return -(-2 * n // 3)


def coin_threshold(n: int) -> int:
    """Number of coin shares needed to toss a coin: floor(2n/3) + 1."""
    return 2 * n // 3 + 1


def max_faulty(n: int) -> int:
    """Largest tolerated number of faulty processes: ceil(n/3) - 1."""
    return -(-n // 3) - 1


@dataclass(frozen=True)
class ProcessKeys:
    """Secret material of one process: a signing key and a share-decryption key."""

    pid: int
    signing: Ed25519PrivateKey = field(repr=False)
    decryption: X25519PrivateKey = field(repr=False)

    @classmethod
    def from_seed(cls, pid: int, seed: bytes) -> "ProcessKeys":
        sk = hashlib.sha256(b"dagbft/sign/" + seed).digest()
        dk = hashlib.sha256(b"dagbft/decrypt/" + seed).digest()
        return cls(pid, Ed25519PrivateKey.from_private_bytes(sk), X25519PrivateKey.from_private_bytes(dk))

    @property
    def verify_key(self) -> bytes:
        return self.signing.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)

    @property
    def encryption_key(self) -> bytes:
        return self.decryption.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)


@dataclass(frozen=True)
class Committee:
    """Public parameters every process knows at startup.

    Process ids run from 1 to ``n``; id ``n + 1`` is reserved for the genesis unit.
    """

    verify_keys: tuple[bytes, ...]
    encryption_keys: tuple[bytes, ...]

    def __post_init__(self):
        if len(self.verify_keys) != len(self.encryption_keys):
            raise ValueError("key lists differ in length")
        if len(set(self.verify_keys)) != len(self.verify_keys):
            raise ValueError("duplicate verification keys")

    @property
    def n(self) -> int:
        return len(self.verify_keys)

    @property
    def genesis_creator(self) -> int:
        return self.n + 1

    @property
    def supermajority(self) -> int:
        return supermajority(self.n)

    @property
    def coin_threshold(self) -> int:
        return coin_threshold(self.n)

    @property
    def max_faulty(self) -> int:
        return max_faulty(self.n)

    @property
    def pids(self) -> range:
        return range(1, self.n + 1)

    def verify_key(self, pid: int) -> bytes:
        return self.verify_keys[pid - 1]

    def encryption_key(self, pid: int) -> bytes:
        return self.encryption_keys[pid - 1]

    @cached_property
    def _loaded_keys(self) -> tuple[Ed25519PublicKey, ...]:
        return tuple(Ed25519PublicKey.from_public_bytes(k) for k in self.verify_keys)

    def public_key_object(self, pid: int) -> Ed25519PublicKey:
        return self._loaded_keys[pid - 1]

    @cached_property
    def genesis(self):
        from .units import genesis_unit

        return genesis_unit(self.n)


def make_committee(n: int, seed: int | bytes = 0) -> tuple[Committee, list[ProcessKeys]]:
    """Deterministically generate ``n`` process key sets and their committee.

    :param n: number of processes
    :param seed: run seed; equal seeds give byte-identical keys
    """
    if n < 1:
        raise ValueError("need at least one process")
    if isinstance(seed, int):
        seed = seed.to_bytes(8, "big", signed=True)
    keys = [ProcessKeys.from_seed(pid, seed + pid.to_bytes(4, "big")) for pid in range(1, n + 1)]
    committee = Committee(tuple(k.verify_key for k in keys), tuple(k.encryption_key for k in keys))
    return committee, keys
