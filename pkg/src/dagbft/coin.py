"""Leaderless threshold coin: one Shamir-shared secret per dealer.

Each dealer picks a random polynomial ``f`` of degree ``k - 1`` over the prime
field of order ``Q`` and publishes Feldman commitments ``G^a_i mod P`` to its
coefficients, so every holder share ``f(j)`` can be checked publicly. The share
for holder ``j`` travels encrypted to ``j``'s X25519 key. The coin for a nonce
is the low bit of ``sha256d(dealer || f(0) || nonce)``.

The group is toy-sized (256-bit safe prime) to keep simulations fast. Once a
coin of some dealer has been combined, ``f(0)`` is public and that dealer's
later coins are predictable; the simulator's adversary is scripted, so this is
acceptable there.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .crypto import sha256d

# Safe prime P = 2Q + 1; G = 4 generates the order-Q subgroup.
P = 0xF4CD207C3D733DF09A3F548FFAE73954E45284718EFFC726CE44862032417843
Q = 0x7A66903E1EB99EF84D1FAA47FD739CAA72294238C77FE393672243101920BC21
G = 4
SCALAR_BYTES = 32


class CoinError(Exception):
    pass


class FaultyDealerError(CoinError):
    """The dealing payload does not yield a valid share for this holder."""


class InsufficientSharesError(CoinError):
    pass


@dataclass(frozen=True)
class DealingPayload:
    dealer: int
    commitments: tuple[int, ...]
    encrypted_shares: tuple[bytes, ...]

    @property
    def threshold(self) -> int:
        return len(self.commitments)


@dataclass(frozen=True)
class CoinShare:
    """Holder's share of a dealer's coin for one nonce.

    ``proof`` names the dealing the share belongs to (the dealing unit digest),
    which is what the share is checked against.
    """

    dealer: int
    holder: int
    nonce: int
    value: int
    proof: bytes = b""


def _scalar(seed: bytes, label: bytes, i: int) -> int:
    return int.from_bytes(hashlib.sha512(label + seed + i.to_bytes(4, "big")).digest(), "big") % Q


def _keystream(shared: bytes, dealer: int, holder: int) -> bytes:
    return hashlib.sha256(b"dagbft/share/" + shared + struct.pack(">II", dealer, holder)).digest()


def _mask(value: bytes, stream: bytes) -> bytes:
    return bytes(a ^ b for a, b in zip(value, stream))


def poly_eval(coefficients, x: int) -> int:
    acc = 0
    for c in reversed(coefficients):
        acc = (acc * x + c) % Q
    return acc


class ShamirCoin:
    """The baseline coin backend; consensus only relies on these five methods."""

    def deal(self, dealer: int, n: int, k: int, seed: bytes, recipients) -> DealingPayload:
        """Share a fresh secret among ``n`` holders with threshold ``k``.

        :param recipients: the holders' X25519 public keys, holder ``j`` at index ``j - 1``
        """
        if not 1 <= k <= n:
            raise ValueError(f"threshold {k} outside 1..{n}")
        if len(recipients) != n:
            raise ValueError("need one recipient key per holder")
        coeffs = [_scalar(seed, b"coef", i) for i in range(k)]
        commitments = tuple(pow(G, c, P) for c in coeffs)
        shares = []
        for j, pk in enumerate(recipients, start=1):
            eph = X25519PrivateKey.from_private_bytes(hashlib.sha256(b"eph" + seed + j.to_bytes(4, "big")).digest())
            shared = eph.exchange(X25519PublicKey.from_public_bytes(pk))
            body = poly_eval(coeffs, j).to_bytes(SCALAR_BYTES, "big")
            eph_pk = eph.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
            shares.append(eph_pk + _mask(body, _keystream(shared, dealer, j)))
        return DealingPayload(dealer, commitments, tuple(shares))

    def open(self, payload: DealingPayload, holder: int, secret: X25519PrivateKey) -> int:
        """Decrypt the holder's raw share value (no validity check)."""
        try:
            blob = payload.encrypted_shares[holder - 1]
        except IndexError:
            raise FaultyDealerError(f"no ciphertext for holder {holder}") from None
        if len(blob) != 32 + SCALAR_BYTES:
            raise FaultyDealerError("ciphertext has wrong length")
        try:
            shared = secret.exchange(X25519PublicKey.from_public_bytes(blob[:32]))
        except ValueError as exc:
            raise FaultyDealerError("cannot derive decryption key") from exc
        return int.from_bytes(_mask(blob[32:], _keystream(shared, payload.dealer, holder)), "big")

    def extract_share(self, payload: DealingPayload, holder: int, secret, nonce: int, proof: bytes = b"") -> CoinShare:
        value = self.open(payload, holder, secret)
        if not self.verify_value(payload.commitments, holder, value):
            raise FaultyDealerError(f"share of dealer {payload.dealer} for holder {holder} fails its commitments")
        return CoinShare(payload.dealer, holder, nonce, value, proof)

    def verify_value(self, commitments, holder: int, value: int) -> bool:
        if not 0 <= value < Q or holder < 1:
            return False
        rhs, x = 1, 1
        for c in commitments:
            rhs = rhs * pow(c, x, P) % P
            x = x * holder % Q
        return pow(G, value, P) == rhs

    def verify_share(self, commitments, share: CoinShare) -> bool:
        return self.verify_value(commitments, share.holder, share.value)

    def combine(self, shares, nonce: int, threshold: int) -> int:
        """Toss the coin from at least ``threshold`` verified shares."""
        shares = list(shares)
        if len({(s.dealer, s.nonce, s.proof) for s in shares}) > 1:
            raise CoinError("shares mix dealers or nonces")
        if shares and shares[0].nonce != nonce:
            raise CoinError(f"shares are for nonce {shares[0].nonce}, not {nonce}")
        by_holder = {s.holder: s for s in shares}
        if len(by_holder) != len(shares):
            raise CoinError("duplicate holders")
        if len(shares) < threshold:
            raise InsufficientSharesError(f"{len(shares)} shares, need {threshold}")
        points = [(h, by_holder[h].value) for h in sorted(by_holder)[:threshold]]
        secret = interpolate_at_zero(points)
        return coin_bit(shares[0].dealer, secret, nonce)


def interpolate_at_zero(points) -> int:
    """Lagrange interpolation of f(0) over GF(Q)."""
    total = 0
    for i, (xi, yi) in enumerate(points):
        num, den = 1, 1
        for j, (xj, _) in enumerate(points):
            if i != j:
                num = num * -xj % Q
                den = den * (xi - xj) % Q
        total = (total + yi * num * pow(den, -1, Q)) % Q
    return total


def coin_bit(dealer: int, secret: int, nonce: int) -> int:
    digest = sha256d(struct.pack(">I", dealer) + secret.to_bytes(SCALAR_BYTES, "big") + struct.pack(">Q", nonce))
    return digest[-1] & 1


DEFAULT_SCHEME = ShamirCoin()


def coin_deal(dealer: int, n: int, k: int, seed: bytes, recipients) -> DealingPayload:
    return DEFAULT_SCHEME.deal(dealer, n, k, seed, recipients)


def coin_extract_share(payload: DealingPayload, holder: int, secret, nonce: int, proof: bytes = b"") -> CoinShare:
    return DEFAULT_SCHEME.extract_share(payload, holder, secret, nonce, proof)


def coin_verify_share(commitments, share: CoinShare) -> bool:
    return DEFAULT_SCHEME.verify_share(commitments, share)


def coin_combine(shares, nonce: int, threshold: int) -> int:
    return DEFAULT_SCHEME.combine(shares, nonce, threshold)
