"""The unit record and its canonical byte encoding.

Layout (all integers big-endian)::

    u32 creator
    u8  parent count, then 32 bytes per parent digest
    u32 payload length, payload bytes
    u8  dealing marker (0 = none, 1 = present); if present:
          u32 dealer, u16 commitment count, 32 bytes per commitment,
          u16 ciphertext count, per ciphertext u16 length + bytes
    u16 coin share count; per share, sorted by (dealer, holder):
          u32 dealer, u32 holder, u32 nonce, 32-byte value, u16 proof length + proof
    u16 signature length (0 = unsigned), signature bytes

The unit digest is ``sha256d`` of the full encoding; the signature covers the
encoding with an empty signature.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from functools import cached_property

from .coin import SCALAR_BYTES, CoinShare, DealingPayload
from .crypto import HASH_SIZE, sha256d


class DecodeError(ValueError):
    pass


@dataclass(frozen=True)
class Unit:
    creator: int
    parents: tuple[bytes, ...]
    payload: bytes = b""
    dealing: DealingPayload | None = None
    coin_shares: tuple[CoinShare, ...] = ()
    signature: bytes = b""

    def __post_init__(self):
        object.__setattr__(self, "parents", tuple(self.parents))
        object.__setattr__(self, "coin_shares", tuple(sorted(self.coin_shares, key=lambda s: (s.dealer, s.holder))))

    @cached_property
    def encoding(self) -> bytes:
        return canonical_encode(self)

    @cached_property
    def digest(self) -> bytes:
        return sha256d(self.encoding)

    def signing_preimage(self) -> bytes:
        return canonical_encode(self, with_signature=False)

    def with_signature(self, signature: bytes) -> "Unit":
        return replace(self, signature=signature)

    @property
    def is_genesis(self) -> bool:
        return not self.parents

    def __repr__(self):
        return f"Unit(creator={self.creator}, digest={self.digest.hex()[:12]})"


def genesis_unit(n: int) -> Unit:
    return Unit(creator=n + 1, parents=())


def canonical_encode(unit: Unit, with_signature: bool = True) -> bytes:
    out = [struct.pack(">IB", unit.creator, len(unit.parents))]
    out.extend(unit.parents)
    out.append(struct.pack(">I", len(unit.payload)))
    out.append(unit.payload)
    d = unit.dealing
    if d is None:
        out.append(b"\0")
    else:
        out.append(struct.pack(">BIH", 1, d.dealer, len(d.commitments)))
        out.extend(c.to_bytes(SCALAR_BYTES, "big") for c in d.commitments)
        out.append(struct.pack(">H", len(d.encrypted_shares)))
        for ct in d.encrypted_shares:
            out.append(struct.pack(">H", len(ct)))
            out.append(ct)
    out.append(struct.pack(">H", len(unit.coin_shares)))
    for s in sorted(unit.coin_shares, key=lambda s: (s.dealer, s.holder)):
        out.append(struct.pack(">III", s.dealer, s.holder, s.nonce))
        out.append(s.value.to_bytes(SCALAR_BYTES, "big"))
        out.append(struct.pack(">H", len(s.proof)))
        out.append(s.proof)
    sig = unit.signature if with_signature else b""
    out.append(struct.pack(">H", len(sig)))
    out.append(sig)
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DecodeError("truncated unit encoding")
        chunk = bytes(self.data[self.pos : self.pos + n])
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))


def canonical_decode(data: bytes) -> Unit:
    r = _Reader(data)
    creator, nparents = r.unpack(">IB")
    parents = tuple(r.take(HASH_SIZE) for _ in range(nparents))
    (plen,) = r.unpack(">I")
    payload = r.take(plen)
    (marker,) = r.unpack(">B")
    dealing = None
    if marker == 1:
        dealer, ncom = r.unpack(">IH")
        commitments = tuple(int.from_bytes(r.take(SCALAR_BYTES), "big") for _ in range(ncom))
        (nct,) = r.unpack(">H")
        cts = []
        for _ in range(nct):
            (ln,) = r.unpack(">H")
            cts.append(r.take(ln))
        dealing = DealingPayload(dealer, commitments, tuple(cts))
    elif marker != 0:
        raise DecodeError(f"bad dealing marker {marker}")
    (nshares,) = r.unpack(">H")
    shares = []
    for _ in range(nshares):
        dealer, holder, nonce = r.unpack(">III")
        value = int.from_bytes(r.take(SCALAR_BYTES), "big")
        (ln,) = r.unpack(">H")
        shares.append(CoinShare(dealer, holder, nonce, value, r.take(ln)))
    (slen,) = r.unpack(">H")
    signature = r.take(slen)
    if r.pos != len(data):
        raise DecodeError("trailing bytes after unit encoding")
    unit = Unit(creator, parents, payload, dealing, tuple(shares), signature)
    if canonical_encode(unit) != bytes(data):
        raise DecodeError("non-canonical unit encoding")
    unit.__dict__["encoding"] = bytes(data)
    return unit
