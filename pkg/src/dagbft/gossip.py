"""Pairwise synchronisation: wire messages, all-or-nothing batch application, sessions.

Wire format (integers big-endian), one tag byte per message::

    0x01 Hello      u32 sender id, u64 session nonce
    0x02 Inventory  u32 count, then count 32-byte digests in ascending order
    0x03 Units      u32 count, then per unit u32 length + canonical unit encoding
    0x04 Reject     u16 length + UTF-8 reason

Messages are self-delimiting, so several may be concatenated into one frame.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .crypto import HASH_SIZE, sha256d
from .dag import InvalidUnitError, LocalView, MalformedUnitError
from .units import DecodeError, Unit, canonical_decode

TAG_HELLO, TAG_INVENTORY, TAG_UNITS, TAG_REJECT = 1, 2, 3, 4

REASON_ID_MISMATCH = "id-mismatch"
REASON_BAD_SIGNATURE = "bad-signature"
REASON_MISSING_PARENT = "missing-parent"
REASON_MALFORMED = "malformed"


class WireError(ValueError):
    pass


class SyncRejected(Exception):
    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason
        self.detail = detail


@dataclass(frozen=True)
class Hello:
    sender: int
    session: int


@dataclass(frozen=True)
class Inventory:
    digests: tuple[bytes, ...]

    def __post_init__(self):
        object.__setattr__(self, "digests", tuple(sorted(self.digests)))


@dataclass(frozen=True)
class Units:
    encodings: tuple[bytes, ...]


@dataclass(frozen=True)
class Reject:
    reason: str


def encode_message(msg) -> bytes:
    if isinstance(msg, Hello):
        return struct.pack(">BIQ", TAG_HELLO, msg.sender, msg.session)
    if isinstance(msg, Inventory):
        return struct.pack(">BI", TAG_INVENTORY, len(msg.digests)) + b"".join(msg.digests)
    if isinstance(msg, Units):
        parts = [struct.pack(">BI", TAG_UNITS, len(msg.encodings))]
        for enc in msg.encodings:
            parts.append(struct.pack(">I", len(enc)))
            parts.append(enc)
        return b"".join(parts)
    if isinstance(msg, Reject):
        raw = msg.reason.encode()
        return struct.pack(">BH", TAG_REJECT, len(raw)) + raw
    raise TypeError(f"not a sync message: {msg!r}")


def encode_frame(messages) -> bytes:
    return b"".join(encode_message(m) for m in messages)


def decode_frame(data: bytes) -> list:
    """Split a frame into messages; raises ``WireError`` on any malformation."""
    out, pos, n = [], 0, len(data)

    def take(k):
        nonlocal pos
        if pos + k > n:
            raise WireError("truncated message")
        chunk = data[pos : pos + k]
        pos += k
        return chunk

    while pos < n:
        tag = take(1)[0]
        if tag == TAG_HELLO:
            out.append(Hello(*struct.unpack(">IQ", take(12))))
        elif tag == TAG_INVENTORY:
            (count,) = struct.unpack(">I", take(4))
            raw = take(HASH_SIZE * count)
            digests = tuple(raw[i : i + HASH_SIZE] for i in range(0, len(raw), HASH_SIZE))
            if digests != tuple(sorted(set(digests))):
                raise WireError("inventory digests not strictly ascending")
            out.append(Inventory(digests))
        elif tag == TAG_UNITS:
            (count,) = struct.unpack(">I", take(4))
            encs = []
            for _ in range(count):
                (ln,) = struct.unpack(">I", take(4))
                encs.append(take(ln))
            out.append(Units(tuple(encs)))
        elif tag == TAG_REJECT:
            (ln,) = struct.unpack(">H", take(2))
            try:
                out.append(Reject(take(ln).decode()))
            except UnicodeDecodeError as exc:
                raise WireError("reject reason is not UTF-8") from exc
        else:
            raise WireError(f"unknown message tag {tag:#04x}")
    return out


def missing_for(view: LocalView, inventory) -> Units:
    """Units of ``view`` absent from ``inventory``, parents first."""
    have = inventory if isinstance(inventory, (set, frozenset)) else set(inventory)
    return Units(tuple(r.unit.encoding for r in view.order if r.digest not in have))


def apply_units(view: LocalView, encodings) -> list[Unit]:
    """Validate a received batch completely, then insert it; the view is untouched on error.

    Raises ``SyncRejected`` with reason malformed, missing-parent or bad-signature.
    """
    fresh: list[Unit] = []
    pending: set[bytes] = set()
    for enc in encodings:
        if sha256d(enc) in view.records:
            continue
        try:
            unit = canonical_decode(enc)
            view.check_structure(unit)
        except (DecodeError, MalformedUnitError) as exc:
            raise SyncRejected(REASON_MALFORMED, str(exc)) from None
        if unit.digest in pending:
            continue
        if not unit.parents or any(p not in view.records and p not in pending for p in unit.parents):
            raise SyncRejected(REASON_MISSING_PARENT, f"unit {unit.digest.hex()[:12]}")
        fresh.append(unit)
        pending.add(unit.digest)
    for unit in fresh:
        if not view.check_signature(unit):
            raise SyncRejected(REASON_BAD_SIGNATURE, f"unit {unit.digest.hex()[:12]} by {unit.creator}")
    for unit in fresh:
        try:
            view.insert_unit(unit, verify_signature=False)
        except InvalidUnitError as exc:  # pragma: no cover - excluded by the checks above
            raise AssertionError(f"pre-validated unit failed to insert: {exc}") from exc
    return fresh


def check_hello(msg, expected: int) -> Hello:
    if not isinstance(msg, Hello):
        raise SyncRejected(REASON_MALFORMED, "expected Hello")
    if msg.sender != expected:
        raise SyncRejected(REASON_ID_MISMATCH, f"peer claims {msg.sender}, expected {expected}")
    return msg


class LoopbackTransport:
    """In-memory transport; every frame is encoded to bytes and decoded again.

    :param tamper: optional ``f(direction, frame_bytes) -> frame_bytes`` applied in
        flight, with ``direction`` one of ``"to_responder"`` / ``"to_initiator"``
    """

    def __init__(self, tamper=None):
        self.tamper = tamper
        self.frames: list[tuple[str, bytes]] = []

    def carry(self, direction: str, messages) -> list:
        data = encode_frame(messages)
        if self.tamper is not None:
            data = self.tamper(direction, data)
        self.frames.append((direction, data))
        return decode_frame(data)


@dataclass(frozen=True)
class Completed:
    sent: int
    received: int


@dataclass(frozen=True)
class Rejected:
    reason: str
    side: str
    detail: str = ""


@dataclass
class _Side:
    """Session endpoint: process id, view, and whether it withholds its units."""

    pid: int
    view: LocalView
    silent: bool = False


def _side(x, silent=False) -> _Side:
    if isinstance(x, LocalView):
        raise TypeError("pass a process core (it carries the process id)")
    return _Side(x.pid, x.view, silent or getattr(x, "silent", False))


def _parse(messages, *types):
    if len(messages) != len(types) or not all(isinstance(m, t) for m, t in zip(messages, types)):
        if messages and isinstance(messages[0], Reject):
            raise SyncRejected(messages[0].reason, "peer rejected")
        raise SyncRejected(REASON_MALFORMED, "unexpected message sequence")
    return messages


def sync_session(initiator, responder, transport=None, session: int = 0):
    """Run one synchronisation between two cores over ``transport``.

    The initiator sends Hello and Inventory; the responder checks the id and
    answers with Hello, Inventory and the units the initiator lacks; the
    initiator checks the id, applies them and sends back the units the
    responder lacks. A rejected batch leaves the receiving view unchanged.
    """
    transport = transport or LoopbackTransport()
    a, b = _side(initiator), _side(responder)
    received_a = received_b = 0
    try:
        side = "responder"
        m1 = transport.carry("to_responder", [Hello(a.pid, session), Inventory(tuple(a.view.records))])
        _, inv_a = _parse(m1, Hello, Inventory)
        check_hello(m1[0], a.pid)
        units_b = Units(()) if b.silent else missing_for(b.view, inv_a.digests)
        m2 = transport.carry("to_initiator", [Hello(b.pid, session), Inventory(tuple(b.view.records)), units_b])
        side = "initiator"
        hello_b, inv_b, got_b = _parse(m2, Hello, Inventory, Units)
        check_hello(hello_b, b.pid)
        received_a = len(apply_units(a.view, got_b.encodings))
        units_a = Units(()) if a.silent else missing_for(a.view, inv_b.digests)
        m3 = transport.carry("to_responder", [units_a])
        side = "responder"
        (got_a,) = _parse(m3, Units)
        received_b = len(apply_units(b.view, got_a.encodings))
    except SyncRejected as exc:
        return Rejected(exc.reason, side, exc.detail)
    except WireError as exc:
        return Rejected(REASON_MALFORMED, side, str(exc))
    return Completed(sent=received_b, received=received_a)
