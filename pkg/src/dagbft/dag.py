"""A process's local view of the unit poset and its structural queries.

Every stored unit gets a ``Record`` with attributes that depend only on the
unit's down-set (level, prime flag, per-creator floors, ancestor bitset), so they
are computed once at insertion and never change. Reachability uses bitsets:
unit ``i`` (in insertion order) owns bit ``i`` and ``Record.below`` is the set of
its ancestors including itself.
"""

from __future__ import annotations

import copy
import enum
import json
import struct
from dataclasses import dataclass, field

from .committee import Committee
from .crypto import verify
from .units import Unit, canonical_decode


class InvalidUnitError(ValueError):
    pass


class MissingParentError(InvalidUnitError):
    pass


class BadSignatureError(InvalidUnitError):
    pass


class MalformedUnitError(InvalidUnitError):
    pass


class InsertResult(enum.Enum):
    INSERTED = "inserted"
    DUPLICATE_IGNORED = "duplicate-ignored"


@dataclass(eq=False, slots=True)
class Record:
    unit: Unit
    digest: bytes
    index: int
    bit: int
    below: int
    level: int
    prime: bool
    parents: tuple["Record", ...]
    # floor[c - 1]: maximal units of creator c in the down-set (this unit included)
    floor: tuple[tuple["Record", ...], ...]
    # bitmask over creator ids whose dealing unit lies in the down-set
    dealers: int
    down: list | None = field(default=None)

    @property
    def creator(self) -> int:
        return self.unit.creator

    def __repr__(self):
        return f"Record(#{self.index} c={self.creator} L={self.level}{' prime' if self.prime else ''})"


class LocalView:
    """Downward-closed set of units known to one process.

    Query methods accept a digest, a ``Unit`` or a ``Record``.
    """

    def __init__(self, committee: Committee):
        self.committee = committee
        self.n = committee.n
        self.supermajority = committee.supermajority
        self.records: dict[bytes, Record] = {}
        self.order: list[Record] = []
        self.by_creator: dict[int, list[Record]] = {c: [] for c in range(1, self.n + 2)}
        self.dealing_units: dict[int, list[Record]] = {c: [] for c in committee.pids}
        self._primes: dict[int, list[Record]] = {}
        self._primes_by: dict[tuple[int, int], list[Record]] = {}
        self._maxima: dict[bytes, Record] = {}
        self._tops: dict[int, list[Record]] = {c: [] for c in committee.pids}
        self._fork_peers: dict[bytes, set[bytes]] = {}
        self.coin_shares: dict[tuple[bytes, int], dict[int, object]] = {}
        self.max_level = -1
        self.prime_count = 0

    @classmethod
    def with_genesis(cls, committee: Committee) -> "LocalView":
        view = cls(committee)
        view.insert_unit(committee.genesis)
        return view

    def clone(self) -> "LocalView":
        """Copy with independent containers; records are shared since they never change."""
        twin = copy.copy(self)
        twin.records = dict(self.records)
        twin.order = list(self.order)
        twin.by_creator = {c: list(v) for c, v in self.by_creator.items()}
        twin.dealing_units = {c: list(v) for c, v in self.dealing_units.items()}
        twin._primes = {k: list(v) for k, v in self._primes.items()}
        twin._primes_by = {k: list(v) for k, v in self._primes_by.items()}
        twin._maxima = dict(self._maxima)
        twin._tops = {c: list(v) for c, v in self._tops.items()}
        twin._fork_peers = {k: set(v) for k, v in self._fork_peers.items()}
        twin.coin_shares = {k: dict(v) for k, v in self.coin_shares.items()}
        return twin

    # -- lookups ---------------------------------------------------------

    def __len__(self):
        return len(self.records)

    def __contains__(self, item) -> bool:
        return self._digest(item) in self.records

    def __iter__(self):
        return iter(self.order)

    @staticmethod
    def _digest(x) -> bytes:
        if isinstance(x, bytes):
            return x
        return x.digest

    def record(self, x) -> Record:
        if isinstance(x, Record):
            return x
        try:
            return self.records[self._digest(x)]
        except KeyError:
            raise KeyError(f"unknown unit {self._digest(x).hex()[:12]}") from None

    @property
    def genesis(self) -> Record:
        return self.order[0]

    def digests(self) -> set[bytes]:
        return set(self.records)

    # -- insertion -------------------------------------------------------

    def check_structure(self, unit: Unit):
        """Raise ``MalformedUnitError`` for units no correct process could produce."""
        g = self.committee.genesis
        if unit.creator == self.committee.genesis_creator:
            if unit != g:
                raise MalformedUnitError("unit claims the genesis creator")
            return
        if not 1 <= unit.creator <= self.n:
            raise MalformedUnitError(f"creator {unit.creator} out of range")
        if len(unit.parents) != 2:
            raise MalformedUnitError(f"expected 2 parents, got {len(unit.parents)}")
        is_dealing = unit.parents == (g.digest, g.digest)
        if is_dealing != (unit.dealing is not None):
            raise MalformedUnitError("dealing payload must appear exactly on dealing units")
        if unit.dealing is not None:
            d = unit.dealing
            if d.dealer != unit.creator or len(d.encrypted_shares) != self.n or len(d.commitments) != self.committee.coin_threshold:
                raise MalformedUnitError("dealing payload has wrong shape")
        for s in unit.coin_shares:
            if s.holder != unit.creator or not 1 <= s.dealer <= self.n:
                raise MalformedUnitError("coin share not held by the unit creator")

    def check_signature(self, unit: Unit) -> bool:
        if unit.creator == self.committee.genesis_creator:
            return True
        return verify(self.committee.public_key_object(unit.creator), unit.signing_preimage(), unit.signature)

    def insert_unit(self, unit: Unit, verify_signature: bool = True) -> InsertResult:
        """Add ``unit``; its parents must already be present."""
        digest = unit.digest
        if digest in self.records:
            return InsertResult.DUPLICATE_IGNORED
        self.check_structure(unit)
        if not self.records and not unit.is_genesis:
            raise MissingParentError("view has no genesis yet")
        try:
            parents = tuple(self.records[p] for p in unit.parents)
        except KeyError:
            raise MissingParentError(f"unit {digest.hex()[:12]} has an unknown parent") from None
        if verify_signature and not self.check_signature(unit):
            raise BadSignatureError(f"bad signature on unit {digest.hex()[:12]}")
        rec = self._build(unit, parents, len(self.order))
        self._store(rec)
        return InsertResult.INSERTED

    def preview(self, unit: Unit) -> Record:
        """Derived attributes ``unit`` would get if inserted now (nothing is stored)."""
        parents = tuple(self.records[p] for p in unit.parents)
        return self._build(unit, parents, len(self.order))

    def _build(self, unit: Unit, parents: tuple[Record, ...], index: int) -> Record:
        bit = 1 << index
        if not parents:
            return Record(unit, unit.digest, index, bit, bit, 0, True, (), tuple(() for _ in range(self.n)), 0)
        below = bit
        for p in parents:
            below |= p.below
        creator = unit.creator
        floors = []
        own_strict: tuple[Record, ...] = ()
        p0 = parents[0].floor
        p1 = parents[1].floor
        for c in range(self.n):
            a, b = p0[c], p1[c]
            if a is b or not b:
                merged = a
            elif not a:
                merged = b
            else:
                merged = _maxima_of(a + b)
            if c == creator - 1:
                own_strict = merged
                merged = ()
            floors.append(merged)
        rec = Record(unit, unit.digest, index, bit, below, 0, True, parents, (), 0)
        floors[creator - 1] = (rec,)
        rec.floor = tuple(floors)
        dealers = parents[0].dealers | parents[1].dealers
        if unit.dealing is not None:
            dealers |= 1 << creator
        rec.dealers = dealers

        m = max(p.level for p in parents)
        rec.level = m + 1 if self._high_below_count(rec, m) >= self.supermajority else m
        rec.prime = all(f.level != rec.level for f in own_strict)
        return rec

    def _high_below_count(self, rec: Record, level: int) -> int:
        """Creators having a prime unit of ``level`` strictly and high below ``rec``."""
        sm = self.supermajority
        count, remaining = 0, self.n
        for c in range(1, self.n + 1):
            for p in self._primes_by.get((level, c), ()):
                if p is not rec and rec.below & p.bit and self._support(p, rec) >= sm:
                    count += 1
                    break
            remaining -= 1
            if count >= sm or count + remaining < sm:
                break
        return count

    def _store(self, rec: Record):
        unit = rec.unit
        self.records[rec.digest] = rec
        self.order.append(rec)
        self.by_creator[unit.creator].append(rec)
        for p in rec.parents:
            self._maxima.pop(p.digest, None)
        self._maxima[rec.digest] = rec
        if rec.prime:
            self._primes.setdefault(rec.level, []).append(rec)
            self._primes_by.setdefault((rec.level, unit.creator), []).append(rec)
            self.prime_count += 1
        self.max_level = max(self.max_level, rec.level)
        if unit.is_genesis:
            return
        if unit.dealing is not None:
            self.dealing_units[unit.creator].append(rec)
        for s in unit.coin_shares:
            self.coin_shares.setdefault((s.proof, s.nonce), {}).setdefault(s.holder, s)
        self._track_forks(rec)

    def _track_forks(self, rec: Record):
        c = rec.creator
        tops = self._tops[c]
        if all(rec.below & t.bit for t in tops):
            self._tops[c] = [rec]
            return
        for w in self.by_creator[c]:
            if w is not rec and not rec.below & w.bit:
                self._fork_peers.setdefault(w.digest, set()).add(rec.digest)
                self._fork_peers.setdefault(rec.digest, set()).add(w.digest)
        self._tops[c] = [t for t in tops if not rec.below & t.bit] + [rec]

    # -- order and support -------------------------------------------------

    def is_below(self, u, v) -> bool:
        """True iff ``u <= v``."""
        u, v = self.record(u), self.record(v)
        return bool(v.below & u.bit)

    def _support(self, u: Record, v: Record) -> int:
        count = 0
        ub = u.bit
        for fl in v.floor:
            for f in fl:
                if f.below & ub:
                    count += 1
                    break
        return count

    def support_between(self, u, v) -> int:
        """Number of real creators owning some W with ``u <= W <= v``."""
        u, v = self.record(u), self.record(v)
        if not v.below & u.bit:
            raise ValueError("support_between requires u <= v")
        return self._support(u, v)

    def high_above(self, u, v) -> bool:
        """True iff ``v`` is high above ``u``."""
        u, v = self.record(u), self.record(v)
        return bool(v.below & u.bit) and self._support(u, v) >= self.supermajority

    def level_of(self, u) -> int:
        return self.record(u).level

    def is_prime(self, u) -> bool:
        return self.record(u).prime

    def prime_units_at(self, level: int) -> list[Record]:
        return list(self._primes.get(level, ()))

    def primes_by(self, level: int, creator: int) -> list[Record]:
        return list(self._primes_by.get((level, creator), ()))

    def prime_ancestors(self, v) -> list[Record]:
        """Prime units one level below prime ``v`` that ``v`` is high above (genesis excluded)."""
        v = self.record(v)
        if not v.prime:
            raise ValueError("prime_ancestors needs a prime unit")
        if v.down is None:
            sm = self.supermajority
            g = self.committee.genesis_creator
            v.down = [
                p
                for p in self._primes.get(v.level - 1, ())
                if p.creator != g and p is not v and v.below & p.bit and self._support(p, v) >= sm
            ]
        return v.down

    def maximal_units(self, above=None) -> list[Record]:
        """Units with nothing stored above them, optionally only those above ``above``."""
        if above is None:
            return list(self._maxima.values())
        a = self.record(above)
        return [m for m in self._maxima.values() if m.below & a.bit]

    # -- forks -----------------------------------------------------------

    def forks_of(self, u) -> list[Record]:
        """Units by the same creator that are incomparable with ``u``."""
        u = self.record(u)
        return [self.records[d] for d in sorted(self._fork_peers.get(u.digest, ()))]

    @property
    def fork_registry(self) -> dict[int, set[frozenset]]:
        reg: dict[int, set[frozenset]] = {}
        for d, peers in self._fork_peers.items():
            c = self.records[d].creator
            for p in peers:
                reg.setdefault(c, set()).add(frozenset((d, p)))
        return reg

    def forkers(self) -> set[int]:
        return {self.records[d].creator for d in self._fork_peers}

    def dealing_unit_below(self, dealer: int, v) -> Record | None:
        """The dealer's dealing unit below ``v`` (smallest digest if the dealer forked it)."""
        v = self.record(v)
        found = [r for r in self.dealing_units.get(dealer, ()) if v.below & r.bit]
        return min(found, key=lambda r: r.digest) if found else None

    def units_of_mask(self, mask: int) -> list[Record]:
        out = []
        while mask:
            low = mask & -mask
            out.append(self.order[low.bit_length() - 1])
            mask ^= low
        return out


def _maxima_of(candidates) -> tuple[Record, ...]:
    uniq = []
    for r in candidates:
        if r not in uniq:
            uniq.append(r)
    return tuple(r for r in uniq if not any(o is not r and o.below & r.bit for o in uniq))


# -- unit log export/import ----------------------------------------------------


def export_unit_log(view: LocalView, path) -> None:
    """Write units in insertion order as ``u32 length || canonical encoding`` records."""
    with open(path, "wb") as fh:
        for rec in view.order:
            enc = rec.unit.encoding
            fh.write(struct.pack(">I", len(enc)))
            fh.write(enc)


def read_unit_log(path) -> list[Unit]:
    units = []
    with open(path, "rb") as fh:
        data = fh.read()
    pos = 0
    while pos < len(data):
        if pos + 4 > len(data):
            raise ValueError(f"truncated length prefix at byte {pos}")
        (ln,) = struct.unpack_from(">I", data, pos)
        pos += 4
        if pos + ln > len(data):
            raise ValueError(f"truncated record at byte {pos}")
        units.append(canonical_decode(data[pos : pos + ln]))
        pos += ln
    return units


def import_unit_log(path, committee: Committee, verify_signatures: bool = True) -> LocalView:
    view = LocalView(committee)
    for unit in read_unit_log(path):
        view.insert_unit(unit, verify_signature=verify_signatures)
    return view


def dump_jsonl(view: LocalView, path) -> None:
    """Debug dump: one JSON object per unit in insertion order."""
    with open(path, "w") as fh:
        for rec in view.order:
            fh.write(
                json.dumps(
                    {
                        "digest": rec.digest.hex(),
                        "creator": rec.creator,
                        "parents": [p.hex() for p in rec.unit.parents],
                        "level": rec.level,
                        "prime": rec.prime,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
