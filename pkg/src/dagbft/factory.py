"""Unit production: parent selection, coin dealing and coin-share embedding."""

from __future__ import annotations

import copy
import hashlib
import random
from dataclasses import dataclass, replace

from .coin import DEFAULT_SCHEME, CoinShare, FaultyDealerError
from .committee import Committee, ProcessKeys
from .crypto import common_permutation, sign
from .dag import LocalView, Record
from .units import Unit

# Coin shares are embedded only in prime units of at least this level.
FIRST_SHARE_LEVEL = 4


def sigma(committee: Committee, nonce: int) -> list[int]:
    return common_permutation(nonce, committee.verify_keys)


def fai(view: LocalView, nonce: int, v) -> int:
    """First process in ``sigma(nonce)`` whose dealing unit is below ``v``."""
    v = view.record(v)
    for j in sigma(view.committee, nonce):
        if v.dealers >> j & 1:
            return j
    raise ValueError("no dealing unit below the given unit")


@dataclass
class Transversal:
    dealers: list[int]
    shares: list


class ProcessCore:
    """One process: its keys, local view, randomness and creation history."""

    def __init__(self, pid: int, committee: Committee, keys: ProcessKeys, seed: int | bytes = 0, sync_period: int = 1, coin=DEFAULT_SCHEME):
        if keys.pid != pid:
            raise ValueError("keys belong to another process")
        self.pid = pid
        self.committee = committee
        self.keys = keys
        self.view = LocalView.with_genesis(committee)
        if isinstance(seed, int):
            seed = seed.to_bytes(8, "big", signed=True)
        self.seed = seed
        self.rng = random.Random(hashlib.sha256(b"dagbft/core/" + seed + pid.to_bytes(4, "big")).digest())
        self.coin = coin
        self.sync_period = sync_period
        self.last_created: bytes | None = None
        self.created: list[bytes] = []
        self.transversal_sizes: list[int] = []
        self._opened: dict[bytes, int | None] = {}
        # a silent process receives units but never sends any
        self.silent = False

    @property
    def n(self) -> int:
        return self.committee.n

    def clone(self) -> "ProcessCore":
        """Independent copy sharing keys and immutable unit records."""
        twin = copy.copy(self)
        twin.view = self.view.clone()
        twin.rng = random.Random()
        twin.rng.setstate(self.rng.getstate())
        twin.created = list(self.created)
        twin.transversal_sizes = list(self.transversal_sizes)
        twin._opened = dict(self._opened)
        return twin

    def create_unit(self, payload: bytes = b"") -> Unit:
        return create_unit(self, payload)

    def own_share_value(self, dealing: Record) -> int | None:
        """Decrypted and verified share of ``dealing``'s coin, or None for a faulty dealer."""
        if dealing.digest not in self._opened:
            try:
                share = self.coin.extract_share(dealing.unit.dealing, self.pid, self.keys.decryption, 0)
                self._opened[dealing.digest] = share.value
            except FaultyDealerError:
                self._opened[dealing.digest] = None
        return self._opened[dealing.digest]


def create_unit(core: ProcessCore, payload: bytes = b"") -> Unit:
    """Build, sign and store a new unit on top of ``core``'s view."""
    view = core.view
    genesis = view.genesis
    if core.last_created is None:
        parents = (genesis.digest, genesis.digest)
    else:
        maxima = sorted(view.maximal_units(), key=lambda r: r.digest)
        above = [m for m in maxima if m.below & view.record(core.last_created).bit]
        p1 = core.rng.choice(above)
        p2 = core.rng.choice(maxima)
        parents = (p1.digest, p2.digest)
    draft = Unit(core.pid, parents, payload)
    draft = embed_coin_material(core, draft)
    unit = draft.with_signature(sign(core.keys.signing, draft.signing_preimage()))
    view.insert_unit(unit, verify_signature=False)
    core.last_created = unit.digest
    core.created.append(unit.digest)
    return unit


def embed_coin_material(core: ProcessCore, draft: Unit) -> Unit:
    view = core.view
    g = view.genesis.digest
    if draft.parents == (g, g):
        seed = hashlib.sha256(b"dagbft/deal/" + core.seed + core.pid.to_bytes(4, "big")).digest()
        payload = core.coin.deal(core.pid, core.n, core.committee.coin_threshold, seed, core.committee.encryption_keys)
        return replace(draft, dealing=payload)
    rec = view.preview(draft)
    if not rec.prime or rec.level < FIRST_SHARE_LEVEL:
        return draft
    t = build_transversal(core, rec)
    core.transversal_sizes.append(len(t.dealers))
    return replace(draft, coin_shares=tuple(t.shares))


def build_transversal(core: ProcessCore, rec: Record) -> Transversal:
    """Walk ``sigma(level)`` adding dealers until every family member is hit."""
    view = core.view
    level = rec.level
    family = set()
    for lv in range(1, level - 2):
        for v in view.prime_units_at(lv):
            if rec.below & v.bit:
                family.add(v.dealers)
    union = 0
    for mask in family:
        union |= mask
    hit = 0
    dealers, shares = [], []
    for j in sigma(core.committee, level):
        if all(mask & hit for mask in family):
            break
        if not union >> j & 1:
            continue
        hit |= 1 << j
        dealers.append(j)
        dealing = view.dealing_unit_below(j, rec)
        value = core.own_share_value(dealing) if dealing is not None else None
        if value is not None:
            shares.append(CoinShare(j, core.pid, level, value, dealing.digest))
    return Transversal(dealers, shares)

