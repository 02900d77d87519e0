"""Timing-unit election, total ordering and fast validation on one local view.

Votes are ``0``, ``1`` or ``BOT`` (``None``, undetermined by the data). An
evaluation that needs a coin whose shares are not yet in the view returns a
``Blocked`` marker instead and is retried as the view grows. Aggregations
short-circuit: when the known votes already fix the result, blocked inputs do
not block it, so every returned value equals the one a complete evaluation
would give.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .coin import DEFAULT_SCHEME
from .crypto import sha256d
from .dag import LocalView, Record
from .factory import FIRST_SHARE_LEVEL, fai, sigma

BOT = None


@dataclass(frozen=True)
class Blocked:
    """A required coin (dealer, nonce) has fewer than threshold shares in the view."""

    dealer: int
    nonce: int


def round_type(candidate_level: int, level: int):
    """``BOT`` for preliminary rounds, else the parity of the level distance."""
    if level < candidate_level:
        raise ValueError("unit is below the candidate's level")
    if level <= candidate_level + 1:
        return BOT
    return (level - candidate_level) % 2


def sup_maj(votes, threshold: int):
    """The value cast by at least ``threshold`` distinct creators, else ``BOT``.

    ``votes`` is an iterable of ``(creator, value)``; a creator voting several
    times counts once towards each value it cast. Should both values reach the
    threshold (impossible with a tolerated number of forkers) the result is ``BOT``.
    """
    supporters = {0: set(), 1: set()}
    blocked, first_block = set(), None
    for creator, v in votes:
        if isinstance(v, Blocked):
            blocked.add(creator)
            first_block = first_block or v
        elif v is not BOT:
            supporters[v].add(creator)
    winners = [v for v in (0, 1) if len(supporters[v]) >= threshold]
    if len(winners) == 1:
        return winners[0]
    if winners:
        return BOT
    if blocked and any(len(supporters[v] | blocked) >= threshold for v in (0, 1)):
        return first_block
    return BOT


def _exist(values):
    values = list(values)
    if 1 in values:
        return 1
    for v in values:
        if isinstance(v, Blocked):
            return v
    if 0 in values:
        return 0
    return BOT


def exist_pref1(votes):
    """1 if any vote is 1, else 0 if any vote is 0, else ``BOT``."""
    return _exist(v for _, v in votes)


def exist_tc(votes, coin):
    """Like ``exist_pref1`` but falls back to ``coin()`` (a bit or ``Blocked``)."""
    v = _exist(v for _, v in votes)
    return coin() if v is BOT else v


def is_value(x) -> bool:
    return not isinstance(x, Blocked)


@dataclass(frozen=True)
class Decision:
    value: int
    witness: bytes
    offset: int


@dataclass(frozen=True)
class Slot:
    status: str  # "1", "0" or "pending"
    unit: Record | None = None


PENDING = Slot("pending")
SETTLED0 = Slot("0")


@dataclass
class Batch:
    index: int
    timing_unit: Record
    units: list[Record]
    chosen_at_level: int

    def log_record(self) -> dict:
        return {
            "batch": self.index,
            "timing_unit": self.timing_unit.digest.hex(),
            "units": [r.digest.hex() for r in self.units],
            "payloads": [sha256d(r.unit.payload).hex() for r in self.units if r.unit.payload],
        }


def break_ties(units, below=None):
    """Linear extension of a batch: peel off minimal layers, each sorted by tiebreaker.

    ``units`` are ``Unit`` or ``Record`` objects. Without ``below`` (a callable
    ``below(a, b) -> a < b``) minimality is judged from parent links inside the
    batch, which is exact for batches that are differences of down-sets.
    """
    items = list(units)
    if not items:
        return []
    unit_of = [x.unit if isinstance(x, Record) else x for x in items]
    digests = [u.digest for u in unit_of]
    mix = 0
    for d in digests:
        mix ^= int.from_bytes(d, "big")
    key = {d: (int.from_bytes(d, "big") ^ mix, u.creator, d) for d, u in zip(digests, unit_of)}
    remaining = dict(zip(digests, items))
    parents = {d: set(u.parents) for d, u in zip(digests, unit_of)}
    out = []
    while remaining:
        if below is None:
            layer = [d for d in remaining if not parents[d] & remaining.keys()]
        else:
            layer = [d for d in remaining if not any(o != d and below(remaining[o], remaining[d]) for o in remaining)]
        layer.sort(key=key.__getitem__)
        for d in layer:
            out.append(remaining.pop(d))
    return out


def validation_status(view: LocalView, u) -> Record | None:
    """A validator of ``u``: a unit high above it and above none of its forks."""
    u = view.record(u)
    forks = view.forks_of(u)
    sm = view.supermajority
    if not forks:
        for m in view.maximal_units(above=u):
            if view._support(u, m) >= sm:
                return m
        return None
    fork_bits = 0
    for f in forks:
        fork_bits |= f.bit
    for v in view.order[u.index :]:
        if v.below & u.bit and not v.below & fork_bits and view._support(u, v) >= sm:
            return v
    return None


class ConsensusState:
    """Memoised voting and ordering state owned by one process."""

    def __init__(self, view: LocalView, coin=DEFAULT_SCHEME):
        self.view = view
        self.coin = coin
        self.threshold = view.supermajority
        self.pi_memo: dict[tuple[bytes, bytes], object] = {}
        self.delta_memo: dict[tuple[bytes, bytes], object] = {}
        self.coins: dict[tuple[bytes, int], int] = {}
        self._share_checks: dict[tuple[bytes, int, int], bool] = {}
        self.decisions: dict[bytes, Decision] = {}
        self.timing: list[Record] = []
        self.batches: list[Batch] = []
        self.ordered_mask = 0
        self.coin_consultations = 0
        self.choice_offsets: list[int] = []
        self.violations: list[str] = []
        self._seen_prime_count = -1

    # -- voting ----------------------------------------------------------

    def _check(self, uc: Record, u: Record):
        if not (uc.prime and u.prime):
            raise ValueError("voting functions are defined on prime units only")

    def pi(self, uc, u):
        uc, u = self.view.record(uc), self.view.record(u)
        key = (uc.digest, u.digest)
        if key in self.pi_memo:
            return self.pi_memo[key]
        self._check(uc, u)
        r = round_type(uc.level, u.level)
        if r is BOT:
            val = 1 if u.below & uc.bit else 0
        else:
            votes = [(p.creator, self.pi(uc, p)) for p in self.view.prime_ancestors(u)]
            if r == 1:
                val = sup_maj(votes, self.threshold)
            else:
                val = exist_tc(votes, lambda: self._consult_coin(uc, u))
        if is_value(val):
            self.pi_memo[key] = val
        return val

    def delta(self, uc, u):
        uc, u = self.view.record(uc), self.view.record(u)
        key = (uc.digest, u.digest)
        if key in self.delta_memo:
            return self.delta_memo[key]
        self._check(uc, u)
        r = round_type(uc.level, u.level)
        down = self.view.prime_ancestors(u) if r is not BOT else ()
        if r is BOT:
            val = BOT
        elif r == 0:
            val = sup_maj([(p.creator, self.pi(uc, p)) for p in down], self.threshold)
            if val == 0 and u.level - uc.level == 2:
                # the votes below are raw reachability indicators, which need not be
                # single-valued per level; a zero supermajority there can be overturned
                # by Exist_TC's preference for 1, so only a positive decision is safe
                val = BOT
        else:
            val = exist_pref1([(p.creator, self.delta(uc, p)) for p in down])
        if is_value(val):
            self.delta_memo[key] = val
        return val

    def _consult_coin(self, uc: Record, u: Record):
        if u.level - uc.level == 2:
            self._violation(f"coin consulted two levels above candidate {uc.digest.hex()[:12]}")
        self.coin_consultations += 1
        return self.coin_value(uc, u.level - 1)

    def coin_value(self, uc, nonce: int):
        """``TC^{fai(nonce, uc)}(nonce)``, or ``Blocked`` while shares are missing."""
        uc = self.view.record(uc)
        dealer = fai(self.view, nonce, uc)
        dealing = self.view.dealing_unit_below(dealer, uc)
        key = (dealing.digest, nonce)
        if key in self.coins:
            return self.coins[key]
        if nonce < FIRST_SHARE_LEVEL:
            # no unit ever carries shares for these nonces; use a public coin
            bit = sha256d(b"dagbft/public-coin/" + dealing.digest + nonce.to_bytes(8, "big"))[-1] & 1
        else:
            k = self.view.committee.coin_threshold
            shares = self.view.coin_shares.get(key, {})
            valid = [s for _, s in sorted(shares.items()) if self._share_ok(dealing, s)]
            if len(valid) < k:
                return Blocked(dealer, nonce)
            bit = self.coin.combine(valid[:k], nonce, k)
        self.coins[key] = bit
        return bit

    def _share_ok(self, dealing: Record, share) -> bool:
        key = (dealing.digest, share.holder, share.value)
        if key not in self._share_checks:
            ok = share.dealer == dealing.creator and self.coin.verify_share(dealing.unit.dealing.commitments, share)
            self._share_checks[key] = ok
        return self._share_checks[key]

    # -- decisions and choice --------------------------------------------

    def decide(self, uc) -> Decision | None:
        """First non-``BOT`` decision value on ``uc`` found in the view, scanning upward."""
        uc = self.view.record(uc)
        if uc.digest in self.decisions:
            return self.decisions[uc.digest]
        for level in range(uc.level + 2, self.view.max_level + 1):
            for w in self.view.prime_units_at(level):
                d = self.delta(uc, w)
                if d == 0 or d == 1:
                    dec = Decision(d, w.digest, level - uc.level)
                    self.decisions[uc.digest] = dec
                    return dec
        return None

    def settle_slot(self, level: int, creator: int) -> Slot:
        """Settle ``creator``'s slot at ``level`` using a prime four levels up as witness.

        Any prime of the slot that can ever be decided 1 lies below every prime
        four levels up, so the primes below the witness determine the slot.
        """
        witnesses = self.view.prime_units_at(level + 4)
        if not witnesses:
            return PENDING
        w = witnesses[0]
        ones = []
        for p in self.view.primes_by(level, creator):
            if not w.below & p.bit:
                continue
            d = self.decide(p)
            if d is None:
                return PENDING
            if d.value == 1:
                ones.append(p)
        if ones:
            return Slot("1", min(ones, key=lambda r: r.digest))
        return SETTLED0

    def choose_timing(self, level: int) -> Record | None:
        for j in sigma(self.view.committee, level):
            slot = self.settle_slot(level, j)
            if slot is PENDING:
                return None
            if slot.status == "1":
                return slot.unit
        self._violation(f"level {level}: every slot settled 0")
        return None

    def next_batch(self) -> Batch | None:
        level = len(self.timing)
        t = self.choose_timing(level)
        if t is None:
            return None
        self.timing.append(t)
        mask = t.below & ~self.ordered_mask
        self.ordered_mask |= mask
        batch = Batch(level, t, break_ties(self.view.units_of_mask(mask)), self.view.max_level)
        self.batches.append(batch)
        self.choice_offsets.append(self.view.max_level - t.level)
        return batch

    def update(self) -> list[Batch]:
        """Emit every batch that has become ready since the last call."""
        if self.view.prime_count == self._seen_prime_count:
            return []
        self._seen_prime_count = self.view.prime_count
        out = []
        while (b := self.next_batch()) is not None:
            out.append(b)
        return out

    def ordered_units(self) -> list[Record]:
        return [r for b in self.batches for r in b.units]

    def delivered_messages(self) -> list[bytes]:
        return [r.unit.payload for r in self.ordered_units() if r.unit.payload]

    def log_records(self) -> list[dict]:
        return [b.log_record() for b in self.batches]

    def write_log(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.log_records():
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    # -- runtime checks --------------------------------------------------

    def _violation(self, msg: str):
        if msg not in self.violations:
            self.violations.append(msg)

    def check_invariants(self, window: int = 6) -> list[str]:
        """Check the voting invariants on every candidate of the view; returns new problems."""
        view = self.view
        top = view.max_level
        g = view.committee.genesis_creator
        found = []

        def bad(msg):
            if msg not in self.violations:
                self.violations.append(msg)
                found.append(msg)

        for lc in range(0, top + 1):
            for uc in view.prime_units_at(lc):
                if uc.creator == g:
                    continue
                tag = uc.digest.hex()[:12]
                by_level: dict[int, list] = {}
                for lvl in range(lc + 1, min(top, lc + window) + 1):
                    by_level[lvl] = [(w, self.pi(uc, w), self.delta(uc, w)) for w in view.prime_units_at(lvl)]
                # single supermajority at odd rounds
                for lvl, rows in by_level.items():
                    if round_type(lc, lvl) == 1:
                        vals = {p for _, p, _ in rows if p is not BOT and is_value(p)}
                        if len(vals) > 1:
                            bad(f"single supermajority broken for {tag} at level {lvl}")
                # unanimous decision
                decided = [(w, d) for rows in by_level.values() for w, _, d in rows if d in (0, 1)]
                if len({d for _, d in decided}) > 1:
                    bad(f"conflicting decisions on {tag}")
                if decided:
                    w0, b = min(decided, key=lambda x: x[0].level)
                    for lvl, rows in by_level.items():
                        if lvl >= w0.level + 2:
                            for w, _, d in rows:
                                if is_value(d) and d != b:
                                    bad(f"unanimous decision broken for {tag} at level {lvl}")
                # hidden candidates only get zero decisions
                if any(not v.below & uc.bit for v in view.prime_units_at(lc + 4)):
                    for lvl, rows in by_level.items():
                        if lvl >= lc + 4 and any(d == 1 for _, _, d in rows):
                            bad(f"hidden candidate {tag} decided 1")
        # necessity of positive decisions
        for l1 in range(1, top - 2):
            level_primes = view.prime_units_at(l1)
            for u1 in level_primes:
                if any(p is not u1 and u1.below & p.bit for p in level_primes):
                    continue
                for uc in view.prime_ancestors(u1):
                    for u4 in view.prime_units_at(l1 + 3):
                        d = self.delta(uc, u4)
                        if is_value(d) and d != 1:
                            bad(f"positive decision missing for {uc.digest.hex()[:12]} at level {l1 + 3}")
        # slot rule: primes decided 1 lie below every prime four levels up
        for dig, dec in self.decisions.items():
            if dec.value != 1:
                continue
            rec = view.record(dig)
            for v in view.prime_units_at(rec.level + 4):
                if not v.below & rec.bit:
                    bad(f"decided-1 prime {dig.hex()[:12]} not below level {rec.level + 4} prime")
        return found
