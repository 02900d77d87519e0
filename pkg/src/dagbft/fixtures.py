"""Reproducible DAG builders for tests and demos."""

from __future__ import annotations

import random

from .coin import DealingPayload
from .committee import Committee, make_committee
from .consensus import ConsensusState
from .dag import LocalView
from .factory import ProcessCore
from .units import Unit


def placeholder_dealing(committee: Committee, dealer: int, tag: int = 0) -> DealingPayload:
    """Structurally valid dealing payload with meaningless contents."""
    k, n = committee.coin_threshold, committee.n
    return DealingPayload(dealer, tuple(range(tag + 1, tag + 1 + k)), tuple(bytes(64) for _ in range(n)))


def random_dag(n: int, size: int, seed: int, forker: int | None = None, recent: int | None = None):
    """Random unsigned DAG of ``size`` units (genesis included) in insertion order.

    Honest creators always extend their latest unit; ``forker`` picks any of its
    own units (or the genesis again) as first parent, creating forks. The second
    parent is a maximal unit or one of the ``recent`` most recently added units.

    :returns: ``(committee, units)``
    """
    committee, _ = make_committee(n, seed)
    rng = random.Random(seed)
    recent = recent or 2 * n
    g = committee.genesis
    units = [g]
    own: dict[int, list[Unit]] = {c: [] for c in committee.pids}
    referenced: set[bytes] = set()
    while len(units) < size:
        c = rng.randint(1, n)
        mine = own[c]
        if not mine or (c == forker and rng.random() < 0.05):
            unit = Unit(c, (g.digest, g.digest), payload=bytes([len(units) % 256]), dealing=placeholder_dealing(committee, c, len(units)))
        else:
            p1 = rng.choice(mine) if c == forker else mine[-1]
            if rng.random() < 0.6:
                p2 = rng.choice([u for u in units if u.digest not in referenced])
            else:
                p2 = rng.choice(units[-recent:])
            unit = Unit(c, (p1.digest, p2.digest), payload=bytes([len(units) % 256]))
        if any(u.digest == unit.digest for u in units):
            continue
        units.append(unit)
        referenced.update(unit.parents)
        mine.append(unit)
    return committee, units


def view_of(committee: Committee, units) -> LocalView:
    view = LocalView(committee)
    for u in units:
        view.insert_unit(u, verify_signature=False)
    return view


def lockstep(n: int, rounds: int, seed: int = 0):
    """Synchronous turns with instant delivery.

    In every round each process in id order creates one unit, which every view
    receives before the next process moves. Each unit is therefore above all
    earlier units.

    :returns: ``(cores, states)`` with one ``ConsensusState`` per core, updated after every unit
    """
    return _drive(n, rounds, seed, sequential=True)


def simultaneous_rounds(n: int, rounds: int, seed: int = 0):
    """Rounds in which every process creates a unit on its current view, then all units are exchanged."""
    return _drive(n, rounds, seed, sequential=False)


def _drive(n, rounds, seed, sequential):
    committee, keys = make_committee(n, seed)
    cores = [ProcessCore(pid, committee, keys[pid - 1], seed=seed) for pid in committee.pids]
    states = [ConsensusState(c.view) for c in cores]

    def deliver(units):
        for c in cores:
            for u in units:
                c.view.insert_unit(u, verify_signature=False)
        for s in states:
            s.update()

    for r in range(rounds):
        if sequential:
            for c in cores:
                deliver([c.create_unit(f"lockstep/{c.pid}/{r}".encode())])
        else:
            deliver([c.create_unit(f"rounds/{c.pid}/{r}".encode()) for c in cores])
    return cores, states
