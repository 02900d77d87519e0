"""Deterministic discrete-event network simulator with scripted faults.

Virtual time is an integer tick. Events sit in a heap keyed by
``(time, counter)``, so a run is a pure function of its configuration. Each
process repeatedly takes a *step*: create one unit, and every ``K`` steps start
a synchronisation with a random peer, then wait for its reply (or a timeout)
before the next step. A synchronisation is three frames:

1. initiator -> responder: Hello, Inventory
2. responder -> initiator: Hello, Inventory, Units the initiator lacks
3. initiator -> responder: Units the responder lacks

and every frame travels with a delay chosen by the delay policy.
"""

from __future__ import annotations

import hashlib
import heapq
import itertools
import random
from dataclasses import dataclass, field

from .committee import Committee, ProcessKeys
from .consensus import ConsensusState
from .factory import ProcessCore
from .gossip import (
    Hello,
    Inventory,
    Units,
    SyncRejected,
    WireError,
    apply_units,
    check_hello,
    decode_frame,
    encode_frame,
    missing_for,
    sync_session,
)

CRASH, SILENT, FORKER = "crash", "silent", "forker"
FAULT_KINDS = (CRASH, SILENT, FORKER)


@dataclass(frozen=True)
class FaultScript:
    process: int
    kind: str
    params: dict = field(default_factory=dict)


@dataclass
class DelayPolicy:
    """Uniform integer delay in ``[low, high]``, or a scripted delay sequence.

    :param script: delays consumed in order (cycling) instead of random draws
    :param slow: extra delay added to every frame sent to or by the listed processes
    """

    low: int = 1
    high: int = 1
    script: list[int] | None = None
    slow: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        if not 1 <= self.low <= self.high:
            raise ValueError(f"bad delay range [{self.low}, {self.high}]")
        if self.script is not None and (not self.script or min(self.script) < 1):
            raise ValueError("delay script needs positive integer delays")
        self._pos = 0

    def draw(self, rng: random.Random, sender: int, recipient: int) -> int:
        if self.script is not None:
            d = self.script[self._pos % len(self.script)]
            self._pos += 1
        else:
            d = rng.randint(self.low, self.high)
        return d + self.slow.get(sender, 0) + self.slow.get(recipient, 0)


def payload_bytes(seed: int, pid: int, index: int, size: int) -> bytes:
    """Deterministic payload ``index`` of process ``pid``; never empty."""
    out = b""
    counter = 0
    while len(out) < max(size, 1):
        out += hashlib.sha256(f"payload/{seed}/{pid}/{index}/{counter}".encode()).digest()
        counter += 1
    return out[: max(size, 1)]


class SimProcess:
    """A process in the simulation: one core, or two branch cores for a forker."""

    def __init__(self, core: ProcessCore, fault: FaultScript | None, payloads: list[bytes]):
        self.pid = core.pid
        self.fault = fault
        self.branches = [core]
        core.silent = self.kind == SILENT
        self.payloads = list(payloads)
        self.steps = 0
        self.consensus = ConsensusState(core.view) if fault is None else None

    @property
    def kind(self) -> str:
        return self.fault.kind if self.fault else "correct"

    @property
    def correct(self) -> bool:
        return self.fault is None

    @property
    def core(self) -> ProcessCore:
        return self.branches[0]

    def crashed(self, now: int) -> bool:
        return self.kind == CRASH and now >= self.fault.params.get("time", 0)

    def branch_for(self, peer: int) -> ProcessCore:
        return self.branches[peer % len(self.branches)]

    def split(self):
        """Turn into a forker: the second branch diverges from here on."""
        twin = self.core.clone()
        twin.rng = random.Random(hashlib.sha256(b"dagbft/fork/" + twin.seed + twin.pid.to_bytes(4, "big")).digest())
        self.branches.append(twin)


@dataclass
class Metrics:
    units_created: int = 0
    units_exchanged: int = 0
    syncs_started: int = 0
    syncs_completed: int = 0
    syncs_rejected: int = 0
    frames_dropped: int = 0
    events: int = 0


class Simulation:
    """Event-driven run of ``N`` processes over a simulated network."""

    def __init__(
        self,
        committee: Committee,
        keys: list[ProcessKeys],
        seed: int = 0,
        sync_period: int = 1,
        steps: int = 100,
        delay: DelayPolicy | None = None,
        step_interval: tuple[int, int] = (1, 3),
        faults=(),
        payloads: dict[int, list[bytes]] | None = None,
        track_consensus: bool = True,
    ):
        self.committee = committee
        self.seed = seed
        self.sync_period = sync_period
        self.steps = steps
        self.delay = delay or DelayPolicy()
        self.step_interval = step_interval
        self.rng = random.Random(hashlib.sha256(f"dagbft/sim/{seed}".encode()).digest())
        self.track_consensus = track_consensus
        by_pid = {}
        for f in faults:
            if f.kind not in FAULT_KINDS:
                raise ValueError(f"unknown fault kind {f.kind!r}")
            if not 1 <= f.process <= committee.n or f.process in by_pid:
                raise ValueError(f"bad or duplicate fault target {f.process}")
            by_pid[f.process] = f
        payloads = payloads or {}
        self.procs = {
            pid: SimProcess(
                ProcessCore(pid, committee, keys[pid - 1], seed=seed, sync_period=sync_period),
                by_pid.get(pid),
                payloads.get(pid, []) if pid not in by_pid else [],
            )
            for pid in committee.pids
        }
        self.queue: list = []
        self._counter = itertools.count()
        self._sessions = itertools.count(1)
        self.now = 0
        self.metrics = Metrics()
        self._trace = hashlib.sha256()
        self._waiting: dict[int, int] = {}
        longest = max(self.delay.script) if self.delay.script else self.delay.high
        self.timeout = 2 * (longest + 2 * max(self.delay.slow.values(), default=0)) + 1
        for pid in committee.pids:
            self._push(self.rng.randint(*step_interval), "step", (pid,))

    # -- event plumbing --------------------------------------------------

    def _push(self, time: int, kind: str, data):
        heapq.heappush(self.queue, (time, next(self._counter), kind, data))

    def _send(self, sender: int, recipient: int, kind: str, messages, extra=()):
        frame = encode_frame(messages)
        t = self.now + self.delay.draw(self.rng, sender, recipient)
        self._push(t, kind, (sender, recipient, frame) + tuple(extra))

    def _log(self, *parts):
        self._trace.update(repr(parts).encode())

    @property
    def trace_digest(self) -> str:
        return self._trace.hexdigest()

    def correct_processes(self) -> list[SimProcess]:
        return [p for p in self.procs.values() if p.correct]

    def run(self, max_events: int | None = None):
        """Process events until the queue is empty (or ``max_events`` were handled)."""
        handled = 0
        while self.queue and (max_events is None or handled < max_events):
            self.scheduler_step()
            handled += 1

    def scheduler_step(self):
        time, _, kind, data = heapq.heappop(self.queue)
        self.now = time
        self.metrics.events += 1
        getattr(self, f"_on_{kind}")(*data)

    # -- handlers --------------------------------------------------------

    def _on_step(self, pid: int):
        proc = self.procs[pid]
        if proc.crashed(self.now):
            self._log(self.now, "crashed-step", pid)
            return
        proc.steps += 1
        for bi, core in enumerate(proc.branches):
            if proc.kind == FORKER:
                payload = f"fork/{pid}/{bi}/{proc.steps}".encode()
            else:
                payload = proc.payloads.pop(0) if proc.payloads else b""
            unit = core.create_unit(payload)
            self.metrics.units_created += 1
            self._log(self.now, "create", pid, bi, unit.digest)
        if proc.kind == FORKER and len(proc.branches) == 1 and proc.steps >= proc.fault.params.get("fork_step", 1):
            proc.split()
        self._after_change(proc)
        if proc.steps % self.sync_period == 0:
            peers = [q for q in self.committee.pids if q != pid]
            peer = proc.core.rng.choice(peers)
            self._start_sync(proc, peer)
        else:
            self._next_step(proc)

    def _next_step(self, proc: SimProcess):
        if proc.steps < self.steps:
            self._push(self.now + self.rng.randint(*self.step_interval), "step", (proc.pid,))

    def _start_sync(self, proc: SimProcess, peer: int):
        # the process waits for the reply (or a timeout) before its next step
        core = proc.branch_for(peer)
        session = next(self._sessions)
        self._waiting[session] = proc.pid
        self._push(self.now + self.timeout, "timeout", (session,))
        self.metrics.syncs_started += 1
        self._log(self.now, "sync", proc.pid, peer, session)
        self._send(proc.pid, peer, "hello", [Hello(proc.pid, session), Inventory(tuple(core.view.records))], (session,))

    def _deliverable(self, recipient: int, kind: str) -> SimProcess | None:
        proc = self.procs[recipient]
        if proc.crashed(self.now):
            self.metrics.frames_dropped += 1
            self._log(self.now, "drop", kind, recipient)
            return None
        return proc

    def _resume(self, session: int):
        pid = self._waiting.pop(session, None)
        if pid is not None:
            self._next_step(self.procs[pid])

    def _on_timeout(self, session: int):
        if session in self._waiting:
            self._log(self.now, "timeout", session)
        self._resume(session)

    def _on_hello(self, sender: int, recipient: int, frame: bytes, session: int):
        proc = self._deliverable(recipient, "hello")
        if proc is None:
            return
        core = proc.branch_for(sender)
        try:
            hello, inv = decode_frame(frame)
            check_hello(hello, sender)
        except (SyncRejected, WireError, ValueError):
            self.metrics.syncs_rejected += 1
            return
        units = Units(()) if proc.kind == SILENT else missing_for(core.view, inv.digests)
        self._send(recipient, sender, "reply", [Hello(recipient, session), Inventory(tuple(core.view.records)), units], (session,))

    def _on_reply(self, sender: int, recipient: int, frame: bytes, session: int):
        proc = self._deliverable(recipient, "reply")
        if proc is None:
            return
        core = proc.branch_for(sender)
        try:
            hello, inv, units = decode_frame(frame)
            check_hello(hello, sender)
            got = apply_units(core.view, units.encodings)
        except (SyncRejected, WireError, ValueError):
            self.metrics.syncs_rejected += 1
            self._resume(session)
            return
        self._absorbed(proc, got)
        back = Units(()) if proc.kind == SILENT else missing_for(core.view, inv.digests)
        self._send(recipient, sender, "units", [back], (session,))
        self._resume(session)

    def _on_units(self, sender: int, recipient: int, frame: bytes, session: int):
        proc = self._deliverable(recipient, "units")
        if proc is None:
            return
        core = proc.branch_for(sender)
        try:
            (units,) = decode_frame(frame)
            got = apply_units(core.view, units.encodings)
        except (SyncRejected, WireError, ValueError):
            self.metrics.syncs_rejected += 1
            return
        self.metrics.syncs_completed += 1
        self._absorbed(proc, got)

    def _absorbed(self, proc: SimProcess, units):
        self.metrics.units_exchanged += len(units)
        self._log(self.now, "absorb", proc.pid, len(units))
        if units:
            self._after_change(proc)

    def _after_change(self, proc: SimProcess):
        if self.track_consensus and proc.consensus is not None:
            proc.consensus.update()

    # -- end of run ------------------------------------------------------

    def flush(self, max_rounds: int = 10):
        """Eventual delivery: sync all live processes pairwise until correct views agree."""
        live = [p for p in self.procs.values() if not p.crashed(self.now)]
        for _ in range(max_rounds):
            moved = 0
            for a in live:
                for b in live:
                    if a is b:
                        continue
                    ca, cb = a.branch_for(b.pid), b.branch_for(a.pid)
                    res = sync_session(ca, cb, session=0)
                    moved += getattr(res, "sent", 0) + getattr(res, "received", 0)
            if not moved:
                break
        for p in self.correct_processes():
            p.consensus.update()

