"""Experiment runner: configuration, run reports, log verification, statistics, replay.

Configuration is one JSON document; unknown keys are rejected::

    {
      "n": 7,                      # committee size, at least 4
      "f_max": null,               # tolerance bound used for labelling (default ceil(n/3) - 1)
      "sync_period": 1,            # K: start a sync every K steps
      "steps": 100,                # steps (created units) per process
      "seed": 0,
      "delay": {"min": 1, "max": 5, "script": null, "slow": {}},
      "step_interval": {"min": 1, "max": 3},
      "faults": [{"process": 3, "kind": "crash", "params": {"time": 100}}],
      "payloads": {"messages_per_process": 5, "size": 16},
      "out": null,                 # output directory, or null for none
      "check_invariants": true
    }

``delay.script`` is a list of positive delays, or a path to a JSON file
holding one. Fault kinds are ``crash`` (params ``time``), ``silent`` and
``forker`` (params ``fork_step``, default 1).
"""

from __future__ import annotations

import copy
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .committee import make_committee, max_faulty
from .consensus import ConsensusState, validation_status
from .dag import LocalView, export_unit_log, import_unit_log
from .network import FAULT_KINDS, DelayPolicy, FaultScript, Simulation, payload_bytes
from .crypto import sha256d


class ConfigError(ValueError):
    pass


class LogFormatError(ValueError):
    def __init__(self, message: str, line: int, source: str = ""):
        where = f"{source}:{line}" if source else f"line {line}"
        super().__init__(f"{where}: {message}")
        self.line = line
        self.source = source


_TOP_KEYS = {"n", "f_max", "sync_period", "steps", "seed", "delay", "step_interval", "faults", "payloads", "out", "check_invariants"}
_SECTION_DEFAULTS = {
    "delay": {"min": 1, "max": 5, "script": None, "slow": {}},
    "step_interval": {"min": 1, "max": 3},
    "payloads": {"messages_per_process": 5, "size": 16},
}


@dataclass
class SimConfig:
    n: int = 4
    f_max: int | None = None
    sync_period: int = 1
    steps: int = 100
    seed: int = 0
    delay: dict = field(default_factory=dict)
    step_interval: dict = field(default_factory=dict)
    faults: list = field(default_factory=list)
    payloads: dict = field(default_factory=dict)
    out: str | None = None
    check_invariants: bool = True

    def __post_init__(self):
        # partial sections are completed with their defaults
        for name, defaults in _SECTION_DEFAULTS.items():
            setattr(self, name, _closed(getattr(self, name), defaults, name))

    @classmethod
    def from_dict(cls, data: dict, base_dir: str | os.PathLike | None = None) -> "SimConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        unknown = set(data) - _TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        cfg = cls(**data)
        if isinstance(cfg.delay["script"], str):
            path = Path(cfg.delay["script"])
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            try:
                cfg.delay["script"] = json.loads(path.read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read delay script {path}: {exc}") from None
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "SimConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        return cls.from_dict(data, base_dir=Path(path).parent)

    def validate(self):
        def integer(name, value, low):
            if not isinstance(value, int) or isinstance(value, bool) or value < low:
                raise ConfigError(f"{name} must be an integer >= {low}, got {value!r}")

        integer("n", self.n, 4)
        integer("sync_period", self.sync_period, 1)
        integer("steps", self.steps, 1)
        integer("seed", self.seed, -(2**63))
        if self.f_max is not None:
            integer("f_max", self.f_max, 0)
        integer("delay.min", self.delay["min"], 1)
        integer("delay.max", self.delay["max"], self.delay["min"])
        integer("step_interval.min", self.step_interval["min"], 1)
        integer("step_interval.max", self.step_interval["max"], self.step_interval["min"])
        integer("payloads.messages_per_process", self.payloads["messages_per_process"], 0)
        integer("payloads.size", self.payloads["size"], 1)
        script = self.delay["script"]
        if script is not None and (not isinstance(script, list) or not script or not all(isinstance(d, int) and d >= 1 for d in script)):
            raise ConfigError("delay.script must be a non-empty list of positive integers")
        if not isinstance(self.delay["slow"], dict):
            raise ConfigError("delay.slow must map process ids to extra delay")
        seen = set()
        for f in self.faults:
            if not isinstance(f, dict) or set(f) - {"process", "kind", "params"} or not {"process", "kind"} <= set(f):
                raise ConfigError(f"bad fault entry {f!r}")
            if f["kind"] not in FAULT_KINDS:
                raise ConfigError(f"unknown fault kind {f['kind']!r}")
            integer("fault process", f["process"], 1)
            if f["process"] > self.n or f["process"] in seen:
                raise ConfigError(f"bad or duplicate fault process {f['process']}")
            seen.add(f["process"])
        if len(seen) >= self.n:
            raise ConfigError("at least one process must be correct")
        if not isinstance(self.check_invariants, bool):
            raise ConfigError("check_invariants must be a boolean")

    @property
    def tolerance(self) -> int:
        return self.f_max if self.f_max is not None else max_faulty(self.n)

    @property
    def beyond_tolerance(self) -> bool:
        return len(self.faults) > self.tolerance

    def to_dict(self) -> dict:
        return asdict(self)


def _closed(value, defaults: dict, name: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(f"{name} must be an object")
    unknown = set(value) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown keys in {name}: {sorted(unknown)}")
    return copy.deepcopy({**defaults, **value})


@dataclass
class RunReport:
    config: dict
    beyond_tolerance: bool
    correct: list[int]
    logs: dict[str, list[dict]]
    metrics: dict
    violations: list[str]

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        return cls(**json.loads(text))


def build_simulation(cfg: SimConfig) -> Simulation:
    committee, keys = make_committee(cfg.n, cfg.seed)
    faults = [FaultScript(f["process"], f["kind"], dict(f.get("params", {}))) for f in cfg.faults]
    m, size = cfg.payloads["messages_per_process"], cfg.payloads["size"]
    payloads = {pid: [payload_bytes(cfg.seed, pid, i, size) for i in range(m)] for pid in committee.pids}
    delay = DelayPolicy(cfg.delay["min"], cfg.delay["max"], cfg.delay["script"], {int(k): v for k, v in cfg.delay["slow"].items()})
    return Simulation(
        committee,
        keys,
        seed=cfg.seed,
        sync_period=cfg.sync_period,
        steps=cfg.steps,
        delay=delay,
        step_interval=(cfg.step_interval["min"], cfg.step_interval["max"]),
        faults=faults,
        payloads=payloads,
    )


def run_simulation(cfg: SimConfig, sim_hook=None) -> RunReport:
    """Run one configuration to completion and evaluate the invariant suite.

    :param sim_hook: optional callable receiving the finished ``Simulation``
    """
    cfg.validate()
    sim = build_simulation(cfg)
    sim.run()
    sim.flush()
    violations = evaluate_invariants(sim) if cfg.check_invariants else []
    report = RunReport(
        # the output location is not part of the experiment
        config=dict(cfg.to_dict(), out=None),
        beyond_tolerance=cfg.beyond_tolerance,
        correct=[p.pid for p in sim.correct_processes()],
        logs={str(p.pid): p.consensus.log_records() for p in sim.correct_processes()},
        metrics=collect_metrics(sim),
        violations=violations,
    )
    if cfg.out:
        write_outputs(cfg, sim, report)
    if sim_hook is not None:
        sim_hook(sim)
    return report


def collect_metrics(sim: Simulation) -> dict:
    correct = sim.correct_processes()
    observer = correct[0].consensus
    decisions: dict[str, list[int]] = {}
    for digest, dec in sorted(observer.decisions.items(), key=lambda kv: (observer.view.record(kv[0]).level, kv[0])):
        decisions.setdefault(str(observer.view.record(digest).level), []).append(dec.offset)
    submitted = [sha256d(p).hex() for proc in correct for p in _submitted(sim, proc)]
    ordered = [set(h for rec in proc.consensus.log_records() for h in rec["payloads"]) for proc in correct]
    return {
        "max_level": {str(p.pid): p.core.view.max_level for p in sim.procs.values()},
        "units": {str(p.pid): len(p.core.view) for p in correct},
        "batches": {str(p.pid): len(p.consensus.batches) for p in correct},
        "decisions": decisions,
        "choice_offsets": [o for p in correct for o in p.consensus.choice_offsets],
        "transversal_sizes": [s for p in correct for s in p.core.transversal_sizes],
        "coin_consultations": sum(p.consensus.coin_consultations for p in correct),
        "payloads_submitted": len(submitted),
        "payloads_ordered_everywhere": sum(all(h in o for o in ordered) for h in submitted),
        "units_created": sim.metrics.units_created,
        "units_exchanged": sim.metrics.units_exchanged,
        "syncs_started": sim.metrics.syncs_started,
        "syncs_completed": sim.metrics.syncs_completed,
        "syncs_rejected": sim.metrics.syncs_rejected,
        "frames_dropped": sim.metrics.frames_dropped,
        "events": sim.metrics.events,
        "final_time": sim.now,
        "forkers_detected": sorted(set().union(*(p.core.view.forkers() for p in correct))),
        "validation": validation_summary(sim),
        "trace_digest": sim.trace_digest,
    }


def _submitted(sim: Simulation, proc) -> list[bytes]:
    return [r.unit.payload for r in proc.core.view.by_creator[proc.pid] if r.unit.payload]


def validation_summary(sim: Simulation) -> dict:
    """Validation status of every unit in the first correct view, across all correct views."""
    views = [p.core.view for p in sim.correct_processes()]
    base = views[0]
    depth_ok = base.max_level - 3
    nonforking = validated_everywhere = deep = deep_validated = 0
    for rec in base.order[1:]:
        if base.forks_of(rec):
            continue
        nonforking += 1
        ok = all(validation_status(v, rec.digest) is not None for v in views)
        validated_everywhere += ok
        if rec.level <= depth_ok:
            deep += 1
            deep_validated += ok
    return {
        "nonforking": nonforking,
        "validated_everywhere": validated_everywhere,
        "deep_nonforking": deep,
        "deep_validated_everywhere": deep_validated,
    }


def evaluate_invariants(sim: Simulation) -> list[str]:
    """The end-of-run safety suite; returns human-readable violations."""
    correct = sim.correct_processes()
    problems: list[str] = []
    for p in correct:
        p.consensus.check_invariants()
        problems.extend(f"process {p.pid}: {v}" for v in p.consensus.violations)
    logs = {p.pid: p.consensus.log_records() for p in correct}
    report = verify_logs(list(logs.values()), names=[str(pid) for pid in logs])
    problems.extend(report.problems)
    digests = [p.core.view.digests() for p in correct]
    if any(d != digests[0] for d in digests):
        problems.append("correct views differ after final dissemination")
    for p in sim.procs.values():
        if p.kind == "crash":
            created = {r.digest for r in p.core.view.by_creator[p.pid]}
            for q in correct:
                extra = {r.digest for r in q.core.view.by_creator[p.pid]} - created
                if extra:
                    problems.append(f"units of crashed process {p.pid} appear that it never created")
    # at most one variant of each fork validated across correct views
    views = [p.core.view for p in correct]
    for c, pairs in sorted(views[0].fork_registry.items()):
        for pair in sorted(pairs, key=sorted):
            a, b = sorted(pair)
            va = any(validation_status(v, a) is not None for v in views if a in v)
            vb = any(validation_status(v, b) is not None for v in views if b in v)
            if va and vb:
                problems.append(f"both variants of a fork by {c} validated: {a.hex()[:12]} / {b.hex()[:12]}")
    return problems


# -- ordered-output logs --------------------------------------------------


@dataclass
class LogCheck:
    consistent: bool
    problems: list[str]
    first_divergence: int | None = None


_HEX64 = set("0123456789abcdef")


def _is_digest(x) -> bool:
    return isinstance(x, str) and len(x) == 64 and set(x) <= _HEX64


def parse_log(text: str, source: str = "") -> list[dict]:
    """Parse a JSONL ordered-output log, checking the record schema."""
    out = []
    for i, line in enumerate(text.splitlines(), start=1):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise LogFormatError(f"invalid JSON ({exc.msg})", i, source) from None
        if not isinstance(rec, dict) or set(rec) != {"batch", "timing_unit", "units", "payloads"}:
            raise LogFormatError("record must have exactly batch, timing_unit, units, payloads", i, source)
        if not isinstance(rec["batch"], int) or isinstance(rec["batch"], bool):
            raise LogFormatError("batch must be an integer", i, source)
        if not _is_digest(rec["timing_unit"]):
            raise LogFormatError("timing_unit must be a 64-digit lowercase hex digest", i, source)
        for key in ("units", "payloads"):
            if not isinstance(rec[key], list) or not all(_is_digest(x) for x in rec[key]):
                raise LogFormatError(f"{key} must be a list of hex digests", i, source)
        out.append(rec)
    return out


def read_log(path) -> list[dict]:
    return parse_log(Path(path).read_text(), str(path))


def write_log(records, path):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def verify_logs(logs, names=None) -> LogCheck:
    """Check pairwise prefix consistency, disjoint batches and contiguous indices.

    ``logs`` holds parsed logs (lists of records) or paths to JSONL files.
    """
    logs = [read_log(x) if isinstance(x, (str, os.PathLike)) else list(x) for x in logs]
    names = names or [str(i) for i in range(len(logs))]
    problems = []
    for name, log in zip(names, logs):
        seen: set[str] = set()
        for i, rec in enumerate(log):
            if rec["batch"] != i:
                problems.append(f"log {name}: batch index {rec['batch']} at position {i}")
                break
            if not rec["units"] or rec["units"][-1] != rec["timing_unit"]:
                problems.append(f"log {name}: batch {i} does not end with its timing unit")
            if len(set(rec["units"])) != len(rec["units"]) or seen & set(rec["units"]):
                problems.append(f"log {name}: batch {i} repeats an already ordered unit")
            seen.update(rec["units"])
    divergence = None
    for a in range(len(logs)):
        for b in range(a + 1, len(logs)):
            for i, (ra, rb) in enumerate(zip(logs[a], logs[b])):
                if ra != rb:
                    problems.append(f"logs {names[a]} and {names[b]} diverge at batch {i}")
                    divergence = i if divergence is None else min(divergence, i)
                    break
    return LogCheck(not problems, problems, divergence)


# -- outputs, statistics, replay -----------------------------------------


def write_outputs(cfg: SimConfig, sim: Simulation, report: RunReport):
    out = Path(cfg.out)
    (out / "logs").mkdir(parents=True, exist_ok=True)
    (out / "units").mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(report.config, sort_keys=True, indent=1) + "\n")
    (out / "report.json").write_text(report.to_json())
    for p in sim.correct_processes():
        write_log(p.consensus.log_records(), out / "logs" / f"process-{p.pid}.jsonl")
        export_unit_log(p.core.view, out / "units" / f"process-{p.pid}.bin")


def _describe(values) -> dict:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return {"count": 0}
    p50, p90, p99 = np.percentile(arr, [50, 90, 99])
    return {"count": int(arr.size), "mean": float(arr.mean()), "p50": float(p50), "p90": float(p90), "p99": float(p99), "max": float(arr.max())}


def stats(report: RunReport) -> dict:
    """Summary statistics of a run report."""
    m = report.metrics
    decision_offsets = [o for offs in m["decisions"].values() for o in offs]
    levels = [v for k, v in m["max_level"].items() if int(k) in report.correct]
    top = max(levels) if levels else 0
    return {
        "transversal_size": _describe(m["transversal_sizes"]),
        "choice_offset": _describe(m["choice_offsets"]),
        "decision_offset": _describe(decision_offsets),
        "max_level": top,
        "levels_per_100_ticks": 100.0 * top / m["final_time"] if m["final_time"] else math.nan,
        "units_per_level": m["units_created"] / top if top else math.nan,
        "batches": m["batches"],
        "payloads_ordered": f"{m['payloads_ordered_everywhere']}/{m['payloads_submitted']}",
        "violations": len(report.violations),
        "beyond_tolerance": report.beyond_tolerance,
    }


def format_stats(summary: dict) -> str:
    rows = []
    for key, value in summary.items():
        if isinstance(value, dict) and "count" in value:
            if value["count"]:
                rows.append(f"{key:24s} n={value['count']} mean={value['mean']:.3f} p50={value['p50']:.1f} p90={value['p90']:.1f} max={value['max']:.0f}")
            else:
                rows.append(f"{key:24s} n=0")
        elif isinstance(value, float):
            rows.append(f"{key:24s} {value:.3f}")
        else:
            rows.append(f"{key:24s} {value}")
    return "\n".join(rows)


@dataclass
class ReplayResult:
    report_identical: bool
    logs_reproduced: dict[str, bool]

    @property
    def ok(self) -> bool:
        return self.report_identical and all(self.logs_reproduced.values())


def replay(out_dir) -> ReplayResult:
    """Re-run a stored configuration and re-derive each stored log from its unit log."""
    out = Path(out_dir)
    cfg = SimConfig.load(out / "config.json")
    identical = run_simulation(cfg).to_json() == (out / "report.json").read_text()
    committee, _ = make_committee(cfg.n, cfg.seed)
    reproduced = {}
    for unit_log in sorted((out / "units").glob("process-*.bin")):
        view: LocalView = import_unit_log(unit_log, committee)
        state = ConsensusState(view)
        state.update()
        stored = read_log(out / "logs" / (unit_log.stem + ".jsonl"))
        reproduced[unit_log.stem] = state.log_records() == stored
    return ReplayResult(identical, reproduced)
