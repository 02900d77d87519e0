"""Seven processes, two of them forking, random delays: the correct ones still agree.

Run: python3 demos/03_forkers.py
"""

from dagbft.runner import SimConfig, format_stats, run_simulation, stats, verify_logs

cfg = SimConfig(
    n=7,
    steps=80,
    seed=11,
    delay={"min": 1, "max": 20},
    faults=[{"process": 3, "kind": "forker"}, {"process": 6, "kind": "forker", "params": {"fork_step": 5}}],
)
report = run_simulation(cfg)
print(format_stats(stats(report)))
print("forkers detected:", report.metrics["forkers_detected"])
print("validation:", report.metrics["validation"])

check = verify_logs(list(report.logs.values()), names=list(report.logs))
print("ordered outputs consistent:", check.consistent)
first = report.logs[str(report.correct[0])]
for rec in first[:3]:
    print(f"batch {rec['batch']}: {len(rec['units'])} units, timing unit {rec['timing_unit'][:12]}")
