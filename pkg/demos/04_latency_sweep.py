"""Sweep committee sizes and seeds; summarise choice latency and transversal sizes.

Run: python3 demos/04_latency_sweep.py
"""

import numpy as np

from dagbft.runner import SimConfig, run_simulation

rows = []
for n in (4, 7, 10):
    offsets, sizes, levels = [], [], []
    for seed in range(3):
        m = run_simulation(SimConfig(n=n, steps=60 + 10 * n, seed=seed, delay={"min": 1, "max": 10})).metrics
        offsets += m["choice_offsets"]
        sizes += m["transversal_sizes"]
        levels.append(max(m["max_level"].values()))
    rows.append((n, np.mean(offsets), np.percentile(offsets, 90), np.mean(sizes), np.mean(levels)))

print(f"{'N':>3} {'mean offset':>12} {'p90 offset':>11} {'mean transversal':>17} {'mean level':>11}")
for n, mean_off, p90, tv, lvl in rows:
    print(f"{n:>3} {mean_off:>12.2f} {p90:>11.1f} {tv:>17.3f} {lvl:>11.1f}")
