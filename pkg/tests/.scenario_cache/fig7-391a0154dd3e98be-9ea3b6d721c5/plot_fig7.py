"""Plot the entropy curves in fig7.csv (requires matplotlib)."""
import csv
import math
import sys

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "fig7.csv"
with open(path) as fh:
    rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
t = [float(r["t"]) for r in rows]
fig, ax = plt.subplots(figsize=(6, 4))
for col, label in (("S_q", "quantum"), ("S_c_mc", "classical (MC)"),
                   ("S_c_hist", "classical (histogram)"), ("S_c_stab", "stability approx.")):
    pts = [(x, float(r[col])) for x, r in zip(t, rows) if r[col] and not math.isnan(float(r[col]))]
    if pts:
        xs, ys = zip(*pts)
        ax.plot(xs, ys, "o" if col == "S_c_mc" else "-", ms=3, label=label)
ax.set_xlabel("t")
ax.set_ylabel("linear entropy")
ax.set_title("fig7")
ax.legend()
fig.tight_layout()
fig.savefig(path.rsplit(".", 1)[0] + ".png", dpi=150)
