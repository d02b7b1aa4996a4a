"""CSV, plot script and summary for a finished (or partial) run."""

from __future__ import annotations

import csv
import json
import math
import platform
from pathlib import Path

import numpy as np

from .. import __version__
from .config import ScenarioConfig
from .runner import COLUMNS, EntropySeries

PLOT_SCRIPT = '''"""Plot the entropy curves in {csv_name} (requires matplotlib)."""
import csv
import math
import sys

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "{csv_name}"
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
ax.set_title("{name}")
ax.legend()
fig.tight_layout()
fig.savefig(path.rsplit(".", 1)[0] + ".png", dpi=150)
'''


def _fmt(x: float) -> str:
    return "" if not math.isfinite(x) else repr(float(x))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_csv(series: EntropySeries, path: Path, preamble: dict) -> None:
    """One row per output time; missing entries are empty."""
    with open(path, "w", newline="") as fh:
        for key, value in preamble.items():
            fh.write(f"# {key}: {json.dumps(_jsonable(value))}\n")
        w = csv.writer(fh)
        w.writerow(COLUMNS)
        for i, t in enumerate(series.times):
            w.writerow([_fmt(round(float(t), 12))] + [_fmt(series.data[c][i]) for c in COLUMNS[1:]])


def read_csv(path) -> EntropySeries:
    """Inverse of :func:`write_csv` (metadata from the ``#`` preamble)."""
    meta, rows = {}, []
    with open(path) as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("# "):
            key, _, val = line[2:].partition(": ")
            meta[key] = json.loads(val)
        else:
            body.append(line)
    reader = csv.DictReader(body)
    for r in reader:
        rows.append(r)
    times = np.array([float(r["t"]) for r in rows])
    series = EntropySeries.empty(times)
    for c in COLUMNS[1:]:
        series.data[c] = np.array([float(r[c]) if r[c] else np.nan for r in rows])
    series.metadata = meta
    return series


def summarize(series: EntropySeries) -> dict:
    out = {}
    for c in ("S_q", "S_c_mc", "S_c_hist", "S_c_stab"):
        t, v = series.present(c)
        if v.size:
            out[c] = {"n": int(v.size), "final": float(v[-1]), "max": float(v.max()), "t_final": float(t[-1])}
    return out


def emit_outputs(series: EntropySeries, cfg: ScenarioConfig, out_dir=None) -> Path:
    """Write ``<name>.csv``, ``plot_<name>.py``, ``<name>.summary.json`` and
    ``<name>.config.yaml`` under ``out_dir``; returns the directory."""
    d = Path(out_dir) if out_dir is not None else Path(cfg.output_dir) / cfg.name
    d.mkdir(parents=True, exist_ok=True)
    preamble = {
        "scenario": cfg.name,
        "status": series.metadata.get("status", "ok"),
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "version": __version__,
        "python": platform.python_version(),
        **{k: v for k, v in series.metadata.items() if k not in ("status", "name")},
    }
    write_csv(series, d / f"{cfg.name}.csv", preamble)
    (d / f"plot_{cfg.name}.py").write_text(PLOT_SCRIPT.format(csv_name=f"{cfg.name}.csv", name=cfg.name))
    summary = {"metadata": preamble, "curves": summarize(series)}
    (d / f"{cfg.name}.summary.json").write_text(json.dumps(_jsonable(summary), indent=2) + "\n")
    (d / f"{cfg.name}.config.yaml").write_text(cfg.to_yaml())
    return d
