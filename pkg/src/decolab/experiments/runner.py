"""Run the selected engines for a scenario and merge their results."""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

import numpy as np

from ..centropy import (
    HistogramGrid,
    s_c_full_mc_series,
    s_c_histogram_series,
    s_c_stability_series,
)
from ..classical import IntegratorConfig
from ..quantum import QuantumDiagnosticError, evolve_and_record
from .config import ENGINES, ScenarioConfig

COLUMNS = (
    "t",
    "S_q",
    "S_c_mc",
    "S_c_mc_err",
    "S_c_hist",
    "S_c_hist_err",
    "S_c_stab",
    "S_c_stab_err",
    "diag_q_norm_drift",
    "diag_q_energy_drift",
    "diag_q_edge",
    "diag_c_energy_drift",
    "diag_mc_ess",
    "diag_mc_block",
    "diag_hist_overflow",
    "diag_hist_coarse",
    "diag_stab_dropped",
)


class RunFailed(RuntimeError):
    """An engine failed; ``series`` holds everything computed before that."""

    def __init__(self, message: str, series: "EntropySeries"):
        super().__init__(message)
        self.series = series


@dataclass
class EntropySeries:
    """Time-tagged entropies from every engine; missing values are ``nan``."""

    times: np.ndarray
    data: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)

    @classmethod
    def empty(cls, times) -> "EntropySeries":
        t = np.asarray(times, dtype=float)
        if t.size == 0:
            raise ValueError("no output times")
        if np.any(np.diff(t) <= 0):
            raise ValueError("output times must be strictly increasing")
        data = {c: np.full(t.size, np.nan) for c in COLUMNS if c != "t"}
        return cls(t, data)

    def __len__(self) -> int:
        return self.times.size

    def column(self, name: str) -> np.ndarray:
        return self.times if name == "t" else self.data[name]

    def present(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        """``(t, values)`` where ``name`` was computed."""
        v = self.column(name)
        ok = np.isfinite(v)
        return self.times[ok], v[ok]

    def put(self, name: str, t: float, value: float):
        i = int(np.searchsorted(self.times, t))
        if i >= self.times.size or not math.isclose(self.times[i], t, rel_tol=0, abs_tol=1e-12):
            raise KeyError(f"time {t} is not an output instant")
        self.data[name][i] = value

    def out_of_range(self) -> list[str]:
        """Entries outside ``[-3 err, 1 + 3 err]``."""
        bad = []
        for col, err in (("S_q", None), ("S_c_mc", "S_c_mc_err"), ("S_c_hist", "S_c_hist_err"), ("S_c_stab", "S_c_stab_err")):
            v = self.data[col]
            e = np.zeros_like(v) if err is None else np.nan_to_num(self.data[err], nan=0.0)
            tol = 3 * e + 1e-9
            mask = np.isfinite(v) & ((v < -tol) | (v > 1 + tol))
            bad += [f"{col} = {v[i]:.4g} at t = {self.times[i]:g}" for i in np.flatnonzero(mask)]
        return bad


def _histogram_grid(cfg: ScenarioConfig, state) -> HistogramGrid:
    h = cfg.histogram
    return HistogramGrid.around(state, (h.half_width_Q, h.half_width_P), h.resolution)


def _run_quantum(cfg, state, series, log):
    times = series.times
    try:
        recs = evolve_and_record(
            cfg.system,
            state,
            cfg.quantum.grid,
            times,
            edge_tol=cfg.quantum.edge_tol,
            norm_tol=cfg.quantum.norm_tol,
        )
        error = None
    except QuantumDiagnosticError as exc:
        recs, error = exc.records, exc
    e0 = recs[0].energy if recs else float("nan")
    for r in recs:
        series.put("S_q", r.t, r.S_q)
        series.put("diag_q_norm_drift", r.t, r.norm - 1.0)
        series.put("diag_q_energy_drift", r.t, r.energy - e0)
        series.put("diag_q_edge", r.t, r.edge_probability)
    log(f"quantum: {len(recs)} records")
    if error is not None:
        raise error


def _run_mc(cfg, state, series, log):
    icfg = IntegratorConfig(dt=cfg.mc_dt, scheme=cfg.integrator.scheme)
    blocks = []
    early = cfg.times.early_times()
    if early.size:
        # at least two steps per early output spacing
        edt = min(cfg.mc_dt, float(early[1] - early[0]) / 2)
        blocks.append(("early", early, cfg.early_mc, replace(icfg, dt=edt)))
    blocks.append(("main", cfg.times.mc_times(), cfg.mc, icfg))
    min_ess = math.inf
    done: set[float] = set()
    for tag, times, mcfg, icfg in blocks:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            ests = s_c_full_mc_series(cfg.system, state, times, mcfg, icfg)
        for w in caught:
            log(f"mc warning: {w.message}")
        for e in ests:
            t = e.diagnostics["t"]
            # inside the early window every value comes from the early block,
            # whose common random numbers make differences between times precise
            if t in done:
                continue
            done.add(t)
            series.put("S_c_mc", t, e.value)
            series.put("S_c_mc_err", t, e.std_error)
            series.put("diag_mc_ess", t, e.n_effective)
            series.put("diag_mc_block", t, 0.0 if tag == "main" else 1.0)
            min_ess = min(min_ess, e.n_effective)
        log(f"mc: {len(ests)} times ({tag} block)")
    series.metadata["mc_min_ess"] = min_ess


def _run_hist(cfg, state, series, log):
    grid = _histogram_grid(cfg, state)
    ests = s_c_histogram_series(cfg.system, state, series.times, grid, cfg.histogram.n_traj, cfg.seed, cfg.integrator)
    for e in ests:
        t = e.diagnostics["t"]
        series.put("S_c_hist", t, e.value)
        series.put("S_c_hist_err", t, e.std_error)
        series.put("diag_hist_overflow", t, e.diagnostics["overflow_fraction"])
        series.put("diag_hist_coarse", t, e.diagnostics["double_bin_value"])
        series.put("diag_c_energy_drift", t, e.diagnostics["energy_drift"])
    log(f"hist: {len(ests)} times")


def _run_stab(cfg, state, series, log):
    ests = s_c_stability_series(
        cfg.system, state, series.times, cfg.stability.n_samples, cfg.seed, cfg.integrator, cfg.stability.sampling
    )
    for e in ests:
        t = e.diagnostics["t"]
        series.put("S_c_stab", t, e.value)
        series.put("S_c_stab_err", t, e.std_error)
        series.put("diag_stab_dropped", t, e.diagnostics["dropped"])
    log(f"stab: {len(ests)} times")


_ENGINE_FUNCS = {"q": _run_quantum, "mc": _run_mc, "hist": _run_hist, "stab": _run_stab}


def run_scenario(
    cfg: ScenarioConfig,
    engines: Iterable[str] | None = None,
    *,
    out_dir: str | None = None,
    write: bool = False,
    log: Callable[[str], None] | None = None,
) -> EntropySeries:
    """Run the requested engines (default: those in ``cfg``) and merge.

    With ``write`` the CSV, plot script and summary go to ``out_dir`` (or
    ``cfg.output_dir/<name>``).  If an engine fails, whatever was computed
    is still written with ``status: failed`` and :class:`RunFailed` is
    raised carrying the partial series.
    """
    engines = tuple(cfg.engines if engines is None else engines)
    unknown = set(engines) - set(ENGINES)
    if unknown:
        raise ValueError(f"unknown engines {sorted(unknown)}")
    log = log or (lambda msg: None)
    state = cfg.state()
    series = EntropySeries.empty(cfg.times.all_times())
    series.metadata.update(
        {
            "name": cfg.name,
            "engines": [e for e in ENGINES if e in engines],
            "horizon": float(series.times[-1]),
            "p0": state.bath.y0,
            "p0_sign": "nonnegative root" if cfg.initial.p0 is None else "given",
            **cfg.metadata,
        }
    )
    timing = {}
    status = "ok"
    failure = None
    for name in ENGINES:
        if name not in engines:
            continue
        start = time.perf_counter()
        try:
            _ENGINE_FUNCS[name](cfg, state, series, log)
        except Exception as exc:  # flushed below, then re-raised
            status = f"failed in {name}: {exc}"
            failure = exc
            break
        finally:
            timing[name] = time.perf_counter() - start
    series.metadata["timing_s"] = timing
    series.metadata["status"] = status
    bad = series.out_of_range()
    series.metadata["out_of_range"] = bad
    if write:
        from .outputs import emit_outputs

        emit_outputs(series, cfg, out_dir)
    if failure is not None:
        raise RunFailed(status, series) from failure
    return series


def replace_seed(cfg: ScenarioConfig, seed: int) -> ScenarioConfig:
    return replace(cfg, seed=seed, mc=replace(cfg.mc, seed=seed), early_mc=replace(cfg.early_mc, seed=seed))
