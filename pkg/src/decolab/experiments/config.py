"""Scenario configuration: schema, YAML parsing and validation.

A configuration is a YAML mapping.  Parsing never stops at the first
problem; every violated rule is collected as ``field.path: message
(line N)`` and raised together in a :class:`ConfigError`.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from ..centropy import McConfig
from ..classical import _SCHEMES, IntegratorConfig
from ..model import (
    InfeasibleEnergyError,
    ProductState,
    SystemSpec,
    coupling_from_dict,
    product_state,
)
from ..quantum import GridSpec, check_grid

ENGINES = ("q", "mc", "hist", "stab")


class ConfigError(ValueError):
    """One or more configuration problems (``.errors`` lists them all)."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


# ---------------------------------------------------------------------------
# schema


@dataclass(frozen=True)
class InitialSpec:
    Q0: float
    P0: float
    q0: float
    energy: float | None = None
    p0: float | None = None
    sigma_Q: float | None = None
    sigma_P: float | None = None
    sigma_q: float | None = None
    sigma_p: float | None = None

    def build(self, system: SystemSpec) -> ProductState:
        return product_state(
            system,
            self.Q0,
            self.P0,
            self.q0,
            energy=self.energy,
            p0=self.p0,
            sigma_Q=self.sigma_Q,
            sigma_P=self.sigma_P,
            sigma_q=self.sigma_q,
            sigma_p=self.sigma_p,
        )


@dataclass(frozen=True)
class TimeSpec:
    """Output instants: ``n_points`` uniform on ``[0, horizon]`` unless
    ``explicit`` is given.  Full Monte Carlo runs at every ``mc_every``-th
    instant (and the last).  ``early_window > 0`` adds ``early_points``
    uniform instants on ``[0, early_window]``."""

    horizon: float = 10.0
    n_points: int = 200
    explicit: tuple[float, ...] | None = None
    mc_every: int = 10
    early_window: float = 0.0
    early_points: int = 11

    def main_times(self) -> np.ndarray:
        if self.explicit is not None:
            return np.asarray(self.explicit, dtype=float)
        return np.linspace(0.0, self.horizon, self.n_points)

    def early_times(self) -> np.ndarray:
        if self.early_window <= 0:
            return np.empty(0)
        return np.linspace(0.0, self.early_window, self.early_points)

    def all_times(self) -> np.ndarray:
        return np.unique(np.concatenate([self.main_times(), self.early_times()]))

    def mc_times(self) -> np.ndarray:
        main = self.main_times()
        idx = sorted(set(range(0, main.size, self.mc_every)) | {main.size - 1})
        return main[idx]


@dataclass(frozen=True)
class HistogramSpec:
    n_traj: int = 200_000
    resolution: float = 10.0
    half_width_Q: float = 4.0
    half_width_P: float = 1.5


@dataclass(frozen=True)
class StabilitySpec:
    n_samples: int = 20_000
    sampling: str = "initial"


@dataclass(frozen=True)
class QuantumSpec:
    grid: GridSpec = GridSpec()
    edge_tol: float = 1e-8
    norm_tol: float = 1e-10


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    system: SystemSpec
    initial: InitialSpec
    times: TimeSpec = TimeSpec()
    engines: tuple[str, ...] = ENGINES
    mc: McConfig = McConfig(n_outer=4000, n_inner=16)
    mc_dt: float = 0.01
    early_mc: McConfig = McConfig(n_outer=20_000, n_inner=16, antithetic=True)
    integrator: IntegratorConfig = IntegratorConfig(dt=0.01)
    histogram: HistogramSpec = HistogramSpec()
    stability: StabilitySpec = StabilitySpec()
    quantum: QuantumSpec = QuantumSpec()
    seed: int = 0
    output_dir: str = "runs"
    metadata: dict = field(default_factory=dict)

    def state(self) -> ProductState:
        return self.initial.build(self.system)

    def with_overrides(self, **kw) -> "ScenarioConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "system": self.system.to_dict(),
            "initial": _drop_none(asdict(self.initial)),
            "times": _drop_none({**asdict(self.times), "explicit": _maybe_list(self.times.explicit)}),
            "engines": list(self.engines),
            "mc": _mc_dict(self.mc),
            "mc_dt": self.mc_dt,
            "early_mc": _mc_dict(self.early_mc),
            "integrator": {"dt": self.integrator.dt, "scheme": self.integrator.scheme},
            "histogram": asdict(self.histogram),
            "stability": asdict(self.stability),
            "quantum": {
                "grid": {f.name: getattr(self.quantum.grid, f.name) for f in fields(GridSpec)},
                "edge_tol": self.quantum.edge_tol,
                "norm_tol": self.quantum.norm_tol,
            },
            "seed": self.seed,
            "output_dir": self.output_dir,
            "metadata": dict(self.metadata),
        }

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=float).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _drop_none(d: dict) -> dict:
    return {k: v for k, v in d.items() if v is not None}


def _maybe_list(x):
    return None if x is None else [float(v) for v in x]


_MC_FIELDS = (
    "n_outer",
    "n_inner",
    "kappa",
    "seed",
    "prior_fraction",
    "local_fraction",
    "linear_fraction",
    "neighbors",
    "control_variate",
    "antithetic",
    "workers",
)


def _mc_dict(m: McConfig) -> dict:
    return {k: getattr(m, k) for k in _MC_FIELDS if k != "seed"}


# ---------------------------------------------------------------------------
# parsing


def _line_map(node, path=(), out=None) -> dict[tuple, int]:
    out = {} if out is None else out
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            out[path + (k.value,)] = k.start_mark.line + 1
            _line_map(v, path + (k.value,), out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _line_map(v, path + (i,), out)
    return out


_MISSING = object()


class _Reader:
    """Walks a nested mapping, converting fields and collecting errors."""

    def __init__(self, lines: dict | None = None):
        self.errors: list[str] = []
        self.lines = lines or {}

    def error(self, path: tuple, msg: str):
        where = ".".join(str(p) for p in path) or "<root>"
        line = self._line(path)
        self.errors.append(f"{where}: {msg}" + (f" (line {line})" if line else ""))

    def _line(self, path):
        p = tuple(path)
        while p and p not in self.lines:
            p = p[:-1]
        return self.lines.get(p)

    def section(self, d: dict, key: str, path: tuple) -> dict:
        v = d.get(key, {})
        if v is None:
            return {}
        if not isinstance(v, dict):
            self.error(path + (key,), "must be a mapping")
            return {}
        return v

    def get(self, d: dict, key: str, path: tuple, kind, default=_MISSING, check=None, msg=""):
        if key not in d or d[key] is None:
            if default is _MISSING:
                self.error(path + (key,), "is required")
            return None if default is _MISSING else default
        raw = d[key]
        try:
            if kind is bool:
                if not isinstance(raw, bool):
                    raise TypeError
                val = raw
            elif kind is int:
                if isinstance(raw, bool) or not float(raw).is_integer():
                    raise TypeError
                val = int(raw)
            elif kind is float:
                if isinstance(raw, bool):
                    raise TypeError
                val = float(raw)
                if not math.isfinite(val):
                    raise TypeError
            else:
                val = kind(raw)
        except (TypeError, ValueError):
            self.error(path + (key,), f"expected {getattr(kind, '__name__', kind)}, got {raw!r}")
            return None if default is _MISSING else default
        if check is not None and not check(val):
            self.error(path + (key,), msg or f"invalid value {val!r}")
            return None if default is _MISSING else default
        return val

    def unknown(self, d: dict, allowed, path: tuple):
        for k in d:
            if k not in allowed:
                self.error(path + (k,), "unknown field")


def _pos(x):
    return x > 0


def _nonneg(x):
    return x >= 0


def _parse_system(r: _Reader, d: dict) -> SystemSpec | None:
    p = ("system",)
    s = r.section(d, "system", ())
    r.unknown(s, ("hbar_eff", "beta", "coupling"), p)
    h = r.get(s, "hbar_eff", p, float, check=_pos, msg="must be positive")
    b = r.get(s, "beta", p, float, check=_nonneg, msg="must be nonnegative")
    c = s.get("coupling")
    coupling = None
    if c is None:
        r.error(p + ("coupling",), "is required")
    elif not isinstance(c, dict):
        r.error(p + ("coupling",), "must be a mapping")
    else:
        try:
            coupling = coupling_from_dict(c)
        except (KeyError, TypeError, ValueError) as exc:
            r.error(p + ("coupling",), f"invalid coupling: {exc}")
    if None in (h, b, coupling):
        return None
    return SystemSpec(h, b, coupling)


def _parse_initial(r: _Reader, d: dict) -> InitialSpec | None:
    p = ("initial",)
    s = r.section(d, "initial", ())
    names = [f.name for f in fields(InitialSpec)]
    r.unknown(s, names, p)
    vals = {}
    for k in ("Q0", "P0", "q0"):
        vals[k] = r.get(s, k, p, float)
    for k in ("energy", "p0"):
        vals[k] = r.get(s, k, p, float, default=None)
    for k in ("sigma_Q", "sigma_P", "sigma_q", "sigma_p"):
        vals[k] = r.get(s, k, p, float, default=None, check=_pos, msg="must be positive")
    if (vals["energy"] is None) == (vals["p0"] is None):
        r.error(p, "give exactly one of energy and p0")
        return None
    if any(vals[k] is None for k in ("Q0", "P0", "q0")):
        return None
    return InitialSpec(**vals)


def _parse_times(r: _Reader, d: dict) -> TimeSpec:
    p = ("times",)
    s = r.section(d, "times", ())
    r.unknown(s, [f.name for f in fields(TimeSpec)], p)
    dflt = TimeSpec()
    horizon = r.get(s, "horizon", p, float, dflt.horizon, _pos, "must be positive")
    n_points = r.get(s, "n_points", p, int, dflt.n_points, lambda n: n >= 2, "must be >= 2")
    mc_every = r.get(s, "mc_every", p, int, dflt.mc_every, lambda n: n >= 1, "must be >= 1")
    early = r.get(s, "early_window", p, float, dflt.early_window, _nonneg, "must be >= 0")
    early_pts = r.get(s, "early_points", p, int, dflt.early_points, lambda n: n >= 5, "must be >= 5 (quadratic fit)")
    explicit = s.get("explicit")
    if explicit is not None:
        try:
            explicit = tuple(float(x) for x in explicit)
        except (TypeError, ValueError):
            r.error(p + ("explicit",), "must be a list of numbers")
            explicit = None
        else:
            if not explicit:
                r.error(p + ("explicit",), "must not be empty")
            elif explicit[0] < 0 or any(b <= a for a, b in zip(explicit, explicit[1:])):
                r.error(p + ("explicit",), "times must be nonnegative and strictly increasing")
    return TimeSpec(horizon, n_points, explicit, mc_every, early, early_pts)


def _parse_mc(r: _Reader, d: dict, key: str, dflt: McConfig, seed: int) -> McConfig:
    p = (key,)
    s = r.section(d, key, ())
    r.unknown(s, [k for k in _MC_FIELDS if k != "seed"], p)
    vals = {
        "n_outer": r.get(s, "n_outer", p, int, dflt.n_outer, lambda n: n >= 1, "must be >= 1"),
        "n_inner": r.get(s, "n_inner", p, int, dflt.n_inner, lambda n: n >= 1, "must be >= 1"),
        "kappa": r.get(s, "kappa", p, float, dflt.kappa, _pos, "must be positive"),
        "prior_fraction": r.get(s, "prior_fraction", p, float, dflt.prior_fraction, lambda x: 0 <= x <= 1, "must lie in [0, 1]"),
        "local_fraction": r.get(s, "local_fraction", p, float, dflt.local_fraction, lambda x: 0 <= x <= 1, "must lie in [0, 1]"),
        "linear_fraction": r.get(s, "linear_fraction", p, float, dflt.linear_fraction, lambda x: 0 <= x <= 1, "must lie in [0, 1]"),
        "neighbors": r.get(s, "neighbors", p, int, dflt.neighbors, lambda n: n >= 1, "must be >= 1"),
        "control_variate": r.get(s, "control_variate", p, bool, dflt.control_variate),
        "antithetic": r.get(s, "antithetic", p, bool, dflt.antithetic),
        "workers": r.get(s, "workers", p, int, dflt.workers, lambda n: n >= 1, "must be >= 1"),
    }
    try:
        return McConfig(seed=seed, **vals)
    except ValueError as exc:
        r.error(p, str(exc))
        return replace(dflt, seed=seed)


def _parse_quantum(r: _Reader, d: dict) -> QuantumSpec:
    p = ("quantum",)
    s = r.section(d, "quantum", ())
    r.unknown(s, ("grid", "edge_tol", "norm_tol"), p)
    g = r.section(s, "grid", p)
    gp = p + ("grid",)
    r.unknown(g, [f.name for f in fields(GridSpec)], gp)
    dg = GridSpec()

    def pow2(n):
        return n > 0 and n & (n - 1) == 0

    grid_vals = {
        "N_Q": r.get(g, "N_Q", gp, int, dg.N_Q, pow2, "must be a power of two"),
        "N_q": r.get(g, "N_q", gp, int, dg.N_q, pow2, "must be a power of two"),
        "L_Q": r.get(g, "L_Q", gp, float, dg.L_Q, _pos, "must be positive"),
        "L_q": r.get(g, "L_q", gp, float, dg.L_q, _pos, "must be positive"),
        "dt": r.get(g, "dt", gp, float, dg.dt, _pos, "must be positive"),
    }
    dq = QuantumSpec()
    edge = r.get(s, "edge_tol", p, float, dq.edge_tol, _pos, "must be positive")
    norm = r.get(s, "norm_tol", p, float, dq.norm_tol, _pos, "must be positive")
    try:
        grid = GridSpec(**grid_vals)
    except ValueError:
        grid = dg
    return QuantumSpec(grid, edge, norm)


def config_from_dict(d: Any, lines: dict | None = None) -> ScenarioConfig:
    """Build and validate a :class:`ScenarioConfig`; raises :class:`ConfigError`."""
    r = _Reader(lines)
    if not isinstance(d, dict):
        raise ConfigError(["<root>: configuration must be a mapping"])
    top = {f.name for f in fields(ScenarioConfig)}
    r.unknown(d, top, ())
    name = r.get(d, "name", (), str, "scenario")
    seed = r.get(d, "seed", (), int, 0, _nonneg, "must be a nonnegative integer")
    system = _parse_system(r, d)
    initial = _parse_initial(r, d)
    times = _parse_times(r, d)
    engines = d.get("engines", list(ENGINES))
    if isinstance(engines, str):
        engines = [e.strip() for e in engines.split(",") if e.strip()]
    if not isinstance(engines, (list, tuple)) or not engines:
        r.error(("engines",), f"must be a nonempty list drawn from {list(ENGINES)}")
        engines = list(ENGINES)
    bad = [e for e in engines if e not in ENGINES]
    if bad:
        r.error(("engines",), f"unknown engines {bad}; choose from {list(ENGINES)}")
    engines = tuple(e for e in ENGINES if e in engines)

    dflt = ScenarioConfig.__dataclass_fields__
    mc = _parse_mc(r, d, "mc", dflt["mc"].default, seed)
    early_mc = _parse_mc(r, d, "early_mc", dflt["early_mc"].default, seed)
    mc_dt = r.get(d, "mc_dt", (), float, dflt["mc_dt"].default, _pos, "must be positive")

    ip = ("integrator",)
    isec = r.section(d, "integrator", ())
    r.unknown(isec, ("dt", "scheme"), ip)
    idt = r.get(isec, "dt", ip, float, 0.01, _pos, "must be positive")
    scheme = r.get(isec, "scheme", ip, str, "yoshida4", lambda s: s in _SCHEMES, f"must be one of {sorted(_SCHEMES)}")
    integrator = IntegratorConfig(dt=idt, scheme=scheme)

    hp = ("histogram",)
    hsec = r.section(d, "histogram", ())
    r.unknown(hsec, [f.name for f in fields(HistogramSpec)], hp)
    hd = HistogramSpec()
    histogram = HistogramSpec(
        r.get(hsec, "n_traj", hp, int, hd.n_traj, lambda n: n >= 100, "must be >= 100"),
        r.get(hsec, "resolution", hp, float, hd.resolution, _pos, "must be positive"),
        r.get(hsec, "half_width_Q", hp, float, hd.half_width_Q, _pos, "must be positive"),
        r.get(hsec, "half_width_P", hp, float, hd.half_width_P, _pos, "must be positive"),
    )

    sp = ("stability",)
    ssec = r.section(d, "stability", ())
    r.unknown(ssec, [f.name for f in fields(StabilitySpec)], sp)
    sd = StabilitySpec()
    stability = StabilitySpec(
        r.get(ssec, "n_samples", sp, int, sd.n_samples, lambda n: n >= 2, "must be >= 2"),
        r.get(ssec, "sampling", sp, str, sd.sampling, lambda s: s in ("initial", "rescaled"), "must be 'initial' or 'rescaled'"),
    )
    quantum = _parse_quantum(r, d)
    output_dir = r.get(d, "output_dir", (), str, "runs")
    metadata = d.get("metadata") or {}
    if not isinstance(metadata, dict):
        r.error(("metadata",), "must be a mapping")
        metadata = {}

    state = None
    if system is not None and initial is not None:
        try:
            state = initial.build(system)
        except InfeasibleEnergyError as exc:
            r.error(("initial", "energy"), str(exc))
        except ValueError as exc:
            r.error(("initial",), str(exc))
    if state is not None:
        for label, g in (("sigma_Q * sigma_P", state.sys), ("sigma_q * sigma_p", state.bath)):
            if not g.is_minimum_uncertainty:
                r.error(("initial",), f"{label} = {g.sx * g.sy:.6g} must equal hbar_eff / 2 = {g.hbar_eff / 2:.6g}")
        if "stab" in engines and not state.is_symmetric:
            r.error(("engines",), "the stability engine needs a symmetric minimum-uncertainty state")
        if "q" in engines:
            for problem in check_grid(state, quantum.grid):
                r.error(("quantum", "grid"), problem)
        if "mc" in engines and times.early_window > 0 and early_mc.antithetic and early_mc.n_outer % 16:
            r.error(("early_mc", "n_outer"), "antithetic sampling needs a multiple of 16")
    if r.errors:
        raise ConfigError(r.errors)
    return ScenarioConfig(
        name=name,
        system=system,
        initial=initial,
        times=times,
        engines=engines,
        mc=mc,
        mc_dt=mc_dt,
        early_mc=early_mc,
        integrator=integrator,
        histogram=histogram,
        stability=stability,
        quantum=quantum,
        seed=seed,
        output_dir=output_dir,
        metadata=metadata,
    )


def parse_config(text: str, source: str = "<string>") -> ScenarioConfig:
    """Parse YAML text; syntax errors are reported with their line and column."""
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"{source}:{mark.line + 1}:{mark.column + 1}" if mark else source
        raise ConfigError([f"{where}: YAML syntax error: {exc.problem}"]) from None
    lines = _line_map(node) if node is not None else {}
    return config_from_dict(data, lines)


def load_config(path: str | Path) -> ScenarioConfig:
    """Read a scenario from a YAML file, or a preset when ``path`` names one."""
    from .presets import PRESETS, preset

    p = Path(path)
    if not p.exists() and str(path) in PRESETS:
        return preset(str(path))
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    return parse_config(p.read_text(), str(p))
