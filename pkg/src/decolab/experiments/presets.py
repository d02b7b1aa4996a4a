"""Named scenarios for the seven published studies.

Horizons, grids and sample sizes are choices of this package (recorded in
each run's metadata); the physical parameters are the published ones.
"""

from __future__ import annotations

import math

from ..centropy import McConfig
from ..classical import IntegratorConfig
from ..model import Monomial, PolynomialCoupling, QuadQuad, SeparableProduct, Sin2, SystemSpec
from ..quantum import GridSpec
from .config import HistogramSpec, InitialSpec, QuantumSpec, ScenarioConfig, TimeSpec, config_from_dict

HBAR = 0.005
BETA = 0.01
ENERGY = 0.24


class UnknownPreset(KeyError):
    pass


def _squeezed(hbar: float) -> dict:
    s = math.sqrt(hbar / 2)
    return {"sigma_Q": 25 * s, "sigma_P": s / 25}


def _fig1() -> ScenarioConfig:
    system = SystemSpec(HBAR, BETA, SeparableProduct(Sin2(10.0), Monomial(2)))
    return ScenarioConfig(
        name="fig1",
        system=system,
        engines=("q", "mc", "hist"),
        initial=InitialSpec(0.5, 0.5, 0.0, energy=ENERGY, **_squeezed(HBAR)),
        times=TimeSpec(horizon=2.0, n_points=201, mc_every=10),
        mc=McConfig(n_outer=4000, n_inner=16),
        mc_dt=0.005,
        integrator=IntegratorConfig(dt=0.005),
        histogram=HistogramSpec(n_traj=200_000, resolution=10.0, half_width_Q=9.0, half_width_P=4.0),
        quantum=QuantumSpec(GridSpec(4096, 256, 8.0, 2.4, 0.002), edge_tol=1e-6),
        metadata={"check_time": 1.0},
    )


def _fig2() -> ScenarioConfig:
    system = SystemSpec(HBAR, BETA, SeparableProduct(Monomial(2), Sin2(1.0)))
    return ScenarioConfig(
        name="fig2",
        system=system,
        engines=("q", "mc", "hist"),
        initial=InitialSpec(0.5, 0.5, 0.0, energy=ENERGY, **_squeezed(HBAR)),
        times=TimeSpec(horizon=3.0, n_points=201, mc_every=10),
        mc=McConfig(n_outer=4000, n_inner=16),
        mc_dt=0.005,
        integrator=IntegratorConfig(dt=0.005),
        histogram=HistogramSpec(n_traj=200_000, resolution=10.0, half_width_Q=9.0, half_width_P=4.0),
        quantum=QuantumSpec(GridSpec(4096, 512, 8.0, 2.4, 0.002), edge_tol=1e-6),
    )


def _quartic(name: str, alpha: float, horizon: float, **kw) -> ScenarioConfig:
    Q0, P0 = kw.pop("centers", (0.4, 0.5))
    return ScenarioConfig(
        name=name,
        system=SystemSpec(HBAR, BETA, QuadQuad(alpha)),
        initial=InitialSpec(Q0, P0, 0.6, energy=ENERGY),
        times=kw.pop("times", TimeSpec(horizon=horizon, n_points=201, mc_every=10)),
        mc=McConfig(n_outer=4000, n_inner=16),
        mc_dt=0.01,
        integrator=IntegratorConfig(dt=0.01),
        histogram=HistogramSpec(n_traj=200_000, resolution=10.0, half_width_Q=4.0, half_width_P=1.5),
        quantum=kw.pop("quantum", QuantumSpec(GridSpec(512, 512, 4.0, 4.0, 0.004))),
        **kw,
    )


# No filaments form within the early window, and draws made at time t
# (the linear part) weaken the common random numbers that keep
# S(t) - S(0) precise there.
EARLY_MC = McConfig(
    n_outer=20_000, n_inner=128, antithetic=True, prior_fraction=0.5, local_fraction=0.25, linear_fraction=0.0
)


def _fig3() -> ScenarioConfig:
    times = TimeSpec(horizon=40.0, n_points=201, mc_every=10, early_window=0.05)
    return _quartic("fig3", 0.03, 40.0, times=times, early_mc=EARLY_MC)


def _fig4() -> ScenarioConfig:
    times = TimeSpec(horizon=20.0, n_points=201, mc_every=10, early_window=0.05)
    return _quartic("fig4", 1.0, 20.0, times=times, early_mc=EARLY_MC)


def _fig5() -> ScenarioConfig:
    return _quartic(
        "fig5",
        1.0,
        30.0,
        centers=(0.0, 0.0),
        # with the coupling switched off the bath swings out to |q| ~ 3.1
        quantum=QuantumSpec(GridSpec(512, 1024, 4.0, 5.0, 0.004)),
        metadata={"early_threshold": 10.0},
    )


def _fig6() -> ScenarioConfig:
    cfg = _quartic("fig6", 0.0, 20.0)
    return cfg.with_overrides(system=SystemSpec(HBAR, BETA, PolynomialCoupling(((0.5, 2, 2), (1.0, 4, 2)))))


def _fig7() -> ScenarioConfig:
    h = 0.05
    return ScenarioConfig(
        name="fig7",
        system=SystemSpec(h, BETA, QuadQuad(1.0)),
        initial=InitialSpec(0.4, 0.5, 0.6, energy=ENERGY),
        times=TimeSpec(horizon=20.0, n_points=201, mc_every=10),
        mc=McConfig(n_outer=4000, n_inner=16),
        mc_dt=0.01,
        integrator=IntegratorConfig(dt=0.01),
        histogram=HistogramSpec(n_traj=200_000, resolution=10.0, half_width_Q=5.0, half_width_P=2.0),
        quantum=QuantumSpec(GridSpec(256, 256, 5.5, 5.5, 0.004)),
    )


PRESETS = {
    "fig1": _fig1,
    "fig2": _fig2,
    "fig3": _fig3,
    "fig4": _fig4,
    "fig5": _fig5,
    "fig6": _fig6,
    "fig7": _fig7,
}


def preset(name: str) -> ScenarioConfig:
    """The named scenario (``fig1`` ... ``fig7``)."""
    try:
        cfg = PRESETS[name]()
    except KeyError:
        raise UnknownPreset(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    # same checks as a file config; raises ConfigError on a bad preset
    config_from_dict(cfg.to_dict())
    return cfg
