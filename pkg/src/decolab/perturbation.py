"""Early-time entropy production from the short-time expansion.

For a separable initial density the linear entropy has no first-order
term.  The second-order coefficients for a separable coupling
``V12 = f(Q) g(q)`` are

    1/tau_c^2 = Var(g) / hbar^2 * int |F|^2 dQ^2 f'(Qbar)^2     dQbar d(dQ)
    1/tau_q^2 = Var(g) / hbar^2 * int |F|^2 dQ^2 (Df/dQ)^2      dQbar d(dQ)

where ``Df/dQ = (f(Qbar + dQ/2) - f(Qbar - dQ/2)) / dQ`` and ``|F|^2`` is
the squared Fourier transform of the system's initial Gaussian along its
momentum.  The two agree whenever ``f'''`` vanishes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import roots_hermitenorm, roots_legendre

from .model import ProductState, SystemSpec, abs_F_squared

__all__ = [
    "RatePair",
    "QuadratureConfig",
    "EarlyFit",
    "NonSeparableCoupling",
    "SeriesNotConverged",
    "WindowTooWide",
    "first_order_rates",
    "second_order_rates",
    "second_order_quantum_series_oracle",
    "fit_early_entropy",
]


class NonSeparableCoupling(ValueError):
    """The coupling is not of the form ``f(Q) g(q)``."""


class SeriesNotConverged(ArithmeticError):
    """Successive truncations of the double series disagree."""


class WindowTooWide(ValueError):
    """The quadratic model does not describe the data over the fit window."""


@dataclass(frozen=True)
class RatePair:
    inv_tau_c2_sq: float
    inv_tau_q2_sq: float

    @property
    def classicality_ratio(self) -> float:
        if self.inv_tau_c2_sq == 0.0:
            return float("nan")
        return self.inv_tau_q2_sq / self.inv_tau_c2_sq

    def to_dict(self) -> dict:
        return {
            "inv_tau_c2_sq": self.inv_tau_c2_sq,
            "inv_tau_q2_sq": self.inv_tau_q2_sq,
            "classicality_ratio": self.classicality_ratio,
        }


@dataclass(frozen=True)
class QuadratureConfig:
    """Node counts for the ``(Qbar, dQ)`` Gauss-Legendre grid and the bath
    Gauss-Hermite rule; ``L`` truncates the series oracle."""

    n_qbar: int = 1024
    n_dq: int = 1024
    n_hermite: int = 64
    L: int = 8
    window: float = 8.0

    def __post_init__(self):
        if min(self.n_qbar, self.n_dq, self.n_hermite) < 16:
            raise ValueError("quadrature node counts must be >= 16")
        if self.L < 1:
            raise ValueError("series truncation L must be >= 1")
        if not self.window > 0:
            raise ValueError("window must be positive")

    def doubled(self) -> "QuadratureConfig":
        return QuadratureConfig(2 * self.n_qbar, 2 * self.n_dq, 2 * self.n_hermite, self.L, self.window)


def first_order_rates(state: ProductState | None = None) -> tuple[float, float]:
    """Classical and quantum first-order coefficients: both vanish for a
    product initial state."""
    return (0.0, 0.0)


def _bath_nodes(state: ProductState, n: int):
    x, w = roots_hermitenorm(n)
    return state.bath.x0 + state.bath.sx * x, w / math.sqrt(2 * math.pi)


def _outer_grid(state: ProductState, cfg: QuadratureConfig):
    """Tensor Gauss-Legendre nodes and ``|F|^2``-weighted weights."""
    s = state.sys
    h = state.hbar_eff
    xq, wq = roots_legendre(cfg.n_qbar)
    xd, wd = roots_legendre(cfg.n_dq)
    half_q = cfg.window * s.sx
    half_d = cfg.window * h / s.sy
    qbar = s.x0 + half_q * xq
    dq = half_d * xd
    QB, DQ = np.meshgrid(qbar, dq, indexing="ij")
    W = np.outer(wq * half_q, wd * half_d) * abs_F_squared(s, QB, DQ)
    return QB, DQ, W


def _variance(g, nodes, weights) -> float:
    vals = g(nodes)
    mean = float(np.sum(weights * vals))
    return float(np.sum(weights * (vals - mean) ** 2))


def second_order_rates(spec: SystemSpec, state: ProductState, cfg: QuadratureConfig = QuadratureConfig()) -> RatePair:
    """Second-order coefficients ``(1/tau_c^2, 1/tau_q^2)`` for ``V12 = f(Q) g(q)``."""
    parts = spec.coupling.separable()
    if parts is None:
        raise NonSeparableCoupling(f"{type(spec.coupling).__name__} is not a product f(Q) g(q)")
    f, g = parts
    h = spec.hbar_eff
    var_g = _variance(g, *_bath_nodes(state, cfg.n_hermite))
    QB, DQ, W = _outer_grid(state, cfg)
    base = W * DQ * DQ
    classical = var_g / h**2 * float(np.sum(base * f.derivative(QB, 1) ** 2))
    quantum = var_g / h**2 * float(np.sum(base * f.finite_difference(QB, DQ) ** 2))
    return RatePair(max(classical, 0.0), max(quantum, 0.0))


def _series_sum(spec, state, cfg, L, QB, DQ, W, qn, qw):
    """Truncated double series for ``1/tau_q^2`` through order ``L``.

    ``C(l1, l2)`` is the bath covariance of the odd ``Q``-derivatives of the
    coupling, evaluated at each ``Qbar`` node.
    """
    h = spec.hbar_eff
    qbar = QB[:, 0]
    Qg, qg = np.meshgrid(qbar, qn, indexing="ij")
    derivs = []
    for l in range(L + 1):
        d = np.asarray(spec.coupling.dQ_n(Qg, qg, 2 * l + 1), dtype=float)
        derivs.append(d - np.sum(d * qw, axis=1, keepdims=True))
    total = np.zeros_like(QB)
    for l1 in range(L + 1):
        for l2 in range(L + 1):
            C = np.sum(derivs[l1] * derivs[l2] * qw, axis=1)
            n = 2 * l1 + 2 * l2
            coef = 1.0 / (2.0**n * math.factorial(2 * l1 + 1) * math.factorial(2 * l2 + 1))
            total += coef * C[:, None] * DQ ** (n + 2)
    return float(np.sum(W * total)) / h**2


def second_order_quantum_series_oracle(
    spec: SystemSpec, state: ProductState, cfg: QuadratureConfig = QuadratureConfig()
) -> float:
    """``1/tau_q^2`` from the explicit ``(l1, l2)`` double series truncated at ``cfg.L``.

    The ``(0, 0)`` term is the classical coefficient.  Raises
    :class:`SeriesNotConverged` when raising the truncation to ``L + 1``
    changes the value by more than ``1e-6`` relative.
    """
    QB, DQ, W = _outer_grid(state, cfg)
    qn, qw = _bath_nodes(state, cfg.n_hermite)
    value = _series_sum(spec, state, cfg, cfg.L, QB, DQ, W, qn, qw)
    nxt = _series_sum(spec, state, cfg, cfg.L + 1, QB, DQ, W, qn, qw)
    if abs(nxt - value) > 1e-6 * max(abs(nxt), 1e-300):
        raise SeriesNotConverged(f"series changes by {abs(nxt - value):.3g} between L={cfg.L} and L={cfg.L + 1}")
    return value


@dataclass(frozen=True)
class EarlyFit:
    """``S(t) ~ c + a t + b t^2`` over the fit window."""

    c: float
    a: float
    b: float
    se_a: float
    se_b: float
    max_residual: float
    t_max: float

    @property
    def linear_to_quadratic(self) -> float:
        """``|a t_max| / |b t_max^2|``."""
        return abs(self.a * self.t_max) / abs(self.b * self.t_max**2) if self.b else float("inf")


def fit_early_entropy(
    times: Sequence[float], values: Sequence[float], window: float = 0.05, strict: bool = True
) -> EarlyFit:
    """Least-squares quadratic fit of ``values`` against ``times`` on ``[0, window]``.

    With ``strict`` a :class:`WindowTooWide` is raised when the largest
    residual exceeds 10% of the quadratic term at the window edge.
    """
    t = np.asarray(times, dtype=float)
    s = np.asarray(values, dtype=float)
    keep = (t >= 0) & (t <= window * (1 + 1e-12)) & np.isfinite(s)
    t, s = t[keep], s[keep]
    if t.size < 5:
        raise ValueError(f"need at least 5 samples in the window, got {t.size}")
    A = np.vstack([np.ones_like(t), t, t * t]).T
    coef, *_ = np.linalg.lstsq(A, s, rcond=None)
    resid = s - A @ coef
    dof = t.size - 3
    s2 = float(resid @ resid) / dof if dof > 0 else 0.0
    cov = s2 * np.linalg.inv(A.T @ A)
    t_max = float(t.max())
    fit = EarlyFit(
        float(coef[0]),
        float(coef[1]),
        float(coef[2]),
        float(math.sqrt(cov[1, 1])),
        float(math.sqrt(cov[2, 2])),
        float(np.max(np.abs(resid))),
        t_max,
    )
    if strict and fit.max_residual > 0.1 * abs(fit.b) * t_max**2:
        raise WindowTooWide(
            f"residual {fit.max_residual:.3g} exceeds 10% of the quadratic term {abs(fit.b) * t_max**2:.3g}"
        )
    return fit
