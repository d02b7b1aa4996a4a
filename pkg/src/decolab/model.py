"""Hamiltonians, coupling potentials and Gaussian initial states.

All systems have the form

    H = P**2/2 + p**2/2 + (beta/4) (Q**4 + q**4) + V12(Q, q)

with ``(Q, P)`` the system and ``(q, p)`` the bath degree of freedom.
Every coupling is a closed-form descriptor so that exact derivatives (any
order in ``Q``) and exact finite differences are available to the
integrators and to the perturbative rate formulas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence, Union

import numpy as np

__all__ = [
    "FunctionSpec",
    "Polynomial",
    "Monomial",
    "Sin2",
    "QuadQuad",
    "SeparableProduct",
    "PolynomialCoupling",
    "CouplingSpec",
    "SystemSpec",
    "GaussianState",
    "ProductState",
    "PhasePoint",
    "InfeasibleEnergyError",
    "potential",
    "hamiltonian",
    "force_and_hessian",
    "solve_momentum_from_energy",
    "gaussian_density",
    "fourier_transform_F",
    "abs_F_squared",
    "product_state",
]


class InfeasibleEnergyError(ValueError):
    """Requested energy lies below the potential + fixed kinetic energy."""


class PhasePoint(NamedTuple):
    Q: float
    P: float
    q: float
    p: float

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=float)


# ---------------------------------------------------------------------------
# one-dimensional closed-form functions


class FunctionSpec:
    """A smooth scalar function of one coordinate with exact derivatives."""

    kind: str

    def __call__(self, x):
        return self.derivative(x, 0)

    def derivative(self, x, order: int = 1):
        raise NotImplementedError

    def finite_difference(self, xbar, delta):
        """``(f(xbar + delta/2) - f(xbar - delta/2)) / delta``.

        Evaluated in a cancellation-free closed form; ``delta == 0`` gives
        the analytic derivative at ``xbar``.
        """
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Polynomial(FunctionSpec):
    """``sum_k coeffs[k] * x**k`` (ascending powers)."""

    coeffs: tuple[float, ...]
    kind: str = field(default="polynomial", init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    def derivative(self, x, order: int = 1):
        poly = np.polynomial.Polynomial(self.coeffs)
        if order:
            poly = poly.deriv(order)
        return poly(np.asarray(x, dtype=float))

    def finite_difference(self, xbar, delta):
        xbar = np.asarray(xbar, dtype=float)
        delta = np.asarray(delta, dtype=float)
        x1 = xbar + 0.5 * delta
        x2 = xbar - 0.5 * delta
        # (x1**k - x2**k)/(x1 - x2) = sum_j x1**j x2**(k-1-j)
        out = np.zeros(np.broadcast(x1, x2).shape)
        for k, c in enumerate(self.coeffs):
            if k == 0 or c == 0.0:
                continue
            term = np.zeros_like(out)
            for j in range(k):
                term = term + x1**j * x2 ** (k - 1 - j)
            out = out + c * term
        return out

    def to_dict(self) -> dict:
        return {"kind": "polynomial", "coeffs": list(self.coeffs)}


def Monomial(n: int, coef: float = 1.0) -> Polynomial:
    """``coef * x**n`` as a :class:`Polynomial`."""
    if n < 0:
        raise ValueError("monomial power must be nonnegative")
    return Polynomial(tuple([0.0] * n + [coef]))


@dataclass(frozen=True)
class Sin2(FunctionSpec):
    """``amplitude * sin(k x)**2``."""

    k: float
    amplitude: float = 1.0
    kind: str = field(default="sin2", init=False, repr=False)

    def derivative(self, x, order: int = 1):
        x = np.asarray(x, dtype=float)
        if order == 0:
            return self.amplitude * np.sin(self.k * x) ** 2
        # sin^2(kx) = (1 - cos 2kx)/2
        w = 2.0 * self.k
        return -0.5 * self.amplitude * w**order * np.cos(w * x + 0.5 * math.pi * order)

    def finite_difference(self, xbar, delta):
        # sin^2 a - sin^2 b = sin(a + b) sin(a - b)
        xbar = np.asarray(xbar, dtype=float)
        delta = np.asarray(delta, dtype=float)
        k = self.k
        return self.amplitude * np.sin(2 * k * xbar) * k * np.sinc(k * delta / math.pi)

    def to_dict(self) -> dict:
        return {"kind": "sin2", "k": self.k, "amplitude": self.amplitude}


def function_from_dict(d: dict) -> FunctionSpec:
    kind = d.get("kind")
    if kind == "polynomial":
        return Polynomial(tuple(d["coeffs"]))
    if kind == "monomial":
        return Monomial(int(d["n"]), float(d.get("coef", 1.0)))
    if kind == "sin2":
        return Sin2(float(d["k"]), float(d.get("amplitude", 1.0)))
    raise ValueError(f"unknown function kind {kind!r}")


# ---------------------------------------------------------------------------
# couplings


class _Coupling:
    kind: str

    def value(self, Q, q):
        raise NotImplementedError

    def grad_hess(self, Q, q):
        """Return ``(V_Q, V_q, V_QQ, V_qq, V_Qq)``."""
        raise NotImplementedError

    def dQ_n(self, Q, q, order: int):
        """``d^order V12 / dQ^order`` at fixed ``q``."""
        raise NotImplementedError

    def separable(self) -> tuple[FunctionSpec, FunctionSpec] | None:
        """``(f, g)`` with ``V12 = f(Q) g(q)``, or ``None``."""
        return None

    def swapped(self) -> "CouplingSpec":
        """The same coupling with the roles of ``Q`` and ``q`` exchanged."""
        raise NotImplementedError


@dataclass(frozen=True)
class SeparableProduct(_Coupling):
    f: FunctionSpec
    g: FunctionSpec
    kind: str = field(default="separable", init=False, repr=False)

    def value(self, Q, q):
        return self.f(Q) * self.g(q)

    def grad_hess(self, Q, q):
        f0, f1, f2 = self.f(Q), self.f.derivative(Q, 1), self.f.derivative(Q, 2)
        g0, g1, g2 = self.g(q), self.g.derivative(q, 1), self.g.derivative(q, 2)
        return f1 * g0, f0 * g1, f2 * g0, f0 * g2, f1 * g1

    def dQ_n(self, Q, q, order: int):
        return self.f.derivative(Q, order) * self.g(q)

    def separable(self):
        return self.f, self.g

    def swapped(self):
        return SeparableProduct(self.g, self.f)

    def to_dict(self) -> dict:
        return {"kind": "separable", "f": self.f.to_dict(), "g": self.g.to_dict()}


@dataclass(frozen=True)
class QuadQuad(_Coupling):
    """Quartic-oscillator coupling ``alpha Q**2 q**2 / 2``."""

    alpha: float
    kind: str = field(default="quadquad", init=False, repr=False)

    def value(self, Q, q):
        return 0.5 * self.alpha * Q**2 * q**2

    def grad_hess(self, Q, q):
        a = self.alpha
        return a * Q * q**2, a * Q**2 * q, a * q**2, a * Q**2, 2.0 * a * Q * q

    def dQ_n(self, Q, q, order: int):
        return self.separable_product().dQ_n(Q, q, order)

    def separable_product(self) -> SeparableProduct:
        return SeparableProduct(Monomial(2, 0.5 * self.alpha), Monomial(2))

    def separable(self):
        return self.separable_product().separable()

    def swapped(self):
        return self

    def to_dict(self) -> dict:
        return {"kind": "quadquad", "alpha": self.alpha}


@dataclass(frozen=True)
class PolynomialCoupling(_Coupling):
    """``sum c Q**m q**n`` over ``terms = ((c, m, n), ...)``."""

    terms: tuple[tuple[float, int, int], ...]
    kind: str = field(default="polynomial", init=False, repr=False)

    def __post_init__(self):
        terms = tuple((float(c), int(m), int(n)) for c, m, n in self.terms)
        if any(m < 0 or n < 0 for _, m, n in terms):
            raise ValueError("polynomial coupling powers must be nonnegative")
        object.__setattr__(self, "terms", terms)

    def value(self, Q, q):
        Q = np.asarray(Q, dtype=float)
        q = np.asarray(q, dtype=float)
        out = np.zeros(np.broadcast(Q, q).shape)
        for c, m, n in self.terms:
            out = out + c * Q**m * q**n
        return out

    @staticmethod
    def _pow_deriv(x, n, order):
        # d^order/dx^order x**n
        if order > n:
            return np.zeros_like(x)
        return math.perm(n, order) * x ** (n - order)

    def grad_hess(self, Q, q):
        Q = np.asarray(Q, dtype=float)
        q = np.asarray(q, dtype=float)
        shape = np.broadcast(Q, q).shape
        VQ, Vq, VQQ, Vqq, VQq = (np.zeros(shape) for _ in range(5))
        d = self._pow_deriv
        for c, m, n in self.terms:
            Qm, qn = Q**m, q**n
            VQ = VQ + c * d(Q, m, 1) * qn
            Vq = Vq + c * Qm * d(q, n, 1)
            VQQ = VQQ + c * d(Q, m, 2) * qn
            Vqq = Vqq + c * Qm * d(q, n, 2)
            VQq = VQq + c * d(Q, m, 1) * d(q, n, 1)
        return VQ, Vq, VQQ, Vqq, VQq

    def dQ_n(self, Q, q, order: int):
        Q = np.asarray(Q, dtype=float)
        q = np.asarray(q, dtype=float)
        out = np.zeros(np.broadcast(Q, q).shape)
        for c, m, n in self.terms:
            out = out + c * self._pow_deriv(Q, m, order) * q**n
        return out

    def separable(self):
        powers = {n for _, _, n in self.terms}
        if len(powers) != 1:
            return None
        (n,) = powers
        deg = max(m for _, m, _ in self.terms)
        coeffs = [0.0] * (deg + 1)
        for c, m, _ in self.terms:
            coeffs[m] += c
        return Polynomial(tuple(coeffs)), Monomial(n)

    def swapped(self):
        return PolynomialCoupling(tuple((c, n, m) for c, m, n in self.terms))

    def to_dict(self) -> dict:
        return {"kind": "polynomial", "terms": [list(t) for t in self.terms]}


CouplingSpec = Union[QuadQuad, SeparableProduct, PolynomialCoupling]


def coupling_from_dict(d: dict) -> CouplingSpec:
    kind = d.get("kind")
    if kind == "quadquad":
        return QuadQuad(float(d["alpha"]))
    if kind == "separable":
        return SeparableProduct(function_from_dict(d["f"]), function_from_dict(d["g"]))
    if kind == "polynomial":
        return PolynomialCoupling(tuple(tuple(t) for t in d["terms"]))
    raise ValueError(f"unknown coupling kind {kind!r}")


# ---------------------------------------------------------------------------
# the system


@dataclass(frozen=True)
class SystemSpec:
    hbar_eff: float
    beta: float
    coupling: CouplingSpec

    def __post_init__(self):
        if not self.hbar_eff > 0:
            raise ValueError(f"hbar_eff must be positive, got {self.hbar_eff}")
        if not self.beta >= 0:
            raise ValueError(f"beta must be nonnegative, got {self.beta}")

    def swapped(self) -> "SystemSpec":
        return SystemSpec(self.hbar_eff, self.beta, self.coupling.swapped())

    def to_dict(self) -> dict:
        return {"hbar_eff": self.hbar_eff, "beta": self.beta, "coupling": self.coupling.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "SystemSpec":
        return cls(float(d["hbar_eff"]), float(d["beta"]), coupling_from_dict(d["coupling"]))


def potential(spec: SystemSpec, Q, q):
    """Total potential energy ``(beta/4)(Q^4 + q^4) + V12(Q, q)``."""
    Q = np.asarray(Q, dtype=float)
    q = np.asarray(q, dtype=float)
    return 0.25 * spec.beta * (Q**4 + q**4) + spec.coupling.value(Q, q)


def hamiltonian(spec: SystemSpec, point) -> np.ndarray:
    """Energy of one or many phase points (last axis ordered ``Q, P, q, p``)."""
    z = np.asarray(point, dtype=float)
    Q, P, q, p = z[..., 0], z[..., 1], z[..., 2], z[..., 3]
    return 0.5 * (P**2 + p**2) + potential(spec, Q, q)


def force_and_hessian(spec: SystemSpec, Q, q):
    """``(dV/dQ, dV/dq, d2V/dQ2, d2V/dq2, d2V/dQdq)`` of the full potential."""
    b = spec.beta
    VQ, Vq, VQQ, Vqq, VQq = spec.coupling.grad_hess(Q, q)
    return (
        b * Q**3 + VQ,
        b * q**3 + Vq,
        3.0 * b * Q**2 + VQQ,
        3.0 * b * q**2 + Vqq,
        VQq + 0.0 * Q,
    )


def solve_momentum_from_energy(spec: SystemSpec, Q0: float, P0: float, q0: float, E: float) -> float:
    """Nonnegative bath momentum ``p0`` with ``H(Q0, P0, q0, p0) = E``."""
    kinetic = E - 0.5 * P0**2 - float(potential(spec, Q0, q0))
    if kinetic < 0:
        if kinetic > -1e-14 * max(1.0, abs(E)):
            return 0.0
        raise InfeasibleEnergyError(
            f"energy {E} is below P0^2/2 + V(Q0, q0) = {E - kinetic} at "
            f"(Q0, P0, q0) = ({Q0}, {P0}, {q0})"
        )
    return math.sqrt(2.0 * kinetic)


# ---------------------------------------------------------------------------
# Gaussian states


@dataclass(frozen=True)
class GaussianState:
    """Gaussian phase-space density on one degree of freedom.

    ``rho(x, y) = 1/(pi hbar) exp(-(x-x0)^2/(2 sx^2) - (y-y0)^2/(2 sy^2))``;
    this is a normalized density only when ``sx * sy = hbar / 2``, which is
    the case for every state used here (minimum-uncertainty Gaussians).
    """

    x0: float
    y0: float
    sx: float
    sy: float
    hbar_eff: float

    def __post_init__(self):
        if not (self.sx > 0 and self.sy > 0 and self.hbar_eff > 0):
            raise ValueError("widths and hbar_eff must be positive")

    @classmethod
    def symmetric(cls, x0: float, y0: float, hbar_eff: float) -> "GaussianState":
        s = math.sqrt(hbar_eff / 2)
        return cls(x0, y0, s, s, hbar_eff)

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x0, self.y0])

    @property
    def widths(self) -> np.ndarray:
        return np.array([self.sx, self.sy])

    @property
    def is_minimum_uncertainty(self) -> bool:
        return math.isclose(self.sx * self.sy, 0.5 * self.hbar_eff, rel_tol=1e-12)

    @property
    def norm(self) -> float:
        """``int rho dx dy`` (1 for minimum-uncertainty states)."""
        return 2.0 * self.sx * self.sy / self.hbar_eff

    def density(self, x, y):
        return gaussian_density(self, x, y)

    def purity(self) -> float:
        """``2 pi hbar int rho^2``, equal to ``hbar / (2 sx sy)``."""
        return self.hbar_eff / (2.0 * self.sx * self.sy)

    def sample(self, rng: np.random.Generator, n: int, shrink: float = 1.0) -> np.ndarray:
        """``n`` draws of ``(x, y)``; ``shrink`` scales both widths."""
        z = rng.standard_normal((n, 2))
        return self.center + shrink * self.widths * z

    def to_dict(self) -> dict:
        return {"x0": self.x0, "y0": self.y0, "sx": self.sx, "sy": self.sy}


@dataclass(frozen=True)
class ProductState:
    """Separable initial density ``rho1(Q, P) * rho2(q, p)``."""

    sys: GaussianState
    bath: GaussianState

    def __post_init__(self):
        if self.sys.hbar_eff != self.bath.hbar_eff:
            raise ValueError("system and bath states must share hbar_eff")

    @property
    def hbar_eff(self) -> float:
        return self.sys.hbar_eff

    @property
    def center(self) -> np.ndarray:
        return np.array([self.sys.x0, self.sys.y0, self.bath.x0, self.bath.y0])

    @property
    def widths(self) -> np.ndarray:
        return np.array([self.sys.sx, self.sys.sy, self.bath.sx, self.bath.sy])

    @property
    def is_symmetric(self) -> bool:
        w = self.widths
        return bool(np.allclose(w, w[0], rtol=1e-12)) and self.sys.is_minimum_uncertainty

    def density(self, z):
        z = np.asarray(z, dtype=float)
        return self.sys.density(z[..., 0], z[..., 1]) * self.bath.density(z[..., 2], z[..., 3])

    def log_density(self, z):
        z = np.asarray(z, dtype=float)
        u = (z - self.center) / self.widths
        return -0.5 * np.sum(u * u, axis=-1) - 2.0 * math.log(math.pi * self.hbar_eff)

    def sample(self, rng: np.random.Generator, n: int, shrink: float = 1.0) -> np.ndarray:
        z = rng.standard_normal((n, 4))
        return self.center + shrink * self.widths * z

    def swapped(self) -> "ProductState":
        return ProductState(self.bath, self.sys)


def gaussian_density(state: GaussianState, x, y):
    """Phase-space Gaussian ``1/(pi hbar) exp(-dx^2/(2 sx^2) - dy^2/(2 sy^2))``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    u = (x - state.x0) / state.sx
    v = (y - state.y0) / state.sy
    return np.exp(-0.5 * (u * u + v * v)) / (math.pi * state.hbar_eff)


def fourier_transform_F(state: GaussianState, Q1, Q2):
    """``F(Q1, Q2) = int rho1(Qbar, P) exp(i dQ P / hbar) dP`` in closed form."""
    Q1 = np.asarray(Q1, dtype=float)
    Q2 = np.asarray(Q2, dtype=float)
    h = state.hbar_eff
    qbar = 0.5 * (Q1 + Q2)
    dq = Q1 - Q2
    amp = math.sqrt(2 * math.pi) * state.sy / (math.pi * h)
    env = np.exp(-0.5 * ((qbar - state.x0) / state.sx) ** 2 - 0.5 * (state.sy * dq / h) ** 2)
    return amp * env * np.exp(1j * dq * state.y0 / h)


def abs_F_squared(state: GaussianState, qbar, dq):
    """``|F|^2`` as a function of ``(Qbar, dQ)``."""
    h = state.hbar_eff
    qbar = np.asarray(qbar, dtype=float)
    dq = np.asarray(dq, dtype=float)
    pref = 2.0 * state.sy**2 / (math.pi * h**2)
    return pref * np.exp(-(((qbar - state.x0) / state.sx) ** 2) - (state.sy * dq / h) ** 2)


def product_state(
    spec: SystemSpec,
    Q0: float,
    P0: float,
    q0: float,
    *,
    energy: float | None = None,
    p0: float | None = None,
    sigma_Q: float | None = None,
    sigma_P: float | None = None,
    sigma_q: float | None = None,
    sigma_p: float | None = None,
) -> ProductState:
    """Build a product state; widths default to ``sqrt(hbar/2)``.

    Exactly one of ``energy`` and ``p0`` must be given; from an energy the
    nonnegative root for ``p0`` is taken.
    """
    if (energy is None) == (p0 is None):
        raise ValueError("give exactly one of energy and p0")
    if p0 is None:
        p0 = solve_momentum_from_energy(spec, Q0, P0, q0, energy)
    h = spec.hbar_eff
    s = math.sqrt(h / 2)
    sys = GaussianState(Q0, P0, sigma_Q or s, sigma_P or s, h)
    bath = GaussianState(q0, p0, sigma_q or s, sigma_p or s, h)
    return ProductState(sys, bath)


def as_points(z: Sequence[float] | np.ndarray) -> np.ndarray:
    return np.atleast_2d(np.asarray(z, dtype=float))
