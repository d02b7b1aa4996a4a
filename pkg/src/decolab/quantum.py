"""Split-operator propagation of the two-mode wavefunction and ``S_q``.

The wavefunction lives on a periodic ``N_Q x N_q`` position grid; the
kinetic propagator is applied in momentum space with FFTs on both axes
(Strang splitting, potential half steps on either side).  The quantum
linear entropy follows from the partial trace over the bath coordinate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from .model import ProductState, SystemSpec, potential

__all__ = [
    "GridSpec",
    "WaveGrid",
    "ReducedDensity",
    "GridTooCoarse",
    "QuantumDiagnosticError",
    "QuantumRecord",
    "initial_wavefunction",
    "split_operator_step",
    "SplitOperator",
    "reduced_density",
    "s_q",
    "purity_of",
    "evolve_and_record",
    "check_grid",
]


class GridTooCoarse(ValueError):
    """The grid cannot represent the initial state or the scenario momenta."""


class QuantumDiagnosticError(RuntimeError):
    """Norm or boundary diagnostics failed during propagation."""

    def __init__(self, message: str, records: list | None = None):
        super().__init__(message)
        self.records = records or []


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class GridSpec:
    N_Q: int = 512
    N_q: int = 512
    L_Q: float = 3.8
    L_q: float = 3.8
    dt: float = 5e-4

    def __post_init__(self):
        for n in (self.N_Q, self.N_q):
            if not _is_pow2(n):
                raise ValueError(f"grid sizes must be powers of two, got {n}")
        if not (self.L_Q > 0 and self.L_q > 0):
            raise ValueError("grid half-extents must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def dQ(self) -> float:
        return 2 * self.L_Q / self.N_Q

    @property
    def dq(self) -> float:
        return 2 * self.L_q / self.N_q

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        Q = -self.L_Q + self.dQ * np.arange(self.N_Q)
        q = -self.L_q + self.dq * np.arange(self.N_q)
        return Q, q

    def wavenumbers(self) -> tuple[np.ndarray, np.ndarray]:
        kQ = 2 * np.pi * np.fft.fftfreq(self.N_Q, self.dQ)
        kq = 2 * np.pi * np.fft.fftfreq(self.N_q, self.dq)
        return kQ, kq

    def momentum_limits(self, hbar: float) -> tuple[float, float]:
        """Largest representable ``|P|`` and ``|p|`` (Nyquist)."""
        return math.pi * hbar / self.dQ, math.pi * hbar / self.dq

    def doubled(self) -> "GridSpec":
        return GridSpec(2 * self.N_Q, 2 * self.N_q, 2 * self.L_Q, 2 * self.L_q, self.dt)

    def swapped(self) -> "GridSpec":
        return GridSpec(self.N_q, self.N_Q, self.L_q, self.L_Q, self.dt)


@dataclass
class WaveGrid:
    psi: np.ndarray
    grid: GridSpec
    hbar_eff: float

    @property
    def cell(self) -> float:
        return self.grid.dQ * self.grid.dq

    def norm(self) -> float:
        return float(np.sum(np.abs(self.psi) ** 2) * self.cell)

    def copy(self) -> "WaveGrid":
        return WaveGrid(self.psi.copy(), self.grid, self.hbar_eff)


@dataclass
class ReducedDensity:
    """``rho(Q_i, Q_i')`` with quadrature weight ``dQ``."""

    matrix: np.ndarray
    dQ: float

    def trace(self) -> float:
        return float(np.real(np.trace(self.matrix)) * self.dQ)

    def purity(self) -> float:
        return float(np.sum(np.abs(self.matrix) ** 2) * self.dQ**2)

    def hermiticity_defect(self) -> float:
        return float(np.max(np.abs(self.matrix - self.matrix.conj().T)))

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(0.5 * (self.matrix + self.matrix.conj().T)) * self.dQ


def check_grid(state: ProductState, grid: GridSpec, energy_max: float | None = None) -> list[str]:
    """Return human-readable reasons the grid is inadequate (empty if fine).

    Requirements: at least 2 grid points per position width, the initial
    packet within the domain (6 widths from the edge), and the momentum
    band of the packet (and of ``sqrt(2 energy_max)`` if given) inside the
    Nyquist limit.
    """
    h = state.hbar_eff
    problems = []
    PQmax, Pqmax = grid.momentum_limits(h)
    for name, g, L, d, pmax in (
        ("Q", state.sys, grid.L_Q, grid.dQ, PQmax),
        ("q", state.bath, grid.L_q, grid.dq, Pqmax),
    ):
        if g.sx / d < 2.0:
            problems.append(f"{name}: {g.sx / d:.2f} points per position width (< 2)")
        if abs(g.x0) + 6 * g.sx > L:
            problems.append(f"{name}: initial packet extends past the domain half-width {L}")
        need = abs(g.y0) + 6 * g.sy
        if energy_max is not None:
            need = max(need, math.sqrt(2 * energy_max))
        if need > pmax:
            problems.append(f"{name}: momentum {need:.3f} exceeds the Nyquist limit {pmax:.3f}")
    return problems


def initial_wavefunction(state: ProductState, grid: GridSpec, *, check: bool = True) -> WaveGrid:
    """Minimum-uncertainty Gaussian product whose Wigner function is ``state``."""
    if check:
        problems = check_grid(state, grid)
        if problems:
            raise GridTooCoarse("; ".join(problems))
    h = state.hbar_eff
    Q, q = grid.axes()
    s, b = state.sys, state.bath
    phiQ = np.exp(-((Q - s.x0) ** 2) / (4 * s.sx**2) + 1j * s.y0 * (Q - s.x0) / h)
    phiq = np.exp(-((q - b.x0) ** 2) / (4 * b.sx**2) + 1j * b.y0 * (q - b.x0) / h)
    phiQ /= math.sqrt(np.sum(np.abs(phiQ) ** 2) * grid.dQ)
    phiq /= math.sqrt(np.sum(np.abs(phiq) ** 2) * grid.dq)
    return WaveGrid(np.outer(phiQ, phiq), grid, h)


class SplitOperator:
    """Precomputed Strang-splitting propagator for one system and grid."""

    def __init__(self, spec: SystemSpec, grid: GridSpec, dt: float | None = None):
        self.spec = spec
        self.grid = grid
        self.dt = grid.dt if dt is None else dt
        h = spec.hbar_eff
        Q, q = grid.axes()
        self.V = potential(spec, Q[:, None], q[None, :])
        kQ, kq = grid.wavenumbers()
        self.T = 0.5 * h**2 * (kQ[:, None] ** 2 + kq[None, :] ** 2)
        self._set_phases()

    def _set_phases(self):
        h = self.spec.hbar_eff
        self.half_v = np.exp(-0.5j * self.dt * self.V / h)
        self.full_v = self.half_v * self.half_v
        self.kin = np.exp(-1j * self.dt * self.T / h)

    def _kinetic(self, psi):
        phi = sfft.fft2(psi, overwrite_x=True)
        phi *= self.kin
        return sfft.ifft2(phi, overwrite_x=True)

    def advance(self, psi: np.ndarray, nsteps: int) -> np.ndarray:
        """``nsteps`` Strang steps; adjacent potential half steps are fused."""
        if nsteps <= 0:
            return psi
        psi = psi * self.half_v
        for i in range(nsteps):
            psi = self._kinetic(psi)
            psi *= self.full_v if i < nsteps - 1 else self.half_v
        return psi

    def energy(self, psi: np.ndarray) -> float:
        cell = self.grid.dQ * self.grid.dq
        pot = float(np.sum(np.abs(psi) ** 2 * self.V) * cell)
        phi = sfft.fft2(psi)
        kin = float(np.sum(np.abs(phi) ** 2 * self.T) / np.sum(np.abs(phi) ** 2))
        return pot + kin * float(np.sum(np.abs(psi) ** 2) * cell)


def split_operator_step(spec: SystemSpec, wave: WaveGrid, dt: float) -> WaveGrid:
    """One Strang step ``exp(-iV dt/2h) exp(-iT dt/h) exp(-iV dt/2h)``."""
    if dt == 0:
        return wave.copy()
    prop = SplitOperator(spec, wave.grid, dt)
    return WaveGrid(prop.advance(wave.psi.copy(), 1), wave.grid, wave.hbar_eff)


def reduced_density(wave: WaveGrid) -> ReducedDensity:
    """Partial trace over the bath coordinate ``q``."""
    A = wave.psi
    rho = (A @ A.conj().T) * wave.grid.dq
    return ReducedDensity(rho, wave.grid.dQ)


def purity_of(wave: WaveGrid) -> float:
    """``Tr rho^2`` without forming the larger Gram matrix."""
    A = wave.psi
    G = A.conj().T @ A if A.shape[1] <= A.shape[0] else A @ A.conj().T
    return float(np.sum(np.abs(G) ** 2) * (wave.grid.dQ * wave.grid.dq) ** 2)


def s_q(rho: ReducedDensity | WaveGrid) -> float:
    """Quantum linear entropy ``1 - Tr rho^2``."""
    if isinstance(rho, WaveGrid):
        return 1.0 - purity_of(rho)
    return 1.0 - rho.purity()


def edge_probability(wave: WaveGrid, fraction: float = 0.05) -> float:
    """Probability within ``fraction`` of the domain width from any edge."""
    nQ = max(1, int(round(fraction * wave.grid.N_Q)))
    nq = max(1, int(round(fraction * wave.grid.N_q)))
    dens = np.abs(wave.psi) ** 2
    inner = dens[nQ:-nQ, nq:-nq].sum()
    return float((dens.sum() - inner) * wave.cell)


@dataclass
class QuantumRecord:
    t: float
    S_q: float
    norm: float
    energy: float
    edge_probability: float
    marginals: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)


def evolve_and_record(
    spec: SystemSpec,
    state: ProductState,
    grid: GridSpec,
    times,
    *,
    edge_tol: float = 1e-8,
    norm_tol: float = 1e-10,
    keep_marginals: bool = False,
    check: bool = True,
    progress=None,
) -> list[QuantumRecord]:
    """Propagate from ``state`` and record ``S_q`` at the increasing ``times``.

    Intervals between output times are split into equal steps no larger
    than ``grid.dt``.  Raises :class:`QuantumDiagnosticError` (with the
    records collected so far) when the norm drifts by more than
    ``norm_tol`` per 1000 steps or probability reaches the domain edge.
    """
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        raise ValueError("no output times")
    if np.any(np.diff(times) <= 0) or times[0] < 0:
        raise ValueError("times must be strictly increasing and nonnegative")
    wave = initial_wavefunction(state, grid, check=check)
    prop = SplitOperator(spec, grid)
    psi = wave.psi
    records: list[QuantumRecord] = []
    t_now, steps_done = 0.0, 0
    for t in times:
        span = t - t_now
        n = int(math.ceil(span / grid.dt - 1e-9)) if span > 0 else 0
        if n:
            if not math.isclose(prop.dt, span / n, rel_tol=1e-13):
                prop.dt = span / n
                prop._set_phases()
            psi = prop.advance(psi, n)
            steps_done += n
        t_now = t
        cur = WaveGrid(psi, grid, spec.hbar_eff)
        norm = cur.norm()
        rec = QuantumRecord(
            t=float(t),
            S_q=s_q(cur),
            norm=norm,
            energy=prop.energy(psi),
            edge_probability=edge_probability(cur),
        )
        if keep_marginals:
            dens = np.abs(psi) ** 2
            rec.marginals = (dens.sum(axis=1) * grid.dq, dens.sum(axis=0) * grid.dQ)
        records.append(rec)
        if progress is not None:
            progress(rec)
        allowed = norm_tol * max(1.0, steps_done / 1000)
        if abs(norm - 1.0) > allowed:
            raise QuantumDiagnosticError(f"norm drift {norm - 1:.3e} at t={t:g}", records)
        if rec.edge_probability > edge_tol:
            raise QuantumDiagnosticError(
                f"probability {rec.edge_probability:.2e} near the grid edge at t={t:g}", records
            )
    return records
