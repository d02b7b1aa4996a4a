"""Phase-space trajectories and their 4x4 stability matrices.

Points are arrays whose last axis is ``(Q, P, q, p)``; stability matrices
are ``(..., 4, 4)`` with the same row/column order.  The integrator is the
fourth-order Yoshida composition of position Verlet.  The tangent map is
propagated as the exact derivative of the discrete map, so it is
symplectic to rounding and matches finite differences of the numerical
flow itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .model import SystemSpec, force_and_hessian, hamiltonian

__all__ = [
    "IntegratorConfig",
    "TrajectoryBlowUp",
    "J",
    "equations_of_motion",
    "step",
    "propagate",
    "backward_map",
    "flow",
    "symplectic_inverse",
    "symplectic_defect",
    "flip_momenta",
]

J = np.array(
    [
        [0.0, 1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0, 0.0],
    ]
)

_W1 = 1.0 / (2.0 - 2.0 ** (1.0 / 3.0))
_W0 = -(2.0 ** (1.0 / 3.0)) * _W1
_SCHEMES = {
    "verlet2": (1.0,),
    "yoshida4": (_W1, _W0, _W1),
}


class TrajectoryBlowUp(RuntimeError):
    """A coordinate left the configured bound; the integrator has failed."""


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = 1e-3
    scheme: str = "yoshida4"
    blowup_bound: float = 1e6
    check_every: int = 256

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.scheme not in _SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {sorted(_SCHEMES)}")
        if not self.blowup_bound > 0:
            raise ValueError("blowup_bound must be positive")

    def halved(self) -> "IntegratorConfig":
        return IntegratorConfig(self.dt / 2, self.scheme, self.blowup_bound, self.check_every)


def equations_of_motion(spec: SystemSpec, point) -> np.ndarray:
    """Phase velocity ``(P, -dV/dQ, p, -dV/dq)``."""
    z = np.asarray(point, dtype=float)
    VQ, Vq, *_ = force_and_hessian(spec, z[..., 0], z[..., 2])
    return np.stack([z[..., 1], -VQ + 0.0 * z[..., 1], z[..., 3], -Vq + 0.0 * z[..., 3]], axis=-1)


def flip_momenta(z: np.ndarray) -> np.ndarray:
    out = np.array(z, dtype=float, copy=True)
    out[..., 1] *= -1.0
    out[..., 3] *= -1.0
    return out


_R = np.diag([1.0, -1.0, 1.0, -1.0])


def symplectic_inverse(M: np.ndarray) -> np.ndarray:
    """``M^{-1} = -J M^T J``, exact for symplectic ``M``."""
    return -J @ np.swapaxes(M, -1, -2) @ J


def symplectic_defect(M: np.ndarray) -> np.ndarray:
    """``max |M^T J M - J|`` per matrix."""
    d = np.swapaxes(M, -1, -2) @ J @ M - J
    return np.max(np.abs(d), axis=(-2, -1))


# ---------------------------------------------------------------------------
# in-place substeps on (N, 4) points and (N, 4, 4) tangents


def _drift(z, M, h):
    z[:, 0] += h * z[:, 1]
    z[:, 2] += h * z[:, 3]
    if M is not None:
        M[:, 0, :] += h * M[:, 1, :]
        M[:, 2, :] += h * M[:, 3, :]


def _kick(spec, z, M, h):
    VQ, Vq, VQQ, Vqq, VQq = force_and_hessian(spec, z[:, 0], z[:, 2])
    if M is not None:
        rQ = M[:, 0, :]
        rq = M[:, 2, :]
        M[:, 1, :] -= h * (VQQ[:, None] * rQ + VQq[:, None] * rq)
        M[:, 3, :] -= h * (VQq[:, None] * rQ + Vqq[:, None] * rq)
    z[:, 1] -= h * VQ
    z[:, 3] -= h * Vq


def _advance(spec, z, M, h, nsteps, weights):
    """Apply ``nsteps`` composed position-Verlet steps of size ``h``."""
    for _ in range(nsteps):
        for w in weights:
            _drift(z, M, 0.5 * w * h)
            _kick(spec, z, M, w * h)
            _drift(z, M, 0.5 * w * h)


def _prepare(point, M):
    z = np.array(point, dtype=float, copy=True)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    if z.shape[-1] != 4:
        raise ValueError("phase points must have 4 components (Q, P, q, p)")
    z = z.reshape(-1, 4)
    if M is not None:
        M = np.array(M, dtype=float, copy=True)
        M = np.broadcast_to(M, (z.shape[0], 4, 4)).copy()
    return z, M, single


def _check_bound(z, bound):
    if not np.all(np.isfinite(z)) or np.max(np.abs(z)) > bound:
        bad = np.flatnonzero(~np.all(np.abs(z) <= bound, axis=1))
        raise TrajectoryBlowUp(
            f"{bad.size} trajectories left |coordinate| <= {bound:g} "
            f"(first index {bad[0] if bad.size else '?'})"
        )


def step(spec: SystemSpec, point, M=None, dt: float = 1e-3, scheme: str = "yoshida4"):
    """One integrator step for ``point`` (and tangent ``M`` if given).

    Returns ``(point', M')``; ``M'`` is ``None`` when ``M`` is ``None``.
    Works for a single point of shape ``(4,)`` or a batch ``(N, 4)``.
    """
    z, Mb, single = _prepare(point, M)
    if dt != 0.0:
        _advance(spec, z, Mb, dt, 1, _SCHEMES[scheme])
    if single:
        return z[0], (None if Mb is None else Mb[0])
    return z, Mb


def _nsteps(t: float, dt: float) -> int:
    return max(1, int(math.ceil(abs(t) / dt - 1e-9))) if t != 0 else 0


def flow(
    spec: SystemSpec,
    point,
    times: Sequence[float],
    cfg: IntegratorConfig = IntegratorConfig(),
    tangent: bool = False,
    M0=None,
    backend: str = "numba",
) -> Iterator[tuple[float, np.ndarray, np.ndarray | None]]:
    """Yield ``(t, z(t), M(t))`` at each of the nondecreasing ``times``.

    Each interval between consecutive output times is split into the
    smallest number of equal steps not exceeding ``cfg.dt``.  ``M(t)`` is
    the forward tangent map ``dz(t)/dz(0)`` (right-multiplied by ``M0``
    if given).  ``backend="numpy"`` runs the pure NumPy reference path.
    """
    z, M, _ = _prepare(point, None)
    if tangent:
        M = np.broadcast_to(np.eye(4) if M0 is None else np.asarray(M0, float), (z.shape[0], 4, 4)).copy()
    weights = np.array(_SCHEMES[cfg.scheme])
    if backend == "numba":
        from . import _kernels

        terms = _kernels.term_table(spec)
    elif backend != "numpy":
        raise ValueError(f"unknown backend {backend!r}")
    t_now = 0.0
    for t in times:
        if t < t_now - 1e-12:
            raise ValueError("output times must be nondecreasing and start at >= 0")
        span = t - t_now
        n = _nsteps(span, cfg.dt)
        if n and backend == "numba":
            if M is None:
                bad = _kernels.advance_points(z, terms, span / n, n, weights, cfg.blowup_bound)
            else:
                bad = _kernels.advance_tangent(z, M, terms, span / n, n, weights, cfg.blowup_bound)
            if bad:
                raise TrajectoryBlowUp(f"{bad} trajectories left |coordinate| <= {cfg.blowup_bound:g} by t={t:g}")
        elif n:
            done = 0
            while done < n:
                chunk = min(cfg.check_every, n - done)
                _advance(spec, z, M, span / n, chunk, weights)
                _check_bound(z, cfg.blowup_bound)
                done += chunk
        t_now = t
        yield t, z.copy(), (None if M is None else M.copy())


def propagate(
    spec: SystemSpec,
    point,
    t: float,
    cfg: IntegratorConfig = IntegratorConfig(),
    tangent: bool = True,
    backend: str = "numba",
):
    """Forward flow to time ``t``: returns ``(z(t), M_forward(t))``."""
    if t < 0:
        raise ValueError("propagate requires t >= 0; use backward_map for reversed time")
    single = np.asarray(point).ndim == 1
    *_, (_, z, M) = flow(spec, point, [t], cfg, tangent=tangent, backend=backend)
    if single:
        return z[0], (None if M is None else M[0])
    return z, M


def backward_map(
    spec: SystemSpec,
    endpoint,
    t: float,
    cfg: IntegratorConfig = IntegratorConfig(),
    tangent: bool = True,
    backend: str = "numba",
):
    """Point at time zero of the trajectory passing through ``endpoint`` at ``t``.

    Integrates the time-reversed flow (momenta flipped, run forward, flipped
    back).  The returned matrix is ``d(initial)/d(final)``.
    """
    if t < 0:
        raise ValueError("backward_map requires t >= 0")
    z, M = propagate(spec, flip_momenta(endpoint), t, cfg, tangent=tangent, backend=backend)
    z = flip_momenta(z)
    if M is not None:
        M = _R @ M @ _R
    return z, M


def energy_drift(spec: SystemSpec, z0: np.ndarray, z: np.ndarray) -> float:
    """Largest ``|H(z) - H(z0)|`` over a batch."""
    return float(np.max(np.abs(hamiltonian(spec, z) - hamiltonian(spec, z0))))
