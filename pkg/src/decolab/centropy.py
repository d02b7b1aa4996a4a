"""Classical linear entropy ``S_c(t) = 1 - 2 pi hbar int rho_c(Q, P, t)^2``.

Three estimators:

* :func:`s_c_full_mc` -- exact backward-trajectory Monte Carlo.  Outer
  points ``z ~ rho0`` are run forward to ``t``; the inner integral over the
  bath coordinates ``(q', p')`` at the endpoint ``(Q(t), P(t))`` is
  importance sampled and each inner sample is mapped back to time zero.
* :func:`s_c_histogram` -- pair-count estimate of ``int rho^2`` from binned
  forward endpoints.
* :func:`s_c_stability` -- the linearized-backward-map approximation built
  from stability-matrix columns, for symmetric Gaussian states.

Random numbers come in fixed-size blocks, each with its own stream derived
from ``(seed, purpose, block index)``, so results do not depend on how the
blocks are scheduled.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import logsumexp

from .classical import _SCHEMES, IntegratorConfig, TrajectoryBlowUp, flip_momenta, flow, symplectic_inverse
from .model import ProductState, QuadQuad, SystemSpec, hamiltonian, potential

__all__ = [
    "McConfig",
    "HistogramGrid",
    "EntropyEstimate",
    "DegenerateProposal",
    "SupportOverflow",
    "s_c_full_mc",
    "s_c_full_mc_series",
    "s_c_histogram",
    "s_c_histogram_series",
    "histogram_entropy",
    "s_c_stability",
    "s_c_stability_series",
    "stability_log_kernel",
    "sample_rescaled",
    "block_rng",
    "energy_ceiling",
]

BLOCK = 512

# stream identifiers for block_rng
_OUTER, _INNER, _HIST, _STAB = 0, 1, 2, 3


class DegenerateProposal(RuntimeWarning):
    """The inner importance sampler has too few effective samples."""


class SupportOverflow(RuntimeWarning):
    """More than 0.1% of the ensemble fell outside the histogram grid."""


def block_rng(seed: int, stream: int, block: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream, block)))


def _blocks(n: int) -> list[tuple[int, int]]:
    return [(b, min(BLOCK, n - b * BLOCK)) for b in range((n + BLOCK - 1) // BLOCK)]


@dataclass(frozen=True)
class McConfig:
    n_outer: int = 20_000
    n_inner: int = 64
    kappa: float = 3.0
    seed: int = 0
    prior_fraction: float = 0.3
    local_fraction: float = 0.15
    linear_fraction: float = 0.4
    neighbors: int = 16
    control_variate: bool = True
    antithetic: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.n_outer < 1 or self.n_inner < 1:
            raise ValueError("n_outer and n_inner must be >= 1")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        fr = (self.prior_fraction, self.local_fraction, self.linear_fraction)
        if min(fr) < 0 or sum(fr) > 1 + 1e-12 or sum(fr) == 0:
            raise ValueError("prior, local and linear fractions must be >= 0 with a sum in (0, 1]")
        if self.neighbors < 1:
            raise ValueError("neighbors must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.antithetic and self.n_outer % 16:
            raise ValueError("antithetic sampling needs n_outer divisible by 16")


@dataclass
class EntropyEstimate:
    value: float
    std_error: float
    n_effective: float
    diagnostics: dict = field(default_factory=dict)

    def within(self, other: "EntropyEstimate", k: float = 2.0) -> bool:
        return abs(self.value - other.value) <= k * math.hypot(self.std_error, other.std_error)


# ---------------------------------------------------------------------------
# full backward-trajectory Monte Carlo


_SIGNS = np.array([[1 - 2 * ((g >> k) & 1) for k in range(4)] for g in range(16)], dtype=float)


def _base_count(cfg: McConfig) -> int:
    return cfg.n_outer // 16 if cfg.antithetic else cfg.n_outer


def _expand(base: np.ndarray, signs: np.ndarray) -> np.ndarray:
    """Repeat each base row under every sign pattern (rows grouped by base index)."""
    shape = (base.shape[0], signs.shape[0]) + base.shape[1:]
    out = base[:, None] * signs.reshape((1, signs.shape[0]) + (1,) * (base.ndim - 2) + (signs.shape[1],))
    return out.reshape((-1,) + shape[2:])


def _broad_fraction(cfg: McConfig) -> float:
    f = 1.0 - cfg.prior_fraction - cfg.local_fraction - cfg.linear_fraction
    return f if f > 1e-12 else 0.0


# mixture component codes
_PRIOR, _LOCAL, _BROAD, _LINEAR = 0, 1, 2, 3


def _inner_draws(cfg: McConfig):
    """Per outer sample: standard normals (n_inner, 2), mixture component
    codes and uniforms that pick a neighbor for the linear component."""
    m = _base_count(cfg)
    normals = np.empty((m, cfg.n_inner, 2))
    comp = np.empty((m, cfg.n_inner), dtype=np.int8)
    pick = np.empty((m, cfg.n_inner))
    edges = np.cumsum([cfg.prior_fraction, cfg.local_fraction, cfg.linear_fraction])
    if _broad_fraction(cfg) == 0:
        edges[-1] = np.inf
    codes = np.array([_PRIOR, _LOCAL, _LINEAR, _BROAD], dtype=np.int8)
    for b, n in _blocks(m):
        rng = block_rng(cfg.seed, _INNER, b)
        sl = slice(b * BLOCK, b * BLOCK + n)
        normals[sl] = rng.standard_normal((n, cfg.n_inner, 2))
        comp[sl] = codes[np.searchsorted(edges, rng.random((n, cfg.n_inner)), side="right")]
        pick[sl] = rng.random((n, cfg.n_inner))
    if cfg.antithetic:
        normals = _expand(normals, _SIGNS[:, 2:])
        comp = np.repeat(comp, 16, axis=0)
        pick = np.repeat(pick, 16, axis=0)
    return normals, comp, pick


def _outer_draws(state: ProductState, cfg: McConfig) -> np.ndarray:
    m = _base_count(cfg)
    u = np.empty((m, 4))
    for b, n in _blocks(m):
        u[b * BLOCK : b * BLOCK + n] = block_rng(cfg.seed, _OUTER, b).standard_normal((n, 4))
    if cfg.antithetic:
        u = _expand(u, _SIGNS)
    return state.center + state.widths * u


def _mean_with_control(y: np.ndarray, c: np.ndarray | None) -> tuple[float, float]:
    """Mean of ``y`` and its standard error, optionally adjusted by a zero-mean control ``c``."""
    n = y.size
    if n < 2:
        return float(y.mean()), float("nan")
    if c is None or n < 4:
        return float(np.sum(y) / n), float(np.std(y, ddof=1) / math.sqrt(n))
    cc = c - c.mean()
    var_c = float(np.sum(cc * cc))
    beta = float(np.sum(cc * (y - y.mean())) / var_c) if var_c > 0 else 0.0
    adj = y - beta * c
    return float(np.sum(adj) / n), float(np.std(adj, ddof=2) / math.sqrt(n))


def _log_gauss2(x, mean, chol_inv, logdet):
    u = np.einsum("ij,...j->...i", chol_inv, x - mean)
    return -0.5 * np.sum(u * u, axis=-1) - math.log(2 * math.pi) - 0.5 * logdet


def _bath_flow(spec: SystemSpec, qp: np.ndarray, t: float, icfg: IntegratorConfig, backward: bool = False):
    """Flow of the bath alone (coupling switched off) over time ``t``."""
    if t == 0:
        return qp.copy()
    free = SystemSpec(spec.hbar_eff, spec.beta, QuadQuad(0.0))
    z = np.zeros((qp.shape[0], 4))
    z[:, 2:] = qp
    if backward:
        z = flip_momenta(z)
    *_, (_, z, _) = flow(free, z, [t], icfg)
    if backward:
        z = flip_momenta(z)
    return z[:, 2:]


def _driven_transport(spec: SystemSpec, z0: np.ndarray, eta: np.ndarray, t: float, icfg: IntegratorConfig):
    """Carry ``eta[i]`` to time ``t`` with the bath driven by trajectory ``i``."""
    from . import _kernels

    out = np.array(eta, dtype=float, copy=True)
    if t == 0:
        return out
    n = max(1, int(math.ceil(t / icfg.dt - 1e-9)))
    z = np.array(z0, dtype=float, copy=True)
    weights = np.array(_SCHEMES[icfg.scheme])
    bad = _kernels.advance_driven(z, out, _kernels.term_table(spec), t / n, n, weights, icfg.blowup_bound)
    if bad:
        raise TrajectoryBlowUp(f"{bad} trajectories escaped before t={t:g}")
    return out


def _broad_component(spec, state, zt, t, cfg, icfg):
    pulled = _bath_flow(spec, zt[:, 2:], t, icfg, backward=True)
    loc_w = cfg.kappa * state.widths[2:]
    cov = np.diag(loc_w**2)
    if pulled.shape[0] > 1:
        cov = cov + np.cov(pulled.T)
    return pulled.mean(axis=0), np.linalg.cholesky(cov)


def energy_ceiling(spec: SystemSpec, state: ProductState, radius: float = 12.0, n: int = 257) -> float:
    """Upper bound of ``H`` over the box ``center +- radius * widths``.

    Outside that box ``rho0`` is below ``exp(-radius**2 / 2)`` of its peak.
    Energy is conserved, so a backward trajectory that starts above the
    bound ends outside the box and contributes nothing measurable.  The
    kinetic part is maximized exactly; the potential on an ``n x n`` grid,
    padded by a tenth of its range.
    """
    lo = state.center - radius * state.widths
    hi = state.center + radius * state.widths
    kin = 0.5 * (max(lo[1] ** 2, hi[1] ** 2) + max(lo[3] ** 2, hi[3] ** 2))
    Q, q = np.meshgrid(np.linspace(lo[0], hi[0], n), np.linspace(lo[2], hi[2], n), indexing="ij")
    V = potential(spec, Q, q)
    return float(kin + V.max() + 0.1 * (V.max() - V.min()))


def _minor_sum(A: np.ndarray) -> np.ndarray:
    """Gram determinant ``det(A^T A)`` of (..., m, 2) matrices as a sum of
    squared 2x2 minors (no cancellation between large products)."""
    m = A.shape[-2]
    out = np.zeros(A.shape[:-2])
    for i in range(m):
        for j in range(i + 1, m):
            out += (A[..., i, 0] * A[..., j, 1] - A[..., j, 0] * A[..., i, 1]) ** 2
    return out


@dataclass
class _Linear:
    """Per outer sample, the linearized flow around it: the image ``mu`` of
    the initial center, the system-marginal precision ``A_inv`` and the
    conditional bath precision ``Pbb`` with its Cholesky factor of the
    inverse.  ``nbr`` lists each sample's nearest neighbors in ``(Q, P)``."""

    mu: np.ndarray
    A_inv: np.ndarray
    log_det_A: np.ndarray
    Pbb: np.ndarray
    Pbs: np.ndarray
    S_chol: np.ndarray
    log_det_Pbb: np.ndarray
    nbr: np.ndarray


def _linear_components(state: ProductState, z0, zt, Mf, k: int) -> _Linear:
    w = state.widths
    mu = zt + np.einsum("nij,nj->ni", Mf, state.center - z0)
    R = Mf[:, :2, :] * w  # system rows of the forward map, in units of the widths
    A = R @ np.swapaxes(R, 1, 2)
    det_A = _minor_sum(np.swapaxes(R, 1, 2))
    A_inv = np.empty_like(A)
    A_inv[:, 0, 0], A_inv[:, 1, 1] = A[:, 1, 1], A[:, 0, 0]
    A_inv[:, 0, 1] = A_inv[:, 1, 0] = -A[:, 0, 1]
    A_inv /= det_A[:, None, None]

    B = symplectic_inverse(Mf) / w[None, :, None]
    P = np.swapaxes(B, 1, 2) @ B
    Pbb = P[:, 2:, 2:]
    det_P = _minor_sum(B[:, :, 2:])
    s11 = Pbb[:, 1, 1] / det_P
    L = np.zeros_like(Pbb)
    L[:, 0, 0] = np.sqrt(s11)
    L[:, 1, 0] = -Pbb[:, 1, 0] / det_P / L[:, 0, 0]
    L[:, 1, 1] = np.sqrt(1.0 / (det_P * s11))

    X = zt[:, :2]
    scale = np.maximum(X.std(axis=0), 1e-300)
    k = min(k, X.shape[0])
    _, nbr = cKDTree(X / scale).query(X / scale, k=k)
    nbr = np.asarray(nbr).reshape(X.shape[0], k)
    return _Linear(mu, A_inv, np.log(det_A), Pbb.copy(), P[:, 2:, :2].copy(), L, np.log(det_P), nbr)


def _flip_bath(eta: np.ndarray) -> np.ndarray:
    out = eta.copy()
    out[..., 1] *= -1
    return out


def _inner_weights(spec, state, z0, zt, t, normals, comp, pick, cfg, icfg, broad, ceiling, lin, rows):
    """Importance weights ``rho0(back(Q(t), P(t), q', p')) / proposal(q', p')``.

    The proposal is a four-part mixture.  Three parts draw a bath point
    ``eta`` at time zero: the bath prior, a local Gaussian around the
    sample's own initial bath point (widths ``kappa * (sigma_q, sigma_p)``)
    and a broad Gaussian fitted to the pulled-back ensemble.  Each ``eta``
    is carried to time ``t`` by the bath flow driven by that sample's own
    ``Q(s)``, which preserves area, so their density at ``(q', p')`` is the
    density of ``eta``.

    The linear part draws ``(q', p')`` at time ``t`` directly, from the
    bath conditional of the linearized flow around one of the sample's
    neighbors (chosen with probability proportional to how well the
    neighbor's linearized system marginal explains ``(Q(t), P(t))``).  It
    follows the thin, wound-up filaments that the time-zero parts miss.
    Its draws are carried back by the reversed driven flow to evaluate
    the other parts.
    """
    n_out, n_in = normals.shape[:2]
    bath0 = z0[:, 2:]
    loc_w = cfg.kappa * state.widths[2:]
    mean, L = broad
    Linv = np.linalg.inv(L)
    logdet = 2 * np.sum(np.log(np.diag(L)))
    sig = state.widths[2:]
    c = state.center[2:]
    use_lin = cfg.linear_fraction > 0

    candidates = (c + sig * normals, bath0[:, None, :] + loc_w * normals, mean + normals @ L.T)
    eta = np.choose(np.minimum(comp, _BROAD)[..., None], candidates)
    y = _driven_transport(spec, z0, eta, t, icfg)

    if use_lin:
        nbr = lin.nbr[rows]
        d = zt[:, None, :2] - lin.mu[nbr, :2]
        q = np.einsum("nka,nkab,nkb->nk", d, lin.A_inv[nbr], d)
        log_pi = -0.5 * q - 0.5 * lin.log_det_A[nbr]
        log_pi -= logsumexp(log_pi, axis=1, keepdims=True)
        Ls = lin.S_chol[nbr]
        cov = Ls @ np.swapaxes(Ls, -1, -2)
        cond = lin.mu[nbr, 2:] - np.einsum("nkab,nkbc,nkc->nka", cov, lin.Pbs[nbr], d)
        is_lin = comp == _LINEAR
        if is_lin.any():
            cum = np.cumsum(np.exp(log_pi), axis=1)
            k = np.minimum((pick[..., None] > cum[:, None, :]).sum(axis=-1), nbr.shape[1] - 1)
            i = np.broadcast_to(np.arange(n_out)[:, None], k.shape)
            draw = cond[i, k] + np.einsum("nmab,nmb->nma", lin.S_chol[nbr[i, k]], normals)
            y = np.where(is_lin[..., None], draw, y)
            if t > 0:
                back = _flip_bath(_driven_transport(spec, flip_momenta(zt), _flip_bath(y), t, icfg))
                eta = np.where(is_lin[..., None], back, eta)
            else:
                eta = np.where(is_lin[..., None], y, eta)

    fracs = (cfg.prior_fraction, cfg.local_fraction, _broad_fraction(cfg))
    terms = []
    if fracs[0] > 0:
        u = (eta - c) / sig
        terms.append(math.log(fracs[0]) - 0.5 * np.sum(u * u, axis=-1) - math.log(2 * math.pi) - np.sum(np.log(sig)))
    if fracs[1] > 0:
        u = (eta - bath0[:, None, :]) / loc_w
        terms.append(math.log(fracs[1]) - 0.5 * np.sum(u * u, axis=-1) - math.log(2 * math.pi) - np.sum(np.log(loc_w)))
    if fracs[2] > 0:
        terms.append(math.log(fracs[2]) + _log_gauss2(eta, mean, Linv, logdet))
    if use_lin:
        r = y[:, :, None, :] - cond[:, None, :, :]
        qy = np.einsum("nmka,nkab,nmkb->nmk", r, lin.Pbb[nbr], r)
        lg = logsumexp(log_pi[:, None, :] - 0.5 * qy + 0.5 * lin.log_det_Pbb[nbr][:, None, :], axis=2)
        terms.append(math.log(cfg.linear_fraction) + lg - math.log(2 * math.pi))
    log_prop = np.logaddexp.reduce(np.stack(terms), axis=0)

    ends = np.empty((n_out, n_in, 4))
    ends[..., 0] = zt[:, None, 0]
    ends[..., 1] = zt[:, None, 1]
    ends[..., 2:] = y
    ends = ends.reshape(-1, 4)
    log_rho = np.full(ends.shape[0], -np.inf)
    keep = hamiltonian(spec, ends) <= ceiling
    back = ends[keep]
    if t > 0 and back.shape[0]:
        *_, (_, back, _) = flow(spec, flip_momenta(back), [t], icfg)
        back = flip_momenta(back)
    log_rho[keep] = state.log_density(back)
    return np.exp(log_rho.reshape(n_out, n_in) - log_prop), int(ends.shape[0] - keep.sum())


def s_c_full_mc_series(
    spec: SystemSpec,
    state: ProductState,
    times: Sequence[float],
    cfg: McConfig = McConfig(),
    icfg: IntegratorConfig = IntegratorConfig(),
) -> list[EntropyEstimate]:
    """Backward-trajectory estimates of ``S_c`` at each of ``times``.

    The same outer points and inner normals are reused at every time
    (common random numbers), which makes the curve smooth in ``t``.  With
    ``cfg.control_variate`` the outer average is regression-adjusted with
    the exactly known time-zero integrand ``2 pi hbar rho1(Q, P)``.
    """
    times = [float(t) for t in times]
    z0 = _outer_draws(state, cfg)
    normals, comp, pick = _inner_draws(cfg)
    h = state.hbar_eff
    # exact time-zero per-sample purity, mean sys.purity() under rho0
    control = 2 * math.pi * h * state.sys.density(z0[:, 0], z0[:, 1]) - state.sys.purity()
    ceiling = energy_ceiling(spec, state)
    out: list[EntropyEstimate] = []
    for t, zt, Mf in flow(spec, z0, times, icfg, tangent=cfg.linear_fraction > 0):
        blocks = _blocks(cfg.n_outer)
        broad = _broad_component(spec, state, zt, t, cfg, icfg)
        lin = _linear_components(state, z0, zt, Mf, cfg.neighbors) if Mf is not None else None

        def work(item):
            b, n = item
            sl = slice(b * BLOCK, b * BLOCK + n)
            return _inner_weights(
                spec, state, z0[sl], zt[sl], t, normals[sl], comp[sl], pick[sl], cfg, icfg, broad, ceiling, lin, sl
            )

        if cfg.workers > 1:
            with ThreadPoolExecutor(cfg.workers) as ex:
                parts = list(ex.map(work, blocks))
        else:
            parts = [work(item) for item in blocks]
        w = np.concatenate([p[0] for p in parts], axis=0)
        screened = sum(p[1] for p in parts)
        purity = 2 * math.pi * h * w.mean(axis=1)
        ctrl = control
        if cfg.antithetic:
            # reflected copies are dependent; the group mean is the unit
            purity = purity.reshape(-1, 16).mean(axis=1)
            ctrl = control.reshape(-1, 16).mean(axis=1)
        value, se = _mean_with_control(purity, ctrl if cfg.control_variate else None)
        value = 1.0 - value
        flat = w.ravel()
        s2 = float(np.sum(flat * flat))
        ess = float(np.sum(flat) ** 2 / s2) if s2 > 0 else 0.0
        if ess < 10:
            warnings.warn(f"inner proposal degenerate at t={t:g}: ESS={ess:.1f}", DegenerateProposal)
        out.append(EntropyEstimate(value, se, ess, {"t": t, "ess": ess, "screened": screened}))
    return out


def s_c_full_mc(
    spec: SystemSpec,
    state: ProductState,
    t: float,
    cfg: McConfig = McConfig(),
    icfg: IntegratorConfig = IntegratorConfig(),
) -> EntropyEstimate:
    """Single-time version of :func:`s_c_full_mc_series`."""
    if t < 0:
        raise ValueError("t must be >= 0")
    return s_c_full_mc_series(spec, state, [t], cfg, icfg)[0]


# ---------------------------------------------------------------------------
# histogram oracle


@dataclass(frozen=True)
class HistogramGrid:
    """Regular bins over ``Q_range x P_range``.

    Counting is sparse (only occupied bins are stored), so very fine grids
    cost nothing beyond sorting the bin indices.
    """

    bins_Q: int
    bins_P: int
    Q_range: tuple[float, float]
    P_range: tuple[float, float]

    def __post_init__(self):
        if self.bins_Q < 1 or self.bins_P < 1:
            raise ValueError("bin counts must be >= 1")
        if not (self.Q_range[1] > self.Q_range[0] and self.P_range[1] > self.P_range[0]):
            raise ValueError("histogram ranges must be increasing")

    @property
    def widths(self) -> tuple[float, float]:
        return (
            (self.Q_range[1] - self.Q_range[0]) / self.bins_Q,
            (self.P_range[1] - self.P_range[0]) / self.bins_P,
        )

    def coarsened(self) -> "HistogramGrid":
        """Same ranges, double bin width."""
        return HistogramGrid(max(1, self.bins_Q // 2), max(1, self.bins_P // 2), self.Q_range, self.P_range)

    @classmethod
    def around(cls, state: ProductState, half_width: tuple[float, float], resolution: float = 10.0) -> "HistogramGrid":
        """Grid centered on the origin with bins ``sigma / resolution`` wide."""
        bQ = state.sys.sx / resolution
        bP = state.sys.sy / resolution
        nQ = int(math.ceil(2 * half_width[0] / bQ))
        nP = int(math.ceil(2 * half_width[1] / bP))
        return cls(nQ, nP, (-nQ * bQ / 2, nQ * bQ / 2), (-nP * bP / 2, nP * bP / 2))


def _pair_count(QP: np.ndarray, grid: HistogramGrid) -> tuple[float, float]:
    """Unbiased ``int rho^2`` estimate and the fraction of points outside."""
    wQ, wP = grid.widths
    iQ = np.floor((QP[:, 0] - grid.Q_range[0]) / wQ).astype(np.int64)
    iP = np.floor((QP[:, 1] - grid.P_range[0]) / wP).astype(np.int64)
    inside = (iQ >= 0) & (iQ < grid.bins_Q) & (iP >= 0) & (iP < grid.bins_P)
    n = QP.shape[0]
    key = iQ[inside] * grid.bins_P + iP[inside]
    _, counts = np.unique(key, return_counts=True)
    counts = counts.astype(float)
    pairs = float(np.sum(counts * (counts - 1)))
    return pairs / (n * (n - 1) * wQ * wP), 1.0 - inside.sum() / n


def histogram_entropy(QP: np.ndarray, grid: HistogramGrid, hbar: float, n_batches: int = 20) -> EntropyEstimate:
    """``1 - 2 pi hbar int rho^2`` from samples ``QP`` (N, 2) of a reduced density.

    ``int rho^2`` is the same-bin pair count ``sum n_i (n_i - 1)`` over
    ``N (N - 1) dQ dP``, which removes the ``1/(N dQ dP)`` self-pair bias of
    squaring the normalized histogram.  The standard error comes from the
    spread over ``n_batches`` disjoint batches.
    """
    QP = np.asarray(QP, dtype=float)
    n = QP.shape[0]
    if n < 2:
        raise ValueError("need at least two samples")
    rho2, overflow = _pair_count(QP, grid)
    value = 1.0 - 2 * math.pi * hbar * rho2
    se = float("nan")
    if n_batches > 1 and n >= 4 * n_batches:
        parts = np.array_split(np.arange(n), n_batches)
        vals = [_pair_count(QP[idx], grid)[0] for idx in parts]
        se = 2 * math.pi * hbar * float(np.std(vals, ddof=1)) / math.sqrt(n_batches)
    coarse, _ = _pair_count(QP, grid.coarsened())
    diag = {"overflow_fraction": overflow, "double_bin_value": 1.0 - 2 * math.pi * hbar * coarse}
    if overflow > 1e-3:
        warnings.warn(f"{overflow:.2%} of points fell outside the histogram grid", SupportOverflow)
    return EntropyEstimate(value, se, float(n), diag)


def s_c_histogram_series(
    spec: SystemSpec,
    state: ProductState,
    times: Sequence[float],
    grid: HistogramGrid,
    n_traj: int = 200_000,
    seed: int = 0,
    icfg: IntegratorConfig = IntegratorConfig(),
) -> list[EntropyEstimate]:
    z0 = np.empty((n_traj, 4))
    for b, n in _blocks(n_traj):
        z0[b * BLOCK : b * BLOCK + n] = state.sample(block_rng(seed, _HIST, b), n)
    e0 = hamiltonian(spec, z0)
    out = []
    for t, zt, _ in flow(spec, z0, [float(t) for t in times], icfg):
        est = histogram_entropy(zt[:, :2], grid, state.hbar_eff)
        est.diagnostics["t"] = t
        est.diagnostics["energy_drift"] = float(np.max(np.abs(hamiltonian(spec, zt) - e0)))
        out.append(est)
    return out


def s_c_histogram(
    spec: SystemSpec,
    state: ProductState,
    t: float,
    grid: HistogramGrid,
    n_traj: int = 200_000,
    seed: int = 0,
    icfg: IntegratorConfig = IntegratorConfig(),
) -> EntropyEstimate:
    """Histogram estimate of ``S_c(t)`` from ``n_traj`` forward trajectories."""
    return s_c_histogram_series(spec, state, [t], grid, n_traj, seed, icfg)[0]


# ---------------------------------------------------------------------------
# stability-matrix approximation


def sample_rescaled(state: ProductState, n: int, seed: int) -> np.ndarray:
    """Draws from ``4 pi^2 hbar^2 rho1^2 rho2^2`` (widths shrunk by sqrt 2)."""
    z = np.empty((n, 4))
    for b, m in _blocks(n):
        z[b * BLOCK : b * BLOCK + m] = state.sample(block_rng(seed, _STAB, b), m, shrink=1 / math.sqrt(2))
    return z


def stability_log_kernel(Mb: np.ndarray, d: np.ndarray, sigma: float) -> np.ndarray:
    """``log`` of ``exp[(U^2 X + V^2 Y - 2 U V Z) / (2 s^2 D)] / sqrt(D)``.

    ``a``, ``b`` are the ``q`` and ``p`` columns of the backward matrix;
    ``X = |a|^2``, ``Y = |b|^2``, ``Z = a.b``, ``V = d.a``, ``U = d.b`` and
    ``D = XY - Z^2``.  ``D`` is formed from the 2x2 minors (Lagrange
    identity) so it never cancels, and the exponent is the squared length of
    the projection of ``d`` onto ``span(a, b)`` over ``2 s^2``.  Rows with
    ``D <= 0`` return ``nan``.
    """
    a = Mb[..., :, 2]
    b = Mb[..., :, 3]
    X = np.sum(a * a, axis=-1)
    Y = np.sum(b * b, axis=-1)
    Z = np.sum(a * b, axis=-1)
    V = np.sum(d * a, axis=-1)
    U = np.sum(d * b, axis=-1)
    D = np.zeros_like(X)
    for i in range(4):
        for j in range(i + 1, 4):
            D = D + (a[..., i] * b[..., j] - a[..., j] * b[..., i]) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        expo = (U * U * X + V * V * Y - 2 * U * V * Z) / (2 * sigma**2 * D)
        out = expo - 0.5 * np.log(D)
    return np.where(D > 0, out, np.nan)


def _stability_estimate(logk: np.ndarray, t: float, weight_log: np.ndarray | None, prefactor: float) -> EntropyEstimate:
    ok = np.isfinite(logk)
    dropped = int(np.sum(~ok))
    if dropped > 1e-3 * logk.size:
        warnings.warn(f"{dropped} ill-conditioned samples dropped at t={t:g}", RuntimeWarning)
    lk = logk[ok] if weight_log is None else (logk + weight_log)[ok]
    m = float(np.max(lk))
    scaled = np.exp(lk - m)
    mean = float(np.sum(scaled) / scaled.size)
    sd = float(np.std(scaled, ddof=1)) if scaled.size > 1 else float("nan")
    value = 1.0 - prefactor * math.exp(m) * mean
    se = prefactor * math.exp(m) * sd / math.sqrt(scaled.size)
    ess = float(np.sum(scaled) ** 2 / np.sum(scaled * scaled))
    return EntropyEstimate(value, se, ess, {"t": t, "dropped": dropped})


def s_c_stability_series(
    spec: SystemSpec,
    state: ProductState,
    times: Sequence[float],
    n_samples: int = 20_000,
    seed: int = 0,
    icfg: IntegratorConfig = IntegratorConfig(),
    sampling: str = "rescaled",
) -> list[EntropyEstimate]:
    """Stability-matrix approximation of ``S_c`` at each of ``times``.

    ``sampling="rescaled"`` averages the kernel over the rescaled density
    (widths ``sigma / sqrt 2``) with prefactor 1/2.  ``sampling="initial"``
    draws from the initial density instead and folds the ratio of the two
    densities into the kernel, ``1 - 2 <kernel exp(-|d|^2 / 2 sigma^2)>``,
    which has bounded summands.
    """
    if not state.is_symmetric:
        raise ValueError("the stability-matrix approximation needs a symmetric Gaussian state")
    sigma = float(state.widths[0])
    if sampling == "rescaled":
        z0 = sample_rescaled(state, n_samples, seed)
        prefactor = 0.5
    elif sampling == "initial":
        z0 = np.empty((n_samples, 4))
        for b, m in _blocks(n_samples):
            z0[b * BLOCK : b * BLOCK + m] = state.sample(block_rng(seed, _STAB, b), m)
        prefactor = 2.0
    else:
        raise ValueError(f"unknown sampling {sampling!r}")
    d = z0 - state.center
    wlog = None if sampling == "rescaled" else -np.sum(d * d, axis=1) / (2 * sigma**2)
    out = []
    for t, _, Mf in flow(spec, z0, [float(t) for t in times], icfg, tangent=True):
        Mb = symplectic_inverse(Mf)
        logk = stability_log_kernel(Mb, d, sigma)
        out.append(_stability_estimate(logk, t, wlog, prefactor))
    return out


def s_c_stability(
    spec: SystemSpec,
    state: ProductState,
    t: float,
    n_samples: int = 20_000,
    seed: int = 0,
    icfg: IntegratorConfig = IntegratorConfig(),
    sampling: str = "rescaled",
) -> EntropyEstimate:
    """Single-time version of :func:`s_c_stability_series`."""
    return s_c_stability_series(spec, state, [t], n_samples, seed, icfg, sampling)[0]
