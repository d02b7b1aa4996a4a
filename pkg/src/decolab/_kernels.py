"""Compiled trajectory kernels.

Potentials are flattened to a table of product terms ``c * u(Q) * v(q)``
where each factor is a power ``x**n`` or ``sin(k x)**2``.  The kernels
mirror ``classical._advance`` (the NumPy reference) step for step.
"""

from __future__ import annotations

import numba as nb
import numpy as np

from .model import (
    Polynomial,
    PolynomialCoupling,
    QuadQuad,
    SeparableProduct,
    Sin2,
    SystemSpec,
)

POWER = 0
SIN2 = 1


def _pieces(fn):
    if isinstance(fn, Polynomial):
        return [(c, POWER, float(k)) for k, c in enumerate(fn.coeffs) if c != 0.0]
    if isinstance(fn, Sin2):
        return [(fn.amplitude, SIN2, float(fn.k))]
    raise TypeError(f"unsupported function {fn!r}")


def term_table(spec: SystemSpec) -> np.ndarray:
    """Rows ``(coef, kind_Q, par_Q, kind_q, par_q)`` summing to the potential."""
    rows = []
    if spec.beta:
        rows.append((0.25 * spec.beta, POWER, 4.0, POWER, 0.0))
        rows.append((0.25 * spec.beta, POWER, 0.0, POWER, 4.0))
    c = spec.coupling
    if isinstance(c, QuadQuad):
        rows.append((0.5 * c.alpha, POWER, 2.0, POWER, 2.0))
    elif isinstance(c, PolynomialCoupling):
        rows.extend((cf, POWER, float(m), POWER, float(n)) for cf, m, n in c.terms)
    elif isinstance(c, SeparableProduct):
        for a, ka, pa in _pieces(c.f):
            for b, kb, pb in _pieces(c.g):
                rows.append((a * b, ka, pa, kb, pb))
    else:
        raise TypeError(f"unsupported coupling {c!r}")
    if not rows:
        rows.append((0.0, POWER, 0.0, POWER, 0.0))
    return np.array(rows, dtype=np.float64)


@nb.njit(cache=True, inline="always")
def _factor(kind, par, x):
    if kind == 0:
        n = int(par)
        if n == 0:
            return 1.0, 0.0, 0.0
        if n == 1:
            return x, 1.0, 0.0
        xn2 = 1.0
        for _ in range(n - 2):
            xn2 *= x
        return xn2 * x * x, n * xn2 * x, n * (n - 1) * xn2
    s = np.sin(par * x)
    c = np.cos(par * x)
    return s * s, 2.0 * par * s * c, 2.0 * par * par * (c * c - s * s)


@nb.njit(cache=True)
def _grad_hess(terms, Q, q):
    VQ = 0.0
    Vq = 0.0
    VQQ = 0.0
    Vqq = 0.0
    VQq = 0.0
    for r in range(terms.shape[0]):
        c = terms[r, 0]
        u, u1, u2 = _factor(int(terms[r, 1]), terms[r, 2], Q)
        v, v1, v2 = _factor(int(terms[r, 3]), terms[r, 4], q)
        VQ += c * u1 * v
        Vq += c * u * v1
        VQQ += c * u2 * v
        Vqq += c * u * v2
        VQq += c * u1 * v1
    return VQ, Vq, VQQ, Vqq, VQq


@nb.njit(cache=True)
def advance_points(z, terms, h, nsteps, weights, bound):
    """In-place flow of ``z`` (N, 4); returns the number of escaped rows."""
    bad = 0
    for i in range(z.shape[0]):
        Q = z[i, 0]
        P = z[i, 1]
        q = z[i, 2]
        p = z[i, 3]
        for _ in range(nsteps):
            for w in weights:
                a = 0.5 * w * h
                Q += a * P
                q += a * p
                VQ, Vq, _a, _b, _c = _grad_hess(terms, Q, q)
                P -= w * h * VQ
                p -= w * h * Vq
                Q += a * P
                q += a * p
        z[i, 0] = Q
        z[i, 1] = P
        z[i, 2] = q
        z[i, 3] = p
        if not (abs(Q) <= bound and abs(P) <= bound and abs(q) <= bound and abs(p) <= bound):
            bad += 1
    return bad


@nb.njit(cache=True)
def advance_tangent(z, M, terms, h, nsteps, weights, bound):
    """In-place flow of ``z`` (N, 4) and tangents ``M`` (N, 4, 4)."""
    bad = 0
    for i in range(z.shape[0]):
        Q = z[i, 0]
        P = z[i, 1]
        q = z[i, 2]
        p = z[i, 3]
        m = M[i]
        for _ in range(nsteps):
            for w in weights:
                a = 0.5 * w * h
                Q += a * P
                q += a * p
                for j in range(4):
                    m[0, j] += a * m[1, j]
                    m[2, j] += a * m[3, j]
                VQ, Vq, VQQ, Vqq, VQq = _grad_hess(terms, Q, q)
                wh = w * h
                P -= wh * VQ
                p -= wh * Vq
                for j in range(4):
                    rQ = m[0, j]
                    rq = m[2, j]
                    m[1, j] -= wh * (VQQ * rQ + VQq * rq)
                    m[3, j] -= wh * (VQq * rQ + Vqq * rq)
                Q += a * P
                q += a * p
                for j in range(4):
                    m[0, j] += a * m[1, j]
                    m[2, j] += a * m[3, j]
        z[i, 0] = Q
        z[i, 1] = P
        z[i, 2] = q
        z[i, 3] = p
        if not (abs(Q) <= bound and abs(P) <= bound and abs(q) <= bound and abs(p) <= bound):
            bad += 1
    return bad


@nb.njit(cache=True)
def advance_driven(z, eta, terms, h, nsteps, weights, bound):
    """Flow ``z`` (N, 4) and carry bath points ``eta`` (N, M, 2) along.

    Each ``eta[i, j]`` obeys the one-dimensional bath dynamics with the
    system coordinate replaced by that of trajectory ``i`` at the same
    substep.  Every substep is a drift or a shear, so the map on each bath
    point preserves area.  Returns the number of escaped trajectories.
    """
    bad = 0
    m = eta.shape[1]
    for i in range(z.shape[0]):
        Q = z[i, 0]
        P = z[i, 1]
        q = z[i, 2]
        p = z[i, 3]
        e = eta[i]
        for _ in range(nsteps):
            for w in weights:
                a = 0.5 * w * h
                wh = w * h
                Q += a * P
                q += a * p
                for j in range(m):
                    e[j, 0] += a * e[j, 1]
                VQ, Vq, _a, _b, _c = _grad_hess(terms, Q, q)
                for j in range(m):
                    _d, fq, _e, _f, _g = _grad_hess(terms, Q, e[j, 0])
                    e[j, 1] -= wh * fq
                P -= wh * VQ
                p -= wh * Vq
                Q += a * P
                q += a * p
                for j in range(m):
                    e[j, 0] += a * e[j, 1]
        z[i, 0] = Q
        z[i, 1] = P
        z[i, 2] = q
        z[i, 3] = p
        if not (abs(Q) <= bound and abs(P) <= bound and abs(q) <= bound and abs(p) <= bound):
            bad += 1
    return bad
