import math

import numpy as np
import pytest

from decolab.model import QuadQuad, SystemSpec, hamiltonian, product_state
from decolab.quantum import (
    GridSpec,
    GridTooCoarse,
    QuantumDiagnosticError,
    SplitOperator,
    WaveGrid,
    check_grid,
    edge_probability,
    evolve_and_record,
    initial_wavefunction,
    purity_of,
    reduced_density,
    s_q,
    split_operator_step,
)

pytestmark = pytest.mark.quantum

H, B = 0.005, 0.01
SMALL = GridSpec(256, 256, 3.8, 3.8, 0.004)


def _chaotic():
    spec = SystemSpec(H, B, QuadQuad(1.0))
    return spec, product_state(spec, 0.4, 0.5, 0.6, energy=0.24)


def _moments(x, w):
    m = np.sum(x * w)
    return m, np.sum((x - m) ** 2 * w)


def test_grid_spec_validation():
    with pytest.raises(ValueError):
        GridSpec(300, 256)
    with pytest.raises(ValueError):
        GridSpec(256, 256, -1.0)
    with pytest.raises(ValueError):
        GridSpec(dt=0)


def test_check_grid_flags_coarse_and_nyquist():
    _, state = _chaotic()
    assert check_grid(state, GridSpec(512, 512, 3.8, 3.8)) == []
    problems = check_grid(state, GridSpec(64, 64, 3.8, 3.8))
    assert any("points per position width" in p for p in problems)
    assert any("Nyquist" in p for p in problems)
    with pytest.raises(GridTooCoarse):
        initial_wavefunction(state, GridSpec(64, 64, 3.8, 3.8))


def test_initial_wavefunction_moments():
    _, state = _chaotic()
    wave = initial_wavefunction(state, GridSpec(512, 512, 3.8, 3.8))
    Q, q = wave.grid.axes()
    assert wave.norm() == pytest.approx(1.0, abs=1e-12)
    pQ = np.sum(np.abs(wave.psi) ** 2, axis=1) * wave.grid.dq * wave.grid.dQ
    m, v = _moments(Q, pQ)
    assert abs(m - state.sys.x0) < 1e-6 and abs(v - state.sys.sx**2) < 1e-6
    # momentum marginal from the Fourier transform along Q
    phi = np.fft.fft(wave.psi, axis=0)
    pk = np.sum(np.abs(phi) ** 2, axis=1)
    pk /= pk.sum()
    P = H * 2 * np.pi * np.fft.fftfreq(wave.grid.N_Q, wave.grid.dQ)
    mP, vP = _moments(P, pk)
    assert abs(mP - state.sys.y0) < 1e-6
    assert abs(vP - (H / (2 * state.sys.sx)) ** 2) < 1e-6
    assert abs(s_q(wave)) < 1e-6


def test_free_particle_spreading():
    spec = SystemSpec(H, 0.0, QuadQuad(0.0))
    state = product_state(spec, -0.5, 0.5, 0.0, p0=-0.3)
    grid = GridSpec(512, 512, 2.0, 2.0, 0.01)
    wave = initial_wavefunction(state, grid)
    t = 1.0
    psi = SplitOperator(spec, grid).advance(wave.psi, 100)
    w = np.abs(psi) ** 2 * wave.cell
    Q, q = grid.axes()
    mQ, vQ = _moments(Q, w.sum(axis=1))
    mq, vq = _moments(q, w.sum(axis=0))
    s, sp = state.sys.sx, state.sys.sy
    assert abs(mQ - (-0.5 + 0.5 * t)) < 1e-6 and abs(mq - (-0.3 * t)) < 1e-6
    assert abs(vQ - (s**2 + (sp * t) ** 2)) < 1e-6 and abs(vq - (s**2 + (sp * t) ** 2)) < 1e-6


def test_norm_preserved_over_many_steps():
    spec, state = _chaotic()
    grid = GridSpec(128, 128, 3.8, 3.8, 1e-3)
    wave = initial_wavefunction(state, grid, check=False)
    psi = SplitOperator(spec, grid).advance(wave.psi, 10_000)
    assert abs(np.sum(np.abs(psi) ** 2) * wave.cell - 1.0) < 1e-10


def test_step_at_zero_dt_is_identity():
    spec, state = _chaotic()
    wave = initial_wavefunction(state, SMALL, check=False)
    assert np.array_equal(split_operator_step(spec, wave, 0.0).psi, wave.psi)


def test_single_step_matches_propagator():
    spec, state = _chaotic()
    wave = initial_wavefunction(state, SMALL, check=False)
    a = split_operator_step(spec, wave, 0.004).psi
    b = SplitOperator(spec, SMALL).advance(wave.psi, 1)
    assert np.allclose(a, b, atol=1e-13)


def test_energy_expectation_matches_classical_and_is_conserved():
    spec, state = _chaotic()
    grid = GridSpec(256, 256, 2.4, 2.4, 5e-4)
    wave = initial_wavefunction(state, grid)
    prop = SplitOperator(spec, grid)
    e0 = prop.energy(wave.psi)
    # <H> of the Gaussian equals the phase-space average of H
    z = state.sample(np.random.default_rng(0), 400_000)
    assert e0 == pytest.approx(float(np.mean(hamiltonian(spec, z))), rel=2e-3)
    psi = prop.advance(wave.psi, 1000)
    assert abs(prop.energy(psi) - e0) / e0 < 1e-6


def test_reduced_density_of_product_state():
    _, state = _chaotic()
    wave = initial_wavefunction(state, SMALL, check=False)
    rho = reduced_density(wave)
    assert rho.trace() == pytest.approx(1.0, abs=1e-8)
    assert rho.hermiticity_defect() < 1e-10
    ev = rho.eigenvalues()
    assert ev.min() > -1e-8
    assert ev.max() == pytest.approx(1.0, abs=1e-8) and np.sort(ev)[-2] < 1e-8
    assert rho.purity() == pytest.approx(1.0, abs=1e-10)
    assert purity_of(wave) == pytest.approx(rho.purity(), abs=1e-12)


@pytest.mark.parametrize("k", [2, 3, 5])
def test_equal_mixture_of_orthogonal_states(k):
    grid = GridSpec(64, 64, 4.0, 4.0)
    Q, q = grid.axes()
    gQ = [np.exp(-((Q - c) ** 2)) for c in (-2.0, 0.0, 2.0, 1.0, -1.0)]
    # orthonormal functions of Q and of q via QR
    A, _ = np.linalg.qr(np.stack(gQ[:k], axis=1))
    Bq, _ = np.linalg.qr(np.stack([np.cos((j + 1) * q) for j in range(k)], axis=1))
    psi = sum(np.outer(A[:, j], Bq[:, j]) for j in range(k)) / math.sqrt(k)
    psi /= math.sqrt(np.sum(np.abs(psi) ** 2) * grid.dQ * grid.dq)
    wave = WaveGrid(psi, grid, H)
    assert s_q(reduced_density(wave)) == pytest.approx(1 - 1 / k, abs=1e-12)
    assert s_q(wave) == pytest.approx(1 - 1 / k, abs=1e-12)


def test_subsystem_swap_symmetry():
    spec, state = _chaotic()
    times = [0.0, 0.5, 1.0]
    a = evolve_and_record(spec, state, SMALL, times, check=False)
    b = evolve_and_record(spec.swapped(), state.swapped(), SMALL.swapped(), times, check=False)
    for ra, rb in zip(a, b):
        assert abs(ra.S_q - rb.S_q) < 1e-8


def test_evolve_and_record_basic():
    spec, state = _chaotic()
    recs = evolve_and_record(spec, state, SMALL, [0.0, 0.1, 0.25], check=False)
    assert [r.t for r in recs] == [0.0, 0.1, 0.25]
    assert abs(recs[0].S_q) < 1e-6
    assert all(abs(r.norm - 1) < 1e-10 for r in recs)
    with pytest.raises(ValueError):
        evolve_and_record(spec, state, SMALL, [0.2, 0.1], check=False)


def test_edge_diagnostic_aborts_with_partial_records():
    spec = SystemSpec(H, 0.0, QuadQuad(0.0))
    state = product_state(spec, 0.0, 1.0, 0.0, p0=0.0)
    grid = GridSpec(512, 256, 1.0, 1.0, 0.005)
    with pytest.raises(QuantumDiagnosticError) as err:
        evolve_and_record(spec, state, grid, [0.0, 0.2, 1.0])
    assert [r.t for r in err.value.records][:2] == [0.0, 0.2]


def test_edge_probability_of_centered_packet_is_tiny():
    _, state = _chaotic()
    wave = initial_wavefunction(state, SMALL, check=False)
    assert edge_probability(wave) < 1e-12


@pytest.mark.slow
def test_grid_and_dt_convergence():
    spec, state = _chaotic()
    times = [0.0, 0.5, 1.0, 1.5]
    base = GridSpec(256, 256, 2.4, 2.4, 0.004)
    ref = [r.S_q for r in evolve_and_record(spec, state, base, times)]
    big = base.doubled()
    fine_dt = GridSpec(256, 256, 2.4, 2.4, 0.002)
    for g in (big, fine_dt):
        other = [r.S_q for r in evolve_and_record(spec, state, g, times)]
        assert np.max(np.abs(np.subtract(other, ref))) < 1e-3
