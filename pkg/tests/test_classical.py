import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from decolab.classical import (
    J,
    IntegratorConfig,
    TrajectoryBlowUp,
    backward_map,
    equations_of_motion,
    flow,
    propagate,
    step,
    symplectic_defect,
    symplectic_inverse,
)
from decolab.model import (
    Monomial,
    PolynomialCoupling,
    QuadQuad,
    SeparableProduct,
    Sin2,
    SystemSpec,
    hamiltonian,
    product_state,
)

pytestmark = pytest.mark.classical

H, B = 0.005, 0.01
FINE = IntegratorConfig(dt=1e-3)
SPECS = {
    "chaotic": SystemSpec(H, B, QuadQuad(1.0)),
    "integrable": SystemSpec(H, B, QuadQuad(0.03)),
    "sin2": SystemSpec(H, B, SeparableProduct(Sin2(10.0), Monomial(2))),
    "qsin2": SystemSpec(H, B, SeparableProduct(Monomial(2), Sin2(1.0))),
    "poly": SystemSpec(H, B, PolynomialCoupling(((0.5, 2, 2), (1.0, 4, 2)))),
}
HARMONIC = SystemSpec(H, 0.0, PolynomialCoupling(((0.5, 2, 0), (0.5, 0, 2))))


def _ensemble(spec, n=32, seed=0):
    centers = (0.5, 0.5, 0.0) if isinstance(spec.coupling, SeparableProduct) else (0.4, 0.5, 0.6)
    state = product_state(spec, *centers, energy=0.24)
    return state.sample(np.random.default_rng(seed), n)


def test_equations_of_motion_examples():
    spec = SPECS["chaotic"]
    assert np.allclose(equations_of_motion(spec, [0, 0, 0, 0]), 0)
    assert np.allclose(equations_of_motion(spec, [0, 1, 0, 0]), [1, 0, 0, 0])
    assert np.allclose(equations_of_motion(spec, [1, 0, 1, 0]), [0, -1.01, 0, -1.01])


def test_zero_step_is_identity():
    z = np.array([0.4, 0.5, 0.6, 0.4])
    z1, M1 = step(SPECS["chaotic"], z, np.eye(4), 0.0)
    assert np.array_equal(z1, z) and np.array_equal(M1, np.eye(4))


def test_harmonic_tangent_map_is_rotation():
    t = 1.3
    z, M = propagate(HARMONIC, [0.3, 0.1, 0.2, -0.1], t, FINE)
    R = np.array([[math.cos(t), math.sin(t)], [-math.sin(t), math.cos(t)]])
    assert np.allclose(M[:2, :2], R, atol=1e-10)
    assert np.allclose(z[:2], R @ [0.3, 0.1], atol=1e-10)


def test_propagate_at_zero():
    z0 = np.array([0.4, 0.5, 0.6, 0.4])
    z, M = propagate(SPECS["chaotic"], z0, 0.0)
    assert np.array_equal(z, z0) and np.array_equal(M, np.eye(4))
    zb, Mb = backward_map(SPECS["chaotic"], z0, 0.0)
    assert np.array_equal(zb, z0) and np.array_equal(Mb, np.eye(4))


def test_negative_time_rejected():
    with pytest.raises(ValueError):
        propagate(SPECS["chaotic"], [0, 0, 0, 0], -1.0)
    with pytest.raises(ValueError):
        backward_map(SPECS["chaotic"], [0, 0, 0, 0], -1.0)
    with pytest.raises(ValueError):
        IntegratorConfig(dt=0.0)


@pytest.mark.parametrize("name", list(SPECS))
def test_energy_conservation(name):
    spec = SPECS[name]
    z0 = _ensemble(spec)
    t = 5.0
    z, _ = propagate(spec, z0, t, FINE, tangent=False)
    drift = np.max(np.abs(hamiltonian(spec, z) - hamiltonian(spec, z0)))
    assert drift <= 1e-8 * t


def test_symplecticity_integrable_to_t10():
    spec = SPECS["integrable"]
    _, M = propagate(spec, _ensemble(spec, 16), 10.0, FINE)
    assert np.max(np.abs(symplectic_defect(M))) <= 1e-6
    assert np.allclose(np.linalg.det(M), 1.0, atol=1e-6)


def test_symplecticity_chaotic_to_t5():
    spec = SPECS["chaotic"]
    _, M = propagate(spec, _ensemble(spec, 16), 5.0, FINE)
    assert np.max(np.abs(symplectic_defect(M))) <= 1e-8 * max(1.0, np.max(np.abs(M)) ** 2)
    assert np.max(np.abs(symplectic_defect(M))) <= 1e-6


def test_symplectic_inverse_identity():
    spec = SPECS["chaotic"]
    _, M = propagate(spec, _ensemble(spec, 8), 3.0, FINE)
    assert np.allclose(symplectic_inverse(M) @ M, np.eye(4), atol=1e-9)
    assert np.allclose(symplectic_inverse(M), -J @ np.swapaxes(M, -1, -2) @ J)


def test_time_reversal_integrable():
    spec = SPECS["integrable"]
    z0 = _ensemble(spec)
    z, Mf = propagate(spec, z0, 10.0, FINE)
    back, Mb = backward_map(spec, z, 10.0, FINE)
    assert np.max(np.abs(back - z0)) <= 1e-8
    assert np.allclose(Mb @ Mf, np.eye(4), atol=1e-6)


def test_backward_matrix_is_symplectic_inverse_chaotic():
    spec = SPECS["chaotic"]
    z0 = _ensemble(spec, 8)
    t = 5.0
    z, Mf = propagate(spec, z0, t, FINE)
    back, Mb = backward_map(spec, z, t, FINE)
    assert np.max(np.abs(back - z0)) <= 1e-8
    assert np.max(np.abs(Mb @ Mf - np.eye(4))) <= 1e-6
    assert np.allclose(Mb, symplectic_inverse(Mf), atol=1e-6 * np.max(np.abs(Mf)))


@pytest.mark.parametrize("name", ["chaotic", "sin2", "poly"])
def test_tangent_map_matches_finite_differences(name):
    spec = SPECS[name]
    z0 = _ensemble(spec, 4, seed=7)
    eps = 1e-6
    _, M = propagate(spec, z0, 1.0, FINE)
    for j in range(4):
        e = np.zeros(4)
        e[j] = eps
        zp, _ = propagate(spec, z0 + e, 1.0, FINE, tangent=False)
        zm, _ = propagate(spec, z0 - e, 1.0, FINE, tangent=False)
        col = (zp - zm) / (2 * eps)
        err = np.abs(col - M[:, :, j]) / np.maximum(np.abs(M[:, :, j]), 1e-2)
        assert np.max(err) <= 1e-3


def test_lyapunov_contrast():
    """log||M|| grows clearly faster for the chaotic coupling."""
    times = np.arange(0, 21, 4.0)
    slopes = {}
    for name in ("chaotic", "integrable"):
        spec = SPECS[name]
        z0 = _ensemble(spec, 64, seed=3)
        logs = [
            np.mean(np.log(np.linalg.norm(M, axis=(1, 2))))
            for _, _, M in flow(spec, z0, times, IntegratorConfig(dt=0.01), tangent=True)
        ]
        slopes[name] = np.polyfit(times, logs, 1)[0]
    assert slopes["chaotic"] > 0.1
    assert slopes["integrable"] < 0.5 * slopes["chaotic"]


def test_numba_and_numpy_backends_agree():
    spec = SPECS["poly"]
    z0 = _ensemble(spec, 8)
    a, Ma = propagate(spec, z0, 2.0, IntegratorConfig(dt=0.01), backend="numba")
    b, Mb = propagate(spec, z0, 2.0, IntegratorConfig(dt=0.01), backend="numpy")
    assert np.allclose(a, b, atol=1e-12) and np.allclose(Ma, Mb, atol=1e-10)


def test_fourth_order_convergence():
    spec = SPECS["chaotic"]
    z0 = _ensemble(spec, 4)
    ref, _ = propagate(spec, z0, 2.0, IntegratorConfig(dt=0.0025), tangent=False)
    e1 = np.max(np.abs(propagate(spec, z0, 2.0, IntegratorConfig(dt=0.04), tangent=False)[0] - ref))
    e2 = np.max(np.abs(propagate(spec, z0, 2.0, IntegratorConfig(dt=0.02), tangent=False)[0] - ref))
    assert 10 < e1 / e2 < 24


def test_flow_rejects_decreasing_times():
    with pytest.raises(ValueError):
        list(flow(SPECS["chaotic"], np.zeros((1, 4)), [1.0, 0.5]))


def test_blowup_detected():
    with pytest.raises(TrajectoryBlowUp):
        propagate(SPECS["chaotic"], [0.0, 100.0, 0.0, 0.0], 1.0, IntegratorConfig(dt=0.01, blowup_bound=10.0))


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1))
def test_single_step_symplectic_anywhere(Q, P, q, p):
    _, M = step(SPECS["poly"], np.array([Q, P, q, p]), np.eye(4), 0.01)
    assert np.max(np.abs(M.T @ J @ M - J)) < 1e-12
