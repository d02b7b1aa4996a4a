import math
import warnings

import numpy as np
import pytest

from decolab.centropy import (
    DegenerateProposal,
    EntropyEstimate,
    HistogramGrid,
    McConfig,
    SupportOverflow,
    histogram_entropy,
    s_c_full_mc,
    s_c_full_mc_series,
    s_c_histogram,
    s_c_histogram_series,
    s_c_stability,
    s_c_stability_series,
    energy_ceiling,
    sample_rescaled,
    stability_log_kernel,
)
from decolab.centropy import _driven_transport, _flip_bath
from decolab.classical import IntegratorConfig, flip_momenta, flow
from decolab.model import Monomial, PolynomialCoupling, QuadQuad, SeparableProduct, Sin2, SystemSpec, hamiltonian, product_state

pytestmark = pytest.mark.classical

H, B = 0.005, 0.01
SIG = math.sqrt(H / 2)
ICFG = IntegratorConfig(dt=0.01)


def _within(est: EntropyEstimate, target: float, k: float = 2.0) -> bool:
    return abs(est.value - target) <= k * est.std_error


@pytest.mark.parametrize(
    "kw",
    [
        {"n_outer": 0},
        {"n_inner": 0},
        {"kappa": 0.0},
        {"prior_fraction": -0.1},
        {"prior_fraction": 0.8, "local_fraction": 0.4},
        {"prior_fraction": 0.0, "local_fraction": 0.0, "linear_fraction": 0.0},
        {"linear_fraction": 0.7},
        {"neighbors": 0},
        {"workers": 0},
        {"antithetic": True, "n_outer": 100},
    ],
)
def test_mc_config_rejects(kw):
    with pytest.raises(ValueError):
        McConfig(**kw)


def test_all_estimators_vanish_at_t0(chaotic, state_chaotic):
    mc = s_c_full_mc(chaotic, state_chaotic, 0.0, McConfig(2000, 16), ICFG)
    assert _within(mc, 0.0)
    grid = HistogramGrid(400, 400, (0.4 - 6 * SIG, 0.4 + 6 * SIG), (0.5 - 6 * SIG, 0.5 + 6 * SIG))
    hist = s_c_histogram(chaotic, state_chaotic, 0.0, grid, 100_000)
    assert abs(hist.value) <= 0.02 and _within(hist, 0.0)
    for sampling in ("rescaled", "initial"):
        stab = s_c_stability(chaotic, state_chaotic, 0.0, 20_000, 0, ICFG, sampling)
        assert _within(stab, 0.0)


def test_stability_kernel_at_identity():
    rng = np.random.default_rng(1)
    d = rng.normal(0, SIG, (100, 4))
    M = np.broadcast_to(np.eye(4), (100, 4, 4))
    expected = (d[:, 2] ** 2 + d[:, 3] ** 2) / (2 * SIG**2)
    assert np.allclose(stability_log_kernel(M, d, SIG), expected, rtol=1e-14, atol=1e-15)


def test_stability_kernel_average_is_two_at_identity():
    """At M = I the rescaled-density average of the kernel is exactly 2."""
    from scipy import integrate

    s2 = 0.5 * SIG**2  # variance of the rescaled density
    # kernel exp(u^2 / 2 sigma^2) times the rescaled Gaussian, exponents combined
    f = lambda u: math.exp(u * u / (2 * SIG**2) - u * u / (2 * s2)) / math.sqrt(2 * math.pi * s2)
    one_dim, _ = integrate.quad(f, -12 * SIG, 12 * SIG, epsabs=0, epsrel=1e-13)
    assert one_dim**2 == pytest.approx(2.0, rel=1e-12)


def test_stability_kernel_survives_large_matrices():
    """Exponentially stretched matrices stay finite in log space."""
    a = np.diag([1e60, 1e-60, 1e40, 1e-40])
    logk = stability_log_kernel(a[None], np.full((1, 4), 0.01), SIG)
    assert np.isfinite(logk).all()


def test_rescaled_sampling_widths(state_chaotic):
    z = sample_rescaled(state_chaotic, 100_000, seed=5)
    sd = z.std(axis=0, ddof=1)
    target = state_chaotic.widths / math.sqrt(2)
    assert np.all(np.abs(sd - target) < 3 * target / math.sqrt(2 * z.shape[0]))


def test_stability_rejects_squeezed_state():
    spec = SystemSpec(H, B, SeparableProduct(Sin2(10.0), Monomial(2)))
    s = math.sqrt(H / 2)
    state = product_state(spec, 0.5, 0.5, 0.0, energy=0.24, sigma_Q=25 * s, sigma_P=s / 25)
    with pytest.raises(ValueError):
        s_c_stability(spec, state, 1.0, 100)
    with pytest.raises(ValueError):
        s_c_stability_series(SystemSpec(H, B, QuadQuad(1.0)), product_state(
            SystemSpec(H, B, QuadQuad(1.0)), 0.4, 0.5, 0.6, energy=0.24), [0.0], 100, sampling="other")


def test_histogram_of_uniform_density():
    rng = np.random.default_rng(0)
    A = 0.4 * 0.3
    QP = np.column_stack([rng.uniform(0, 0.4, 400_000), rng.uniform(0, 0.3, 400_000)])
    grid = HistogramGrid(40, 30, (0.0, 0.4), (0.0, 0.3))
    est = histogram_entropy(QP, grid, H)
    assert abs(est.value - (1 - 2 * math.pi * H / A)) < 3 * est.std_error + 1e-4
    assert est.diagnostics["overflow_fraction"] == 0.0


def test_histogram_pair_count_is_unbiased():
    """Small samples: the pair count has no 1/N self-pair bias."""
    grid = HistogramGrid(4, 4, (0.0, 1.0), (0.0, 1.0))
    vals = []
    for seed in range(400):
        rng = np.random.default_rng(seed)
        vals.append(histogram_entropy(rng.uniform(0, 1, (50, 2)), grid, 0.1, n_batches=1).value)
    assert np.mean(vals) == pytest.approx(1 - 2 * math.pi * 0.1, abs=3 * np.std(vals) / 20)


def test_histogram_overflow_warns():
    grid = HistogramGrid(10, 10, (0.0, 1.0), (0.0, 1.0))
    QP = np.random.default_rng(0).uniform(-1, 1, (1000, 2))
    with pytest.warns(SupportOverflow):
        est = histogram_entropy(QP, grid, H)
    assert est.diagnostics["overflow_fraction"] > 0.5


def test_histogram_grid_around(state_chaotic):
    g = HistogramGrid.around(state_chaotic, (4.0, 1.5), 10.0)
    assert g.widths[0] == pytest.approx(SIG / 10) and g.widths[1] == pytest.approx(SIG / 10)
    assert g.Q_range[0] <= -4.0 and g.Q_range[1] >= 4.0
    assert g.coarsened().widths[0] == pytest.approx(2 * g.widths[0])


def test_seed_determinism(chaotic, state_chaotic):
    cfg = McConfig(600, 8, seed=11)
    a = s_c_full_mc_series(chaotic, state_chaotic, [0.0, 1.0], cfg, ICFG)
    b = s_c_full_mc_series(chaotic, state_chaotic, [0.0, 1.0], cfg, ICFG)
    assert [e.value for e in a] == [e.value for e in b]
    c = s_c_full_mc_series(chaotic, state_chaotic, [0.0, 1.0], McConfig(600, 8, seed=11, workers=3), ICFG)
    assert [e.value for e in a] == [e.value for e in c]
    d = s_c_full_mc_series(chaotic, state_chaotic, [0.0, 1.0], McConfig(600, 8, seed=12), ICFG)
    assert [e.value for e in a] != [e.value for e in d]
    grid = HistogramGrid.around(state_chaotic, (4.0, 1.5))
    h1 = s_c_histogram(chaotic, state_chaotic, 1.0, grid, 5000, seed=3, icfg=ICFG)
    h2 = s_c_histogram(chaotic, state_chaotic, 1.0, grid, 5000, seed=3, icfg=ICFG)
    assert h1.value == h2.value
    s1 = s_c_stability(chaotic, state_chaotic, 1.0, 2000, 4, ICFG)
    s2 = s_c_stability(chaotic, state_chaotic, 1.0, 2000, 4, ICFG)
    assert s1.value == s2.value


def test_series_matches_single_time(chaotic, state_chaotic):
    cfg = McConfig(512, 8, seed=2)
    series = s_c_full_mc_series(chaotic, state_chaotic, [0.0, 0.5, 1.0], cfg, ICFG)
    single = s_c_full_mc(chaotic, state_chaotic, 1.0, cfg, ICFG)
    assert series[-1].value == pytest.approx(single.value, abs=1e-12)
    with pytest.raises(ValueError):
        s_c_full_mc(chaotic, state_chaotic, -1.0, cfg, ICFG)


def test_degenerate_proposal_warns(chaotic, state_chaotic):
    with pytest.warns(DegenerateProposal):
        s_c_full_mc(chaotic, state_chaotic, 1.0, McConfig(2, 2), ICFG)


@pytest.mark.slow
def test_mc_agrees_with_histogram_chaotic(chaotic, state_chaotic):
    times = [1.0, 2.0, 5.0]
    mc = s_c_full_mc_series(chaotic, state_chaotic, times, McConfig(4000, 16, seed=0), ICFG)
    grid = HistogramGrid.around(state_chaotic, (4.0, 1.5), 10.0)
    hist = s_c_histogram_series(chaotic, state_chaotic, times, grid, 200_000, seed=0, icfg=ICFG)
    for m, h in zip(mc, hist):
        assert m.within(h, 2.0), (m.diagnostics["t"], m.value, m.std_error, h.value, h.std_error)
        assert m.value <= 1 + 3 * m.std_error


@pytest.mark.slow
def test_mc_insensitive_to_kappa(chaotic, state_chaotic):
    vals = {k: s_c_full_mc(chaotic, state_chaotic, 2.0, McConfig(4000, 64, kappa=k), ICFG) for k in (2.0, 3.0, 5.0)}
    ref = vals[3.0]
    for k in (2.0, 5.0):
        assert abs(vals[k].value - ref.value) < max(vals[k].std_error, ref.std_error)


def test_mc_dt_halving_within_error(chaotic, state_chaotic):
    cfg = McConfig(1024, 8, seed=9)
    a = s_c_full_mc(chaotic, state_chaotic, 2.0, cfg, IntegratorConfig(dt=0.01))
    b = s_c_full_mc(chaotic, state_chaotic, 2.0, cfg, IntegratorConfig(dt=0.005))
    assert abs(a.value - b.value) < a.std_error


def test_antithetic_matches_plain(chaotic, state_chaotic):
    plain = s_c_full_mc(chaotic, state_chaotic, 1.0, McConfig(2048, 16, seed=5), ICFG)
    anti = s_c_full_mc(chaotic, state_chaotic, 1.0, McConfig(2048, 16, seed=5, antithetic=True), ICFG)
    assert plain.within(anti, 2.0)


@pytest.mark.parametrize(
    "coupling,centers",
    [
        (QuadQuad(1.0), (0.4, 0.5, 0.6)),
        (PolynomialCoupling(((0.5, 2, 2), (1.0, 4, 2))), (0.4, 0.5, 0.6)),
        (SeparableProduct(Sin2(10.0), Monomial(2)), (0.5, 0.5, 0.0)),
    ],
)
def test_energy_ceiling_excludes_only_negligible_density(coupling, centers):
    spec = SystemSpec(H, B, coupling)
    state = product_state(spec, *centers, energy=0.24)
    cap = energy_ceiling(spec, state)
    rng = np.random.default_rng(7)
    # points spread far beyond the initial cell
    z = state.center + 40 * state.widths * rng.uniform(-1, 1, size=(200_000, 4))
    above = hamiltonian(spec, z) > cap
    assert above.any()
    u = (z[above] - state.center) / state.widths
    assert np.min(np.sum(u * u, axis=1)) > 144
    inside = state.sample(rng, 100_000)
    assert np.all(hamiltonian(spec, inside) <= cap)


def test_screening_does_not_bias_mc(chaotic, state_chaotic):
    cfg = McConfig(n_outer=1024, n_inner=16)
    est = s_c_full_mc(chaotic, state_chaotic, 2.0, cfg, ICFG)
    assert est.diagnostics["screened"] >= 0
    ref = s_c_histogram(chaotic, state_chaotic, 2.0, HistogramGrid.around(state_chaotic, (4.0, 1.5), 10.0), 200_000, 0, ICFG)
    assert abs(est.value - ref.value) <= 3 * math.hypot(est.std_error, ref.std_error)


def test_reversed_driven_transport_inverts_forward(chaotic, state_chaotic):
    rng = np.random.default_rng(4)
    z0 = state_chaotic.sample(rng, 50)
    eta = state_chaotic.center[2:] + 3 * state_chaotic.widths[2:] * rng.standard_normal((50, 6, 2))
    t = 3.0
    y = _driven_transport(chaotic, z0, eta, t, ICFG)
    *_, (_, zt, _) = flow(chaotic, z0, [t], ICFG)
    back = _flip_bath(_driven_transport(chaotic, flip_momenta(zt), _flip_bath(y), t, ICFG))
    assert np.max(np.abs(back - eta)) < 1e-9
    assert np.max(np.abs(y - eta)) > 1e-2


def test_linear_component_alone_is_unbiased(chaotic, state_chaotic):
    ref = s_c_full_mc(chaotic, state_chaotic, 1.0, McConfig(2048, 16, seed=1, linear_fraction=0.0), ICFG)
    lin = s_c_full_mc(
        chaotic, state_chaotic, 1.0, McConfig(2048, 16, seed=1, prior_fraction=0.0, local_fraction=0.0, linear_fraction=1.0), ICFG
    )
    assert lin.within(ref, 3.0), (lin.value, lin.std_error, ref.value, ref.std_error)


@pytest.mark.slow
def test_mc_follows_wound_filament_at_late_times():
    # weak coupling: the reduced density winds into thin filaments
    spec = SystemSpec(H, B, QuadQuad(0.03))
    state = product_state(spec, 0.4, 0.5, 0.6, energy=0.24)
    times = [20.0, 38.0]
    mc = s_c_full_mc_series(spec, state, times, McConfig(2000, 16, seed=3), ICFG)
    grid = HistogramGrid.around(state, (4.0, 1.5), 10.0)
    hist = s_c_histogram_series(spec, state, times, grid, 200_000, seed=0, icfg=ICFG)
    for m, h in zip(mc, hist):
        assert m.within(h, 3.0), (m.diagnostics["t"], m.value, m.std_error, h.value, h.std_error)
