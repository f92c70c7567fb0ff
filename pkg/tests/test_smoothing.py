import math

import numpy as np
import pytest

from conelab.numcore import ConelabError, RadialGrid, ScalarField, quad
from conelab.smoothing import (
    ETA_3, ANALYTIC_WINDOW_3, DoublyWarpedGeometry, RoundLinkTrajectory, beta_window_scan,
    build_piecewise_h, cap_limit_profile, custom_profile, delta_family, delta_rest_sweep,
    delta_smoothing_rest, doubly_warped_scalar_curvature, near_gaussian_probes,
    pushforward_test_function, smoothing_gap_check, smoothing_gap_sweep,
)

TAUS = [0.1, 0.3, 1.0]


def test_piecewise_is_c1():
    for beta, A in [(1.05, 100.0), (0.9, 10.0), (1.3, 3.0)]:
        p = build_piecewise_h(beta, A)
        for r0 in (1.0, p.b):
            lo, hi = r0 * (1 - 1e-15), r0 * (1 + 1e-15)
            assert abs(p.h(hi) - p.h(lo)) < 1e-13
            assert abs(p.dh(hi) - p.dh(lo)) < 1e-13
        assert p.dh(p.b) == pytest.approx(1.0, abs=1e-12)


def test_flat_and_invalid_profiles():
    p = build_piecewise_h(1.0, 10.0)
    r = np.linspace(0, 5, 11)
    assert np.array_equal(p.h(r), r)
    with pytest.raises(ConelabError) as e:
        build_piecewise_h(1.05, 100.0, branch="euclidean")
    assert e.value.code == "invalid_transition"
    with pytest.raises(ConelabError):
        build_piecewise_h(1.05, -1.0)


def test_curvature_examples():
    g = RadialGrid.uniform(0.05, 3.0, 301)
    for n in (2, 3, 4):
        sphere = custom_profile(np.sin, np.cos, lambda r: -np.sin(r))
        R = doubly_warped_scalar_curvature(DoublyWarpedGeometry(sphere, n, g, link_beta=1.0))
        assert np.max(np.abs(R.values - n * (n + 1))) < 1e-4
        flat = custom_profile(lambda r: r, np.ones_like, np.zeros_like)
        assert np.max(np.abs(doubly_warped_scalar_curvature(DoublyWarpedGeometry(flat, n, g, 1.0)).values)) < 1e-12


def test_cap_is_flat_and_cone_formula():
    n, beta = 3, 1.2
    p = build_piecewise_h(beta, 5.0)
    g = RadialGrid.uniform(0.0, 3 * p.b, 2001)
    R = doubly_warped_scalar_curvature(DoublyWarpedGeometry(p, n, g)).values
    r = g.nodes
    assert np.max(np.abs(R[r <= 1])) < 1e-10
    far = r > p.b
    h = p.h(r[far])
    expected = (n * (n - 1) / beta ** 2 - n * (n - 1)) / h ** 2
    assert np.max(np.abs(R[far] - expected)) < 1e-10


def test_degenerate_profile():
    bad = custom_profile(lambda r: r - 1, np.ones_like, np.zeros_like)
    with pytest.raises(ConelabError) as e:
        DoublyWarpedGeometry(bad, 2, RadialGrid.uniform(0.1, 2.0, 21), 1.0)
    assert e.value.code == "degenerate"


def test_pushforward_identity_and_normalization():
    g = RadialGrid.uniform(0.0, 30.0, 30001)
    v = ScalarField(g, np.exp(-g.nodes ** 2 / 8))
    ident = build_piecewise_h(1.0, 1.0)
    assert np.max(np.abs(pushforward_test_function(v, ident).values - v.values)) < 1e-12
    n, beta = 3, 1.05
    p = build_piecewise_h(beta, 100.0)
    w = pushforward_test_function(v, p)
    r = g.nodes
    m_w = quad(g, w.values ** 2 * (beta * p.h(r)) ** n)
    m_v = quad(g, v.values ** 2 * (beta * r) ** n)
    assert m_w == pytest.approx(m_v, rel=1e-6)


def test_pushforward_grid_too_short():
    g = RadialGrid.uniform(0.0, 2.0, 201)
    doubling = custom_profile(lambda r: 2 * r, lambda r: np.full_like(r, 2.0), np.zeros_like)
    with pytest.raises(ConelabError) as e:
        pushforward_test_function(ScalarField(g, np.ones(201)), doubling)
    assert e.value.code == "grid_too_short"


@pytest.fixture(scope="module")
def probes():
    return near_gaussian_probes(100, np.random.default_rng(42))


def test_pushforward_mass_on_random_probes(probes):
    rep = smoothing_gap_check(build_piecewise_h(1.05, 100.0), probes, [1.0], nodes=2001)
    assert rep["mass_error"] < 1e-6


def test_identity_smoothing_has_zero_gap(probes):
    rep = smoothing_gap_check(build_piecewise_h(1.0, 10.0), probes[:10], TAUS, nodes=2001)
    assert rep["holds"] and np.max(np.abs(rep["deltas"])) < 1e-8


def test_parabolic_rescaling_invariance(probes):
    s = 3.0
    base = smoothing_gap_check(build_piecewise_h(1.05, 10.0), probes[:5], [0.5], nodes=2001)
    scaled = smoothing_gap_check(build_piecewise_h(1.05, 10.0, scale=s), probes[:5], [0.5 * s * s], nodes=2001)
    assert np.max(np.abs(base["deltas"] - scaled["deltas"])) < 1e-8


def test_gap_converged_in_nodes(probes):
    p = build_piecewise_h(1.05, 10.0)
    a = smoothing_gap_check(p, probes[:5], [0.3], nodes=2001)["deltas"]
    b = smoothing_gap_check(p, probes[:5], [0.3], nodes=4001)["deltas"]
    assert np.max(np.abs(a - b)) < 1e-8


def test_gap_sweep_cone_branch():
    probes = near_gaussian_probes(50, np.random.default_rng(42))
    rep = smoothing_gap_sweep(1.05, [10.0, 100.0, 1000.0], probes, TAUS, nodes=2001)
    assert rep["holds"]
    assert rep["residual_exponent"] == pytest.approx(-1.0, abs=0.3)


def test_gap_euclidean_branch():
    probes = near_gaussian_probes(20, np.random.default_rng(42))
    rep = smoothing_gap_sweep(0.9, [10.0, 100.0, 1000.0], probes, TAUS, nodes=2001)
    assert rep["holds"]
    assert rep["residual_exponent"] == pytest.approx(-1.0, abs=0.3)


def test_delta_rest_constant_trajectory_vanishes():
    th = np.linspace(0, 10, 50)
    traj = RoundLinkTrajectory(th, np.ones_like(th))
    geom = DoublyWarpedGeometry(delta_family(traj, 1e-2), 3, RadialGrid.uniform(0.5, 10.0, 401))
    sup, _ = delta_smoothing_rest(geom)
    assert sup < 1e-12


def test_delta_rest_linear_scaling():
    traj = RoundLinkTrajectory.exponential(1.2)
    rep = delta_rest_sweep(traj, 3, [1e-2, 5e-3, 2.5e-3, 1.25e-3])
    assert 1.6 <= rep["ratios"][0] <= 2.4
    assert rep["monotone"]


def test_delta_rest_requires_converged_link():
    th = np.linspace(0, 1, 50)
    traj = RoundLinkTrajectory(th, 1 + 0.5 * th)
    geom = DoublyWarpedGeometry(delta_family(traj, 1e-2), 3, RadialGrid.uniform(0.5, 10.0, 101))
    with pytest.raises(ConelabError) as e:
        delta_smoothing_rest(geom)
    assert e.value.code == "link_flow_not_ready"


def test_beta_window():
    rep = beta_window_scan(3)
    lo, hi = rep["window"]
    assert lo <= 0.95 and hi >= 1.02
    assert ANALYTIC_WINDOW_3[0] <= lo and hi <= ANALYTIC_WINDOW_3[1]
    assert rep["dimension_caveat"] and rep["manifold_dim"] == 4
    assert beta_window_scan(3, eta=0.0)["window"] == (1.0, 1.0)
    with pytest.raises(ConelabError) as e:
        beta_window_scan(3, eta=None)
    assert e.value.code == "missing_eta"


def test_cap_limit_profile_is_linear():
    p = cap_limit_profile(1.3)
    r = np.linspace(0, 10, 5)
    assert np.allclose(p.h(r), r / 1.3) and np.all(p.d2h(r) == 0)
    assert ETA_3 == pytest.approx(1 - math.log(2))
