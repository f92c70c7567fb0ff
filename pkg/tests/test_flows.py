import math
from dataclasses import replace

import numpy as np
import pytest

from conelab.flows import (
    FlowConfig, FlowState, blowdown_rescale, f_functional, flow_step, integrate_flow,
    monotonicity_check, renormalized_shrinking_time_check, ricci_flow_round_ode,
    shrinking_time_estimate, stable_dt, type_iii_monitor, variation_identities_check,
    volume_ratio_monitor,
)
from conelab.numcore import ConelabError


@pytest.mark.parametrize("n", [2, 3])
def test_round_ode_closed_form(n):
    beta0 = 1.3
    for t in (0.0, 0.1, 0.3):
        s = ricci_flow_round_ode(beta0, n, t)
        assert s.beta ** 2 == pytest.approx(beta0 ** 2 - 2 * (n - 1) * t, abs=1e-14)
    with pytest.raises(ConelabError) as e:
        ricci_flow_round_ode(beta0, n, beta0 ** 2 / (2 * (n - 1)))
    assert e.value.code == "past_extinction"


@pytest.mark.parametrize("n", [2, 3])
def test_round_df_dt_closed_form(n):
    beta0, t, h = 1.0, 0.05, 1e-6
    F = lambda tt: f_functional(ricci_flow_round_ode(beta0, n, tt))
    beta = ricci_flow_round_ode(beta0, n, t).beta
    assert F(t) == pytest.approx(n * (n - 1) / beta ** 2, rel=1e-12)
    dF = (F(t + h) - F(t - h)) / (2 * h)
    assert dF == pytest.approx(2 * n * (n - 1) ** 2 / beta ** 4, rel=1e-4)


def test_round_flow_variation_identity():
    tr = integrate_flow(FlowState.round(2, 1.0), FlowConfig(t_end=0.2))
    assert variation_identities_check(tr, FlowConfig())["residuals"]["F"] < 1e-4


def test_round_profile_matches_ode():
    st = FlowState.round_profile(2, 1.0, 65)
    tr = integrate_flow(st, FlowConfig(t_end=0.1, potential_mode="reminimized"))
    assert tr[-1].beta_sq == pytest.approx(1 - 2 * 0.1, rel=1e-4)


def test_invalid_config():
    with pytest.raises(ConelabError) as e:
        FlowConfig(alpha_rule="fixed")
    assert e.value.code == "invalid_config"
    with pytest.raises(ConelabError):
        FlowConfig(alpha_rule="sideways")


@pytest.mark.parametrize("n", [2, 3])
def test_monotonicity_perturbed(n):
    st = FlowState.perturbed_sphere(n, [0.08, -0.04, 0.02], 65)
    T = shrinking_time_estimate(st)
    x = st.grid.nodes
    tr = integrate_flow(st, FlowConfig(t_end=0.4 * T), terminal_phi=0.3 * np.cos(x) + 0.1 * np.cos(2 * x))
    m = monotonicity_check(tr, tau_end=0.5)
    assert m["F_monotone"] and m["W_monotone"]
    assert m["F"][-1] > m["F"][0]


def test_variation_identities_perturbed():
    st = FlowState.perturbed_sphere(2, [0.08, -0.04], 65)
    cfg = FlowConfig(t_end=0.15)
    tr = integrate_flow(st, cfg, terminal_phi=0.2 * np.cos(st.grid.nodes))
    v = variation_identities_check(tr[::2], cfg, tau=0.7)
    res = v["residuals"]
    assert res["volume_relative"] < 1e-5
    assert res["F"] < 5e-3 and res["W"] < 5e-3
    assert res["scalar_curvature"] < 1e-2
    assert v["F_inequality_holds"]


def test_variation_needs_samples():
    tr = integrate_flow(FlowState.round(2, 1.0), FlowConfig(t_end=1e-4))[:10]
    with pytest.raises(ConelabError) as e:
        variation_identities_check(tr, FlowConfig())
    assert e.value.code == "insufficient_sampling"


def test_volume_preserving_flow():
    st = FlowState.perturbed_sphere(3, [0.08, -0.04], 65)
    tr = integrate_flow(st, FlowConfig(alpha_rule="volume_preserving", t_end=0.5))
    vols = np.array([s.volume for s in tr])
    assert np.max(np.abs(vols - vols[0])) / vols[0] < 1e-5


@pytest.mark.parametrize("n", [2, 3])
def test_round_fixed_point(n):
    T = 1.0 / (2 * (n - 1))
    cfg = FlowConfig(alpha_rule="shrinking_time_preserving", shrinking_time=T)
    s = FlowState.round(n, 1.0)
    for _ in range(20):
        s = flow_step(s, cfg, stable_dt(s, cfg))
    assert abs(s.beta - 1) < 1e-10
    p = FlowState.round_profile(n, 1.0, 65)
    p1 = flow_step(p, cfg, stable_dt(p, cfg))
    assert np.max(np.abs(p1.w - p.w)) < 1e-10


def test_shrinking_time_round_and_perturbed():
    assert shrinking_time_estimate(FlowState.round(3, 1.0)) == pytest.approx(0.25)
    st = FlowState.perturbed_sphere(2, [0.05, -0.02], 65)
    # a surface flows to a round point with volume shrinking at rate 8 pi
    assert shrinking_time_estimate(st) == pytest.approx(st.volume / (8 * math.pi), rel=1e-4)


def test_shrinking_time_invariant_under_renormalized_flow():
    st = FlowState.perturbed_sphere(2, [0.05, -0.02], 65)
    r = renormalized_shrinking_time_check(st, FlowConfig(alpha_rule="shrinking_time_preserving"))
    assert r["drift"] < 1e-2


def test_type_iii_classification():
    shrinking = [ricci_flow_round_ode(1, 2, t) for t in np.linspace(0, 0.49, 200)]
    assert not type_iii_monitor(shrinking)[1]
    expanding = [FlowState.round(2, math.sqrt(1 + 2 * t), t) for t in np.linspace(0, 1, 200)]
    C, bounded = type_iii_monitor(expanding)
    assert bounded and C == pytest.approx(1 / 3)


def expanding_trajectory(t_max=4.0, count=200):
    return [FlowState.round(2, math.sqrt(1 + 2 * t), t) for t in np.linspace(0, t_max, count)]


def test_blowdown_identity_and_group_law():
    exp = expanding_trajectory()
    b = blowdown_rescale(exp, 4.0)
    assert b["curvature_identity_residual"] < 1e-10
    assert abs(type_iii_monitor(b["trajectory"])[0] - type_iii_monitor(exp)[0]) < 1e-8
    g1 = blowdown_rescale(blowdown_rescale(exp, 2.0)["trajectory"], 3.0)["trajectory"]
    g2 = blowdown_rescale(exp, 6.0)["trajectory"]
    for a, b in zip(g1, g2):
        assert abs(a.time - b.time) < 1e-10 * max(1, b.time)
        assert abs(a.sup_rm - b.sup_rm) < 1e-10 * max(1, b.sup_rm)


def test_blowdown_errors():
    exp = expanding_trajectory(1.0, 20)
    with pytest.raises(ConelabError) as e:
        blowdown_rescale(exp, 4.0, t_max=1.0)
    assert e.value.code == "trajectory_too_short"
    with pytest.raises(ConelabError) as e:
        blowdown_rescale(exp, 0.0)
    assert e.value.code == "invalid_scale"


def test_flat_volume_ratio_constant():
    flat = [replace(FlowState.flat(3), time=t) for t in np.linspace(0, 1, 50)]
    trace = np.array(volume_ratio_monitor(flat)["trace"])
    assert np.ptp(trace) < 1e-10
    assert trace[0] == pytest.approx(4 * math.pi / 3, abs=1e-12)
    assert type_iii_monitor(flat) == (0.0, True)


def test_volume_ratio_scale_invariant_and_collapse():
    ptr = integrate_flow(FlowState.perturbed_sphere(2, [0.05], 65), FlowConfig(t_end=0.2))[::20]
    v1 = np.array(volume_ratio_monitor(ptr)["trace"])
    v2 = np.array(volume_ratio_monitor(blowdown_rescale(ptr, 4.0)["trajectory"])["trace"])
    assert np.max(np.abs(v1 - v2)) < 1e-10
    shrink = [ricci_flow_round_ode(1, 2, t) for t in np.linspace(0.01, 0.499, 100)]
    assert volume_ratio_monitor(shrink)["collapsed"]
    with pytest.raises(ConelabError) as e:
        volume_ratio_monitor(ptr, basepoint=3)
    assert e.value.code == "bad_basepoint"
