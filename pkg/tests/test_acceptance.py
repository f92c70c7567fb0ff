"""The twelve acceptance criteria, one test each; every test records a PASS/FAIL line
that is printed in the terminal summary."""
import math
from dataclasses import replace

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from conelab import cones, flows, inequalities as iq, smoothing as sm
from conelab.links import (
    FunctionalQuery, LinkGeometry, MuEnvelope, lambda_link, mu_einstein_closed_form,
    mu_envelope_check, mu_link, mu_table, nu_link, perturbed_sphere_profile,
)
from conelab.numcore import RadialGrid, ScalarField


class Criterion:
    def __init__(self, k, title):
        self.k, self.title, self.failures = k, title, []

    def check(self, ok, what):
        if not ok:
            self.failures.append(what)

    def finish(self):
        verdict = "PASS" if not self.failures else "FAIL"
        detail = "" if not self.failures else " [" + "; ".join(self.failures[:5]) + "]"
        line = f"{verdict} criterion {self.k}: {self.title}{detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert not self.failures, line


def test_criterion_01_round_sphere_lambda():
    c = Criterion(1, "lambda of beta S^n")
    for n in (2, 3):
        for beta in (0.5, 1.0, 2.0):
            lam = lambda_link(LinkGeometry.round_sphere(n, beta))
            exact = n * (n - 1) / beta ** 2
            c.check(abs(lam - exact) / exact < 1e-6, f"n={n} beta={beta}: {lam}")
    c.finish()


def test_criterion_02_einstein_mu_and_nu():
    c = Criterion(2, "mu closed form and nu of the unit S^2")
    s2 = LinkGeometry.round_sphere(2)
    for tau in (0.5, 1.0, 2.0):
        mu = mu_link(s2, FunctionalQuery(tau, 2))
        c.check(abs(mu - (2 * tau - math.log(tau) - 2)) < 1e-3, f"mu({tau}) = {mu}")
    nu, _ = nu_link(s2)
    c.check(abs(nu - (math.log(2) - 1)) < 1e-3, f"nu = {nu}")
    c.check(abs(abs(nu) - sm.ETA_3) < 1e-3, "|nu| differs from 1 - log 2")
    c.finish()


EPS = [float(x) for x in np.logspace(-1, -5, 9)]


def test_criterion_03_dichotomy_sweep():
    c = Criterion(3, "finiteness dichotomy over beta in [1, 2]")
    betas = [round(1.0 + 0.1 * k, 10) for k in range(11)]
    verdicts = []
    for beta in betas:
        link = LinkGeometry.round_sphere(2, beta)
        cls = cones.cone_finiteness_classify(link)
        infinite = cls["verdict"] == "mu_infinite"
        verdicts.append(infinite)
        tr = cones.divergence_probe(link, cones.ProbeFamily(cones.probe_exponent_for(link, infinite)), EPS)
        if infinite:
            c.check(tr.verdict == "unbounded" and tr.monotone_decreasing, f"beta={beta}: trace not unbounded")
            rel = abs(tr.exponent_fit - tr.predicted_exponent) / abs(tr.predicted_exponent)
            c.check(rel < 0.05, f"beta={beta}: exponent {tr.exponent_fit} vs {tr.predicted_exponent}")
        else:
            c.check(tr.verdict != "unbounded", f"beta={beta}: finite verdict but unbounded trace")
            env = MuEnvelope(2 / beta ** 2, 2.0, 2)
            lb = cones.cone_nu_lower_bound(link, env)
            c.check(min(tr.values) >= lb, f"beta={beta}: trace {min(tr.values)} below bound {lb}")
    flips = [i for i in range(1, len(betas)) if verdicts[i] != verdicts[i - 1]]
    c.check(len(flips) == 1 and betas[flips[0] - 1] < math.sqrt(2) < betas[flips[0]],
            f"verdict flips at {[betas[i] for i in flips]}")
    c.finish()


def test_criterion_04_flat_cone_entropy():
    c = Criterion(4, "nu upper bound of C(S^2) vanishes with a Gaussian minimizer")
    cone = cones.ConeGeometry.for_scale(LinkGeometry.round_sphere(2), 1.0)
    ub = cones.cone_nu_upper_bound(cone)
    c.check(abs(ub.value) < 1e-3, f"value {ub.value}")
    c.check(ub.gaussian_distance < 1e-3, f"distance to Gaussian {ub.gaussian_distance}")
    c.finish()


def test_criterion_05_hardy():
    c = Criterion(5, "weighted Hardy inequality is strict and sharp")
    g = RadialGrid.uniform(0.0, 16.0, 8001)
    rng = np.random.default_rng(5)
    for n in (2, 3):
        worst = max(iq.weighted_hardy_gap(ScalarField(g, iq.random_bump_field(g, rng)), n).ratio
                    for _ in range(200))
        c.check(worst < 1, f"n={n}: random ratio {worst}")
        ext = iq.weighted_hardy_gap(iq.near_extremal_hardy_field(n, 0.003), n).ratio
        c.check(0.98 <= ext < 1, f"n={n}: near-extremal ratio {ext}")
    c.finish()


def test_criterion_06_log_sobolev():
    c = Criterion(6, "radial log-Sobolev inequality")
    rng = np.random.default_rng(6)
    for n in (2, 3):
        for tau0 in (0.3, 1.0, 3.0):
            g = iq.log_sobolev_grid(tau0)
            gap = iq.radial_log_sobolev_gap(ScalarField(g, iq.gaussian_profile(g, n, tau0)), n, tau0)
            c.check(abs(gap) < 1e-5, f"Gaussian n={n} tau0={tau0}: {gap}")
            s = math.sqrt(tau0)
            worst = math.inf
            for _ in range(200):
                w = iq.normalize_radial(g, iq.random_bump_field(g, rng, span=(0.05 * s, 6 * s)), n)
                worst = min(worst, iq.radial_log_sobolev_gap(ScalarField(g, w), n, tau0))
            c.check(worst > -1e-6, f"random n={n} tau0={tau0}: {worst}")
    c.finish()


def test_criterion_07_separation_identities():
    c = Criterion(7, "separation of variables on the cone")
    rng = np.random.default_rng(7)
    links = [LinkGeometry.round_sphere(2, 0.9, nodes=129), perturbed_sphere_profile(2, [0.05, -0.02], nodes=129)]
    worst_w, worst_r = 0.0, 0.0
    for link in links:
        cone = cones.ConeGeometry.for_scale(link, 1.0, (1e-3, 30.0), 384)
        for _ in range(50):
            f = cones.random_admissible_field(cone, 1.0, rng)
            sep = cones.separate_variables(cone, f, 1.0)
            worst_w = max(worst_w, abs(cones.w_from_separated(cone, sep) - cones.w_cone_basic(cone, f, 1.0)))
            worst_r = max(worst_r, float(np.max(np.abs(sep.radial_identity_residuals()[1:-1]))))
    c.check(worst_w < 1e-6, f"reassembly {worst_w}")
    c.check(worst_r < 1e-4, f"radial identity {worst_r}")
    c.finish()


def test_criterion_08_flow_monotonicity():
    c = Criterion(8, "F and W are nondecreasing along the flow")
    rng = np.random.default_rng(8)
    for i in range(10):
        n = 2 + i % 2
        coeffs = list(rng.uniform(-0.06, 0.06, 3))
        st = flows.FlowState.perturbed_sphere(n, coeffs, 65)
        T = flows.shrinking_time_estimate(st)
        x = st.grid.nodes
        phi_T = rng.normal(0, 0.2) * np.cos(x) + rng.normal(0, 0.1) * np.cos(2 * x)
        tr = flows.integrate_flow(st, flows.FlowConfig(t_end=0.4 * T), terminal_phi=phi_T)
        m = flows.monotonicity_check(tr, tau_end=0.5, slack=1e-5)
        c.check(m["F_monotone"] and m["W_monotone"], f"trajectory {i}: dF {m['min_dF']}, dW {m['min_dW']}")
    for n in (2, 3):
        beta0, t, h = 1.0, 0.05, 1e-6
        F = lambda tt: flows.f_functional(flows.ricci_flow_round_ode(beta0, n, tt))
        beta = flows.ricci_flow_round_ode(beta0, n, t).beta
        dF = (F(t + h) - F(t - h)) / (2 * h)
        exact = 2 * n * (n - 1) ** 2 / beta ** 4
        c.check(abs(dF - exact) / exact < 1e-4, f"round n={n}: dF/dt {dF} vs {exact}")
    c.finish()


def test_criterion_09_renormalized_flow():
    c = Criterion(9, "renormalized flow identities")
    st = flows.FlowState.perturbed_sphere(3, [0.08, -0.04], 65)
    tr = flows.integrate_flow(st, flows.FlowConfig(alpha_rule="volume_preserving", t_end=0.5))
    vols = np.array([s.volume for s in tr])
    drift = float(np.max(np.abs(vols - vols[0])) / vols[0])
    c.check(drift < 1e-5, f"volume drift {drift}")
    for n in (2, 3):
        T = 1.0 / (2 * (n - 1))
        cfg = flows.FlowConfig(alpha_rule="shrinking_time_preserving", shrinking_time=T)
        for s in (flows.FlowState.round(n, 1.0), flows.FlowState.round_profile(n, 1.0, 65)):
            for _ in range(10):
                s1 = flows.flow_step(s, cfg, flows.stable_dt(s, cfg))
                step = abs(s1.beta - s.beta) if s.variant == "round" else float(np.max(np.abs(s1.w - s.w)))
                c.check(step < 1e-10, f"n={n} {s.variant}: fixed point moved {step}")
                s = s1
    for coeffs in ([0.05, -0.02], [-0.04, 0.03, 0.01]):
        r = flows.renormalized_shrinking_time_check(flows.FlowState.perturbed_sphere(2, coeffs, 65),
                                                    flows.FlowConfig(alpha_rule="shrinking_time_preserving"))
        c.check(r["drift"] < 1e-2, f"shrinking time drift {r['drift']}")
    c.finish()


def test_criterion_10_blowdown():
    c = Criterion(10, "blowdown rescaling, type III constant and volume ratio")
    exp = [flows.FlowState.round(2, math.sqrt(1 + 2 * t), t) for t in np.linspace(0, 4, 200)]
    ptr = flows.integrate_flow(flows.FlowState.perturbed_sphere(2, [0.05], 65), flows.FlowConfig(t_end=0.2))[::20]
    for traj in (exp, ptr):
        b = flows.blowdown_rescale(traj, 4.0)
        c.check(b["curvature_identity_residual"] < 1e-10, f"identity {b['curvature_identity_residual']}")
        g1 = flows.blowdown_rescale(flows.blowdown_rescale(traj, 2.0)["trajectory"], 3.0)["trajectory"]
        g2 = flows.blowdown_rescale(traj, 6.0)["trajectory"]
        law = max(max(abs(a.time - b.time) / max(1, b.time), abs(a.sup_rm - b.sup_rm) / max(1, b.sup_rm))
                  for a, b in zip(g1, g2))
        c.check(law < 1e-10, f"group law {law}")
    C0 = flows.type_iii_monitor(exp)[0]
    C4 = flows.type_iii_monitor(flows.blowdown_rescale(exp, 4.0)["trajectory"])[0]
    c.check(abs(C0 - C4) < 1e-8, f"type III constant {C0} vs {C4}")
    flat = [replace(flows.FlowState.flat(3), time=t) for t in np.linspace(0, 1, 50)]
    trace = np.array(flows.volume_ratio_monitor(flat)["trace"])
    c.check(float(np.ptp(trace)) < 1e-10, f"flat volume ratio spread {np.ptp(trace)}")
    c.finish()


def test_criterion_11_smoothing():
    c = Criterion(11, "explicit smoothing of the cone tip")
    p = sm.build_piecewise_h(1.05, 100.0)
    for r0 in (1.0, p.b):
        lo, hi = r0 * (1 - 1e-15), r0 * (1 + 1e-15)
        jump = max(abs(float(p.h(hi) - p.h(lo))), abs(float(p.dh(hi) - p.dh(lo))))
        c.check(jump < 1e-13, f"C1 jump {jump} at {r0}")
    g = RadialGrid.uniform(0.05, 3.0, 301)
    for n in (2, 3):
        geom = sm.DoublyWarpedGeometry(sm.custom_profile(np.sin, np.cos, lambda r: -np.sin(r)), n, g, 1.0)
        err = float(np.max(np.abs(sm.doubly_warped_scalar_curvature(geom).values - n * (n + 1))))
        c.check(err < 1e-4, f"sin r curvature error {err}")
    probes = sm.near_gaussian_probes(50, np.random.default_rng(42))
    rep = sm.smoothing_gap_sweep(1.05, [10.0, 100.0, 1000.0], probes, [0.1, 0.3, 1.0], n=3)
    c.check(rep["holds"], f"gap bound fails per A: {rep['holds_per_A']}")
    c.check(abs(rep["residual_exponent"] + 1) <= 0.3, f"residual exponent {rep['residual_exponent']}")
    lo, hi = sm.beta_window_scan(3)["window"]
    c.check(sm.ANALYTIC_WINDOW_3[0] <= lo and hi <= sm.ANALYTIC_WINDOW_3[1], f"window ({lo}, {hi})")
    c.finish()


def test_criterion_12_mu_envelope():
    c = Criterion(12, "mu envelope chain inequality")
    taus = [0.1, 0.2, 0.5, 1.0, 2.0, 5.0]
    for link in (LinkGeometry.round_sphere(2), LinkGeometry.round_sphere(2, 0.8), perturbed_sphere_profile(2, [0.05])):
        mus = mu_table(link, taus)
        rep = mu_envelope_check(zip(taus, mus), lambda_link(link), link.dim)
        c.check(rep["worst_violation"] < 1e-3, f"{link.variant}: violation {rep['worst_violation']}")
    for link in (LinkGeometry.einstein(3, 6.0, 2 * math.pi ** 2), LinkGeometry.einstein(2, 2.0, 4 * math.pi)):
        ts = [0.5, 1.0, 2.0, 4.0]
        mus = [mu_einstein_closed_form(link, FunctionalQuery(t, link.dim)) for t in ts]
        rep = mu_envelope_check(zip(ts, mus), link.lambda_, link.dim)
        c.check(rep["worst_violation"] < 1e-8, f"Einstein closed form violation {rep['worst_violation']}")
    c.finish()
