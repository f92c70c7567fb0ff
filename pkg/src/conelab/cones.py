"""Cones dr^2 + r^2 g^N over links: W evaluation, separation of variables,
radial probes and the finiteness dichotomy lambda^N vs n - 1."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .links import (
    FunctionalQuery,
    LinkGeometry,
    MuEnvelope,
    envelope_for_link,
    ground_state,
    lambda_link,
    mu_link,
    scalar_curvature_link,
    sphere_volume,
)
from .numcore import (
    ConelabError,
    EntropyFunctional,
    RadialGrid,
    ScalarField,
    SturmLiouvilleProblem,
    minimize_normalized,
    normalize,
    quad,
)

log = logging.getLogger(__name__)

DEFAULT_WINDOW = (1e-4, 1e2)
CLASSIFY_BAND = 1e-6


def _xlogx(x: NDArray) -> NDArray:
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] * np.log(x[pos])
    return out


def exact_lambda(link: LinkGeometry) -> Optional[float]:
    """Closed-form lambda for homogeneous links, None when it must be computed."""
    if link.variant == "round_sphere":
        return link.dim * (link.dim - 1) / link.beta ** 2
    if link.variant == "einstein":
        return link.lambda_
    return None


@dataclass(eq=False)
class ConeGeometry:
    link: LinkGeometry
    r_min: float
    r_max: float
    nodes: int = 1024
    radial_grid: RadialGrid = field(init=False, repr=False)

    def __post_init__(self):
        if not 0 < self.r_min < self.r_max:
            raise ConelabError("invalid_window", f"need 0 < r_min < r_max, got {self.r_min}, {self.r_max}")
        self.radial_grid = RadialGrid.logarithmic(self.r_min, self.r_max, self.nodes)

    @classmethod
    def for_scale(cls, link: LinkGeometry, tau: float = 1.0, window=DEFAULT_WINDOW,
                  nodes: int = 1024) -> "ConeGeometry":
        s = math.sqrt(tau)
        return cls(link, window[0] * s, window[1] * s, nodes)

    @property
    def dim(self) -> int:
        """Link dimension n; the cone has dimension n + 1."""
        return self.link.dim

    @property
    def r(self) -> NDArray:
        return self.radial_grid.nodes

    def link_density(self) -> NDArray:
        """Link quadrature weights times the link volume density."""
        return self.link.grid.weights * self.link.measure()

    def integrate(self, values: NDArray) -> float:
        """Integral over the truncated cone of values given per (r, link node), without r^n."""
        return float(self.radial_grid.weights @ (values @ self.link_density()))

    def scalar_curvature(self) -> NDArray:
        n = self.dim
        RN = scalar_curvature_link(self.link).values
        return (RN[None, :] - n * (n - 1)) / self.r[:, None] ** 2


def as_cone_field(cone: ConeGeometry, f: ArrayLike) -> NDArray:
    f = np.asarray(f, dtype=float)
    shape = (len(cone.radial_grid), len(cone.link.grid))
    if f.ndim == 1:
        if len(f) != shape[0]:
            raise ConelabError("grid_mismatch", "radial field does not match the radial grid")
        return np.repeat(f[:, None], shape[1], axis=1)
    if f.shape != shape:
        raise ConelabError("grid_mismatch", f"cone field must have shape {shape}")
    return f


def cone_mass(cone: ConeGeometry, f: ArrayLike, tau: float) -> float:
    n = cone.dim
    F = as_cone_field(cone, f)
    dens = np.exp(-F) * cone.r[:, None] ** n
    return cone.integrate(dens) * (4 * math.pi * tau) ** (-(n + 1) / 2)


def normalize_cone_field(cone: ConeGeometry, f: ArrayLike, tau: float) -> NDArray:
    """Shift f by a constant so that int e^{-f} (4 pi tau)^{-(n+1)/2} dv = 1."""
    F = as_cone_field(cone, f)
    return F + math.log(cone_mass(cone, F, tau))


def w_cone_basic(cone: ConeGeometry, f: ArrayLike, tau: float) -> float:
    """W of the cone in f-form, integrated directly in (r, x)."""
    n = cone.dim
    F = as_cone_field(cone, f)
    r = cone.r[:, None]
    dens = np.exp(-F) * r ** n * (4 * math.pi * tau) ** (-(n + 1) / 2)
    mass = cone.integrate(dens)
    if abs(mass - 1.0) > 1e-6:
        raise ConelabError("not_normalized", f"cone mass {mass:.10g}")
    fr = cone.radial_grid.diff(F, 1, axis=0)
    fx = cone.link.grid.diff(F, 1, (1, 1), axis=1)
    RN = scalar_curvature_link(cone.link).values[None, :]
    integrand = tau * (fr ** 2 + (fx ** 2 + RN - n * (n - 1)) / r ** 2) + F - (n + 1)
    return cone.integrate(integrand * dens)


@dataclass(eq=False)
class SeparatedPotential:
    cone: ConeGeometry
    tau: float
    f_tilde: NDArray
    a_r: ScalarField

    def link_weight(self) -> NDArray:
        """(4 pi tau r^-2)^{-n/2} e^{-f~}: unit mass on each radial slice."""
        n = self.cone.dim
        r = self.cone.r[:, None]
        return (4 * math.pi * self.tau / r ** 2) ** (-n / 2) * np.exp(-self.f_tilde)

    def radial_weight(self) -> NDArray:
        return np.exp(-self.a_r.values) / math.sqrt(4 * math.pi * self.tau)

    def slice_masses(self) -> NDArray:
        return self.link_weight() @ self.cone.link_density()

    def radial_mass(self) -> float:
        return quad(self.cone.radial_grid, self.radial_weight())

    def reassemble(self) -> NDArray:
        return self.f_tilde + self.a_r.values[:, None]

    def radial_identity_residuals(self) -> NDArray:
        """int_N (4 pi tau r^-2)^{-n/2} e^{-f~} d_r f~ dv - n/r at each radius."""
        ftr = self.cone.radial_grid.diff(self.f_tilde, 1, axis=0)
        integral = (self.link_weight() * ftr) @ self.cone.link_density()
        return integral - self.cone.dim / self.cone.r


def separate_variables(cone: ConeGeometry, f: ArrayLike, tau: float) -> SeparatedPotential:
    """Split f = f~ + a_r with unit link mass per slice and unit radial mass."""
    n = cone.dim
    F = as_cone_field(cone, f)
    if not np.all(np.isfinite(F)):
        raise ConelabError("invalid_field", "f must be finite on the window")
    wl = cone.link_density()
    fmin = F.min(axis=1)
    inner = np.exp(-(F - fmin[:, None])) @ wl
    bad = np.nonzero(~(inner > 0) | ~np.isfinite(inner))[0]
    if len(bad):
        raise ConelabError("mass_underflow", f"no link mass at r = {cone.r[bad[0]]:.6g}",
                           radius=float(cone.r[bad[0]]))
    log_link_mass = np.log(inner) - fmin
    a = n / 2 * math.log(4 * math.pi * tau) - n * np.log(cone.r) - log_link_mass
    f_tilde = F - a[:, None]
    return SeparatedPotential(cone, tau, f_tilde, ScalarField(cone.radial_grid, a))


@dataclass
class SeparatedValue:
    link_term: float
    radial_term: float

    @property
    def total(self) -> float:
        return self.link_term + self.radial_term


def w_from_separated_parts(sep: SeparatedPotential) -> SeparatedValue:
    cone, tau = sep.cone, sep.tau
    n = cone.dim
    r = cone.r
    wl = cone.link_density()
    tau_r = tau / r ** 2
    ft = sep.f_tilde
    fx = cone.link.grid.diff(ft, 1, (1, 1), axis=1)
    RN = scalar_curvature_link(cone.link).values[None, :]
    lw = sep.link_weight()
    w_link = ((tau_r[:, None] * (fx ** 2 + RN) + ft - n) * lw) @ wl
    rw = sep.radial_weight()
    link_term = quad(cone.radial_grid, (w_link - n * (n - 1) * tau_r) * rw)
    ftr = cone.radial_grid.diff(ft, 1, axis=0)
    ar = cone.radial_grid.diff(sep.a_r.values, 1)
    inner = ((tau * (ftr + ar[:, None]) ** 2 + sep.a_r.values[:, None] - 1) * lw) @ wl
    radial_term = quad(cone.radial_grid, inner * rw)
    return SeparatedValue(float(link_term), float(radial_term))


def w_from_separated(cone: ConeGeometry, sep: SeparatedPotential) -> float:
    if sep.cone is not cone and not sep.cone.radial_grid.same_as(cone.radial_grid):
        raise ConelabError("grid_mismatch", "separation computed on a different cone")
    masses = sep.slice_masses()
    if np.max(np.abs(masses - 1)) > 1e-6 or abs(sep.radial_mass() - 1) > 1e-6:
        raise ConelabError("not_normalized", "separated potential violates its normalizations")
    return w_from_separated_parts(sep).total


def jensen_reduced_radial_term(sep: SeparatedPotential) -> float:
    """int [tau (d_r(a_r + n log r))^2 + a_r - 1] e^{-a_r} (4 pi tau)^{-1/2} dr."""
    cone = sep.cone
    ar = cone.radial_grid.diff(sep.a_r.values, 1)
    integrand = sep.tau * (ar + cone.dim / cone.r) ** 2 + sep.a_r.values - 1
    return quad(cone.radial_grid, integrand * sep.radial_weight())


def random_admissible_field(cone: ConeGeometry, tau: float, rng: np.random.Generator,
                            modes: int = 3) -> NDArray:
    """Gaussian-like potential with random radial shape and link modes, normalized."""
    r = cone.r[:, None] / math.sqrt(tau)
    xi = cone.link.grid.nodes[None, :] / cone.link.length * math.pi
    width = rng.uniform(0.6, 1.6)
    f = r ** 2 / (4 * width) + rng.uniform(-0.5, 0.5) * np.log1p(r ** 2)
    for k in range(1, modes + 1):
        c = rng.normal(0.0, 0.3 / k)
        f = f + c * np.cos(k * xi) * np.exp(-r ** 2 / rng.uniform(1.0, 8.0)) * (1 + r ** 2) ** 0.5
    return normalize_cone_field(cone, f, tau)


# ---------------------------------------------------------------------------
# radial ansatz u = v(r) u~(x) with u~ the link ground state

@dataclass
class RadialAnsatz:
    dim: int
    K: float
    link_entropy: float  # int u~^2 log u~^2 dv^N
    ground: Optional[ScalarField] = None


def radial_ansatz(link: LinkGeometry) -> RadialAnsatz:
    n = link.dim
    lam_exact = exact_lambda(link)
    if link.variant in ("round_sphere", "einstein"):
        lam = lam_exact
        ent = -math.log(link.volume())
        g = None
    else:
        lam = lambda_link(link)
        g = ground_state(link)
        ent = quad(link.grid, _xlogx(g.values ** 2) * link.measure())
    return RadialAnsatz(n, lam - n * (n - 1), ent, g)


def _radial_w(r: NDArray, weights: NDArray, v: NDArray, dv: NDArray, ans: RadialAnsatz,
              tau: float) -> float:
    n = ans.dim
    kinetic = tau * np.dot(weights, (4 * dv ** 2 + ans.K * v ** 2 / r ** 2) * r ** n)
    entropy = np.dot(weights, _xlogx(v ** 2) * r ** n)
    return float(kinetic - entropy - ans.link_entropy
                 - (n + 1) / 2 * math.log(4 * math.pi * tau) - (n + 1))


def w_cone_radial(cone: ConeGeometry, v: ArrayLike, tau: float,
                  ansatz: Optional[RadialAnsatz] = None) -> float:
    """W of u = v(r) u~(x); requires int v^2 r^n dr = 1."""
    ans = ansatz or radial_ansatz(cone.link)
    v = np.asarray(v, dtype=float)
    g = cone.radial_grid
    mass = quad(g, v * v * cone.r ** cone.dim)
    if abs(mass - 1) > 1e-6:
        raise ConelabError("not_normalized", f"radial mass {mass:.10g}")
    return _radial_w(cone.r, g.weights, v, g.diff(v, 1), ans, tau)


@dataclass
class ConeUpperBound:
    value: float
    status: str
    r: NDArray
    minimizer: NDArray
    gaussian_distance: float
    label: str = "upper_bound"


def _log_radial_problem(cone: ConeGeometry, ans: RadialAnsatz) -> SturmLiouvilleProblem:
    """Radial ansatz in s = log r: m = r^{n+1}, p = 4 r^{n-1}, V = K / r^2."""
    n = cone.dim
    r = cone.r
    s_grid = RadialGrid.uniform(math.log(r[0]), math.log(r[-1]), len(r))
    rs = np.exp(s_grid.nodes)
    return SturmLiouvilleProblem(s_grid, rs ** (n + 1), 4 * rs ** (n - 1), ans.K / rs ** 2)


def cone_nu_upper_bound(cone: ConeGeometry, tau: float = 1.0, tolerance: float = 1e-12) -> ConeUpperBound:
    """Minimize W over radial fields times the link ground state (an upper bound on nu)."""
    n = cone.dim
    ans = radial_ansatz(cone.link)
    prob = _log_radial_problem(cone, ans)
    obj = EntropyFunctional(prob, tau, 1.0,
                            -ans.link_entropy - (n + 1) / 2 * math.log(4 * math.pi * tau) - (n + 1),
                            label="W_cone_radial")
    rs = np.exp(prob.grid.nodes)
    gauss = normalize(prob, np.exp(-rs ** 2 / (8 * tau)))
    res = minimize_normalized(obj, gauss, tolerance=tolerance)
    u = res.minimizer.values
    dist = math.sqrt(quad(prob.grid, (u - gauss.values) ** 2 * prob.measure_density))
    if res.unbounded:
        log.info("radial cone minimization unbounded below (lambda %.6g)", ans.K + n * (n - 1))
    return ConeUpperBound(res.value, res.status, rs, u, dist)


# ---------------------------------------------------------------------------
# divergence probe v = b r^{-a} chi on [eps, 2 r0]

@dataclass
class ProbeFamily:
    a_exponent: float
    r0: Optional[float] = None
    b_norm: Optional[float] = None
    inner_cutoff_eps: Optional[float] = None
    link_ground_state: Optional[ScalarField] = None


@dataclass
class ProbeTrace:
    eps: list
    values: list
    b_norms: list
    monotone_decreasing: bool
    exponent_fit: Optional[float]
    predicted_exponent: float
    log_slope: Optional[float]
    verdict: str
    cond1: bool


def _ramp(t: NDArray):
    """C^1 cubic from 1 at t = 0 to 0 at t = 1 with zero end slopes."""
    return 1 - 3 * t ** 2 + 2 * t ** 3, -6 * t + 6 * t ** 2


def probe_values(ans: RadialAnsatz, probe: ProbeFamily, eps: float, tau: float,
                 nodes: int = 2048):
    """W and b for the truncated probe; the two pieces are integrated separately."""
    a, r0 = probe.a_exponent, probe.r0
    n = ans.dim
    g1 = RadialGrid.logarithmic(eps, r0, nodes)
    g2 = RadialGrid.uniform(r0, 2 * r0, max(nodes // 4, 64))
    r1 = g1.nodes
    v1, d1 = r1 ** -a, -a * r1 ** (-a - 1)
    r2 = g2.nodes
    chi, dchi = _ramp((r2 - r0) / r0)
    v2 = r2 ** -a * chi
    d2 = -a * r2 ** (-a - 1) * chi + r2 ** -a * dchi / r0
    mass = np.dot(g1.weights, v1 ** 2 * r1 ** n) + np.dot(g2.weights, v2 ** 2 * r2 ** n)
    b = 1 / math.sqrt(mass)
    r = np.concatenate([r1, r2])
    w = np.concatenate([g1.weights, g2.weights])
    v = b * np.concatenate([v1, v2])
    dv = b * np.concatenate([d1, d2])
    return _radial_w(r, w, v, dv, ans, tau), b


PROBE_TAU = 1e4


def divergence_probe(link: LinkGeometry, probe: ProbeFamily, eps_sequence: Sequence[float],
                     tau: float = PROBE_TAU, nodes: int = 2048) -> ProbeTrace:
    """W of the truncated probe for each inner cutoff.

    The cutoffs are absolute; the default scale tau = 1e4 (with r0 = sqrt(tau)
    unless given) puts eps / sqrt(tau) deep in the asymptotic regime, where the
    trace behaves like W0 + C eps^(n - 2a - 1).
    """
    n = link.dim
    if probe.r0 is None:
        probe = ProbeFamily(probe.a_exponent, math.sqrt(tau), probe.b_norm,
                            probe.inner_cutoff_eps, probe.link_ground_state)
    a = probe.a_exponent
    if not ((n - 1) / 2 <= a < (n + 1) / 2):
        raise ConelabError("probe_out_of_window", f"a = {a} outside [{(n - 1) / 2}, {(n + 1) / 2})")
    eps = [float(e) for e in eps_sequence]
    if any(e2 >= e1 for e1, e2 in zip(eps, eps[1:])) or any(e <= 0 for e in eps):
        raise ConelabError("invalid_probe", "eps sequence must be positive and decreasing")
    if eps[0] >= probe.r0:
        raise ConelabError("invalid_probe", "eps must be below r0")
    ans = radial_ansatz(link)
    vals, bs = [], []
    for e in eps:
        w, b = probe_values(ans, probe, e, tau, nodes)
        vals.append(w)
        bs.append(b)
    diffs = -np.diff(vals)
    monotone = bool(np.all(diffs > 0))
    predicted = n - 2 * a - 1
    cond1 = 4 * a * a + ans.K < 0
    fit = None
    if len(eps) >= 3 and np.all(diffs > 0):
        fit = float(np.polyfit(np.log(eps[:-1]), np.log(diffs), 1)[0])
    slope = None
    if len(eps) >= 2:
        slope = float(np.polyfit(np.log(eps), vals, 1)[0])
    if cond1 and monotone and predicted < 0:
        verdict = "unbounded"
    elif len(diffs) >= 2 and abs(diffs[-1]) < 1e-3 and abs(diffs[-1]) < 0.5 * abs(diffs[-2]):
        verdict = "convergent"
    else:
        verdict = "bounded"
    return ProbeTrace(eps, vals, bs, monotone, fit, predicted, slope, verdict, bool(cond1))


def probe_exponent_for(link: LinkGeometry, mu_infinite: bool) -> float:
    """An admissible a: inside both windows when divergence is expected, just above (n-1)/2 otherwise."""
    n = link.dim
    lo = (n - 1) / 2
    if mu_infinite:
        K = radial_ansatz(link).K
        hi = min(math.sqrt(max(-K, 0.0)) / 2, (n + 1) / 2)
        if hi <= lo:
            return lo
        return lo + 0.5 * (hi - lo)
    return lo + 0.05


# ---------------------------------------------------------------------------
# classification

def cone_finiteness_classify(link: LinkGeometry, band: float = CLASSIFY_BAND) -> dict:
    """mu_infinite iff lambda^N <= n - 1; lambda of the cone is -inf iff lambda^N < n - 1."""
    n = link.dim
    thr = n - 1
    exact = exact_lambda(link)
    lam = exact if exact is not None else lambda_link(link)
    if exact is not None:
        tol = 1e-12 * max(1.0, abs(thr))
        equal = abs(lam - thr) <= tol
        below = lam < thr and not equal
    else:
        equal = abs(lam - thr) <= band
        below = lam < thr - band
    if equal and exact is None:
        verdict, lam_cone = "undetermined", None
    elif equal:
        verdict, lam_cone = "mu_infinite", 0.0
    elif below:
        verdict, lam_cone = "mu_infinite", -math.inf
    else:
        verdict, lam_cone = "mu_finite", 0.0
    return {"verdict": verdict, "lambda_cone": lam_cone, "lambda_link": float(lam),
            "threshold": float(thr), "exact_lambda": exact is not None}


@dataclass
class ConeBoundParams:
    K: float
    tau: float
    tau0: float
    A_const: float
    D_const: float
    C_const: float
    convention: str
    dim: int

    @property
    def lower_bound(self) -> float:
        return -self.D_const


def find_tau0(link: LinkGeometry, shrink: float = 0.8, max_steps: int = 200) -> float:
    """Largest tau <= 1/(2n(n-1)) on a geometric ladder with mu^N(tau) >= -1/2."""
    n = link.dim
    t = 1 / (2 * n * (n - 1))
    for _ in range(max_steps):
        if mu_link(link, FunctionalQuery(t, n)) >= -0.5:
            return t
        t *= shrink
    raise ConelabError("tau0_not_found", "mu^N stays below -1/2 on the ladder")


def cone_bound_params(link: LinkGeometry, envelope: Optional[MuEnvelope] = None,
                      convention: str = "derived") -> ConeBoundParams:
    n = link.dim
    cls = cone_finiteness_classify(link)
    if cls["verdict"] != "mu_finite":
        raise ConelabError("dichotomy_infinite", f"lambda^N = {cls['lambda_link']} <= {n - 1}")
    lam = cls["lambda_link"]
    K = lam - n * (n - 1)
    env = envelope if envelope is not None else envelope_for_link(link)
    A = max(env.offset_A, 0.0)
    tau0 = find_tau0(link)
    x = -K / (n - 1) ** 2
    lv = math.log(sphere_volume(n))
    if convention == "as_written":
        D = 1 + A + (n + 1) / 2 * math.log(1 - x) - lv
    elif convention == "derived":
        xp = max(x, 0.0)
        D = 1 + A - (n + 1) / 2 * math.log(1 - xp) + lv
    else:
        raise ConelabError("invalid_convention", convention)
    tau = tau0 / (1 - max(x, 0.0))
    return ConeBoundParams(K, tau, tau0, A, D, tau0 ** -0.5, convention, n)


def cone_nu_lower_bound(link: LinkGeometry, envelope: Optional[MuEnvelope] = None,
                        convention: str = "derived") -> float:
    return cone_bound_params(link, envelope, convention).lower_bound


def conical_singularity_lambda_classify(singularity_links: Sequence[LinkGeometry],
                                        band: float = CLASSIFY_BAND,
                                        ambient_dim: Optional[int] = None) -> dict:
    """lambda of a manifold with conical singularities: -inf if some link has lambda < n - 2.

    n is the ambient dimension, taken as link dimension + 1.
    """
    links = list(singularity_links)
    if not links:
        raise ConelabError("no_singularities", "no singular points: lambda is finite")
    per = []
    for link in links:
        n = link.dim + 1
        thr = n - 2
        exact = exact_lambda(link)
        lam = exact if exact is not None else lambda_link(link)
        if abs(lam - thr) <= band:
            per.append("undetermined")
        elif lam < thr:
            per.append("infinite")
        else:
            per.append("finite")
    verdict = "infinite" if "infinite" in per else ("undetermined" if "undetermined" in per else "finite")
    mismatch = ambient_dim is not None and any(l.dim + 1 != ambient_dim for l in links)
    return {"verdict": verdict, "per_link": per, "dimension_mismatch": bool(mismatch)}


def asymptotically_conical_nu_bound(link: LinkGeometry, tau: float = 1.0, nodes: int = 2048) -> dict:
    n = link.dim
    exact = exact_lambda(link)
    lam = exact if exact is not None else lambda_link(link)
    if lam <= n - 1 + (1e-12 if exact is not None else CLASSIFY_BAND):
        return {"kind": "minus_infinity", "lambda_link": lam}
    ub = cone_nu_upper_bound(ConeGeometry.for_scale(link, tau, nodes=nodes), tau)
    return {"kind": "upper_bound", "upper_bound": ub.value, "status": ub.status, "lambda_link": lam}
