"""Closed links in rotationally symmetric form and their F, W, lambda, mu, nu values.

A link is an n-manifold written as d xi^2 + psi(xi)^2 g_{S^{n-1}} on [0, L]
(round spheres use psi = beta sin(xi/beta)).  Functionals are restricted to
functions of xi, so mu and nu computed here are upper bounds; they are exact
for round spheres once the minimizer is constant.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import minimize_scalar
from scipy.special import gammaln

from .numcore import (
    ConelabError,
    EntropyFunctional,
    RadialGrid,
    ScalarField,
    SturmLiouvilleProblem,
    eigen_smallest,
    minimize_normalized,
    normalize,
    quad,
)

log = logging.getLogger(__name__)

NU_TAU_GRID = np.logspace(-3, 3, 31)


def sphere_volume(n: int) -> float:
    """Volume of the unit n-sphere S^n."""
    return float(np.exp(math.log(2.0) + (n + 1) / 2 * math.log(math.pi) - gammaln((n + 1) / 2)))


def ball_volume(n: int) -> float:
    """Volume of the unit ball in R^n."""
    return float(np.exp(n / 2 * math.log(math.pi) - gammaln(n / 2 + 1)))


def log_plus(x):
    return np.maximum(np.log(x), 0.0)


@dataclass(eq=False)
class LinkGeometry:
    variant: str
    dim: int
    beta: Optional[float] = None
    psi: Optional[ScalarField] = None
    lambda_: Optional[float] = None
    volume_: Optional[float] = None
    shrinking_time: Optional[float] = None
    nodes: int = 2048
    _cache: dict = field(default_factory=dict, repr=False)

    # -- constructors -----------------------------------------------------
    @classmethod
    def round_sphere(cls, dim: int, beta: float = 1.0, nodes: int = 2048) -> "LinkGeometry":
        if beta <= 0:
            raise ConelabError("invalid_link", "beta must be positive")
        if dim < 2:
            raise ConelabError("invalid_link", "link dimension must be at least 2")
        return cls("round_sphere", int(dim), beta=float(beta), nodes=int(nodes))

    @classmethod
    def profile(cls, dim: int, psi: ArrayLike, length: float) -> "LinkGeometry":
        psi = np.asarray(psi, dtype=float)
        grid = RadialGrid.uniform(0.0, float(length), len(psi))
        link = cls("profile", int(dim), psi=ScalarField(grid, psi, ("pole_regular", "pole_regular")),
                   nodes=len(psi))
        link._check_profile()
        return link

    @classmethod
    def einstein(cls, dim: int, lambda_: float, volume: float,
                 shrinking_time: Optional[float] = None) -> "LinkGeometry":
        if lambda_ <= 0:
            raise ConelabError("invalid_link", "Einstein links need lambda > 0")
        T = dim / (2.0 * lambda_)
        if shrinking_time is not None and abs(shrinking_time - T) > 1e-9 * T:
            raise ConelabError("invalid_link", f"shrinking time must equal n/(2 lambda) = {T}")
        return cls("einstein", int(dim), lambda_=float(lambda_), volume_=float(volume),
                   shrinking_time=T)

    # -- geometry ---------------------------------------------------------
    def _check_profile(self):
        v = self.psi.values
        if np.any(v[1:-1] <= 0):
            raise ConelabError("degenerate_profile", "psi must be positive in the interior")
        if abs(v[0]) > 1e-12 or abs(v[-1]) > 1e-12:
            raise ConelabError("degenerate_profile", "psi must vanish at both poles")
        d = self.psi_prime()
        if abs(d[0] - 1) > 1e-3 or abs(d[-1] + 1) > 1e-3:
            raise ConelabError("degenerate_profile", "|psi'| must be 1 at the poles")

    def round_model(self) -> Optional["LinkGeometry"]:
        """Round sphere with the same data, used to evaluate Einstein links numerically."""
        if self.variant != "einstein":
            return self
        beta = math.sqrt(self.dim * (self.dim - 1) / self.lambda_)
        vol = beta ** self.dim * sphere_volume(self.dim)
        if abs(vol - self.volume_) <= 1e-9 * vol:
            return LinkGeometry.round_sphere(self.dim, beta, self.nodes)
        return None

    @property
    def grid(self) -> RadialGrid:
        if "grid" not in self._cache:
            if self.variant == "round_sphere":
                self._cache["grid"] = RadialGrid.uniform(0.0, self.beta * math.pi, self.nodes)
            elif self.variant == "profile":
                self._cache["grid"] = self.psi.grid
            else:
                model = self.round_model()
                if model is None:
                    raise ConelabError("no_profile", "Einstein link without a round model")
                self._cache["grid"] = model.grid
        return self._cache["grid"]

    @property
    def length(self) -> float:
        return float(self.grid.nodes[-1])

    def psi_values(self) -> NDArray:
        if self.variant == "profile":
            return self.psi.values
        model = self.round_model() if self.variant == "einstein" else self
        x = self.grid.nodes
        return model.beta * np.sin(x / model.beta)

    def psi_prime(self) -> NDArray:
        if self.variant == "profile":
            return self.grid.diff(self.psi.values, 1, (-1, -1))
        model = self.round_model() if self.variant == "einstein" else self
        return np.cos(self.grid.nodes / model.beta)

    def psi_second(self) -> NDArray:
        if self.variant == "profile":
            return self.grid.diff(self.psi.values, 2, (-1, -1))
        model = self.round_model() if self.variant == "einstein" else self
        return -np.sin(self.grid.nodes / model.beta) / model.beta

    def measure(self) -> NDArray:
        """Volume density omega_{n-1} psi^{n-1} in the polar coordinate."""
        psi = np.clip(self.psi_values(), 0.0, None)
        m = sphere_volume(self.dim - 1) * psi ** (self.dim - 1)
        m[0] = m[-1] = 0.0
        return m

    def volume(self) -> float:
        if self.variant == "round_sphere":
            return self.beta ** self.dim * sphere_volume(self.dim)
        if self.variant == "einstein":
            return self.volume_
        return quad(self.grid, self.measure())


def scalar_curvature_link(link: LinkGeometry) -> ScalarField:
    n = link.dim
    if link.variant == "round_sphere":
        return ScalarField(link.grid, np.full(len(link.grid), n * (n - 1) / link.beta ** 2))
    if link.variant == "einstein":
        return ScalarField(link.grid, np.full(len(link.grid), link.lambda_))
    return ScalarField(link.grid, warped_scalar_curvature(link.grid, link.psi.values, n))


def warped_scalar_curvature(grid: RadialGrid, psi: NDArray, n: int) -> NDArray:
    """R of d xi^2 + psi^2 g_{S^{n-1}}; pole values by even extrapolation."""
    if np.any(psi[1:-1] <= 0):
        raise ConelabError("degenerate_profile", "psi must be positive in the interior")
    d1 = grid.diff(psi, 1, (-1, -1))
    d2 = grid.diff(psi, 2, (-1, -1))
    R = np.empty_like(psi)
    inner = slice(1, -1)
    R[inner] = (n - 1) * ((n - 2) * (1 - d1[inner] ** 2) - 2 * psi[inner] * d2[inner]) / psi[inner] ** 2
    x = grid.nodes
    for end, idx in ((0, [1, 2, 3]), (-1, [-2, -3, -4])):
        dist = np.abs(x[idx] - x[end])
        coef = np.polyfit(dist ** 2, R[idx], 2)
        R[end] = coef[-1]
    return R


def link_problem(link: LinkGeometry, potential: Optional[NDArray] = None) -> SturmLiouvilleProblem:
    """Sturm-Liouville form of -4 Delta + R on invariant functions."""
    m = link.measure()
    R = scalar_curvature_link(link).values if potential is None else potential
    return SturmLiouvilleProblem(link.grid, m, 4.0 * m, R)


def lambda_link(link: LinkGeometry) -> float:
    if link.variant == "einstein":
        return link.lambda_
    lam, _ = eigen_smallest(link_problem(link))
    return lam


def ground_state(link: LinkGeometry) -> ScalarField:
    """Positive normalized minimizer of F (first eigenfunction of -4 Delta + R)."""
    _, u = eigen_smallest(link_problem(link))
    return u


@dataclass
class FunctionalQuery:
    tau: float
    dim: int

    def __post_init__(self):
        if not self.tau > 0:
            raise ConelabError("invalid_query", "tau must be positive")


def _as_values(u) -> NDArray:
    return u.values if isinstance(u, ScalarField) else np.asarray(u, dtype=float)


def w_functional_link(link: LinkGeometry, u, q: FunctionalQuery) -> float:
    """W in u-form, evaluated by sixth-order differences and Gregory quadrature."""
    grid = link.grid
    uv = _as_values(u)
    m = link.measure()
    mass = quad(grid, uv * uv * m)
    if abs(mass - 1.0) > 1e-6:
        raise ConelabError("not_normalized", f"int u^2 dv = {mass:.10g}")
    du = grid.diff(uv, 1, (1, 1))
    R = scalar_curvature_link(link).values
    u2 = uv * uv
    ent = np.where(u2 > 0, u2 * np.log(np.where(u2 > 0, u2, 1.0)), 0.0)
    n = link.dim
    integrand = q.tau * (4 * du ** 2 + R * u2) - ent
    return quad(grid, integrand * m) - n / 2 * math.log(4 * math.pi * q.tau) - n


def f_functional_link(link: LinkGeometry, u) -> float:
    """F = int (4|grad u|^2 + R u^2) dv for normalized u (u^2 = e^{-phi})."""
    grid = link.grid
    uv = _as_values(u)
    du = grid.diff(uv, 1, (1, 1))
    R = scalar_curvature_link(link).values
    return quad(grid, (4 * du ** 2 + R * uv * uv) * link.measure())


def nash_entropy_link(link: LinkGeometry, u) -> float:
    """N = -int u^2 log u^2 dv."""
    uv = _as_values(u)
    u2 = uv * uv
    ent = np.where(u2 > 0, u2 * np.log(np.where(u2 > 0, u2, 1.0)), 0.0)
    return -quad(link.grid, ent * link.measure())


@dataclass
class MuResult:
    value: float
    minimizer: ScalarField
    status: str
    label: str = "upper_bound"


def _w_objective(link: LinkGeometry, tau: float) -> EntropyFunctional:
    n = link.dim
    return EntropyFunctional(link_problem(link), tau, 1.0,
                             -n / 2 * math.log(4 * math.pi * tau) - n, label="W_link")


def _initial_guesses(link: LinkGeometry, prob: SturmLiouvilleProblem, tau: float):
    x = link.grid.nodes
    L = x[-1]
    yield normalize(prob, np.ones_like(x))
    if tau < link.length ** 2:
        for d in (x, L - x):
            yield normalize(prob, np.exp(-d ** 2 / (8 * tau)) + 1e-2)


def mu_link_detailed(link: LinkGeometry, q: FunctionalQuery, tolerance: float = 1e-11) -> MuResult:
    if link.variant == "einstein":
        model = link.round_model()
        if model is None:
            if q.tau >= link.shrinking_time:
                val = mu_einstein_closed_form(link, q)
                return MuResult(val, None, "closed_form", "exact")
            raise ConelabError("below_shrinking_time", "no geometry to minimize over below T_N")
        link = model
    obj = _w_objective(link, q.tau)
    best = None
    for init in _initial_guesses(link, obj.problem, q.tau):
        res = minimize_normalized(obj, init, tolerance=tolerance)
        if best is None or res.value < best.value:
            best = res
    return MuResult(best.value, best.minimizer, best.status)


def mu_link(link: LinkGeometry, q: FunctionalQuery, tolerance: float = 1e-11) -> float:
    return mu_link_detailed(link, q, tolerance).value


def nu_link(link: LinkGeometry, tau_grid: Sequence[float] = NU_TAU_GRID,
            tolerance: float = 1e-11):
    """Minimum of mu over a tau grid, refined by golden-section search in log tau."""
    taus = np.sort(np.asarray(list(tau_grid), dtype=float))
    if len(taus) == 0:
        raise ConelabError("empty_grid", "tau grid is empty")
    n = link.dim
    mus = np.array([mu_link(link, FunctionalQuery(t, n), tolerance) for t in taus])
    k = int(np.argmin(mus))
    if len(taus) < 3:
        return float(mus[k]), float(taus[k])
    lo = taus[max(k - 1, 0)]
    hi = taus[min(k + 1, len(taus) - 1)]
    res = minimize_scalar(lambda s: mu_link(link, FunctionalQuery(math.exp(s), n), tolerance),
                          bracket=None, bounds=(math.log(lo), math.log(hi)), method="bounded",
                          options={"xatol": 1e-4})
    if res.fun < mus[k]:
        return float(res.fun), float(math.exp(res.x))
    return float(mus[k]), float(taus[k])


def mu_einstein_closed_form(link: LinkGeometry, q: FunctionalQuery) -> float:
    if link.variant == "round_sphere":
        lam = link.dim * (link.dim - 1) / link.beta ** 2
        vol = link.volume()
        T = link.dim / (2 * lam)
    elif link.variant == "einstein":
        lam, vol, T = link.lambda_, link.volume_, link.shrinking_time
    else:
        raise ConelabError("invalid_link", "closed form needs an Einstein link")
    if q.tau < T * (1 - 1e-12):
        raise ConelabError("below_shrinking_time", f"tau {q.tau} < T_N {T}")
    n = link.dim
    return q.tau * lam + math.log(vol) - n / 2 * math.log(4 * math.pi * q.tau) - n


def einstein_mu_at_shrinking_time(link: LinkGeometry) -> float:
    n = link.dim
    T = link.shrinking_time if link.variant == "einstein" else link.beta ** 2 / (2 * (n - 1))
    return n / 2 + math.log(link.volume()) - n / 2 * math.log(4 * math.pi * T) - n


def mu_envelope_check(mu_samples: Iterable, lambda_: float, dim: int, tolerance: float = 0.0) -> dict:
    """Worst violation of mu(t1) >= mu(t2) + (t1-t2) lambda - (n/2) log(t1/t2), t1 > t2."""
    pts = sorted((float(t), float(m)) for t, m in mu_samples)
    taus = np.array([p[0] for p in pts])
    mus = np.array([p[1] for p in pts])
    worst, pair = 0.0, None
    for i in range(len(taus)):
        for j in range(i):
            rhs = mus[j] + (taus[i] - taus[j]) * lambda_ - dim / 2 * math.log(taus[i] / taus[j])
            v = rhs - mus[i]
            if v > worst:
                worst, pair = float(v), (float(taus[i]), float(taus[j]))
    return {"worst_violation": worst, "pair": pair, "samples": len(taus),
            "tolerance": tolerance, "passed": worst <= tolerance}


@dataclass
class MuEnvelope:
    lambda_: float
    offset_A: float
    dim: int

    def value(self, tau):
        return self.lambda_ * tau - self.offset_A - self.dim / 2 * log_plus(tau)

    @classmethod
    def fit(cls, taus, mus, lambda_: float, dim: int) -> "MuEnvelope":
        taus = np.asarray(taus, dtype=float)
        gap = lambda_ * taus - dim / 2 * log_plus(taus) - np.asarray(mus, dtype=float)
        return cls(lambda_, max(0.0, float(np.max(gap))), dim)


def mu_table(link: LinkGeometry, taus: Sequence[float], tolerance: float = 1e-11) -> NDArray:
    return np.array([mu_link(link, FunctionalQuery(float(t), link.dim), tolerance) for t in taus])


def envelope_for_link(link: LinkGeometry, taus: Sequence[float] = NU_TAU_GRID) -> MuEnvelope:
    lam = lambda_link(link)
    return MuEnvelope.fit(taus, mu_table(link, taus), lam, link.dim)


def h1_distance(link: LinkGeometry, u, v) -> float:
    w = _as_values(u) - _as_values(v)
    dw = link.grid.diff(w, 1, (1, 1))
    return math.sqrt(max(quad(link.grid, (w * w + dw * dw) * link.measure()), 0.0))


def minimizer_drift_check(link: LinkGeometry, tau_sequence: Sequence[float]) -> dict:
    taus = [float(t) for t in tau_sequence]
    if len(taus) < 3:
        raise ConelabError("insufficient_sampling", "need at least 3 tau values")
    u0 = ground_state(link)
    dists = []
    for t in taus:
        res = mu_link_detailed(link, FunctionalQuery(t, link.dim))
        dists.append(h1_distance(link, res.minimizer, u0))
    half = dists[len(dists) // 2:]
    monotone = all(b <= a + 1e-12 for a, b in zip(half, half[1:]))
    return {"taus": taus, "distances": dists, "non_increasing_tail": monotone}


def perturbed_sphere_profile(dim: int, coeffs: Sequence[float], nodes: int = 2048) -> LinkGeometry:
    """psi = sin xi (1 + sum c_k (1 - cos 2k xi)): smooth, closes at both poles."""
    x = np.linspace(0.0, math.pi, nodes)
    g = sum(c * (1 - np.cos(2 * (k + 1) * x)) for k, c in enumerate(coeffs))
    psi = np.sin(x) * (1 + g)
    psi[0] = 0.0
    psi[-1] = 0.0
    return LinkGeometry.profile(dim, psi, math.pi)
