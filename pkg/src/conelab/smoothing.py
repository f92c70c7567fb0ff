"""Warped-product smoothings of cones over round spheres.

Everything is radial on dr^2 + H(r)^2 g_{S^n} with H the warping against the
unit sphere; the cone over beta S^n is H = beta r and a smoothing with link
beta S^n and profile h has H = beta h.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.interpolate import CubicSpline

from .links import sphere_volume
from .numcore import ConelabError, RadialGrid, ScalarField, quad, uniform_weights

ETA_3 = 1.0 - math.log(2.0)
# reference windows for n = 3: the analytic bracket 2/e .. sqrt(2e/(e+2)) and the
# window where the sphere-perturbation bounds apply
ANALYTIC_WINDOW_3 = (0.74, 1.07)
PERTURBATION_WINDOW_3 = (0.77, 1.05)


# ---------------------------------------------------------------------------
# profiles

@dataclass
class SmoothingProfile:
    """h with h', h'' on [0, inf).

    variant "piecewise": h = r/beta on [0,1], a quadratic on [1, b] and slope 1 beyond.
    The "cone" branch (beta > 1) bends upward, the "euclidean" branch (beta < 1) downward;
    beta = 1 is the identity.  variant "delta": r * beta(delta/r^2) for a round link
    trajectory.  variant "custom": user callables.  scale > 0 dilates a piecewise
    profile, h_s(r) = s h(r/s), moving the cap radius to s.
    """
    variant: str
    beta: float = 1.0
    A: float = math.inf
    b: float = 1.0
    branch: str = "flat"
    delta: Optional[float] = None
    trajectory: Optional["RoundLinkTrajectory"] = None
    _h: Optional[Callable] = None
    _dh: Optional[Callable] = None
    _d2h: Optional[Callable] = None
    scale: float = 1.0

    def h(self, r: ArrayLike) -> NDArray:
        return self._eval(r, 0)

    def dh(self, r: ArrayLike) -> NDArray:
        return self._eval(r, 1)

    def d2h(self, r: ArrayLike) -> NDArray:
        return self._eval(r, 2)

    @property
    def breakpoints(self) -> tuple:
        if self.variant == "piecewise" and self.branch != "flat" and math.isfinite(self.A):
            return (self.scale, self.scale * self.b)
        return ()

    @property
    def reference_beta(self) -> float:
        """Radius of the link of the comparison cone (1 for Euclidean space)."""
        return self.beta if self.branch == "cone" else 1.0

    def _eval(self, r, k):
        r = np.asarray(r, dtype=float)
        if self.variant == "custom":
            return np.asarray((self._h, self._dh, self._d2h)[k](r), dtype=float)
        if self.variant == "delta":
            return self.trajectory.warping(r, self.delta, k)
        if self.scale != 1.0:
            base = replace(self, scale=1.0)._eval(r / self.scale, k)
            return base * self.scale ** (1 - k)
        beta, A, b = self.beta, self.A, self.b
        if self.branch == "flat":
            return (r, np.ones_like(r), np.zeros_like(r))[k]
        if math.isinf(A):
            # the A -> inf limit: the cap everywhere
            return (r / beta, np.full_like(r, 1 / beta), np.zeros_like(r))[k]
        sgn = 1.0 if self.branch == "cone" else -1.0
        hb = b / beta + sgn * (b - 1) ** 2 / (2 * beta * A)
        mid = (r > 1) & (r <= b)
        out_ = r > b
        if k == 0:
            y = r / beta
            y = np.where(mid, r / beta + sgn * (r - 1) ** 2 / (2 * beta * A), y)
            return np.where(out_, r - b + hb, y)
        if k == 1:
            y = np.full_like(r, 1 / beta)
            y = np.where(mid, 1 / beta + sgn * (r - 1) / (beta * A), y)
            return np.where(out_, 1.0, y)
        y = np.zeros_like(r)
        return np.where(mid, sgn / (beta * A), y)


def build_piecewise_h(beta: float, A: float, branch: str = "auto",
                      scale: float = 1.0) -> SmoothingProfile:
    """Euclidean cap of radius 1 glued C^1 to the cone over beta S^n.

    b = 1 + A|beta - 1|; the quadratic piece has h'' = +-1/(beta A) so that h'(b) = 1.
    """
    if not (beta > 0 and math.isfinite(beta)):
        raise ConelabError("invalid_transition", "beta must be positive")
    if not (A > 0 and math.isfinite(A)):
        raise ConelabError("invalid_transition", "A must be positive and finite")
    if branch == "auto":
        branch = "flat" if beta == 1 else ("cone" if beta > 1 else "euclidean")
    if branch == "flat":
        if beta != 1:
            raise ConelabError("invalid_transition", "the flat profile needs beta = 1")
        return SmoothingProfile("piecewise", 1.0, A, 1.0, "flat", scale=scale)
    b = 1 + A * (beta - 1) if branch == "cone" else 1 + A * (1 - beta)
    if b <= 1:
        raise ConelabError("invalid_transition", f"b = {b:.6g} <= 1")
    if not scale > 0:
        raise ConelabError("invalid_transition", "scale must be positive")
    return SmoothingProfile("piecewise", float(beta), float(A), float(b), branch, scale=float(scale))


def cap_limit_profile(beta: float) -> SmoothingProfile:
    """A -> inf limit of build_piecewise_h: h = r/beta everywhere."""
    branch = "cone" if beta > 1 else "euclidean"
    return SmoothingProfile("piecewise", float(beta), math.inf, math.inf, branch)


def custom_profile(h: Callable, dh: Callable, d2h: Callable) -> SmoothingProfile:
    return SmoothingProfile("custom", _h=h, _dh=dh, _d2h=d2h)


# ---------------------------------------------------------------------------
# delta family over a round link trajectory

@dataclass
class RoundLinkTrajectory:
    """beta(theta) of a family of round links, sampled; constant past the last sample."""
    theta: NDArray
    beta: NDArray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        if self.theta.ndim != 1 or len(self.theta) < 4 or np.any(np.diff(self.theta) <= 0):
            raise ConelabError("invalid_trajectory", "need at least 4 increasing times")
        if np.any(self.beta <= 0):
            raise ConelabError("invalid_trajectory", "radii must be positive")
        self._spline = CubicSpline(self.theta, self.beta)

    @classmethod
    def from_states(cls, states) -> "RoundLinkTrajectory":
        if any(s.variant != "round" for s in states):
            raise ConelabError("invalid_trajectory", "delta smoothing needs round link states")
        return cls(np.array([s.time for s in states]), np.array([s.beta for s in states]))

    @classmethod
    def exponential(cls, beta0: float, rate: float = 1.0, theta_max: float = 40.0,
                    samples: int = 4001) -> "RoundLinkTrajectory":
        """beta^2 = 1 + (beta0^2 - 1) e^{-rate theta}: converges to the unit sphere in C^k."""
        th = np.linspace(0.0, theta_max, samples)
        return cls(th, np.sqrt(1 + (beta0 ** 2 - 1) * np.exp(-rate * th)))

    def converged(self, tol: float = 1e-8) -> bool:
        """Differences decay: the last quarter moves less than tol and contracts."""
        d = np.abs(np.diff(self.beta))
        q = len(d) // 4
        tail = np.abs(self.beta[-q:] - self.beta[-1])
        head = np.abs(self.beta[:q] - self.beta[-1])
        return bool(tail.max() < tol or (tail.max() < 1e-3 * max(head.max(), 1e-300)))

    def derivs(self, theta: NDArray):
        t = np.clip(theta, self.theta[0], None)
        past = t >= self.theta[-1]
        tc = np.minimum(t, self.theta[-1])
        B = self._spline(tc)
        B1 = np.where(past, 0.0, self._spline(tc, 1))
        B2 = np.where(past, 0.0, self._spline(tc, 2))
        return B, B1, B2

    def warping(self, r: NDArray, delta: float, k: int) -> NDArray:
        """Derivatives of H(r) = r beta(delta/r^2)."""
        th = delta / r ** 2
        th1 = -2 * delta / r ** 3
        th2 = 6 * delta / r ** 4
        B, B1, B2 = self.derivs(th)
        if k == 0:
            return r * B
        if k == 1:
            return B + r * B1 * th1
        return 2 * B1 * th1 + r * (B2 * th1 ** 2 + B1 * th2)


def delta_family(trajectory: RoundLinkTrajectory, delta: float) -> SmoothingProfile:
    if not delta > 0:
        raise ConelabError("invalid_delta", "delta must be positive")
    return SmoothingProfile("delta", delta=float(delta), trajectory=trajectory, branch="delta")


# ---------------------------------------------------------------------------
# geometry

@dataclass
class DoublyWarpedGeometry:
    """dr^2 + h(r)^2 g_N over a round link N of radius link_beta (R^N = n(n-1)/beta^2).

    For the delta family h already carries the link radius and link_beta = 1.
    """
    profile: SmoothingProfile
    dim: int
    radial_grid: RadialGrid
    link_beta: Optional[float] = None

    def __post_init__(self):
        if self.link_beta is None:
            self.link_beta = self.profile.beta if self.profile.variant == "piecewise" else 1.0
        h = self.profile.h(self.radial_grid.nodes)
        inner = self.radial_grid.nodes > 0
        if np.any(h[inner] <= 0):
            raise ConelabError("degenerate", "h must be positive away from r = 0")

    @property
    def link_scalar(self) -> float:
        n = self.dim
        return n * (n - 1) / self.link_beta ** 2


def scalar_curvature_from_h(h, dh, d2h, link_scalar: float, n: int) -> NDArray:
    return (link_scalar - n * (n - 1) * dh ** 2 - 2 * n * h * d2h) / h ** 2


def doubly_warped_scalar_curvature(geom: DoublyWarpedGeometry) -> ScalarField:
    """R = (R^N - n(n-1)h'^2 - 2n h h'')/h^2 from exact per-piece derivatives."""
    r = geom.radial_grid.nodes
    p = geom.profile
    h, dh, d2h = p.h(r), p.dh(r), p.d2h(r)
    if np.any(h[r > 0] <= 0):
        raise ConelabError("degenerate", "h must be positive")
    R = np.zeros_like(r)
    pos = r > 0
    R[pos] = scalar_curvature_from_h(h[pos], dh[pos], d2h[pos], geom.link_scalar, geom.dim)
    if not np.all(pos):
        # r = 0: limit along the first piece, which is linear for the built profiles
        R[~pos] = R[pos][0]
    return ScalarField(geom.radial_grid, R)


def delta_smoothing_rest(geom: DoublyWarpedGeometry):
    """R_rest = R^M - R^{C(N(theta(r)))} on the geometry's radial grid.

    R^M is the warped-product curvature of H = r beta(delta/r^2), and the
    instantaneous cone over beta(theta) S^n has (n(n-1)/beta^2 - n(n-1))/r^2.
    """
    p = geom.profile
    if p.variant != "delta":
        raise ConelabError("invalid_profile", "delta_smoothing_rest needs a delta family")
    if not p.trajectory.converged():
        raise ConelabError("link_flow_not_ready", "link trajectory has not converged")
    r = geom.radial_grid.nodes
    if np.any(r <= 0):
        raise ConelabError("degenerate", "radial grid must avoid the tip")
    n = geom.dim
    H, H1, H2 = (p.trajectory.warping(r, p.delta, k) for k in range(3))
    RM = scalar_curvature_from_h(H, H1, H2, n * (n - 1), n)
    B = p.trajectory.derivs(p.delta / r ** 2)[0]
    RC = n * (n - 1) * (1 / B ** 2 - 1) / r ** 2
    rest = RM - RC
    return float(np.max(np.abs(rest))), ScalarField(geom.radial_grid, rest)


def delta_rest_sweep(trajectory: RoundLinkTrajectory, dim: int, deltas: Sequence[float],
                     r_window=(1.0, 10.0), nodes: int = 2001) -> dict:
    grid = RadialGrid.uniform(r_window[0], r_window[1], nodes)
    sups = []
    for d in deltas:
        geom = DoublyWarpedGeometry(delta_family(trajectory, d), dim, grid)
        sups.append(delta_smoothing_rest(geom)[0])
    ratios = [sups[i] / sups[i + 1] for i in range(len(sups) - 1)]
    return {"deltas": list(deltas), "sup_abs_rest": sups, "ratios": ratios,
            "monotone": bool(all(x >= y for x, y in zip(sups, sups[1:]))),
            "r_window": list(r_window)}


# ---------------------------------------------------------------------------
# radial W on dr^2 + H^2 g_{S^n}

@dataclass
class RadialProbe:
    """Smooth radial function on a cone in the scale-free variable x = rho / sqrt(tau).

    v(x) and dv(x) = dv/dx; on a cone at scale tau the probe is v(rho / sqrt(tau)).
    """
    v: Callable
    dv: Callable
    label: str = ""

    def at(self, rho, tau: float):
        st = math.sqrt(tau)
        x = rho / st
        return self.v(x), self.dv(x) / st


def gaussian_probe(bumps: Sequence = ()) -> RadialProbe:
    """e^{-x^2/8} (1 + sum a exp(-((x - c)/s)^2)) for bumps (a, c, s)."""
    def m(x):
        return 1.0 + sum(a * np.exp(-((x - c) / s) ** 2) for a, c, s in bumps)

    def v(x):
        return np.exp(-x ** 2 / 8) * m(x)

    def dv(x):
        dm = sum(-2 * a * (x - c) / s ** 2 * np.exp(-((x - c) / s) ** 2) for a, c, s in bumps)
        return np.exp(-x ** 2 / 8) * (dm - x / 4 * m(x))

    return RadialProbe(v, dv, f"gaussian{len(bumps)}")


def near_gaussian_probes(count: int, rng: np.random.Generator, amplitude: float = 0.3) -> list:
    """The heat-kernel Gaussian and count-1 perturbations by up to 3 smooth bumps of total size < amplitude."""
    out = [gaussian_probe()]
    for _ in range(count - 1):
        k = int(rng.integers(1, 4))
        bumps = [(rng.uniform(-amplitude, amplitude) / k, rng.uniform(0.0, 4.0),
                  rng.uniform(0.5, 2.0)) for _ in range(k)]
        out.append(gaussian_probe(bumps))
    return out


def _pieces(breaks: Sequence[float], r_max: float, nodes: int):
    edges = [0.0] + [x for x in breaks if 0 < x < r_max] + [r_max]
    out = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        m = max(33, int(nodes * (hi - lo) / r_max) | 1)
        x = np.linspace(lo, hi, m)
        out.append((x, uniform_weights(m, (hi - lo) / (m - 1))))
    return out


def _xlogx(x):
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] * np.log(x[pos])
    return out


def radial_w_terms(H, H1, H2, w, dw, r_weights, tau: float, n: int):
    """(mass, W) of radial w on dr^2 + H^2 g_{S^n} in the (4 pi tau)^{-(n+1)/2} normalization."""
    kappa = sphere_volume(n) * (4 * math.pi * tau) ** (-(n + 1) / 2)
    meas = kappa * H ** n * r_weights
    R = np.zeros_like(H)
    pos = H > 0
    R[pos] = scalar_curvature_from_h(H[pos], H1[pos], H2[pos], n * (n - 1), n)
    mass = float(np.sum(meas * w * w))
    W = float(np.sum(meas * (tau * (4 * dw ** 2 + R * w * w) - _xlogx(w * w) - (n + 1) * w * w)))
    return mass, W


def probe_normalization(probe: RadialProbe, beta_ref: float, tau: float, n: int,
                        r_max: float, nodes: int = 4001) -> float:
    """Constant c with c * v normalized on the comparison cone (H = beta_ref rho)."""
    mass = 0.0
    for x, wt in _pieces((), r_max, nodes):
        H = beta_ref * x
        m, _ = radial_w_terms(H, np.full_like(x, beta_ref), np.zeros_like(x), *probe.at(x, tau),
                              wt, tau, n)
        mass += m
    return 1 / math.sqrt(mass)


def cone_w(probe: RadialProbe, beta_ref: float, tau: float, n: int, r_max: float,
           scale: float = 1.0, nodes: int = 4001):
    mass, W = 0.0, 0.0
    for x, wt in _pieces((), r_max, nodes):
        m, w_ = radial_w_terms(beta_ref * x, np.full_like(x, beta_ref), np.zeros_like(x),
                               *(scale * q for q in probe.at(x, tau)), wt, tau, n)
        mass += m
        W += w_
    return mass, W


def smoothed_w(probe: RadialProbe, profile: SmoothingProfile, tau: float, n: int, r_max: float,
               scale: float = 1.0, nodes: int = 4001):
    """W on the smoothing of the pushforward w(r) = sqrt(rho'(r)) v(rho(r)), rho = beta h / beta_ref."""
    beta_N = profile.beta if profile.variant == "piecewise" else 1.0
    c = beta_N / profile.reference_beta
    mass, W = 0.0, 0.0
    for x, wt in _pieces(profile.breakpoints, r_max, nodes):
        h, h1, h2 = profile.h(x), profile.dh(x), profile.d2h(x)
        if profile.breakpoints:
            # h'' jumps at the breakpoints and is constant on each piece: take the
            # endpoint values from the piece's own interior
            h2[0], h2[-1] = h2[1], h2[-2]
        rho, rho1, rho2 = c * h, c * h1, c * h2
        sq = np.sqrt(rho1)
        v, dv = probe.at(rho, tau)
        w = sq * v * scale
        dw = (rho2 / (2 * sq) * v + rho1 * sq * dv) * scale
        m, w_ = radial_w_terms(beta_N * h, beta_N * h1, beta_N * h2, w, dw, wt, tau, n)
        mass += m
        W += w_
    return mass, W


def pushforward_test_function(v: ScalarField, profile: SmoothingProfile,
                              r_grid: Optional[RadialGrid] = None) -> ScalarField:
    """w(r) = sqrt(rho'(r)) v(rho(r)) with rho = beta h / beta_ref, by spline interpolation of v."""
    beta_N = profile.beta if profile.variant == "piecewise" else 1.0
    c = beta_N / profile.reference_beta
    grid = v.grid if r_grid is None else r_grid
    r = grid.nodes
    rho = c * profile.h(r)
    rho1 = c * profile.dh(r)
    if np.any(rho > v.grid.nodes[-1] * (1 + 1e-12)):
        raise ConelabError("grid_too_short", "image of the radial grid leaves the domain of v")
    spl = CubicSpline(v.grid.nodes, v.values)
    return ScalarField(grid, np.sqrt(rho1) * spl(rho))


# ---------------------------------------------------------------------------
# gap checks

def _r_max(profile: SmoothingProfile, tau: float) -> float:
    # probes are Gaussians at scale sqrt(8 tau); beyond 16 sqrt(tau) the weight is below e^-30
    # rho = beta h / beta_ref >= r / max(beta, 1) for both branches
    return max(profile.beta, 1.0) * 16.0 * math.sqrt(tau)


def smoothing_gap_check(profile: SmoothingProfile, probes: Sequence[RadialProbe],
                        tau_grid: Sequence[float], n: int = 3, c: float = 0.0,
                        nodes: int = 4001) -> dict:
    """Delta = W^M(pushforward v) - W^{ref}(v) over probes and tau.

    The reference is the cone over beta S^n for the cone branch and Euclidean
    space for the euclidean branch; the reported bound is -(n log beta + c/A)
    for the cone branch and n log beta - c/A for the euclidean branch.
    """
    beta = profile.beta
    if profile.branch == "cone":
        bound = -(n * math.log(beta) + c / profile.A)
    elif profile.branch == "euclidean":
        bound = n * math.log(beta) - c / profile.A
    else:
        bound = 0.0
    deltas, mass_err = [], 0.0
    for tau in tau_grid:
        r_max = _r_max(profile, tau)
        for p in probes:
            s = probe_normalization(p, profile.reference_beta, tau, n, r_max, nodes)
            mc, Wc = cone_w(p, profile.reference_beta, tau, n, r_max, s, nodes)
            mm, Wm = smoothed_w(p, profile, tau, n, r_max, s, nodes)
            mass_err = max(mass_err, abs(mm - mc))
            deltas.append(Wm - Wc)
    d = np.array(deltas).reshape(len(tau_grid), len(probes))
    worst = float(d.min())
    return {"branch": profile.branch, "beta": beta, "A": profile.A, "n": n,
            "deltas": d, "worst_delta": worst, "bound": bound,
            "holds": bool(worst > bound if profile.branch != "flat" else abs(worst) < 1e-8),
            "mass_error": mass_err, "tau_grid": list(tau_grid),
            "tau_independent_bound": True}


def smoothing_gap_sweep(beta: float, A_values: Sequence[float], probes: Sequence[RadialProbe],
                        tau_grid: Sequence[float], n: int = 3, nodes: int = 4001) -> dict:
    """Gap over an A-sweep, the limit A -> inf (cap everywhere), a fitted c and the decay exponent.

    c is fitted at the smallest A as the least constant making the bound hold
    there, then checked at every A.  The residual Delta(A) - Delta_inf is fit to
    a power of A for every (tau, probe); the median slope is reported, along
    with the slope between the two largest A.
    """
    A_values = sorted(A_values)
    runs = [smoothing_gap_check(build_piecewise_h(beta, A), probes, tau_grid, n, 0.0, nodes)
            for A in A_values]
    # A -> inf: h = r/beta everywhere, i.e. the Euclidean cap on the probe support
    limit_profile = cap_limit_profile(beta)
    lim = smoothing_gap_check(limit_profile, probes, tau_grid, n, 0.0, nodes)["deltas"]
    sign = 1.0 if beta > 1 else -1.0
    A0 = A_values[0]
    if beta > 1:
        c = max(0.0, float(A0 * np.max(-runs[0]["deltas"] - n * math.log(beta))))
        ok = [bool(np.all(r["deltas"] > -(n * math.log(beta) + c / A) - 1e-12))
              for r, A in zip(runs, A_values)]
    else:
        c = max(0.0, float(A0 * np.max(n * math.log(beta) - runs[0]["deltas"])))
        ok = [bool(np.all(r["deltas"] > n * math.log(beta) - c / A - 1e-12))
              for r, A in zip(runs, A_values)]
    R = np.array([np.abs(r["deltas"] - lim).ravel() for r in runs])
    resid = R.max(axis=1)
    # per (tau, probe) least-squares slope of log residual against log A; the median is reported
    keep = np.all(R > 1e-13, axis=0)
    exponent, tail = None, None
    if keep.any():
        logs = np.log(R[:, keep])
        slopes = np.polyfit(np.log(A_values), logs, 1)[0]
        exponent = float(np.median(slopes))
        tail = float(np.median((logs[-1] - logs[-2]) / math.log(A_values[-1] / A_values[-2])))
    return {"beta": beta, "n": n, "A_values": A_values, "c": c, "holds_per_A": ok,
            "holds": bool(all(ok)), "worst_delta_per_A": [r["worst_delta"] for r in runs],
            "residual_per_A": resid.tolist(), "residual_exponent": exponent,
            "residual_exponent_tail": tail,
            "delta_limit_worst": float(lim.min()), "sign": sign}


# ---------------------------------------------------------------------------
# beta window

def cone_nu_estimate(beta: float, n: int) -> float:
    """Lower estimate for nu of the cone over beta S^n.

    n log beta from the volume ratio, plus for beta > 1 the radial Hardy loss
    ((n+1)/2) log(1 - n(1 - beta^-2)/(n-1)); -inf once the Hardy term is exhausted.
    """
    est = n * math.log(beta)
    if beta > 1:
        x = 1 - n * (1 - beta ** -2) / (n - 1)
        if x <= 0:
            return -math.inf
        est += (n + 1) / 2 * math.log(x)
    return est


def smoothed_nu_estimate(beta: float, n: int, A: float, c: float = 1.0) -> float:
    if beta == 1:
        return 0.0
    if beta > 1:
        return cone_nu_estimate(beta, n) - (n * math.log(beta) + c / A)
    return n * math.log(beta) - c / A


def beta_window_scan(dim: int, beta_range=(0.5, 1.5), A: float = 1e6, eta: float = ETA_3,
                     points: int = 2001, c: float = 1.0) -> dict:
    """Maximal interval around beta = 1 on which the smoothed nu estimate is >= -eta."""
    if eta is None:
        raise ConelabError("missing_eta", "eta must be configured for this dimension")
    lo, hi = beta_range
    betas = np.unique(np.concatenate([np.linspace(lo, hi, points), [1.0]]))
    est = np.array([smoothed_nu_estimate(float(b), dim, A, c) for b in betas])
    inside = est >= -eta
    i1 = int(np.searchsorted(betas, 1.0))
    window = None
    if lo <= 1 <= hi and inside[i1]:
        j, k = i1, i1
        while j > 0 and inside[j - 1]:
            j -= 1
        while k < len(betas) - 1 and inside[k + 1]:
            k += 1
        window = (float(betas[j]), float(betas[k]))
    return {"dim": dim, "manifold_dim": dim + 1, "eta": eta, "A": A, "c": c,
            "window": window, "betas": betas.tolist(), "estimates": est.tolist(),
            "reference_windows": {"analytic": ANALYTIC_WINDOW_3, "perturbation": PERTURBATION_WINDOW_3}
            if dim == 3 else {},
            "dimension_caveat": dim == 3}
