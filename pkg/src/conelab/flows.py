"""Ricci flow and its renormalizations on rotationally symmetric spheres.

A profile state is g = a^2 dxi^2 + psi^2 g_{S^{n-1}} on xi in [0, pi], kept in
the conformal gauge a = e^w, psi = e^w sin xi.  Every rotationally symmetric
metric has this form, w is smooth and even across both poles, and a gauge
vector field v d/dxi keeps the flow inside the gauge.  Round spheres are
carried by their radius and advanced by the exact ODE.

The coupled potential equation is backward parabolic, so a transported
potential is not stepped forward: `integrate_flow` runs the metric forward,
then solves the conjugate heat equation for u = e^{-phi} backward in time.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .links import LinkGeometry, ball_volume, sphere_volume
from .numcore import ConelabError, RadialGrid, ScalarField, SturmLiouvilleProblem, eigen_smallest, quad

log = logging.getLogger(__name__)

ALPHA_RULES = ("none", "volume_preserving", "shrinking_time_preserving", "fixed")
POTENTIAL_MODES = ("transported", "reminimized")
ROUNDNESS_THRESHOLD = 1e-3
EVEN, ODD = (1, 1), (-1, -1)


@dataclass(frozen=True)
class FlowConfig:
    alpha_rule: str = "none"
    alpha: Optional[float] = None
    dt_safety: float = 0.2
    t_end: float = 0.1
    monitor_set: tuple = ()
    potential_mode: str = "transported"
    shrinking_time: Optional[float] = None

    def __post_init__(self):
        if self.alpha_rule not in ALPHA_RULES:
            raise ConelabError("invalid_config", f"unknown alpha rule {self.alpha_rule!r}")
        if self.alpha_rule == "fixed" and self.alpha is None:
            raise ConelabError("invalid_config", "fixed alpha rule needs alpha")
        if not 0 < self.dt_safety <= 0.5:
            raise ConelabError("invalid_config", "dt_safety must lie in (0, 0.5]")
        if self.potential_mode not in POTENTIAL_MODES:
            raise ConelabError("invalid_config", f"unknown potential mode {self.potential_mode!r}")


@dataclass
class Curvatures:
    k_rad: NDArray      # sectional curvature of planes containing the radial direction
    k_tan: NDArray      # sectional curvature of planes tangent to the orbit spheres
    ric_rad: NDArray
    ric_tan: NDArray
    scalar: NDArray
    measure: NDArray    # dv / dxi
    psi_ratio: NDArray  # psi_s / psi at interior nodes (unused at the poles)
    psi_s: NDArray


_FD_CACHE: dict = {}


def fd_matrices(grid: RadialGrid):
    """Dense first and second derivative matrices with even reflection at both ends."""
    key = (len(grid), float(grid.nodes[0]), float(grid.nodes[-1]))
    if key not in _FD_CACHE:
        eye = np.eye(len(grid))
        _FD_CACHE[key] = (grid.diff(eye, 1, EVEN), grid.diff(eye, 2, EVEN))
    return _FD_CACHE[key]


def _cumulative(grid: RadialGrid, values: NDArray) -> NDArray:
    return CubicSpline(grid.nodes, values).antiderivative()(grid.nodes)


@dataclass(frozen=True, eq=False)
class FlowState:
    time: float
    dim: int
    variant: str                     # round | profile | flat
    beta: Optional[float] = None
    grid: Optional[RadialGrid] = None
    a: Optional[NDArray] = None
    psi: Optional[NDArray] = None
    phi: Optional[NDArray] = None    # potential on the grid; None for round states (constant)
    w: Optional[NDArray] = None      # conformal factor of profile states
    normalization: float = 1.0
    alpha: float = 0.0

    # -- constructors ----------------------------------------------------
    @classmethod
    def round(cls, dim: int, beta: float, time: float = 0.0) -> "FlowState":
        if beta <= 0:
            raise ConelabError("invalid_state", "radius must be positive")
        return cls(time, dim, "round", beta=float(beta))

    @classmethod
    def conformal(cls, dim: int, w: ArrayLike, phi: Optional[ArrayLike] = None,
                  time: float = 0.0) -> "FlowState":
        """Profile state e^{2w}(dxi^2 + sin^2 xi g_{S^{n-1}}) on a uniform grid over [0, pi]."""
        w = np.asarray(w, dtype=float)
        grid = RadialGrid.uniform(0.0, math.pi, len(w))
        a = np.exp(w)
        psi = a * np.sin(grid.nodes)
        psi[0] = psi[-1] = 0.0
        st = cls(time, dim, "profile", grid=grid, a=a, psi=psi, w=w)
        st._check()
        return st.with_potential(phi)

    @classmethod
    def round_profile(cls, dim: int, beta: float, nodes: int = 65) -> "FlowState":
        return cls.conformal(dim, np.full(nodes, math.log(beta)))

    @classmethod
    def perturbed_sphere(cls, dim: int, coeffs: Sequence[float], nodes: int = 65,
                         beta: float = 1.0) -> "FlowState":
        """Conformal factor w = log beta + sum c_k cos((k+1) xi)."""
        x = np.linspace(0.0, math.pi, nodes)
        w = math.log(beta) + sum(c * np.cos((k + 1) * x) for k, c in enumerate(coeffs))
        return cls.conformal(dim, w)

    @classmethod
    def from_profile(cls, dim: int, psi: ArrayLike, length: float, nodes: int = 65) -> "FlowState":
        """Arclength profile psi on [0, length]; see `from_link`."""
        return cls.from_link(LinkGeometry.profile(dim, psi, length), nodes)

    @classmethod
    def flat(cls, dim: int, radius: float = 10.0, nodes: int = 257) -> "FlowState":
        """Euclidean ball of the given radius; static under every flow."""
        grid = RadialGrid.uniform(0.0, radius, nodes)
        return cls(0.0, dim, "flat", grid=grid, a=np.ones(nodes), psi=grid.nodes.copy(),
                   phi=np.zeros(nodes))

    @classmethod
    def from_link(cls, link: LinkGeometry, nodes: int = 65) -> "FlowState":
        """Conformal-gauge state of a round or profile link.

        With d zeta = ds/psi the coordinate xi = 2 arctan(e^zeta) makes the metric
        conformal to the unit sphere; the log singularities of zeta at the poles
        are split off against the round profile of the same length.
        """
        if link.variant == "round":
            return cls.round(link.dim, link.beta)
        if link.variant != "profile":
            raise ConelabError("invalid_state", "only round and profile links can be flowed")
        s = link.grid.nodes
        L = link.length
        psi = link.psi_values()
        k = math.pi / L
        reg = np.zeros_like(s)
        inner = slice(1, -1)
        reg[inner] = 1 / psi[inner] - k / np.sin(k * s[inner])
        for end, idx in ((0, [1, 2, 3]), (-1, [-2, -3, -4])):
            reg[end] = np.polyval(np.polyfit(s[idx] - s[end], reg[idx], 2), 0.0)
        G = CubicSpline(s, reg).antiderivative()(s)
        c = -(G[0] + G[-1]) / 2
        half = np.tan(k * s[inner] / 2) * np.exp(G[inner] + c)
        xi = np.concatenate(([0.0], 2 * np.arctan(half), [math.pi]))
        w = np.empty_like(s)
        w[inner] = np.log(psi[inner] / np.sin(xi[inner]))
        w[0] = math.log(1 / k) - (G[0] + c)
        w[-1] = math.log(1 / k) + (G[-1] + c)
        target = np.linspace(0.0, math.pi, nodes)
        return cls.conformal(link.dim, CubicSpline(xi, w)(target))

    def _check(self):
        if self.variant != "profile":
            return
        if not np.all(np.isfinite(self.w)) or np.any(self.a <= 0):
            raise ConelabError("flow_singular", f"profile degenerates at t = {self.time:.10g}",
                               time=self.time)

    def with_potential(self, phi: Optional[ArrayLike]) -> "FlowState":
        """Attach a potential, shifted so that int e^{-phi} dv = 1."""
        if self.variant == "round":
            return self
        if phi is None:
            phi = np.zeros(len(self.grid))
        phi = np.asarray(phi, dtype=float)
        mass = quad(self.grid, np.exp(-phi) * self.curvatures.measure)
        return replace(self, phi=phi + math.log(mass), normalization=1.0)

    def as_profile(self, nodes: int = 129) -> "FlowState":
        if self.variant != "round":
            return self
        st = FlowState.round_profile(self.dim, self.beta, nodes)
        return replace(st, time=self.time, alpha=self.alpha)

    def with_w(self, w: NDArray, time: float, alpha: float) -> "FlowState":
        a = np.exp(w)
        psi = a * np.sin(self.grid.nodes)
        psi[0] = psi[-1] = 0.0
        st = FlowState(time, self.dim, "profile", grid=self.grid, a=a, psi=psi, w=w, alpha=alpha)
        st._check()
        return st

    # -- geometry --------------------------------------------------------
    @cached_property
    def curvatures(self) -> Curvatures:
        n = self.dim
        if self.variant == "round":
            k = np.array([1.0 / self.beta ** 2])
            nan = np.array([np.nan])
            return Curvatures(k, k, (n - 1) * k, (n - 1) * k, n * (n - 1) * k, nan, nan, nan)
        if self.variant == "flat":
            z = np.zeros(len(self.grid))
            ratio = np.zeros_like(z)
            ratio[1:] = 1.0 / self.psi[1:]
            return Curvatures(z, z, z, z, z, sphere_volume(n - 1) * self.psi ** (n - 1), ratio,
                              np.ones_like(z))
        D1, D2 = fd_matrices(self.grid)
        x = self.grid.nodes
        w = self.w
        w_x, w_xx = D1 @ w, D2 @ w
        inner = slice(1, -1)
        cot = np.zeros_like(x)
        cot[inner] = 1 / np.tan(x[inner])
        c = w_x * cot
        c[0], c[-1] = w_xx[0], w_xx[-1]
        e2 = np.exp(-2 * w)
        k_rad = e2 * (1 - w_xx - c)
        k_tan = e2 * (1 - 2 * c - w_x ** 2)
        psi_s = np.cos(x) + w_x * np.sin(x)
        ratio = np.zeros_like(x)
        ratio[inner] = np.exp(-w[inner]) * (cot[inner] + w_x[inner])
        ric_rad = (n - 1) * k_rad
        ric_tan = k_rad + (n - 2) * k_tan
        scalar = 2 * (n - 1) * k_rad + (n - 1) * (n - 2) * k_tan
        measure = sphere_volume(n - 1) * self.psi ** (n - 1) * self.a
        return Curvatures(k_rad, k_tan, ric_rad, ric_tan, scalar, measure, ratio, psi_s)

    @cached_property
    def gauge(self) -> NDArray:
        """v with V = v d/dxi keeping the flow conformal: v/sin xi = (n-2) int_0^xi (K_rad - K_tan)/sin."""
        if self.variant != "profile" or self.dim == 2:
            return np.zeros(1 if self.grid is None else len(self.grid))
        return (self.dim - 2) * np.sin(self.grid.nodes) * self._gauge_integral

    @cached_property
    def _gauge_integral(self) -> NDArray:
        c = self.curvatures
        x = self.grid.nodes
        dens = np.zeros_like(x)
        dens[1:-1] = (c.k_rad - c.k_tan)[1:-1] / np.sin(x[1:-1])
        return _cumulative(self.grid, dens)

    @property
    def volume(self) -> float:
        if self.variant == "round":
            return sphere_volume(self.dim) * self.beta ** self.dim
        return quad(self.grid, self.curvatures.measure)

    @property
    def sup_rm(self) -> float:
        c = self.curvatures
        if self.dim == 2:
            return float(np.max(np.abs(c.k_rad)))
        return float(max(np.max(np.abs(c.k_rad)), np.max(np.abs(c.k_tan))))

    @property
    def scalar_average(self) -> float:
        c = self.curvatures
        if self.variant == "round":
            return float(c.scalar[0])
        return quad(self.grid, c.scalar * c.measure) / self.volume

    @property
    def beta_sq(self) -> float:
        """Squared radius of the round sphere with the same volume."""
        if self.variant == "round":
            return self.beta ** 2
        return (self.volume / sphere_volume(self.dim)) ** (2 / self.dim)

    @property
    def roundness(self) -> float:
        """Max relative deviation of (1 - psi_s^2)/psi^2 from its mean over interior nodes."""
        if self.variant == "round":
            return 0.0
        k = self.curvatures.k_tan[1:-1]
        m = float(np.mean(k))
        return float(np.max(np.abs(k - m)) / abs(m))

    @property
    def link(self) -> LinkGeometry:
        if self.variant == "round":
            return LinkGeometry.round_sphere(self.dim, self.beta)
        if self.variant != "profile":
            raise ConelabError("invalid_state", "flat states have no closed link")
        x = self.grid.nodes
        s = CubicSpline(x, self.a).antiderivative()(x)
        L = float(s[-1])
        s_new = np.linspace(0.0, L, len(x))
        x_of_s = CubicSpline(s, x)(s_new)
        psi = CubicSpline(x, self.psi)(x_of_s)
        psi[0] = psi[-1] = 0.0
        return LinkGeometry.profile(self.dim, psi, L)

    @property
    def potential_phi(self) -> Optional[ScalarField]:
        if self.phi is None:
            return None
        return ScalarField(self.grid, self.phi, ("pole_regular", "pole_regular"))


# ---------------------------------------------------------------------------
# alpha rules and stepping

def alpha_for(state: FlowState, config: FlowConfig) -> float:
    rule = config.alpha_rule
    if rule == "none":
        return 0.0
    if rule == "fixed":
        return float(config.alpha)
    if rule == "volume_preserving":
        return state.scalar_average
    T = config.shrinking_time
    if T is None:
        raise ConelabError("invalid_config", "shrinking_time_preserving needs the shrinking time")
    return state.dim / (2 * T)


def stable_dt(state: FlowState, config: FlowConfig) -> float:
    """Explicit-scheme step: dt_safety * min(a dxi)^2 (round states: a fixed fraction of beta^2)."""
    if state.variant == "round":
        return config.dt_safety * 1e-3 * state.beta ** 2
    if state.variant == "flat":
        return config.dt_safety * state.grid.step ** 2
    return config.dt_safety * float(np.min(state.a) * state.grid.step) ** 2


def _w_rhs(state: FlowState, alpha: float) -> NDArray:
    c = state.curvatures
    n = state.dim
    rhs = -c.ric_tan + alpha / n
    if n > 2:
        rhs = rhs + (n - 2) * c.psi_s * state._gauge_integral
    return rhs


def _round_advance(beta_sq: float, n: int, alpha_rule: str, alpha: float, dt: float) -> float:
    """Exact beta^2 after dt under d(beta^2)/dt = -2(n-1) + (2 alpha/n) beta^2."""
    c = 2 * (n - 1)
    if alpha_rule == "volume_preserving":
        return beta_sq
    k = 2 * alpha / n
    if k == 0:
        return beta_sq - c * dt
    return (beta_sq - c / k) * math.exp(k * dt) + c / k


def _reminimized_phi(state: FlowState) -> NDArray:
    c = state.curvatures
    m = c.measure
    p = 4 * sphere_volume(state.dim - 1) * state.psi ** (state.dim - 1) / state.a
    _, u = eigen_smallest(SturmLiouvilleProblem(state.grid, m, p, c.scalar))
    return -2 * np.log(u.values)


def flow_step(state: FlowState, config: FlowConfig, dt: float) -> FlowState:
    """One step of d_t g = -2(Ric - (alpha/n) g).

    The potential is re-minimized in "reminimized" mode; in "transported" mode a
    spatially constant potential stays constant (exact) and any other shape is
    only renormalized here, the transported values coming from `integrate_flow`.
    """
    n = state.dim
    limit = stable_dt(state, config)
    if dt > limit * (1 + 1e-12):
        raise ConelabError("unstable_step", f"dt {dt:.3e} exceeds the stability limit {limit:.3e}")
    alpha = alpha_for(state, config)
    t_new = state.time + dt
    if state.variant == "round":
        b2 = _round_advance(state.beta ** 2, n, config.alpha_rule, alpha, dt)
        if b2 <= 0:
            raise ConelabError("past_extinction", f"round sphere extinct before t = {t_new:.10g}",
                               time=t_new)
        return FlowState(t_new, n, "round", beta=math.sqrt(b2), alpha=alpha)
    if state.variant == "flat":
        return replace(state, time=t_new, alpha=alpha)
    k1 = _w_rhs(state, alpha)
    mid = state.with_w(state.w + dt * k1, t_new, alpha)
    alpha_mid = alpha_for(mid, config) if config.alpha_rule == "volume_preserving" else alpha
    k2 = _w_rhs(mid, alpha_mid)
    new = state.with_w(state.w + 0.5 * dt * (k1 + k2), t_new, alpha)
    if config.potential_mode == "reminimized":
        return new.with_potential(_reminimized_phi(new))
    phi = state.phi if state.phi is not None else np.zeros(len(state.grid))
    if np.ptp(phi) <= 1e-12 * max(1.0, float(np.max(np.abs(phi)))):
        phi = np.zeros_like(phi)
    out = new.with_potential(phi)
    drift = abs(quad(new.grid, np.exp(-phi) * new.curvatures.measure) - 1)
    log.debug("t=%.6g normalization drift %.3e", t_new, drift)
    return out


def ricci_flow_round_ode(beta0: float, dim: int, t: float) -> FlowState:
    T = beta0 ** 2 / (2 * (dim - 1))
    if t >= T:
        raise ConelabError("past_extinction", f"t = {t} is past the extinction time {T}", time=t)
    return FlowState(t, dim, "round", beta=math.sqrt(beta0 ** 2 - 2 * (dim - 1) * t))


# ---------------------------------------------------------------------------
# trajectories and the backward potential solve

def _laplacian_matrix(state: FlowState, D1: NDArray, D2: NDArray) -> NDArray:
    n = state.dim
    c = state.curvatures
    a2 = state.a ** 2
    w_x = D1 @ state.w
    L = D2 / a2[:, None] + ((-w_x + (n - 1) * c.psi_ratio * state.a) / a2)[:, None] * D1
    for end in (0, -1):
        L[end] = n * D2[end] / a2[end]
    return L


def _backward_potential(states: list, terminal_phi: Optional[NDArray]) -> list:
    """u = e^{-phi} with (d_t + Delta - R + alpha) u = 0, solved from the last state backward."""
    grid = states[-1].grid
    eye = np.eye(len(grid))
    D1, D2 = fd_matrices(grid)
    last = states[-1].with_potential(terminal_phi)
    u = np.exp(-last.phi)
    out = [last]

    def op(st):
        # conjugate heat operator in the moving gauge: Delta - (R - alpha) - v d/dxi
        return (_laplacian_matrix(st, D1, D2) - np.diag(st.curvatures.scalar - st.alpha)
                - st.gauge[:, None] * D1)

    L_next = op(states[-1])
    for k in range(len(states) - 2, -1, -1):
        st = states[k]
        dt = states[k + 1].time - st.time
        L_k = op(st)
        u = np.linalg.solve(eye - 0.5 * dt * L_k, u + 0.5 * dt * (L_next @ u))
        if np.any(u <= 0):
            raise ConelabError("flow_singular", "backward potential lost positivity", time=st.time)
        mass = quad(grid, u * st.curvatures.measure)
        u = u / mass
        out.append(replace(st, phi=-np.log(u), normalization=mass))
        L_next = L_k
    return out[::-1]


def integrate_flow(state: FlowState, config: FlowConfig, t_end: Optional[float] = None,
                   terminal_phi: Optional[ArrayLike] = None, max_steps: int = 2_000_000) -> list:
    """All states of the flow from state.time to t_end (inclusive) with stable steps.

    In transported mode the potentials along a profile trajectory solve the
    conjugate heat equation backward from `terminal_phi` (default constant).
    """
    t_end = config.t_end if t_end is None else t_end
    states = [state if state.variant == "round" else state.with_potential(state.phi)]
    cur = states[0]
    steps = 0
    while cur.time < t_end - 1e-14 * max(1.0, t_end):
        dt = min(stable_dt(cur, config), t_end - cur.time)
        cur = flow_step(cur, config, dt)
        states.append(cur)
        steps += 1
        if steps > max_steps:
            raise ConelabError("too_many_steps", f"stopped at t = {cur.time:.6g}")
    if config.potential_mode == "transported" and state.variant == "profile":
        phi_T = None if terminal_phi is None else np.asarray(terminal_phi, dtype=float)
        states = _backward_potential(states, phi_T)
    return states


# ---------------------------------------------------------------------------
# functionals along a trajectory

def _phi_derivs(state: FlowState):
    D1, D2 = fd_matrices(state.grid)
    a = state.a
    f_x, f_xx = D1 @ state.phi, D2 @ state.phi
    f_s = f_x / a
    f_ss = (f_xx - f_x * (D1 @ state.w)) / a ** 2
    return f_s, f_ss


def f_functional(state: FlowState) -> float:
    n = state.dim
    if state.variant == "round":
        return n * (n - 1) / state.beta ** 2
    c = state.curvatures
    f_s, _ = _phi_derivs(state)
    return quad(state.grid, (f_s ** 2 + c.scalar) * np.exp(-state.phi) * c.measure)


def w_functional(state: FlowState, tau: float) -> float:
    """W(f, g, tau) with (4 pi tau)^{-n/2} e^{-f} = e^{-phi}."""
    n = state.dim
    shift = -n / 2 * math.log(4 * math.pi * tau)
    if state.variant == "round":
        return tau * n * (n - 1) / state.beta ** 2 + math.log(state.volume) + shift - n
    c = state.curvatures
    f_s, _ = _phi_derivs(state)
    u = np.exp(-state.phi)
    return quad(state.grid, (tau * (f_s ** 2 + c.scalar) + state.phi + shift - n) * u * c.measure)


def ric_hess_norm_sq(state: FlowState) -> float:
    """int |Ric + Hess phi|^2 e^{-phi} dv."""
    n = state.dim
    if state.variant == "round":
        return n * ((n - 1) / state.beta ** 2) ** 2
    c = state.curvatures
    f_s, f_ss = _phi_derivs(state)
    tan = c.psi_ratio * f_s
    tan[0], tan[-1] = f_ss[0], f_ss[-1]
    dens = (c.ric_rad + f_ss) ** 2 + (n - 1) * (c.ric_tan + tan) ** 2
    return quad(state.grid, dens * np.exp(-state.phi) * c.measure)


@dataclass
class MonitorRecord:
    time: float
    sup_rm_times_t: float
    volume: float
    F_value: float
    W_value: float
    residuals: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = [self.time, self.sup_rm_times_t, self.volume, self.F_value, self.W_value]
        vals += list(self.residuals.values())
        if not all(math.isfinite(v) for v in vals):
            raise ConelabError("invalid_monitor", "non-finite monitor entry")


def monitor_record(state: FlowState, tau: float) -> MonitorRecord:
    return MonitorRecord(state.time, state.sup_rm * state.time, state.volume,
                         f_functional(state), w_functional(state, tau))


def monotonicity_check(trajectory: Sequence[FlowState], tau_end: float = 1.0,
                       slack: float = 1e-5) -> dict:
    """F(t) and W(t, tau_end + t_end - t) along a transported trajectory; both must not decrease."""
    t = np.array([s.time for s in trajectory])
    F = np.array([f_functional(s) for s in trajectory])
    tau = tau_end + t[-1] - t
    W = np.array([w_functional(s, tk) for s, tk in zip(trajectory, tau)])
    dF, dW = np.diff(F), np.diff(W)
    return {"times": t, "F": F, "W": W,
            "min_dF": float(dF.min()), "min_dW": float(dW.min()),
            "F_monotone": bool(dF.min() >= -slack), "W_monotone": bool(dW.min() >= -slack)}


def variation_identities_check(trajectory: Sequence[FlowState], config: FlowConfig,
                               tau: float = 1.0) -> dict:
    """Finite-difference time derivatives against the variation formulas.

    vol' = (alpha - R_av) vol;  F' = 2 int|Ric + Hess phi|^2 u - (2 alpha/n) F;
    W'(tau fixed) = 2 tau [int|Ric + Hess f|^2 u - (alpha/n + 1/(2 tau)) F + alpha/(2 tau)];
    R_t = Delta R + 2|Ric|^2 - (2 alpha/n) R pointwise.
    """
    if len(trajectory) < 100:
        raise ConelabError("insufficient_sampling", f"{len(trajectory)} states, need at least 100")
    n = trajectory[0].dim
    t = np.array([s.time for s in trajectory])
    alpha = np.array([s.alpha for s in trajectory[1:]] + [trajectory[-1].alpha])
    if config.alpha_rule == "none":
        alpha = np.zeros_like(t)
    vol = np.array([s.volume for s in trajectory])
    F = np.array([f_functional(s) for s in trajectory])
    W = np.array([w_functional(s, tau) for s in trajectory])
    H = np.array([ric_hess_norm_sq(s) for s in trajectory])
    Rav = np.array([s.scalar_average for s in trajectory])
    d = lambda y: np.gradient(y, t, edge_order=2)
    inner = slice(2, -2)
    vol_rhs = (alpha - Rav) * vol
    F_rhs = 2 * H - 2 * alpha / n * F
    W_rhs = 2 * tau * (H - (alpha / n + 1 / (2 * tau)) * F + alpha / (2 * tau))
    res = {
        "volume": float(np.max(np.abs(d(vol) - vol_rhs)[inner])),
        "volume_relative": float(np.max(np.abs(d(vol) - vol_rhs)[inner] / vol[inner])),
        "F": float(np.max(np.abs(d(F) - F_rhs)[inner])),
        "W": float(np.max(np.abs(d(W) - W_rhs)[inner])),
    }
    if trajectory[0].variant == "profile":
        R = np.array([s.curvatures.scalar for s in trajectory])
        Rt = np.gradient(R, t, axis=0, edge_order=2)
        rhs = []
        D1, D2 = fd_matrices(trajectory[0].grid)
        for s, al in zip(trajectory, alpha):
            c = s.curvatures
            R_x, R_xx = D1 @ c.scalar, D2 @ c.scalar
            R_s = R_x / s.a
            R_ss = (R_xx - R_x * (D1 @ s.w)) / s.a ** 2
            lap = R_ss + (n - 1) * c.psi_ratio * R_s
            lap[0], lap[-1] = n * R_ss[0], n * R_ss[-1]
            ric_sq = c.ric_rad ** 2 + (n - 1) * c.ric_tan ** 2
            rhs.append(lap + 2 * ric_sq - 2 * al / n * c.scalar + s.gauge * R_x)
        diff = np.abs(Rt - np.array(rhs))[inner, 1:-1]
        res["scalar_curvature"] = float(diff.max() / np.abs(R).max())
    return {"times": t, "residuals": res, "F": F, "W": W, "volume": vol,
            "F_rhs": F_rhs, "dF_dt": d(F),
            "F_inequality_holds": bool(np.all(d(F)[inner] >= F_rhs[inner] - 1e-4 * np.abs(F_rhs[inner]).max()))}


# ---------------------------------------------------------------------------
# shrinking time

def shrinking_time_estimate(state: FlowState, threshold: float = ROUNDNESS_THRESHOLD,
                            dt_safety: float = 0.2, max_steps: int = 2_000_000) -> float:
    """Extinction time of the plain Ricci flow from `state` (measured from state.time = 0).

    The flow runs until the profile is round within `threshold`; beta^2 of the
    volume-equivalent sphere is then sampled on a short window and extrapolated
    linearly to zero.
    """
    n = state.dim
    if state.variant == "round":
        return state.beta ** 2 / (2 * (n - 1))
    if state.variant != "profile":
        raise ConelabError("no_round_limit", "flat states do not become extinct")
    cfg = FlowConfig(dt_safety=dt_safety, potential_mode="transported")
    cur = replace(state, time=0.0, phi=np.zeros(len(state.grid)))
    steps = 0
    try:
        while cur.roundness > threshold:
            cur = flow_step(cur, cfg, stable_dt(cur, cfg))
            steps += 1
            if steps > max_steps or cur.sup_rm * cur.beta_sq > 1e3:
                raise ConelabError("no_round_limit", "curvature concentrates before the profile rounds")
        samples = [(cur.time, cur.beta_sq)]
        window = 0.1 * cur.beta_sq / (2 * (n - 1))
        for target in (cur.time + window, cur.time + 2 * window):
            while cur.time < target - 1e-15:
                cur = flow_step(cur, cfg, min(stable_dt(cur, cfg), target - cur.time))
            samples.append((cur.time, cur.beta_sq))
    except ConelabError as exc:
        if exc.code == "flow_singular":
            raise ConelabError("no_round_limit", str(exc)) from exc
        raise
    ts, bs = np.array(samples).T
    slope, icpt = np.polyfit(ts, bs, 1)
    return float(-icpt / slope)


def renormalized_shrinking_time_check(state: FlowState, config: FlowConfig,
                                      span: Optional[float] = None, samples: int = 5) -> dict:
    """Shrinking time re-estimated at `samples` times along a renormalized flow over [0, span]."""
    T0 = shrinking_time_estimate(state)
    if config.alpha_rule == "shrinking_time_preserving" and config.shrinking_time is None:
        config = replace(config, shrinking_time=T0)
    span = 2 * T0 if span is None else span
    cfg = replace(config, potential_mode="transported")
    marks = np.linspace(0.0, span, samples)
    cur = replace(state, time=0.0)
    estimates = []
    for m in marks:
        while cur.time < m - 1e-14:
            cur = flow_step(cur, cfg, min(stable_dt(cur, cfg), m - cur.time))
        estimates.append(shrinking_time_estimate(cur))
    est = np.array(estimates)
    return {"times": marks.tolist(), "estimates": est.tolist(), "T0": T0,
            "drift": float(np.max(np.abs(est - T0)) / T0),
            "trend": float(est[-1] - est[0]), "alpha_rule": config.alpha_rule}


# ---------------------------------------------------------------------------
# type III, blowdown, noncollapsing

def type_iii_monitor(trajectory: Sequence[FlowState]):
    """(C, bounded): C = max sup|Rm| t; bounded unless sup|Rm| t grows like a positive
    power of t (log-log slope above 1/2) over the last quartile."""
    t = np.array([s.time for s in trajectory])
    q = np.array([s.sup_rm for s in trajectory]) * t
    C = float(np.max(q))
    tail = slice(int(0.75 * len(t)), None)
    tt, qq = t[tail], q[tail]
    ok = (tt > 0) & (qq > 0)
    if ok.sum() < 2:
        return C, True
    slope = np.polyfit(np.log(tt[ok]), np.log(qq[ok]), 1)[0]
    return C, bool(slope < 0.5)


def rescale_state(state: FlowState, s: float) -> FlowState:
    """Parabolic rescaling: the state of g_s(t) = g(s t)/s at time state.time/s."""
    r = 1.0 / math.sqrt(s)
    if state.variant == "round":
        return replace(state, time=state.time / s, beta=state.beta * r, alpha=state.alpha * s)
    if state.variant == "profile":
        return replace(state, time=state.time / s, a=state.a * r, psi=state.psi * r,
                       w=state.w + math.log(r), alpha=state.alpha * s)
    return replace(state, time=state.time / s, a=state.a * r, psi=state.psi * r,
                   grid=RadialGrid.uniform(0.0, float(state.grid.nodes[-1]) * r, len(state.grid)),
                   alpha=state.alpha * s)


def blowdown_rescale(trajectory: Sequence[FlowState], s: float,
                     t_max: Optional[float] = None) -> dict:
    """Rescaled trajectory and the residual of |Rm_{g_s}|(t) = s |Rm_g|(s t)."""
    if s <= 0:
        raise ConelabError("invalid_scale", "s must be positive")
    if not trajectory:
        raise ConelabError("trajectory_too_short", "empty trajectory")
    end = trajectory[-1].time
    if t_max is not None and s * t_max > end * (1 + 1e-12):
        raise ConelabError("trajectory_too_short",
                           f"need coverage up to {s * t_max:.6g}, trajectory ends at {end:.6g}")
    out = [rescale_state(st, s) for st in trajectory]
    if t_max is not None:
        out = [st for st in out if st.time <= t_max * (1 + 1e-12)]
    res = max((abs(o.sup_rm - s * st.sup_rm) / max(s * st.sup_rm, 1e-300)
               for o, st in zip(out, trajectory)), default=0.0)
    return {"trajectory": out, "curvature_identity_residual": float(res)}


def _ball_volume(state: FlowState, radius: float, basepoint: str) -> float:
    n = state.dim
    if state.variant == "round":
        state = state.as_profile(257)
    x = state.grid.nodes
    a, dens = state.a, sphere_volume(n - 1) * state.psi ** (n - 1) * state.a
    if basepoint == "south":
        x = x[-1] - x[::-1]
        a, dens = a[::-1], dens[::-1]
    if state.variant == "flat" and np.all(a == a[0]) and np.all(state.psi == state.grid.nodes):
        rho = min(radius, x[-1])
        return ball_volume(n) * rho ** n if rho < x[-1] else quad(state.grid, dens)
    S = CubicSpline(x, a).antiderivative()
    V = CubicSpline(x, dens).antiderivative()
    if radius >= S(x[-1]):
        return float(V(x[-1]))
    xr = brentq(lambda z: S(z) - radius, x[0], x[-1], xtol=1e-15, rtol=1e-15)
    return float(V(xr))


def volume_ratio_monitor(trajectory: Sequence[FlowState], basepoint="north") -> dict:
    """Vol(B(p, sqrt t)) / t^{n/2} along the trajectory, with a collapse flag."""
    if basepoint in (0, "north"):
        bp = "north"
    elif basepoint in (-1, "south"):
        bp = "south"
    else:
        raise ConelabError("bad_basepoint", f"basepoint {basepoint!r} is not a pole of the grid")
    if trajectory and trajectory[0].variant == "flat" and bp == "south":
        raise ConelabError("bad_basepoint", "a flat ball has a single pole")
    times, trace = [], []
    for st in trajectory:
        if st.time <= 0:
            continue
        times.append(st.time)
        trace.append(_ball_volume(st, math.sqrt(st.time), bp) / st.time ** (st.dim / 2))
    trace = np.array(trace)
    collapsed = False
    if len(trace) >= 4:
        tail = trace[int(0.75 * len(trace)):]
        collapsed = bool(np.all(np.diff(tail) < 0) and trace[-1] < 0.1 * trace.max())
    return {"times": times, "trace": trace.tolist(), "collapsed": collapsed}
