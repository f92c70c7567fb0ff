"""Sharp radial inequalities behind the cone bounds (weighted Hardy, radial
log-Sobolev) and W-functional bounds for C^0-perturbations of the round sphere."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .links import LinkGeometry, scalar_curvature_link, sphere_volume
from .numcore import ConelabError, RadialGrid, ScalarField, _stencil_apply, quad

N_BOUND_CONSTANTS = ("proposition", "proof")
EPS3_CONVENTIONS = ("display", "proposition", "proof")


def _xlogx(x: NDArray) -> NDArray:
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] * np.log(x[pos])
    return out


# ---------------------------------------------------------------------------
# weighted Hardy: int r^{n-2} v^2 < 4/(n-1)^2 int r^n v'^2

@dataclass
class HardyResult:
    lhs: float
    rhs: float
    ratio: float


def weighted_hardy_gap(v: ScalarField, dim: int) -> HardyResult:
    if dim < 2:
        raise ConelabError("invalid_dimension", "the weighted Hardy inequality needs n >= 2")
    g = v.grid
    r = g.nodes
    vals = v.values
    if g.spacing_kind == "logarithmic":
        # in s = log r with q = r^{(n-1)/2} v both sides stay O(1) even at r ~ 1e-120
        k = (dim - 1) / 2
        q = np.exp(k * np.log(r)) * vals
        ds_weights = g.weights / r
        qs = _stencil_apply(q, g.step, 1, (None, None))
        lhs = float(ds_weights @ (q * q))
        rhs = float(ds_weights @ (q * q)) + float(ds_weights @ (qs * qs)) / k ** 2
    else:
        lhs = quad(g, r ** (dim - 2) * vals ** 2)
        rhs = 4 / (dim - 1) ** 2 * quad(g, r ** dim * g.diff(vals, 1) ** 2)
    if not lhs > 0:
        raise ConelabError("zero_field", "int r^{n-2} v^2 vanishes")
    return HardyResult(lhs, rhs, lhs / rhs)


def smoothstep(t: ArrayLike) -> NDArray:
    """C^2 quintic ramp from 0 (t <= 0) to 1 (t >= 1)."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    return t ** 3 * (10 - 15 * t + 6 * t ** 2)


def near_extremal_hardy_field(dim: int, delta: float, r_lo: float = 1e-120, r_hi: float = 1e3,
                              nodes: int = 8192, inner_ramp: float = 10.0) -> ScalarField:
    """r^{-(n-1)/2 + delta}, switched on over `inner_ramp` units of log r above r_lo
    and switched off between r = 1 and r_hi."""
    g = RadialGrid.logarithmic(r_lo, r_hi, nodes)
    s = np.log(g.nodes)
    cut = smoothstep((s - s[0]) / inner_ramp) * (1 - smoothstep(s / s[-1]))
    v = np.exp((-(dim - 1) / 2 + delta) * s) * cut
    v[0] = v[-1] = 0.0
    return ScalarField(g, v, ("dirichlet_zero", "dirichlet_zero"))


def random_bump_field(grid: RadialGrid, rng: np.random.Generator, modes: Optional[int] = None,
                      span=(0.05, 6.0)) -> NDArray:
    """Nonnegative C^1 sum of 1-4 bumps (1 - x^2)^2 with random centres and widths.

    Widths are capped so that every bump is supported inside the grid.
    """
    r = grid.nodes
    k = int(rng.integers(1, 5)) if modes is None else modes
    out = np.zeros_like(r)
    hi = min(span[1], 0.9 * r[-1])
    for _ in range(k):
        c = math.exp(rng.uniform(math.log(span[0]), math.log(hi)))
        w = min(c * rng.uniform(0.3, 1.5), r[-1] - c)
        x = (r - c) / w
        out += rng.uniform(0.2, 1.0) * np.where(np.abs(x) < 1, (1 - x * x) ** 2, 0.0)
    return out


# ---------------------------------------------------------------------------
# radial log-Sobolev

def log_sobolev_grid(tau0: float, nodes: int = 2048) -> RadialGrid:
    s = math.sqrt(tau0)
    return RadialGrid.logarithmic(1e-5 * s, 20 * s, nodes)


def gaussian_profile(grid: RadialGrid, dim: int, tau0: float) -> NDArray:
    """w with w^2 = vol(S^n) (4 pi tau0)^{-(n+1)/2} e^{-r^2/(4 tau0)}: the equality case."""
    n = dim
    return np.sqrt(sphere_volume(n) * (4 * math.pi * tau0) ** (-(n + 1) / 2)) * np.exp(-grid.nodes ** 2 / (8 * tau0))


def normalize_radial(grid: RadialGrid, w: ArrayLike, dim: int) -> NDArray:
    w = np.asarray(w, dtype=float)
    return w / math.sqrt(quad(grid, grid.nodes ** dim * w * w))


def radial_log_sobolev_gap(w: ScalarField, dim: int, tau0: float) -> float:
    n = dim
    g = w.grid
    r = g.nodes
    vals = w.values
    mass = quad(g, r ** n * vals ** 2)
    if abs(mass - 1) > 1e-6:
        raise ConelabError("not_normalized", f"int r^n w^2 = {mass:.10g}")
    dw = g.diff(vals, 1)
    kinetic = 4 * tau0 * quad(g, r ** n * dw ** 2)
    ent = quad(g, r ** n * _xlogx(vals ** 2))
    return kinetic - (ent + (n + 1) / 2 * math.log(4 * math.pi * tau0) + (n + 1) - math.log(sphere_volume(n)))


# ---------------------------------------------------------------------------
# C^0 perturbations of the round sphere

@dataclass(frozen=True)
class PerturbationBetas:
    beta1: float
    beta2: float
    dim: int

    def __post_init__(self):
        if not (0 < self.beta1 <= 1 <= self.beta2):
            raise ConelabError("invalid_betas", f"need 0 < beta1 <= 1 <= beta2, got {self.beta1}, {self.beta2}")


@dataclass(frozen=True)
class EpsilonTriple:
    eps1: float
    eps2: float
    eps3: float
    convention: str = "display"
    betas: Optional[PerturbationBetas] = None

    @property
    def eps3_nonpositive(self) -> bool:
        """Flag: an L-bound subtracts eps3, so eps3 <= 0 claims more than the sphere's own W."""
        return self.eps3 <= 0


def epsilons_from_betas(betas: PerturbationBetas, convention: str = "display") -> EpsilonTriple:
    """eps1, eps2 and eps3 under one of three eps3 conventions.

    display: (b1^n/b2^n - b2^n/b1^n) vol/e + n log b1, as printed;
    proposition: minus the N-bound offset with constant -n log b2;
    proof: minus the N-bound offset with constant +n log b1.
    """
    n = betas.dim
    b1, b2 = betas.beta1, betas.beta2
    e1 = 1 - b1 ** n / b2 ** (n + 4)
    e2 = b2 ** n / b1 ** n - 1
    spread = (b1 ** n / b2 ** n - b2 ** n / b1 ** n) * sphere_volume(n) / math.e
    if convention == "display":
        e3 = spread + n * math.log(b1)
    elif convention == "proposition":
        e3 = -(spread - n * math.log(b2))
    elif convention == "proof":
        e3 = -(spread + n * math.log(b1))
    else:
        raise ConelabError("invalid_convention", convention)
    return EpsilonTriple(e1, e2, e3, convention, betas)


def sphere_partner(link: LinkGeometry) -> LinkGeometry:
    """Unit S^n sampled at the same parameter nodes as the link."""
    return LinkGeometry.round_sphere(link.dim, 1.0, nodes=len(link.grid))


def bracket_check(link: LinkGeometry, betas: PerturbationBetas, slack: float = 1e-9) -> bool:
    """beta1^2 g_S <= g_N <= beta2^2 g_S in the identification x = pi xi / L."""
    L = link.length
    stretch = L / math.pi
    x = link.grid.nodes / stretch
    psi = link.psi_values()
    s = np.sin(x[1:-1])
    ratio = psi[1:-1] / s
    ok_radial = betas.beta1 - slack <= stretch <= betas.beta2 + slack
    ok_angular = np.all(ratio >= betas.beta1 - slack) and np.all(ratio <= betas.beta2 + slack)
    return bool(ok_radial and ok_angular)


def _f_and_n(link: LinkGeometry, f: NDArray, tau: float):
    """F and N of phi = f + (n/2) log 4 pi tau; f must be normalized on the link."""
    n = link.dim
    u2 = np.exp(-f) * (4 * math.pi * tau) ** (-n / 2)
    m = link.measure()
    df = link.grid.diff(f, 1, (1, 1))
    R = scalar_curvature_link(link).values
    F = quad(link.grid, (df ** 2 + R) * u2 * m)
    N = -quad(link.grid, _xlogx(u2) * m)
    return F, N


def _normalize_potential(link: LinkGeometry, f: NDArray, tau: float) -> NDArray:
    n = link.dim
    mass = quad(link.grid, np.exp(-f) * link.measure()) * (4 * math.pi * tau) ** (-n / 2)
    return f + math.log(mass)


@dataclass
class ProbeComponents:
    F_N: float
    N_N: float
    F_S: float
    N_S: float
    delta: float


def probe_components(link: LinkGeometry, f: ArrayLike, tau: float) -> ProbeComponents:
    """Link and sphere components of a probe; f is indexed by the shared parameter nodes."""
    f = np.asarray(f, dtype=float)
    sph = sphere_partner(link)
    fN = _normalize_potential(link, f, tau)
    FN, NN = _f_and_n(link, fN, tau)
    fS = _normalize_potential(sph, fN, tau)
    FS, NS = _f_and_n(sph, fS, tau)
    return ProbeComponents(FN, NN, FS, NS, float(fS[0] - fN[0]))


def random_link_probes(nodes: int, rng: np.random.Generator, count: int, modes: int = 4,
                       scale: float = 1.0) -> list:
    """Smooth invariant potentials f(x) = sum c_k cos(k x) on the unit-sphere parameter."""
    x = np.linspace(0.0, math.pi, nodes)
    probes = []
    for _ in range(count):
        m = int(rng.integers(1, modes + 1))
        f = np.zeros_like(x)
        for k in range(1, m + 1):
            f += rng.normal(0.0, scale / k) * np.cos(k * x)
        probes.append(f)
    return probes


def sphere_perturbation_bounds_check(link: LinkGeometry, betas: PerturbationBetas,
                                     probes: Iterable, tau: float) -> dict:
    n = link.dim
    if betas.dim != n:
        raise ConelabError("invalid_betas", "betas dimension differs from the link")
    if not bracket_check(link, betas):
        raise ConelabError("not_in_bracket", "link is not within the C^0 bracket of the round sphere")
    R = scalar_curvature_link(link).values
    if np.min(R) < n * (n - 1) / betas.beta2 ** 2 - 1e-6:
        raise ConelabError("not_in_bracket", "scalar curvature below n(n-1)/beta2^2")
    b1, b2 = betas.beta1, betas.beta2
    cF = b1 ** n / b2 ** (n + 4)
    cN = b2 ** n / b1 ** n
    spread = (b1 ** n / b2 ** n - b2 ** n / b1 ** n) * sphere_volume(n) / math.e
    consts = {"proposition": -n * math.log(b2), "proof": n * math.log(b1)}
    f_margins, n_margins = [], {k: [] for k in consts}
    for f in probes:
        c = probe_components(link, f, tau)
        f_margins.append(c.F_N - cF * c.F_S)
        for k, const in consts.items():
            n_margins[k].append(c.N_N - (cN * c.N_S + spread + const))
    worst_n = {k: float(min(v)) if v else None for k, v in n_margins.items()}
    return {
        "inequality": "sphere_perturbation",
        "n": n,
        "params": {"beta1": b1, "beta2": b2, "tau": tau},
        "probe_count": len(f_margins),
        "worst_margin_F": float(min(f_margins)) if f_margins else None,
        "worst_margin_N": worst_n,
        "passed_F": bool(all(m >= -1e-8 for m in f_margins)),
        "passed_N": {k: bool(all(m >= -1e-8 for m in v)) for k, v in n_margins.items()},
        "passed_conventions": [k for k, v in n_margins.items() if all(m >= -1e-8 for m in v)],
        "worst_margin": float(min([min(f_margins)] + [min(v) for v in n_margins.values()])) if f_margins else None,
        "extremal_ratio": None,
        "f_margins": f_margins,
        "n_margins": n_margins,
    }


def _l_margins(link: LinkGeometry, eps: EpsilonTriple, probes: Sequence, tau_grid: Sequence[float]):
    n = link.dim
    worst, where = math.inf, None
    for t in tau_grid:
        const = -n / 2 * math.log(4 * math.pi * t) - n
        for i, f in enumerate(probes):
            c = probe_components(link, f, t)
            W = t * c.F_N + c.N_N + const
            bound = t * (1 - eps.eps1) * c.F_S + (1 + eps.eps2) * c.N_S + const - eps.eps3
            if W - bound < worst:
                worst, where = W - bound, (float(t), i)
    return float(worst), where


def l_bound_check(link: LinkGeometry, eps: EpsilonTriple, probes: Sequence,
                  tau_grid: Sequence[float]) -> dict:
    """Worst margin of W^N(f, tau) - L(eps) over probes and tau.

    When eps carries its betas, every eps3 convention is evaluated as well and
    the passing ones are named in the report.
    """
    worst, where = _l_margins(link, eps, probes, tau_grid)
    by_convention = {}
    if eps.betas is not None:
        for conv in EPS3_CONVENTIONS:
            alt = epsilons_from_betas(eps.betas, conv)
            alt = EpsilonTriple(eps.eps1, eps.eps2, alt.eps3, conv, eps.betas)
            by_convention[conv] = _l_margins(link, alt, probes, tau_grid)[0]
    return {"inequality": "L_bound", "n": link.dim,
            "params": {"eps1": eps.eps1, "eps2": eps.eps2, "eps3": eps.eps3,
                       "convention": eps.convention},
            "worst_margin": worst, "worst_at": where,
            "probe_count": len(probes), "passed": bool(worst >= -1e-8),
            "eps3_nonpositive": eps.eps3_nonpositive,
            "margin_by_convention": by_convention,
            "passed_conventions": [c for c, m in by_convention.items() if m >= -1e-8],
            "extremal_ratio": None}
