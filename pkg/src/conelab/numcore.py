"""Grids, quadrature, Sturm-Liouville eigensolves and norm-constrained minimization.

Everything above this module works with 1D profiles: a link in geodesic polar
form (uniform grid in the polar angle) or a cone in the radial variable
(logarithmic grid).  Quadrature uses the trapezoid rule with order-8 Gregory
end corrections in the grid's uniform variable, so smooth integrands are
integrated to near round-off while the constant 1 is still exact.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import eigh_tridiagonal, solve_banded
from scipy.special import bernoulli

log = logging.getLogger(__name__)

BOUNDARY_KINDS = ("dirichlet_zero", "neumann_zero", "pole_regular")
MIN_NODES = 16
DEFAULT_NODES = 2048


class ConelabError(Exception):
    """Error carrying one of the stable string codes used across the package."""

    def __init__(self, code: str, detail: str = "", **data):
        self.code = code
        self.detail = detail
        self.data = data
        super().__init__(f"{code}: {detail}" if detail else code)


# ---------------------------------------------------------------------------
# quadrature and finite differences

def _gregory_end_weights(q: int = 8) -> NDArray:
    """End weights of the Gregory-corrected trapezoid rule (unit spacing).

    The correction cancels the Euler-Maclaurin endpoint terms up to degree q-1.
    """
    bern = bernoulli(q + 1)
    A = np.array([[float(j) ** m for j in range(q)] for m in range(q)])
    rhs = np.array([bern[m + 1] / (m + 1) if m % 2 else 0.0 for m in range(q)])
    w = np.ones(q)
    w[0] = 0.5
    return w + np.linalg.solve(A, rhs)


_GREGORY = _gregory_end_weights(8)


def uniform_weights(n: int, h: float) -> NDArray:
    w = np.ones(n)
    q = len(_GREGORY)
    w[:q] = _GREGORY
    w[-q:] = _GREGORY[::-1]
    return w * h


def fornberg_weights(x0: float, x: ArrayLike, order: int) -> NDArray:
    """Finite-difference weights for the `order`-th derivative at x0 (Fornberg 1988)."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    c = np.zeros((n, order + 1))
    c1, c4 = 1.0, x[0] - x0
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, order)
        c2, c5, c4 = 1.0, c4, x[i] - x0
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, order]


_HALF = 3  # 7-point stencils: sixth order in the interior
_STENCILS: dict = {}


def _central(order: int) -> NDArray:
    key = ("c", order)
    if key not in _STENCILS:
        _STENCILS[key] = fornberg_weights(0.0, np.arange(-_HALF, _HALF + 1), order)
    return _STENCILS[key]


def _onesided(pos: int, order: int) -> NDArray:
    key = ("o", pos, order)
    if key not in _STENCILS:
        _STENCILS[key] = fornberg_weights(float(pos), np.arange(2 * _HALF + 2), order)
    return _STENCILS[key]


def _stencil_apply(values: NDArray, h: float, order: int, parity: tuple) -> NDArray:
    """Derivative along axis 0 on a uniform grid.

    `parity` per end: None (one-sided), +1 even, -1 odd reflection.
    """
    v = np.asarray(values, dtype=float)
    n = v.shape[0]
    k = _HALF
    left, right = parity
    parts = []
    if left:
        parts.append(v[1:k + 1][::-1] * left)
    parts.append(v)
    if right:
        parts.append(v[-k - 1:-1][::-1] * right)
    ext = np.concatenate(parts, axis=0)
    off = k if left else 0
    central = _central(order)
    m = ext.shape[0]
    inner = np.zeros_like(ext)
    for j, c in enumerate(central):
        inner[k:m - k] += c * ext[j:m - 2 * k + j]
    out = inner[off:off + n].copy()
    for i in range(n):
        j = i + off
        if j - k < 0 or j + k >= m:
            # one-sided stencil of 2k+2 points fully inside the extended array
            lo = 0 if j - k < 0 else m - (2 * k + 2)
            out[i] = np.tensordot(_onesided(j - lo, order), ext[lo:lo + 2 * k + 2], axes=(0, 0))
    return out / h ** order


# ---------------------------------------------------------------------------
# grids and fields

@dataclass(frozen=True, eq=False)
class RadialGrid:
    nodes: NDArray
    spacing_kind: str
    weights: NDArray

    def __post_init__(self):
        x = np.asarray(self.nodes, dtype=float)
        if x.ndim != 1 or len(x) < MIN_NODES:
            raise ConelabError("invalid_grid", f"need at least {MIN_NODES} nodes")
        if np.any(np.diff(x) <= 0):
            raise ConelabError("invalid_grid", "nodes must be strictly increasing")
        if self.spacing_kind not in ("uniform", "logarithmic"):
            raise ConelabError("invalid_grid", f"unknown spacing {self.spacing_kind!r}")
        if np.any(np.asarray(self.weights) <= 0):
            raise ConelabError("invalid_grid", "weights must be positive")

    @classmethod
    def uniform(cls, a: float, b: float, n: int = DEFAULT_NODES) -> "RadialGrid":
        x = np.linspace(a, b, n)
        return cls(x, "uniform", uniform_weights(n, (b - a) / (n - 1)))

    @classmethod
    def logarithmic(cls, a: float, b: float, n: int = DEFAULT_NODES) -> "RadialGrid":
        if a <= 0:
            raise ConelabError("invalid_grid", "logarithmic grid needs a > 0")
        s = np.linspace(np.log(a), np.log(b), n)
        x = np.exp(s)
        x[0], x[-1] = a, b
        # weights for dr = r ds; the Gregory rule integrates e^s to ~h^8
        return cls(x, "logarithmic", uniform_weights(n, s[1] - s[0]) * x)

    def __len__(self):
        return len(self.nodes)

    @property
    def step(self) -> float:
        """Spacing in the uniform variable (x, or log x)."""
        if self.spacing_kind == "uniform":
            return float(self.nodes[1] - self.nodes[0])
        return float(np.log(self.nodes[-1] / self.nodes[0]) / (len(self.nodes) - 1))

    def same_as(self, other: "RadialGrid") -> bool:
        return self is other or (
            self.spacing_kind == other.spacing_kind
            and len(self) == len(other)
            and np.array_equal(self.nodes, other.nodes)
        )

    def diff(self, values: ArrayLike, order: int = 1, parity=(None, None), axis: int = 0) -> NDArray:
        """d/dx or d2/dx2 of sampled values, sixth order.

        Parity (+1 even, -1 odd) reflects the data across an end instead of
        using a one-sided stencil; only meaningful on uniform grids at poles.
        """
        v = np.moveaxis(np.asarray(values, dtype=float), axis, 0)
        h = self.step
        if self.spacing_kind == "uniform":
            return np.moveaxis(_stencil_apply(v, h, order, parity), 0, axis)
        x = self.nodes.reshape((-1,) + (1,) * (v.ndim - 1))
        ds = _stencil_apply(v, h, 1, (None, None))
        if order == 1:
            out = ds / x
        else:
            out = (_stencil_apply(v, h, 2, (None, None)) - ds) / x ** 2
        return np.moveaxis(out, 0, axis)


@dataclass(eq=False)
class ScalarField:
    grid: RadialGrid
    values: NDArray
    boundary: tuple = ("neumann_zero", "neumann_zero")

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.grid),):
            raise ConelabError("grid_mismatch", "values do not match the grid")
        if not np.all(np.isfinite(self.values)):
            raise ConelabError("invalid_field", "non-finite values")
        for kind in self.boundary:
            if kind not in BOUNDARY_KINDS:
                raise ConelabError("invalid_field", f"unknown boundary kind {kind!r}")
        if self.boundary[0] == "dirichlet_zero" and self.values[0] != 0.0:
            raise ConelabError("invalid_field", "dirichlet_zero end must be exactly 0")
        if self.boundary[1] == "dirichlet_zero" and self.values[-1] != 0.0:
            raise ConelabError("invalid_field", "dirichlet_zero end must be exactly 0")

    @property
    def parity(self):
        return tuple(1 if k == "pole_regular" else None for k in self.boundary)

    def derivative(self) -> NDArray:
        return self.grid.diff(self.values, 1, self.parity)


def integrate(field: ScalarField, density: ScalarField) -> float:
    if not field.grid.same_as(density.grid):
        raise ConelabError("grid_mismatch", "field and density live on different grids")
    return float(np.sum(field.grid.weights * field.values * density.values))


def quad(grid: RadialGrid, values: ArrayLike, axis: Optional[int] = None):
    """Integral of sampled values over the grid interval (along `axis` if given)."""
    if axis is None:
        return float(np.dot(grid.weights, values))
    return np.tensordot(grid.weights, np.asarray(values), axes=(0, axis))


# ---------------------------------------------------------------------------
# Sturm-Liouville problems

@dataclass(eq=False)
class SturmLiouvilleProblem:
    """-(1/m)(p u')' + V u on a grid; poles are ends where m vanishes."""

    grid: RadialGrid
    measure_density: NDArray
    stiffness_coeff: NDArray
    potential: NDArray

    def __post_init__(self):
        self.measure_density = np.asarray(self.measure_density, dtype=float)
        self.stiffness_coeff = np.asarray(self.stiffness_coeff, dtype=float)
        self.potential = np.asarray(self.potential, dtype=float)
        n = len(self.grid)
        for arr in (self.measure_density, self.stiffness_coeff, self.potential):
            if arr.shape != (n,):
                raise ConelabError("grid_mismatch", "coefficient length differs from grid")
        inner = slice(1, -1)
        if np.any(self.measure_density[inner] <= 0) or np.any(self.stiffness_coeff[inner] <= 0):
            raise ConelabError("degenerate_profile", "m and p must be positive at interior nodes")
        self._disc = _discretize(self)

    @property
    def active(self) -> slice:
        return self._disc.active

    def expand(self, u_active: NDArray) -> NDArray:
        """Active-node vector to full grid values (poles copy their neighbour)."""
        d = self._disc
        full = np.empty(len(self.grid))
        full[d.active] = u_active
        if d.active.start == 1:
            full[0] = u_active[0]
        if d.active.stop == len(self.grid) - 1:
            full[-1] = u_active[-1]
        return full

    def restrict(self, values: NDArray) -> NDArray:
        return np.asarray(values, dtype=float)[self._disc.active]

    def boundary(self):
        d = self._disc
        left = "pole_regular" if d.active.start == 1 else "neumann_zero"
        right = "pole_regular" if d.active.stop == len(self.grid) - 1 else "neumann_zero"
        return (left, right)

    def rayleigh_quotient(self, values: NDArray) -> float:
        u = self.restrict(values)
        d = self._disc
        return float(_quadratic(d, u) / np.dot(d.mass, u * u))

    def symmetric_matrix(self):
        """Diagonal and off-diagonal of M^{-1/2}(K + MV)M^{-1/2}."""
        d = self._disc
        diag = d.kdiag / d.mass + d.V
        off = d.koff / np.sqrt(d.mass[:-1] * d.mass[1:])
        return diag, off


@dataclass
class _Discrete:
    active: slice
    kdiag: NDArray
    koff: NDArray
    edge: NDArray
    mass: NDArray
    V: NDArray


def _discretize(prob: SturmLiouvilleProblem) -> _Discrete:
    x = prob.grid.nodes
    m = prob.measure_density
    lo = 1 if m[0] == 0 else 0
    hi = len(x) - 1 if m[-1] == 0 else len(x)
    act = slice(lo, hi)
    xa = x[act]
    p = prob.stiffness_coeff[act]
    edge = 0.5 * (p[:-1] + p[1:]) / np.diff(xa)
    kdiag = np.zeros(len(xa))
    kdiag[:-1] += edge
    kdiag[1:] += edge
    mass = prob.grid.weights[act] * m[act]
    return _Discrete(act, kdiag, -edge, edge, mass, prob.potential[act].copy())


def _quadratic(d: _Discrete, u: NDArray) -> float:
    du = np.diff(u)
    return float(np.dot(d.edge, du * du) + np.dot(d.mass * d.V, u * u))


def _apply_K(d: _Discrete, u: NDArray) -> NDArray:
    out = d.kdiag * u
    out[:-1] += d.koff * u[1:]
    out[1:] += d.koff * u[:-1]
    return out


def eigen_smallest(problem: SturmLiouvilleProblem, max_iter: int = 500, tol: float = 1e-10):
    """Smallest eigenvalue and positive m-normalized eigenfunction.

    The eigenvalue is bracketed by LAPACK bisection on the symmetric tridiagonal
    form, then polished by shifted inverse iteration.
    """
    diag, off = problem.symmetric_matrix()
    scale = max(1.0, float(np.max(np.abs(diag)) + 2 * np.max(np.abs(off))))
    lam0, vec = eigh_tridiagonal(diag, off, select="i", select_range=(0, 0))
    lam = float(lam0[0])
    y = vec[:, 0]
    shift = lam - 1e-9 * scale
    ab = np.zeros((3, len(diag)))
    ab[0, 1:] = off
    ab[1] = diag - shift
    ab[2, :-1] = off

    def residual(vv, ll):
        sv = diag * vv
        sv[:-1] += off * vv[1:]
        sv[1:] += off * vv[:-1]
        return float(np.max(np.abs(sv - ll * vv)) / scale)

    res = residual(y, lam)
    it = 0
    while res > tol and it < max_iter:
        y = solve_banded((1, 1), ab, y)
        y /= np.linalg.norm(y)
        sy = diag * y
        sy[:-1] += off * y[1:]
        sy[1:] += off * y[:-1]
        lam = float(y @ sy)
        res = residual(y, lam)
        it += 1
    if res > tol:
        raise ConelabError("eigen_no_convergence", f"residual {res:.3e}", residual=res)
    d = problem._disc
    u = y / np.sqrt(d.mass)
    u /= np.sqrt(np.dot(d.mass, u * u))
    if u.sum() < 0:
        u = -u
    return lam, ScalarField(problem.grid, problem.expand(u), problem.boundary())


# ---------------------------------------------------------------------------
# normalized minimization

@dataclass(eq=False)
class EntropyFunctional:
    """tau*(<K u,u> + <M V u,u>) - entropy * sum M u^2 log u^2 + constant.

    With entropy=1 and constant = -(d/2) log(4 pi tau) - d this is the u-form of
    the W functional in dimension d; with entropy=0, tau=1 it is F (Rayleigh form).
    """

    problem: SturmLiouvilleProblem
    tau: float = 1.0
    entropy: float = 1.0
    constant: float = 0.0
    label: str = "W"

    def value(self, u: NDArray) -> float:
        d = self.problem._disc
        u2 = u * u
        e = self.tau * _quadratic(d, u) + self.constant
        if self.entropy:
            e -= self.entropy * float(np.dot(d.mass, _xlogx(u2)))
        return e

    def gradient(self, u: NDArray) -> NDArray:
        d = self.problem._disc
        g = 2.0 * self.tau * (_apply_K(d, u) + d.mass * d.V * u)
        if self.entropy:
            u2 = u * u
            logu2 = np.log(np.where(u2 > 0, u2, 1.0))
            g -= self.entropy * d.mass * 2.0 * u * (logu2 + 1.0)
        return g


def _xlogx(x: NDArray) -> NDArray:
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] * np.log(x[pos])
    return out


@dataclass
class MinimizationResult:
    value: float
    minimizer: ScalarField
    status: str
    iterations: int
    residual: float
    trace: list = field(default_factory=list)

    @property
    def unbounded(self) -> bool:
        return self.status == "unbounded_below"


def _apply_P(ab: NDArray, v: NDArray) -> NDArray:
    out = ab[1] * v
    out[:-1] += ab[0, 1:] * v[1:]
    out[1:] += ab[2, :-1] * v[:-1]
    return out


def minimize_normalized(objective: EntropyFunctional, init: ScalarField,
                        constraint_density: Optional[ScalarField] = None,
                        tolerance: float = 1e-10, floor: float = -1e6,
                        max_iter: int = 20000, patience: int = 20,
                        runaway_steps: int = 50) -> MinimizationResult:
    """Projected (H1-preconditioned) gradient descent on {sum M u^2 = 1}.

    Returns the smallest value found, which is an upper bound on the discrete
    infimum.  A runaway objective is reported as status "unbounded_below".
    """
    prob = objective.problem
    d = prob._disc
    if constraint_density is not None:
        if not constraint_density.grid.same_as(prob.grid):
            raise ConelabError("grid_mismatch", "constraint density grid differs")
    u = prob.restrict(init.values).copy()
    norm2 = float(np.dot(d.mass, u * u))
    if abs(norm2 - 1.0) > 1e-8:
        raise ConelabError("not_normalized", f"initial mass {norm2:.12g}")

    # preconditioner 2(tau*K + M*(1 + tau|V|)): SPD tridiagonal, matches the
    # factor 2 of the gradient so unit steps are Newton-like on high modes
    pdiag = 2.0 * (objective.tau * d.kdiag + d.mass * (1.0 + objective.tau * np.abs(d.V)))
    ab = np.zeros((3, len(u)))
    ab[0, 1:] = 2.0 * objective.tau * d.koff
    ab[1] = pdiag
    ab[2, :-1] = 2.0 * objective.tau * d.koff

    def precond(v):
        return solve_banded((1, 1), ab, v)

    e = objective.value(u)
    trace = [e]
    step = 1.0
    calm = 0
    runaway = 0
    res = np.inf
    status = "max_iter"
    it = 0
    prev_g = prev_pgrad = prev_dir = None
    for it in range(1, max_iter + 1):
        g = objective.gradient(u)
        c = 2.0 * d.mass * u
        pg, pc = precond(g), precond(c)
        pgrad = pg - (np.dot(c, pg) / np.dot(c, pc)) * pc
        gnorm = float(np.dot(g, pgrad))
        res = np.sqrt(max(gnorm, 0.0))
        if gnorm <= 1e-300:
            status = "converged"
            break
        direction = pgrad
        if prev_dir is not None:
            # Polak-Ribiere+ with the preconditioned metric; restart on non-descent
            beta = max(0.0, float(np.dot(g, pgrad - prev_pgrad)) / float(np.dot(prev_g, prev_pgrad)))
            cand = pgrad + beta * (prev_dir - np.dot(c, prev_dir) / np.dot(c, pc) * pc)
            if np.dot(g, cand) > 0.1 * np.sqrt(gnorm * np.dot(cand, _apply_P(ab, cand))):
                direction = cand
        slope = float(np.dot(g, direction))
        prev_g, prev_pgrad, prev_dir = g, pgrad, direction
        def attempt(t):
            tr = u - t * direction
            tr /= np.sqrt(np.dot(d.mass, tr * tr))
            return tr, objective.value(tr)

        # one trial step, then the minimizer of the interpolating parabola;
        # backtrack only if neither decreases the objective enough
        trial, et = attempt(step)
        curv = et - e + step * slope
        if np.isfinite(et) and curv > 0:
            t_star = min(step * step * slope / (2.0 * curv), 4.0 * step)
            tr2, e2 = attempt(t_star)
            if np.isfinite(e2) and e2 < et:
                trial, et, step = tr2, e2, t_star
        accepted = np.isfinite(et) and et <= e - 1e-4 * step * slope
        while not accepted and step > 1e-18:
            step *= 0.5
            trial, et = attempt(step)
            accepted = np.isfinite(et) and et <= e - 1e-4 * step * slope
        if not accepted:
            status = "converged"
            break
        drop = e - et
        u, e = trial, et
        trace.append(e)
        step = min(step * 1.5, 1e6)
        if e < floor:
            status = "unbounded_below"
            break
        runaway = runaway + 1 if drop > 1.0 else 0
        if runaway >= runaway_steps:
            status = "unbounded_below"
            break
        if drop <= tolerance * max(1.0, abs(e)):
            calm += 1
            if calm >= patience:
                status = "converged"
                break
        else:
            calm = 0
    if u.sum() < 0:
        u = -u
    log.debug("minimize_normalized %s: %s after %d steps, value %.12g",
              objective.label, status, it, e)
    return MinimizationResult(e, ScalarField(prob.grid, prob.expand(u), prob.boundary()),
                              status, it, float(res), trace)


def normalize(problem: SturmLiouvilleProblem, values: ArrayLike) -> ScalarField:
    """Scale values so that sum M u^2 = 1 under the problem's discrete mass."""
    u = problem.restrict(np.asarray(values, dtype=float))
    u = u / np.sqrt(np.dot(problem._disc.mass, u * u))
    return ScalarField(problem.grid, problem.expand(u), problem.boundary())


def discrete_mass(problem: SturmLiouvilleProblem, values: ArrayLike) -> float:
    u = problem.restrict(np.asarray(values, dtype=float))
    return float(np.dot(problem._disc.mass, u * u))
