"""Independent ground truth for the one-dimensional model and flat comparators.

Three oracles live here: closed-form transition densities of the separable 1D
constant-coefficient model (a time-changed squared Bessel process, reducing to
a Gamma law from the boundary), Gaussian heat-kernel reference values with
their integrated closed forms, and a deterministic weighted finite-volume
solver in the square-root chart that embodies the weak (energy-form)
formulation of the 1D problem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu
from scipy.special import gammainc, gammaln

from .errors import UnstableConfigurationError

__all__ = [
    "Besq1dModel",
    "besq_transition_density",
    "besq_transition_mass",
    "besq_mean",
    "sample_exact",
    "gaussian_reference",
    "lq_closed_form",
    "gaussian_abs_moment",
    "Grid1dSolver",
    "Solution1D",
    "solve_parabolic_1d",
    "dirac_approx",
]

_SERIES_RTOL = 1e-12


@dataclass(frozen=True)
class Besq1dModel:
    """1D model ``x u'' + b0 u'`` started at ``x0 >= 0``.

    Its solution is a squared Bessel process of dimension ``2 b0`` run at half
    speed, so transitions over time ``t`` have shape parameter ``b0`` and
    scale ``t`` (a pure Gamma law when started from the boundary).
    """

    b0: float
    x0: float = 0.0

    def __post_init__(self) -> None:
        if self.b0 <= 0.0:
            raise ValueError("boundary drift b0 must be positive")
        if self.x0 < 0.0:
            raise ValueError("start point must be nonnegative")


def _poisson_gamma_series(
    model: Besq1dModel, t: float, term_fn: Callable[[int], np.ndarray]
) -> np.ndarray:
    """Sum ``sum_k Poisson(k; x0/t) term_k`` with Kahan compensation.

    Truncates once past the Poisson mode with all current terms below
    ``1e-12`` of the running sum.
    """
    lam = model.x0 / t
    k_cap = int(lam + 12.0 * math.sqrt(lam + 1.0) + 60.0)
    total = None
    comp = None
    log_lam = math.log(lam) if lam > 0.0 else -math.inf
    for k in range(k_cap + 1):
        if lam == 0.0:
            log_pois = 0.0 if k == 0 else -math.inf
        else:
            log_pois = -lam + k * log_lam - gammaln(k + 1.0)
        if log_pois == -math.inf:
            if k > 0:
                break
            continue
        term = math.exp(log_pois) * term_fn(k)
        if total is None:
            total = np.zeros_like(term)
            comp = np.zeros_like(term)
        # Kahan step
        y = term - comp
        s = total + y
        comp = (s - total) - y
        total = s
        if k >= lam:
            scale = np.max(np.abs(total), initial=0.0)
            if scale > 0.0 and np.max(np.abs(term)) < _SERIES_RTOL * scale:
                break
    return total if total is not None else np.zeros(1)


def besq_transition_density(model: Besq1dModel, t: float, x) -> np.ndarray | float:
    """Transition density (w.r.t. Lebesgue) at time ``t`` from ``model.x0``.

    From the boundary this is the Gamma(``b0``, ``t``) density; from interior
    starts it is the Poisson-Gamma mixture with rate ``x0 / t``.
    """
    if t <= 0.0:
        raise ValueError("t must be positive")
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    xv = np.atleast_1d(x)
    log_t = math.log(t)

    def term(k: int) -> np.ndarray:
        shape = k + model.b0
        with np.errstate(divide="ignore"):
            logs = np.where(
                xv > 0.0,
                (shape - 1.0) * np.log(np.maximum(xv, 1e-300))
                - xv / t
                - gammaln(shape)
                - shape * log_t,
                -np.inf if shape > 1.0 else np.nan,
            )
        out = np.exp(logs)
        if shape < 1.0:
            out = np.where(xv == 0.0, np.inf, out)
        elif shape == 1.0:
            out = np.where(xv == 0.0, 1.0 / t, out)
        else:
            out = np.where(xv == 0.0, 0.0, out)
        return out

    dens = _poisson_gamma_series(model, t, term)
    dens = np.where(xv < 0.0, 0.0, dens)
    return float(dens[0]) if scalar else dens


def besq_transition_mass(model: Besq1dModel, t: float, edges) -> np.ndarray:
    """Exact probability mass of each cell ``[edges[i], edges[i+1])``."""
    edges = np.asarray(edges, dtype=float)
    if np.any(np.diff(edges) <= 0.0):
        raise ValueError("edges must be increasing")

    def term(k: int) -> np.ndarray:
        shape = k + model.b0
        cdf = gammainc(shape, np.maximum(edges, 0.0) / t)
        return np.diff(cdf)

    return _poisson_gamma_series(model, t, term)


def besq_mean(model: Besq1dModel, t: float) -> float:
    return model.x0 + model.b0 * t


def sample_exact(
    model: Besq1dModel, t: float, size: int, rng: np.random.Generator
) -> np.ndarray:
    """Exact draws of the time-``t`` transition (noncentral chi-square form)."""
    s = t / 2.0
    if model.x0 == 0.0:
        return rng.gamma(model.b0, t, size=size)
    return s * rng.noncentral_chisquare(2.0 * model.b0, model.x0 / s, size=size)


# ---------------------------------------------------------------------------
# Gaussian comparators
# ---------------------------------------------------------------------------


def gaussian_reference(n_dims: int, t: float, z0, z, variance_per_t: float = 1.0):
    """Heat kernel ``(2 pi v t)^(-n/2) exp(-|z - z0|^2 / (2 v t))``.

    ``variance_per_t`` rescales the per-unit-time variance (the flat free-axis
    model with unit coefficient has variance rate 2).
    """
    z0 = np.asarray(z0, dtype=float)
    z = np.asarray(z, dtype=float)
    v = variance_per_t * t
    sq = np.sum((z - z0) ** 2, axis=-1) if z.ndim > 1 or n_dims > 1 else (z - z0) ** 2
    sq = np.asarray(sq, dtype=float)
    if z.ndim == 1 and n_dims > 1:
        sq = float(np.sum((z - z0) ** 2))
    return (2.0 * math.pi * v) ** (-n_dims / 2.0) * np.exp(-sq / (2.0 * v))


def lq_closed_form(q: float, t: float, n_dims: int) -> float:
    """``integral p^q dz`` for the unit-variance heat kernel:
    ``(2 pi)^(n(1-q)/2) q^(-n/2) t^((1-q) n/2)``.
    """
    if q <= 0.0 or t <= 0.0:
        raise ValueError("q and t must be positive")
    return (
        (2.0 * math.pi) ** (n_dims * (1.0 - q) / 2.0)
        * q ** (-n_dims / 2.0)
        * t ** ((1.0 - q) * n_dims / 2.0)
    )


def gaussian_abs_moment(alpha: float, t: float, n_dims: int) -> float:
    """``E |Z|^alpha`` for ``Z ~ N(0, t I_n)``: ``C(alpha, n) t^(alpha/2)``."""
    if alpha <= -n_dims:
        raise ValueError("moment diverges")
    log_c = (
        (alpha / 2.0) * math.log(2.0)
        + gammaln((n_dims + alpha) / 2.0)
        - gammaln(n_dims / 2.0)
    )
    return math.exp(log_c) * t ** (alpha / 2.0)


# ---------------------------------------------------------------------------
# Weighted 1D grid solver in the sqrt chart
# ---------------------------------------------------------------------------


class Grid1dSolver:
    """Finite-volume discretization of ``x u'' + b(x) u'`` under its weight.

    In the chart ``u = sqrt(x)`` the operator becomes
    ``(1/(4 w)) d/du (w dv/du)`` with ``w(u) = u^(2 b(u^2) - 1)``, which the
    scheme discretizes in flux form with interface coefficients that are exact
    on power-law steady states.  The origin is a natural (zero-flux) boundary;
    the outer edge is absorbing by default.
    """

    def __init__(
        self,
        length: float,
        n_cells: int,
        b_field: Callable | float = 1.0,
        dirichlet_outer: bool = True,
    ):
        if length <= 0.0 or n_cells < 4:
            raise ValueError("need positive length and at least 4 cells")
        self.length = float(length)
        self.n_cells = int(n_cells)
        self.dirichlet_outer = bool(dirichlet_outer)
        if callable(b_field):
            self.b_of_x = b_field
        else:
            b_const = float(b_field)
            self.b_of_x = lambda x: np.full_like(np.asarray(x, dtype=float), b_const)
        U = math.sqrt(self.length)
        self.h = U / self.n_cells
        self.u_edges = np.linspace(0.0, U, self.n_cells + 1)
        self.u_centers = 0.5 * (self.u_edges[:-1] + self.u_edges[1:])
        self.x_centers = self.u_centers**2
        b_centers = np.asarray(self.b_of_x(self.x_centers), dtype=float)
        if np.any(b_centers <= 0.0):
            raise ValueError("weight exponents must be positive")
        # cell weights W_j = integral of u^(2b-1) over the cell (frozen b)
        e = 2.0 * b_centers
        self.cell_weight = (self.u_edges[1:] ** e - self.u_edges[:-1] ** e) / e
        self.mu_cells = 2.0 * self.cell_weight
        # interface conductances kappa = 1 / integral of u^(1-2b) between centers
        self.kappa = np.zeros(self.n_cells + 1)
        for j in range(1, self.n_cells):
            self.kappa[j] = 1.0 / self._resistance(
                self.u_centers[j - 1], self.u_centers[j], self.u_edges[j]
            )
        if self.dirichlet_outer:
            self.kappa[self.n_cells] = 1.0 / self._resistance(
                self.u_centers[-1], self.u_edges[-1], self.u_edges[-1]
            )
        self._matrix = self._assemble()

    def _resistance(self, u_lo: float, u_hi: float, u_if: float) -> float:
        b = float(np.asarray(self.b_of_x(np.array([u_if**2])))[0])
        p = 1.0 - 2.0 * b
        if abs(p + 1.0) < 1e-12:  # exponent -1
            return math.log(u_hi / u_lo)
        return (u_hi ** (p + 1.0) - u_lo ** (p + 1.0)) / (p + 1.0)

    def _assemble(self) -> sparse.csc_matrix:
        N = self.n_cells
        main = np.zeros(N)
        lower = np.zeros(N - 1)
        upper = np.zeros(N - 1)
        for j in range(N):
            k_left = self.kappa[j]
            k_right = self.kappa[j + 1]
            scale = 1.0 / (4.0 * self.cell_weight[j])
            main[j] = -(k_left + k_right) * scale
            if j > 0:
                lower[j - 1] = k_left * scale
            if j < N - 1:
                upper[j] = k_right * scale
        return sparse.diags(
            [lower, main, upper], offsets=[-1, 0, 1], format="csc"
        )

    def l2_mu_norm(self, values: np.ndarray) -> float:
        return float(np.sqrt(np.sum(values**2 * self.mu_cells)))

    def mass(self, values: np.ndarray) -> float:
        return float(np.sum(values * self.mu_cells))


@dataclass(frozen=True)
class Solution1D:
    """Space-time field produced by the grid solver (values are mu-densities
    when the initial data was a mass-normalized spike)."""

    solver: Grid1dSolver
    times: np.ndarray
    values: np.ndarray  # (n_times, n_cells)

    def value(self, t: float, x: float) -> float:
        """Bilinear interpolation in (t, sqrt(x))."""
        times = self.times
        if not (times[0] - 1e-12 <= t <= times[-1] + 1e-12):
            raise ValueError(f"time {t} outside solved range")
        kt = min(max(int(np.searchsorted(times, t) - 1), 0), len(times) - 2)
        wt = (t - times[kt]) / (times[kt + 1] - times[kt])
        u = math.sqrt(max(x, 0.0))
        centers = self.solver.u_centers
        if u <= centers[0]:
            j, wu = 0, 0.0
        elif u >= centers[-1]:
            j, wu = len(centers) - 2, 1.0
        else:
            j = int(np.searchsorted(centers, u) - 1)
            wu = (u - centers[j]) / (centers[j + 1] - centers[j])
        row0 = (1.0 - wu) * self.values[kt, j] + wu * self.values[kt, j + 1]
        row1 = (1.0 - wu) * self.values[kt + 1, j] + wu * self.values[kt + 1, j + 1]
        return float((1.0 - wt) * row0 + wt * row1)

    def mass(self, t: float) -> float:
        kt = int(np.argmin(np.abs(self.times - t)))
        return self.solver.mass(self.values[kt])


def dirac_approx(
    solver: Grid1dSolver, x0: float, normalization: str = "mass"
) -> np.ndarray:
    """Spike on the cell containing ``x0``.

    ``mass`` normalization gives unit weighted mass (the choice that converges
    to the transition density against the weighted measure); ``l2`` gives unit
    weighted L2 norm.
    """
    j = int(np.clip(np.searchsorted(solver.u_edges, math.sqrt(max(x0, 0.0))) - 1,
                    0, solver.n_cells - 1))
    v = np.zeros(solver.n_cells)
    if normalization == "mass":
        v[j] = 1.0 / solver.mu_cells[j]
    elif normalization == "l2":
        v[j] = 1.0 / math.sqrt(solver.mu_cells[j])
    else:
        raise ValueError("normalization must be 'mass' or 'l2'")
    return v


def solve_parabolic_1d(
    solver: Grid1dSolver,
    f,
    gsrc,
    T: float,
    dt: float,
    theta: float = 0.5,
    stability_check: bool = True,
) -> Solution1D:
    """Theta-scheme evolution (Crank-Nicolson by default) of the 1D problem.

    ``f`` is the initial data (callable on x or an array of cell values),
    ``gsrc`` an optional source ``(t, x) -> value``.  For a zero source the
    discrete weighted L2 norm must not grow; growth beyond roundoff raises
    :class:`UnstableConfigurationError`.
    """
    if not (0.0 <= theta <= 1.0):
        raise ValueError("theta must lie in [0, 1]")
    n_steps = int(round(T / dt))
    if n_steps < 1 or abs(n_steps * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError("T must be a positive integer multiple of dt")
    if callable(f):
        v = np.asarray(f(solver.x_centers), dtype=float)
    else:
        v = np.asarray(f, dtype=float).copy()
    if v.shape != (solver.n_cells,):
        raise ValueError("initial data does not match the grid")
    A = solver._matrix
    eye = sparse.identity(solver.n_cells, format="csc")
    lhs = splu((eye - dt * theta * A).tocsc())
    rhs_mat = eye + dt * (1.0 - theta) * A
    times = dt * np.arange(n_steps + 1)
    out = np.empty((n_steps + 1, solver.n_cells))
    out[0] = v
    norm_prev = solver.l2_mu_norm(v)
    has_source = gsrc is not None
    for k in range(1, n_steps + 1):
        rhs = rhs_mat @ v
        if has_source:
            g0 = np.asarray(gsrc(times[k - 1], solver.x_centers), dtype=float)
            g1 = np.asarray(gsrc(times[k], solver.x_centers), dtype=float)
            rhs = rhs + dt * 0.5 * (g0 + g1)
        v = lhs.solve(rhs)
        out[k] = v
        if stability_check and not has_source:
            norm = solver.l2_mu_norm(v)
            if norm > norm_prev * (1.0 + 1e-10) + 1e-14:
                raise UnstableConfigurationError(
                    f"weighted L2 norm grew at step {k}: {norm_prev} -> {norm}"
                )
            norm_prev = norm
    return Solution1D(solver=solver, times=times, values=out)
