"""Degenerate diffusion generators: coefficient specs, pointwise application,
assumption validation, the energy form, and the standard -> divergence-form
translation.

Two operator families act on the state space.  The *standard* form has bounded
drift weights on the degenerate axes; the *divergence-compatible* form carries
additional drift terms with ``ln x_j`` factors that make it symmetric against
the weighted measure of :mod:`kimura_lab.geometry`.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    BoundaryEvaluationError,
    DimensionMismatchError,
    InvalidWeightError,
    NonDerivableError,
)
from .fields import (
    ConstantField,
    FieldMatrix,
    FieldVector,
    ScalarField,
    TestFunction,
    field_from_json,
)
from .geometry import (
    DomainSpec,
    Point,
    QuadratureConfig,
    StateSpaceDims,
    WeightedMeasure,
)

__all__ = [
    "AssumptionConstants",
    "StandardOperatorSpec",
    "SingularOperatorSpec",
    "apply_standard",
    "apply_singular",
    "apply_standard_batch",
    "apply_singular_batch",
    "drift_identity_g",
    "drift_identity_e",
    "drift_identity_f",
    "bilinear_form",
    "validate_assumptions",
    "make_validation_grid",
    "ValidationReport",
    "CheckResult",
    "derive_singular_from_standard",
    "LatticeField",
    "operator_from_json",
]


@dataclass(frozen=True)
class AssumptionConstants:
    """Ellipticity floor ``delta``, uniform bound ``K``, boundary-weight floor."""

    delta: float
    K: float
    b_bar: float

    def __post_init__(self) -> None:
        if not (0.0 < self.delta <= self.K):
            raise ValueError(f"need 0 < delta <= K, got delta={self.delta}, K={self.K}")
        if self.b_bar <= 0.0:
            raise ValueError("b_bar must be positive")


class _OperatorBase:
    dims: StateSpaceDims

    def _check_point(self, z: Point) -> np.ndarray:
        if z.dims != self.dims:
            raise DimensionMismatchError(
                f"point dims {z.dims} do not match operator dims {self.dims}"
            )
        return z.vector


@dataclass(frozen=True)
class StandardOperatorSpec(_OperatorBase):
    """Coefficients of the standard (non-divergence) generator.

    Second order: ``x_i u_xixi + x_i x_j a_hat_ij u_xixj + x_i c_hat_il u_xiyl
    + d_hat_kl u_ykyl``; first order: ``b_hat_i u_xi + e_hat_l u_yl``.
    """

    dims: StateSpaceDims
    a_hat: FieldMatrix
    b_hat: FieldVector
    c_hat: FieldMatrix
    d_hat: FieldMatrix
    e_hat: FieldVector
    constants: AssumptionConstants | None = None

    def __post_init__(self) -> None:
        n, m = self.dims.n, self.dims.m
        if self.a_hat.shape != (n, n) or len(self.b_hat) != n:
            raise DimensionMismatchError("a_hat/b_hat shapes do not match dims")
        if self.c_hat.shape != (n, m) or self.d_hat.shape != (m, m):
            raise DimensionMismatchError("c_hat/d_hat shapes do not match dims")
        if len(self.e_hat) != m:
            raise DimensionMismatchError("e_hat length does not match dims")


@dataclass(frozen=True)
class SingularOperatorSpec(_OperatorBase):
    """Coefficients of the divergence-compatible generator with log drift.

    ``a_diag`` are the ``x_i u_xixi`` factors, ``a_tilde`` the symmetric
    second-order couplings, ``b`` the measure weights (with derivative access),
    ``c`` the degenerate/free couplings and ``d`` the free-block matrix.
    """

    dims: StateSpaceDims
    a_diag: FieldVector
    a_tilde: FieldMatrix
    b: FieldVector
    c: FieldMatrix
    d: FieldMatrix
    constants: AssumptionConstants | None = None

    def __post_init__(self) -> None:
        n, m = self.dims.n, self.dims.m
        if len(self.a_diag) != n or self.a_tilde.shape != (n, n) or len(self.b) != n:
            raise DimensionMismatchError("a/b shapes do not match dims")
        if self.c.shape != (n, m) or self.d.shape != (m, m):
            raise DimensionMismatchError("c/d shapes do not match dims")

    def measure(self) -> WeightedMeasure:
        """Weighted measure carrying this operator's ``b`` as exponents."""
        floor = self.constants.b_bar if self.constants is not None else 0.0
        return WeightedMeasure(self.b.evaluate_batch, self.dims, b_floor=floor)


# ---------------------------------------------------------------------------
# Drift identities shared by pointwise application and the SDE assembly
# ---------------------------------------------------------------------------


def drift_identity_g(op: SingularOperatorSpec, states: np.ndarray) -> np.ndarray:
    """Bounded part of the degenerate-axis drift, shape (..., n).

    ``g_i = b_i a_ii + x_i (d_xi a_ii + sum_j (a~_ij + delta_ij a~_ii
    + x_j d_xj a~_ij + a~_ij (b_j - 1)) + sum_l d_yl c_il)``.
    """
    n, m = op.dims.n, op.dims.m
    states = np.asarray(states, dtype=float)
    x = states[..., :n]
    a = op.a_diag.evaluate_batch(states)
    at = op.a_tilde.evaluate_batch(states)
    b = op.b.evaluate_batch(states)
    g = b * a
    for i in range(n):
        inner = op.a_diag[i].partial(i).evaluate_batch(states)
        for j in range(n):
            dat = op.a_tilde[i, j].partial(j).evaluate_batch(states)
            inner = inner + at[..., i, j] + states[..., j] * dat
            inner = inner + at[..., i, j] * (b[..., j] - 1.0)
            if i == j:
                inner = inner + at[..., i, i]
        for l in range(m):
            inner = inner + op.c[i, l].partial(n + l).evaluate_batch(states)
        g[..., i] = g[..., i] + x[..., i] * inner
    return g


def drift_identity_e(op: SingularOperatorSpec, states: np.ndarray) -> np.ndarray:
    """Bounded part of the free-axis drift, shape (..., m).

    ``e_l = sum_i (x_i d_xi c_il + b_i c_il) + sum_k d_yk d_lk``.
    """
    n, m = op.dims.n, op.dims.m
    states = np.asarray(states, dtype=float)
    e = np.zeros(states.shape[:-1] + (m,))
    if m == 0:
        return e
    b = op.b.evaluate_batch(states)
    cval = op.c.evaluate_batch(states)
    for l in range(m):
        acc = np.zeros(states.shape[:-1])
        for i in range(n):
            acc = acc + states[..., i] * op.c[i, l].partial(i).evaluate_batch(states)
            acc = acc + b[..., i] * cval[..., i, l]
        for k in range(m):
            acc = acc + op.d[l, k].partial(n + k).evaluate_batch(states)
        e[..., l] = acc
    return e


def drift_identity_f(op: SingularOperatorSpec, states: np.ndarray) -> np.ndarray:
    """Log-drift couplings, shape (..., n+m, n).

    Degenerate rows: ``f_ij = d_xi b_j + sum_k x_k a~_ik d_xk b_j
    + sum_l c_il d_yl b_j``.  Free rows: ``f_(n+l)j = sum_i x_i c_il d_xi b_j
    + sum_k d_lk d_yk b_j``.  All rows vanish identically when ``b`` is
    constant.
    """
    n, m = op.dims.n, op.dims.m
    states = np.asarray(states, dtype=float)
    total = n + m
    f = np.zeros(states.shape[:-1] + (total, n))
    if n == 0:
        return f
    db = np.stack(
        [
            np.stack(
                [op.b[j].partial(axis).evaluate_batch(states) for axis in range(total)],
                axis=-1,
            )
            for j in range(n)
        ],
        axis=-2,
    )  # (..., j, axis)
    at = op.a_tilde.evaluate_batch(states)
    cval = op.c.evaluate_batch(states)
    dval = op.d.evaluate_batch(states)
    for j in range(n):
        for i in range(n):
            acc = db[..., j, i]
            for k in range(n):
                acc = acc + states[..., k] * at[..., i, k] * db[..., j, k]
            for l in range(m):
                acc = acc + cval[..., i, l] * db[..., j, n + l]
            f[..., i, j] = acc
        for l in range(m):
            acc = np.zeros(states.shape[:-1])
            for i in range(n):
                acc = acc + states[..., i] * cval[..., i, l] * db[..., j, i]
            for k in range(m):
                acc = acc + dval[..., l, k] * db[..., j, n + k]
            f[..., n + l, j] = acc
    return f


def _clamped_log(x: np.ndarray, eps: float) -> np.ndarray:
    return np.log(np.maximum(x, eps))


# ---------------------------------------------------------------------------
# Pointwise application
# ---------------------------------------------------------------------------


def apply_standard_batch(
    op: StandardOperatorSpec, u: TestFunction, states: np.ndarray
) -> np.ndarray:
    """Standard generator applied to ``u`` on a batch of states."""
    n, m = op.dims.n, op.dims.m
    states = np.asarray(states, dtype=float)
    grad = u.gradient(states)
    hess = u.hessian(states)
    x = states[..., :n]
    out = np.zeros(states.shape[:-1])
    a = op.a_hat.evaluate_batch(states)
    c = op.c_hat.evaluate_batch(states)
    d = op.d_hat.evaluate_batch(states)
    bh = op.b_hat.evaluate_batch(states)
    eh = op.e_hat.evaluate_batch(states)
    for i in range(n):
        out = out + x[..., i] * hess[..., i, i] + bh[..., i] * grad[..., i]
        for j in range(n):
            out = out + x[..., i] * x[..., j] * a[..., i, j] * hess[..., i, j]
        for l in range(m):
            out = out + x[..., i] * c[..., i, l] * hess[..., i, n + l]
    for l in range(m):
        out = out + eh[..., l] * grad[..., n + l]
        for k in range(m):
            out = out + d[..., k, l] * hess[..., n + k, n + l]
    return out


def apply_standard(op: StandardOperatorSpec, u: TestFunction, z: Point) -> float:
    vec = op._check_point(z)
    return float(apply_standard_batch(op, u, vec[None, :])[0])


def apply_singular_batch(
    op: SingularOperatorSpec,
    u: TestFunction,
    states: np.ndarray,
    log_clamp_eps: float = 0.0,
) -> np.ndarray:
    """Divergence-compatible generator applied to ``u`` on a batch of states.

    With ``log_clamp_eps > 0`` the logarithmic drift uses
    ``x_i * f * ln(max(x_j, eps))``, which extends continuously by 0 onto the
    degenerate boundary; with the default 0, boundary states produce -inf logs
    (callers should use :func:`apply_singular` for the strict contract).
    """
    n, m = op.dims.n, op.dims.m
    states = np.asarray(states, dtype=float)
    grad = u.gradient(states)
    hess = u.hessian(states)
    x = states[..., :n]
    a = op.a_diag.evaluate_batch(states)
    at = op.a_tilde.evaluate_batch(states)
    c = op.c.evaluate_batch(states)
    d = op.d.evaluate_batch(states)
    out = np.zeros(states.shape[:-1])
    for i in range(n):
        out = out + x[..., i] * a[..., i] * hess[..., i, i]
        for j in range(n):
            out = out + x[..., i] * x[..., j] * at[..., i, j] * hess[..., i, j]
        for l in range(m):
            out = out + 2.0 * x[..., i] * c[..., i, l] * hess[..., i, n + l]
    for l in range(m):
        for k in range(m):
            out = out + d[..., l, k] * hess[..., n + l, n + k]
    g = drift_identity_g(op, states)
    e = drift_identity_e(op, states)
    f = drift_identity_f(op, states)
    if n:
        with np.errstate(divide="ignore"):
            logs = _clamped_log(x, log_clamp_eps) if log_clamp_eps > 0.0 else np.log(x)
        log_sum = np.einsum("...rj,...j->...r", f, logs)
        # x * ln x -> 0 convention at the boundary when clamped
        if log_clamp_eps > 0.0:
            log_sum = np.where(np.isfinite(log_sum), log_sum, 0.0)
    else:
        log_sum = np.zeros(states.shape[:-1] + (0,))
    for i in range(n):
        out = out + (g[..., i] + x[..., i] * log_sum[..., i]) * grad[..., i]
    for l in range(m):
        out = out + (e[..., l] + log_sum[..., n + l]) * grad[..., n + l]
    return out


def apply_singular(op: SingularOperatorSpec, u: TestFunction, z: Point) -> float:
    """Pointwise application; requires all degenerate coordinates positive."""
    vec = op._check_point(z)
    if any(v == 0.0 for v in z.x):
        raise BoundaryEvaluationError(
            "log-drift terms are undefined on the degenerate boundary; "
            "evaluate at interior points or use the clamped batch form"
        )
    return float(apply_singular_batch(op, u, vec[None, :])[0])


# ---------------------------------------------------------------------------
# Energy form
# ---------------------------------------------------------------------------


def bilinear_form(
    op: SingularOperatorSpec,
    u: TestFunction,
    v: TestFunction,
    domain: DomainSpec,
    quadrature: QuadratureConfig = QuadratureConfig(),
) -> float:
    """Symmetric energy form of ``op`` against its weighted measure.

    ``Q(u, v) = int [ sum_i x_i a_ii du_i dv_i + sum_ij x_i x_j a~_ij du_i dv_j
    + sum_il x_i c_il (du_i dv_yl + du_yl dv_i) + sum_lk d_lk du_yl dv_yk ] dmu``
    computed by tensor midpoint quadrature in the ``u = sqrt(x)`` chart over
    the intersection of the test-function supports with the domain box.
    """
    dims = op.dims
    n, m = dims.n, dims.m
    box = [list(pair) for pair in domain.bounding_box]
    for support in (u.support_box, v.support_box):
        if support is not None:
            for axis, (lo, hi) in enumerate(support):
                box[axis][0] = max(box[axis][0], lo)
                box[axis][1] = min(box[axis][1], hi)
    for axis in range(n):
        box[axis][0] = max(box[axis][0], 0.0)
    if any(not np.isfinite(lo) or not np.isfinite(hi) for lo, hi in box):
        raise ValueError(
            "energy-form quadrature needs a finite box; give the test functions "
            "compact supports or the domain a finite bounding box"
        )
    if any(hi <= lo for lo, hi in box):
        return 0.0
    k = quadrature.points_per_axis
    axes = []
    steps = []
    for axis, (lo, hi) in enumerate(box):
        if axis < n:
            ulo, uhi = math.sqrt(lo), math.sqrt(hi)
            nodes = ulo + (uhi - ulo) / k * (np.arange(k) + 0.5)
            steps.append((uhi - ulo) / k)
        else:
            nodes = lo + (hi - lo) / k * (np.arange(k) + 0.5)
            steps.append((hi - lo) / k)
        axes.append(nodes)
    grids = np.meshgrid(*axes, indexing="ij")
    states = np.stack(
        [g**2 if axis < n else g for axis, g in enumerate(grids)], axis=-1
    )
    gu = u.gradient(states)
    gv = v.gradient(states)
    a = op.a_diag.evaluate_batch(states)
    at = op.a_tilde.evaluate_batch(states)
    c = op.c.evaluate_batch(states)
    d = op.d.evaluate_batch(states)
    x = states[..., :n]
    integrand = np.zeros(states.shape[:-1])
    for i in range(n):
        integrand = integrand + x[..., i] * a[..., i] * gu[..., i] * gv[..., i]
        for j in range(n):
            integrand = integrand + (
                x[..., i] * x[..., j] * at[..., i, j] * gu[..., i] * gv[..., j]
            )
        for l in range(m):
            integrand = integrand + x[..., i] * c[..., i, l] * (
                gu[..., i] * gv[..., n + l] + gu[..., n + l] * gv[..., i]
            )
    for l in range(m):
        for kk in range(m):
            integrand = integrand + d[..., l, kk] * gu[..., n + l] * gv[..., n + kk]
    # weight and sqrt-chart jacobian
    b = op.b.evaluate_batch(states)
    for i in range(n):
        ui = grids[i]
        expo = 2.0 * b[..., i] - 1.0
        with np.errstate(divide="ignore", invalid="ignore"):
            factor = 2.0 * np.where((ui == 0.0) & (expo == 0.0), 1.0, ui**expo)
        if np.any(~np.isfinite(factor)):
            raise InvalidWeightError("non-integrable measure weight in energy form")
        integrand = integrand * factor
    inside = domain.contains_underline(states)
    integrand = integrand * inside
    return float(integrand.sum() * np.prod(steps))


# ---------------------------------------------------------------------------
# Assumption validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    passed: bool
    checks: tuple[CheckResult, ...]
    inferred: AssumptionConstants | None
    form_min: float
    form_max: float

    def summary(self) -> str:
        lines = [f"{'PASS' if self.passed else 'FAIL'}"]
        for c in self.checks:
            lines.append(f"  [{'ok' if c.passed else 'FAIL'}] {c.name}: {c.detail}")
        return "\n".join(lines)


def make_validation_grid(
    dims: StateSpaceDims,
    x_hi: float = 1.0,
    y_box: tuple[float, float] = (-1.0, 1.0),
    points_per_axis: int = 9,
) -> np.ndarray:
    """Tensor sample grid over ``[0, x_hi]^n x y_box^m``, boundary included."""
    axes = []
    for _ in range(dims.n):
        axes.append(np.linspace(0.0, x_hi, points_per_axis))
    for _ in range(dims.m):
        axes.append(np.linspace(y_box[0], y_box[1], points_per_axis))
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack(grids, axis=-1).reshape(-1, dims.total)


def _form_matrix(op, states: np.ndarray) -> np.ndarray:
    """Symmetric matrix of the ellipticity quadratic form at each state."""
    n, m = op.dims.n, op.dims.m
    total = n + m
    N = states.shape[0]
    G = np.zeros((N, total, total))
    sx = np.sqrt(np.maximum(states[:, :n], 0.0))
    if isinstance(op, StandardOperatorSpec):
        a = op.a_hat.evaluate_batch(states)
        c = op.c_hat.evaluate_batch(states)
        d = op.d_hat.evaluate_batch(states)
        diag = np.ones((N, n))
    else:
        a = op.a_tilde.evaluate_batch(states)
        c = op.c.evaluate_batch(states)
        d = op.d.evaluate_batch(states)
        diag = op.a_diag.evaluate_batch(states)
    for i in range(n):
        G[:, i, i] = diag[:, i] + sx[:, i] * sx[:, i] * a[:, i, i]
        for j in range(n):
            if j != i:
                G[:, i, j] = sx[:, i] * sx[:, j] * a[:, i, j]
        for l in range(m):
            G[:, i, n + l] = 4.0 * sx[:, i] * c[:, i, l]
            G[:, n + l, i] = G[:, i, n + l]
    for l in range(m):
        for k in range(m):
            G[:, n + l, n + k] = 4.0 * d[:, l, k]
    return 0.5 * (G + np.swapaxes(G, 1, 2))


def validate_assumptions(
    op,
    grid: np.ndarray,
    constants: AssumptionConstants | None = None,
    n_directions: int = 128,
    seed: int = 0,
    tol: float = 1e-8,
) -> ValidationReport:
    """Empirical check of the coefficient assumptions on a sample grid.

    Reports the extremes of the ellipticity quadratic form (exact smallest /
    largest eigenvalue of the assembled form matrix plus random unit
    directions), the flat-region requirements away from the unit cell, the
    drift-weight bounds, and symmetry of the second-order blocks.  Shrinking
    the grid can only relax the empirical extremes, never turn a pass into a
    fail.
    """
    states = np.asarray(grid, dtype=float)
    if states.ndim != 2 or states.shape[1] != op.dims.total:
        raise DimensionMismatchError("grid must have shape (N, n+m)")
    n, m = op.dims.n, op.dims.m
    constants = constants or getattr(op, "constants", None)
    checks: list[CheckResult] = []

    if isinstance(op, StandardOperatorSpec):
        sym_blocks = [("a_hat", op.a_hat), ("d_hat", op.d_hat)]
        b_vec, c_mat, d_mat = op.b_hat, op.c_hat, op.d_hat
    else:
        sym_blocks = [("a_tilde", op.a_tilde), ("d", op.d)]
        b_vec, c_mat, d_mat = op.b, op.c, op.d

    for name, block in sym_blocks:
        vals = block.evaluate_batch(states)
        asym = float(np.abs(vals - np.swapaxes(vals, -1, -2)).max(initial=0.0))
        checks.append(
            CheckResult(f"symmetry:{name}", asym <= tol, f"max asymmetry {asym:.3g}")
        )

    G = _form_matrix(op, states)
    eigs = np.linalg.eigvalsh(G)
    form_min = float(eigs[:, 0].min())
    form_max = float(eigs[:, -1].max())
    rng = np.random.Generator(np.random.Philox(key=seed))
    dirs = rng.standard_normal((n_directions, op.dims.total))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    vals = np.einsum("kd,nde,ke->nk", dirs, G, dirs)
    dir_min, dir_max = float(vals.min()), float(vals.max())
    checks.append(
        CheckResult(
            "ellipticity:eigen-vs-directions",
            dir_min >= form_min - tol and dir_max <= form_max + tol,
            f"eig range [{form_min:.4g}, {form_max:.4g}], "
            f"sampled [{dir_min:.4g}, {dir_max:.4g}]",
        )
    )
    checks.append(
        CheckResult(
            "ellipticity:positive",
            form_min > 0.0,
            f"min quadratic-form eigenvalue {form_min:.4g}",
        )
    )

    # flat requirements strictly beyond the unit cell; the shared face x_j = 1
    # is attributed to the unit-cell region (on the face itself the two
    # regional requirement sets are contradictory for non-unit weights)
    away = np.zeros(states.shape[0], dtype=bool)
    if n:
        away = np.any(states[:, :n] > 1.0 + 1e-12, axis=1)
    if away.any():
        s_away = states[away]
        worst = 0.0
        if isinstance(op, StandardOperatorSpec):
            a_vals = op.a_hat.evaluate_batch(s_away)
        else:
            a_vals = op.a_tilde.evaluate_batch(s_away)
        worst = max(worst, float(np.abs(a_vals).max(initial=0.0)))
        c_vals = c_mat.evaluate_batch(s_away)
        worst = max(worst, float(np.abs(c_vals).max(initial=0.0)))
        d_vals = d_mat.evaluate_batch(s_away)
        eye = np.eye(m)
        if m:
            worst = max(worst, float(np.abs(d_vals - eye).max(initial=0.0)))
        if not isinstance(op, StandardOperatorSpec):
            # away from the corner the diagonal factors must flatten the
            # second-order term to a plain Laplacian: x_j a_jj = 1 (the
            # standard form has no consistent analogue of this clause)
            for j in range(n):
                mask = s_away[:, j] > 1.0 + 1e-12
                if mask.any():
                    aj = op.a_diag[j].evaluate_batch(s_away[mask])
                    worst = max(
                        worst,
                        float(np.abs(s_away[mask, j] * aj - 1.0).max(initial=0.0)),
                    )
        b_away = b_vec.evaluate_batch(s_away)
        if n:
            worst_b = float(np.abs(b_away - 1.0).max(initial=0.0))
        else:
            worst_b = 0.0
        checks.append(
            CheckResult(
                "flat-away-from-unit-cell",
                worst <= tol and worst_b <= tol,
                f"max coefficient deviation {worst:.3g}, drift-weight deviation "
                f"{worst_b:.3g} on {int(away.sum())} grid points",
            )
        )
    else:
        checks.append(
            CheckResult(
                "flat-away-from-unit-cell", True, "no grid points outside unit cell"
            )
        )

    b_all = b_vec.evaluate_batch(states)
    K_b = float(np.abs(b_all).max(initial=0.0)) if n else 0.0
    b_floor = math.inf
    for i in range(n):
        slice_states = states.copy()
        slice_states[:, i] = 0.0
        bi = b_vec.evaluate_batch(slice_states)[:, i]
        b_floor = min(b_floor, float(bi.min()))
    if n == 0:
        b_floor = math.inf

    inferred = None
    if form_min > 0.0 and (n == 0 or b_floor > 0.0):
        inferred = AssumptionConstants(
            delta=form_min,
            K=max(form_max, K_b, form_min),
            b_bar=b_floor if n else 1.0,
        )
    if n:
        checks.append(
            CheckResult(
                "boundary-weight-floor",
                b_floor > 0.0,
                f"min weight on degenerate faces {b_floor:.4g}",
            )
        )

    if constants is not None:
        checks.append(
            CheckResult(
                "declared-constants",
                form_min >= constants.delta - tol
                and form_max <= constants.K + tol
                and K_b <= constants.K + tol
                and (n == 0 or b_floor >= constants.b_bar - tol),
                f"delta_hat={form_min:.4g} vs delta={constants.delta}, "
                f"K_hat={max(form_max, K_b):.4g} vs K={constants.K}, "
                f"b_floor={b_floor if n else float('inf'):.4g} vs b_bar={constants.b_bar}",
            )
        )

    passed = all(c.passed for c in checks)
    return ValidationReport(
        passed=passed,
        checks=tuple(checks),
        inferred=inferred,
        form_min=form_min,
        form_max=form_max,
    )


# ---------------------------------------------------------------------------
# Standard -> divergence-form translation
# ---------------------------------------------------------------------------


class LatticeField(ScalarField):
    """Multilinear interpolation of node values on a uniform tensor lattice.

    Evaluation outside the lattice extrapolates linearly (exact for affine
    data), so solved drift weights stay usable on rare path excursions past
    the solve box.
    """

    def __init__(self, axes: Sequence[np.ndarray], values: np.ndarray):
        self.axes = [np.asarray(a, dtype=float) for a in axes]
        self.values = np.asarray(values, dtype=float)
        if self.values.shape != tuple(len(a) for a in self.axes):
            raise DimensionMismatchError("lattice values do not match axes")
        self.los = np.array([a[0] for a in self.axes])
        self.steps = np.array(
            [a[1] - a[0] if len(a) > 1 else 1.0 for a in self.axes]
        )
        self.sizes = np.array([len(a) for a in self.axes])

    def evaluate_batch(self, states: np.ndarray) -> np.ndarray:
        states = np.asarray(states, dtype=float)
        flat = states.reshape(-1, states.shape[-1])
        t = (flat - self.los) / self.steps
        idx = np.clip(np.floor(t).astype(int), 0, self.sizes - 2)
        frac = t - idx
        out = np.zeros(flat.shape[0])
        dims = len(self.axes)
        for corner in itertools.product((0, 1), repeat=dims):
            weight = np.ones(flat.shape[0])
            pick = []
            for axis, bit in enumerate(corner):
                weight = weight * (frac[:, axis] if bit else 1.0 - frac[:, axis])
                pick.append(idx[:, axis] + bit)
            out += weight * self.values[tuple(pick)]
        return out.reshape(states.shape[:-1])

    def partial(self, axis: int) -> "LatticeField":
        grad = np.gradient(self.values, self.axes[axis], axis=axis)
        return LatticeField(self.axes, grad)


def derive_singular_from_standard(
    std: StandardOperatorSpec,
    lattice_box: Sequence[tuple[float, float]] | None = None,
    lattice_spacing: float = 1.0 / 64.0,
    tol: float = 1e-10,
) -> SingularOperatorSpec:
    """Translate a standard spec into the divergence-compatible form.

    Sets ``a_ii = 1``, ``a~ = a_hat``, ``c = c_hat / 2``, ``d = d_hat`` and
    solves pointwise for the drift weights ``b`` from the requirement that the
    bounded drift part reproduce ``b_hat``:

        ``b_i + x_i sum_j a~_ij b_j
          = b_hat_i - x_i (sum_j (a~_ij + delta_ij a~_ii + x_j d_xj a~_ij
                                   - a~_ij) + sum_l d_yl c_il)``

    The solve runs on a uniform lattice (default spacing 1/64 per axis) and
    ``b`` is the multilinear interpolant; its derivatives come from central
    differences of the solved node values.
    """
    dims = std.dims
    n, m = dims.n, dims.m
    if n == 0:
        return SingularOperatorSpec(
            dims=dims,
            a_diag=FieldVector([]),
            a_tilde=FieldMatrix.zeros(0, 0),
            b=FieldVector([]),
            c=_half_matrix(std.c_hat),
            d=std.d_hat,
            constants=std.constants,
        )
    if lattice_box is None:
        lattice_box = [(0.0, 4.0)] * n + [(-4.0, 4.0)] * m
    axes = []
    for lo, hi in lattice_box:
        count = max(int(round((hi - lo) / lattice_spacing)) + 1, 2)
        axes.append(np.linspace(lo, hi, count))
    grids = np.meshgrid(*axes, indexing="ij")
    states = np.stack(grids, axis=-1).reshape(-1, dims.total)

    at = std.a_hat.evaluate_batch(states)
    bh = std.b_hat.evaluate_batch(states)
    x = states[:, :n]
    N = states.shape[0]
    M = np.broadcast_to(np.eye(n), (N, n, n)).copy()
    M += x[:, :, None] * at
    rhs = bh.copy()
    for i in range(n):
        inner = np.zeros(N)
        for j in range(n):
            dat = std.a_hat[i, j].partial(j).evaluate_batch(states)
            inner = inner + states[:, j] * dat
            if i == j:
                inner = inner + at[:, i, i]
        for l in range(m):
            # c = c_hat / 2
            inner = inner + 0.5 * std.c_hat[i, l].partial(n + l).evaluate_batch(states)
        rhs[:, i] = rhs[:, i] - x[:, i] * inner
    try:
        b_nodes = np.linalg.solve(M, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise NonDerivableError(f"pointwise drift-weight system is singular: {exc}")
    conds = np.abs(np.linalg.det(M))
    if float(conds.min()) < 1e-14:
        raise NonDerivableError("pointwise drift-weight system is numerically singular")

    shape = tuple(len(a) for a in axes)
    b_fields = [
        LatticeField(axes, b_nodes[:, i].reshape(shape)) for i in range(n)
    ]
    if std.constants is not None:
        for i in range(n):
            on_face = states[:, i] <= tol
            if on_face.any():
                floor = float(b_nodes[on_face, i].min())
                if floor < std.constants.b_bar - 1e-9:
                    raise InvalidWeightError(
                        f"solved drift weight b_{i} reaches {floor:.6g} on the "
                        f"degenerate face, below the declared floor "
                        f"{std.constants.b_bar}"
                    )
    return SingularOperatorSpec(
        dims=dims,
        a_diag=FieldVector([ConstantField(1.0)] * n),
        a_tilde=std.a_hat,
        b=FieldVector(b_fields),
        c=_half_matrix(std.c_hat),
        d=std.d_hat,
        constants=std.constants,
    )


class _ScaledField(ScalarField):
    def __init__(self, base: ScalarField, factor: float):
        self.base = base
        self.factor = float(factor)
        self.is_zero = base.is_zero or self.factor == 0.0
        self.is_constant = base.is_constant

    def evaluate_batch(self, states: np.ndarray) -> np.ndarray:
        return self.factor * self.base.evaluate_batch(states)

    def partial(self, axis: int) -> ScalarField:
        return _ScaledField(self.base.partial(axis), self.factor)


def _half_matrix(mat: FieldMatrix) -> FieldMatrix:
    return FieldMatrix(
        [[_ScaledField(e, 0.5) for e in row] for row in mat.entries],
        shape=mat.shape,
    )


# ---------------------------------------------------------------------------
# JSON loading of built-in coefficient families
# ---------------------------------------------------------------------------


def operator_from_json(doc) -> StandardOperatorSpec | SingularOperatorSpec:
    """Build an operator spec from the JSON coefficient-family description."""
    import json as _json

    if isinstance(doc, str):
        doc = _json.loads(doc)
    dims = StateSpaceDims(int(doc["dims"]["n"]), int(doc["dims"]["m"]))
    total = dims.total
    n, m = dims.n, dims.m

    def vec(key, length):
        entries = doc.get(key)
        if entries is None:
            return FieldVector.zeros(length)
        return FieldVector([field_from_json(e, total) for e in entries])

    def mat(key, p, q, default="zeros"):
        entries = doc.get(key)
        if entries is None:
            if default == "identity":
                return FieldMatrix.identity(p)
            return FieldMatrix.zeros(p, q)
        return FieldMatrix([[field_from_json(e, total) for e in row] for row in entries])

    constants = None
    if "constants" in doc:
        c = doc["constants"]
        constants = AssumptionConstants(float(c["delta"]), float(c["K"]), float(c["b_bar"]))

    kind = doc.get("kind", "standard")
    if kind == "standard":
        return StandardOperatorSpec(
            dims=dims,
            a_hat=mat("a_hat", n, n),
            b_hat=vec("b_hat", n),
            c_hat=mat("c_hat", n, m),
            d_hat=mat("d_hat", m, m, default="identity"),
            e_hat=vec("e_hat", m),
            constants=constants,
        )
    if kind == "singular":
        a_diag = doc.get("a_diag")
        if a_diag is None:
            a_vec = FieldVector([ConstantField(1.0)] * n)
        else:
            a_vec = FieldVector([field_from_json(e, total) for e in a_diag])
        return SingularOperatorSpec(
            dims=dims,
            a_diag=a_vec,
            a_tilde=mat("a_tilde", n, n),
            b=vec("b", n),
            c=mat("c", n, m),
            d=mat("d", m, m, default="identity"),
            constants=constants,
        )
    raise ValueError(f"unknown operator kind {kind!r}")
