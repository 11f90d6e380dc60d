"""SDE-level fields derived from an operator pair.

The divergence-compatible operator induces a stochastic equation whose
degenerate rows read ``dX_i = (g_i + X_i sum_j f_ij ln X_j) dt
+ sqrt(X_i) sum_j sigma_ij dW_j`` and whose free rows read
``dY_l = (e_l + sum_j f_(n+l)j ln X_j) dt + sum_j sigma_(n+l)j dW_j``.
This module assembles ``g, e, f``, the diffusion matrix ``D`` with
``sigma sigma* = D``, the full drift, the increment covariance ``alpha``,
the standard-side analogues, and the drift-change field ``theta`` tying the
two equations together.
"""

from __future__ import annotations

from dataclasses import dataclass
import numpy as np

from .errors import (
    DimensionMismatchError,
    EllipticityViolationError,
    InvalidMatrixError,
)
from .geometry import Point, StateSpaceDims
from .operators import (
    SingularOperatorSpec,
    StandardOperatorSpec,
    drift_identity_e,
    drift_identity_f,
    drift_identity_g,
)

__all__ = [
    "SdeCoefficients",
    "StandardSdeCoefficients",
    "GirsanovField",
    "build_sde_coefficients",
    "build_standard_sde_coefficients",
    "dispersion_sqrt",
    "dispersion_sqrt_batch",
    "girsanov_theta",
    "make_girsanov_field",
]

EIGENVALUE_CLIP = 1e-12


def dispersion_sqrt_batch(D: np.ndarray, clip: float = EIGENVALUE_CLIP) -> np.ndarray:
    """Symmetric PSD square root of a batch of symmetric matrices.

    Eigenvalues in ``[-clip, 0)`` are treated as roundoff and clipped to 0;
    anything more negative raises :class:`EllipticityViolationError`.  The
    eigen-decomposition uses ascending eigenvalues and a deterministic sign
    convention (first nonzero eigenvector component positive), so identical
    input bytes give identical output bytes.
    """
    D = np.asarray(D, dtype=float)
    single = D.ndim == 2
    if single:
        D = D[None, :, :]
    if D.shape[-1] != D.shape[-2]:
        raise InvalidMatrixError(f"matrix batch has shape {D.shape}")
    asym = np.abs(D - np.swapaxes(D, -1, -2)).max(initial=0.0)
    scale = np.abs(D).max(initial=1.0)
    if asym > 1e-10 * max(scale, 1.0):
        raise InvalidMatrixError(f"matrix is not symmetric (max asymmetry {asym:.3g})")
    w, V = np.linalg.eigh(0.5 * (D + np.swapaxes(D, -1, -2)))
    if float(w.min(initial=0.0)) < -clip * max(scale, 1.0):
        bad = float(w.min())
        raise EllipticityViolationError(
            f"matrix has negative eigenvalue {bad:.6g} beyond the roundoff clip"
        )
    w = np.maximum(w, 0.0)
    # deterministic eigenvector signs: first component of magnitude > tol positive
    k = V.shape[-1]
    flat = V.reshape(-1, k, k)
    for col in range(k):
        cols = flat[:, :, col]
        mags = np.abs(cols)
        lead = np.argmax(mags > 1e-12, axis=1)
        signs = np.sign(cols[np.arange(cols.shape[0]), lead])
        signs = np.where(signs == 0.0, 1.0, signs)
        flat[:, :, col] = cols * signs[:, None]
    V = flat.reshape(V.shape)
    root = (V * np.sqrt(w)[..., None, :]) @ np.swapaxes(V, -1, -2)
    root = 0.5 * (root + np.swapaxes(root, -1, -2))
    return root[0] if single else root


def dispersion_sqrt(D: np.ndarray, clip: float = EIGENVALUE_CLIP) -> np.ndarray:
    """Symmetric PSD square root of one matrix; see the batch form."""
    return dispersion_sqrt_batch(np.asarray(D, dtype=float), clip=clip)


def _scale_matrix(states: np.ndarray, n: int, total: int) -> np.ndarray:
    """Diagonal ``diag(sqrt(x_1..x_n), 1..1)`` per state."""
    s = np.ones(states.shape[:-1] + (total,))
    if n:
        s[..., :n] = np.sqrt(np.maximum(states[..., :n], 0.0))
    return s


@dataclass(frozen=True)
class SdeCoefficients:
    """All simulation-level fields of the divergence-compatible equation."""

    dims: StateSpaceDims
    source: SingularOperatorSpec
    constant_dispersion: np.ndarray | None = None

    # -- raw identity fields -------------------------------------------------

    def g_batch(self, states: np.ndarray) -> np.ndarray:
        return drift_identity_g(self.source, states)

    def e_batch(self, states: np.ndarray) -> np.ndarray:
        return drift_identity_e(self.source, states)

    def f_batch(self, states: np.ndarray) -> np.ndarray:
        return drift_identity_f(self.source, states)

    # -- second-order fields ---------------------------------------------------

    def D_batch(self, states: np.ndarray) -> np.ndarray:
        """Diffusion matrix: ``D_ii = 2 a_ii + 2 x_i a~_ii``,
        ``D_ij = 2 sqrt(x_i x_j) a~_ij`` (i != j),
        ``D_i,n+l = 4 sqrt(x_i) c_il``, ``D_n+l,n+k = 2 d_lk``.
        """
        op = self.source
        n, m = self.dims.n, self.dims.m
        total = n + m
        states = np.asarray(states, dtype=float)
        D = np.zeros(states.shape[:-1] + (total, total))
        sx = np.sqrt(np.maximum(states[..., :n], 0.0))
        a = op.a_diag.evaluate_batch(states)
        at = op.a_tilde.evaluate_batch(states)
        c = op.c.evaluate_batch(states)
        d = op.d.evaluate_batch(states)
        for i in range(n):
            D[..., i, i] = 2.0 * a[..., i] + 2.0 * states[..., i] * at[..., i, i]
            for j in range(n):
                if j != i:
                    D[..., i, j] = 2.0 * sx[..., i] * sx[..., j] * at[..., i, j]
            for l in range(m):
                D[..., i, n + l] = 4.0 * sx[..., i] * c[..., i, l]
                D[..., n + l, i] = D[..., i, n + l]
        for l in range(m):
            for k in range(m):
                D[..., n + l, n + k] = 2.0 * d[..., l, k]
        return D

    def sigma_batch(self, states: np.ndarray) -> np.ndarray:
        if self.constant_dispersion is not None:
            states = np.asarray(states, dtype=float)
            return np.broadcast_to(
                self.constant_dispersion,
                states.shape[:-1] + self.constant_dispersion.shape,
            )
        return dispersion_sqrt_batch(self.D_batch(states))

    def alpha_batch(self, states: np.ndarray) -> np.ndarray:
        """Increment covariance ``alpha = S D S`` with ``S = diag(sqrt(x), 1)``."""
        states = np.asarray(states, dtype=float)
        D = self.D_batch(states)
        s = _scale_matrix(states, self.dims.n, self.dims.total)
        return D * s[..., :, None] * s[..., None, :]

    # -- drift ----------------------------------------------------------------

    def drift_batch(self, states: np.ndarray, log_clamp_eps: float = 1e-12) -> np.ndarray:
        """Full drift vector including the clamped logarithmic terms."""
        n, m = self.dims.n, self.dims.m
        states = np.asarray(states, dtype=float)
        g = self.g_batch(states)
        e = self.e_batch(states)
        f = self.f_batch(states)
        out = np.concatenate([g, e], axis=-1)
        if n:
            logs = np.log(np.maximum(states[..., :n], log_clamp_eps))
            log_sum = np.einsum("...rj,...j->...r", f, logs)
            out[..., :n] += states[..., :n] * log_sum[..., :n]
            if m:
                out[..., n:] += log_sum[..., n:]
        return out

    # -- single-point conveniences ---------------------------------------------

    def g(self, z: Point) -> np.ndarray:
        return self.g_batch(z.vector[None, :])[0]

    def e(self, z: Point) -> np.ndarray:
        return self.e_batch(z.vector[None, :])[0]

    def f(self, z: Point) -> np.ndarray:
        return self.f_batch(z.vector[None, :])[0]

    def D(self, z: Point) -> np.ndarray:
        return self.D_batch(z.vector[None, :])[0]

    def sigma(self, z: Point) -> np.ndarray:
        return self.sigma_batch(z.vector[None, :])[0]

    def alpha(self, z: Point) -> np.ndarray:
        return self.alpha_batch(z.vector[None, :])[0]

    def drift(self, z: Point, log_clamp_eps: float = 1e-12) -> np.ndarray:
        return self.drift_batch(z.vector[None, :], log_clamp_eps)[0]


@dataclass(frozen=True)
class StandardSdeCoefficients:
    """Simulation-level fields of the standard (bounded-drift) equation."""

    dims: StateSpaceDims
    source: StandardOperatorSpec
    constant_dispersion: np.ndarray | None = None

    def drift_batch(self, states: np.ndarray, log_clamp_eps: float = 0.0) -> np.ndarray:
        states = np.asarray(states, dtype=float)
        bh = self.source.b_hat.evaluate_batch(states)
        eh = self.source.e_hat.evaluate_batch(states)
        return np.concatenate([bh, eh], axis=-1)

    def D_batch(self, states: np.ndarray) -> np.ndarray:
        """``D^_ii = 2 (1 + x_i a^_ii)``, ``D^_ij = 2 sqrt(x_i x_j) a^_ij``,
        ``D^_i,n+l = 4 sqrt(x_i) c^_il``, ``D^_n+l,n+k = 2 d^_lk``.
        """
        std = self.source
        n, m = self.dims.n, self.dims.m
        total = n + m
        states = np.asarray(states, dtype=float)
        D = np.zeros(states.shape[:-1] + (total, total))
        sx = np.sqrt(np.maximum(states[..., :n], 0.0))
        a = std.a_hat.evaluate_batch(states)
        c = std.c_hat.evaluate_batch(states)
        d = std.d_hat.evaluate_batch(states)
        for i in range(n):
            D[..., i, i] = 2.0 * (1.0 + states[..., i] * a[..., i, i])
            for j in range(n):
                if j != i:
                    D[..., i, j] = 2.0 * sx[..., i] * sx[..., j] * a[..., i, j]
            for l in range(m):
                D[..., i, n + l] = 4.0 * sx[..., i] * c[..., i, l]
                D[..., n + l, i] = D[..., i, n + l]
        for l in range(m):
            for k in range(m):
                D[..., n + l, n + k] = 2.0 * d[..., l, k]
        return D

    def sigma_batch(self, states: np.ndarray) -> np.ndarray:
        if self.constant_dispersion is not None:
            states = np.asarray(states, dtype=float)
            return np.broadcast_to(
                self.constant_dispersion,
                states.shape[:-1] + self.constant_dispersion.shape,
            )
        return dispersion_sqrt_batch(self.D_batch(states))

    def alpha_batch(self, states: np.ndarray) -> np.ndarray:
        states = np.asarray(states, dtype=float)
        D = self.D_batch(states)
        s = _scale_matrix(states, self.dims.n, self.dims.total)
        return D * s[..., :, None] * s[..., None, :]

    def b_hat(self, z: Point) -> np.ndarray:
        return self.source.b_hat.evaluate_batch(z.vector[None, :])[0]

    def e_hat(self, z: Point) -> np.ndarray:
        return self.source.e_hat.evaluate_batch(z.vector[None, :])[0]

    def D_hat(self, z: Point) -> np.ndarray:
        return self.D_batch(z.vector[None, :])[0]

    def sigma_hat(self, z: Point) -> np.ndarray:
        return self.sigma_batch(z.vector[None, :])[0]


def _try_constant_dispersion(coeffs) -> np.ndarray | None:
    """Precompute sigma when the diffusion matrix has no state dependence."""
    dims = coeffs.dims
    probe = np.zeros((1, dims.total))
    probe[0, : dims.n] = 0.37
    probe2 = np.ones((1, dims.total)) * 0.61
    D1 = coeffs.D_batch(probe)[0]
    D2 = coeffs.D_batch(probe2)[0]
    if np.allclose(D1, D2, rtol=0.0, atol=1e-14):
        return dispersion_sqrt(D1)
    return None


def build_sde_coefficients(op: SingularOperatorSpec) -> SdeCoefficients:
    """Assemble all simulation fields from a divergence-compatible spec."""
    coeffs = SdeCoefficients(dims=op.dims, source=op)
    if op.a_tilde.is_zero and op.c.is_zero and op.a_diag.is_constant and op.d.is_constant:
        coeffs = SdeCoefficients(
            dims=op.dims, source=op, constant_dispersion=_try_constant_dispersion(coeffs)
        )
    return coeffs


def build_standard_sde_coefficients(std: StandardOperatorSpec) -> StandardSdeCoefficients:
    coeffs = StandardSdeCoefficients(dims=std.dims, source=std)
    if std.a_hat.is_zero and std.c_hat.is_zero and std.d_hat.is_constant:
        coeffs = StandardSdeCoefficients(
            dims=std.dims,
            source=std,
            constant_dispersion=_try_constant_dispersion(coeffs),
        )
    return coeffs


# ---------------------------------------------------------------------------
# Drift-change field
# ---------------------------------------------------------------------------


def _theta_rhs(
    std: StandardSdeCoefficients,
    sing: SdeCoefficients,
    states: np.ndarray,
    log_clamp_eps: float,
) -> np.ndarray:
    n, m = sing.dims.n, sing.dims.m
    states = np.asarray(states, dtype=float)
    f = sing.f_batch(states)
    x = states[..., :n]
    with np.errstate(divide="ignore"):
        logs = (
            np.log(np.maximum(x, log_clamp_eps)) if log_clamp_eps > 0.0 else np.log(x)
        )
    log_sum = np.einsum("...rj,...j->...r", f, logs) if n else np.zeros(
        states.shape[:-1] + (m,)
    )
    rhs = np.zeros(states.shape[:-1] + (n + m,))
    if n:
        rhs[..., :n] = np.sqrt(np.maximum(x, 0.0)) * log_sum[..., :n]
    if m:
        eh = std.source.e_hat.evaluate_batch(states)
        e = sing.e_batch(states)
        rhs[..., n:] = log_sum[..., n:] + eh - e
    return rhs


def girsanov_theta(
    std: StandardSdeCoefficients,
    sing: SdeCoefficients,
    z: Point,
    residual_tol: float = 1e-10,
) -> np.ndarray:
    """Drift-change vector at one interior point.

    Solves ``sigma^(z) theta = rhs(z)`` where the degenerate rows of ``rhs``
    are ``sqrt(x_i) sum_j f_ij ln x_j`` and the free rows are
    ``sum_j f_(n+l)j ln x_j + e^_l - e_l``.  Requires every ``x_i > 0``.
    """
    if z.dims != sing.dims or z.dims != std.dims:
        raise DimensionMismatchError("point/coefficients dims mismatch")
    if any(v == 0.0 for v in z.x):
        raise EllipticityViolationError(
            "theta is defined for interior points only (x_i > 0)"
        )
    vec = z.vector[None, :]
    rhs = _theta_rhs(std, sing, vec, log_clamp_eps=0.0)[0]
    sig = std.sigma_batch(vec)[0]
    try:
        theta = np.linalg.solve(sig, rhs)
    except np.linalg.LinAlgError as exc:
        raise EllipticityViolationError(f"standard dispersion is singular: {exc}")
    resid = float(np.abs(sig @ theta - rhs).max(initial=0.0))
    if resid > residual_tol * max(1.0, float(np.abs(rhs).max(initial=1.0))):
        raise EllipticityViolationError(
            f"theta solve residual {resid:.3g} exceeds tolerance"
        )
    return theta


@dataclass(frozen=True)
class GirsanovField:
    """Batched drift-change field for path weighting.

    ``theta_batch`` uses clamped logarithms so it extends continuously by 0
    onto each degenerate face (the degenerate rows carry a ``sqrt(x_i)``
    factor).
    """

    std: StandardSdeCoefficients
    sing: SdeCoefficients

    @property
    def dims(self) -> StateSpaceDims:
        return self.sing.dims

    def theta_batch(self, states: np.ndarray, log_clamp_eps: float = 1e-12) -> np.ndarray:
        states = np.asarray(states, dtype=float)
        rhs = _theta_rhs(self.std, self.sing, states, log_clamp_eps)
        sig = self.std.sigma_batch(states)
        try:
            return np.linalg.solve(sig, rhs[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise EllipticityViolationError(f"standard dispersion is singular: {exc}")

    def theta(self, z: Point, log_clamp_eps: float = 1e-12) -> np.ndarray:
        return self.theta_batch(z.vector[None, :], log_clamp_eps)[0]


def make_girsanov_field(
    std: StandardSdeCoefficients | StandardOperatorSpec,
    sing: SdeCoefficients | SingularOperatorSpec,
) -> GirsanovField:
    """Pair a standard-side and a divergence-side model into a theta field.

    The pairing is mandatory: the free rows of the linear system need the
    standard-side drift ``e^``, so a divergence-form model alone cannot
    produce a theta field.
    """
    if isinstance(std, StandardOperatorSpec):
        std = build_standard_sde_coefficients(std)
    if isinstance(sing, SingularOperatorSpec):
        sing = build_sde_coefficients(sing)
    if std.dims != sing.dims:
        raise DimensionMismatchError("model pair dims mismatch")
    return GirsanovField(std=std, sing=sing)
