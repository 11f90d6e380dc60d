"""Empirical two-cylinder ratio probes and the iteration-chain geometry.

Nonnegative stopped-boundary solutions are probed with sup/inf ratios over
offset space-time cylinders; lattices live in the ``(sqrt(x), y)`` chart so
that metric balls are well covered near the degenerate boundary.  No
theoretical constants are claimed: the reports carry empirical ratios and
their stability across scales and lattice refinements.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .geometry import (
    MetricBall,
    ParabolicCylinder,
    Point,
    cylinder_sets,
)

__all__ = [
    "LatticeSpec",
    "HarnackReport",
    "ChainGeometry",
    "harnack_ratio",
    "scale_invariant_scan",
    "chain_geometry",
    "chain_count",
    "chain_count_bound",
    "memoize_estimator",
]


@dataclass(frozen=True)
class LatticeSpec:
    """Sample lattice resolution for one cylinder (times x per-axis nodes)."""

    n_time: int = 3
    n_space: int = 5

    def __post_init__(self) -> None:
        if self.n_time < 2 or self.n_space < 2:
            raise ValueError("lattice needs at least 2 nodes per direction")

    def refine(self) -> "LatticeSpec":
        """Nested refinement: every current node stays a node."""
        return LatticeSpec(2 * self.n_time - 1, 2 * self.n_space - 1)


@dataclass(frozen=True)
class HarnackReport:
    """Sup/inf of a candidate solution over an (earlier, later) cylinder pair."""

    sup_value: float
    sup_stderr: float
    inf_value: float
    inf_stderr: float
    ratio: float
    radius: float
    sup_cylinder: tuple[float, float]
    inf_cylinder: tuple[float, float]
    lattice: LatticeSpec
    flag: str = ""

    def to_json(self) -> dict:
        return {
            "sup": self.sup_value,
            "sup_stderr": self.sup_stderr,
            "inf": self.inf_value,
            "inf_stderr": self.inf_stderr,
            "ratio": self.ratio,
            "radius": self.radius,
            "sup_time_window": list(self.sup_cylinder),
            "inf_time_window": list(self.inf_cylinder),
            "lattice": [self.lattice.n_time, self.lattice.n_space],
            "flag": self.flag,
        }


def _ball_lattice(ball: MetricBall, n_space: int) -> list[Point]:
    """Tensor lattice covering a metric ball, sqrt-spaced on degenerate axes."""
    from .geometry import ball_box

    box = ball_box(ball)
    dims = ball.center.dims
    axes = []
    for axis, (lo, hi) in enumerate(box):
        if axis < dims.n:
            u = np.linspace(math.sqrt(max(lo, 0.0)), math.sqrt(hi), n_space)
            axes.append(u**2)
        else:
            axes.append(np.linspace(lo, hi, n_space))
    mesh = np.meshgrid(*axes, indexing="ij")
    flat = np.stack(mesh, axis=-1).reshape(-1, dims.total)
    return [Point.from_vector(dims, row) for row in flat]


def _extremes_over_cylinder(
    u_estimator: Callable[[float, Point], "object"],
    t_lo: float,
    t_hi: float,
    ball: MetricBall,
    lattice: LatticeSpec,
) -> tuple[float, float, float, float]:
    """(max, stderr at max, min, stderr at min) of the estimator on the lattice."""
    times = np.linspace(t_lo, t_hi, lattice.n_time)
    points = _ball_lattice(ball, lattice.n_space)
    best_max = -math.inf
    best_min = math.inf
    se_max = se_min = 0.0
    for t in times:
        for p in points:
            est = u_estimator(float(t), p)
            v = est.value
            if v > best_max:
                best_max, se_max = v, est.stderr
            if v < best_min:
                best_min, se_min = v, est.stderr
    return best_max, se_max, best_min, se_min


def harnack_ratio(
    u_estimator: Callable[[float, Point], "object"],
    t0: float,
    z0: Point,
    r: float,
    lattice: LatticeSpec = LatticeSpec(),
    noise_floor: float | None = None,
) -> HarnackReport:
    """Lattice sup over the earlier cylinder ending at ``t0 - 2 r^2`` against
    the lattice inf over the cylinder ending at ``t0`` (same ball radius).

    The estimator must return objects with ``value`` and ``stderr``.  When the
    inf does not clear the Monte Carlo noise floor the ratio is reported as
    infinite with an explanatory flag.
    """
    sup_cyl = ParabolicCylinder(t0 - 2.0 * r * r, z0, r)
    inf_cyl = ParabolicCylinder(t0, z0, r)
    sup_v, sup_se, _, _ = _extremes_over_cylinder(
        u_estimator, *sup_cyl.time_interval, sup_cyl.ball, lattice
    )
    _, _, inf_v, inf_se = _extremes_over_cylinder(
        u_estimator, *inf_cyl.time_interval, inf_cyl.ball, lattice
    )
    floor = noise_floor if noise_floor is not None else 3.0 * inf_se
    if inf_v <= floor:
        return HarnackReport(
            sup_v, sup_se, inf_v, inf_se, math.inf, r,
            sup_cyl.time_interval, inf_cyl.time_interval, lattice,
            flag="unbounded-at-this-resolution",
        )
    return HarnackReport(
        sup_v, sup_se, inf_v, inf_se, sup_v / inf_v, r,
        sup_cyl.time_interval, inf_cyl.time_interval, lattice,
    )


def scale_invariant_scan(
    u_estimator: Callable[[float, Point], "object"],
    s: float,
    z: Point,
    R: float,
    c: float,
    d: float,
    rho_list: Sequence[float],
    lattice: LatticeSpec = LatticeSpec(),
    noise_floor: float | None = None,
) -> list[HarnackReport]:
    """Sup/inf ratios over the offset cylinder pairs for each probe radius.

    Probe radii must satisfy ``0 < rho < c R``; the estimator's solution must
    cover ``(s - 4 R^2, s + R^2) x B_{4R}(z)``.
    """
    reports = []
    for rho in rho_list:
        if not (0.0 < rho < c * R):
            raise ValueError(f"probe radius {rho} outside (0, cR) = (0, {c * R})")
        q_minus, q_plus = cylinder_sets(s, z, rho, c, d)
        sup_v, sup_se, _, _ = _extremes_over_cylinder(
            u_estimator, q_minus.t_lo, q_minus.t_hi, q_minus.ball, lattice
        )
        _, _, inf_v, inf_se = _extremes_over_cylinder(
            u_estimator, q_plus.t_lo, q_plus.t_hi, q_plus.ball, lattice
        )
        floor = noise_floor if noise_floor is not None else 3.0 * inf_se
        if inf_v <= floor:
            reports.append(
                HarnackReport(
                    sup_v, sup_se, inf_v, inf_se, math.inf, rho,
                    (q_minus.t_lo, q_minus.t_hi), (q_plus.t_lo, q_plus.t_hi),
                    lattice, flag="unbounded-at-this-resolution",
                )
            )
        else:
            reports.append(
                HarnackReport(
                    sup_v, sup_se, inf_v, inf_se, sup_v / inf_v, rho,
                    (q_minus.t_lo, q_minus.t_hi), (q_plus.t_lo, q_plus.t_hi),
                    lattice,
                )
            )
    return reports


# ---------------------------------------------------------------------------
# Iteration-chain geometry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChainGeometry:
    """Closed-form window after ``k`` chained cylinder steps of base radius r:
    time offsets ``alpha_k = (1 - 4^-k) r^2`` and ``beta_k = (2/3) alpha_k``,
    spatial reach ``gamma_k = (1 - 2^-k) r``.
    """

    k: int
    alpha_k: float
    beta_k: float
    gamma_k: float
    r: float


def chain_geometry(r: float, k: int) -> ChainGeometry:
    if r <= 0.0 or k < 1:
        raise ValueError("need r > 0 and k >= 1")
    shrink2 = 0.5**k
    shrink4 = 0.25**k
    alpha = (1.0 - shrink4) * r * r
    return ChainGeometry(
        k=k,
        alpha_k=alpha,
        beta_k=(2.0 / 3.0) * alpha,
        gamma_k=(1.0 - shrink2) * r,
        r=r,
    )


def chain_count(rho: float, r: float) -> int:
    """Smallest ``k`` whose chained window covers reach ``rho``:
    ``(1 - 2^-k) r >= rho`` and ``(1 - 4^-k) r^2 >= rho^2``.
    """
    if not 0.0 < rho < r:
        raise ValueError("need 0 < rho < r")
    k = 1
    while not (
        (1.0 - 0.5**k) * r >= rho and (1.0 - 0.25**k) * r * r >= rho * rho
    ):
        k += 1
        if k > 4096:
            raise RuntimeError("chain count did not converge")
    return k


def chain_count_bound(rho: float, r: float, slack: float = 1.0) -> float:
    """Logarithmic upper bound ``ln(r / (r - rho)) / ln 2 + slack``.

    ``slack = 1`` suffices: the first chain condition alone forces
    ``k >= log2(r / (r - rho))`` and one extra halving step always covers the
    second.
    """
    return math.log(r / (r - rho)) / math.log(2.0) + slack


def memoize_estimator(fn: Callable[[float, Point], "object"]):
    """Cache an estimator on (t, z) lattice nodes so scans reuse bundles."""
    cache: dict = {}

    def wrapped(t: float, z: Point):
        key = (round(float(t), 12), tuple(round(v, 12) for v in z.vector))
        if key not in cache:
            cache[key] = fn(t, z)
        return cache[key]

    wrapped.cache = cache
    return wrapped
