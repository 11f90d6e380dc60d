"""Monte Carlo evaluation of the stochastic representations.

Every estimator here runs stopped paths and reduces per-path payoffs into an
:class:`Estimate` carrying value, standard error, and the effective sample
size under weights.  Cross-checks pin common random numbers through the
configuration seed, so monotonicity-style properties hold pathwise rather
than merely statistically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import (
    BoundaryDataGapError,
    InvalidTestFunctionError,
    WeightBlowupError,
)
from .fields import TestFunction
from .geometry import DomainSpec, Point, StateSpaceDims
from .operators import SingularOperatorSpec, apply_singular_batch
from .sde import GirsanovField, SdeCoefficients, StandardSdeCoefficients
from .simulate import PathBundle, PathConfig, config_fingerprint, simulate_bundle

__all__ = [
    "Estimate",
    "BoundaryData",
    "estimate_semigroup",
    "estimate_dirichlet",
    "estimate_inhomogeneous",
    "estimate_probabilistic_solution",
    "exp_moment_diagnostic",
    "martingale_residual",
    "RunningIntegralObserver",
]

UNTRUSTED_ESS = 100.0
LOG_WEIGHT_CAP = 700.0


@dataclass(frozen=True)
class Estimate:
    """Monte Carlo estimate with error bar and weighting diagnostics."""

    value: float
    stderr: float
    n_paths: int
    n_effective: float
    fingerprint: str
    trusted: bool = True
    flag: str = ""
    extra: dict = field(default_factory=dict, compare=False)

    def to_json(self, seed: int | None = None) -> dict:
        doc = {
            "value": self.value,
            "stderr": self.stderr,
            "n_paths": self.n_paths,
            "n_effective": self.n_effective,
            "config_hash": self.fingerprint,
        }
        if seed is not None:
            doc["seed"] = seed
        if self.flag:
            doc["flag"] = self.flag
        return doc


def _reduce(samples: np.ndarray, weights: np.ndarray | None, fingerprint: str,
            flag: str = "", extra: dict | None = None) -> Estimate:
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[0]
    value = float(samples.mean())
    stderr = float(samples.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    if weights is None:
        ess = float(n)
    else:
        w = np.asarray(weights, dtype=float)
        denom = float(np.sum(w * w))
        ess = float(np.sum(w)) ** 2 / denom if denom > 0.0 else 0.0
    return Estimate(
        value=value,
        stderr=stderr,
        n_paths=n,
        n_effective=ess,
        fingerprint=fingerprint,
        trusted=ess >= UNTRUSTED_ESS,
        flag=flag,
        extra=extra or {},
    )


class BoundaryData:
    """Data on the parabolic boundary (initial slice plus lateral boundary).

    ``fn(times, states)`` must accept arrays (N,), (N, d) and return (N,);
    with ``vectorized=False`` a scalar callable is looped.  Non-finite values
    raise :class:`BoundaryDataGapError` with the offending point.
    """

    def __init__(self, fn: Callable, vectorized: bool = True, continuous: bool = True):
        self.fn = fn
        self.vectorized = vectorized
        self.continuous = continuous

    def __call__(self, times: np.ndarray, states: np.ndarray) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        states = np.asarray(states, dtype=float)
        if self.vectorized:
            vals = np.asarray(self.fn(times, states), dtype=float)
        else:
            vals = np.array(
                [float(self.fn(t, s)) for t, s in zip(times, states)]
            )
        bad = ~np.isfinite(vals)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise BoundaryDataGapError(
                f"boundary data undefined at t={times[i]}, z={states[i]}"
            )
        return vals


class RunningIntegralObserver:
    """Trapezoid accumulation of ``integrand(path_time, state)`` while alive.

    The node at the exit step is included (half weight), matching the stopped
    time integral on the grid.  Snapshots are taken at the requested grid
    times; blocks write disjoint slices so concurrent execution is safe.
    """

    def __init__(self, integrand: Callable, snapshot_times: Sequence[float]):
        self.integrand = integrand
        self.snapshot_times = [float(t) for t in snapshot_times]
        self.totals: np.ndarray | None = None
        self.snapshots: dict[float, np.ndarray] = {}
        self._dt = None

    def prepare(self, n_paths: int, dims: StateSpaceDims, config: PathConfig) -> None:
        self.totals = np.zeros(n_paths)
        self.snapshots = {
            t: np.zeros(n_paths) for t in self.snapshot_times
        }
        self._dt = config.dt
        self._snap_steps = {}
        for t in self.snapshot_times:
            k = int(round(t / config.dt))
            if abs(k * config.dt - t) > 1e-9 * max(1.0, t):
                raise ValueError(f"snapshot time {t} is not on the grid")
            self._snap_steps[k] = t

    def observe(self, sl, k, t, prev, new, alive_before, alive_after, dW,
                logw=None) -> None:
        g_prev = np.asarray(self.integrand(t - self._dt, prev), dtype=float)
        g_new = np.asarray(self.integrand(t, new), dtype=float)
        add = 0.5 * self._dt * (g_prev + g_new)
        self.totals[sl] += np.where(alive_before, add, 0.0)
        if k in self._snap_steps:
            self.snapshots[self._snap_steps[k]][sl] = self.totals[sl]


def _as_state_fn(f) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(f, TestFunction):
        return f.value
    return f


def _fit_grid(config: PathConfig, horizon: float) -> PathConfig:
    """Adjust the step so the horizon is an exact grid multiple.

    The step is shrunk at most (never enlarged past the requested one), so
    lattice scans can probe arbitrary space-time points while keeping the
    configured resolution.
    """
    if horizon <= 0.0:
        raise ValueError("horizon must be positive")
    k = max(1, int(round(horizon / config.dt)))
    return replace(config, dt=horizon / k, horizon=horizon,
                   record=(0.0, horizon))


def estimate_semigroup(
    coeffs: SdeCoefficients | StandardSdeCoefficients,
    f,
    t: float,
    z0: Point,
    domain: DomainSpec,
    config: PathConfig,
    n_threads: int = 1,
) -> Estimate:
    """Killed-semigroup action ``E[ f(Z(t)) 1_{t < tau} ]`` at ``z0``.

    Exited paths contribute 0, so with ``f == 1`` this is the survival
    probability (identically 1 on the full space).
    """
    if t <= 0.0:
        raise ValueError("t must be positive")
    cfg = _fit_grid(config, t)
    bundle = simulate_bundle(coeffs, z0, domain, cfg, n_threads=n_threads)
    alive = bundle.alive_at(t)
    vals = np.zeros(bundle.n_paths)
    if alive.any():
        vals[alive] = _as_state_fn(f)(bundle.states_at(t)[alive])
    return _reduce(vals, None, bundle.fingerprint)


def _stop_payoff(
    bundle: PathBundle, gdata: BoundaryData, t: float
) -> tuple[np.ndarray, np.ndarray]:
    stop_state, stop_time = bundle.stop_states()
    payoff = gdata(t - stop_time, stop_state)
    return payoff, stop_time


def estimate_dirichlet(
    coeffs,
    gdata: BoundaryData,
    t: float,
    z0: Point,
    t1: float,
    domain: DomainSpec,
    config: PathConfig,
    t_cut: float | None = None,
    n_threads: int = 1,
) -> Estimate:
    """Stopped-boundary representation ``E[g(t - stop, Z(stop))]`` with
    ``stop = (t - t1) ^ tau``; with ``t_cut`` the payoff is truncated by the
    indicator ``stop < t_cut - t1``.
    """
    horizon = t - t1
    if horizon < 0.0:
        raise ValueError("t must be >= t1")
    fp = config_fingerprint(config, op="dirichlet", t=t, t1=t1)
    if horizon == 0.0:
        v = float(gdata(np.array([t1]), z0.vector[None, :])[0])
        return Estimate(v, 0.0, config.n_paths, float(config.n_paths), fp)
    cfg = _fit_grid(config, horizon)
    bundle = simulate_bundle(coeffs, z0, domain, cfg, n_threads=n_threads)
    payoff, stop_time = _stop_payoff(bundle, gdata, t)
    if t_cut is not None:
        payoff = payoff * (stop_time < t_cut - t1)
    return _reduce(payoff, None, bundle.fingerprint)


def estimate_inhomogeneous(
    coeffs,
    f,
    gsrc,
    t: float,
    z0: Point,
    domain: DomainSpec,
    config: PathConfig,
    t1: float = 0.0,
    n_threads: int = 1,
) -> Estimate:
    """Killed semigroup plus source contribution along alive path prefixes.

    ``E[f(Z(h)) 1_{h < tau}] + E[int_0^{h ^ tau} gsrc(t - r, Z(r)) dr]`` with
    ``h = t - t1``; the source is integrated by the trapezoid rule on the
    simulation grid.
    """
    horizon = t - t1
    if horizon <= 0.0:
        raise ValueError("t must exceed t1")
    obs = None
    observers = ()
    if gsrc is not None:
        obs = RunningIntegralObserver(
            lambda r, states: gsrc(t - r, states), snapshot_times=[horizon]
        )
        observers = (obs,)
    cfg = _fit_grid(config, horizon)
    bundle = simulate_bundle(
        coeffs, z0, domain, cfg, n_threads=n_threads, observers=observers
    )
    alive = bundle.alive_at(horizon)
    vals = np.zeros(bundle.n_paths)
    if f is not None and alive.any():
        vals[alive] = _as_state_fn(f)(bundle.states_at(horizon)[alive])
    if obs is not None:
        vals = vals + obs.snapshots[horizon]
    return _reduce(vals, None, bundle.fingerprint)


def estimate_probabilistic_solution(
    coeffs: SdeCoefficients,
    u_boundary: BoundaryData,
    t: float,
    z0: Point,
    subcylinder: tuple[float, float, DomainSpec],
    theta: GirsanovField,
    config: PathConfig,
    n_threads: int = 1,
) -> Estimate:
    """Weighted stopped representation ``E[M(stop) u(t - stop, Z(stop))]``.

    ``subcylinder`` is ``(t1', t2', domain')``; paths run under the
    divergence-form dynamics while the weight ``M`` carries the drift change
    back to the standard model.  Log-weights beyond +-700 raise
    :class:`WeightBlowupError` (the exponential overflows float64).
    """
    t1p, t2p, domain_p = subcylinder
    if not (t1p <= t <= t2p):
        raise ValueError("t must lie inside the subcylinder time interval")
    horizon = t - t1p
    fp = config_fingerprint(config, op="probabilistic", t=t, t1=t1p)
    if horizon == 0.0:
        v = float(u_boundary(np.array([t]), z0.vector[None, :])[0])
        return Estimate(v, 0.0, config.n_paths, float(config.n_paths), fp)
    cfg = _fit_grid(config, horizon)
    bundle = simulate_bundle(
        coeffs, z0, domain_p, cfg, theta=theta, n_threads=n_threads
    )
    stop_state, stop_time = bundle.stop_states()
    # the log weight freezes at exit, so its final recorded value is log M(stop)
    logw = bundle.log_weights[:, -1] if bundle.log_weights is not None else np.zeros(
        bundle.n_paths
    )
    if np.any(np.abs(logw) > LOG_WEIGHT_CAP):
        worst = float(np.abs(logw).max())
        raise WeightBlowupError(
            f"|log weight| reached {worst:.1f}; the drift-change exponent "
            "overflows float64 at this horizon"
        )
    weights = np.exp(logw)
    payoff = u_boundary(t - stop_time, stop_state)
    return _reduce(weights * payoff, weights, bundle.fingerprint)


def exp_moment_diagnostic(
    std_coeffs: StandardSdeCoefficients,
    theta: GirsanovField,
    z0: Point,
    T: float,
    config: PathConfig,
    n_threads: int = 1,
) -> Estimate:
    """Exponential moment ``E[exp(9 int_0^T |theta(Z^(t))|^2 dt)]``.

    Runs the standard-side dynamics on the full space.  Overflow is reported
    as an infinite value with an "overflow" flag instead of an exception; the
    extra payload carries a heavy-tail indicator (max/mean of the samples).
    """
    domain = DomainSpec.full_space(std_coeffs.dims)

    def integrand(r, states):
        th = theta.theta_batch(states, config.log_clamp_eps)
        return 9.0 * np.einsum("pi,pi->p", th, th)

    obs = RunningIntegralObserver(integrand, snapshot_times=[T])
    cfg = _fit_grid(config, T)
    bundle = simulate_bundle(
        std_coeffs, z0, domain, cfg, n_threads=n_threads, observers=(obs,)
    )
    acc = obs.snapshots[T]
    if np.any(acc > LOG_WEIGHT_CAP):
        return Estimate(
            value=math.inf,
            stderr=math.inf,
            n_paths=bundle.n_paths,
            n_effective=float(bundle.n_paths),
            fingerprint=bundle.fingerprint,
            trusted=False,
            flag="overflow",
            extra={"overflow_fraction": float(np.mean(acc > LOG_WEIGHT_CAP))},
        )
    samples = np.exp(acc)
    mean = float(samples.mean())
    heavy = float(samples.max() / mean) if mean > 0.0 else math.inf
    est = _reduce(samples, None, bundle.fingerprint, extra={"max_over_mean": heavy})
    return est


def martingale_residual(
    op: SingularOperatorSpec,
    coeffs: SdeCoefficients,
    phi: TestFunction,
    z0: Point,
    domain: DomainSpec,
    time_grid: Sequence[float],
    config: PathConfig,
    n_threads: int = 1,
) -> list[Estimate]:
    """Residuals ``E[phi(Z(t ^ tau)) - phi(z0) - int_0^{t ^ tau} L phi]``.

    A weak solution of the stopped dynamics makes every residual vanish; the
    discrete scheme leaves an O(dt) offset.  ``phi`` must declare a compact
    support contained in the domain (plus its degenerate faces).
    """
    if phi.support_box is None:
        raise InvalidTestFunctionError("test function must declare a compact support")
    for axis, (lo, hi) in enumerate(phi.support_box):
        dlo, dhi = domain.bounding_box[axis]
        lo_ok = lo >= dlo - 1e-12 if (axis < domain.dims.n and dlo == 0.0) else lo > dlo
        if not (lo_ok and hi < dhi):
            raise InvalidTestFunctionError(
                f"support axis {axis} = [{lo}, {hi}] not inside domain "
                f"({dlo}, {dhi})"
            )
    times = sorted(float(t) for t in time_grid)
    if not times or times[0] < 0.0:
        raise ValueError("time grid must be nonnegative")
    horizon = times[-1]

    def integrand(r, states):
        return apply_singular_batch(op, phi, states, config.log_clamp_eps)

    obs = RunningIntegralObserver(integrand, snapshot_times=times)
    record = tuple(t for t in times if t > 0.0)
    cfg = replace(config, horizon=horizon, record=(0.0,) + record)
    bundle = simulate_bundle(
        coeffs, z0, domain, cfg, n_threads=n_threads, observers=(obs,)
    )
    phi0 = float(phi.value(z0.vector[None, :])[0])
    out = []
    for t in times:
        if t == 0.0:
            out.append(
                Estimate(0.0, 0.0, bundle.n_paths, float(bundle.n_paths),
                         bundle.fingerprint, extra={"t": 0.0})
            )
            continue
        states = bundle.states_at(t)  # frozen at exit, i.e. Z(t ^ tau)
        vals = phi.value(states) - phi0 - obs.snapshots[t]
        est = _reduce(vals, None, bundle.fingerprint, extra={"t": t})
        out.append(est)
    return out
