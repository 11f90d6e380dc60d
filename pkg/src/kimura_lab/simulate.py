"""Time-discrete simulation of the degenerate SDEs with boundary-aware schemes.

Paths are advanced on a fixed grid with one of three schemes: projected Euler
(default; the degenerate coordinates are clipped at 0 after each step), a
drift-implicit square-root step for stiff drift near the boundary, and exact
transition sampling for the separable constant-coefficient one-dimensional
model.  Exit from a domain is detected on the grid (first grid point outside
the domain together with its degenerate faces), after which the path freezes;
no bridge correction is applied, so the exit time carries an O(sqrt(dt)) bias
that is measured rather than corrected.

Randomness is counter-based: normals come from independent Philox streams
keyed by ``(seed, block_index)`` over fixed-size path blocks, so results are
byte-identical for a given configuration no matter how many worker threads
run the blocks.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import (
    DimensionMismatchError,
    InvalidStartError,
    NumericFailureError,
)
from .geometry import DomainSpec, Point, StateSpaceDims
from .sde import GirsanovField, SdeCoefficients, StandardSdeCoefficients

__all__ = [
    "PathConfig",
    "Trajectory",
    "PathBundle",
    "simulate_bundle",
    "step_singular",
    "step_standard",
    "config_fingerprint",
    "bundle_to_csv",
    "bundle_to_kimb",
    "read_kimb",
]

RNG_BLOCK = 4096
SCHEMES = ("euler-projected", "euler-implicit-sqrt", "exact-1d-gamma")
_AUTO_RECORD_BUDGET = 64_000_000  # floats


@dataclass(frozen=True)
class PathConfig:
    """Simulation grid, scheme, and reproducibility knobs.

    ``record`` selects which grid times are stored in the bundle: "all",
    "ends" (initial and final), an explicit tuple of grid times, or "auto"
    (all when the bundle stays small, ends otherwise).
    """

    dt: float
    seed: int
    n_paths: int
    horizon: float
    scheme: str = "euler-projected"
    log_clamp_eps: float = 1e-12
    record: str | tuple[float, ...] = "auto"
    store_increments: bool = False

    def __post_init__(self) -> None:
        if self.dt <= 0.0 or self.horizon <= 0.0:
            raise ValueError("dt and horizon must be positive")
        if not (0.0 < self.log_clamp_eps < 1.0):
            raise ValueError("log_clamp_eps must lie in (0, 1)")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")

    @property
    def n_steps(self) -> int:
        k = int(round(self.horizon / self.dt))
        if abs(k * self.dt - self.horizon) > 1e-9 * max(1.0, self.horizon):
            raise ValueError("horizon must be an integer multiple of dt")
        return max(k, 1)

    def grid(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)


def config_fingerprint(config: PathConfig, **extra) -> str:
    doc = {
        "dt": config.dt,
        "seed": config.seed,
        "n_paths": config.n_paths,
        "horizon": config.horizon,
        "scheme": config.scheme,
        "log_clamp_eps": config.log_clamp_eps,
    }
    doc.update(extra)
    return hashlib.sha256(
        json.dumps(doc, sort_keys=True, default=str).encode()
    ).hexdigest()[:16]


@dataclass(frozen=True)
class Trajectory:
    """Single-path view into a bundle (recorded grid only)."""

    times: np.ndarray
    states: np.ndarray
    exited: bool
    tau: float
    brownian_increments: np.ndarray | None
    log_weight: np.ndarray | None


@dataclass(frozen=True)
class PathBundle:
    """Immutable result of one simulation run.

    ``states`` holds the recorded snapshots, shape (n_paths, n_recorded, d);
    ``tau`` is the grid exit time (= horizon when the path never left),
    ``exit_state`` the first recorded point outside the domain (the frozen
    state), and ``log_weights`` the running log of the change-of-measure
    weight (zeros when no drift-change field was attached).
    """

    config: PathConfig
    domain: DomainSpec
    record_times: np.ndarray
    states: np.ndarray
    tau: np.ndarray
    tau_index: np.ndarray
    exited: np.ndarray
    exit_state: np.ndarray
    log_weights: np.ndarray | None
    increments: np.ndarray | None
    fingerprint: str

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def dims_total(self) -> int:
        return self.states.shape[2]

    def rng_stream_id(self, i: int) -> tuple[int, int, int]:
        """Counter-based stream of path ``i``: (seed, block key, column).

        The noise of a path is a pure function of this triple, independent of
        the worker-thread count.
        """
        if not 0 <= i < self.n_paths:
            raise IndexError(f"path index {i} out of range")
        return (self.config.seed, i // RNG_BLOCK, i % RNG_BLOCK)

    def record_index(self, t: float) -> int:
        idx = np.argmin(np.abs(self.record_times - t))
        if abs(self.record_times[idx] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not on the recorded grid")
        return int(idx)

    def states_at(self, t: float) -> np.ndarray:
        return self.states[:, self.record_index(t), :]

    def alive_at(self, t: float) -> np.ndarray:
        # tau equals the horizon by convention on never-exited paths
        return ~self.exited | (self.tau > t + 1e-12)

    def log_weights_at(self, t: float) -> np.ndarray:
        if self.log_weights is None:
            return np.zeros(self.n_paths)
        return self.log_weights[:, self.record_index(t)]

    def stop_states(self, t: float | None = None) -> tuple[np.ndarray, np.ndarray]:
        """State and time at ``min(t, tau)`` per path (t defaults to horizon)."""
        horizon = self.config.dt * self.config.n_steps
        if t is None:
            t = horizon
        stop_time = np.minimum(self.tau, t)
        stopped = self.exited & (self.tau <= t + 1e-12)
        out = np.where(stopped[:, None], self.exit_state, self.states_at(t))
        return out, stop_time

    def trajectory(self, i: int) -> Trajectory:
        return Trajectory(
            times=self.record_times,
            states=self.states[i],
            exited=bool(self.exited[i]),
            tau=float(self.tau[i]),
            brownian_increments=None if self.increments is None else self.increments[i],
            log_weight=None if self.log_weights is None else self.log_weights[i],
        )


def _resolve_record(config: PathConfig, dims_total: int) -> np.ndarray:
    grid = config.grid()
    record = config.record
    if record == "auto":
        budget = config.n_paths * (config.n_steps + 1) * dims_total
        record = "all" if budget <= _AUTO_RECORD_BUDGET else "ends"
    if record == "all":
        return grid
    if record == "ends":
        return np.array([grid[0], grid[-1]])
    times = np.asarray(sorted(set(float(t) for t in record)), dtype=float)
    for t in times:
        k = int(round(t / config.dt))
        if k < 0 or k > config.n_steps or abs(k * config.dt - t) > 1e-9:
            raise ValueError(f"record time {t} is not on the simulation grid")
    return times


def _block_rng(seed: int, block: int) -> np.random.Generator:
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(block)])
    return np.random.Generator(np.random.Philox(key=key))


class _ExactGammaParams:
    """Transition parameters of the separable 1D constant-coefficient model."""

    def __init__(self, coeffs):
        dims = coeffs.dims
        if dims.n != 1 or dims.m != 0:
            raise ValueError("exact-1d-gamma needs n=1, m=0")
        probes = np.array([[0.1], [0.7], [1.9]])
        D = coeffs.D_batch(probes)[:, 0, 0]
        drift = coeffs.drift_batch(probes, 0.5)
        if np.ptp(D) > 1e-12 or np.ptp(drift[:, 0]) > 1e-12:
            raise ValueError(
                "exact-1d-gamma needs constant coefficients with no log drift"
            )
        self.speed = float(D[0]) / 2.0
        if self.speed <= 0.0:
            raise ValueError("degenerate diffusion coefficient must be positive")
        self.b0 = float(drift[0, 0]) / self.speed
        if self.b0 <= 0.0:
            raise ValueError("exact-1d-gamma needs positive boundary drift")

    def sample(self, rng: np.random.Generator, x: np.ndarray, dt: float) -> np.ndarray:
        s = self.speed * dt / 2.0
        return s * rng.noncentral_chisquare(2.0 * self.b0, x / s)


def _advance_block(
    coeffs,
    params_exact,
    theta: GirsanovField | None,
    config: PathConfig,
    states: np.ndarray,
    rng: np.random.Generator,
    step_index: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One scheme step for a block; returns (new_states, dW, log_weight_delta)."""
    dims = coeffs.dims
    n, total = dims.n, dims.total
    dt = config.dt
    sqdt = np.sqrt(dt)
    nb = states.shape[0]
    if config.scheme == "exact-1d-gamma":
        new = params_exact.sample(rng, states[:, 0], dt)[:, None]
        return new, np.zeros((nb, total)), np.zeros(nb)

    xi = rng.standard_normal((nb, total))
    dW = sqdt * xi
    drift = coeffs.drift_batch(states, config.log_clamp_eps)
    sigma = coeffs.sigma_batch(states)
    if sigma.ndim == 2:
        noise = xi @ sigma.T
    else:
        noise = np.einsum("pij,pj->pi", sigma, xi)
    logw_delta = np.zeros(nb)
    if theta is not None:
        th = theta.theta_batch(states, config.log_clamp_eps)
        logw_delta = -np.einsum("pi,pi->p", th, dW) - 0.5 * dt * np.einsum(
            "pi,pi->p", th, th
        )
    new = states + drift * dt
    if config.scheme == "euler-projected":
        if n:
            root_x = np.sqrt(np.maximum(states[:, :n], 0.0))
            new[:, :n] += root_x * noise[:, :n] * sqdt
            new[:, :n] = np.maximum(new[:, :n], 0.0)
        new[:, n:] += noise[:, n:] * sqdt
    else:  # euler-implicit-sqrt: drift-implicit in the sqrt chart on x-rows
        D = coeffs.D_batch(states)
        for i in range(n):
            y = np.sqrt(np.maximum(states[:, i], 0.0))
            B = y + 0.5 * noise[:, i] * sqdt
            disc = B * B + 2.0 * (drift[:, i] - 0.25 * D[..., i, i]) * dt
            ynew = 0.5 * (B + np.sqrt(np.maximum(disc, 0.0)))
            new[:, i] = ynew * ynew
        new[:, n:] += noise[:, n:] * sqdt
    if not np.all(np.isfinite(new)):
        bad = int(np.flatnonzero(~np.isfinite(new).all(axis=1))[0])
        raise NumericFailureError(
            f"non-finite state at step {step_index} (block path {bad})"
        )
    return new, dW, logw_delta


def simulate_bundle(
    coeffs: SdeCoefficients | StandardSdeCoefficients,
    z0: Point,
    domain: DomainSpec,
    config: PathConfig,
    theta: GirsanovField | None = None,
    n_threads: int = 1,
    observers: Sequence = (),
) -> PathBundle:
    """Simulate a reproducible bundle of paths stopped at the domain exit.

    The exit time is the first grid time whose state leaves the domain (plus
    its degenerate faces); the path freezes at that state.  When ``theta`` is
    given, each path accumulates ``-theta . dW - |theta|^2 dt / 2`` while
    alive, the running log of the drift-change martingale weight.

    ``observers`` receive per-step callbacks
    ``observe(block_slice, k, t, prev, new, alive_before, alive_after, dW,
    logw=...)`` (``logw`` is the running per-path log weight, None without a
    drift-change field) and must write only into per-path or per-block slots
    (blocks may run concurrently).
    """
    dims = coeffs.dims
    if z0.dims != dims:
        raise DimensionMismatchError("start point dims do not match coefficients")
    if domain.dims != dims:
        raise DimensionMismatchError("domain dims do not match coefficients")
    if not domain.contains_point_underline(z0):
        raise InvalidStartError(f"start point {z0} is outside the domain")
    if theta is not None and config.scheme == "exact-1d-gamma":
        raise ValueError("drift-change weights are not defined for exact sampling")

    params_exact = (
        _ExactGammaParams(coeffs) if config.scheme == "exact-1d-gamma" else None
    )
    n_steps = config.n_steps
    total = dims.total
    record_times = _resolve_record(config, total)
    record_idx = {int(round(t / config.dt)): r for r, t in enumerate(record_times)}
    n_rec = len(record_times)
    n_paths = config.n_paths

    states_rec = np.empty((n_paths, n_rec, total))
    tau = np.full(n_paths, config.dt * n_steps)
    tau_index = np.full(n_paths, n_steps, dtype=np.int64)
    exited = np.zeros(n_paths, dtype=bool)
    exit_state = np.tile(z0.vector, (n_paths, 1))
    log_weights = np.zeros((n_paths, n_rec)) if theta is not None else None
    increments = (
        np.zeros((n_paths, n_steps, total)) if config.store_increments else None
    )

    for obs in observers:
        obs.prepare(n_paths, dims, config)

    def run_block(block: int) -> None:
        lo = block * RNG_BLOCK
        hi = min(lo + RNG_BLOCK, n_paths)
        nb = hi - lo
        sl = slice(lo, hi)
        rng = _block_rng(config.seed, block)
        cur = np.tile(z0.vector, (nb, 1))
        alive = np.ones(nb, dtype=bool)
        logw = np.zeros(nb)
        if 0 in record_idx:
            states_rec[sl, record_idx[0], :] = cur
            if log_weights is not None:
                log_weights[sl, record_idx[0]] = 0.0
        for k in range(1, n_steps + 1):
            new, dW, dlogw = _advance_block(
                coeffs, params_exact, theta, config, cur, rng, k
            )
            new = np.where(alive[:, None], new, cur)
            if theta is not None:
                logw = logw + np.where(alive, dlogw, 0.0)
            if increments is not None:
                increments[sl, k - 1, :] = np.where(alive[:, None], dW, 0.0)
            inside = domain.contains_underline(new)
            newly = alive & ~inside
            if newly.any():
                t_k = k * config.dt
                idx = np.flatnonzero(newly)
                tau[lo + idx] = t_k
                tau_index[lo + idx] = k
                exited[lo + idx] = True
                exit_state[lo + idx] = new[idx]
            alive_after = alive & inside
            for obs in observers:
                obs.observe(
                    sl, k, k * config.dt, cur, new, alive, alive_after, dW,
                    logw=logw if theta is not None else None,
                )
            alive = alive_after
            cur = new
            if k in record_idx:
                states_rec[sl, record_idx[k], :] = cur
                if log_weights is not None:
                    log_weights[sl, record_idx[k]] = logw

    n_blocks = (n_paths + RNG_BLOCK - 1) // RNG_BLOCK
    if n_threads <= 1 or n_blocks == 1:
        for b in range(n_blocks):
            run_block(b)
    else:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            list(pool.map(run_block, range(n_blocks)))

    fp = config_fingerprint(config, domain=domain.to_json(), theta=theta is not None)
    return PathBundle(
        config=config,
        domain=domain,
        record_times=record_times,
        states=states_rec,
        tau=tau,
        tau_index=tau_index,
        exited=exited,
        exit_state=exit_state,
        log_weights=log_weights,
        increments=increments,
        fingerprint=fp,
    )


def step_singular(
    coeffs: SdeCoefficients,
    z: Point,
    dt: float,
    xi: Sequence[float],
    config: PathConfig | None = None,
) -> Point:
    """One explicit scheme step from ``z`` with given standard normals."""
    return _single_step(coeffs, z, dt, xi, config)


def step_standard(
    coeffs: StandardSdeCoefficients,
    z: Point,
    dt: float,
    xi: Sequence[float],
    config: PathConfig | None = None,
) -> Point:
    """One explicit scheme step of the standard (bounded-drift) equation."""
    return _single_step(coeffs, z, dt, xi, config)


def _single_step(coeffs, z: Point, dt: float, xi, config) -> Point:
    dims = coeffs.dims
    if config is None:
        config = PathConfig(dt=dt, seed=0, n_paths=1, horizon=dt)
    else:
        config = replace(config, dt=dt)
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (dims.total,):
        raise DimensionMismatchError(f"need {dims.total} normals, got {xi.shape}")
    states = z.vector[None, :]
    n = dims.n
    sqdt = np.sqrt(dt)
    drift = coeffs.drift_batch(states, config.log_clamp_eps)
    sigma = coeffs.sigma_batch(states)
    sig = sigma if sigma.ndim == 2 else sigma[0]
    noise = sig @ xi
    new = states[0] + drift[0] * dt
    if config.scheme == "euler-implicit-sqrt":
        D = coeffs.D_batch(states)[0]
        for i in range(n):
            y = np.sqrt(max(states[0, i], 0.0))
            B = y + 0.5 * noise[i] * sqdt
            disc = B * B + 2.0 * (drift[0, i] - 0.25 * D[i, i]) * dt
            ynew = 0.5 * (B + np.sqrt(max(disc, 0.0)))
            new[i] = ynew * ynew
    else:
        for i in range(n):
            new[i] += np.sqrt(max(states[0, i], 0.0)) * noise[i] * sqdt
            new[i] = max(new[i], 0.0)
    new[n:] += noise[n:] * sqdt
    if not np.all(np.isfinite(new)):
        raise NumericFailureError(f"non-finite state stepping from {z}")
    return Point.from_vector(dims, new)


# ---------------------------------------------------------------------------
# Exports
# ---------------------------------------------------------------------------


def bundle_to_csv(bundle: PathBundle, path: str, dims: StateSpaceDims | None = None) -> None:
    """Columnar dump: path, step, t, x..., y..., exited, log_weight."""
    d = bundle.dims_total
    if dims is not None and dims.total == d:
        labels = [f"x{j}" for j in range(dims.n)] + [f"y{j}" for j in range(dims.m)]
    else:
        labels = [f"z{j}" for j in range(d)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "step", "t"] + labels + ["exited", "log_weight"])
        for i in range(bundle.n_paths):
            for r, t in enumerate(bundle.record_times):
                row = [i, r, f"{t:.12g}"]
                row += [f"{v:.17g}" for v in bundle.states[i, r]]
                row.append(int(bundle.tau[i] <= t + 1e-12))
                lw = 0.0 if bundle.log_weights is None else bundle.log_weights[i, r]
                row.append(f"{lw:.17g}")
                writer.writerow(row)


_KIMB_MAGIC = b"KIMB"
_KIMB_VERSION = 1


def bundle_to_kimb(bundle: PathBundle, path: str, dims: StateSpaceDims) -> None:
    """Compact binary dump.

    Layout (little-endian): magic "KIMB", version u32, n u32, m u32,
    n_paths u64, n_recorded u64, flags u32 (bit 0: log weights present), then
    f64 record times, f64 states (path-major C order), f64 tau, u8 exited
    flags, f64 exit states, and optionally f64 log weights.
    """
    flags = 1 if bundle.log_weights is not None else 0
    with open(path, "wb") as fh:
        fh.write(_KIMB_MAGIC)
        fh.write(
            struct.pack(
                "<IIIQQI",
                _KIMB_VERSION,
                dims.n,
                dims.m,
                bundle.n_paths,
                len(bundle.record_times),
                flags,
            )
        )
        fh.write(np.ascontiguousarray(bundle.record_times, "<f8").tobytes())
        fh.write(np.ascontiguousarray(bundle.states, "<f8").tobytes())
        fh.write(np.ascontiguousarray(bundle.tau, "<f8").tobytes())
        fh.write(np.ascontiguousarray(bundle.exited, "u1").tobytes())
        fh.write(np.ascontiguousarray(bundle.exit_state, "<f8").tobytes())
        if bundle.log_weights is not None:
            fh.write(np.ascontiguousarray(bundle.log_weights, "<f8").tobytes())


def read_kimb(path: str) -> dict:
    """Read a binary bundle dump into plain arrays."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _KIMB_MAGIC:
            raise ValueError(f"not a bundle file (magic {magic!r})")
        version, n, m, n_paths, n_rec, flags = struct.unpack("<IIIQQI", fh.read(32))
        if version != _KIMB_VERSION:
            raise ValueError(f"unsupported bundle version {version}")
        total = n + m
        times = np.frombuffer(fh.read(8 * n_rec), "<f8")
        states = np.frombuffer(fh.read(8 * n_paths * n_rec * total), "<f8").reshape(
            n_paths, n_rec, total
        )
        tau = np.frombuffer(fh.read(8 * n_paths), "<f8")
        exited = np.frombuffer(fh.read(n_paths), "u1").astype(bool)
        exit_state = np.frombuffer(fh.read(8 * n_paths * total), "<f8").reshape(
            n_paths, total
        )
        log_weights = None
        if flags & 1:
            log_weights = np.frombuffer(fh.read(8 * n_paths * n_rec), "<f8").reshape(
                n_paths, n_rec
            )
    return {
        "dims": StateSpaceDims(n, m),
        "times": times,
        "states": states,
        "tau": tau,
        "exited": exited,
        "exit_state": exit_state,
        "log_weights": log_weights,
    }
