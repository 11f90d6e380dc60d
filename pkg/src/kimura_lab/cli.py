"""Batch front end: run configured experiments and emit JSON/CSV artifacts.

All numerics live in the library; this module only parses configurations,
dispatches, and serializes results.  Artifacts are deterministic functions of
(config, seed): no timestamps or thread counts are recorded, so reruns with a
different ``--threads`` produce byte-identical files.

Exit codes: 0 success, 2 configuration/validation failure, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys

import numpy as np

from .density import GridSpec, check_mass, estimate_density
from .errors import ConfigError, KimuraLabError, NumericFailureError
from .feynman_kac import BoundaryData, estimate_dirichlet, estimate_semigroup
from .fields import field_from_json
from .geometry import DomainSpec, Point, StateSpaceDims
from .harnack import LatticeSpec, memoize_estimator, scale_invariant_scan
from .operators import (
    SingularOperatorSpec,
    StandardOperatorSpec,
    derive_singular_from_standard,
    make_validation_grid,
    operator_from_json,
    validate_assumptions,
)
from .oracle import Besq1dModel, besq_mean, besq_transition_mass
from .sde import (
    build_sde_coefficients,
    build_standard_sde_coefficients,
    make_girsanov_field,
)
from .simulate import PathConfig, bundle_to_csv, bundle_to_kimb, simulate_bundle

COMMANDS = (
    "validate",
    "simulate",
    "fk",
    "density",
    "harnack",
    "girsanov",
    "oracle-compare",
)


def _diag(**kw) -> None:
    sys.stderr.write(json.dumps(kw, sort_keys=True, default=str) + "\n")


def _config_hash(doc: dict) -> str:
    trimmed = {k: v for k, v in doc.items() if k != "output"}
    return hashlib.sha256(
        json.dumps(trimmed, sort_keys=True, default=str).encode()
    ).hexdigest()[:16]


def _require(doc: dict, key: str, ctx: str):
    if key not in doc:
        raise ConfigError(f"missing required key {key!r} in {ctx}")
    return doc[key]


def _path_config(doc: dict, seed: int) -> PathConfig:
    sim = dict(doc.get("sim", {}))
    for key in ("dt", "n_paths", "horizon"):
        _require(sim, key, "sim")
    return PathConfig(
        dt=float(sim["dt"]),
        seed=seed,
        n_paths=int(sim["n_paths"]),
        horizon=float(sim["horizon"]),
        scheme=sim.get("scheme", "euler-projected"),
        log_clamp_eps=float(sim.get("log_clamp_eps", 1e-12)),
        record=tuple(sim["record"]) if "record" in sim else "auto",
    )


def _load_model(doc: dict):
    model = _require(doc, "model", "config")
    if isinstance(model, str):
        with open(model) as fh:
            model = json.load(fh)
    return operator_from_json(model)


def _load_domain(doc: dict, dims: StateSpaceDims) -> DomainSpec:
    if "domain" not in doc:
        return DomainSpec.full_space(dims)
    dom = doc["domain"]
    if isinstance(dom, str):
        with open(dom) as fh:
            dom = json.load(fh)
    return DomainSpec.from_json(dom)


def _coeffs_for(model, variant: str):
    if isinstance(model, StandardOperatorSpec):
        if variant == "standard":
            return build_standard_sde_coefficients(model)
        sing = derive_singular_from_standard(model)
        return build_sde_coefficients(sing)
    if variant == "standard":
        raise ConfigError("standard variant requested for a divergence-form model")
    return build_sde_coefficients(model)


def _payoff(doc, dims: StateSpaceDims):
    """Built-in payoffs: 'one', {'coordinate': i}, {'exp-neg': i}, or a field."""
    if doc in (None, "one", 1):
        return lambda states: np.ones(np.asarray(states).shape[0])
    if isinstance(doc, dict) and "coordinate" in doc:
        i = int(doc["coordinate"])
        return lambda states: np.asarray(states)[:, i]
    if isinstance(doc, dict) and "exp-neg" in doc:
        i = int(doc["exp-neg"])
        return lambda states: np.exp(-np.asarray(states)[:, i])
    f = field_from_json(doc, dims.total)
    return f.evaluate_batch


def _point(values, dims: StateSpaceDims) -> Point:
    return Point.from_vector(dims, np.asarray(values, dtype=float))


def _write_results(out_dir: str, doc: dict, name: str = "results.json") -> str:
    path = os.path.join(out_dir, name)
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path


# ---------------------------------------------------------------------------
# Command handlers
# ---------------------------------------------------------------------------


def _cmd_validate(doc, seed, out_dir, threads) -> tuple[int, dict]:
    op = _load_model(doc)
    grid_cfg = doc.get("grid", {})
    grid = make_validation_grid(
        op.dims,
        x_hi=float(grid_cfg.get("x_hi", 1.0)),
        y_box=tuple(grid_cfg.get("y_box", (-1.0, 1.0))),
        points_per_axis=int(grid_cfg.get("points_per_axis", 9)),
    )
    report = validate_assumptions(op, grid)
    result = {
        "passed": report.passed,
        "delta": report.form_min,
        "K": report.form_max,
        "b_bar": report.inferred.b_bar if report.inferred else None,
        "checks": [
            {"name": c.name, "passed": c.passed, "detail": c.detail}
            for c in report.checks
        ],
    }
    return (0 if report.passed else 2), result


def _cmd_simulate(doc, seed, out_dir, threads) -> tuple[int, dict]:
    model = _load_model(doc)
    variant = doc.get("variant", "singular" if isinstance(model, SingularOperatorSpec) else "standard")
    coeffs = _coeffs_for(model, variant)
    domain = _load_domain(doc, model.dims)
    config = _path_config(doc, seed)
    z0 = _point(_require(doc, "z0", "config"), model.dims)
    bundle = simulate_bundle(coeffs, z0, domain, config, n_threads=threads)
    out = doc.get("output", {})
    bundle_path = os.path.join(out_dir, out.get("bundle", "bundle.kimb"))
    bundle_to_kimb(bundle, bundle_path, model.dims)
    if "csv" in out:
        bundle_to_csv(bundle, os.path.join(out_dir, out["csv"]), dims=model.dims)
    final = bundle.states_at(config.horizon)
    result = {
        "variant": variant,
        "n_paths": bundle.n_paths,
        "exit_fraction": float(bundle.exited.mean()),
        "mean_tau": float(bundle.tau.mean()),
        "mean_final_state": [float(v) for v in final.mean(axis=0)],
        "bundle": os.path.basename(bundle_path),
    }
    return 0, result


def _cmd_fk(doc, seed, out_dir, threads) -> tuple[int, dict]:
    model = _load_model(doc)
    variant = doc.get("variant", "singular" if isinstance(model, SingularOperatorSpec) else "standard")
    coeffs = _coeffs_for(model, variant)
    domain = _load_domain(doc, model.dims)
    config = _path_config(doc, seed)
    z0 = _point(_require(doc, "z0", "config"), model.dims)
    t = float(_require(doc, "t", "config"))
    mode = doc.get("mode", "semigroup")
    if mode == "semigroup":
        f = _payoff(doc.get("f"), model.dims)
        est = estimate_semigroup(coeffs, f, t, z0, domain, config, n_threads=threads)
    elif mode == "dirichlet":
        g_state = _payoff(doc.get("g"), model.dims)
        gdata = BoundaryData(lambda times, states: g_state(states))
        est = estimate_dirichlet(
            coeffs, gdata, t, z0, float(doc.get("t1", 0.0)), domain, config,
            t_cut=doc.get("t_cut"), n_threads=threads,
        )
    else:
        raise ConfigError(f"unknown fk mode {mode!r}")
    return 0, {"mode": mode, "estimate": est.to_json(seed=seed)}


def _cmd_density(doc, seed, out_dir, threads) -> tuple[int, dict]:
    model = _load_model(doc)
    variant = doc.get("variant", "singular" if isinstance(model, SingularOperatorSpec) else "standard")
    coeffs = _coeffs_for(model, variant)
    domain = _load_domain(doc, model.dims)
    config = _path_config(doc, seed)
    z0 = _point(_require(doc, "z0", "config"), model.dims)
    t = float(doc.get("t", config.horizon))
    grid_doc = _require(doc, "grid", "config")
    grid = GridSpec(
        box=tuple(tuple(b) for b in grid_doc["box"]),
        cells_per_axis=int(grid_doc.get("cells", 64)),
    )
    measure = None
    if doc.get("measure", "lebesgue") == "operator":
        sing = coeffs.source if isinstance(model, SingularOperatorSpec) else None
        if sing is None:
            sing = derive_singular_from_standard(model)
        measure = sing.measure()
    from dataclasses import replace as _replace

    cfg = _replace(config, record=(0.0, t), horizon=max(t, config.horizon))
    bundle = simulate_bundle(coeffs, z0, domain, cfg, n_threads=threads)
    est = estimate_density(bundle, t, grid, measure=measure, dims=model.dims)
    out = doc.get("output", {})
    csv_path = os.path.join(out_dir, out.get("csv", "density.csv"))
    centers = est.cell_centers()
    mesh = np.meshgrid(*centers, indexing="ij")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"c{j}" for j in range(len(centers))] + ["cell_mu", "density"])
        for idx in np.ndindex(*est.values.shape):
            row = [f"{mesh[a][idx]:.12g}" for a in range(len(centers))]
            row += [f"{est.cell_mu[idx]:.12g}", f"{est.values[idx]:.12g}"]
            writer.writerow(row)
    result = {
        "t": t,
        "survival_mass": est.survival_mass,
        "in_box_mass": est.in_box_mass,
        "weighted_mass": check_mass(est),
        "csv": os.path.basename(csv_path),
    }
    return 0, result


def _cmd_harnack(doc, seed, out_dir, threads) -> tuple[int, dict]:
    model = _load_model(doc)
    variant = doc.get("variant", "singular" if isinstance(model, SingularOperatorSpec) else "standard")
    coeffs = _coeffs_for(model, variant)
    domain = _load_domain(doc, model.dims)
    config = _path_config(doc, seed)
    dims = model.dims
    s = float(_require(doc, "s", "config"))
    z = _point(_require(doc, "z", "config"), dims)
    R = float(_require(doc, "R", "config"))
    c = float(doc.get("c", 0.9))
    d = float(doc.get("d", math.sqrt(0.8)))
    fractions = doc.get("rho_fractions", (0.1, 0.2, 0.4))
    lat = doc.get("lattice", {})
    lattice = LatticeSpec(int(lat.get("n_time", 3)), int(lat.get("n_space", 5)))
    g_state = _payoff(doc.get("g"), dims)
    gdata = BoundaryData(lambda times, states: g_state(states))
    t1 = float(doc.get("t1", 0.0))

    def u_est(t: float, zz: Point):
        return estimate_dirichlet(
            coeffs, gdata, t, zz, t1, domain, config, n_threads=threads
        )

    reports = scale_invariant_scan(
        memoize_estimator(u_est), s, z, R, c, d,
        [f * c * R for f in fractions], lattice,
    )
    out = doc.get("output", {})
    csv_path = os.path.join(out_dir, out.get("csv", "harnack.csv"))
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rho", "ratio"])
        for rep in reports:
            writer.writerow([f"{rep.radius:.12g}", f"{rep.ratio:.12g}"])
    finite = [r.ratio for r in reports if math.isfinite(r.ratio)]
    result = {
        "reports": [r.to_json() for r in reports],
        "max_ratio": max(finite) if finite else None,
        "csv": os.path.basename(csv_path),
    }
    return 0, result


def _cmd_girsanov(doc, seed, out_dir, threads) -> tuple[int, dict]:
    model = _load_model(doc)
    if not isinstance(model, StandardOperatorSpec):
        raise ConfigError("girsanov runs need a standard-form model")
    std = build_standard_sde_coefficients(model)
    sing_spec = derive_singular_from_standard(model)
    sing = build_sde_coefficients(sing_spec)
    theta = make_girsanov_field(std, sing)
    domain = _load_domain(doc, model.dims)
    config = _path_config(doc, seed)
    z0 = _point(_require(doc, "z0", "config"), model.dims)
    t = float(doc.get("t", config.horizon))
    payoff = _payoff(doc.get("f", {"exp-neg": 0}), model.dims)
    from dataclasses import replace as _replace

    cfg_std = _replace(config, horizon=t, record=(0.0, t), seed=seed)
    # a handful of weight marks keeps memory flat for large bundles
    n_steps = int(round(t / config.dt))
    mark_steps = sorted({round(n_steps * i / 10) for i in range(11)} - {0})
    marks = tuple(k * config.dt for k in mark_steps)
    cfg_sing = _replace(config, horizon=t, record=(0.0,) + marks, seed=seed + 1)
    b_std = simulate_bundle(std, z0, domain, cfg_std, n_threads=threads)
    b_sing = simulate_bundle(
        sing, z0, domain, cfg_sing, theta=theta, n_threads=threads
    )
    f_std = payoff(b_std.states_at(t))
    logw = b_sing.log_weights[:, -1]
    if not np.all(np.isfinite(logw)) or float(np.abs(logw).max()) > 700.0:
        raise NumericFailureError("drift-change log weight overflowed")
    w = np.exp(logw)
    f_sing = w * payoff(b_sing.states_at(b_sing.record_times[-1]))
    se = math.hypot(
        float(f_std.std(ddof=1)) / math.sqrt(len(f_std)),
        float(f_sing.std(ddof=1)) / math.sqrt(len(f_sing)),
    )
    mean_weights = {
        f"{tt:.6g}": float(np.exp(b_sing.log_weights[:, r]).mean())
        for r, tt in enumerate(b_sing.record_times)
    }
    result = {
        "standard_mean": float(f_std.mean()),
        "weighted_mean": float(f_sing.mean()),
        "difference": float(f_std.mean() - f_sing.mean()),
        "combined_stderr": se,
        "within_3_stderr": bool(abs(f_std.mean() - f_sing.mean()) <= 3.0 * se),
        "mean_weight_by_time": mean_weights,
    }
    return (0 if result["within_3_stderr"] else 2), result


def _cmd_oracle_compare(doc, seed, out_dir, threads) -> tuple[int, dict]:
    b0 = float(doc.get("b0", 0.5))
    x0 = float(doc.get("x0", 0.0))
    t = float(doc.get("t", 1.0))
    sim = doc.get("sim", {})
    n_paths = int(sim.get("n_paths", 100_000))
    dt = float(sim.get("dt", 1e-3))
    scheme = sim.get("scheme", "exact-1d-gamma")
    bins = int(doc.get("bins", 64))
    box_hi = float(doc.get("box_hi", max(6.0 * max(b0 * t, 1e-3), x0 + 6.0)))

    from .fields import ConstantField
    from .fields import FieldMatrix, FieldVector

    dims = StateSpaceDims(1, 0)
    std = StandardOperatorSpec(
        dims=dims,
        a_hat=FieldMatrix.zeros(1, 1),
        b_hat=FieldVector([ConstantField(b0)]),
        c_hat=FieldMatrix.zeros(1, 0),
        d_hat=FieldMatrix.zeros(0, 0),
        e_hat=FieldVector([]),
    )
    coeffs = build_standard_sde_coefficients(std)
    domain = DomainSpec.full_space(dims)
    config = PathConfig(
        dt=dt, seed=seed, n_paths=n_paths, horizon=t, scheme=scheme,
        record=(0.0, t),
    )
    bundle = simulate_bundle(coeffs, Point((x0,), ()), domain, config,
                             n_threads=threads)
    x = bundle.states_at(t)[:, 0]
    edges = np.linspace(0.0, box_hi, bins + 1)
    counts, _ = np.histogram(x, bins=edges)
    emp_mass = counts / n_paths
    model = Besq1dModel(b0=b0, x0=x0)
    true_mass = besq_transition_mass(model, t, edges)
    tail_true = 1.0 - float(true_mass.sum())
    tail_emp = float((x >= box_hi).mean())
    l1 = float(np.abs(emp_mass - true_mass).sum() + abs(tail_emp - tail_true))
    mean = float(x.mean())
    se = float(x.std(ddof=1) / math.sqrt(n_paths))
    target = besq_mean(model, t)
    result = {
        "b0": b0,
        "x0": x0,
        "t": t,
        "scheme": scheme,
        "l1_error": l1,
        "l1_pass": bool(l1 <= 0.05),
        "mean": mean,
        "mean_target": target,
        "mean_stderr": se,
        "mean_within_3_stderr": bool(abs(mean - target) <= 3.0 * se),
    }
    ok = result["l1_pass"] and result["mean_within_3_stderr"]
    return (0 if ok else 2), result


_HANDLERS = {
    "validate": _cmd_validate,
    "simulate": _cmd_simulate,
    "fk": _cmd_fk,
    "density": _cmd_density,
    "harnack": _cmd_harnack,
    "girsanov": _cmd_girsanov,
    "oracle-compare": _cmd_oracle_compare,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="kimura-lab",
        description="Run configured degenerate-diffusion experiments.",
    )
    parser.add_argument("command", nargs="?", choices=COMMANDS,
                        help="optional; must match the config's command")
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--seed", type=int, default=None,
                        help="overrides the config seed")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker cap (KIMURA_LAB_THREADS as fallback)")
    parser.add_argument("--out", default=".", help="output directory")
    args = parser.parse_args(argv)

    threads = args.threads
    if threads is None:
        threads = int(os.environ.get("KIMURA_LAB_THREADS", "1"))

    try:
        with open(args.config) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        _diag(level="error", kind="config", message=str(exc))
        return 2

    try:
        command = doc.get("command")
        if command not in COMMANDS:
            raise ConfigError(f"config command must be one of {COMMANDS}, got {command!r}")
        if args.command is not None and args.command != command:
            raise ConfigError(
                f"command line says {args.command!r}, config says {command!r}"
            )
        seed = args.seed if args.seed is not None else doc.get("seed")
        if seed is None:
            raise ConfigError("a seed is mandatory (config 'seed' or --seed)")
        seed = int(seed)
        resolved = dict(doc)
        resolved["seed"] = seed
        chash = _config_hash(resolved)
        os.makedirs(args.out, exist_ok=True)
        code, result = _HANDLERS[command](resolved, seed, args.out, threads)
        payload = {"command": command, "config_hash": chash, "seed": seed}
        payload.update(result)
        out_name = doc.get("output", {}).get("results", "results.json")
        path = _write_results(args.out, payload, out_name)
        print(f"{command} {'ok' if code == 0 else 'FAIL'} config={chash} -> {path}")
        return code
    except ConfigError as exc:
        _diag(level="error", kind="config", message=str(exc))
        return 2
    except NumericFailureError as exc:
        _diag(level="error", kind="numeric", message=str(exc))
        return 3
    except KimuraLabError as exc:
        _diag(level="error", kind=type(exc).__name__, message=str(exc))
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
