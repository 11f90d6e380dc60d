import math

import numpy as np
import pytest

from conftest import make_sing_1d, make_std_1d, mean_se

from kimura_lab.errors import (
    BoundaryDataGapError,
    InvalidTestFunctionError,
    WeightBlowupError,
)
from kimura_lab.feynman_kac import (
    BoundaryData,
    estimate_dirichlet,
    estimate_inhomogeneous,
    estimate_probabilistic_solution,
    estimate_semigroup,
    exp_moment_diagnostic,
    martingale_residual,
)
from kimura_lab.fields import SmoothBump
from kimura_lab.geometry import DomainSpec, Point, StateSpaceDims
from kimura_lab.sde import (
    build_sde_coefficients,
    build_standard_sde_coefficients,
    make_girsanov_field,
)
from kimura_lab.simulate import PathConfig, simulate_bundle

DIMS1 = StateSpaceDims(1, 0)
FULL1 = DomainSpec.full_space(DIMS1)
BOX04 = DomainSpec.box(DIMS1, [(0.0, 4.0)])
ORIGIN = Point((0.0,), ())
ONE = lambda states: np.ones(states.shape[0])


def cfg(n_paths=20_000, dt=2e-3, seed=51, horizon=1.0, **kw):
    return PathConfig(dt=dt, seed=seed, n_paths=n_paths, horizon=horizon, **kw)


class TestSemigroup:
    def test_full_space_mass_is_exactly_one(self, coeffs_sing_half):
        est = estimate_semigroup(coeffs_sing_half, ONE, 0.5, ORIGIN, FULL1,
                                 cfg(n_paths=2_000))
        assert est.value == 1.0
        assert est.stderr == 0.0

    def test_bounded_domain_survival_probability(self, coeffs_sing_half):
        domain = DomainSpec.box(DIMS1, [(0.0, 1.0)])
        est = estimate_semigroup(coeffs_sing_half, ONE, 0.5,
                                 Point((0.3,), ()), domain, cfg(n_paths=4_000))
        assert 0.0 < est.value < 1.0

    def test_monotone_in_payoff_with_common_seed(self, coeffs_sing_half):
        domain = DomainSpec.box(DIMS1, [(0.0, 2.0)])
        c = cfg(n_paths=4_000)
        lo = estimate_semigroup(coeffs_sing_half, lambda s: s[:, 0], 0.5,
                                Point((0.5,), ()), domain, c)
        hi = estimate_semigroup(coeffs_sing_half, lambda s: s[:, 0] + 0.2, 0.5,
                                Point((0.5,), ()), domain, c)
        assert lo.value <= hi.value

    def test_contraction_surrogate(self, coeffs_sing_half):
        f = lambda s: np.sin(5.0 * s[:, 0])
        est = estimate_semigroup(coeffs_sing_half, f, 0.5, Point((0.5,), ()),
                                 BOX04, cfg(n_paths=4_000))
        assert abs(est.value) <= 1.0

    def test_domain_monotonicity_with_common_seed(self, coeffs_sing_half):
        inner = DomainSpec.box(DIMS1, [(0.0, 1.5)])
        outer = DomainSpec.box(DIMS1, [(0.0, 3.0)])
        c = cfg(n_paths=4_000)
        z = Point((0.8,), ())
        f = lambda s: np.exp(-s[:, 0])  # nonnegative
        small = estimate_semigroup(coeffs_sing_half, f, 0.5, z, inner, c)
        big = estimate_semigroup(coeffs_sing_half, f, 0.5, z, outer, c)
        assert small.value <= big.value + 1e-15

    def test_restart_composition_agrees(self):
        # Markov restart: one leg to t+s versus a leg to t continued by a
        # hand-rolled second leg with fresh noise
        coeffs = build_standard_sde_coefficients(make_std_1d(b0=1.0))
        t, s = 0.3, 0.2
        f = lambda x: np.exp(-x)
        direct = simulate_bundle(
            coeffs, ORIGIN, FULL1, cfg(n_paths=60_000, seed=60, horizon=t + s,
                                       record=(0.0, t + s))
        )
        leg1 = simulate_bundle(
            coeffs, ORIGIN, FULL1, cfg(n_paths=60_000, seed=61, horizon=t,
                                       record=(0.0, t))
        )
        x = leg1.states_at(t)[:, 0].copy()
        rng = np.random.Generator(np.random.Philox(key=62))
        dt = 2e-3
        for _ in range(int(round(s / dt))):
            xi = rng.standard_normal(len(x))
            x = np.maximum(x + 1.0 * dt + np.sqrt(2.0 * x * dt) * xi, 0.0)
        m1, se1 = mean_se(f(direct.states_at(t + s)[:, 0]))
        m2, se2 = mean_se(f(x))
        assert abs(m1 - m2) <= 3.0 * math.hypot(se1, se2)


class TestDirichlet:
    def test_unit_boundary_data_is_exactly_one(self, coeffs_sing_half):
        gdata = BoundaryData(lambda t, s: np.ones(len(s)))
        est = estimate_dirichlet(coeffs_sing_half, gdata, 0.8, Point((1.0,), ()),
                                 0.0, BOX04, cfg(n_paths=2_000))
        assert est.value == 1.0

    def test_truncation_gives_probability(self, coeffs_sing_half):
        gdata = BoundaryData(lambda t, s: np.ones(len(s)))
        est = estimate_dirichlet(coeffs_sing_half, gdata, 0.8, Point((3.5,), ()),
                                 0.0, BOX04, cfg(n_paths=4_000), t_cut=0.5)
        assert 0.0 <= est.value <= 1.0
        assert est.value < 1.0  # some paths survive past the cut

    def test_boundary_gap_detected(self, coeffs_sing_half):
        def g(times, states):
            out = np.ones(len(states))
            out[states[:, 0] >= 4.0] = np.nan
            return out

        with pytest.raises(BoundaryDataGapError):
            estimate_dirichlet(
                coeffs_sing_half, BoundaryData(g), 1.0, Point((3.9,), ()),
                0.0, BOX04, cfg(n_paths=2_000),
            )

    def test_degenerate_horizon_evaluates_data(self, coeffs_sing_half):
        gdata = BoundaryData(lambda t, s: 2.0 + s[:, 0])
        est = estimate_dirichlet(coeffs_sing_half, gdata, 0.3, Point((1.0,), ()),
                                 0.3, BOX04, cfg(n_paths=100))
        assert est.value == pytest.approx(3.0)


class TestInhomogeneous:
    def test_zero_source_reduces_to_semigroup(self, coeffs_sing_half):
        c = cfg(n_paths=4_000)
        f = lambda s: np.exp(-s[:, 0])
        a = estimate_semigroup(coeffs_sing_half, f, 0.5, Point((0.5,), ()), BOX04, c)
        b = estimate_inhomogeneous(coeffs_sing_half, f, None, 0.5,
                                   Point((0.5,), ()), BOX04, c)
        assert a.value == pytest.approx(b.value, rel=1e-12)

    def test_unit_source_full_space_gives_time(self, coeffs_sing_half):
        gsrc = lambda t, s: np.ones(len(s))
        est = estimate_inhomogeneous(coeffs_sing_half, None, gsrc, 0.7, ORIGIN,
                                     FULL1, cfg(n_paths=500))
        assert est.value == pytest.approx(0.7, rel=1e-12)
        assert est.stderr == pytest.approx(0.0, abs=1e-13)

    def test_unit_source_bounded_domain_is_mean_stopped_time(self, coeffs_sing_half):
        domain = DomainSpec.box(DIMS1, [(0.0, 1.0)])
        c = cfg(n_paths=4_000, horizon=0.5)
        gsrc = lambda t, s: np.ones(len(s))
        est = estimate_inhomogeneous(coeffs_sing_half, None, gsrc, 0.5,
                                     Point((0.8,), ()), domain, c)
        from dataclasses import replace

        bundle = simulate_bundle(
            coeffs_sing_half, Point((0.8,), ()), domain,
            replace(c, horizon=0.5, record=(0.0, 0.5)),
        )
        direct = np.minimum(bundle.tau, 0.5).mean()
        assert est.value == pytest.approx(float(direct), rel=1e-12)


class TestProbabilisticSolution:
    def test_zero_theta_reduces_to_dirichlet(self):
        pair = make_girsanov_field(make_std_1d(b0=0.5), make_sing_1d(b0=0.5))
        gdata = BoundaryData(lambda t, s: 1.0 + 0.3 * s[:, 0])
        c = cfg(n_paths=4_000, horizon=0.5)
        z = Point((1.0,), ())
        a = estimate_probabilistic_solution(
            pair.sing, gdata, 0.5, z, (0.0, 1.0, BOX04), pair, c
        )
        b = estimate_dirichlet(pair.sing, gdata, 0.5, z, 0.0, BOX04, c)
        assert a.value == pytest.approx(b.value, rel=1e-12)

    def test_unit_data_gives_weight_martingale(self):
        eps = 0.2
        pair = make_girsanov_field(
            make_std_1d(b0=1.0, slope=eps), make_sing_1d(b0=1.0, slope=eps)
        )
        gdata = BoundaryData(lambda t, s: np.ones(len(s)))
        est = estimate_probabilistic_solution(
            pair.sing, gdata, 1.0, Point((1.0,), ()), (0.0, 1.0, BOX04), pair,
            cfg(n_paths=40_000),
        )
        assert abs(est.value - 1.0) <= 3.0 * est.stderr
        assert est.n_effective > 100

    def test_weight_blowup_raises(self):
        slope = 400.0
        pair = make_girsanov_field(
            make_std_1d(b0=1.0, slope=slope), make_sing_1d(b0=1.0, slope=slope)
        )
        gdata = BoundaryData(lambda t, s: np.ones(len(s)))
        with pytest.raises(WeightBlowupError):
            estimate_probabilistic_solution(
                pair.sing, gdata, 1.0, Point((1.0,), ()),
                (0.0, 1.0, DomainSpec.box(DIMS1, [(0.0, 50.0)])), pair,
                cfg(n_paths=400),
            )


class TestExpMoment:
    def test_zero_theta_is_exactly_one(self):
        pair = make_girsanov_field(make_std_1d(b0=0.5), make_sing_1d(b0=0.5))
        est = exp_moment_diagnostic(pair.std, pair, ORIGIN, 0.5,
                                    cfg(n_paths=1_000))
        assert est.value == 1.0
        assert est.stderr == 0.0

    def test_affine_weight_moment_is_finite(self):
        eps = 0.2
        pair = make_girsanov_field(
            make_std_1d(b0=1.0, slope=eps), make_sing_1d(b0=1.0, slope=eps)
        )
        est = exp_moment_diagnostic(pair.std, pair, ORIGIN, 1.0,
                                    cfg(n_paths=20_000))
        assert np.isfinite(est.value)
        assert est.value >= 1.0
        assert "max_over_mean" in est.extra


class TestMartingaleResidual:
    def test_residual_small_for_interior_bump(self):
        op = make_sing_1d(b0=1.0)
        coeffs = build_sde_coefficients(op)
        phi = SmoothBump([1.5], [1.2])
        ests = martingale_residual(
            op, coeffs, phi, Point((1.5,), ()), BOX04,
            (0.0, 0.25, 0.5), cfg(n_paths=30_000, dt=2e-3, horizon=0.5),
        )
        assert ests[0].value == 0.0
        for est in ests[1:]:
            assert abs(est.value) <= 3.0 * est.stderr + 1.0 * 2e-3

    def test_support_outside_domain_rejected(self):
        op = make_sing_1d(b0=1.0)
        coeffs = build_sde_coefficients(op)
        phi = SmoothBump([3.5], [1.0])  # support reaches 4.5 > 4
        with pytest.raises(InvalidTestFunctionError):
            martingale_residual(
                op, coeffs, phi, Point((3.5,), ()), BOX04, (0.0, 0.1),
                cfg(n_paths=100, horizon=0.1),
            )

    def test_missing_support_rejected(self):
        from kimura_lab.fields import TestFunction

        op = make_sing_1d(b0=1.0)
        coeffs = build_sde_coefficients(op)
        phi = TestFunction(
            fn=lambda s: np.ones(s.shape[:-1]),
            grad=lambda s: np.zeros_like(s),
            hess=lambda s: np.zeros(s.shape + (1,)),
        )
        with pytest.raises(InvalidTestFunctionError):
            martingale_residual(
                op, coeffs, phi, Point((1.0,), ()), BOX04, (0.0, 0.1),
                cfg(n_paths=100, horizon=0.1),
            )


def test_estimate_json_record(coeffs_sing_half):
    est = estimate_semigroup(coeffs_sing_half, ONE, 0.25, ORIGIN, FULL1,
                             cfg(n_paths=500))
    doc = est.to_json(seed=51)
    assert set(doc) >= {"value", "stderr", "n_paths", "n_effective", "config_hash", "seed"}


class TestMoreInvariants:
    def test_semigroup_linear_in_payoff(self, coeffs_sing_half):
        domain = DomainSpec.box(DIMS1, [(0.0, 2.0)])
        c = cfg(n_paths=4_000)
        z = Point((0.5,), ())
        f = lambda s: s[:, 0]
        g = lambda s: np.exp(-s[:, 0])
        combo = lambda s: 2.0 * s[:, 0] - 3.0 * np.exp(-s[:, 0])
        a = estimate_semigroup(coeffs_sing_half, f, 0.5, z, domain, c)
        b = estimate_semigroup(coeffs_sing_half, g, 0.5, z, domain, c)
        ab = estimate_semigroup(coeffs_sing_half, combo, 0.5, z, domain, c)
        assert ab.value == pytest.approx(2.0 * a.value - 3.0 * b.value, rel=1e-12)

    def test_boundary_started_first_moment(self):
        coeffs = build_standard_sde_coefficients(make_std_1d(b0=0.5))
        est = estimate_semigroup(
            coeffs, lambda s: s[:, 0], 1.0, ORIGIN, FULL1,
            cfg(n_paths=20_000, dt=1e-3, seed=55, scheme="exact-1d-gamma"),
        )
        assert abs(est.value - 0.5) <= 3.0 * est.stderr

    def test_exp_moment_stable_under_path_doubling(self):
        # at T = 0.5 the tail is light enough for the doubling protocol;
        # at T = 1 the estimator is honestly heavy-tailed, which the
        # max/mean indicator is there to flag
        eps = 0.2
        pair = make_girsanov_field(
            make_std_1d(b0=1.0, slope=eps), make_sing_1d(b0=1.0, slope=eps)
        )
        z = Point((1.0,), ())
        small = exp_moment_diagnostic(pair.std, pair, z, 0.5,
                                      cfg(n_paths=100_000, seed=56, horizon=0.5))
        big = exp_moment_diagnostic(pair.std, pair, z, 0.5,
                                    cfg(n_paths=200_000, seed=56, horizon=0.5))
        assert np.isfinite(small.value) and np.isfinite(big.value)
        assert abs(big.value - small.value) <= 0.10 * small.value
        heavy = exp_moment_diagnostic(pair.std, pair, z, 1.0,
                                      cfg(n_paths=50_000, seed=58))
        assert heavy.extra["max_over_mean"] > 100.0


def test_exp_moment_overflow_reported_as_flag():
    slope = 400.0
    pair = make_girsanov_field(
        make_std_1d(b0=1.0, slope=slope), make_sing_1d(b0=1.0, slope=slope)
    )
    est = exp_moment_diagnostic(
        pair.std, pair, Point((1.0,), ()), 0.5, cfg(n_paths=300, horizon=0.5)
    )
    assert est.flag == "overflow"
    assert math.isinf(est.value)
    assert not est.trusted
