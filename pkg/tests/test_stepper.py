import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfgq.gauss import gauss_hermite
from mfgq.measure import DiscreteMeasure, SignedMeasureError, expectation
from mfgq.models import Circle, builtin
from mfgq.stepper import (
    Fixed,
    MeanField,
    MissingFactoredFormError,
    PerStep,
    Smooth,
    StepperConfig,
    compress_step,
    diagnostics_to_csv,
    em_branch_step,
    gq2_step,
    propagate,
    propagate_extrapolated,
    select_m,
    select_m_arc,
    support_radius,
    support_reduce,
    total_gauss_work,
)


def mean_of(m):
    return float(np.dot(m.weights, m.points))


class TestSupportRadius:
    def test_formula(self):
        dt, lam = 1e-3, 0.25
        assert support_radius(dt, lam) == pytest.approx(
            math.sqrt(4.0 / lam * abs(math.log(dt))), rel=1e-14
        )

    def test_grows_as_dt_shrinks(self):
        assert support_radius(1e-4, 1.0) > support_radius(1e-2, 1.0)

    def test_degenerate_large_dt_finite(self):
        assert support_radius(1.0, 1.0) > 0.0
        assert math.isfinite(support_radius(2.0, 1.0))


class TestSelectM:
    def test_fixed_bypasses_scan(self):
        assert select_m(Fixed(12), 1e-3, 0.5, 0.25, 1) == 12

    def test_smooth_matches_direct_scan(self):
        # independent re-derivation: smallest m with
        # lgamma(2m+1) >= (p + 1/2) |log dt| + (m - 1/2) log(16 |log dt| / lam)
        def oracle(dt, lam, p):
            L = abs(math.log(dt))
            lf = math.log(16.0 / lam * L)
            m = 1
            while math.lgamma(2 * m + 1) < (p + 0.5) * L + 0.5 * (2 * m - 1) * lf:
                m += 1
            return m

        for dt in (1e-2, 1e-3, 2.0**-8):
            for p in (1, 2):
                assert select_m(Smooth(), dt, 0.0, 0.25, p) == oracle(dt, 0.25, p)

    def test_smooth_example(self):
        assert select_m(Smooth(), 1e-3, 0.0, 0.25, 1) == 31
        assert select_m(Smooth(), 1e-3, 0.0, 0.25, 2) == 34

    def test_perstep_increases_with_time(self):
        dt, lam = 2.0**-8, 0.25
        ms = [select_m(PerStep(), dt, t, lam, 1) for t in (0.0, 0.25, 0.5, 0.75, 1.0 - dt)]
        assert all(b >= a for a, b in zip(ms, ms[1:]))

    def test_perstep_below_meanfield(self):
        # per-step selection exploits the remaining horizon and never needs
        # more points than the uniform-in-time rule
        dt, lam = 2.0**-8, 0.25
        mf = select_m(MeanField(), dt, 0.0, lam, 1)
        for t in (0.0, 0.5, 1.0 - dt):
            assert select_m(PerStep(), dt, t, lam, 1) <= mf

    def test_m_floor_respected(self):
        assert select_m(Smooth(), 1e-2, 0.0, 0.25, 1, m_floor=40) == 40

    def test_nondecreasing_as_dt_shrinks(self):
        ms = [select_m(Smooth(), 2.0**-k, 0.0, 0.25, 1) for k in range(3, 12)]
        assert all(b >= a for a, b in zip(ms, ms[1:]))

    def test_validation(self):
        with pytest.raises(ValueError):
            select_m(Smooth(), 1e-3, 0.0, 0.0, 1)
        with pytest.raises(ValueError):
            select_m(Smooth(), 1e-3, 0.0, 0.25, 3)
        with pytest.raises(ValueError):
            select_m(PerStep(), 1e-3, 1.0, 0.25, 1)

    @given(st.integers(3, 14), st.integers(1, 2))
    @settings(max_examples=20, deadline=None)
    def test_selected_m_satisfies_target(self, k, p):
        dt = 2.0**-k
        lam = 0.25
        m = select_m(Smooth(), dt, 0.0, lam, p)
        L = abs(math.log(dt))
        lf = math.log(16.0 / lam * L)
        assert math.lgamma(2 * m + 1) >= (p + 0.5) * L + 0.5 * (2 * m - 1) * lf
        if m > 1:
            assert math.lgamma(2 * m - 1) < (p + 0.5) * L + 0.5 * (2 * m - 3) * lf


class TestSelectMArc:
    def test_examples(self):
        width = 2.0 * math.pi / 10.0
        assert select_m_arc(2.0**-6, 1, width) == 4
        assert select_m_arc(2.0**-6, 2, width) == 5

    def test_nondecreasing_as_dt_shrinks(self):
        width = 2.0 * math.pi / 10.0
        ms = [select_m_arc(2.0**-k, 2, width) for k in range(3, 14)]
        assert all(b >= a for a, b in zip(ms, ms[1:]))

    def test_validation(self):
        with pytest.raises(ValueError):
            select_m_arc(1e-2, 1, 0.0)
        with pytest.raises(ValueError):
            select_m_arc(1e-2, 3, 1.0)


class TestEmBranchStep:
    def test_ou_point_mass_children(self):
        # drift at x=1 with E[X]=1 is alpha + beta = 0.3; children sit at
        # x + a dt -/+ sigma sqrt(dt) with half weights
        model = builtin("ou_meanfield").model
        out = em_branch_step(DiscreteMeasure([1.0], [1.0]), model, 0.1)
        s = math.sqrt(0.5) * math.sqrt(0.1)
        np.testing.assert_allclose(out.points, [1.03 - s, 1.03 + s], rtol=1e-14)
        np.testing.assert_allclose(out.weights, [0.5, 0.5])
        assert mean_of(out) == pytest.approx(1.03, rel=1e-14)

    def test_mass_conserved(self):
        model = builtin("gbm").model
        q = gauss_hermite(15, 1.0, 0.2)
        out = em_branch_step(q, model, 0.05)
        assert out.mass == pytest.approx(1.0, abs=1e-13)
        assert len(out) == 30

    def test_frozen_measure_semantics(self):
        # the mean-field average is taken against the incoming measure for
        # every child; reproduce one step of the OU model by hand
        model = builtin("ou_meanfield").model
        q = DiscreteMeasure([-1.0, 2.0], [0.25, 0.75])
        mu = mean_of(q)
        dt = 0.125
        out = em_branch_step(q, model, dt)
        drift = -0.5 * q.points + 0.8 * mu
        s = math.sqrt(0.5 * dt)
        expect = np.sort(np.concatenate([q.points + drift * dt - s,
                                         q.points + drift * dt + s]))
        np.testing.assert_allclose(out.points, expect, rtol=1e-14)

    def test_signed_rejected(self):
        model = builtin("gbm").model
        q = DiscreteMeasure([0.0, 1.0], [2.0, -1.0])
        with pytest.raises(SignedMeasureError):
            em_branch_step(q, model, 0.1)


class TestGq2Step:
    def test_three_children_per_point(self):
        model = builtin("ou_meanfield").model
        out = gq2_step(DiscreteMeasure([1.0], [1.0]), model, 0.1)
        assert len(out) == 3
        assert out.mass == pytest.approx(1.0, rel=1e-14)
        np.testing.assert_allclose(np.sort(out.weights), [1 / 6, 1 / 6, 2 / 3])

    def test_deterministic_case_is_second_order_taylor(self):
        # with b = 0 the three children coincide with the Taylor update
        # x + a dt + (1/2) a a' dt^2 of the ODE x' = a(x)
        model = builtin("gbm", sigma=0.0).model
        dt = 0.1
        out = gq2_step(DiscreteMeasure([1.0], [1.0]), model, dt)
        expect = 1.0 - dt + 0.5 * dt**2
        np.testing.assert_allclose(out.points, expect, rtol=1e-14)

    def test_ou_mean_defect_third_order(self):
        model = builtin("ou_meanfield").model
        defects = []
        for dt in (0.1, 0.05):
            out = gq2_step(DiscreteMeasure([1.0], [1.0]), model, dt)
            defects.append(abs(mean_of(out) - math.exp(0.3 * dt)))
        assert defects[0] < 1e-5
        assert defects[0] / defects[1] == pytest.approx(8.0, rel=0.2)

    def test_requires_factored_form(self):
        model = builtin("burgers").model
        with pytest.raises(MissingFactoredFormError):
            gq2_step(DiscreteMeasure([0.0], [1.0]), model, 0.1)


class TestSupportReduce:
    def test_clipping(self):
        q = DiscreteMeasure([-5.0, -1.0, 0.0, 7.0], [0.25, 0.25, 0.25, 0.25])
        out = support_reduce(q, 2.0)
        np.testing.assert_allclose(out.points, [-2.0, -1.0, 0.0, 2.0])
        assert out.mass == pytest.approx(1.0)

    def test_interior_untouched(self):
        q = DiscreteMeasure([-1.0, 0.5], [0.5, 0.5])
        out = support_reduce(q, 2.0)
        np.testing.assert_array_equal(out.points, q.points)

    def test_invalid_radius(self):
        with pytest.raises(ValueError):
            support_reduce(DiscreteMeasure([0.0], [1.0]), 0.0)

    def test_gaussian_tail_mass_below_dt_squared(self):
        # with lam = 1 the radius satisfies R^2 = 4 |log dt|, so a standard
        # Gaussian places at most ~dt^2 mass outside it
        g = gauss_hermite(200)
        for k in (4, 6, 8):
            dt = 2.0**-k
            R = support_radius(dt, 1.0)
            tail = float(g.weights[np.abs(g.points) >= R].sum())
            assert tail <= dt**2


class TestCompressStep:
    def test_line_reduces_to_target(self):
        rng = np.random.default_rng(23)
        q = DiscreteMeasure(rng.normal(0.0, 1.0, 200), np.full(200, 1.0 / 200.0))
        out = compress_step(q, 8, 100.0)
        assert len(out) == 8
        assert out.mass == pytest.approx(1.0, rel=1e-12)
        assert mean_of(out) == pytest.approx(mean_of(q), abs=1e-12)

    def test_line_boundary_atoms_kept(self):
        q = DiscreteMeasure([-9.0, 0.0, 1.0, 9.0], [0.1, 0.4, 0.4, 0.1])
        out = compress_step(q, 2, 3.0)
        assert -3.0 in out.points and 3.0 in out.points
        assert out.mass == pytest.approx(1.0)

    def test_circle_wraps_points(self):
        q = DiscreteMeasure([2.0 * math.pi + 0.3], [1.0])
        out = compress_step(q, 4, 10.0, domain=Circle(2.0 * math.pi))
        assert out.points[0] == pytest.approx(0.3, rel=1e-12)

    def test_circle_per_arc_compression(self):
        rng = np.random.default_rng(29)
        pts = rng.uniform(0.0, 2.0 * math.pi, 400)
        q = DiscreteMeasure(pts, np.full(400, 1.0 / 400.0))
        out = compress_step(q, 3, 10.0, domain=Circle(2.0 * math.pi), circle_subintervals=10)
        assert len(out) <= 30
        assert out.mass == pytest.approx(1.0, rel=1e-12)


class TestStepperConfig:
    def test_horizon_must_divide(self):
        with pytest.raises(ValueError):
            StepperConfig(dt=0.3)

    def test_positive_dt(self):
        with pytest.raises(ValueError):
            StepperConfig(dt=-0.1)

    def test_compression_period(self):
        with pytest.raises(ValueError):
            StepperConfig(dt=0.25, compression_period=0)

    def test_order(self):
        with pytest.raises(ValueError):
            StepperConfig(dt=0.25, order=3)

    def test_n_steps(self):
        assert StepperConfig(dt=0.125).n_steps == 8


class TestPropagate:
    def test_zero_coefficients_identity(self):
        model = builtin("gbm", alpha=0.0, sigma=0.0).model
        q0 = DiscreteMeasure([0.25, 0.75], [0.5, 0.5])
        cfg = StepperConfig(dt=0.125, selection=Fixed(10))
        q, diags = propagate(model, q0, cfg, "gq1")
        np.testing.assert_allclose(np.unique(q.points), q0.points, atol=1e-14)
        assert q.mass == pytest.approx(1.0, abs=1e-13)
        assert len(diags) == 8

    def test_mass_conserved_tightly(self):
        prob = builtin("ou_meanfield")
        cfg = StepperConfig(dt=2.0**-6, selection=Fixed(15))
        q, _ = propagate(prob.model, DiscreteMeasure([1.0], [1.0]), cfg, "gq1")
        assert abs(q.mass - 1.0) <= 1e-10

    def test_gbm_mean_error_halves_with_dt(self):
        prob = builtin("gbm")
        errs = []
        for dt in (2.0**-5, 2.0**-6):
            cfg = StepperConfig(dt=dt, selection=Fixed(20))
            q, _ = propagate(prob.model, DiscreteMeasure([1.0], [1.0]), cfg, "gq1")
            errs.append(abs(mean_of(q) - math.exp(-1.0)))
        assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.1)

    def test_gq2_more_accurate_than_gq1(self):
        prob = builtin("ou_meanfield")
        cfg = StepperConfig(dt=2.0**-5, selection=Fixed(20), order=2)
        q1, _ = propagate(prob.model, DiscreteMeasure([1.0], [1.0]), cfg, "gq1")
        q2, _ = propagate(prob.model, DiscreteMeasure([1.0], [1.0]), cfg, "gq2")
        exact = prob.reference.mean_at(1.0)
        assert abs(mean_of(q2) - exact) < abs(mean_of(q1) - exact)

    def test_m_n_nondecreasing_for_perstep(self):
        prob = builtin("ou_meanfield")
        cfg = StepperConfig(dt=2.0**-6, selection=PerStep())
        _, diags = propagate(prob.model, DiscreteMeasure([1.0], [1.0]), cfg, "gq1")
        ms = [d.m_n for d in diags if d.compressed]
        assert all(b >= a for a, b in zip(ms, ms[1:]))

    def test_final_step_uncompressed(self):
        prob = builtin("ou_meanfield")
        cfg = StepperConfig(dt=2.0**-4, selection=Fixed(6))
        _, diags = propagate(prob.model, DiscreteMeasure([1.0], [1.0]), cfg, "gq1")
        assert not diags[-1].compressed
        assert diags[-1].points_out == 2 * diags[-2].points_out

    def test_compression_period(self):
        prob = builtin("ou_meanfield")
        cfg = StepperConfig(dt=2.0**-5, selection=Fixed(6), compression_period=4)
        _, diags = propagate(prob.model, DiscreteMeasure([1.0], [1.0]), cfg, "gq1")
        flags = [d.compressed for d in diags]
        for i, f in enumerate(flags, start=1):
            assert f == (i % 4 == 0 and i < len(flags))

    def test_rotator_wrapped_exponential_moment_bounded(self):
        # stability of the circular march: the exponential moment of the
        # wrapped deviation from the circular mean stays O(1)
        prob = builtin("plane_rotator")
        from mfgq.models import initial_measure

        q0 = initial_measure(prob.initial)
        cfg = StepperConfig(dt=2.0**-5, order=2)
        q, _ = propagate(prob.model, q0, cfg, "gq2")
        s = expectation(q, np.sin)
        c = expectation(q, np.cos)
        center = math.atan2(s, c)
        dev = np.angle(np.exp(1j * (q.points - center)))
        moment = float(np.dot(q.weights, np.exp(0.05 * dev**2)))
        assert moment <= 1.5

    def test_bad_scheme(self):
        prob = builtin("gbm")
        cfg = StepperConfig(dt=0.25)
        with pytest.raises(ValueError):
            propagate(prob.model, DiscreteMeasure([1.0], [1.0]), cfg, "nope")

    def test_non_probability_rejected(self):
        prob = builtin("gbm")
        cfg = StepperConfig(dt=0.25)
        with pytest.raises(ValueError):
            propagate(prob.model, DiscreteMeasure([1.0], [0.5]), cfg, "gq1")

    def test_diagnostics_csv(self, tmp_path):
        prob = builtin("ou_meanfield")
        cfg = StepperConfig(dt=0.25, selection=Fixed(5))
        _, diags = propagate(prob.model, DiscreteMeasure([1.0], [1.0]), cfg, "gq1")
        path = tmp_path / "diag.csv"
        diagnostics_to_csv(diags, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "n,t,m_n,R,points_out,tail_mass,kernel_evals"
        assert len(lines) == 1 + len(diags)
        assert total_gauss_work(diags) >= 0.0


class TestPropagateExtrapolated:
    def test_signed_combination_has_unit_mass(self):
        prob = builtin("ou_meanfield")
        cfg = StepperConfig(dt=2.0**-4, selection=Fixed(10))
        res = propagate_extrapolated(prob.model, DiscreteMeasure([1.0], [1.0]), cfg)
        assert res.measure.mass == pytest.approx(1.0, abs=1e-12)
        assert res.measure.signed

    def test_zero_coefficients_identity(self):
        model = builtin("gbm", alpha=0.0, sigma=0.0).model
        q0 = DiscreteMeasure([0.5], [1.0])
        cfg = StepperConfig(dt=0.25, selection=Fixed(5))
        res = propagate_extrapolated(model, q0, cfg)
        assert mean_of(res.measure) == pytest.approx(0.5, abs=1e-14)

    def test_beats_plain_first_order(self):
        prob = builtin("ou_meanfield")
        q0 = DiscreteMeasure([1.0], [1.0])
        cfg = StepperConfig(dt=2.0**-5, selection=Fixed(20))
        res = propagate_extrapolated(prob.model, q0, cfg)
        plain, _ = propagate(prob.model, q0, cfg, "gq1")
        exact = prob.reference.mean_at(1.0)
        assert abs(mean_of(res.measure) - exact) < abs(mean_of(plain) - exact)
