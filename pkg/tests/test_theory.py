"""Isolation efficiency and branching factor law tests."""

import math

import numpy as np
import pytest

from optiforest.theory import (
    GEOMETRIC_RATIO,
    BranchingDistribution,
    efficiency_at_fixed_area,
    efficiency_curve,
    efficiency_derivative,
    isolation_efficiency,
    optimal_branching,
    tail_bound,
    theory_report,
    validate_distribution,
)

E = math.e


class TestIsolationEfficiency:
    def test_small_exact_values(self):
        # capacity v^d over area v*d
        assert isolation_efficiency(2, 1) == 1.0
        assert isolation_efficiency(2, 3) == pytest.approx(8 / 6)
        assert isolation_efficiency(3, 2) == pytest.approx(9 / 6)

    def test_binary_tree_never_beats_ternary_on_equal_area(self):
        # same area 6: v=2,d=3 vs v=3,d=2 (wider fork wins below e... above)
        assert isolation_efficiency(3, 2) > isolation_efficiency(2, 3)

    def test_domain_checks(self):
        with pytest.raises(ValueError):
            isolation_efficiency(1.0, 2)
        with pytest.raises(ValueError):
            isolation_efficiency(2, 0)
        with pytest.raises(OverflowError):
            isolation_efficiency(10, 400)

    def test_fixed_area_form_matches_definition(self):
        # eta(v) with d = area/v equals v^(area/v) / area
        for v in (1.5, 2.0, 2.7, 4.0):
            area = 6.0
            assert efficiency_at_fixed_area(v, area) == pytest.approx(
                isolation_efficiency(v, area / v), rel=1e-12
            )

    def test_fixed_area_value_at_euler(self):
        # peak value (1/6) * e^(6/e) for area 6
        assert efficiency_at_fixed_area(E, 6.0) == pytest.approx(
            1.515154142182479, abs=1e-12
        )


class TestEfficiencyDerivative:
    def test_sign_structure_around_euler(self):
        area = 6.0
        for v in (1.5, 2.0, 2.5):
            assert efficiency_derivative(v, area) > 0
        for v in (3.0, 5.0, 9.0):
            assert efficiency_derivative(v, area) < 0
        assert abs(efficiency_derivative(E, area)) < 1e-12

    def test_matches_finite_differences(self):
        area = 6.0
        h = 1e-6
        for v in (1.5, 2.0, 2.5, 3.5, 5.0, 9.0):
            numeric = (
                efficiency_at_fixed_area(v + h, area)
                - efficiency_at_fixed_area(v - h, area)
            ) / (2 * h)
            assert efficiency_derivative(v, area) == pytest.approx(numeric, rel=1e-4)

    def test_zero_crossing_is_independent_of_area(self):
        for area in (1.0, 2.5, 42.0):
            assert abs(efficiency_derivative(E, area)) < 1e-12


class TestOptimalBranching:
    def test_converges_to_euler_for_any_area(self):
        for area in (1.0, 6.0, 100.0):
            assert optimal_branching(area, tol=1e-6) == pytest.approx(E, abs=1e-4)

    def test_tighter_tolerance_gets_closer(self):
        loose = abs(optimal_branching(6.0, tol=1e-3) - E)
        tight = abs(optimal_branching(6.0, tol=1e-9) - E)
        assert tight <= loose
        assert tight < 1e-7

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            optimal_branching(0.0)
        with pytest.raises(ValueError):
            optimal_branching(6.0, tol=0.0)


class TestEfficiencyCurve:
    def test_shape_and_bounds(self):
        curve = efficiency_curve(area=6.0)
        assert curve.ndim == 2 and curve.shape[1] == 2
        assert curve[0, 0] == pytest.approx(1.1)
        assert curve[-1, 0] <= 10.0 + 1e-9

    def test_unimodal_with_peak_at_euler(self):
        curve = efficiency_curve(area=6.0)
        eta = curve[:, 1]
        rising = np.sign(np.diff(eta))
        # exactly one sign change: strictly up, then strictly down
        assert np.count_nonzero(np.diff(rising)) == 1
        assert curve[np.argmax(eta), 0] == pytest.approx(E, abs=0.01)


class TestTailBound:
    def test_frozen_spot_values(self):
        assert tail_bound(3) == pytest.approx(0.718, abs=5e-4)
        assert tail_bound(4) == pytest.approx(0.359, abs=5e-4)
        assert tail_bound(5) == pytest.approx(0.239, abs=5e-4)

    def test_domain(self):
        with pytest.raises(ValueError):
            tail_bound(2)


class TestBranchingDistributions:
    def test_finite23_pmf_and_exact_mean(self):
        d = BranchingDistribution.finite23()
        assert d.pmf(2) == pytest.approx(3 - E, abs=1e-15)
        assert d.pmf(3) == pytest.approx(E - 2, abs=1e-15)
        assert d.pmf(4) == 0.0
        assert d.mean() == E

    def test_geometric_pmf_ratio_and_mass(self):
        d = BranchingDistribution.geometric()
        assert d.pmf(2) == pytest.approx(0.5819767068693265, abs=1e-15)
        assert d.pmf(3) / d.pmf(2) == pytest.approx(GEOMETRIC_RATIO, rel=1e-12)
        assert d.mass() == pytest.approx(1.0, abs=1e-12)
        assert d.mean() == pytest.approx(E, abs=1e-10)
        assert d.tail(4) == pytest.approx(0.17474347359981302, rel=1e-12)

    def test_factorial_pmf_and_mean(self):
        d = BranchingDistribution.factorial()
        assert d.pmf(2) == pytest.approx(1 / 2)
        assert d.pmf(3) == pytest.approx(1 / 3)
        assert d.pmf(4) == pytest.approx(1 / 8)
        assert d.pmf(5) == pytest.approx(1 / 30)
        assert d.mass() == pytest.approx(1.0, abs=1e-12)
        assert d.mean() == pytest.approx(E, abs=1e-10)

    def test_fixed_law_is_a_point_mass(self):
        d = BranchingDistribution.fixed(4)
        assert d.pmf(4) == 1.0
        assert d.pmf(3) == 0.0
        assert d.mean() == 4.0
        rng = np.random.default_rng(0)
        assert set(d.sample(rng, size=100).tolist()) == {4}

    def test_pmf_is_zero_below_support(self):
        for d in (
            BranchingDistribution.finite23(),
            BranchingDistribution.geometric(),
            BranchingDistribution.factorial(),
        ):
            assert d.pmf(1) == 0.0
            assert d.pmf(0) == 0.0

    def test_invalid_kinds(self):
        with pytest.raises(ValueError):
            BranchingDistribution("uniform")
        with pytest.raises(ValueError):
            BranchingDistribution.fixed(1)
        with pytest.raises(ValueError):
            BranchingDistribution("geometric", 3)

    def test_support_table_sums_to_one(self):
        for d in (
            BranchingDistribution.finite23(),
            BranchingDistribution.geometric(),
            BranchingDistribution.factorial(),
            BranchingDistribution.fixed(5),
        ):
            values, probs = d.support_table()
            assert values.shape == probs.shape
            assert math.fsum(probs.tolist()) == pytest.approx(1.0, abs=1e-12)

    def test_sampling_matches_pmf(self):
        rng = np.random.default_rng(123)
        d = BranchingDistribution.geometric()
        draws = d.sample(rng, size=200_000)
        assert draws.dtype == np.int64
        assert draws.min() >= 2
        frac2 = np.mean(draws == 2)
        assert frac2 == pytest.approx(d.pmf(2), abs=5e-3)

    def test_scalar_sample_is_an_int(self):
        rng = np.random.default_rng(7)
        value = BranchingDistribution.finite23().sample(rng)
        assert isinstance(value, int)
        assert value in (2, 3)


class TestValidation:
    def test_mean_e_laws_pass(self):
        for kind in ("finite23", "geometric", "factorial"):
            report = validate_distribution(BranchingDistribution(kind))
            assert report.passed, report.to_dict()
            assert report.mass_ok and report.mean_ok
            assert report.p2_ok and report.bound_ok

    def test_fixed_law_fails_mean_and_bound(self):
        report = validate_distribution(BranchingDistribution.fixed(3))
        assert not report.passed
        assert not report.mean_ok
        assert not report.bound_ok

    def test_tail_bound_holds_on_full_range(self):
        for kind in ("finite23", "geometric", "factorial"):
            d = BranchingDistribution(kind)
            for v in range(3, 21):
                assert d.tail(v) <= tail_bound(v) + 1e-12


class TestTheoryReport:
    def test_report_structure(self):
        report = theory_report()
        assert report["euler"] == pytest.approx(E)
        kinds = {entry["kind"] for entry in report["distributions"]}
        assert kinds == {"finite23", "geometric", "factorial"}
        for entry in report["optimal_branching"]:
            assert entry["v_star"] == pytest.approx(E, abs=1e-4)
        assert all(d["passed"] for d in report["distributions"])
