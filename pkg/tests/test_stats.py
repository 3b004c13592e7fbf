import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import service
from oracles import brute_phi, chi2_sf_quadrature, gamma_q_quadrature
from monreco import stats
from monreco.errors import DegenerateExpected, DomainError, LengthMismatch
from monreco.model import SLO_CLASSES, Dataset, ResourceClass, SloClass

binary_cols = st.integers(2, 40).flatmap(
    lambda n: st.tuples(st.lists(st.integers(0, 1), min_size=n, max_size=n), st.lists(st.integers(0, 1), min_size=n, max_size=n))
)


class TestDistributions:
    def test_monitor_and_service_level(self):
        ds = Dataset((service("s", ["cpu", "cpu", "api"]),))
        mon = stats.class_distribution(ds, "resource", "monitor")
        assert mon.count(ResourceClass.CPU) == 2 and mon.count(ResourceClass.API) == 1
        svc = stats.class_distribution(ds, "resource", "service")
        assert svc.count(ResourceClass.CPU) == 1 and svc.count(ResourceClass.API) == 1

    def test_service_prevalence(self):
        ds = Dataset((service("a", ["cpu"]), service("b", ["cpu", "io"])))
        svc = stats.class_distribution(ds, "resource", "service")
        assert svc.count(ResourceClass.CPU) == 2 and svc.prevalence(ResourceClass.CPU) == 1.0
        assert svc.denominator == 2

    def test_slo_within_resource(self):
        ds = Dataset((service("s", ["cpu"] * 3, ["capacity", "capacity", "latency"]),))
        row = stats.slo_within_resource(ds)[ResourceClass.CPU]
        assert row.fraction(SloClass.CAPACITY) == pytest.approx(2 / 3, abs=1e-15)
        assert row.fraction(SloClass.LATENCY) == pytest.approx(1 / 3, abs=1e-15)
        assert stats.slo_within_resource(ds)[ResourceClass.IO].total == 0

    def test_point_mass_rows(self):
        ds = Dataset((service("s", ["cpu", "api"], ["capacity", "latency"]),))
        within = stats.slo_within_resource(ds)
        assert within[ResourceClass.CPU].mode() is SloClass.CAPACITY
        assert max(within[ResourceClass.API].fractions) == 1.0

    def test_sums(self, desk):
        ds = desk[0]
        mon = stats.class_distribution(ds, "resource", "monitor")
        assert mon.total == sum(len(s.monitors) for s in ds)
        svc = stats.class_distribution(ds, "slo", "service")
        assert all(c <= len(ds) for c in svc.counts)

    def test_bad_arguments(self, tiny):
        with pytest.raises(ValueError):
            stats.class_distribution(tiny, "metric")
        with pytest.raises(ValueError):
            stats.class_distribution(tiny, "resource", "fleet")


class TestPhi:
    def test_identity(self):
        assert stats.phi_coefficient([1, 0, 1, 0], [1, 0, 1, 0]) == 1.0

    def test_table_example(self):
        # (40*40 - 10*10) / sqrt(50^4) = 1500 / 2500
        assert stats.phi_from_table(40, 10, 10, 40) == pytest.approx(0.6, abs=1e-15)

    def test_degenerate_marginal(self):
        assert stats.phi_coefficient([1, 1, 1], [1, 0, 1]) == 0.0
        assert stats.is_degenerate([1, 1, 1])

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            stats.phi_coefficient([1, 0], [1])

    @settings(max_examples=200)
    @given(binary_cols)
    def test_matches_direct_formula(self, cols):
        a, b = cols
        assert abs(stats.phi_coefficient(a, b) - brute_phi(a, b)) <= 1e-12

    @given(binary_cols)
    def test_symmetry_and_flip(self, cols):
        a, b = cols
        phi = stats.phi_coefficient(a, b)
        assert stats.phi_coefficient(b, a) == pytest.approx(phi, abs=1e-15)
        flip = stats.phi_coefficient([1 - x for x in a], [1 - x for x in b])
        assert flip == pytest.approx(phi, abs=1e-12)
        assert -1.0 - 1e-12 <= phi <= 1.0 + 1e-12

    def test_matrix(self):
        col = np.array([1, 0, 1, 0, 1])
        m = stats.phi_matrix(np.column_stack([col, col, 1 - col, np.ones(5, int)]), "abcd")
        assert m.values[0, 1] == pytest.approx(1.0)
        assert m.values[0, 2] == pytest.approx(-1.0)
        assert m.values[0, 3] == 0.0 and m.degenerate == (False, False, False, True)
        assert np.array_equal(m.values, m.values.T)

    def test_matrix_symmetric_on_fleet(self, desk):
        from monreco.ingest import build_label_matrix

        m = stats.phi_matrix(build_label_matrix(desk[0]).binary)
        assert np.array_equal(m.values, m.values.T)


class TestGammaQ:
    def test_zero(self):
        assert stats.regularized_gamma_q(2.5, 0.0) == 1.0

    def test_exponential_tail(self):
        assert abs(stats.regularized_gamma_q(1, 1) - math.exp(-1)) <= 1e-10

    def test_quadrature(self):
        assert abs(stats.regularized_gamma_q(0.5, 8) - gamma_q_quadrature(0.5, 8)) <= 1e-8

    @pytest.mark.parametrize("s, x", [(0.5, 0.1), (3.0, 2.0), (3.0, 10.0), (7.5, 7.0), (20.0, 30.0), (1.5, 60.0)])
    def test_both_branches(self, s, x):
        assert abs(stats.regularized_gamma_q(s, x) - gamma_q_quadrature(s, x)) <= 1e-10

    def test_domain(self):
        with pytest.raises(DomainError):
            stats.regularized_gamma_q(0, 1)
        with pytest.raises(DomainError):
            stats.regularized_gamma_q(1, -1)

    @pytest.mark.parametrize("s", [0.5, 1, 2.5, 6])
    def test_monotone_in_x(self, s):
        values = [stats.regularized_gamma_q(s, x) for x in np.linspace(0, 40, 161)]
        assert all(b <= a for a, b in zip(values, values[1:]))


class TestChiSquared:
    def test_exact_null(self):
        res = stats.chi2_goodness_of_fit([25, 50, 25], [0.25, 0.5, 0.25])
        assert res.statistic == 0 and res.p_value == 1.0 and not res.reject_at_5pct

    def test_hand_example(self):
        res = stats.chi2_goodness_of_fit([30, 70], [0.5, 0.5])
        assert res.statistic == pytest.approx(16.0, abs=1e-12) and res.dof == 1
        assert res.p_value == pytest.approx(chi2_sf_quadrature(16.0, 1), abs=1e-12)
        assert res.p_value == pytest.approx(stats.regularized_gamma_q(0.5, 8), abs=1e-15)

    def test_critical_value(self):
        assert abs(stats.chi2_sf(3.841, 1) - 0.05) <= 1e-3

    def test_doubling_counts_doubles_statistic(self):
        a = stats.chi2_goodness_of_fit([12, 30, 7], [0.3, 0.5, 0.2])
        b = stats.chi2_goodness_of_fit([24, 60, 14], [0.3, 0.5, 0.2])
        assert b.statistic == pytest.approx(2 * a.statistic, rel=1e-14)

    def test_zero_cells_dropped(self):
        res = stats.chi2_goodness_of_fit([10, 0, 10], [0.5, 0.0, 0.5])
        assert res.dof == 1

    def test_errors(self):
        with pytest.raises(DegenerateExpected):
            stats.chi2_goodness_of_fit([10, 1, 10], [0.5, 0.0, 0.5])
        with pytest.raises(DomainError):
            stats.chi2_goodness_of_fit([10, 10], [0.6, 0.6])
        with pytest.raises(DomainError):
            stats.chi2_goodness_of_fit([0, 0], [0.5, 0.5])
        with pytest.raises(LengthMismatch):
            stats.chi2_goodness_of_fit([1, 2, 3], [0.5, 0.5])

    def test_low_expected_cells_counted(self):
        res = stats.chi2_goodness_of_fit([3, 17], [0.1, 0.9])
        assert res.low_expected_cells == 1

    def test_independence(self):
        table = np.array([[10, 20], [30, 40]])
        res = stats.chi2_independence(table)
        expected = np.outer(table.sum(1), table.sum(0)) / table.sum()
        assert res.statistic == pytest.approx(((table - expected) ** 2 / expected).sum(), rel=1e-14)
        assert res.dof == 1
        with pytest.raises(DomainError):
            stats.chi2_independence(np.array([[1, 2]]))

    def test_fleet_level_tests(self, desk):
        ds = desk[0]
        results = stats.per_resource_chi2(ds)
        # Cpu monitors are capacity-heavy by construction, so they differ from the pooled mix
        assert results[ResourceClass.CPU].reject_at_5pct
        assert all(r.dof <= len(SLO_CLASSES) - 1 for r in results.values())
        assert stats.resource_slo_table(ds).shape == (13, 9)
        assert stats.chi2_independence(stats.resource_slo_table(ds)).reject_at_5pct
