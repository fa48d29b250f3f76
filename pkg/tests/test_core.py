"""Domains, covariance checks and the density / realizer catalog."""

import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from bayesuq.core import (BoxSubset, ContractError, CovarianceMatrix, GaussianJointPdf,
                          ImproperMeasureError, JeffreysJointPdf, JointPdf, RandomVariable,
                          UniformJointPdf, VectorSpace, box_contains, log_mean_exp,
                          log_normalization_estimate)

# ln(1/3), -0.5 ln(2 pi) and ln P(|Z| <= 1), checked against mpmath
LN_THIRD = -1.0986122886681098
LN_STD_NORMAL_AT_0 = -0.918938533204673
LN_MASS_UNIT_INTERVAL = -0.381715146302126


class TestVectorSpaceAndBox:
    def test_dimension_must_be_positive(self):
        with pytest.raises(ContractError):
            VectorSpace(0)

    def test_component_names_length(self):
        assert VectorSpace(2, component_names=["a", "b"]).component_names == ("a", "b")
        with pytest.raises(ContractError):
            VectorSpace(2, component_names=["a"])

    @pytest.mark.parametrize("p, inside", [(9.8, True), (11.0, True), (8.0, True), (7.9, False),
                                           (11.0000001, False)])
    def test_box_bounds_are_inclusive(self, p, inside):
        assert box_contains(BoxSubset([8.0], [11.0]), [p]) is inside

    def test_dimension_mismatch_is_contract_error(self):
        with pytest.raises(ContractError):
            box_contains(BoxSubset([0.0, 0.0], [1.0, 1.0]), [0.5])

    def test_inverted_bounds_rejected(self):
        with pytest.raises(ContractError):
            BoxSubset([1.0], [0.0])

    def test_unbounded_box(self):
        box = BoxSubset.unbounded(3)
        assert not box.is_bounded
        assert box.contains([1e300, -1e300, 0.0])


class TestCovarianceMatrix:
    def test_rejects_indefinite(self):
        # eigenvalues {1, -0.1}
        q = np.array([[1.0, 1.0], [-1.0, 1.0]]) / math.sqrt(2)
        m = q @ np.diag([1.0, -0.1]) @ q.T
        with pytest.raises(ContractError):
            CovarianceMatrix(m)

    def test_rejects_asymmetric(self):
        with pytest.raises(ContractError):
            CovarianceMatrix([[1.0, 0.1], [0.0, 1.0]])

    def test_mahalanobis_matches_direct_solve(self, rng):
        a = rng.standard_normal((4, 4))
        c = a @ a.T + 4 * np.eye(4)
        r = rng.standard_normal(4)
        assert math.isclose(CovarianceMatrix(c).mahalanobis_sq(r), r @ np.linalg.solve(c, r),
                            rel_tol=1e-12)


class TestCatalogValues:
    def test_uniform_value(self):
        pdf = UniformJointPdf(BoxSubset([8.0], [11.0]))
        assert math.isclose(pdf.ln_value([9.0]), LN_THIRD, rel_tol=1e-15)
        assert pdf.ln_value([12.0]) == -math.inf

    @given(st.floats(8, 11), st.floats(8, 11))
    def test_uniform_constant_on_box(self, a, b):
        pdf = UniformJointPdf(BoxSubset([8.0], [11.0]))
        assert pdf.ln_value([a]) == pdf.ln_value([b])

    def test_standard_normal_at_zero(self):
        pdf = GaussianJointPdf([0.0], [[1.0]])
        assert math.isclose(pdf.ln_value([0.0]), LN_STD_NORMAL_AT_0, rel_tol=1e-14)

    def test_gaussian_is_quadratic(self, rng):
        pdf = GaussianJointPdf([1.0, -2.0], [[2.0, 0.3], [0.3, 1.0]])
        x = rng.standard_normal((5, 2))
        vals = [pdf.ln_value(p) for p in x]
        ref = stats.multivariate_normal([1.0, -2.0], [[2.0, 0.3], [0.3, 1.0]]).logpdf(x)
        np.testing.assert_allclose(vals, ref, rtol=1e-12)

    def test_non_finite_parameters_fail_at_construction(self):
        with pytest.raises(ContractError):
            GaussianJointPdf([np.nan], [[1.0]])
        with pytest.raises(ContractError):
            RandomVariable.gamma(-1.0, 1.0)
        with pytest.raises(ContractError):
            RandomVariable.beta(1.0, np.inf)


def _catalog():
    return {
        "uniform": (RandomVariable.uniform(BoxSubset([8.0], [11.0])), stats.uniform(8, 3)),
        "gaussian": (RandomVariable.gaussian([0.5], [[4.0]]), stats.norm(0.5, 2.0)),
        "gamma": (RandomVariable.gamma(2.5, 1.5), stats.gamma(2.5, scale=1.5)),
        "lognormal": (RandomVariable.lognormal(0.3, 0.7), stats.lognorm(0.7, scale=math.exp(0.3))),
        "beta": (RandomVariable.beta(2.0, 5.0), stats.beta(2.0, 5.0)),
        "jeffreys": (RandomVariable.jeffreys(BoxSubset([0.1], [10.0])), stats.loguniform(0.1, 10.0)),
    }


@pytest.mark.parametrize("name", list(_catalog()))
class TestCatalogConsistency:
    def test_pdf_matches_reference(self, name, rng):
        rv, ref = _catalog()[name]
        x = ref.rvs(size=50, random_state=rng)
        vals = np.array([rv.pdf.ln_value([v]) for v in x])
        np.testing.assert_allclose(vals, ref.logpdf(x), rtol=1e-10, atol=1e-12)

    def test_actual_value_is_exp_ln_value(self, name, rng):
        rv, ref = _catalog()[name]
        for v in ref.rvs(size=20, random_state=rng):
            a, ln = rv.pdf.actual_value([v]), rv.pdf.ln_value([v])
            assert abs(a - math.exp(ln)) <= 1e-12 * max(1.0, a)

    def test_realizer_matches_cdf(self, name):
        rv, ref = _catalog()[name]
        gen = np.random.default_rng(7)
        draws = np.array([rv.draw(gen)[0] for _ in range(10_000)])
        assert all(rv.domain.contains([d]) for d in draws[:500])
        assert stats.kstest(draws, ref.cdf).pvalue >= 0.001

    def test_same_seed_same_draw(self, name):
        rv, _ = _catalog()[name]
        assert np.array_equal(rv.draw(11), rv.draw(11))


class TestDraws:
    def test_uniform_draw_in_support(self):
        rv = RandomVariable.uniform(BoxSubset([8.0], [11.0]))
        for seed in range(200):
            assert 8.0 <= rv.draw(seed)[0] <= 11.0

    def test_gaussian_sample_mean(self):
        rv = RandomVariable.gaussian([0.0, 0.0], np.eye(2))
        gen = np.random.default_rng(3)
        x = np.array([rv.draw(gen) for _ in range(100_000)])
        # 3 / sqrt(N) bound
        assert np.all(np.abs(x.mean(axis=0)) < 0.02)

    def test_truncated_gaussian_stays_in_box(self):
        rv = RandomVariable.gaussian([0.0], [[1.0]], BoxSubset([-1.0], [1.0]))
        gen = np.random.default_rng(4)
        assert all(-1.0 <= rv.draw(gen)[0] <= 1.0 for _ in range(1000))

    def test_improper_jeffreys_refuses_to_draw(self):
        rv = RandomVariable.jeffreys(BoxSubset([0.0], [np.inf]))
        with pytest.raises(ImproperMeasureError):
            rv.draw(0)


class TestNormalizationEstimate:
    def test_uniform_is_exactly_zero(self):
        pdf = UniformJointPdf(BoxSubset([8.0], [11.0]))
        for n in (1, 10, 1000):
            assert abs(log_normalization_estimate(pdf, n, 0)) < 1e-15

    def test_constant_density_gives_ln_cv(self):
        class Const(JointPdf):
            def _ln_density(self, x):
                return math.log(2.5)

        pdf = Const(BoxSubset([0.0, 0.0], [2.0, 3.0]))
        assert math.isclose(log_normalization_estimate(pdf, 7, 1), math.log(2.5 * 6.0),
                            rel_tol=1e-14)

    def test_truncated_gaussian_mass(self):
        pdf = GaussianJointPdf([0.0], [[1.0]], BoxSubset([-1.0], [1.0]))
        est = log_normalization_estimate(pdf, 1_000_000, 5)
        assert abs(est - LN_MASS_UNIT_INTERVAL) < 0.01

    def test_unbounded_box_rejected(self):
        with pytest.raises(ContractError, match="unbounded box"):
            log_normalization_estimate(GaussianJointPdf([0.0], [[1.0]]), 10)

    @given(st.lists(st.floats(-700, 700), min_size=1, max_size=20))
    def test_log_mean_exp_matches_direct(self, values):
        direct = float(mpmath.log(mpmath.fsum(mpmath.exp(v) for v in values) / len(values)))
        assert math.isclose(log_mean_exp(values), direct, rel_tol=1e-9, abs_tol=1e-9)
