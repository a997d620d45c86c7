"""Estimators: exhaustive design-unbiasedness, algebraic reductions and
case-weight identities."""

import itertools

import numpy as np
import pytest

from rfsurvey import (EstimateReport, EstimatorError, ForestParams,
                      ResampleMode, domain_total, fit_forest, greg_fits,
                      greg_total, ht_total, ma_total, make_design,
                      oob_decomposition, pgd_total, rf_total_population,
                      rf_total_sample)


def all_samples(N, n):
    return [np.asarray(s) for s in itertools.combinations(range(N), n)]


def rf_params(**kw):
    base = dict(n_trees=15, mtry=None, min_node_size=3,
                resample=ResampleMode.subsample(0.63), master_seed=3)
    base.update(kw)
    return ForestParams(**base)


class TestHT:
    def test_arithmetic(self):
        assert ht_total([1.0, 3.0], [0.5, 0.5]) == pytest.approx(8.0)

    def test_census(self, rng):
        y = rng.normal(size=9)
        assert ht_total(y, np.ones(9)) == pytest.approx(y.sum())

    def test_exhaustive_unbiasedness(self, rng):
        y = rng.normal(size=8) * 3 + 1
        d = make_design("srswor", 8, 3)
        pi = d.pi
        vals = [ht_total(y[s], pi[s]) for s in all_samples(8, 3)]
        assert np.mean(vals) == pytest.approx(y.sum(), rel=1e-9)

    def test_length_mismatch(self):
        with pytest.raises(EstimatorError):
            ht_total([1.0], [0.5, 0.5])


class TestPGD:
    def test_zero_fits_reduce_to_ht(self, rng):
        y = rng.normal(size=10)
        s = np.array([1, 4, 7])
        pi = np.full(3, 0.3)
        assert pgd_total(np.zeros(10), y[s], pi, s) == pytest.approx(
            ht_total(y[s], pi))

    def test_perfect_fits_are_exact(self, rng):
        y = rng.normal(size=10)
        d = make_design("srswor", 10, 4)
        for s in all_samples(10, 4)[:25]:
            assert pgd_total(y, y[s], d.pi[s], s) == pytest.approx(y.sum())

    def test_exhaustive_unbiasedness_any_fixed_fits(self, rng):
        y = rng.normal(size=8)
        m_tilde = rng.normal(size=8)  # arbitrary fixed fits
        d = make_design("srswor", 8, 3)
        vals = [pgd_total(m_tilde, y[s], d.pi[s], s) for s in all_samples(8, 3)]
        assert np.mean(vals) == pytest.approx(y.sum(), rel=1e-9)


class TestMA:
    def test_census_zero_residuals(self, rng):
        y = rng.normal(size=6)
        s = np.arange(6)
        assert ma_total(y, y, np.ones(6), s) == pytest.approx(y.sum())

    def test_constant_fits_reduce_to_ht_under_equal_pi(self, rng):
        # algebraic oracle: constant Hajek-mean fits leave HT unchanged
        N, n = 12, 4
        y = rng.normal(size=N)
        d = make_design("srswor", N, n)
        s = np.array([0, 3, 5, 9])
        pi = d.pi[s]
        ybar = (y[s] / pi).sum() / (1 / pi).sum()
        fits = np.full(N, ybar)
        assert ma_total(fits, y[s], pi, s) == pytest.approx(ht_total(y[s], pi))


class TestGREG:
    def test_affine_y_is_exact(self, rng):
        N, n = 40, 10
        x = rng.normal(size=(N, 2))
        y = 1.5 + x @ np.array([2.0, -1.0])
        d = make_design("srswor", N, n)
        s = np.sort(rng.choice(N, n, replace=False))
        rep = greg_total(x, s, y[s], d.pi[s])
        assert rep.point == pytest.approx(y.sum(), rel=1e-10)

    def test_intercept_only_equals_ht_under_equal_pi(self, rng):
        N, n = 15, 5
        y = rng.normal(size=N)
        d = make_design("srswor", N, n)
        s = np.sort(rng.choice(N, n, replace=False))
        rep = greg_total(np.zeros((N, 0)), s, y[s], d.pi[s])
        # with equal pi the expansion calibrates N * Hajek mean = HT
        assert rep.point == pytest.approx(ht_total(y[s], d.pi[s]), rel=1e-10)

    def test_calibration_consistency(self, rng):
        # sum of w * x over the sample reproduces the population totals
        N, n = 60, 18
        x = rng.normal(size=(N, 3))
        y = rng.normal(size=N)
        d = make_design("srswor", N, n)
        s = np.sort(rng.choice(N, n, replace=False))
        rep = greg_total(x, s, y[s], d.pi[s])
        xi = np.column_stack([np.ones(N), x])
        assert rep.case_weights @ xi[s] == pytest.approx(xi.sum(axis=0), rel=1e-8)

    def test_point_matches_fit_form(self, rng):
        N, n = 50, 14
        x = rng.normal(size=(N, 2))
        y = rng.normal(size=N) + x[:, 0]
        d = make_design("srswor", N, n)
        s = np.sort(rng.choice(N, n, replace=False))
        fits = greg_fits(x, s, y[s], d.pi[s])
        assert ma_total(fits, y[s], d.pi[s], s) == pytest.approx(
            greg_total(x, s, y[s], d.pi[s]).point, rel=1e-9)

    def test_collinear_rescued_by_ridge(self, rng):
        # exactly collinear columns are repaired by the one-shot ridge
        N, n = 20, 6
        col = rng.normal(size=N)
        x = np.column_stack([col, col])
        y = rng.normal(size=N)
        d = make_design("srswor", N, n)
        s = np.arange(6)
        rep = greg_total(x, s, y[s], d.pi[s])
        assert np.isfinite(rep.point)

    def test_rank_deficient_raises(self, rng):
        # an all-zero design matrix cannot be repaired (zero trace ridge)
        N, n = 20, 6
        y = rng.normal(size=N)
        d = make_design("srswor", N, 6)
        with pytest.raises(EstimatorError, match="rank-deficient"):
            greg_total(np.zeros((N, 2)), np.arange(6), y[:6], d.pi[:6],
                       add_intercept=False)


class TestRFSample:
    def test_constant_y_exact(self, rng):
        N, n = 60, 20
        x = rng.random((N, 2))
        d = make_design("srswor", N, n)
        s = np.sort(rng.choice(N, n, replace=False))
        rep = rf_total_sample(x, s, np.full(n, 2.5), d.pi[s], rf_params())
        assert rep.point == pytest.approx(N * 2.5, rel=1e-12)

    def test_weight_sum_is_population_size(self, rng):
        for trial in range(8):
            N = int(rng.integers(30, 90))
            n = int(rng.integers(10, 20))
            x = rng.random((N, 3))
            y = rng.normal(size=N)
            d = make_design("srswor", N, n)
            s = np.sort(rng.choice(N, n, replace=False))
            rep = rf_total_sample(x, s, y[s], d.pi[s],
                                  rf_params(master_seed=trial))
            assert rep.weight_sum == pytest.approx(N, abs=1e-8)
            assert rep.case_weights @ y[s] == pytest.approx(rep.point, rel=1e-9)

    def test_unequal_pi_weight_sum(self, rng):
        # stratified design: unequal pi, the weight sum still telescopes to N
        N = 40
        strata = np.array([0] * 30 + [1] * 10)
        d = make_design("stratified", N, strata=strata, n_h=[6, 5])
        s = d.draw(4).members
        x = rng.random((N, 2))
        y = rng.normal(size=N)
        rep = rf_total_sample(x, s, y[s], d.pi[s], rf_params())
        assert rep.weight_sum == pytest.approx(N, abs=1e-8)
        assert rep.case_weights @ y[s] == pytest.approx(rep.point, rel=1e-9)


class TestRFPopulation:
    def test_census_with_own_proxy_is_exact(self, rng):
        N = 50
        x = rng.random((N, 2))
        y = rng.normal(size=N)
        s = np.arange(N)
        rep = rf_total_population(x, y, s, y, np.ones(N), rf_params())
        assert rep.point == pytest.approx(y.sum(), rel=1e-9)

    def test_weighted_form_identity(self, rng):
        N, n = 70, 20
        x = rng.random((N, 2))
        y_star = rng.normal(size=N)
        y = y_star + rng.normal(0, 0.2, N)
        d = make_design("srswor", N, n)
        s = np.sort(rng.choice(N, n, replace=False))
        rep = rf_total_population(x, y_star, s, y[s], d.pi[s], rf_params())
        assert rep.case_weights @ y[s] == pytest.approx(rep.point, rel=1e-9)

    def test_weights_do_not_depend_on_study_variable(self, rng):
        N, n = 60, 15
        x = rng.random((N, 3))
        y_star = rng.normal(size=N)
        d = make_design("srswor", N, n)
        s = np.sort(rng.choice(N, n, replace=False))
        y1 = rng.normal(size=n)
        y2 = rng.normal(size=n) * 5 + 3
        r1 = rf_total_population(x, y_star, s, y1, d.pi[s], rf_params())
        r2 = rf_total_population(x, y_star, s, y2, d.pi[s], rf_params())
        assert r1.case_weights == pytest.approx(r2.case_weights, abs=0)


class TestOOB:
    def setup_case(self, rng, mode, n0=3):
        N, n = 80, 25
        x = rng.random((N, 3))
        y = 2 * x[:, 0] + rng.normal(0, 0.4, N)
        d = make_design("srswor", N, n)
        s = np.sort(rng.choice(N, n, replace=False))
        params = rf_params(resample=mode, min_node_size=n0)
        model = fit_forest(x[s], y[s], params, design_weights=1 / d.pi[s])
        rep = rf_total_sample(x, s, y[s], d.pi[s], params)
        return model, x, s, y[s], d.pi[s], rep

    def test_no_resampling_gives_projection_form(self, rng):
        model, x, s, y_s, pi_s, rep = self.setup_case(rng, ResampleMode.none())
        dec = oob_decomposition(model, x, s, y_s, pi_s)
        assert dec["correction_term"] == pytest.approx(0.0, abs=1e-9)
        assert dec["projection_term"] == pytest.approx(rep.point, rel=1e-9)

    @pytest.mark.parametrize("mode", [ResampleMode.subsample(0.63),
                                      ResampleMode.bootstrap()])
    def test_terms_sum_to_estimate(self, rng, mode):
        model, x, s, y_s, pi_s, rep = self.setup_case(rng, mode)
        dec = oob_decomposition(model, x, s, y_s, pi_s)
        total = dec["projection_term"] + dec["correction_term"]
        assert total == pytest.approx(rep.point, abs=1e-8 * max(1, abs(rep.point)))

    def test_fully_grown_unresampled_correction_vanishes(self, rng):
        model, x, s, y_s, pi_s, rep = self.setup_case(
            rng, ResampleMode.none(), n0=1)
        dec = oob_decomposition(model, x, s, y_s, pi_s)
        assert dec["correction_term"] == pytest.approx(0.0, abs=1e-9)


def ht_report(pi_s):
    return lambda yy: EstimateReport(point=ht_total(yy, pi_s), method="ht")


class TestDomains:
    def test_full_domain_reduces_to_plain(self, rng):
        n = 12
        y_s = rng.normal(size=n)
        pi_s = np.full(n, 0.25)
        rep, prop = domain_total(ht_report(pi_s), y_s, np.ones(n), pi_s)
        assert rep.point == pytest.approx(ht_total(y_s, pi_s))
        assert prop == pytest.approx(rep.point / (n / 0.25))

    def test_disjoint_domains_sum_for_ht(self, rng):
        n = 20
        y_s = rng.normal(size=n)
        pi_s = np.full(n, 0.5)
        dom = rng.integers(1, 3, n) == 1
        r1, _ = domain_total(ht_report(pi_s), y_s, dom, pi_s)
        r0, _ = domain_total(ht_report(pi_s), y_s, ~dom, pi_s)
        assert r1.point + r0.point == pytest.approx(ht_total(y_s, pi_s))

    def test_exhaustive_domain_unbiasedness(self, rng):
        # enumeration oracle for the y * indicator transform; samples with
        # an empty estimated domain still contribute their (zero) total
        N, n = 8, 3
        y = rng.normal(size=N)
        dom = np.array([1, 1, 0, 1, 0, 0, 1, 0], dtype=float)
        d = make_design("srswor", N, n)
        totals = []
        for s in all_samples(N, n):
            pi_s = d.pi[s]
            if dom[s].sum() > 0:
                rep, _ = domain_total(ht_report(pi_s), y[s], dom[s], pi_s)
                totals.append(rep.point)
            else:
                totals.append(ht_total(y[s] * dom[s], pi_s))
        assert np.mean(totals) == pytest.approx((y * dom).sum(), rel=1e-9)

    def test_empty_domain_errors(self):
        with pytest.raises(EstimatorError):
            domain_total(ht_report(np.full(3, 0.5)),
                         np.ones(3), np.zeros(3), np.full(3, 0.5))
