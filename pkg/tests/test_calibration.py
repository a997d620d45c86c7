"""Calibration: constraint satisfaction, GREG equivalence, KKT optimality
oracle, collinearity handling, caps, file round trips."""

import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rfsurvey import (CalibrationError, CalibrationProblem, build_h,
                      calibrate, greg_total, make_design, mc_total)
from rfsurvey.calibration import (read_problem, read_weights, write_problem,
                                  write_weights)


def chi_square_kkt_oracle(d, h, targets):
    """Equality-constrained quadratic program solved via its KKT block
    system: minimize sum d_k (w_k/d_k - 1)^2 / 2 s.t. h' w = targets."""
    n, m = h.shape
    kkt = np.zeros((n + m, n + m))
    kkt[:n, :n] = np.diag(1.0 / d)
    kkt[:n, n:] = h
    kkt[n:, :n] = h.T
    rhs = np.concatenate([np.ones(n), targets])
    sol = np.linalg.solve(kkt, rhs)
    return sol[:n]


def random_problem(rng, n=25, q=2, distance="chi_square"):
    pi = rng.uniform(0.2, 0.8, n)
    h = np.column_stack([np.ones(n), rng.normal(size=(n, q))])
    d = 1.0 / pi
    w_true = d * rng.uniform(0.7, 1.3, n)  # feasible by construction
    targets = h.T @ w_true
    return CalibrationProblem(d, h, targets, distance=distance)


class TestCalibrate:
    def test_already_satisfied_keeps_base_weights(self):
        d = np.full(10, 4.0)
        h = np.ones((10, 1))
        problem = CalibrationProblem(d, h, np.array([40.0]))
        res = calibrate(problem)
        assert res.weights == pytest.approx(d, abs=1e-12)
        assert res.lam == pytest.approx(np.zeros(1), abs=1e-12)

    @pytest.mark.parametrize("distance", ["chi_square", "raking"])
    def test_constraints_hold(self, rng, distance):
        for trial in range(15):
            problem = random_problem(rng, distance=distance)
            res = calibrate(problem)
            resid = problem.h.T @ res.weights - problem.targets
            scale = 1.0 + np.abs(problem.targets)
            assert (np.abs(resid) / scale <= 1e-8).all()

    def test_raking_weights_positive(self, rng):
        problem = random_problem(rng, distance="raking")
        res = calibrate(problem)
        assert (res.weights > 0).all()

    def test_chi_square_optimality_vs_kkt_oracle(self, rng):
        for _ in range(10):
            problem = random_problem(rng, n=12, q=2)
            res = calibrate(problem)
            w_star = chi_square_kkt_oracle(problem.d, problem.h, problem.targets)
            assert res.weights == pytest.approx(w_star, abs=1e-6)

    def test_collinear_column_dropped_without_change(self, rng):
        problem = random_problem(rng, n=20, q=2)
        res = calibrate(problem)
        h2 = np.column_stack([problem.h, problem.h[:, 1] * 2.0])
        t2 = np.concatenate([problem.targets, [2.0 * problem.targets[1]]])
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            res2 = calibrate(CalibrationProblem(problem.d, h2, t2))
        assert any("collinear" in str(w.message) for w in caught)
        assert res2.dropped_columns == (3,)
        assert res2.weights == pytest.approx(res.weights, abs=1e-9)

    def test_inconsistent_collinear_targets_rejected(self, rng):
        problem = random_problem(rng, n=20, q=1)
        h2 = np.column_stack([problem.h, problem.h[:, 1]])
        t2 = np.concatenate([problem.targets, [problem.targets[1] + 5.0]])
        with pytest.raises(CalibrationError, match="infeasible"), \
                warnings.catch_warnings():
            warnings.simplefilter("ignore")
            calibrate(CalibrationProblem(problem.d, h2, t2))

    def test_raking_nonconvergence_reports_residuals(self, rng):
        n = 10
        d = np.ones(n)
        h = np.ones((n, 1))
        problem = CalibrationProblem(d, h, np.array([30.0]),
                                     distance="raking", max_iter=1)
        with pytest.raises(CalibrationError) as err:
            calibrate(problem)
        assert err.value.residuals is not None

    def test_weight_cap(self, rng):
        problem = random_problem(rng, n=30, q=1)
        res = calibrate(problem)
        cap = float(np.quantile(res.weights, 0.9))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            capped = calibrate(CalibrationProblem(
                problem.d, problem.h, problem.targets, weight_cap=cap))
        assert capped.weights.max() <= cap + 1e-12
        assert len(capped.capped_units) >= 1
        resid = problem.h.T @ capped.weights - problem.targets
        assert (np.abs(resid) / (1 + np.abs(problem.targets)) <= 1e-8).all()

    @given(st.integers(0, 10**6))
    @settings(max_examples=25, deadline=None)
    def test_property_random_feasible_instances(self, salt):
        rng = np.random.default_rng(salt)
        problem = random_problem(rng, n=int(rng.integers(8, 40)),
                                 q=int(rng.integers(0, 4)))
        res = calibrate(problem)
        resid = problem.h.T @ res.weights - problem.targets
        assert (np.abs(resid) / (1 + np.abs(problem.targets)) <= 1e-8).all()


class TestGregEquivalence:
    def test_chi_square_h_one_x_reproduces_greg(self, rng):
        N, n = 80, 20
        x = rng.normal(size=(N, 2))
        y = rng.normal(size=N)
        d = make_design("srswor", N, n)
        s = np.sort(rng.choice(N, n, replace=False))
        pi_s = d.pi[s]
        greg = greg_total(x, s, y[s], pi_s)
        h = np.column_stack([np.ones(n), x[s]])
        targets = np.concatenate([[N], x.sum(axis=0)])
        res = calibrate(CalibrationProblem(1 / pi_s, h, targets))
        assert res.weights == pytest.approx(greg.case_weights, abs=1e-8)
        assert mc_total(res.weights, y[s]) == pytest.approx(greg.point, rel=1e-9)

    def test_affine_response_recovered_exactly(self, rng):
        N, n = 50, 12
        x = rng.normal(size=(N, 1))
        y = 2.0 + 3.0 * x[:, 0]
        d = make_design("srswor", N, n)
        s = np.sort(rng.choice(N, n, replace=False))
        h = np.column_stack([np.ones(n), x[s]])
        targets = np.array([N, x.sum()])
        res = calibrate(CalibrationProblem(1 / d.pi[s], h, targets))
        assert mc_total(res.weights, y[s]) == pytest.approx(y.sum(), rel=1e-10)

    def test_centered_prediction_column_equals_greg_on_fits(self, rng):
        # calibrating one model's centered fits == GREG with (1, fits)
        N, n = 70, 22
        x = rng.normal(size=(N, 2))
        y = 1 + x @ np.array([1.0, -2.0]) + rng.normal(0, 0.5, N)
        d = make_design("srswor", N, n)
        s = np.sort(rng.choice(N, n, replace=False))
        pi_s = d.pi[s]
        fits = 0.8 + x @ np.array([1.1, -1.8])  # any fixed model fits
        h, targets = build_h(N, pi_s, predictions_s=[fits[s]],
                             predictions_u=[fits])
        res = calibrate(CalibrationProblem(1 / pi_s, h, targets))
        greg = greg_total(fits[:, None], s, y[s], pi_s)
        assert mc_total(res.weights, y[s]) == pytest.approx(greg.point, rel=1e-8)


class TestBuildH:
    def test_trivial(self):
        h, targets = build_h(100, np.full(5, 0.2))
        assert h.shape == (5, 1)
        assert (h == 1).all()
        assert targets == pytest.approx([100.0])

    def test_centered_columns_and_targets(self, rng):
        N, n = 40, 8
        pi = np.full(n, n / N)
        ms = rng.normal(size=n)
        mu = rng.normal(size=N)
        h, targets = build_h(N, pi, [ms], [mu])
        mbar = ms.mean()  # equal weights -> Hajek mean is the plain mean
        assert h[:, 1] == pytest.approx(ms - mbar)
        assert targets[1] == pytest.approx(mu.sum() - N * mbar)

    def test_aux_columns(self, rng):
        n = 6
        pi = np.full(n, 0.5)
        v = rng.normal(size=(n, 2))
        h, targets = build_h(12, pi, aux_s=v, aux_totals=[3.0, 4.0])
        assert h.shape == (6, 3)
        assert targets[1:] == pytest.approx([3.0, 4.0])

    def test_dimension_mismatch(self):
        with pytest.raises(CalibrationError):
            build_h(10, np.full(4, 0.5), [np.ones(3)], [np.ones(10)])


class TestCalibrationIO:
    def test_problem_round_trip(self, tmp_path, rng):
        problem = random_problem(rng, n=9, q=2, distance="raking")
        path = tmp_path / "problem.csv"
        write_problem(path, problem, unit_ids=np.arange(101, 110))
        loaded, ids = read_problem(path)
        assert (ids == [str(i) for i in range(101, 110)]).all()
        assert loaded.distance == "raking"
        assert loaded.d == pytest.approx(problem.d, abs=0)
        assert loaded.h == pytest.approx(problem.h, abs=0)
        assert loaded.targets == pytest.approx(problem.targets, abs=0)
        assert calibrate(loaded).weights == pytest.approx(
            calibrate(problem).weights, abs=0)

    def test_weights_round_trip(self, tmp_path, rng):
        w = rng.uniform(1, 5, 7)
        path = tmp_path / "w.csv"
        write_weights(path, np.arange(7), w)
        ids, back = read_weights(path)
        assert back == pytest.approx(w, abs=0)

    def test_mc_total_constraint_replay(self, rng):
        # the weight system reproduces N, any calibrated total, and any
        # calibrated model-prediction total exactly
        N, n = 60, 15
        pi = np.full(n, n / N)
        v = rng.normal(size=(n, 1))
        fits_s = rng.normal(size=n)
        fits_u = rng.normal(size=N)
        h, targets = build_h(N, pi, [fits_s], [fits_u],
                             aux_s=v, aux_totals=[7.5])
        res = calibrate(CalibrationProblem(1 / pi, h, targets))
        assert mc_total(res.weights, np.ones(n)) == pytest.approx(N, rel=1e-9)
        assert mc_total(res.weights, v[:, 0]) == pytest.approx(7.5, rel=1e-9)
        got = mc_total(res.weights, fits_s)
        mbar = fits_s.mean()
        want = targets[1] + mbar * N  # centered constraint unwound
        assert got == pytest.approx(want, rel=1e-9)
