import math
from fractions import Fraction

import numpy as np
import pytest

from derand.concentration import (BoundMode, bernstein_alpha,
                                  build_bernstein_plan, coefficient_buckets,
                                  compute_failure_bounds,
                                  effective_granularity, subsampling_depth,
                                  subsampling_schedule)
from derand.config import FixingConfig
from derand.error import InvalidArgument
from derand.matrix import ConstraintMatrix


def single_row (weights: list[float]) -> ConstraintMatrix:
    return ConstraintMatrix.from_entries(
        1, len(weights), np.zeros(len(weights)), np.arange(len(weights)), weights
    )

def check_schedule (k: int):
    _, previous = subsampling_schedule(0, k, exact=True)
    assert previous == 0

    for ell in range(1, k + 1):
        epsilon, alpha = subsampling_schedule(ell, k, exact=True)
        assert isinstance(alpha, Fraction)
        assert alpha >= epsilon + (1 + epsilon) * previous, f"Recurrence broken at {ell}"
        assert Fraction(1, 10) <= alpha <= 1, f"alpha out of range at {ell}"
        previous = alpha

class TestSubsamplingSchedule:
    @pytest.mark.parametrize([ "k" ], [ (1, ), (2, ), (10, ), (64, ), (257, ) ])
    def test_recurrence (self, k: int):
        check_schedule(k)

    @pytest.mark.slow
    def test_recurrence_up_to_ten_thousand (self):
        check_schedule(10 ** 4)

    def test_first_level (self):
        epsilon, alpha = subsampling_schedule(1, 10, exact=True)

        assert epsilon == Fraction(4, 5) / 16
        assert alpha == (Fraction(1, 5) + Fraction(1, 10)) / 2

    def test_floats_match_fractions (self):
        epsilon, alpha = subsampling_schedule(7, 32)
        exact = subsampling_schedule(7, 32, exact=True)

        assert (epsilon, alpha) == (float(exact[0]), float(exact[1]))

    @pytest.mark.parametrize([ "ell", "k" ], [ (-1, 4), (2, 0) ])
    def test_invalid (self, ell: int, k: int):
        with pytest.raises(InvalidArgument):
            subsampling_schedule(ell, k)

    @pytest.mark.parametrize(
        [ "p", "expected" ], [
            ( [0.5, 1.0, 0.0], 1 ),
            ( [0.75], 1 ),
            ( [0.25, 0.5], 2 ),
            ( [0.2], 3 ),
            ( [0.0, 1.0], 0 ),
        ]
    )
    def test_depth (self, p: list[float], expected: int):
        assert subsampling_depth(np.array(p), 16) == expected

    def test_depth_below_granularity (self):
        with pytest.raises(InvalidArgument):
            subsampling_depth(np.array([2.0 ** -10]), 8)

class TestFailureBounds:
    def test_hoeffding_example (self):
        A = single_row([1.0] * 64)
        report = compute_failure_bounds(
            A, np.full(64, 0.25), np.array([8.0]), 4, BoundMode.HOEFFDING
        )

        assert report.exponents == [pytest.approx(1.0)]

    def test_chernoff_example (self):
        config = FixingConfig(failure_constant=1.0)
        A = single_row([1.0] * 200)
        report = compute_failure_bounds(
            A, np.full(200, 0.5), np.array([20.0]), 10, "chernoff", config
        )

        assert report.exponents == [pytest.approx(2.0)]
        assert report.prob_bad == [pytest.approx(math.exp(-2))]

    def test_dominating_weight (self):
        A = single_row([100.0] + [1.0] * 100)
        report = compute_failure_bounds(A, np.full(101, 0.1), np.array([50.0]), 8, "chernoff")

        assert report.exponents == [pytest.approx(0.5)]

    @pytest.mark.parametrize([ "epsilon", "k" ], [ (0.3, 8), (0.1, 64), (0.9, 2) ])
    def test_uniform_rows (self, epsilon: float, k: int):
        A = single_row([1.0] * 100)
        mu = 50.0
        report = compute_failure_bounds(
            A, np.full(100, 0.5), np.array([epsilon * mu]), k, BoundMode.CHERNOFF
        )

        expected = min(epsilon ** 2 * mu, epsilon * mu, epsilon * k)
        assert report.exponents == [pytest.approx(expected)]

    @pytest.mark.parametrize([ "mode" ], [ (mode, ) for mode in BoundMode ])
    def test_empty_row (self, mode: BoundMode):
        A = ConstraintMatrix.from_entries(2, 4, [0, 0], [0, 3], [1.0, 2.0])
        report = compute_failure_bounds(A, np.full(4, 0.5), np.array([1.0, 1.0]), 8, mode)

        assert math.isinf(report.exponents[1])
        assert report.prob_bad[1] == 0

    def test_bounds_are_capped (self):
        A = single_row([1.0] * 10)
        report = compute_failure_bounds(A, np.full(10, 0.5), np.array([1e-6]), 8, "hoeffding")

        assert report.prob_bad == [1.0]

    def test_large_delta_decreases_the_bound (self):
        A = single_row([1.0] * 100)
        p = np.full(100, 0.5)
        bounds = [
            compute_failure_bounds(A, p, np.array([delta]), 8, "chernoff").prob_bad[0]
            for delta in (5.0, 20.0, 80.0)
        ]

        assert bounds[0] >= bounds[1] >= bounds[2]

    def test_partial_mode_uses_row_sums (self):
        A = single_row([2.5] * 16)
        config = FixingConfig(failure_constant=1.0)
        report = compute_failure_bounds(
            A, np.full(16, 0.5), np.array([10.0]), 8, BoundMode.PARTIAL, config
        )

        assert report.prob_bad == [pytest.approx(math.exp(-1))]

    def test_bernstein_alpha_at_the_mean (self):
        alpha = bernstein_alpha(np.array([7.0]), np.array([7.0]), 4.0)
        assert alpha[0] == pytest.approx(1 / (4.0 * math.log2(3)))

class TestGranularity:
    def test_practical_keeps_k (self, practical: FixingConfig):
        assert effective_granularity(100, 10, 16, practical) == 16

    def test_at_least_log_n (self, practical: FixingConfig):
        assert effective_granularity(1000, 10, 4, practical) == 10

    def test_paper_inflates (self, paper: FixingConfig):
        factor = math.ceil(100 * math.log(2 * 64 * 8))
        assert effective_granularity(64, 8, 4, paper) == factor * 4 + (factor * 4) % 2

class TestBernsteinPlan:
    @pytest.mark.parametrize(
        [ "weight", "expected" ], [ (1.0, 0), (1.5, 1), (2.0, 1), (0.5, -1), (3.0, 2), (0.3, -1) ]
    )
    def test_coefficient_buckets (self, weight: float, expected: int):
        assert coefficient_buckets(np.array([weight]))[0] == expected

    def test_single_bucket_row (self):
        A = single_row([1.0] * 32)
        plan = build_bernstein_plan(A, np.full(32, 0.5), np.array([4.0]))

        assert plan.bucket_count == 1
        assert plan.bucket_delta[0] <= 4.0

    def test_share_sums (self, rng: np.random.Generator):
        m, n = 200, 60
        mask = rng.random((m, n)) < 0.4
        mask[:, 0] = True
        rows, cols = np.nonzero(mask)
        weights = np.exp2(rng.uniform(-20, 20, size=len(rows)))
        A = ConstraintMatrix.from_entries(m, n, rows, cols, weights)
        p = rng.random(n)
        delta = rng.uniform(0.01, 2.0, size=m) * A.row_sums()

        plan = build_bernstein_plan(A, p, delta, FixingConfig.for_profile("practical"))
        assert np.all(plan.share_sums(m) <= delta)
        assert np.all(plan.bucket_delta > 0)

    @pytest.mark.slow
    def test_share_sums_many_rows (self):
        rng = np.random.default_rng(99)
        for _ in range(50):
            mask = rng.random((200, 40)) < 0.5
            mask[:, 0] = True
            rows, cols = np.nonzero(mask)
            weights = np.exp2(rng.uniform(-30, 30, size=len(rows)))
            A = ConstraintMatrix.from_entries(200, 40, rows, cols, weights)
            delta = rng.uniform(0.001, 3.0, size=200) * A.row_sums()

            plan = build_bernstein_plan(A, rng.random(40), delta)
            assert np.all(plan.share_sums(200) <= delta)
