import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from derand.error import InvalidArgument
from derand.pairwise_space import (NiceQuadraticTerm, ObjectiveBuilder,
                                   QuadraticObjective, SeedPrefix,
                                   WorkCounter, build_space,
                                   conditional_expectation, derandomize,
                                   enumerate_expectation, evaluate_assignment,
                                   evaluate_seed)

SQUARE_OF_SUM = NiceQuadraticTerm(left=((0, 1.0), (1, 1.0)), right=((0, 1.0), (1, 1.0)))


def all_assignments (n: int) -> np.ndarray:
    space = build_space(n)
    return np.stack([evaluate_seed(space, seed) for seed in range(space.seed_count)])

def random_objective (rng: np.random.Generator, n: int, terms: int = 6) -> QuadraticObjective:
    builder = ObjectiveBuilder(n)
    for _ in range(terms):
        (term, ) = builder.new_terms(1)
        for add in (builder.add_left, builder.add_right):
            size = int(rng.integers(1, n + 1))
            var = rng.choice(n, size=size, replace=False)
            add(np.full(size, term), var, rng.uniform(-10, 10, size))

        size = int(rng.integers(0, n + 1))
        builder.add_linear(rng.choice(n, size=size, replace=False), rng.uniform(-10, 10, size))
        builder.add_constant(rng.uniform(-10, 10))

    return builder.build()

def suffix_average (space, objective: QuadraticObjective, prefix: SeedPrefix) -> float:
    free = space.seed_bits - prefix.length
    start = prefix.value << free
    values = [
        objective.evaluate(evaluate_seed(space, seed)) for seed in range(start, start + (1 << free))
    ]
    return math.fsum(values) / (1 << free)

def check_pairwise (n: int):
    x = all_assignments(n).astype(np.int64)
    assert len(x) <= 4 * n, "Too many seeds"
    assert np.all(x.sum(axis=0) == 0), "Some variable is biased"

    products = x.T @ x
    np.fill_diagonal(products, 0)
    assert np.all(products == 0), "Some pair is correlated"

class TestPairwiseSpace:
    def test_single_variable (self):
        space = build_space(1)

        assert space.seed_bits == 1
        assert space.index_codes.tolist() == [1]

    def test_zero_seed_gives_minus_ones (self):
        assert evaluate_seed(build_space(4), 0).tolist() == [-1, -1, -1, -1]

    def test_all_ones_seed (self):
        space = build_space(2)
        x = evaluate_assignment(space, [1, 1])

        expected = [-1 + 2 * (bin(int(code)).count("1") % 2) for code in space.index_codes]
        assert x.tolist() == expected

    def test_matches_naive_dot_product (self):
        space = build_space(8)

        for seed in range(space.seed_count):
            bits = SeedPrefix(tuple((seed >> s) & 1 for s in range(space.seed_bits - 1, -1, -1)))
            naive = [
                2 * (sum(a * b for a, b in zip(space.code_bits(j), bits.bits)) % 2) - 1
                for j in range(space.n)
            ]
            assert evaluate_seed(space, seed).tolist() == naive

    def test_deterministic (self):
        space = build_space(37)
        assert np.array_equal(evaluate_seed(space, 11), evaluate_seed(space, 11))

    @pytest.mark.parametrize([ "n" ], [ (n, ) for n in (2, 3, 5, 8, 17, 64, 100, 255, 256, 257) ])
    def test_pairwise_independent (self, n: int):
        check_pairwise(n)

    @pytest.mark.slow
    def test_pairwise_independent_exhaustive (self):
        for n in range(2, 1025):
            check_pairwise(n)

    @pytest.mark.parametrize(
        [ "call" ], [
            ( lambda: build_space(0), ),
            ( lambda: evaluate_assignment(build_space(4), [0, 1]), ),
            ( lambda: evaluate_seed(build_space(4), 1 << 10), ),
            ( lambda: SeedPrefix((0, 2)), ),
        ]
    )
    def test_invalid_arguments (self, call):
        with pytest.raises(InvalidArgument):
            call()

class TestConditionalExpectation:
    def test_empty_objective (self):
        space = build_space(5)
        objective = QuadraticObjective.from_terms([], 5)

        assert conditional_expectation(space, objective, SeedPrefix()) == 0
        assert enumerate_expectation(space, objective) == 0

    def test_square_of_sum (self):
        space = build_space(2)
        objective = QuadraticObjective.from_terms([SQUARE_OF_SUM], 2)

        assert conditional_expectation(space, objective, SeedPrefix()) == pytest.approx(2)
        assert enumerate_expectation(space, objective) == pytest.approx(2)

    @pytest.mark.parametrize([ "n" ], [ (1, ), (6, ), (33, ) ])
    def test_linear_sum_is_zero (self, n: int):
        space = build_space(n)
        objective = QuadraticObjective.from_terms(
            [NiceQuadraticTerm(linear=tuple((j, 1.0) for j in range(n)))], n
        )

        assert enumerate_expectation(space, objective) == 0
        assert conditional_expectation(space, objective, SeedPrefix()) == 0

    @given(st.integers(0, 2 ** 32 - 1), st.integers(1, 64), st.data())
    @settings(max_examples=150, deadline=None)
    def test_matches_suffix_enumeration (self, seed: int, n: int, data):
        rng = np.random.default_rng(seed)
        space = build_space(n)
        objective = random_objective(rng, n)

        length = data.draw(st.integers(0, space.seed_bits))
        prefix = SeedPrefix(tuple(int(bit) for bit in rng.integers(0, 2, size=length)))

        expected = suffix_average(space, objective, prefix)
        value = conditional_expectation(space, objective, prefix)
        assert value == pytest.approx(expected, rel=1e-9, abs=1e-9)

    @given(st.integers(0, 2 ** 32 - 1), st.integers(1, 48))
    @settings(max_examples=100, deadline=None)
    def test_one_extension_does_not_increase (self, seed: int, n: int):
        rng = np.random.default_rng(seed)
        space = build_space(n)
        objective = random_objective(rng, n)
        prefix = SeedPrefix(tuple(int(b) for b in rng.integers(0, 2, size=space.seed_bits - 1)))

        current = conditional_expectation(space, objective, prefix)
        best = min(conditional_expectation(space, objective, prefix.extend(bit)) for bit in (0, 1))
        assert best <= current + 1e-9 * max(1.0, abs(current))

    def test_work_counter (self):
        space = build_space(16)
        objective = QuadraticObjective.from_terms([SQUARE_OF_SUM], 16)
        counter = WorkCounter()

        derandomize(space, objective, counter=counter)

        # 16 codes, 4 bilinear entries and one or two coefficient groups per evaluation
        assert counter.evaluations == 2 * space.seed_bits
        assert 21 * counter.evaluations <= counter.operations <= 22 * counter.evaluations

    def test_work_follows_the_objective (self):
        space = build_space(64)
        operations = []

        for size in (0, 8, 64):
            pairs = [(j, 1.0) for j in range(size)]
            terms = [NiceQuadraticTerm(left=pairs, right=pairs)] if size else []
            counter = WorkCounter()

            conditional_expectation(
                space, QuadraticObjective.from_terms(terms, 64), SeedPrefix((1, 0)), counter
            )
            operations.append(counter.operations)

        assert operations[0] == 64
        assert operations[0] < operations[1] < operations[2]
        assert operations[2] - operations[0] > 2 * 64

class TestDerandomize:
    def test_constant (self):
        objective = QuadraticObjective.from_terms([NiceQuadraticTerm(constant=3.5)], 3)
        x = derandomize(build_space(3), objective)

        assert objective.evaluate(x) == 3.5

    def test_square_of_sum (self):
        space = build_space(2)
        objective = QuadraticObjective.from_terms([SQUARE_OF_SUM], 2)

        assert min(objective.evaluate(x) for x in all_assignments(2)) <= 2
        assert objective.evaluate(derandomize(space, objective)) <= 2

    @given(st.integers(0, 2 ** 32 - 1), st.integers(1, 256))
    @settings(max_examples=200, deadline=None)
    def test_never_above_expectation (self, seed: int, n: int):
        rng = np.random.default_rng(seed)
        space = build_space(n)
        objective = random_objective(rng, n, terms=4)

        expectation = enumerate_expectation(space, objective)
        value = objective.evaluate(derandomize(space, objective))
        assert value <= expectation + 1e-9 * max(1.0, abs(expectation))

    def test_threads_do_not_change_the_result (self):
        rng = np.random.default_rng(5)
        space = build_space(120)
        objective = random_objective(rng, 120, terms=10)

        single = derandomize(space, objective, threads=1)
        assert np.array_equal(single, derandomize(space, objective, threads=4))

    def test_terms_and_flat_objective_agree (self):
        rng = np.random.default_rng(3)
        term = NiceQuadraticTerm(
            left=((0, 1.5), (2, -2.0)), right=((1, 0.5), (2, 1.0)), linear=((1, 3.0), ),
            constant=0.25
        )
        objective = QuadraticObjective.from_terms([term], 3)

        for _ in range(8):
            x = rng.choice([-1.0, 1.0], size=3)
            assert objective.evaluate(x) == pytest.approx(term.evaluate(x))
