import copy
import math

import numpy as np
import pytest

from derand.buckets import classify_rows
from derand.config import FixingConfig
from derand.error import InvalidArgument
from derand.matrix import ConstraintMatrix
from derand.pairwise_space import build_space
from derand.potentials import (apply_step, assemble_step_objective,
                               bucket_surrogate, build_ledger, free_directions,
                               init_state, replay_potential, step)
from fixtures.fixture_instances import random_matrix


def walk_setup (A: ConstraintMatrix, p: np.ndarray, delta: np.ndarray, k: int, config):
    state = init_state(p, k, config=config)
    decomposition = classify_rows(A, delta, k)
    ledger, tracker = build_ledger(A, state, decomposition, config)

    return state, decomposition, ledger, tracker

def grid_probabilities (rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    return rng.integers(1, k, size=n) / k

class TestInitState:
    def test_half_is_moving (self):
        state = init_state(np.array([0.5, 0.0, 1.0]), 4)

        assert state.numerators.tolist() == [2, 0, 4]
        assert state.moving.tolist() == [True, False, False]

    def test_default_budget (self, paper: FixingConfig):
        assert init_state(np.array([0.5]), 10, config=paper).steps == 10000

    @pytest.mark.parametrize([ "p", "k" ], [ ([0.5], 3), ([0.5], 0), ([0.3], 4), ([1.5], 4) ])
    def test_invalid (self, p: list[float], k: int):
        with pytest.raises(InvalidArgument):
            init_state(np.array(p), k)

class TestLedger:
    def test_initial_potential (self, small_matrix: ConstraintMatrix, practical: FixingConfig):
        k = 8
        delta = 0.3 * small_matrix.row_sums()
        p = np.full(small_matrix.n, 0.5)
        _, decomposition, ledger, _ = walk_setup(small_matrix, p, delta, k, practical)

        c = practical.failure_constant
        expected = []
        for i in np.flatnonzero(decomposition.nonboring):
            _, weights = small_matrix.row(i)
            exponent = min(delta[i] ** 2 / np.sum(weights ** 2), delta[i] * k / np.sum(weights))
            prob = c * math.exp(-exponent / c)

            buckets = decomposition.representative & (decomposition.bucket_row == i)
            sizes = decomposition.bucket_size[buckets]
            spread = sum(math.exp(-min(size, k) / practical.psi_weight_divisor) for size in sizes)
            expected.append(prob * (2 + spread))

        assert ledger.potential() == pytest.approx(math.fsum(expected), rel=1e-12)

    def test_no_rows (self, practical: FixingConfig):
        A = ConstraintMatrix.from_entries(0, 4, [], [], [])
        _, _, ledger, _ = walk_setup(A, np.full(4, 0.5), np.zeros(0), 4, practical)

        assert ledger.potential() == 0

class TestStepObjective:
    def test_frozen_walk_has_no_variables (self, small_matrix: ConstraintMatrix, practical):
        p = np.zeros(small_matrix.n)
        p[::2] = 1
        setup = walk_setup(small_matrix, p, 0.3 * small_matrix.row_sums() + 1, 8, practical)
        objective = assemble_step_objective(*setup)

        assert objective.n == 0
        assert math.isfinite(objective.evaluate(np.zeros(0)))

    @pytest.mark.parametrize([ "seed" ], [ (seed, ) for seed in range(4) ])
    def test_matches_applied_step (self, seed: int, practical: FixingConfig):
        rng = np.random.default_rng(seed)
        k = 8
        A = random_matrix(rng, 8, 64, density=0.4, spread=2.0)
        state, decomposition, ledger, tracker = walk_setup(
            A, grid_probabilities(rng, A.n, k), 0.2 * A.row_sums(), k, practical
        )

        for _ in range(6):
            step(state, decomposition, ledger, tracker)

        objective = assemble_step_objective(state, decomposition, ledger, tracker)
        for _ in range(5):
            signs = rng.choice([-1, 1], size=objective.n)
            trial_state, trial_ledger, trial_tracker = copy.deepcopy((state, ledger, tracker))
            apply_step(trial_state, trial_ledger, trial_tracker, signs)

            predicted = objective.evaluate(signs) * math.exp(objective.log_scale)
            assert predicted == pytest.approx(trial_ledger.potential(), rel=1e-9)

    @pytest.mark.parametrize([ "seed" ], [ (seed, ) for seed in range(4) ])
    def test_complexity_is_linear (self, seed: int, practical: FixingConfig):
        rng = np.random.default_rng(seed)
        A = random_matrix(rng, 16, 128, density=0.25)
        setup = walk_setup(A, grid_probabilities(rng, A.n, 16), 0.1 * A.row_sums(), 16, practical)

        objective = assemble_step_objective(*setup)
        assert objective.complexity <= 11 * max(A.nnz, A.n, A.m)

class TestBucketSurrogate:
    @pytest.mark.parametrize([ "seed" ], [ (seed, ) for seed in range(20) ])
    def test_dominates_the_squared_increment (self, seed: int):
        rng = np.random.default_rng(seed)
        k = 16
        size = int(rng.integers(2, 40))
        p = rng.integers(0, k + 1, size=size) / k
        x = rng.choice([-1, 0, 1], size=size) / k

        increment, surrogate = bucket_surrogate(p, x, k)
        direct = np.sum(((p + x)[:, None] - (p + x)[None, :]) ** 2) - np.sum(
            (p[:, None] - p[None, :]) ** 2
        )

        assert increment == pytest.approx(direct, abs=1e-12)
        assert surrogate >= increment ** 2 - 1e-12

class TestStep:
    def test_single_column_freezes (self, practical: FixingConfig):
        A = ConstraintMatrix.from_rows(1, [[0]])
        state, *rest = walk_setup(A, np.array([0.5]), np.array([0.5]), 2, practical)

        step(state, *rest)

        assert state.numerators[0] in (0, 2)
        assert not state.moving.any()

    def test_free_directions (self):
        assert free_directions(np.arange(8)).tolist() == [1, -1, -1, 1, -1, 1, 1, -1]

    def test_untracked_columns_split (self, practical: FixingConfig):
        A = ConstraintMatrix.from_rows(8, [list(range(8))])
        state, *rest = walk_setup(A, np.full(8, 0.5), np.array([0.1]), 2, practical)

        _, columns, signs = step(state, *rest)

        assert rest[0].boring_small[0]
        assert np.array_equal(signs, free_directions(columns))
        assert state.numerators.sum() == 8

    def test_frozen_step_is_a_no_op (self, small_matrix: ConstraintMatrix, practical):
        p = np.ones(small_matrix.n)
        state, *rest = walk_setup(small_matrix, p, small_matrix.row_sums() / 2, 8, practical)
        before = rest[1].potential()

        record, columns, signs = step(state, *rest)

        assert state.t == 1
        assert len(columns) == len(signs) == 0
        assert record.potential == before
        assert np.array_equal(state.numerators, np.full(small_matrix.n, 8))

    def test_positions_move_by_one (self, small_matrix: ConstraintMatrix, practical):
        rng = np.random.default_rng(1)
        state, *rest = walk_setup(
            small_matrix, grid_probabilities(rng, small_matrix.n, 8),
            0.3 * small_matrix.row_sums(), 8, practical
        )

        for _ in range(30):
            before = state.numerators.copy()
            _, columns, _ = step(state, *rest)

            change = state.numerators - before
            assert np.all(np.abs(change[columns]) == 1)
            assert np.all(change[np.setdiff1d(np.arange(small_matrix.n), columns)] == 0)
            assert state.numerators.min() >= 0 and state.numerators.max() <= 8

    def test_budget_exhausted (self, practical: FixingConfig):
        A = ConstraintMatrix.from_rows(2, [[0, 1]])
        state, *rest = walk_setup(A, np.array([0.5, 0.5]), np.array([1.0]), 2, practical)
        state.steps = 1

        step(state, *rest)
        with pytest.raises(InvalidArgument):
            step(state, *rest)

    def test_space_is_reused (self, small_matrix: ConstraintMatrix, practical):
        p = np.full(small_matrix.n, 0.5)
        delta = 0.3 * small_matrix.row_sums()
        first, *first_rest = walk_setup(small_matrix, p, delta, 8, practical)
        second, *second_rest = walk_setup(small_matrix, p, delta, 8, practical)

        step(first, *first_rest)
        step(second, *second_rest, space=build_space(small_matrix.n), threads=2)

        assert np.array_equal(first.numerators, second.numerators)

class TestReplay:
    @pytest.mark.parametrize([ "seed" ], [ (seed, ) for seed in range(3) ])
    def test_ledger_matches_replay (self, seed: int, practical: FixingConfig):
        from derand.partial_fixing import partial_fix

        rng = np.random.default_rng(seed)
        k = 8
        A = random_matrix(rng, 8, 64, density=0.3, spread=3.0)
        p = grid_probabilities(rng, A.n, k)
        delta = 0.25 * A.row_sums()

        result = partial_fix(A, p, delta, k, practical, keep_history=True)
        replayed = replay_potential(A, p, delta, k, practical, result.history)

        checkpoints = rng.choice(len(replayed), size=10, replace=False)
        for t in checkpoints:
            assert result.potentials[t] == pytest.approx(replayed[t], rel=1e-9)
