import math

import numpy as np
import pytest

from derand.applications import (Graph, Label, SetSystem, partition_yes_no,
                                 sample_graph_neighbors, sample_sets,
                                 sample_threshold)
from derand.config import FixingConfig
from derand.error import InvalidArgument, RegimeError
from fixtures.fixture_instances import random_sets


def star (leaves: int) -> Graph:
    return Graph(leaves + 1, [(0, leaf) for leaf in range(1, leaves + 1)])

class TestSetSystem:
    def test_sizes_and_matrix (self):
        system = SetSystem(5, [[0, 1], [2, 3, 4], [4]])

        assert system.m == 3
        assert system.sizes.tolist() == [2, 3, 1]
        assert system.to_matrix().row_sums().tolist() == [2, 3, 1]

    @pytest.mark.parametrize([ "sets" ], [ ([[0, 5]], ), ([[1, 1]], ), ([[-1]], ) ])
    def test_invalid_sets (self, sets: list[list[int]]):
        with pytest.raises(InvalidArgument):
            SetSystem(5, sets)

class TestGraph:
    def test_neighborhoods (self):
        vertices, system = star(12).neighborhoods(10)

        assert vertices == [0]
        assert system.sets == [list(range(1, 13))]

    def test_duplicate_edges_collapse (self):
        graph = Graph(3, [(0, 1), (1, 0), (1, 2)])

        assert graph.degrees.tolist() == [1, 2, 1]

    @pytest.mark.parametrize([ "edges" ], [ ([(0, 0)], ), ([(0, 3)], ) ])
    def test_invalid_edges (self, edges: list[tuple[int, int]]):
        with pytest.raises(InvalidArgument):
            Graph(3, edges)

class TestSampleSets:
    def test_full_rate_takes_everything (self, unit_sets: SetSystem, practical: FixingConfig):
        sample, report = sample_sets(unit_sets, 1.0, 0.3, 16, practical)

        assert sample.tolist() == list(range(unit_sets.n))
        assert report.counts == report.sizes
        assert report.bad == []
        assert all(report.in_window)

    def test_widest_window (self, unit_sets: SetSystem, practical: FixingConfig):
        _, report = sample_sets(unit_sets, 0.5, 1.0, 16, practical)

        assert report.lower == [0.0] * unit_sets.m
        assert report.upper == pytest.approx([float(size) for size in report.sizes])

    def test_sample_is_consistent (self, unit_sets: SetSystem, practical: FixingConfig):
        sample, report = sample_sets(unit_sets, 0.5, 0.5, 16, practical)

        assert sample.tolist() == sorted(set(sample.tolist()))
        assert np.all((sample >= 0) & (sample < unit_sets.n))

        members = set(sample.tolist())
        assert report.counts == [len(members.intersection(group)) for group in unit_sets.sets]
        assert set(report.outside_window) <= set(report.bad)

    def test_deterministic_across_threads (self, unit_sets: SetSystem):
        single, _ = sample_sets(unit_sets, 0.25, 0.5, 16, FixingConfig.for_profile("practical"))
        threaded, _ = sample_sets(
            unit_sets, 0.25, 0.5, 16, FixingConfig.for_profile("practical", threads=4)
        )

        assert np.array_equal(single, threaded)

    def test_small_sets_are_reported (self, practical: FixingConfig):
        system = SetSystem(64, [list(range(4)), list(range(64))])
        _, report = sample_sets(system, 0.5, 0.5, 8, practical)

        assert report.threshold == pytest.approx(sample_threshold(64, 0.5, 0.5))
        assert 0 in report.below_threshold

    def test_empty_set (self, practical: FixingConfig):
        with pytest.raises(InvalidArgument):
            sample_sets(SetSystem(4, [[0, 1], []]), 0.5, 0.3, 8, practical)

    @pytest.mark.parametrize(
        [ "p", "epsilon" ], [ (0.0, 0.3), (1.5, 0.3), (0.5, 0.0), (0.5, 1.2) ]
    )
    def test_parameters_out_of_range (self, unit_sets: SetSystem, p: float, epsilon: float):
        with pytest.raises(InvalidArgument):
            sample_sets(unit_sets, p, epsilon, 8)

    @pytest.mark.slow
    def test_sampling_reproduction (self, practical: FixingConfig):
        rng = np.random.default_rng(11)
        system = random_sets(rng, 4096, 256, 512)

        sample, report = sample_sets(system, 1 / 8, 0.3, 64, practical)

        assert len(report.outside_window) <= len(report.bad)
        assert len(report.bad) <= system.m // 4
        assert abs(len(sample) - system.n / 8) <= 0.3 * system.n / 8

class TestSampleGraph:
    def test_star (self, practical: FixingConfig):
        graph = star(64)
        sample, report = sample_graph_neighbors(graph, 0.5, 0.25, 16, practical, threshold=10)

        assert report.vertices == [0]
        assert report.threshold == 10
        assert report.sizes == [64]
        assert report.counts == [int(np.sum(sample >= 1))]
        assert report.in_window[0] or report.bad == [0]

    def test_no_constrained_vertex (self, practical: FixingConfig):
        _, report = sample_graph_neighbors(Graph(5), 0.5, 0.5, 8, practical)

        assert report.vertices == []
        assert report.counts == []

    def test_default_threshold (self, practical: FixingConfig):
        _, report = sample_graph_neighbors(star(8), 0.5, 0.5, 8, practical)

        assert report.threshold == math.ceil(math.log(9) / (0.5 * 0.25))
        assert report.vertices == []

class TestPartition:
    def test_sets_below_minimum (self, unit_sets: SetSystem, practical: FixingConfig):
        with pytest.raises(RegimeError):
            partition_yes_no(unit_sets, 16, practical)

    def test_partition_counts (self, unit_sets: SetSystem):
        config = FixingConfig.for_profile("practical", partition_min_factor=5.0)
        labels, report = partition_yes_no(unit_sets, 16, config)

        assert len(labels) == unit_sets.n
        assert set(labels) <= { Label.YES, Label.NO, Label.MAYBE }
        assert report.minimum_size == pytest.approx(5.0 * math.log(unit_sets.n))

        yes = { j for j, label in enumerate(labels) if label == Label.YES }
        no = { j for j, label in enumerate(labels) if label == Label.NO }
        for i, group in enumerate(unit_sets.sets):
            assert report.yes[i] == len(yes.intersection(group))
            assert report.no[i] == len(no.intersection(group))
            assert report.yes[i] + report.no[i] + report.maybe[i] == len(group)

            if min(report.yes[i], report.no[i]) < len(group) / 5:
                assert i in report.bad

    @pytest.mark.slow
    def test_partition_reproduction (self, practical: FixingConfig):
        n = 4096
        rng = np.random.default_rng(5)
        size = math.ceil(practical.partition_min_factor * math.log(n))
        system = random_sets(rng, n, 16, size)

        labels, report = partition_yes_no(system, 64, practical)

        assert len(labels) == n
        assert len(report.bad) <= system.m // 8
