import math
import random

import pytest

from coordscan.community import (
    Partition,
    louvain,
    modularity,
    read_partition_csv,
    write_partition_csv,
)
from coordscan.cosharing import CoShareGraph
from coordscan.errors import ValidationError
from oracles import all_partitions, best_partition_q, modularity_double_sum


def k2(w=1):
    return CoShareGraph(nodes={"a", "b"}, edges={("a", "b"): w})


def two_cliques(size=5, bridge_w=1):
    names = [f"l{i}" for i in range(size)] + [f"r{i}" for i in range(size)]
    edges = {}
    for side in (names[:size], names[size:]):
        for i in range(size):
            for j in range(i + 1, size):
                a, b = sorted((side[i], side[j]))
                edges[(a, b)] = 1
    a, b = sorted((names[size - 1], names[size]))
    edges[(a, b)] = bridge_w
    return CoShareGraph(nodes=set(names), edges=edges)


def random_graph(rng, n, density=0.5, max_w=5):
    nodes = [f"n{i}" for i in range(n)]
    edges = {}
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < density:
                edges[(nodes[i], nodes[j])] = rng.randint(1, max_w)
    if not edges:
        edges[(nodes[0], nodes[1])] = 1
    return CoShareGraph(nodes=set(nodes), edges=edges)


class TestModularity:
    def test_k2_single_community(self):
        assert modularity(k2(), {"a": 0, "b": 0}) == 0.0

    def test_k2_singletons(self):
        assert math.isclose(modularity(k2(3), {"a": 0, "b": 1}), -0.5)

    def test_two_cliques_natural_split_matches_oracle(self):
        g = two_cliques()
        assignment = {n: 0 if n.startswith("l") else 1 for n in g.nodes}
        q = modularity(g, assignment)
        assert math.isclose(q, modularity_double_sum(g, assignment), abs_tol=1e-12)
        assert q > 0.3

    def test_matches_double_sum_on_all_partitions_small(self):
        rng = random.Random(5)
        for _ in range(8):
            g = random_graph(rng, rng.randint(3, 6))
            for assignment in all_partitions(sorted(g.nodes)):
                assert math.isclose(
                    modularity(g, assignment),
                    modularity_double_sum(g, assignment),
                    abs_tol=1e-12,
                )

    def test_empty_edge_set_rejected(self):
        with pytest.raises(ValidationError):
            modularity(CoShareGraph(nodes={"a"}, edges={}), {"a": 0})

    def test_missing_node_rejected(self):
        with pytest.raises(ValidationError):
            modularity(k2(), {"a": 0})


class TestLouvain:
    def test_two_cliques_recovered(self):
        g = two_cliques()
        p = louvain(g, seed=0)
        left = {p.assignment[f"l{i}"] for i in range(5)}
        right = {p.assignment[f"r{i}"] for i in range(5)}
        assert len(left) == 1 and len(right) == 1 and left != right

    def test_isolated_nodes_singletons(self):
        g = k2()
        g.nodes.update({"x", "y"})
        p = louvain(g, seed=0)
        assert p.assignment["x"] != p.assignment["y"]
        assert p.assignment["x"] != p.assignment["a"]

    def test_edgeless_rejected(self):
        with pytest.raises(ValidationError):
            louvain(CoShareGraph(nodes={"a", "b"}, edges={}), seed=0)

    def test_reproducible_for_fixed_seed(self):
        g = random_graph(random.Random(9), 20, density=0.3)
        p1 = louvain(g, seed=42)
        p2 = louvain(g, seed=42)
        assert p1.assignment == p2.assignment
        assert p1.modularity == p2.modularity

    def test_cluster_ids_dense_and_size_ordered(self):
        g = two_cliques(size=4)
        g.nodes.add("iso")
        p = louvain(g, seed=1)
        ids = sorted(set(p.assignment.values()))
        assert ids == list(range(len(ids)))
        sizes = [sum(1 for c in p.assignment.values() if c == i) for i in ids]
        assert sizes == sorted(sizes, reverse=True)

    def test_beats_singletons(self):
        rng = random.Random(13)
        for _ in range(10):
            g = random_graph(rng, rng.randint(4, 10))
            p = louvain(g, seed=7)
            singles = {n: i for i, n in enumerate(sorted(g.nodes))}
            assert p.modularity >= modularity(g, singles) - 1e-12

    def test_near_optimal_small_graphs(self):
        rng = random.Random(21)
        for _ in range(15):
            g = random_graph(rng, rng.randint(4, 7))
            p = louvain(g, seed=3)
            q_best = best_partition_q(g)
            assert p.modularity >= 0.95 * q_best - 1e-9

    def test_cycle4_balanced_split_matches_oracle(self):
        nodes = ["a", "b", "c", "d"]
        edges = {("a", "b"): 1, ("b", "c"): 1, ("c", "d"): 1, ("a", "d"): 1}
        g = CoShareGraph(nodes=set(nodes), edges=edges)
        p = louvain(g, seed=0)
        assert math.isclose(p.modularity, best_partition_q(g), abs_tol=1e-12)


class TestPartitionCsv:
    def test_roundtrip(self, tmp_path):
        g = two_cliques()
        p = louvain(g, seed=0)
        write_partition_csv(p, tmp_path / "p.csv")
        loaded = read_partition_csv(tmp_path / "p.csv", g)
        assert loaded.assignment == p.assignment
        assert math.isclose(loaded.modularity, p.modularity)
