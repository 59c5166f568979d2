import numpy as np
import pytest

from fkgelab import graph as kgraph
from fkgelab.graph import (
    GraphError,
    KnowledgeGraph,
    ParseError,
    Triple,
    VocabError,
)


class TestGenerateSynthetic:
    def test_shape_and_counts(self, small_kg):
        assert small_kg.n_entities == 60
        assert small_kg.n_relations == 6
        assert len(small_kg.triples) == 300

    def test_deterministic(self, small_kg):
        again = kgraph.generate_synthetic(60, 6, 300, seed=7)
        assert again.triples == small_kg.triples
        assert again.entities == small_kg.entities

    def test_schema_consistency(self, small_kg):
        aux = kgraph.synthetic_schema(60, 6, seed=7)
        for t in small_kg.triples:
            r = aux.lookup(small_kg.entities[t.head], small_kg.entities[t.tail])
            assert r == small_kg.relations[t.rel]

    def test_too_many_triples_rejected(self):
        with pytest.raises(ValueError):
            kgraph.generate_synthetic(3, 2, 100, seed=0)


class TestPartition:
    def test_coverage_and_disjointness(self, small_kg, small_clients):
        seen: set[Triple] = set()
        for c in small_clients:
            gids = c.global_entity_ids
            for t in c.graph.triples:
                g = Triple(gids[t.head], t.rel, gids[t.tail])
                assert g in small_kg.triples
                assert g not in seen, "triple assigned to two clients"
                seen.add(g)

    def test_overlap_bookkeeping(self, small_kg, small_clients):
        shared = kgraph.overlapping_entities(small_clients)
        assert len(shared) == round(0.3 * small_kg.n_entities)
        counts: dict[int, int] = {}
        for c in small_clients:
            for g in c.global_entity_ids:
                counts[g] = counts.get(g, 0) + 1
        assert all(counts[g] == 2 for g in shared)
        assert all(k == 1 for g, k in counts.items() if g not in shared)

    def test_zero_overlap(self, small_kg):
        clients = kgraph.partition_federated(small_kg, 3, 0.0, seed=7)
        assert not kgraph.overlapping_entities(clients)

    def test_splits_partition_local_graph(self, small_clients):
        for c in small_clients:
            parts = set(c.train) | set(c.valid) | set(c.test)
            assert parts == c.graph.triples
            assert len(c.train) + len(c.valid) + len(c.test) == len(parts)

    def test_deterministic(self, small_kg, small_clients):
        again = kgraph.partition_federated(small_kg, 3, 0.3, seed=7)
        for a, b in zip(small_clients, again):
            assert a.train == b.train
            assert a.global_entity_ids == b.global_entity_ids


class TestSampling:
    def test_poisson_mean(self, small_clients, rng):
        client = small_clients[0]
        b = 16
        sizes = [len(kgraph.sample_batch(client, b, rng)) for _ in range(4000)]
        n = len(client.train)
        q = b / n
        se = np.sqrt(n * q * (1 - q) / len(sizes))
        assert abs(np.mean(sizes) - b) < 4 * se

    def test_full_rate_returns_everything(self, small_clients, rng):
        client = small_clients[0]
        batch = kgraph.sample_batch(client, len(client.train), rng)
        assert batch == list(client.train)

    def test_oversized_batch_rejected(self, small_clients, rng):
        with pytest.raises(ValueError):
            kgraph.sample_batch(small_clients[0], 10**6, rng)


class TestNegativeSampling:
    def test_self_adv_forced_case(self, rng):
        kg = KnowledgeGraph(("a", "b"), ("r",), frozenset({Triple(0, 0, 0)}))
        negs = kgraph.negative_sample_self_adv(Triple(0, 0, 0), 8, kg, rng)
        assert negs == [Triple(0, 0, 1)] * 8

    def test_self_adv_avoids_positive(self, small_kg, rng):
        pos = next(iter(small_kg.triples))
        negs = kgraph.negative_sample_self_adv(pos, 64, small_kg, rng)
        assert len(negs) == 64
        assert all(n.tail != pos.tail for n in negs)

    def test_random_negatives_ignore_private_data(self, rng):
        pairs = [(0, 0), (1, 0)]
        kg_a = KnowledgeGraph(("a", "b"), ("r",), frozenset({Triple(0, 0, 1)}))
        kg_b = KnowledgeGraph(("a", "b"), ("r",), frozenset({Triple(1, 0, 0)}))
        out_a = kgraph.negative_sample_random(pairs, 32, kg_a, np.random.default_rng(3))
        out_b = kgraph.negative_sample_random(pairs, 32, kg_b, np.random.default_rng(3))
        assert out_a == out_b

    def test_random_negatives_need_pairs(self, small_kg, rng):
        with pytest.raises(ValueError):
            kgraph.negative_sample_random([], 4, small_kg, rng)


class TestCandidates:
    def test_balanced_and_clean(self, small_clients):
        victim = small_clients[0]
        cands = kgraph.build_candidate_set(victim, 20, 20, seed=13)
        members = cands.members
        nonmembers = cands.nonmembers
        assert len(members) == len(nonmembers) == 20
        assert all(m in victim.train for m in members)
        assert all(n not in victim.graph.triples for n in nonmembers)

    def test_member_shortage_rejected(self, small_clients):
        with pytest.raises(ValueError):
            kgraph.build_candidate_set(small_clients[0], 10**6, 1, seed=0)


class TestLoadTriples:
    def test_round_trip(self, tmp_path):
        p = tmp_path / "triples.tsv"
        p.write_text("a\tr1\tb\nb\tr2\tc\na\tr1\tb\n", encoding="utf-8")
        kg = kgraph.load_triples(p)
        assert kg.entities == ("a", "b", "c")
        assert kg.relations == ("r1", "r2")
        assert kg.triples == frozenset({Triple(0, 0, 1), Triple(1, 1, 2)})

    def test_malformed_line(self, tmp_path):
        p = tmp_path / "bad.tsv"
        p.write_text("a\tr1\n", encoding="utf-8")
        with pytest.raises(ParseError):
            kgraph.load_triples(p)

    def test_fixed_vocab_enforced(self, tmp_path):
        p = tmp_path / "triples.tsv"
        p.write_text("a\tr1\tb\n", encoding="utf-8")
        ev = tmp_path / "entities.txt"
        ev.write_text("a\n", encoding="utf-8")
        with pytest.raises(VocabError):
            kgraph.load_triples(p, entity_vocab=ev)

    def test_errors_share_base_class(self):
        assert issubclass(ParseError, GraphError)
        assert issubclass(VocabError, GraphError)
