"""Knowledge-graph data model, file I/O, federated partitioning and sampling.

Triple files are tab-separated ``head\trelation\ttail`` lines (UTF-8, no
header). Vocabulary files hold one token per line; the line number is the id.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

log = logging.getLogger(__name__)


class GraphError(Exception):
    """Base error for graph construction and partitioning."""


class ParseError(GraphError):
    pass


class VocabError(GraphError):
    pass


class PartitionError(GraphError):
    pass


class Triple(NamedTuple):
    head: int
    rel: int
    tail: int


@dataclass(frozen=True)
class KnowledgeGraph:
    """Entity/relation vocabularies plus a duplicate-free triple set."""

    entities: tuple[str, ...]
    relations: tuple[str, ...]
    triples: frozenset[Triple]

    def __post_init__(self):
        ne, nr = len(self.entities), len(self.relations)
        for t in self.triples:
            if not (0 <= t.head < ne and 0 <= t.tail < ne and 0 <= t.rel < nr):
                raise VocabError(f"triple {t} references id outside vocabulary")

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def entity_index(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.entities)}

    def relation_index(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.relations)}

    def sorted_triples(self) -> list[Triple]:
        """Deterministic iteration order for seeded operations."""
        return sorted(self.triples)


@dataclass(frozen=True)
class ClientDataset:
    """One client's shard: a local graph with train/valid/test splits.

    ``global_entity_ids[i]`` is the source-graph id of local entity ``i``.
    Relation vocabulary is shared verbatim with the source graph.
    """

    client_id: int
    graph: KnowledgeGraph
    train: tuple[Triple, ...]
    valid: tuple[Triple, ...]
    test: tuple[Triple, ...]
    global_entity_ids: tuple[int, ...]

    def __post_init__(self):
        parts = [set(self.train), set(self.valid), set(self.test)]
        union = parts[0] | parts[1] | parts[2]
        if union != self.graph.triples:
            raise PartitionError("splits do not cover the client graph")
        if len(self.train) + len(self.valid) + len(self.test) != len(union):
            raise PartitionError("splits overlap")
        if len(self.global_entity_ids) != self.graph.n_entities:
            raise PartitionError("global entity map size mismatch")


@dataclass(frozen=True)
class CandidateSet:
    """Labeled membership-inference candidates over a victim's vocabularies."""

    candidates: tuple[tuple[Triple, bool], ...]  # (triple, is_member)

    @property
    def members(self) -> list[Triple]:
        return [t for t, m in self.candidates if m]

    @property
    def nonmembers(self) -> list[Triple]:
        return [t for t, m in self.candidates if not m]


@dataclass(frozen=True)
class AuxSchema:
    """Auxiliary domain knowledge: which relation connects two entity classes.

    Keyed by entity *name* so the same schema applies across any local or
    global vocabulary built over the same entities.
    """

    entity_classes: dict[str, int]
    pair_relation: dict[tuple[int, int], str] = field(default_factory=dict)

    def lookup(self, head_name: str, tail_name: str) -> str | None:
        hc = self.entity_classes.get(head_name)
        tc = self.entity_classes.get(tail_name)
        if hc is None or tc is None:
            return None
        return self.pair_relation.get((hc, tc))


def _read_vocab(path: Path) -> tuple[str, ...]:
    with open(path, encoding="utf-8") as fh:
        return tuple(line.rstrip("\n") for line in fh if line.rstrip("\n"))


def load_triples(
    path: str | Path,
    entity_vocab: str | Path | None = None,
    relation_vocab: str | Path | None = None,
) -> KnowledgeGraph:
    """Load a TSV triple file, building vocabularies in first-appearance order
    unless explicit vocabulary files are supplied. Duplicate lines are dropped
    with a logged count."""
    path = Path(path)
    ents: dict[str, int] = {}
    rels: dict[str, int] = {}
    fixed_ents = fixed_rels = False
    if entity_vocab is not None:
        ents = {n: i for i, n in enumerate(_read_vocab(Path(entity_vocab)))}
        fixed_ents = True
    if relation_vocab is not None:
        rels = {n: i for i, n in enumerate(_read_vocab(Path(relation_vocab)))}
        fixed_rels = True

    triples: set[Triple] = set()
    dupes = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ParseError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(fields)}")
            h, r, t = fields
            for tok, vocab, fixed, kind in ((h, ents, fixed_ents, "entity"),
                                            (r, rels, fixed_rels, "relation"),
                                            (t, ents, fixed_ents, "entity")):
                if tok not in vocab:
                    if fixed:
                        raise VocabError(f"{path}:{lineno}: {kind} {tok!r} not in supplied vocabulary")
                    vocab[tok] = len(vocab)
            trip = Triple(ents[h], rels[r], ents[t])
            if trip in triples:
                dupes += 1
            else:
                triples.add(trip)
    if dupes:
        log.warning("%s: dropped %d duplicate triple lines", path, dupes)
    return KnowledgeGraph(tuple(ents), tuple(rels), frozenset(triples))


def _n_classes(n_relations: int) -> int:
    return max(2, math.ceil(math.sqrt(n_relations)))


def generate_synthetic(
    n_entities: int,
    n_relations: int,
    n_triples: int,
    seed: int,
) -> KnowledgeGraph:
    """Clustered synthetic graph.

    Entities belong to latent classes (``entity_id % n_classes``) and the
    relation of a triple is a deterministic function of the (head class,
    tail class) pair, so embeddings are learnable and the class schema acts
    as an auxiliary dataset. See :func:`synthetic_schema`.
    """
    if n_triples > n_entities * n_entities * n_relations:
        raise ValueError("n_triples exceeds the number of possible triples")
    if n_entities < 2 or n_relations < 1:
        raise ValueError("need at least 2 entities and 1 relation")
    rng = np.random.default_rng(seed)
    c = _n_classes(n_relations)
    perm = rng.permutation(n_relations)
    triples: set[Triple] = set()
    max_tries = 100 * n_triples + 1000
    tries = 0
    while len(triples) < n_triples:
        tries += 1
        if tries > max_tries:
            raise ValueError("could not generate enough distinct triples; reduce n_triples")
        h = int(rng.integers(n_entities))
        t = int(rng.integers(n_entities))
        if h == t:
            continue
        r = int(perm[((h % c) * c + (t % c)) % n_relations])
        triples.add(Triple(h, r, t))
    entities = tuple(f"e{i:05d}" for i in range(n_entities))
    relations = tuple(f"r{i:03d}" for i in range(n_relations))
    return KnowledgeGraph(entities, relations, frozenset(triples))


def synthetic_schema(n_entities: int, n_relations: int, seed: int) -> AuxSchema:
    """Rebuild the class schema used by :func:`generate_synthetic` for the
    same parameters, expressed over entity/relation names."""
    rng = np.random.default_rng(seed)
    c = _n_classes(n_relations)
    perm = rng.permutation(n_relations)
    classes = {f"e{i:05d}": i % c for i in range(n_entities)}
    pair_rel = {
        (a, b): f"r{int(perm[(a * c + b) % n_relations]):03d}"
        for a in range(c)
        for b in range(c)
    }
    return AuxSchema(entity_classes=classes, pair_relation=pair_rel)


def partition_federated(
    kg: KnowledgeGraph,
    m: int,
    overlap_frac: float,
    split: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> list[ClientDataset]:
    """Partition a graph over ``m`` clients with controlled entity overlap.

    A fraction ``overlap_frac`` of entities is held by exactly two clients;
    the rest by exactly one. A triple is eligible for a client iff both of
    its endpoints fall in the client's entity set, and every eligible triple
    is assigned to exactly one client (seeded choice), so shared-entity
    triple sets differ across clients. Relations are shared by all clients.
    """
    if m < 2:
        raise ValueError("need at least 2 clients")
    if not (0.0 <= overlap_frac <= 1.0):
        raise ValueError("overlap_frac must be in [0, 1]")
    if abs(sum(split) - 1.0) > 1e-9 or any(s < 0 for s in split):
        raise ValueError("split fractions must be nonnegative and sum to 1")
    rng = np.random.default_rng(seed)
    n = kg.n_entities
    order = rng.permutation(n)
    n_shared = int(round(overlap_frac * n))
    holders: list[set[int]] = [set() for _ in range(n)]
    for idx, e in enumerate(order[:n_shared]):
        pair = rng.choice(m, size=2, replace=False)
        holders[e].update(int(x) for x in pair)
    for idx, e in enumerate(order[n_shared:]):
        holders[e].add(idx % m)

    client_entities: list[list[int]] = [[] for _ in range(m)]
    for e in range(n):
        for c in holders[e]:
            client_entities[c].append(e)

    client_triples: list[list[Triple]] = [[] for _ in range(m)]
    for trip in kg.sorted_triples():
        eligible = sorted(set(holders[trip.head]) & set(holders[trip.tail]))
        if not eligible:
            continue
        owner = eligible[int(rng.integers(len(eligible)))]
        client_triples[owner].append(trip)

    clients = []
    for c in range(m):
        ents = client_entities[c]
        local_of = {g: i for i, g in enumerate(ents)}
        local_names = tuple(kg.entities[g] for g in ents)
        local = [Triple(local_of[t.head], t.rel, local_of[t.tail]) for t in client_triples[c]]
        rng.shuffle(local)
        n_tr = int(round(split[0] * len(local)))
        n_va = int(round(split[1] * len(local)))
        train = tuple(local[:n_tr])
        valid = tuple(local[n_tr:n_tr + n_va])
        test = tuple(local[n_tr + n_va:])
        if not train:
            raise PartitionError(
                f"client {c} received no train triples; retry with a different seed"
            )
        graph = KnowledgeGraph(local_names, kg.relations, frozenset(local))
        clients.append(ClientDataset(
            client_id=c, graph=graph, train=train, valid=valid, test=test,
            global_entity_ids=tuple(ents),
        ))
    return clients


def overlapping_entities(clients: Sequence[ClientDataset]) -> set[int]:
    """Source-graph ids of entities held by two or more clients."""
    counts: dict[int, int] = {}
    for c in clients:
        for g in c.global_entity_ids:
            counts[g] = counts.get(g, 0) + 1
    return {g for g, k in counts.items() if k >= 2}


def sample_batch(client: ClientDataset, batch_size: int, rng: np.random.Generator) -> list[Triple]:
    """Poisson subsample of the train split: each triple independently with
    probability q = batch_size / |train|. Realized size varies around B."""
    n = len(client.train)
    if batch_size > n:
        raise ValueError("batch size exceeds train set size")
    q = batch_size / n
    mask = rng.random(n) < q
    return [t for t, keep in zip(client.train, mask) if keep]


def negative_sample_self_adv(
    triple: Triple,
    n: int,
    kg: KnowledgeGraph,
    rng: np.random.Generator,
) -> list[Triple]:
    """Tail-corruption negatives: (h, r, t') with t' != t and, when possible
    within 100 tries per slot, (h, r, t') not a known triple."""
    if n < 1:
        raise ValueError("need at least one negative")
    if kg.n_entities < 2:
        raise ValueError("need at least 2 entities to corrupt tails")
    out: list[Triple] = []
    for _ in range(n):
        cand = None
        for attempt in range(100):
            t_new = int(rng.integers(kg.n_entities))
            if t_new == triple.tail:
                continue
            cand = Triple(triple.head, triple.rel, t_new)
            if cand not in kg.triples:
                break
        if cand is None:  # every draw hit the positive tail; force another id
            t_new = (triple.tail + 1) % kg.n_entities
            cand = Triple(triple.head, triple.rel, t_new)
        out.append(cand)
    return out


def negative_sample_random(
    public_pairs: Sequence[tuple[int, int]],
    n: int,
    kg: KnowledgeGraph,
    rng: np.random.Generator,
) -> list[Triple]:
    """Fully random negatives (h', r', t') built from public head-relation
    pairs and a uniform tail. Independent of any private triple set, so the
    resulting gradient can be released without perturbation."""
    if not public_pairs:
        raise ValueError("public_pairs must be nonempty")
    out = []
    for _ in range(n):
        h, r = public_pairs[int(rng.integers(len(public_pairs)))]
        t = int(rng.integers(kg.n_entities))
        out.append(Triple(h, r, t))
    return out


def build_candidate_set(
    victim: ClientDataset,
    n_members: int,
    n_nonmembers: int,
    seed: int,
    entity_pool: Sequence[int] | None = None,
    member_pool: Sequence[Triple] | None = None,
) -> CandidateSet:
    """Balanced membership candidates in the victim's local id space.

    Members are drawn from the victim train split (optionally restricted to
    ``member_pool``); non-members are random (h, r, t) over the victim's
    vocabularies (optionally with endpoints restricted to ``entity_pool``),
    rejected if present anywhere in the victim's graph.
    """
    rng = np.random.default_rng(seed)
    pool = list(member_pool) if member_pool is not None else list(victim.train)
    if n_members > len(pool):
        raise ValueError("not enough member triples available")
    idx = rng.choice(len(pool), size=n_members, replace=False)
    members = [pool[int(i)] for i in idx]

    ents = list(entity_pool) if entity_pool is not None else list(range(victim.graph.n_entities))
    nonmembers: set[Triple] = set()
    tries = 0
    limit = 1000 * max(n_nonmembers, 1)
    while len(nonmembers) < n_nonmembers:
        tries += 1
        if tries > limit:
            raise GraphError("could not generate enough distinct non-member candidates")
        h = ents[int(rng.integers(len(ents)))]
        t = ents[int(rng.integers(len(ents)))]
        r = int(rng.integers(victim.graph.n_relations))
        cand = Triple(h, r, t)
        if h != t and cand not in victim.graph.triples:
            nonmembers.add(cand)
    labeled = [(t, True) for t in members] + [(t, False) for t in sorted(nonmembers)]
    return CandidateSet(tuple(labeled))
