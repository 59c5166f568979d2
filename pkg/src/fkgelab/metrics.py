"""Link-prediction metrics (filtered MRR, Hits@N) and attack F1."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .graph import Triple
from .models import EmbeddingStore, score_all_heads, score_all_tails


@dataclass(frozen=True)
class RankResult:
    query: Triple
    direction: str  # "tail" or "head"
    rank: int


def rank_entity(
    store: EmbeddingStore,
    triple: Triple,
    direction: str,
    filter_set: Iterable[Triple],
) -> RankResult:
    """Filtered rank of the true completion with pessimistic tie-breaking:
    rank = 1 + count of unfiltered candidates scoring >= the true answer
    (the true answer itself excluded)."""
    if direction == "tail":
        scores = score_all_tails(store, triple.head, triple.rel)
        true_id = triple.tail
        known = {t.tail for t in filter_set
                 if t.head == triple.head and t.rel == triple.rel and t.tail != true_id}
    elif direction == "head":
        scores = score_all_heads(store, triple.rel, triple.tail)
        true_id = triple.head
        known = {t.head for t in filter_set
                 if t.tail == triple.tail and t.rel == triple.rel and t.head != true_id}
    else:
        raise ValueError("direction must be 'tail' or 'head'")
    true_score = scores[true_id]
    mask = np.ones(len(scores), dtype=bool)
    mask[list(known)] = False
    mask[true_id] = False
    rank = 1 + int(np.sum(scores[mask] >= true_score))
    return RankResult(query=triple, direction=direction, rank=rank)


def rank_all(
    store: EmbeddingStore,
    triples: Sequence[Triple],
    filter_set: Iterable[Triple],
    directions: tuple[str, ...] = ("tail", "head"),
) -> list[int]:
    filt = list(filter_set)
    return [rank_entity(store, t, d, filt).rank for t in triples for d in directions]


def mrr(ranks: Sequence[int]) -> float:
    if not ranks:
        raise ValueError("ranks must be nonempty")
    return float(np.mean([1.0 / r for r in ranks]))


def hits_at(ranks: Sequence[int], n: int) -> float:
    if not ranks:
        raise ValueError("ranks must be nonempty")
    if n < 1:
        raise ValueError("n must be >= 1")
    return float(np.mean([1.0 if r <= n else 0.0 for r in ranks]))


def f1(precision: float, recall: float) -> float:
    if not (0.0 <= precision <= 1.0 and 0.0 <= recall <= 1.0):
        raise ValueError("precision and recall must lie in [0, 1]")
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)
