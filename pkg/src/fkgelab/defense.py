"""Differentially private client iteration: two-level clipping, private
top-k row selection (Gumbel report-noisy-max + Gaussian propose-test-release),
noisy gradient release, and adaptive noise decay."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import graph as kgraph
from .accounting import GradientEvent, PrivacyEvent, SelectionEvent
from .graph import ClientDataset, Triple
from .models import (
    EmbeddingStore,
    LossParams,
    SparseGradient,
    batch_entity_gradient,
    grad_negative,
    grad_positive,
)


@dataclass
class DpConfig:
    sigma: float = 1.0
    sigma_r: float = 1.0
    sigma_p: float = 1.0
    delta_t: float = 1e-4
    c1: float = 1.2
    c2: float = 0.8
    eta: float = 0.95
    delta_mrr: float = 0.001
    q: float = 0.0  # derived from batch/train sizes when 0
    epsilon_budget: float = 16.0
    delta: float = 1e-5
    validation_interval: int = 5
    lemma1_denominator: str = "sigma"

    def __post_init__(self):
        if min(self.sigma, self.sigma_r, self.sigma_p, self.c1, self.c2) <= 0:
            raise ValueError("noise multipliers and clipping bounds must be positive")
        if not (0.0 < self.eta < 1.0):
            raise ValueError("eta must lie in (0, 1)")
        if not (0.0 <= self.q <= 1.0):
            raise ValueError("q must lie in [0, 1]")
        if not (0.0 < self.delta_t < 1.0):
            raise ValueError("delta_t must lie in (0, 1)")


@dataclass(frozen=True)
class SelectionOutcome:
    released: frozenset[int] | None  # entity row indexes, or None on bottom
    k: int
    d_k: float
    passed: bool

    def __post_init__(self):
        if self.passed != (self.released is not None):
            raise ValueError("released must be present exactly when the test passed")


def clip_global(g: SparseGradient, c1: float) -> SparseGradient:
    """Scale all entity rows jointly so the flattened L2 norm is <= c1."""
    if c1 <= 0:
        raise ValueError("c1 must be positive")
    norm = g.entity_norm()
    factor = 1.0 / max(1.0, norm / c1)
    return SparseGradient(
        rows={k: factor * v for k, v in g.rows.items()},
        rel_rows=dict(g.rel_rows),
    )


def clip_rows(g: SparseGradient, c2: float) -> SparseGradient:
    """Clip each entity row independently to L2 norm <= c2."""
    if c2 <= 0:
        raise ValueError("c2 must be positive")
    rows = {}
    for k, v in g.rows.items():
        n = float(np.linalg.norm(v))
        rows[k] = v / max(1.0, n / c2)
    return SparseGradient(rows=rows, rel_rows=dict(g.rel_rows))


def _gumbel(scale: float, size: int, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(size)
    return -scale * np.log(-np.log(u))


def private_selection(
    row_norms: np.ndarray,
    batch_size: int,
    cfg: DpConfig,
    rng: np.random.Generator,
) -> SelectionOutcome:
    """Data-dependent top-k index release over all n entity rows.

    Sort norms descending (ties by row id ascending), pick k as the noisy
    argmax over adjacent gaps with the [B, 2B] regularizer, then
    propose-test-release the gap before releasing the top-k index set.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = len(row_norms)
    if n <= 2 * batch_size:
        raise ValueError("need more rows than 2B; selection is degenerate otherwise")
    ids = np.arange(n)
    order = np.lexsort((ids, -np.asarray(row_norms, dtype=float)))
    sorted_norms = np.asarray(row_norms, dtype=float)[order]

    gaps = sorted_norms[:-1] - sorted_norms[1:]  # gap j (1-based) at index j-1
    j = np.arange(1, n)
    reg = np.where((j >= batch_size) & (j <= 2 * batch_size), 0.0, -np.inf)
    noisy = gaps + reg + _gumbel(2.0 * cfg.c2 * cfg.sigma_r, n - 1, rng)
    k = int(np.argmax(noisy)) + 1  # argmax takes the lowest index on ties

    next_norm = sorted_norms[k] if k < n else 0.0
    d_k = float(sorted_norms[k - 1] - next_norm)
    d_hat = (
        max(cfg.c2, d_k)
        + rng.normal(0.0, cfg.sigma_p * cfg.c2)
        - cfg.sigma_p * cfg.c2 * math.sqrt(2.0 * math.log(1.0 / cfg.delta_t))
    )
    if d_hat > cfg.c2:
        return SelectionOutcome(frozenset(int(i) for i in order[:k]), k, d_k, True)
    return SelectionOutcome(None, k, d_k, False)


def noisy_gradient(
    sum_rows: dict[int, np.ndarray],
    batch_size: int,
    cfg: DpConfig,
    rng: np.random.Generator,
    width: int,
) -> dict[int, np.ndarray]:
    """Gaussian noise of std sigma*C1 per coordinate on every selected row,
    divided by the *expected* batch size (the realized Poisson size is
    private and must not be used)."""
    if not sum_rows:
        raise ValueError("selected row set must be nonempty")
    out = {}
    for eid in sorted(sum_rows):
        noise = rng.normal(0.0, cfg.sigma * cfg.c1, size=width)
        out[eid] = (sum_rows[eid] + noise) / batch_size
    return out


@dataclass
class DpIterationResult:
    released: bool
    k: int
    active_rows: set[int]
    events: list[PrivacyEvent] = field(default_factory=list)


def dp_iteration(
    store: EmbeddingStore,
    client: ClientDataset,
    batch_size: int,
    lr: float,
    params: LossParams,
    cfg: DpConfig,
    public_pairs: Sequence[tuple[int, int]],
    rng: np.random.Generator,
) -> DpIterationResult:
    """One private SGD step, mutating ``store`` in place.

    Positive entity gradients go through clip -> private selection -> noisy
    release; negative gradients come from data-independent random negatives
    and are applied raw, as is the (local, never uploaded) relation update.
    On a failed selection test the positive entity update is skipped.
    """
    if not public_pairs:
        raise ValueError("public_pairs must be nonempty for the private path")
    q = batch_size / len(client.train)
    batch = kgraph.sample_batch(client, batch_size, rng)

    clipped_sum = SparseGradient()
    rel_sum = SparseGradient()
    for trip in batch:
        g = grad_positive(store, trip, params)
        rel_sum.accumulate(SparseGradient(rows={}, rel_rows=g.rel_rows))
        entity_part = SparseGradient(rows=g.rows, rel_rows={})
        clipped_sum.accumulate(clip_rows(clip_global(entity_part, cfg.c1), cfg.c2))

    norms = np.zeros(store.n_entities)
    for eid, vec in clipped_sum.rows.items():
        norms[eid] = np.linalg.norm(vec)
    outcome = private_selection(norms, batch_size, cfg, rng)
    events: list[PrivacyEvent] = [
        SelectionEvent(q=q, sigma_r=cfg.sigma_r, sigma_p=cfg.sigma_p, delta_t=cfg.delta_t)
    ]

    negatives = kgraph.negative_sample_random(public_pairs, params.n_neg, client.graph, rng)
    g_neg = grad_negative(store, None, negatives, params, mode="uniform")

    if outcome.passed:
        selected = {eid: clipped_sum.rows.get(eid, np.zeros(store.d_real))
                    for eid in outcome.released}
        update = noisy_gradient(selected, batch_size, cfg, rng, store.d_real)
        for eid, vec in update.items():
            store.entity_mat[eid] -= lr * vec
        events.append(GradientEvent(q=q, sigma=cfg.sigma, denominator=cfg.lemma1_denominator))

    for eid, vec in g_neg.rows.items():
        store.entity_mat[eid] -= lr * vec
    for rid, vec in g_neg.rel_rows.items():
        store.rel_params[rid] -= lr * vec
    for rid, vec in rel_sum.rel_rows.items():
        store.rel_params[rid] -= lr * vec / batch_size

    return DpIterationResult(
        released=outcome.passed,
        k=outcome.k,
        active_rows=set(clipped_sum.rows),
        events=events,
    )


def adaptive_sigma_update(sigma: float, mrr_t: float, mrr_prev: float, cfg: DpConfig) -> float:
    """Decay sigma by eta when the validation MRR gain falls below the
    trigger threshold."""
    if mrr_t - mrr_prev < cfg.delta_mrr:
        return cfg.eta * sigma
    return sigma
