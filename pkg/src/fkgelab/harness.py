"""Attack adapters that plug the pure attack functions into the federated
loop, plus helpers to assemble desk-scale experiments.

Each adapter gathers only the observables its threat model grants (see
``attacks``): the SI adapter runs server-side on one client's upload, the CIP
adapter runs inside an honest-but-curious client, and the CIA adapter
additionally rewrites its own upload at the reversal round.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import attacks
from .attacks import AttackTrace, CiaScorePair, CipObservables, SiObservables
from .federation import ClientRuntime, ServerState
from .graph import AuxSchema, CandidateSet, ClientDataset, Triple


@dataclass
class SiHook:
    """Malicious-server adapter: relation enumeration + clustering + schema
    lookup over the victim's uploaded rows. Candidates use victim-local ids."""

    victim: ClientDataset
    candidates: CandidateSet
    aux: AuxSchema
    attack_rounds: frozenset[int]
    model: str
    dim: int
    pair_cap: int | None = 20000
    seed: int = 0
    concentration_quantile: float = 0.5
    traces: list[AttackTrace] = field(default_factory=list)
    adversary_id: int | None = None  # server-side

    def wants(self, round_: int) -> bool:
        return round_ in self.attack_rounds

    def transform_upload(self, round_, upload, runtime):  # pragma: no cover
        return upload

    def observe_client(self, round_, broadcast, upload, runtime, n_clients):
        raise NotImplementedError("SI runs on the server")

    def observe_server(self, round_: int, uploads: dict[int, np.ndarray],
                       server: ServerState) -> None:
        index = {n: i for i, n in enumerate(server.entity_names)}
        gids = np.asarray([index[n] for n in self.victim.graph.entities])
        obs = SiObservables(
            round=round_,
            victim_entity_rows=uploads[self.victim.client_id][gids],
            victim_entity_names=self.victim.graph.entities,
            model=self.model,
            dim=self.dim,
            n_relations=self.victim.graph.n_relations,
            relation_names=self.victim.graph.relations,
            aux=self.aux,
        )
        self.traces.append(attacks.run_si_round(
            obs, self.candidates.candidates, cap=self.pair_cap,
            seed=self.seed + round_,
            concentration_quantile=self.concentration_quantile,
        ))


@dataclass
class CipHook:
    """Passive-client adapter. Candidates carry global entity ids and must
    have both endpoints inside the detected overlap."""

    adversary_id: int
    candidates: CandidateSet
    attack_rounds: frozenset[int]
    model: str
    dim: int
    # how many clients the adversary assumes were averaged into an
    # overlapping row; pairwise-overlap partitions make 2 the right guess
    assumed_holders: int | None = 2
    traces: list[AttackTrace] = field(default_factory=list)

    def wants(self, round_: int) -> bool:
        return round_ in self.attack_rounds

    def transform_upload(self, round_, upload, runtime):
        return upload

    def observe_server(self, round_, uploads, server):
        raise NotImplementedError("CIP runs inside a client")

    def observe_client(self, round_: int, broadcast: np.ndarray,
                       upload: np.ndarray, runtime: ClientRuntime,
                       n_clients: int) -> None:
        obs = CipObservables(
            round=round_,
            upload=upload,
            broadcast=broadcast,
            n_advertised=self.assumed_holders or n_clients,
            adversary_store=runtime.store,
            adversary_entity_rows={g: i for i, g in enumerate(runtime.global_rows)},
            model=self.model,
            dim=self.dim,
        )
        self.traces.append(attacks.run_cip_round(obs, self.candidates.candidates))


@dataclass
class CiaHook:
    """Active-client adapter: reverse candidate tail rows in the round-kappa
    upload (s1 from the corrupted rows), then read the settled broadcast j
    rounds later (s2)."""

    adversary_id: int
    candidates: CandidateSet
    reversal_round: int
    model: str
    dim: int
    settle_rounds: int = 1
    traces: list[AttackTrace] = field(default_factory=list)
    skipped: int = 0
    _s1: dict[int, float] = field(default_factory=dict)  # candidate index -> s1
    _rel_rows: dict[int, np.ndarray] = field(default_factory=dict)

    def wants(self, round_: int) -> bool:
        return round_ in (self.reversal_round, self.reversal_round + self.settle_rounds)

    def observe_server(self, round_, uploads, server):
        raise NotImplementedError("CIA runs inside a client")

    def _evaluable(self, trip: Triple, held: set[int], n_rel: int) -> bool:
        return trip.head in held and trip.tail in held and 0 <= trip.rel < n_rel

    def transform_upload(self, round_: int, upload: np.ndarray,
                         runtime: ClientRuntime) -> np.ndarray:
        if round_ != self.reversal_round:
            return upload
        held = set(runtime.global_rows)
        n_rel = runtime.store.n_relations
        targets = {t.tail for t, _ in self.candidates.candidates
                   if self._evaluable(t, held, n_rel)}
        reversed_upload = attacks.cia_reverse(upload, targets, held=held)
        for idx, (trip, _) in enumerate(self.candidates.candidates):
            if not self._evaluable(trip, held, n_rel):
                continue
            rel_row = runtime.store.rel_params[trip.rel].copy()
            self._rel_rows[idx] = rel_row
            self._s1[idx] = attacks.distance_score(
                self.model, self.dim,
                reversed_upload[trip.head], rel_row, reversed_upload[trip.tail],
            )
        return reversed_upload

    def observe_client(self, round_: int, broadcast: np.ndarray,
                       upload: np.ndarray, runtime: ClientRuntime,
                       n_clients: int) -> None:
        if round_ != self.reversal_round + self.settle_rounds:
            return
        pairs = []
        skipped = 0
        for idx, (trip, is_member) in enumerate(self.candidates.candidates):
            if idx not in self._s1:
                skipped += 1
                continue
            s2 = attacks.distance_score(
                self.model, self.dim,
                broadcast[trip.head], self._rel_rows[idx], broadcast[trip.tail],
            )
            pairs.append(CiaScorePair(candidate=trip, is_member=is_member,
                                      s1=self._s1[idx], s2=s2))
        self.skipped = skipped
        trace = attacks.cia_trace(pairs, round_=round_)
        self.traces.append(AttackTrace(
            round=trace.round, statistics=trace.statistics, labels=trace.labels,
            sweep=trace.sweep, roc=trace.roc, best_f1=trace.best_f1,
            best_tau=trace.best_tau, auc=trace.auc, skipped=skipped,
        ))


def local_candidates(victim: ClientDataset, cands: CandidateSet,
                     index: dict[str, int]) -> CandidateSet:
    """Map a server-global candidate set into the victim's local entity ids.
    ``index`` is the name -> server row map (see ``federation.global_index``)."""
    local_of = {index[n]: i for i, n in enumerate(victim.graph.entities)}
    out = []
    for trip, m in cands.candidates:
        if trip.head in local_of and trip.tail in local_of:
            out.append((Triple(local_of[trip.head], trip.rel, local_of[trip.tail]), m))
    if not out:
        raise ValueError("no candidate survives the victim-local mapping")
    return CandidateSet(tuple(out))


def global_candidates(victim: ClientDataset, cands: CandidateSet,
                      index: dict[str, int]) -> CandidateSet:
    """Map a victim-local candidate set into server-global entity rows."""
    rows = [index[n] for n in victim.graph.entities]
    return CandidateSet(tuple(
        (Triple(rows[t.head], t.rel, rows[t.tail]), m) for t, m in cands.candidates
    ))


def shared_candidates(
    victim: ClientDataset,
    adversary: ClientDataset,
    n_members: int,
    n_nonmembers: int,
    seed: int,
) -> CandidateSet:
    """Balanced candidates, victim-local ids, both endpoints held by victim
    and adversary *and* touched by training triples on both sides, so the
    rows actually move and overlap detection can see them."""
    from .graph import build_candidate_set

    def active(c: ClientDataset) -> set[int]:
        out: set[int] = set()
        for t in c.train:
            out.add(c.global_entity_ids[t.head])
            out.add(c.global_entity_ids[t.tail])
        return out

    shared = (set(victim.global_entity_ids) & set(adversary.global_entity_ids)
              & active(victim) & active(adversary))
    if len(shared) < 2:
        raise ValueError("victim and adversary share too few trained entities")
    local_of = {g: i for i, g in enumerate(victim.global_entity_ids)}
    pool_local = sorted(local_of[g] for g in shared)
    members = [t for t in victim.train
               if victim.global_entity_ids[t.head] in shared
               and victim.global_entity_ids[t.tail] in shared]
    n_m = min(n_members, len(members))
    n_n = min(n_nonmembers, n_m) if n_nonmembers == n_members else n_nonmembers
    return build_candidate_set(
        victim, n_m, n_n, seed,
        entity_pool=pool_local, member_pool=members,
    )


def best_trace(traces: Sequence[AttackTrace]) -> AttackTrace:
    if not traces:
        raise ValueError("no attack traces recorded")
    return max(traces, key=lambda t: t.best_f1)
