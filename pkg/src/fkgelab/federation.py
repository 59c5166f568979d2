"""Federated KGE protocol: entity alignment, local updates, server-side
averaging of overlapping entities, broadcast, and per-round records.

Only entity matrices ever travel between clients and server; relation
embeddings stay local. Client updates within a round are independent given
the broadcast, with per-client rng streams derived from
(seed, client_id, round) so results do not depend on execution order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from . import graph as kgraph
from .accounting import PrivacyLedger, check_budget
from .defense import DpConfig, adaptive_sigma_update, dp_iteration
from .graph import ClientDataset, Triple
from .metrics import mrr, rank_all
from .models import (
    EmbeddingStore,
    LossParams,
    SparseGradient,
    grad_negative,
    grad_positive,
    init_store,
)


class ProtocolError(Exception):
    pass


class ConfigurationError(Exception):
    pass


class BudgetExhaustedError(ConfigurationError):
    """The privacy budget ran out before the first round completed."""


@dataclass
class TrainSettings:
    model: str = "transe"
    dim: int = 32
    batch_size: int = 16
    lr: float = 0.001
    optimizer: str = "adam"  # non-DP path; the DP path is plain SGD
    loss: LossParams = field(default_factory=LossParams)
    validation_interval: int = 5
    max_valid_triples: int = 100
    dp: DpConfig | None = None
    dp_lr: float = 0.1
    public_pairs: tuple[tuple[int, int], ...] = ()
    n_public_pairs: int = 64


@dataclass
class ServerState:
    entity_names: tuple[str, ...]
    holders: dict[int, set[int]]
    e_global: np.ndarray
    round: int = 0

    @property
    def n_entities(self) -> int:
        return len(self.entity_names)


@dataclass
class _AdamState:
    """Lazy row-wise Adam: moments and step counts advance only for rows
    that received a gradient."""

    m: np.ndarray
    v: np.ndarray
    t: np.ndarray
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def like(cls, mat: np.ndarray) -> "_AdamState":
        return cls(np.zeros_like(mat), np.zeros_like(mat), np.zeros(mat.shape[0], dtype=int))

    def step_row(self, mat: np.ndarray, row: int, g: np.ndarray, lr: float) -> None:
        self.t[row] += 1
        t = self.t[row]
        self.m[row] = self.beta1 * self.m[row] + (1 - self.beta1) * g
        self.v[row] = self.beta2 * self.v[row] + (1 - self.beta2) * g * g
        mhat = self.m[row] / (1 - self.beta1 ** t)
        vhat = self.v[row] / (1 - self.beta2 ** t)
        mat[row] -= lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class ClientRuntime:
    """Mutable per-client training state. The relation matrix inside
    ``store`` is never serialized into protocol messages."""

    dataset: ClientDataset
    store: EmbeddingStore
    role: str = "honest"  # or "adversary"
    adam_entity: _AdamState | None = None
    adam_relation: _AdamState | None = None
    sigma: float | None = None          # adaptive DP noise scale
    public_pairs: tuple[tuple[int, int], ...] = ()  # local ids, data-independent
    # server-global row index of each local entity (name-aligned); filled in
    # by run_fkge after alignment
    global_rows: tuple[int, ...] = ()
    prev_mrr: float = 0.0
    ledger: PrivacyLedger = field(default_factory=PrivacyLedger.empty)
    halted_at: tuple[int, int] | None = None  # (round, iteration) of budget halt

    @property
    def client_id(self) -> int:
        return self.dataset.client_id


@dataclass
class RoundRecord:
    round: int
    uploads: dict[int, np.ndarray]
    broadcast: np.ndarray
    validation_mrr: dict[int, float] = field(default_factory=dict)


@dataclass
class RunResult:
    e_global: np.ndarray
    history: list[RoundRecord]
    ledgers: dict[int, PrivacyLedger]
    halted_round: int | None = None
    server: ServerState | None = None
    clients: list[ClientRuntime] | None = None


class AttackHook(Protocol):
    """Adapter interface fed exactly the observables its role permits."""

    adversary_id: int | None  # None marks a server-side adversary

    def wants(self, round_: int) -> bool: ...

    def transform_upload(self, round_: int, upload: np.ndarray,
                         runtime: "ClientRuntime") -> np.ndarray: ...

    def observe_server(self, round_: int, uploads: dict[int, np.ndarray],
                       server: "ServerState") -> None: ...

    def observe_client(self, round_: int, broadcast: np.ndarray,
                       upload: np.ndarray, runtime: "ClientRuntime",
                       n_clients: int) -> None: ...


def global_index(clients: Sequence[ClientDataset]) -> dict[str, int]:
    """Name -> server-global entity row, in first-appearance order across
    clients (the ordering used by :func:`align_entities`)."""
    names: dict[str, int] = {}
    for c in clients:
        for name in c.graph.entities:
            names.setdefault(name, len(names))
    return names


def align_entities(
    clients: Sequence[ClientDataset],
    model: str,
    dim: int,
    seed: int,
) -> ServerState:
    """Build the global entity vocabulary (first-appearance order across
    clients), record holders, and initialize the global entity matrix
    uniformly in [-b, b], b = 6/sqrt(d_real)."""
    if len(clients) < 2:
        raise ValueError("need at least 2 clients")
    ids = [c.client_id for c in clients]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate client ids")
    names: dict[str, int] = {}
    holders: dict[int, set[int]] = {}
    for c in clients:
        for name in c.graph.entities:
            gid = names.setdefault(name, len(names))
            holders.setdefault(gid, set()).add(c.client_id)
    d_real = 2 * dim if model in ("rotate", "complex") else dim
    rng = np.random.default_rng([seed, 0xA11])
    b = 6.0 / np.sqrt(d_real)
    e_global = rng.uniform(-b, b, size=(len(names), d_real))
    return ServerState(entity_names=tuple(names), holders=holders, e_global=e_global)


def make_client_runtime(
    dataset: ClientDataset,
    settings: TrainSettings,
    seed: int,
    role: str = "honest",
) -> ClientRuntime:
    rng = np.random.default_rng([seed, 0xC11, dataset.client_id])
    store = init_store(settings.model, dataset.graph.n_entities,
                       dataset.graph.n_relations, settings.dim, rng)
    rt = ClientRuntime(dataset=dataset, store=store, role=role)
    if settings.optimizer == "adam":
        rt.adam_entity = _AdamState.like(store.entity_mat)
        rt.adam_relation = _AdamState.like(store.rel_params)
    if settings.dp is not None:
        rt.sigma = settings.dp.sigma
        if settings.public_pairs:
            rt.public_pairs = tuple(settings.public_pairs)
        else:
            # data-independent public (head, relation) pairs in local id space
            prng = np.random.default_rng([seed, 0x9B, dataset.client_id])
            rt.public_pairs = tuple(
                (int(prng.integers(dataset.graph.n_entities)),
                 int(prng.integers(dataset.graph.n_relations)))
                for _ in range(settings.n_public_pairs)
            )
    return rt


def _nondp_iteration(rt: ClientRuntime, settings: TrainSettings,
                     rng: np.random.Generator) -> None:
    batch = kgraph.sample_batch(rt.dataset, settings.batch_size, rng)
    if not batch:
        return
    total = SparseGradient()
    for trip in batch:
        total.accumulate(grad_positive(rt.store, trip, settings.loss))
        negs = kgraph.negative_sample_self_adv(trip, settings.loss.n_neg,
                                               rt.dataset.graph, rng)
        total.accumulate(grad_negative(rt.store, trip, negs, settings.loss,
                                       mode="self_adv"))
    scale = 1.0 / len(batch)
    if settings.optimizer == "adam":
        for eid, g in total.rows.items():
            rt.adam_entity.step_row(rt.store.entity_mat, eid, scale * g, settings.lr)
        for rid, g in total.rel_rows.items():
            rt.adam_relation.step_row(rt.store.rel_params, rid, scale * g, settings.lr)
    else:
        for eid, g in total.rows.items():
            rt.store.entity_mat[eid] -= settings.lr * scale * g
        for rid, g in total.rel_rows.items():
            rt.store.rel_params[rid] -= settings.lr * scale * g


def client_local_update(
    rt: ClientRuntime,
    e_broadcast: np.ndarray,
    local_iters: int,
    settings: TrainSettings,
    rng: np.random.Generator,
    round_: int = 0,
) -> np.ndarray:
    """Sync held rows from the broadcast, run local iterations, and return
    the upload: the broadcast with held rows replaced by updated values."""
    if e_broadcast.shape[1] != rt.store.d_real:
        raise ValueError("broadcast width does not match the model space")
    if len(rt.global_rows) != rt.dataset.graph.n_entities:
        raise ProtocolError("client is not aligned to the global vocabulary")
    gids = np.asarray(rt.global_rows)
    rt.store.entity_mat[:] = e_broadcast[gids]

    if settings.dp is not None:
        if not rt.public_pairs:
            raise ConfigurationError("DP defense requires public head-relation pairs")
        cfg = settings.dp
        if rt.sigma is not None and rt.sigma != cfg.sigma:
            from dataclasses import replace as _replace
            cfg = _replace(cfg, sigma=rt.sigma)
        for it in range(local_iters):
            if rt.halted_at is not None:
                break
            result = dp_iteration(rt.store, rt.dataset, settings.batch_size,
                                  settings.dp_lr, settings.loss, cfg,
                                  rt.public_pairs, rng)
            for ev in result.events:
                rt.ledger = rt.ledger.record(ev)
            status = check_budget(rt.ledger, settings.dp.epsilon_budget, settings.dp.delta)
            if status == "exhausted":
                rt.halted_at = (round_, it + 1)
                break
    else:
        for _ in range(local_iters):
            _nondp_iteration(rt, settings, rng)

    upload = e_broadcast.copy()
    upload[gids] = rt.store.entity_mat
    return upload


def server_aggregate(server: ServerState, uploads: dict[int, np.ndarray]) -> np.ndarray:
    """Per-entity mean over holders; single-holder rows are taken verbatim
    (bit-identical), which is what overlap detection relies on."""
    missing = set(cid for h in server.holders.values() for cid in h) - set(uploads)
    if missing:
        raise ProtocolError(f"missing upload from client(s) {sorted(missing)}")
    shapes = {u.shape for u in uploads.values()}
    if len(shapes) != 1 or next(iter(shapes)) != server.e_global.shape:
        raise ProtocolError("upload shape mismatch")
    out = np.empty_like(server.e_global)
    for gid in range(server.n_entities):
        hs = sorted(server.holders[gid])
        if len(hs) == 1:
            out[gid] = uploads[hs[0]][gid]
        else:
            out[gid] = np.mean([uploads[c][gid] for c in hs], axis=0)
    return out


def client_validation_mrr(rt: ClientRuntime, max_triples: int = 100) -> float:
    triples = list(rt.dataset.valid)[:max_triples] or list(rt.dataset.train)[:max_triples]
    ranks = rank_all(rt.store, triples, rt.dataset.graph.triples)
    return mrr(ranks)


def run_fkge(
    clients: Sequence[ClientDataset],
    rounds: int,
    local_iters: int,
    settings: TrainSettings,
    attack_hooks: Sequence[AttackHook] = (),
    seed: int = 0,
    roles: dict[int, str] | None = None,
) -> RunResult:
    """Execute the synchronous federated protocol for ``rounds`` rounds.

    Attack hooks fire on the rounds they request; active hooks may rewrite
    their own client's upload. With a DP defense, per-client privacy ledgers
    accumulate every iteration and training halts once any client's
    converted epsilon meets the preset budget.
    """
    if rounds < 1:
        raise ValueError("need at least one round")
    server = align_entities(clients, settings.model, settings.dim, seed)
    index = global_index(clients)
    roles = roles or {}
    runtimes = []
    for c in clients:
        rt = make_client_runtime(c, settings, seed, role=roles.get(c.client_id, "honest"))
        rt.global_rows = tuple(index[name] for name in c.graph.entities)
        runtimes.append(rt)
    history: list[RoundRecord] = []
    halted_round: int | None = None

    for k in range(1, rounds + 1):
        broadcast = server.e_global
        uploads: dict[int, np.ndarray] = {}
        for rt in runtimes:
            rng = np.random.default_rng([seed, rt.client_id, k])
            upload = client_local_update(rt, broadcast, local_iters, settings, rng,
                                         round_=k)
            for hook in attack_hooks:
                if hook.adversary_id == rt.client_id and hook.wants(k):
                    upload = hook.transform_upload(k, upload, rt)
            uploads[rt.client_id] = upload

        for hook in attack_hooks:
            if hook.adversary_id is None and hook.wants(k):
                hook.observe_server(k, uploads, server)

        new_global = server_aggregate(server, uploads)
        server.e_global = new_global
        server.round = k

        for hook in attack_hooks:
            if hook.adversary_id is not None and hook.wants(k):
                rt = next(r for r in runtimes if r.client_id == hook.adversary_id)
                hook.observe_client(k, new_global, uploads[rt.client_id], rt,
                                    n_clients=len(runtimes))

        record = RoundRecord(round=k, uploads=uploads, broadcast=new_global)
        if settings.dp is not None and k % settings.validation_interval == 0:
            for rt in runtimes:
                val = client_validation_mrr(rt, settings.max_valid_triples)
                record.validation_mrr[rt.client_id] = val
                rt.sigma = adaptive_sigma_update(rt.sigma, val, rt.prev_mrr, settings.dp)
                rt.prev_mrr = val
        history.append(record)

        halts = [rt for rt in runtimes if rt.halted_at is not None]
        if halts:
            if k == 1:
                raise BudgetExhaustedError(
                    "privacy budget exhausted before the first round completed; "
                    "raise epsilon_budget or sigma"
                )
            halted_round = k
            break

    return RunResult(
        e_global=server.e_global,
        history=history,
        ledgers={rt.client_id: rt.ledger for rt in runtimes},
        halted_round=halted_round,
        server=server,
        clients=list(runtimes),
    )
