"""End-to-end experiment orchestration shared by the command-line interface,
the experiment scripts, and the acceptance tests: dataset construction,
federated training with optional defense and attack hooks, and artifact
emission (checkpoints, attack traces, metrics, privacy ledgers)."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import graph as kgraph
from .accounting import export_ledger
from .attacks import AttackTrace
from .config import ExperimentConfig
from .federation import RunResult, run_fkge
from .graph import CandidateSet, ClientDataset, KnowledgeGraph
from .harness import (
    CiaHook,
    CipHook,
    SiHook,
    best_trace,
    global_candidates,
    local_candidates,
    shared_candidates,
)
from .metrics import hits_at, mrr, rank_all
from .models import EmbeddingStore, save_checkpoint


@dataclass
class ExperimentData:
    kg: KnowledgeGraph
    clients: list[ClientDataset]


def build_dataset(cfg: ExperimentConfig) -> ExperimentData:
    kg = kgraph.generate_synthetic(cfg.n_entities, cfg.n_relations,
                                   cfg.n_triples, cfg.data_seed)
    clients = kgraph.partition_federated(kg, cfg.n_clients, cfg.overlap_frac,
                                         seed=cfg.data_seed)
    return ExperimentData(kg=kg, clients=clients)


def attack_rounds(cfg: ExperimentConfig) -> frozenset[int]:
    return frozenset(range(cfg.attack_interval, cfg.rounds + 1, cfg.attack_interval))


def build_hooks(cfg: ExperimentConfig, data: ExperimentData):
    """Construct the configured attack adapter plus its candidate sets.
    Returns (hooks, victim_local_candidates)."""
    victim = data.clients[cfg.victim_id]
    adversary = data.clients[cfg.adversary_id]
    half = cfg.n_candidates // 2
    if cfg.attack == "si":
        cands = kgraph.build_candidate_set(victim, half, cfg.n_candidates - half,
                                           cfg.candidate_seed)
        aux = kgraph.synthetic_schema(cfg.n_entities, cfg.n_relations, cfg.data_seed)
        hook = SiHook(victim=victim, candidates=cands, aux=aux,
                      attack_rounds=attack_rounds(cfg), model=cfg.model,
                      dim=cfg.dim, pair_cap=cfg.si_pair_cap, seed=cfg.seed)
        return [hook], cands
    from .federation import global_index

    cands_local = shared_candidates(victim, adversary, half,
                                    cfg.n_candidates - half, cfg.candidate_seed)
    cands_global = global_candidates(victim, cands_local, global_index(data.clients))
    if cfg.attack == "cip":
        hook = CipHook(adversary_id=cfg.adversary_id, candidates=cands_global,
                       attack_rounds=attack_rounds(cfg), model=cfg.model,
                       dim=cfg.dim)
    else:
        hook = CiaHook(adversary_id=cfg.adversary_id, candidates=cands_global,
                       reversal_round=min(cfg.cia_reversal_round,
                                          cfg.rounds - cfg.cia_settle_rounds),
                       model=cfg.model, dim=cfg.dim,
                       settle_rounds=cfg.cia_settle_rounds)
    return [hook], cands_local


@dataclass
class ExperimentResult:
    data: ExperimentData
    run: RunResult
    traces: list[AttackTrace] = field(default_factory=list)

    @property
    def best(self) -> AttackTrace:
        return best_trace(self.traces)


def run_experiment(cfg: ExperimentConfig, with_attack: bool = True) -> ExperimentResult:
    data = build_dataset(cfg)
    hooks = []
    if with_attack:
        hooks, _ = build_hooks(cfg, data)
    roles = {cfg.adversary_id: "adversary"} if with_attack and cfg.attack != "si" else {}
    run = run_fkge(
        data.clients, cfg.rounds, cfg.local_iters,
        cfg.train_settings(), attack_hooks=hooks, seed=cfg.seed, roles=roles,
    )
    traces = [t for h in hooks for t in h.traces]
    # pool per-round statistics: a member's signal only shows in rounds where
    # the victim actually sampled it
    combiner = {"cip": "max", "si": "mean"}.get(cfg.attack)
    if with_attack and combiner and len(traces) > 1:
        from .attacks import combine_traces

        # rounds may skip different candidates (e.g. rows that never left the
        # broadcast under a defense); pool only rounds seeing the full set
        sig = max(((len(t.statistics), t.labels) for t in traces),
                  key=lambda s: s[0])
        pool = [t for t in traces if (len(t.statistics), t.labels) == sig]
        if len(pool) > 1:
            traces.append(combine_traces(pool, mode=combiner))
    return ExperimentResult(data=data, run=run, traces=traces)


def synced_store(result: ExperimentResult, client_id: int) -> EmbeddingStore:
    """Client store with entity rows synced to the final global matrix."""
    rt = next(r for r in result.run.clients if r.client_id == client_id)
    store = rt.store.copy()
    gids = np.asarray(rt.global_rows)
    store.entity_mat[:] = result.run.e_global[gids]
    return store


def evaluate_clients(result: ExperimentResult,
                     max_triples: int = 200) -> dict[int, dict[str, float]]:
    """Filtered link-prediction metrics on each client's test split using the
    final global entity matrix and the client's local relations."""
    out: dict[int, dict[str, float]] = {}
    for rt in result.run.clients:
        store = synced_store(result, rt.client_id)
        triples = list(rt.dataset.test)[:max_triples] or list(rt.dataset.valid)[:max_triples]
        if not triples:
            continue
        ranks = rank_all(store, triples, rt.dataset.graph.triples)
        out[rt.client_id] = {
            "mrr": mrr(ranks),
            "hits1": hits_at(ranks, 1),
            "hits3": hits_at(ranks, 3),
            "hits10": hits_at(ranks, 10),
            "n_test": float(len(triples)),
        }
    return out


def write_trace(trace: AttackTrace, directory: Path, name: str) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / f"{name}_sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau", "precision", "recall", "f1"])
        for row in trace.sweep:
            w.writerow([f"{x:.10g}" for x in row])
    with open(directory / f"{name}_roc.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fpr", "tpr"])
        for fpr, tpr in trace.roc:
            w.writerow([f"{fpr:.10g}", f"{tpr:.10g}"])
    summary = (
        f"round = {trace.round}\n"
        f"n_candidates = {len(trace.statistics)}\n"
        f"skipped = {trace.skipped}\n"
        f"best_f1 = {trace.best_f1:.6f}\n"
        f"best_tau = {trace.best_tau:.10g}\n"
        f"auc = {trace.auc:.6f}\n"
    )
    (directory / f"{name}_summary.txt").write_text(summary, encoding="utf-8")


def write_artifacts(cfg: ExperimentConfig, result: ExperimentResult,
                    run_dir: Path) -> None:
    from .config import save_config

    run_dir.mkdir(parents=True, exist_ok=True)
    save_config(cfg, run_dir / "config.cfg")

    ckpt_dir = run_dir / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    for rt in result.run.clients:
        store = synced_store(result, rt.client_id)
        save_checkpoint(store, ckpt_dir / f"client{rt.client_id}_final.ckpt")

    attack_dir = run_dir / "attacks" / cfg.attack
    for trace in result.traces:
        write_trace(trace, attack_dir, f"round{trace.round:04d}")

    metrics = evaluate_clients(result)
    lines = ["client\tmrr\thits1\thits3\thits10\tn_test"]
    for cid in sorted(metrics):
        m = metrics[cid]
        lines.append(f"{cid}\t{m['mrr']:.6f}\t{m['hits1']:.6f}\t"
                     f"{m['hits3']:.6f}\t{m['hits10']:.6f}\t{int(m['n_test'])}")
    (run_dir / "metrics.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")

    if cfg.dp_enabled:
        for cid, ledger in result.run.ledgers.items():
            (run_dir / f"ledger_client{cid}.txt").write_text(
                export_ledger(ledger, cfg.delta), encoding="utf-8")

    manifest = [
        f"model = {cfg.model}",
        f"rounds_completed = {len(result.run.history)}",
        f"halted_round = {result.run.halted_round}",
        f"dp_enabled = {str(cfg.dp_enabled).lower()}",
        f"attack = {cfg.attack}",
        f"n_traces = {len(result.traces)}",
    ]
    if result.traces:
        best = result.best
        manifest.append(f"best_attack_f1 = {best.best_f1:.6f}")
        manifest.append(f"best_attack_round = {best.round}")
    (run_dir / "manifest.txt").write_text("\n".join(manifest) + "\n", encoding="utf-8")
