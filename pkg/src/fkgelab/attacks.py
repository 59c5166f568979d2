"""Triple-membership inference attacks against the federated protocol.

Each attack consumes exactly the observables its threat model grants:

* server-initiated (SI): the victim's uploaded entity matrix, the victim's
  entity set, an auxiliary class schema and the (public) relation count;
* client-initiated passive (CIP): the adversary's own upload, the broadcast,
  the advertised client count and the adversary's local store;
* client-initiated active (CIA): as CIP plus write access to the
  adversary's own upload.

Attack runners accept observables values only; they never see the victim's
triples or relation matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from sklearn.cluster import KMeans

from .graph import AuxSchema, Triple
from .metrics import f1 as f1_score
from .models import EmbeddingStore, score_rows

_DENOM_GUARD = 1e-12


class AttackError(Exception):
    pass


class UnsupportedModelError(AttackError):
    pass


# ---------------------------------------------------------------------------
# observables


@dataclass(frozen=True)
class SiObservables:
    """What a malicious server sees at one attack round."""

    round: int
    victim_entity_rows: np.ndarray      # |E_v| x d_real, victim upload restricted
    victim_entity_names: tuple[str, ...]
    model: str
    dim: int
    n_relations: int                    # public protocol metadata
    relation_names: tuple[str, ...]     # public vocabulary
    aux: AuxSchema


@dataclass(frozen=True)
class CipObservables:
    """What an honest-but-curious client sees at one attack round."""

    round: int
    upload: np.ndarray                  # adversary's own upload, global row order
    broadcast: np.ndarray               # server broadcast for the same round
    n_advertised: int
    adversary_store: EmbeddingStore     # local store incl. relation matrix
    adversary_entity_rows: dict[int, int]  # global id -> local row in the store
    model: str
    dim: int


@dataclass(frozen=True)
class CiaScorePair:
    candidate: Triple  # global ids
    is_member: bool
    s1: float
    s2: float


# ---------------------------------------------------------------------------
# threshold sweep


@dataclass(frozen=True)
class AttackTrace:
    round: int
    statistics: tuple[float, ...]
    labels: tuple[bool, ...]
    sweep: tuple[tuple[float, float, float, float], ...]  # (tau, P, R, F1)
    roc: tuple[tuple[float, float], ...]                  # (fpr, tpr)
    best_f1: float
    best_tau: float
    auc: float
    skipped: int = 0  # not-evaluable candidates excluded from the sweep


def sweep_threshold(statistics: Sequence[float], labels: Sequence[bool],
                    round_: int = 0, skipped: int = 0) -> AttackTrace:
    """Evaluate the decision ``statistic >= tau`` at every distinct statistic
    value and every midpoint between adjacent distinct values, plus +-inf."""
    stats = np.asarray(statistics, dtype=float)
    labs = np.asarray(labels, dtype=bool)
    if len(stats) != len(labs) or len(stats) == 0:
        raise ValueError("statistics and labels must be nonempty and aligned")
    if labs.all() or (~labs).all():
        raise ValueError("need at least one member and one non-member label")

    distinct = np.unique(stats)
    finite = distinct[np.isfinite(distinct)]
    taus = [-math.inf, math.inf]
    taus.extend(float(v) for v in distinct)
    taus.extend((float(finite[i]) + float(finite[i + 1])) / 2.0 for i in range(len(finite) - 1))
    taus = sorted(set(taus))

    n_pos = int(labs.sum())
    n_neg = int((~labs).sum())
    sweep = []
    roc_points = set()
    best_f1, best_tau = -1.0, math.nan
    for tau in taus:
        pred = stats >= tau
        tp = int((pred & labs).sum())
        fp = int((pred & ~labs).sum())
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / n_pos
        f = f1_score(precision, recall)
        sweep.append((tau, precision, recall, f))
        roc_points.add((fp / n_neg, tp / n_pos))
        if f > best_f1:
            best_f1, best_tau = f, tau
    roc = sorted(roc_points | {(0.0, 0.0), (1.0, 1.0)})
    auc = float(np.trapezoid([p[1] for p in roc], [p[0] for p in roc]))
    return AttackTrace(
        round=round_, statistics=tuple(float(s) for s in stats),
        labels=tuple(bool(b) for b in labs), sweep=tuple(sweep), roc=tuple(roc),
        best_f1=best_f1, best_tau=best_tau, auc=auc, skipped=skipped,
    )


def combine_traces(traces: Sequence[AttackTrace], mode: str = "max") -> AttackTrace:
    """Combine per-round membership statistics for the same candidate list
    into one decision statistic (a member's signal only shows in rounds where
    the victim sampled it, so pooling rounds raises recall)."""
    if not traces:
        raise ValueError("need at least one trace")
    lengths = {len(t.statistics) for t in traces}
    if len(lengths) != 1:
        raise ValueError("traces cover different candidate sets")
    labels = traces[0].labels
    if any(t.labels != labels for t in traces):
        raise ValueError("traces carry inconsistent labels")
    s = np.array([t.statistics for t in traces])
    if mode == "max":
        combined = s.max(axis=0)
    elif mode == "mean":
        combined = s.mean(axis=0)
    else:
        raise ValueError(f"unknown combination mode {mode!r}")
    return sweep_threshold(combined, labels, round_=max(t.round for t in traces),
                           skipped=traces[0].skipped)


# ---------------------------------------------------------------------------
# server-initiated inference


def entity_pair_relation(h_row: np.ndarray, t_row: np.ndarray, model: str, dim: int) -> np.ndarray:
    """Candidate relation embedding implied by an (head, tail) entity pair."""
    if model == "transe":
        return t_row - h_row
    if model == "rotate":
        h = h_row[:dim] + 1j * h_row[dim:]
        t = t_row[:dim] + 1j * t_row[dim:]
        if np.all(np.abs(h) > 1e-8):
            r = t / h
        else:
            r = t - h  # fallback when the division is ill-conditioned
        return np.concatenate([r.real, r.imag])
    raise UnsupportedModelError(
        f"relation enumeration is defined for translational models only, not {model!r}"
    )


def si_enumerate_relations(
    victim_rows: np.ndarray,
    model: str,
    dim: int,
    cap: int | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """All ordered entity pairs (j, k), j != k, with their implied relation
    embeddings; a uniform sample of ``cap`` pairs when there are more."""
    n = victim_rows.shape[0]
    if n < 2:
        raise ValueError("need at least 2 victim entities")
    total = n * n - n
    if cap is not None and total > cap:
        if rng is None:
            raise ValueError("cap requires an rng")
        flat = rng.choice(total, size=cap, replace=False)
    else:
        flat = np.arange(total)
    # flat index -> ordered pair (j, k), j != k
    j = flat // (n - 1)
    rem = flat % (n - 1)
    k = np.where(rem >= j, rem + 1, rem)
    pairs = np.stack([j, k], axis=1)
    vecs = np.stack([
        entity_pair_relation(victim_rows[a], victim_rows[b], model, dim)
        for a, b in pairs
    ])
    return pairs, vecs


@dataclass(frozen=True)
class SiClusters:
    centers: np.ndarray
    radii: np.ndarray
    concentrated: frozenset[int]


def si_cluster(vecs: np.ndarray, n_relations: int, seed: int,
               concentration_quantile: float = 0.5) -> SiClusters:
    """k-means with k = 2 * n_relations; a cluster is concentrated when its
    mean member distance to the center falls strictly below the quantile of
    all cluster radii."""
    k = 2 * n_relations
    if len(vecs) < k:
        raise ValueError("need at least 2*n_relations candidate embeddings")

    def fit(rs):
        km = KMeans(n_clusters=k, init="k-means++", n_init=1, max_iter=100,
                    random_state=rs)
        assign = km.fit_predict(vecs)
        return km.cluster_centers_, assign

    centers, assign = fit(seed)
    counts = np.bincount(assign, minlength=k)
    if (counts == 0).any():  # re-seed once, then accept empties as radius inf
        centers, assign = fit(seed + 1)
        counts = np.bincount(assign, minlength=k)

    radii = np.full(k, np.inf)
    for c in range(k):
        member = vecs[assign == c]
        if len(member):
            radii[c] = float(np.mean(np.linalg.norm(member - centers[c], axis=1)))
    cutoff = float(np.quantile(radii[np.isfinite(radii)], concentration_quantile)) \
        if np.isfinite(radii).any() else np.inf
    concentrated = frozenset(int(c) for c in range(k) if radii[c] < cutoff)
    return SiClusters(centers=centers, radii=radii, concentrated=concentrated)


def si_infer(
    candidate: Triple,
    obs: SiObservables,
    clusters: SiClusters,
) -> tuple[bool, str]:
    """Decide membership of one candidate (ids local to the victim's entity
    rows). Returns (exist, reason) where reason is 'ok' or 'no-aux'."""
    v = entity_pair_relation(
        obs.victim_entity_rows[candidate.head],
        obs.victim_entity_rows[candidate.tail],
        obs.model, obs.dim,
    )
    dists = np.linalg.norm(clusters.centers - v[None, :], axis=1)
    nearest = int(np.argmin(dists))
    relation_present = (
        nearest in clusters.concentrated and dists[nearest] <= clusters.radii[nearest]
    )
    if not relation_present:
        return False, "ok"
    h_name = obs.victim_entity_names[candidate.head]
    t_name = obs.victim_entity_names[candidate.tail]
    if h_name not in obs.aux.entity_classes or t_name not in obs.aux.entity_classes:
        return False, "no-aux"
    r_aux = obs.aux.lookup(h_name, t_name)
    if r_aux is None:
        return False, "ok"
    return r_aux == obs.relation_names[candidate.rel], "ok"


def run_si_round(
    obs: SiObservables,
    candidates: Sequence[tuple[Triple, bool]],
    cap: int | None,
    seed: int,
    concentration_quantile: float = 0.5,
) -> AttackTrace:
    """Full SI pipeline for one attack round; candidates carry victim-local
    entity ids."""
    rng = np.random.default_rng(seed)
    _, vecs = si_enumerate_relations(obs.victim_entity_rows, obs.model, obs.dim,
                                     cap=cap, rng=rng)
    clusters = si_cluster(vecs, obs.n_relations, seed,
                          concentration_quantile=concentration_quantile)
    stats, labels = [], []
    for trip, is_member in candidates:
        exist, _ = si_infer(trip, obs, clusters)
        stats.append(1.0 if exist else 0.0)
        labels.append(is_member)
    return sweep_threshold(stats, labels, round_=obs.round)


# ---------------------------------------------------------------------------
# client-initiated passive inference


def cip_detect_overlap(upload: np.ndarray, broadcast: np.ndarray) -> set[int]:
    """Rows that changed through aggregation; single-holder rows pass through
    bit-identically, so any difference marks an overlapping entity."""
    if upload.shape != broadcast.shape:
        raise ValueError("upload and broadcast shapes differ")
    return {int(i) for i in np.nonzero((upload != broadcast).any(axis=1))[0]}


def cip_extract(broadcast: np.ndarray, upload: np.ndarray, n_advertised: int) -> np.ndarray:
    """Subtract the adversary's own contribution assuming a uniform average
    over the advertised client count; non-overlapping rows copy the
    broadcast."""
    if n_advertised < 2:
        raise ValueError("need an advertised client count of at least 2")
    overlap = sorted(cip_detect_overlap(upload, broadcast))
    out = broadcast.copy()
    for i in overlap:
        out[i] = (n_advertised * broadcast[i] - upload[i]) / (n_advertised - 1)
    return out


def _guarded_ratio(num: float, den: float) -> float:
    if abs(den) < _DENOM_GUARD:
        return math.inf if num >= 0 else -math.inf
    return num / den


def cip_infer(
    candidate: Triple,
    e_cip: np.ndarray,
    obs: CipObservables,
    overlap: set[int],
    tau: float,
) -> tuple[bool, float]:
    """Distance-ratio membership test for one candidate (global entity ids).

    The statistic is dist(local) / dist(extracted) in the distance
    convention: a member is trained by the peers, so the extracted rows make
    it *more* plausible (smaller distance) than the adversary's own rows and
    the ratio comes out high. Raises AttackError when the candidate is not
    evaluable under the CIP threat model.
    """
    if candidate.head not in overlap or candidate.tail not in overlap:
        raise AttackError("candidate endpoints outside the detected overlap")
    if not (0 <= candidate.rel < obs.adversary_store.n_relations):
        raise AttackError("candidate relation unknown to the adversary")
    if candidate.head not in obs.adversary_entity_rows or \
            candidate.tail not in obs.adversary_entity_rows:
        raise AttackError("candidate endpoints not held by the adversary")
    rel_row = obs.adversary_store.rel_params[candidate.rel]
    d_cip = distance_score(obs.model, obs.dim, e_cip[candidate.head], rel_row,
                           e_cip[candidate.tail])
    d_loc = distance_score(obs.model, obs.dim, obs.upload[candidate.head], rel_row,
                           obs.upload[candidate.tail])
    stat = _guarded_ratio(d_loc, d_cip)
    return stat >= tau, stat


def run_cip_round(
    obs: CipObservables,
    candidates: Sequence[tuple[Triple, bool]],
) -> AttackTrace:
    overlap = cip_detect_overlap(obs.upload, obs.broadcast)
    e_cip = cip_extract(obs.broadcast, obs.upload, obs.n_advertised)
    stats, labels, skipped = [], [], 0
    for trip, is_member in candidates:
        try:
            _, stat = cip_infer(trip, e_cip, obs, overlap, tau=-math.inf)
        except AttackError:
            skipped += 1
            continue
        stats.append(stat)
        labels.append(is_member)
    return sweep_threshold(stats, labels, round_=obs.round, skipped=skipped)


# ---------------------------------------------------------------------------
# client-initiated active inference


def cia_reverse(upload: np.ndarray, targets: set[int],
                held: set[int] | None = None) -> np.ndarray:
    """Negate the target entity rows of an upload (involution)."""
    if held is not None and not targets <= held:
        raise ValueError("reversal targets must be held by the adversary")
    out = upload.copy()
    for i in targets:
        out[i] = -out[i]
    return out


def cia_infer(s1: float, s2: float, tau: float) -> tuple[bool, float]:
    """Threshold the inflated-to-settled score ratio. Scores use the
    distance convention (larger = less plausible)."""
    stat = _guarded_ratio(s1, s2)
    return stat >= tau, stat


def cia_trace(pairs: Sequence[CiaScorePair], round_: int) -> AttackTrace:
    stats = [cia_infer(p.s1, p.s2, -math.inf)[1] for p in pairs]
    labels = [p.is_member for p in pairs]
    return sweep_threshold(stats, labels, round_=round_)


def distance_score(model: str, dim: int, h_row: np.ndarray, rel_row: np.ndarray,
                   t_row: np.ndarray) -> float:
    """Plausibility as a distance: larger means less plausible. Equals the
    raw norm for translational models, the negated score for bilinear ones."""
    return -score_rows(model, dim, h_row, rel_row, t_row)
