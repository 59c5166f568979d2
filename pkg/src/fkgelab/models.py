"""Score functions, split positive/negative loss, and analytic per-example
gradients for TransE, RotatE, DistMult and ComplEx.

Complex-space models store d complex coordinates as 2d reals with layout
``[re_0..re_{d-1}, im_0..im_{d-1}]``. RotatE relations are parametrized by
phase angles internally so the unit-modulus constraint holds by construction;
exported relation rows materialize ``[cos(theta), sin(theta)]``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import Triple

MODELS = ("transe", "rotate", "distmult", "complex")
_MODEL_TAG = {m: i for i, m in enumerate(MODELS)}
_CKPT_MAGIC = b"FKGE"
_CKPT_VERSION = 1

# threshold under which the TransE/RotatE norm is treated as the
# non-differentiable point (subgradient 0)
_SINGULAR_EPS = 1e-12


@dataclass
class LossParams:
    gamma: float = 10.0
    n_neg: int = 256
    adv_temp: float = 1.0

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.n_neg < 1:
            raise ValueError("n_neg must be >= 1")
        if self.adv_temp < 0:
            raise ValueError("adv_temp must be >= 0")


@dataclass
class SparseGradient:
    """Per-example gradient as entity-row and relation-row maps."""

    rows: dict[int, np.ndarray] = field(default_factory=dict)
    rel_rows: dict[int, np.ndarray] = field(default_factory=dict)

    def add_entity(self, eid: int, vec: np.ndarray) -> None:
        if eid in self.rows:
            self.rows[eid] = self.rows[eid] + vec
        else:
            self.rows[eid] = np.array(vec, dtype=float)

    def add_relation(self, rid: int, vec: np.ndarray) -> None:
        if rid in self.rel_rows:
            self.rel_rows[rid] = self.rel_rows[rid] + vec
        else:
            self.rel_rows[rid] = np.array(vec, dtype=float)

    def accumulate(self, other: "SparseGradient", scale: float = 1.0) -> None:
        for eid, vec in other.rows.items():
            self.add_entity(eid, scale * vec)
        for rid, vec in other.rel_rows.items():
            self.add_relation(rid, scale * vec)

    def entity_norm(self) -> float:
        """Flattened L2 norm over all entity rows."""
        if not self.rows:
            return 0.0
        return float(np.sqrt(sum(float(v @ v) for v in self.rows.values())))

    def scaled(self, factor: float) -> "SparseGradient":
        return SparseGradient(
            rows={k: factor * v for k, v in self.rows.items()},
            rel_rows={k: factor * v for k, v in self.rel_rows.items()},
        )


@dataclass
class EmbeddingStore:
    """Dense entity/relation embeddings for one KGE model.

    ``rel_params`` is the internal relation parametrization: phase angles
    (width d) for RotatE, plain rows (width d_real) otherwise.
    """

    model: str
    dim: int
    entity_mat: np.ndarray
    rel_params: np.ndarray

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}")
        if self.entity_mat.shape[1] != self.d_real:
            raise ValueError("entity matrix width does not match model space")
        if self.rel_params.shape[1] != self.d_param:
            raise ValueError("relation parameter width does not match model")

    @property
    def d_real(self) -> int:
        return 2 * self.dim if self.model in ("rotate", "complex") else self.dim

    @property
    def d_param(self) -> int:
        return self.dim if self.model in ("transe", "distmult", "rotate") else 2 * self.dim

    @property
    def n_entities(self) -> int:
        return self.entity_mat.shape[0]

    @property
    def n_relations(self) -> int:
        return self.rel_params.shape[0]

    def relation_rows(self) -> np.ndarray:
        """Materialized relation matrix, width d_real."""
        if self.model == "rotate":
            return np.concatenate([np.cos(self.rel_params), np.sin(self.rel_params)], axis=1)
        if self.model in ("transe", "distmult"):
            return self.rel_params
        return self.rel_params  # complex: already [re | im]

    def copy(self) -> "EmbeddingStore":
        return EmbeddingStore(self.model, self.dim,
                              self.entity_mat.copy(), self.rel_params.copy())


def init_store(model: str, n_entities: int, n_relations: int, dim: int,
               rng: np.random.Generator) -> EmbeddingStore:
    """Uniform initialization in [-b, b] with b = 6/sqrt(d_real); RotatE
    phases uniform in [-pi, pi]."""
    d_real = 2 * dim if model in ("rotate", "complex") else dim
    b = 6.0 / np.sqrt(d_real)
    ent = rng.uniform(-b, b, size=(n_entities, d_real))
    if model == "rotate":
        rel = rng.uniform(-np.pi, np.pi, size=(n_relations, dim))
    elif model == "complex":
        rel = rng.uniform(-b, b, size=(n_relations, 2 * dim))
    else:
        rel = rng.uniform(-b, b, size=(n_relations, dim))
    return EmbeddingStore(model, dim, ent, rel)


def _as_complex(row: np.ndarray, d: int) -> np.ndarray:
    return row[:d] + 1j * row[d:]


def _pack_complex(z: np.ndarray) -> np.ndarray:
    return np.concatenate([z.real, z.imag])


def score_rows(model: str, dim: int, h_row: np.ndarray, rel_row: np.ndarray,
               t_row: np.ndarray) -> float:
    """Score from explicit rows (relation in internal parametrization)."""
    if model == "transe":
        return -float(np.linalg.norm(h_row + rel_row - t_row))
    if model == "distmult":
        return float(np.sum(h_row * rel_row * t_row))
    if model == "rotate":
        h = _as_complex(h_row, dim)
        t = _as_complex(t_row, dim)
        rho = np.exp(1j * rel_row)
        u = h * rho - t
        return -float(np.sqrt(np.sum(u.real ** 2 + u.imag ** 2)))
    if model == "complex":
        h = _as_complex(h_row, dim)
        r = _as_complex(rel_row, dim)
        t = _as_complex(t_row, dim)
        return float(np.sum((h * r * np.conj(t)).real))
    raise ValueError(f"unknown model {model!r}")


def score(store: EmbeddingStore, triple: Triple) -> float:
    return score_rows(store.model, store.dim,
                      store.entity_mat[triple.head],
                      store.rel_params[triple.rel],
                      store.entity_mat[triple.tail])


def score_all_tails(store: EmbeddingStore, head: int, rel: int) -> np.ndarray:
    """Vector of scores f_r(h, t) for every candidate tail t."""
    E = store.entity_mat
    d = store.dim
    h = E[head]
    r = store.rel_params[rel]
    if store.model == "transe":
        return -np.linalg.norm((h + r)[None, :] - E, axis=1)
    if store.model == "distmult":
        return E @ (h * r)
    if store.model == "rotate":
        hr = _as_complex(h, d) * np.exp(1j * r)
        u_re = hr.real[None, :] - E[:, :d]
        u_im = hr.imag[None, :] - E[:, d:]
        return -np.sqrt(np.sum(u_re ** 2 + u_im ** 2, axis=1))
    if store.model == "complex":
        hr = _as_complex(h, d) * _as_complex(r, d)
        return E[:, :d] @ hr.real + E[:, d:] @ hr.imag
    raise ValueError(store.model)


def score_all_heads(store: EmbeddingStore, rel: int, tail: int) -> np.ndarray:
    """Vector of scores f_r(h, t) for every candidate head h."""
    E = store.entity_mat
    d = store.dim
    t = E[tail]
    r = store.rel_params[rel]
    if store.model == "transe":
        return -np.linalg.norm(E + (r - t)[None, :], axis=1)
    if store.model == "distmult":
        return E @ (r * t)
    if store.model == "rotate":
        rho = np.exp(1j * r)
        tc = _as_complex(t, d)
        h_re, h_im = E[:, :d], E[:, d:]
        u_re = h_re * rho.real[None, :] - h_im * rho.imag[None, :] - tc.real[None, :]
        u_im = h_re * rho.imag[None, :] + h_im * rho.real[None, :] - tc.imag[None, :]
        return -np.sqrt(np.sum(u_re ** 2 + u_im ** 2, axis=1))
    if store.model == "complex":
        k = _as_complex(r, d) * np.conj(_as_complex(t, d))
        return E[:, :d] @ k.real - E[:, d:] @ k.imag
    raise ValueError(store.model)


def _softplus(x: float | np.ndarray):
    return np.logaddexp(0.0, x)


def _sigmoid(x: float | np.ndarray):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def loss_positive(store: EmbeddingStore, triple: Triple, params: LossParams) -> float:
    """-log sigmoid(f - gamma), evaluated in the overflow-safe softplus form."""
    return float(_softplus(params.gamma - score(store, triple)))


def _neg_weights(scores: np.ndarray, params: LossParams, mode: str) -> np.ndarray:
    if mode == "uniform":
        return np.full(len(scores), 1.0 / len(scores))
    if mode == "self_adv":
        z = params.adv_temp * scores
        z = z - z.max()
        w = np.exp(z)
        return w / w.sum()
    raise ValueError(f"unknown negative mode {mode!r}")


def loss_negative(
    store: EmbeddingStore,
    pos_triple: Triple | None,
    negatives: list[Triple],
    params: LossParams,
    mode: str = "self_adv",
) -> float:
    """Weighted sum of -log sigmoid(gamma - f) over negatives. Weights are
    the self-adversarial softmax of the negatives' scores or uniform."""
    if not negatives:
        raise ValueError("negatives must be nonempty")
    s = np.array([score(store, t) for t in negatives])
    w = _neg_weights(s, params, mode)
    return float(np.sum(w * _softplus(s - params.gamma)))


def _score_grad(store: EmbeddingStore, triple: Triple) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(df/dh, df/dt, df/dr) in the internal parametrization."""
    model, d = store.model, store.dim
    h_row = store.entity_mat[triple.head]
    t_row = store.entity_mat[triple.tail]
    r_row = store.rel_params[triple.rel]
    if model == "transe":
        u = h_row + r_row - t_row
        n = np.linalg.norm(u)
        if n < _SINGULAR_EPS:
            z = np.zeros(d)
            return z, z.copy(), z.copy()
        g = u / n
        return -g, g, -g
    if model == "distmult":
        return r_row * t_row, h_row * r_row, h_row * t_row
    if model == "complex":
        h = _as_complex(h_row, d)
        r = _as_complex(r_row, d)
        t = _as_complex(t_row, d)
        k_h = r * np.conj(t)
        k_r = h * np.conj(t)
        hr = h * r
        gh = np.concatenate([k_h.real, -k_h.imag])
        gr = np.concatenate([k_r.real, -k_r.imag])
        gt = np.concatenate([hr.real, hr.imag])
        return gh, gt, gr
    if model == "rotate":
        h = _as_complex(h_row, d)
        t = _as_complex(t_row, d)
        rho = np.exp(1j * r_row)
        u = h * rho - t
        n = float(np.sqrt(np.sum(u.real ** 2 + u.imag ** 2)))
        if n < _SINGULAR_EPS:
            return np.zeros(2 * d), np.zeros(2 * d), np.zeros(d)
        P = -u / n  # (df/du_re) + i (df/du_im)
        gh = _pack_complex(P * np.conj(rho))
        gt = _pack_complex(u / n)
        gtheta = (np.conj(P) * (1j * h * rho)).real
        return gh, gt, gtheta
    raise ValueError(model)


def grad_positive(store: EmbeddingStore, triple: Triple, params: LossParams) -> SparseGradient:
    """Analytic gradient of loss_positive; touches the head row, tail row
    and relation row only (head and tail collapse when h = t)."""
    coeff = -float(_sigmoid(params.gamma - score(store, triple)))
    gh, gt, gr = _score_grad(store, triple)
    g = SparseGradient()
    g.add_entity(triple.head, coeff * gh)
    g.add_entity(triple.tail, coeff * gt)
    g.add_relation(triple.rel, coeff * gr)
    return g


def grad_negative(
    store: EmbeddingStore,
    pos_triple: Triple | None,
    negatives: list[Triple],
    params: LossParams,
    mode: str = "self_adv",
) -> SparseGradient:
    """Analytic gradient of loss_negative with the self-adversarial weights
    treated as constants (stop-gradient)."""
    if not negatives:
        raise ValueError("negatives must be nonempty")
    s = np.array([score(store, t) for t in negatives])
    w = _neg_weights(s, params, mode)
    coeffs = w * _sigmoid(s - params.gamma)
    g = SparseGradient()
    for trip, c in zip(negatives, coeffs):
        gh, gt, gr = _score_grad(store, trip)
        g.add_entity(trip.head, c * gh)
        g.add_entity(trip.tail, c * gt)
        g.add_relation(trip.rel, c * gr)
    return g


def batch_entity_gradient(
    store: EmbeddingStore,
    batch: list[Triple],
    params: LossParams,
) -> tuple[list[SparseGradient], set[int]]:
    """Per-example positive gradients restricted to entity rows, plus the
    union of touched entity rows (at most 2 per example)."""
    per_example = []
    active: set[int] = set()
    for trip in batch:
        g = grad_positive(store, trip, params)
        per_example.append(SparseGradient(rows=g.rows, rel_rows={}))
        active.update(g.rows)
    return per_example, active


def save_checkpoint(store: EmbeddingStore, path: str | Path) -> None:
    """Binary checkpoint: magic, version u32, model tag u8, |E| u64, |R| u64,
    d u32, d_real u32, then row-major little-endian float64 rows (entities,
    then materialized relations)."""
    header = _CKPT_MAGIC + struct.pack(
        "<IBQQII", _CKPT_VERSION, _MODEL_TAG[store.model],
        store.n_entities, store.n_relations, store.dim, store.d_real,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(store.entity_mat, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(store.relation_rows(), dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> EmbeddingStore:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _CKPT_MAGIC:
            raise ValueError(f"{path}: not an embedding checkpoint")
        version, tag, n_ent, n_rel, dim, d_real = struct.unpack(
            "<IBQQII", fh.read(struct.calcsize("<IBQQII")))
        if version != _CKPT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        model = MODELS[tag]
        ent = np.frombuffer(fh.read(8 * n_ent * d_real), dtype="<f8").reshape(n_ent, d_real).copy()
        rel = np.frombuffer(fh.read(8 * n_rel * d_real), dtype="<f8").reshape(n_rel, d_real).copy()
    if model == "rotate":
        rel = np.arctan2(rel[:, dim:], rel[:, :dim])
    return EmbeddingStore(model, dim, ent, rel)
