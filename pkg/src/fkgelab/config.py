"""Experiment configuration: a flat dataclass with `key = value` file
round-trip. Unknown keys and malformed values are configuration errors."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .defense import DpConfig
from .federation import TrainSettings
from .models import LossParams


class ConfigError(Exception):
    pass


@dataclass
class ExperimentConfig:
    # data
    n_entities: int = 300
    n_relations: int = 12
    n_triples: int = 4000
    data_seed: int = 7
    n_clients: int = 3
    overlap_frac: float = 0.3
    # model / loss
    model: str = "transe"
    dim: int = 32
    gamma: float = 10.0
    n_neg: int = 256
    adv_temp: float = 1.0
    # training
    rounds: int = 50
    local_iters: int = 3
    batch_size: int = 16
    lr: float = 0.001
    optimizer: str = "adam"
    seed: int = 0
    validation_interval: int = 5
    # defense
    dp_enabled: bool = False
    dp_lr: float = 0.1
    dp_batch_size: int = 8
    sigma: float = 1.0
    sigma_r: float = 1.0
    sigma_p: float = 1.0
    delta_t: float = 1e-4
    c1: float = 1.2
    c2: float = 0.8
    eta: float = 0.95
    delta_mrr: float = 0.001
    epsilon_budget: float = 16.0
    delta: float = 1e-5
    lemma1_denominator: str = "sigma"
    # attacks
    attack: str = "cip"  # si | cip | cia
    victim_id: int = 0
    adversary_id: int = 1
    attack_interval: int = 5
    n_candidates: int = 200
    candidate_seed: int = 13
    cia_reversal_round: int = 40
    cia_settle_rounds: int = 1
    si_pair_cap: int = 20000

    def validate(self) -> None:
        if self.model not in ("transe", "rotate", "distmult", "complex"):
            raise ConfigError(f"unknown model {self.model!r}")
        if self.attack not in ("si", "cip", "cia"):
            raise ConfigError(f"unknown attack {self.attack!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.n_clients < 2:
            raise ConfigError("n_clients must be >= 2")
        if self.rounds < 1 or self.local_iters < 1:
            raise ConfigError("rounds and local_iters must be >= 1")
        if not (0.0 <= self.overlap_frac <= 1.0):
            raise ConfigError("overlap_frac must lie in [0, 1]")
        if self.victim_id == self.adversary_id:
            raise ConfigError("victim and adversary must differ")
        if not (0 <= self.victim_id < self.n_clients
                and 0 <= self.adversary_id < self.n_clients):
            raise ConfigError("victim_id and adversary_id must be client ids")
        if self.n_candidates < 2:
            raise ConfigError("need at least 2 candidates")
        if self.lemma1_denominator not in ("sigma", "sigma_squared"):
            raise ConfigError("lemma1_denominator must be sigma or sigma_squared")
        try:
            self.dp_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def loss_params(self) -> LossParams:
        return LossParams(gamma=self.gamma, n_neg=self.n_neg, adv_temp=self.adv_temp)

    def dp_config(self) -> DpConfig:
        return DpConfig(
            sigma=self.sigma, sigma_r=self.sigma_r, sigma_p=self.sigma_p,
            delta_t=self.delta_t, c1=self.c1, c2=self.c2, eta=self.eta,
            delta_mrr=self.delta_mrr, epsilon_budget=self.epsilon_budget,
            delta=self.delta, validation_interval=self.validation_interval,
            lemma1_denominator=self.lemma1_denominator,
        )

    def train_settings(self, public_pairs=()) -> TrainSettings:
        return TrainSettings(
            model=self.model,
            dim=self.dim,
            batch_size=self.dp_batch_size if self.dp_enabled else self.batch_size,
            lr=self.lr,
            optimizer=self.optimizer,
            loss=self.loss_params(),
            validation_interval=self.validation_interval,
            dp=self.dp_config() if self.dp_enabled else None,
            dp_lr=self.dp_lr,
            public_pairs=tuple(public_pairs),
        )


_BOOL = {"true": True, "false": False, "1": True, "0": False,
         "yes": True, "no": False}


def _coerce(name: str, raw: str, typ: type):
    raw = raw.strip()
    try:
        if typ is bool:
            if raw.lower() not in _BOOL:
                raise ValueError(raw)
            return _BOOL[raw.lower()]
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r} (expected {typ.__name__})") from exc


def parse_config(text: str) -> ExperimentConfig:
    """Parse `key = value` lines; '#' starts a comment; blank lines ignored."""
    types = {f.name: f.type if isinstance(f.type, type) else eval(f.type)  # noqa: S307
             for f in fields(ExperimentConfig)}
    values: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, raw = line.partition("=")
        key = key.strip()
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _coerce(key, raw, types[key])
    cfg = ExperimentConfig(**values)
    cfg.validate()
    return cfg


def emit_config(cfg: ExperimentConfig) -> str:
    lines = []
    for f in fields(ExperimentConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def save_config(cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(emit_config(cfg), encoding="utf-8")
