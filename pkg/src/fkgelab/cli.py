"""Command-line interface.

Subcommands: ``train`` (federated training, optional defense), ``attack``
(training with the configured attack adapter), ``account`` (offline privacy
projection for a config), ``eval`` (metrics from a finished run directory).

Exit codes: 0 success, 2 configuration error, 3 runtime failure,
4 privacy budget exhausted before training can start. Output goes under the
directory named by ``FKGELAB_OUT`` (default ``./runs``).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .accounting import (
    AccountingError,
    GradientEvent,
    PrivacyLedger,
    SelectionEvent,
    check_budget,
)
from .config import ConfigError, ExperimentConfig, load_config
from .experiment import build_dataset, evaluate_clients, run_experiment, write_artifacts
from .federation import BudgetExhaustedError
from .graph import GraphError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_BUDGET = 4

OUTPUT_ENV = "FKGELAB_OUT"


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "runs"))


def _run_dir(run_id: str) -> Path:
    return output_root() / run_id


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    result = run_experiment(cfg, with_attack=False)
    write_artifacts(cfg, result, _run_dir(args.run_id))
    print(f"completed {len(result.run.history)} rounds -> {_run_dir(args.run_id)}")
    if result.run.halted_round is not None:
        print(f"privacy budget exhausted at round {result.run.halted_round}")
    return EXIT_OK


def _cmd_attack(args) -> int:
    cfg = load_config(args.config)
    result = run_experiment(cfg, with_attack=True)
    write_artifacts(cfg, result, _run_dir(args.run_id))
    best = result.best
    print(f"attack {cfg.attack}: best F1 {best.best_f1:.4f} "
          f"(round {best.round}, tau {best.best_tau:.6g}, auc {best.auc:.4f})")
    print(f"artifacts -> {_run_dir(args.run_id)}")
    return EXIT_OK


def _cmd_account(args) -> int:
    cfg = load_config(args.config)
    if not cfg.dp_enabled:
        raise ConfigError("accounting requires dp_enabled = true")
    data = build_dataset(cfg)
    max_iters = cfg.rounds * cfg.local_iters
    worst_halt = None
    for client in data.clients:
        q = cfg.dp_batch_size / len(client.train)
        sel = SelectionEvent(q=q, sigma_r=cfg.sigma_r, sigma_p=cfg.sigma_p,
                             delta_t=cfg.delta_t)
        grad = GradientEvent(q=q, sigma=cfg.sigma,
                             denominator=cfg.lemma1_denominator)
        ledger = PrivacyLedger.empty()
        halt = None
        for it in range(1, max_iters + 1):
            ledger = ledger.record(sel).record(grad)
            if check_budget(ledger, cfg.epsilon_budget, cfg.delta) == "exhausted":
                halt = it
                break
        eps, delta_total = ledger.converted(cfg.delta)
        halt_str = str(halt) if halt is not None else f"none within {max_iters}"
        print(f"client {client.client_id}: q = {q:.6f}, "
              f"epsilon after {ledger.n_events // 2} iters = {eps:.4f}, "
              f"delta_total = {delta_total:.3e}, halting iteration = {halt_str}")
        if halt is not None and (worst_halt is None or halt < worst_halt):
            worst_halt = halt
    if worst_halt == 1:
        print("budget exhausted at the first iteration; training cannot start",
              file=sys.stderr)
        return EXIT_BUDGET
    return EXIT_OK


def _cmd_eval(args) -> int:
    run_dir = _run_dir(args.run_id)
    cfg_path = run_dir / "config.cfg"
    if not cfg_path.exists():
        raise ConfigError(f"no config.cfg under {run_dir}")
    cfg = load_config(cfg_path)
    result = run_experiment(cfg, with_attack=False)
    metrics = evaluate_clients(result)
    print("client\tmrr\thits1\thits3\thits10")
    for cid in sorted(metrics):
        m = metrics[cid]
        print(f"{cid}\t{m['mrr']:.6f}\t{m['hits1']:.6f}\t"
              f"{m['hits3']:.6f}\t{m['hits10']:.6f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fkgelab",
                                description="federated KGE privacy laboratory")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run federated training")
    t.add_argument("--config", required=True)
    t.add_argument("--run-id", required=True)
    t.set_defaults(func=_cmd_train)

    a = sub.add_parser("attack", help="run training with the configured attack")
    a.add_argument("--config", required=True)
    a.add_argument("--run-id", required=True)
    a.set_defaults(func=_cmd_attack)

    c = sub.add_parser("account", help="offline privacy projection")
    c.add_argument("--config", required=True)
    c.set_defaults(func=_cmd_account)

    e = sub.add_parser("eval", help="evaluate a finished run")
    e.add_argument("--run-id", required=True)
    e.set_defaults(func=_cmd_eval)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, AccountingError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetExhaustedError as exc:
        print(f"privacy budget error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (GraphError, ValueError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
