#!/usr/bin/env python3
"""Run the undefended desk-scale attack suite (CIP/CIA/SI on TransE, CIP/CIA
on RotatE) and print a best-F1 table. Artifacts land under $FKGELAB_OUT."""

import argparse
import time
from pathlib import Path

from fkgelab.cli import output_root
from fkgelab.config import load_config
from fkgelab.experiment import run_experiment, write_artifacts

CELLS = [
    "attack_cip_transe",
    "attack_cia_transe",
    "attack_si_transe",
    "attack_cip_rotate",
    "attack_cia_rotate",
]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--configs", default=str(Path(__file__).resolve().parents[1] / "configs"))
    ap.add_argument("--cells", nargs="*", default=CELLS)
    args = ap.parse_args()

    print(f"{'cell':24s} {'best_f1':>8s} {'auc':>8s} {'round':>6s} {'secs':>6s}")
    for cell in args.cells:
        cfg = load_config(Path(args.configs) / f"{cell}.cfg")
        t0 = time.time()
        result = run_experiment(cfg)
        write_artifacts(cfg, result, output_root() / cell)
        b = result.best
        print(f"{cell:24s} {b.best_f1:8.4f} {b.auc:8.4f} {b.round:6d} "
              f"{time.time() - t0:6.0f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
